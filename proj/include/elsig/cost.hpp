#pragma once

#include <cstdint>

#include "elsig/types.hpp"

namespace elsig {

/// Two published conventions for the sample count that pins down a quadric:
/// kTable uses n = d-1 coordinates, kText uses n = d. Their difference is
/// exactly d+1 for every d >= 2.
enum class SampleConvention { kTable, kText };

/// Points needed to determine a quadric: n(n+3)/2 for the convention's n.
std::int64_t required_samples(Index dim, SampleConvention convention);

struct CostEstimate {
  std::int64_t samples = 0;
  std::int64_t queries = 0;
  std::int64_t prompt_tokens = 0;
  double spend = 0.0;
};

/// Projects the query and token budget of a full extraction against a
/// top-k logprob API: an initial phase of d full vectors, then per-sample
/// subset queries whose prompt length grows with the base-v digits of the
/// sample index. spend = prompt_tokens * price_per_1k / 1000.
CostEstimate estimate_cost(Index dim, Index vocab, double price_per_1k,
                           int top_k,
                           SampleConvention convention = SampleConvention::kTable);

}  // namespace elsig
