#include "elsig/cost.hpp"

#include <cmath>
#include <string>

namespace elsig {

std::int64_t required_samples(Index dim, SampleConvention convention) {
  if (dim < 2)
    throw PreconditionError("required_samples: d must be >= 2, got " +
                            std::to_string(dim));
  const std::int64_t n =
      convention == SampleConvention::kTable ? dim - 1 : dim;
  return n * (n + 3) / 2;
}

namespace {

// Sum of base-v digit counts of 1..n: prompts enumerate sample indices
// positionally, so the i-th prompt has ceil(log_v(i+1)) tokens.
std::int64_t total_prompt_tokens(std::int64_t n, std::int64_t base) {
  std::int64_t total = 0;
  std::int64_t lo = 1;      // first index with the current digit count
  std::int64_t digits = 1;
  while (lo <= n) {
    std::int64_t hi = lo;
    bool overflow = false;
    for (std::int64_t k = 0; k < digits; ++k) {
      if (hi > (std::int64_t{1} << 62) / base) {
        overflow = true;
        break;
      }
      hi *= base;
    }
    const std::int64_t last = overflow ? n : std::min(n, hi - 1);
    total += (last - lo + 1) * digits;
    if (overflow) break;
    lo = hi;
    ++digits;
  }
  return total;
}

}  // namespace

CostEstimate estimate_cost(Index dim, Index vocab, double price_per_1k,
                           int top_k, SampleConvention convention) {
  if (dim < 2 || vocab <= dim)
    throw PreconditionError("estimate_cost: need 2 <= d < v");
  if (top_k < 2)
    throw PreconditionError("estimate_cost: top_k must be >= 2");
  if (price_per_1k < 0.0)
    throw PreconditionError("estimate_cost: negative price");

  CostEstimate est;
  est.samples = required_samples(dim, convention);

  const std::int64_t per_full = (vocab + top_k - 2) / (top_k - 1);
  const std::int64_t per_sample = (dim + top_k - 2) / (top_k - 1);
  est.queries = dim * per_full + est.samples * per_sample;

  // Initial full vectors use single-token prompts; subset samples resend
  // their positional prompt on every batched query.
  est.prompt_tokens =
      dim * per_full + total_prompt_tokens(est.samples, vocab) * per_sample;
  est.spend = static_cast<double>(est.prompt_tokens) * price_per_1k / 1000.0;
  return est;
}

}  // namespace elsig
