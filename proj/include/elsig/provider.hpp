#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "elsig/centering.hpp"
#include "elsig/cost.hpp"
#include "elsig/model.hpp"
#include "elsig/types.hpp"

namespace elsig {

/// Mock completions API settings. top_k is the number of logprobs returned
/// per query; logit biases add to the logits before the softmax.
struct ApiConfig {
  FinalLayerParams model;
  int top_k = 8;
  int max_bias_tokens = 0;  // 0 = defaults to the vocabulary size
  double price_per_1k_tokens = 0.0;
  double rate_limit_qps = 0.0;  // 0 = unlimited
};

/// Attacker-side accounting. spend tracks prompt_tokens at the configured
/// price; all counters only grow.
struct AttackLedger {
  std::int64_t queries = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t full_logprob_vectors = 0;
  std::int64_t partial_vectors = 0;
  double spend = 0.0;
};

struct ServerLog {
  std::int64_t queries = 0;
  std::int64_t prompt_tokens = 0;
};

/// Loopback HTTP test double for an OpenAI-style completions endpoint.
/// POST /v1/completions with {prompt, logprob_count, logit_bias} returns
/// the top-k logprobs of the biased distribution; the hidden state is a
/// hash-seeded Gaussian in the prompt, so identical prompts give identical
/// outputs. GET /healthz reports liveness.
class LogprobServer {
 public:
  explicit LogprobServer(ApiConfig config);
  ~LogprobServer();
  LogprobServer(const LogprobServer&) = delete;
  LogprobServer& operator=(const LogprobServer&) = delete;

  /// Binds (port 0 picks a free port), starts serving on a background
  /// thread, and returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();

  ServerLog log() const;
  const ApiConfig& config() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct TokenLogprob {
  Index token_id = 0;
  double value = 0.0;
};

/// HTTP client with a built-in attack ledger and a 3-attempt exponential
/// backoff on transport errors.
class ApiClient {
 public:
  ApiClient(const std::string& host, int port, double price_per_1k = 0.0);
  ~ApiClient();
  ApiClient(const ApiClient&) = delete;
  ApiClient& operator=(const ApiClient&) = delete;

  std::vector<TokenLogprob> completions(const std::vector<Index>& prompt,
                                        int logprob_count,
                                        const std::map<Index, double>& bias = {});
  const AttackLedger& ledger() const;
  AttackLedger& ledger();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Recovers the full logprob vector for one prompt from a top-k API.
/// boost > 0 batches unseen tokens with a large positive bias next to an
/// unbiased anchor from the top-k; boost = 0 pages through the
/// distribution by masking known tokens instead. Exact either way.
Vector extract_full_logprobs(ApiClient& client, const std::vector<Index>& prompt,
                             Index vocab, int top_k, double boost = 30.0);

/// Completes a logprob vector from d observed entries: solves the centered
/// column-space coordinates as a function of the unknown mean, then
/// root-finds the mean so the vector logsumexps to zero.
Vector reconstruct_from_subset(const VectorRef& observed,
                               const std::vector<Index>& subset,
                               const ProjectionPair& pair);

struct AttackOptions {
  int top_k = 8;
  double boost = 30.0;
  Index dim_hint = 0;  // 0 = detect the hidden dimension adaptively
};

struct AttackResult {
  LogprobMatrix matrix;
  ProjectionPair pair;
  AttackLedger ledger;  // snapshot after the attack
  std::vector<std::string> warnings;
};

/// Full harvest: phase one extracts full vectors until the hidden dimension
/// is pinned down and builds the projections; phase two queries only a
/// d-token subset per fresh prompt (prompts enumerate sample indices in
/// base-v) and reconstructs the rest.
AttackResult run_attack(ApiClient& client, Index vocab, Index n_samples,
                        const AttackOptions& opt = {});

}  // namespace elsig
