#include "elsig/provider.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <mutex>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "elsig/digest.hpp"
#include "elsig/rng.hpp"

namespace elsig {

namespace {

using nlohmann::json;

std::uint64_t prompt_seed(const std::vector<Index>& prompt) {
  std::string bytes;
  bytes.reserve(prompt.size() * 8);
  for (Index id : prompt) {
    auto u = static_cast<std::uint64_t>(id);
    for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
  }
  return digest_seed(sha256(bytes.data(), bytes.size()));
}

std::vector<Index> sorted_top_k(const Vector& values, int k) {
  std::vector<Index> order(static_cast<std::size_t>(values.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::partial_sort(order.begin(), order.begin() + k, order.end(),
                    [&](Index a, Index b) {
                      if (values(a) != values(b)) return values(a) > values(b);
                      return a < b;  // deterministic tie-break
                    });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

}  // namespace

struct LogprobServer::Impl {
  ApiConfig config;
  httplib::Server server;
  std::thread worker;
  int port = 0;

  mutable std::mutex mu;
  ServerLog request_log;
  std::deque<std::chrono::steady_clock::time_point> recent;

  bool over_rate_limit() {
    if (config.rate_limit_qps <= 0.0) return false;
    const auto now = std::chrono::steady_clock::now();
    std::lock_guard lock(mu);
    while (!recent.empty() && now - recent.front() > std::chrono::seconds(1))
      recent.pop_front();
    if (recent.size() >= static_cast<std::size_t>(config.rate_limit_qps))
      return true;
    recent.push_back(now);
    return false;
  }

  void handle_completions(const httplib::Request& req, httplib::Response& res) {
    if (over_rate_limit()) {
      res.status = 429;
      res.set_content(R"({"error":"rate limit exceeded"})", "application/json");
      return;
    }

    json body;
    std::vector<Index> prompt;
    int k = config.top_k;
    std::map<Index, double> bias;
    try {
      body = json::parse(req.body);
      for (const auto& t : body.at("prompt")) {
        const auto id = t.get<Index>();
        if (id < 0 || id >= config.model.vocab) throw IoError("token out of range");
        prompt.push_back(id);
      }
      if (prompt.empty()) throw IoError("empty prompt");
      if (body.contains("logprob_count")) k = body["logprob_count"].get<int>();
      if (body.contains("logit_bias")) {
        for (const auto& [key, value] : body["logit_bias"].items()) {
          const auto id = static_cast<Index>(std::stoll(key));
          if (id < 0 || id >= config.model.vocab) throw IoError("bias token out of range");
          bias[id] = value.get<double>();
        }
      }
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
      return;
    }
    const int max_bias = config.max_bias_tokens > 0
                             ? config.max_bias_tokens
                             : static_cast<int>(config.model.vocab);
    if (k < 1 || k > config.top_k ||
        bias.size() > static_cast<std::size_t>(max_bias)) {
      res.status = 400;
      res.set_content(R"({"error":"logprob_count or logit_bias over limit"})",
                      "application/json");
      return;
    }

    {
      std::lock_guard lock(mu);
      ++request_log.queries;
      request_log.prompt_tokens += static_cast<std::int64_t>(prompt.size());
    }

    Rng rng(prompt_seed(prompt));
    Vector hidden = rng.gaussian_vector(config.model.dim);
    Vector xhat = normalize(hidden, config.model.norm, config.model.eps);
    Vector logits = config.model.unembed *
                    (config.model.scale.cwiseProduct(xhat) + config.model.bias);
    for (const auto& [id, b] : bias) logits(id) += b;
    Vector logprobs = log_softmax(logits);

    json items = json::array();
    for (Index id : sorted_top_k(logprobs, k))
      items.push_back({{"token_id", id}, {"value", logprobs(id)}});
    res.set_content(json{{"logprobs", items}}.dump(), "application/json");
  }
};

LogprobServer::LogprobServer(ApiConfig config) : impl_(new Impl) {
  if (config.top_k < 2)
    throw PreconditionError("LogprobServer: top_k must be >= 2");
  impl_->config = std::move(config);
  impl_->server.Post("/v1/completions",
                     [this](const httplib::Request& req, httplib::Response& res) {
                       impl_->handle_completions(req, res);
                     });
  impl_->server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("ok", "text/plain");
  });
}

LogprobServer::~LogprobServer() { stop(); }

int LogprobServer::start(const std::string& host, int port) {
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port(host);
  } else {
    if (!impl_->server.bind_to_port(host, port))
      throw IoError("LogprobServer: cannot bind " + host + ":" + std::to_string(port));
    impl_->port = port;
  }
  impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void LogprobServer::stop() {
  if (impl_ && impl_->worker.joinable()) {
    impl_->server.stop();
    impl_->worker.join();
  }
}

ServerLog LogprobServer::log() const {
  std::lock_guard lock(impl_->mu);
  return impl_->request_log;
}

const ApiConfig& LogprobServer::config() const { return impl_->config; }

struct ApiClient::Impl {
  httplib::Client http;
  AttackLedger ledger;
  double price_per_1k;

  Impl(const std::string& host, int port, double price)
      : http(host, port), price_per_1k(price) {
    http.set_connection_timeout(5);
    http.set_read_timeout(30);
  }
};

ApiClient::ApiClient(const std::string& host, int port, double price_per_1k)
    : impl_(new Impl(host, port, price_per_1k)) {}

ApiClient::~ApiClient() = default;

const AttackLedger& ApiClient::ledger() const { return impl_->ledger; }
AttackLedger& ApiClient::ledger() { return impl_->ledger; }

std::vector<TokenLogprob> ApiClient::completions(
    const std::vector<Index>& prompt, int logprob_count,
    const std::map<Index, double>& bias) {
  json body;
  body["prompt"] = prompt;
  body["logprob_count"] = logprob_count;
  if (!bias.empty()) {
    json b = json::object();
    for (const auto& [id, v] : bias) b[std::to_string(id)] = v;
    body["logit_bias"] = b;
  }
  const std::string payload = body.dump();

  httplib::Result res;
  for (int attempt = 0; attempt < 3; ++attempt) {
    res = impl_->http.Post("/v1/completions", payload, "application/json");
    if (res && res->status != 429) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(50 << attempt));
  }
  if (!res) throw IoError("completions: transport failure after retries");
  if (res->status == 400)
    throw PreconditionError("completions: rejected by server: " + res->body);
  if (res->status != 200)
    throw IoError("completions: HTTP " + std::to_string(res->status));

  impl_->ledger.queries += 1;
  impl_->ledger.prompt_tokens += static_cast<std::int64_t>(prompt.size());
  impl_->ledger.spend = static_cast<double>(impl_->ledger.prompt_tokens) *
                        impl_->price_per_1k / 1000.0;

  json parsed = json::parse(res->body);
  std::vector<TokenLogprob> out;
  for (const auto& item : parsed.at("logprobs"))
    out.push_back({item.at("token_id").get<Index>(), item.at("value").get<double>()});
  return out;
}

namespace {

// Stitches one biased batch into the running vector using the shared
// unbiased anchor: value_t - value_anchor - boost + logprob_anchor.
void harvest_batch(ApiClient& client, const std::vector<Index>& prompt,
                   int top_k, double boost, Index anchor, double anchor_lp,
                   std::vector<Index>& pending, std::map<Index, double>& known) {
  std::size_t batch_size = static_cast<std::size_t>(top_k - 1);
  while (!pending.empty()) {
    const std::size_t take = std::min(batch_size, pending.size());
    std::map<Index, double> bias;
    for (std::size_t i = 0; i < take; ++i) bias[pending[i]] = boost;

    auto reply = client.completions(prompt, top_k, bias);
    const auto anchor_it =
        std::find_if(reply.begin(), reply.end(),
                     [&](const TokenLogprob& t) { return t.token_id == anchor; });
    if (anchor_it == reply.end()) {
      if (batch_size <= 1)
        throw NumericError("extract_full_logprobs: anchor evicted from top-k");
      --batch_size;  // shrink and retry
      continue;
    }
    for (const auto& t : reply) {
      if (t.token_id == anchor) continue;
      const double b = bias.count(t.token_id) ? boost : 0.0;
      known.emplace(t.token_id, t.value - anchor_it->value - b + anchor_lp);
    }
    pending.erase(std::remove_if(pending.begin(), pending.end(),
                                 [&](Index id) { return known.count(id) != 0; }),
                  pending.end());
  }
}

}  // namespace

Vector extract_full_logprobs(ApiClient& client, const std::vector<Index>& prompt,
                             Index vocab, int top_k, double boost) {
  if (top_k < 2)
    throw PreconditionError("extract_full_logprobs: top_k must be >= 2");

  auto first = client.completions(prompt, top_k, {});
  if (first.empty()) throw NumericError("extract_full_logprobs: empty reply");
  const Index anchor = first.front().token_id;
  const double anchor_lp = first.front().value;

  std::map<Index, double> known;
  for (const auto& t : first) known[t.token_id] = t.value;

  if (boost > 0.0) {
    std::vector<Index> pending;
    for (Index id = 0; id < vocab; ++id)
      if (!known.count(id)) pending.push_back(id);
    harvest_batch(client, prompt, top_k, boost, anchor, anchor_lp, pending, known);
  } else {
    // Paging mode: push everything already known far down and read the next
    // top-k slice, always keeping the anchor visible.
    const double mask = -40.0;
    while (known.size() < static_cast<std::size_t>(vocab)) {
      std::map<Index, double> bias;
      for (const auto& [id, _] : known)
        if (id != anchor) bias[id] = mask;
      auto reply = client.completions(prompt, top_k, bias);
      const auto anchor_it =
          std::find_if(reply.begin(), reply.end(),
                       [&](const TokenLogprob& t) { return t.token_id == anchor; });
      if (anchor_it == reply.end())
        throw NumericError("extract_full_logprobs: anchor evicted while paging");
      bool progress = false;
      for (const auto& t : reply) {
        if (t.token_id == anchor || bias.count(t.token_id)) continue;
        if (known.emplace(t.token_id, t.value - anchor_it->value + anchor_lp).second)
          progress = true;
      }
      if (!progress)
        throw NumericError("extract_full_logprobs: paging made no progress");
    }
  }

  Vector full(vocab);
  for (Index id = 0; id < vocab; ++id) {
    const auto it = known.find(id);
    if (it == known.end())
      throw NumericError("extract_full_logprobs: token " + std::to_string(id) +
                         " unresolved");
    full(id) = it->second;
  }
  full.array() -= logsumexp(full);  // re-normalize the stitched vector
  client.ledger().full_logprob_vectors += 1;
  return full;
}

namespace {

double lse_at(const Vector& base, const Vector& dir, double t) {
  return logsumexp(base + t * dir);
}

double lse_slope(const Vector& base, const Vector& dir, double t) {
  Vector lp = base + t * dir;
  return softmax(lp).dot(dir);
}

}  // namespace

Vector reconstruct_from_subset(const VectorRef& observed,
                               const std::vector<Index>& subset,
                               const ProjectionPair& pair) {
  if (static_cast<Index>(subset.size()) != pair.dim)
    throw PreconditionError("reconstruct_from_subset: need exactly d entries");
  if (observed.size() != pair.dim)
    throw PreconditionError("reconstruct_from_subset: observed size mismatch");
  std::set<Index> dedup(subset.begin(), subset.end());
  if (dedup.size() != subset.size())
    throw PreconditionError("reconstruct_from_subset: duplicate token in subset");

  Matrix rows(pair.dim, pair.dim);
  for (Index i = 0; i < pair.dim; ++i) {
    const Index r = subset[static_cast<std::size_t>(i)];
    if (r < 0 || r >= pair.vocab)
      throw PreconditionError("reconstruct_from_subset: token out of range");
    rows.row(i) = pair.up.row(r);
  }
  Eigen::FullPivLU<Matrix> lu(rows);
  if (!lu.isInvertible())
    throw NumericError(
        "reconstruct_from_subset: restricted basis is singular; choose a "
        "different token subset");

  // The full vector is affine in the unknown mean t: base + t * dir.
  Vector base = pair.up * lu.solve(observed);
  Vector dir = Vector::Ones(pair.vocab) - pair.up * lu.solve(Vector::Ones(pair.dim));

  double root;
  auto bisect = [&](double lo, double hi) {
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (lse_at(base, dir, mid) > 0.0 ? hi : lo) = mid;
      if (hi - lo < 1e-14 * std::max(1.0, std::abs(hi))) break;
    }
    return 0.5 * (lo + hi);
  };

  if (dir.minCoeff() > 0.0) {
    // Strictly increasing: bracket and bisect.
    double lo = 0.0, hi = 0.0, step = 1.0;
    if (lse_at(base, dir, 0.0) > 0.0) {
      while (lse_at(base, dir, lo) > 0.0) { lo -= step; step *= 2.0; }
    } else {
      while (lse_at(base, dir, hi) <= 0.0) { hi += step; step *= 2.0; }
    }
    root = bisect(lo, hi);
  } else {
    // lse is convex in t; locate the minimum, then take the root on the
    // increasing branch.
    double lo = -1.0, hi = 1.0, step = 2.0;
    while (lse_slope(base, dir, lo) > 0.0) { lo -= step; step *= 2.0; }
    step = 2.0;
    while (lse_slope(base, dir, hi) < 0.0) { hi += step; step *= 2.0; }
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (lse_slope(base, dir, mid) < 0.0 ? lo : hi) = mid;
    }
    const double t_min = 0.5 * (lo + hi);
    if (lse_at(base, dir, t_min) > 1e-12)
      throw NumericError(
          "reconstruct_from_subset: no consistent completion (lse stays "
          "positive)");
    double far = t_min + 1.0;
    step = 2.0;
    while (lse_at(base, dir, far) <= 0.0) { far += step; step *= 2.0; }
    root = bisect(t_min, far);
  }

  // Newton polish on the smooth 1-D problem.
  for (int i = 0; i < 8; ++i) {
    const double g = lse_at(base, dir, root);
    const double s = lse_slope(base, dir, root);
    if (s == 0.0) break;
    root -= g / s;
    if (std::abs(g) < 1e-14) break;
  }

  Vector full = base + root * dir;
  if (std::abs(logsumexp(full)) > 1e-9)
    throw NumericError("reconstruct_from_subset: completion failed to normalize");
  return full;
}

AttackResult run_attack(ApiClient& client, Index vocab, Index n_samples,
                        const AttackOptions& opt) {
  AttackResult result;

  // Phase 1: full vectors from single-token prompts until the hidden
  // dimension shows a clean rank gap.
  std::vector<Vector> fulls;
  Index target = opt.dim_hint > 0 ? std::min(opt.dim_hint + 4, vocab)
                                  : std::min<Index>(8, vocab);
  Index detected = 0;
  for (;;) {
    while (static_cast<Index>(fulls.size()) < target) {
      const auto id = static_cast<Index>(fulls.size());
      fulls.push_back(extract_full_logprobs(
          client, {id}, vocab, opt.top_k, opt.boost));
    }
    LogprobMatrix probe;
    probe.vocab = vocab;
    probe.count = static_cast<Index>(fulls.size());
    probe.data.resize(vocab, probe.count);
    for (Index j = 0; j < probe.count; ++j) probe.data.col(j) = fulls[static_cast<std::size_t>(j)];
    probe.token_ids.resize(static_cast<std::size_t>(vocab));
    for (Index t = 0; t < vocab; ++t) probe.token_ids[static_cast<std::size_t>(t)] = t;

    RankEstimate est = estimate_rank(probe);
    if (!est.ambiguous && est.rank <= probe.count - 4) {
      detected = est.rank;
      result.pair = build_projections(probe, detected);
      break;
    }
    if (target >= vocab)
      throw NumericError("run_attack: could not pin down the hidden dimension");
    target = std::min(target * 2, vocab);
  }

  const auto phase1 = static_cast<Index>(fulls.size());
  const auto needed = required_samples(detected, SampleConvention::kText);
  if (n_samples < needed)
    result.warnings.push_back(
        "requested " + std::to_string(n_samples) + " samples but a d=" +
        std::to_string(detected) + " fit needs " + std::to_string(needed));

  // Phase 2: subset queries on the pair's coordinate tokens, one fresh
  // multi-token prefix per sample (base-v digits of the sample index).
  const std::vector<Index>& subset = result.pair.rows;
  std::vector<Vector> columns = fulls;
  for (Index sample = phase1; sample < n_samples; ++sample) {
    std::vector<Index> prompt;
    for (Index i = sample; i > 0; i /= vocab)
      prompt.push_back(i % vocab);
    std::reverse(prompt.begin(), prompt.end());

    auto first = client.completions(prompt, opt.top_k, {});
    const Index anchor = first.front().token_id;
    const double anchor_lp = first.front().value;
    std::map<Index, double> known;
    for (const auto& t : first) known[t.token_id] = t.value;

    std::vector<Index> pending;
    for (Index id : subset)
      if (!known.count(id)) pending.push_back(id);
    const double boost = opt.boost > 0.0 ? opt.boost : 30.0;
    harvest_batch(client, prompt, opt.top_k, boost, anchor, anchor_lp,
                  pending, known);

    Vector observed(result.pair.dim);
    for (Index i = 0; i < result.pair.dim; ++i)
      observed(i) = known.at(subset[static_cast<std::size_t>(i)]);
    Vector full = reconstruct_from_subset(observed, subset, result.pair);
    client.ledger().partial_vectors += 1;
    columns.push_back(std::move(full));
  }

  result.matrix.vocab = vocab;
  result.matrix.count = static_cast<Index>(columns.size());
  result.matrix.data.resize(vocab, result.matrix.count);
  for (Index j = 0; j < result.matrix.count; ++j)
    result.matrix.data.col(j) = columns[static_cast<std::size_t>(j)];
  result.matrix.token_ids.resize(static_cast<std::size_t>(vocab));
  for (Index t = 0; t < vocab; ++t)
    result.matrix.token_ids[static_cast<std::size_t>(t)] = t;

  result.ledger = client.ledger();
  return result;
}

}  // namespace elsig
