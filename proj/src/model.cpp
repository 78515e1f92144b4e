#include "elsig/model.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

#include "elsig/rng.hpp"

namespace elsig {

std::string norm_name(NormKind k) {
  switch (k) {
    case NormKind::ScaledRms: return "scaled_rms";
    case NormKind::Rms: return "rms";
    case NormKind::LayerNorm: return "layernorm";
  }
  return "scaled_rms";
}

NormKind norm_from_name(const std::string& name) {
  if (name == "scaled_rms") return NormKind::ScaledRms;
  if (name == "rms") return NormKind::Rms;
  if (name == "layernorm") return NormKind::LayerNorm;
  throw PreconditionError("unknown norm kind: " + name);
}

double norm_sphere_radius(NormKind k, Index dim) {
  return k == NormKind::ScaledRms ? 1.0 : std::sqrt(static_cast<double>(dim));
}

double logsumexp(const VectorRef& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

Vector log_softmax(const VectorRef& logits) {
  return logits.array() - logsumexp(logits);
}

Vector softmax(const VectorRef& logits) {
  Vector p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

Vector normalize(const VectorRef& x, NormKind norm, double eps) {
  const Index d = x.size();
  if (d == 0) throw PreconditionError("normalize: empty vector");
  if (!x.allFinite()) throw PreconditionError("normalize: non-finite entries");
  const double dd = static_cast<double>(d);
  switch (norm) {
    case NormKind::ScaledRms: {
      const double denom = std::sqrt(dd * eps + x.squaredNorm());
      if (denom == 0.0)
        throw PreconditionError("normalize: zero vector with eps = 0");
      return x / denom;
    }
    case NormKind::Rms: {
      const double denom = std::sqrt(eps + x.squaredNorm() / dd);
      if (denom == 0.0)
        throw PreconditionError("normalize: zero vector with eps = 0");
      return x / denom;
    }
    case NormKind::LayerNorm: {
      Vector c = x.array() - x.mean();
      const double var = c.squaredNorm() / dd;
      const double denom = std::sqrt(eps + var);
      if (denom == 0.0)
        throw PreconditionError("normalize: zero variance with eps = 0");
      return c / denom;
    }
  }
  throw PreconditionError("normalize: unknown norm kind");
}

FinalLayerParams synth_model(Index vocab, Index dim, NormKind norm, double eps,
                             std::uint64_t seed) {
  if (dim < 1) throw PreconditionError("synth_model: d must be positive");
  if (dim >= vocab)
    throw PreconditionError("synth_model: requires d < v, got d=" +
                            std::to_string(dim) + ", v=" +
                            std::to_string(vocab));
  if (eps < 0.0) throw PreconditionError("synth_model: eps must be >= 0");

  FinalLayerParams p;
  p.vocab = vocab;
  p.dim = dim;
  p.norm = norm;
  p.eps = eps;
  p.seed = seed;

  const double scale_w = 1.0 / std::sqrt(static_cast<double>(dim));
  for (int attempt = 0;; ++attempt) {
    Rng rng(seed + static_cast<std::uint64_t>(attempt));
    p.unembed = rng.gaussian_matrix(vocab, dim) * scale_w;
    // log-normal(0, 0.25^2) keeps the element-wise scale strictly nonzero
    p.scale = (0.25 * rng.gaussian_vector(dim)).array().exp();
    p.bias = rng.gaussian_vector(dim);

    Eigen::JacobiSVD<Matrix> svd(p.unembed);
    const auto& sv = svd.singularValues();
    if (sv(sv.size() - 1) > 1e-10 * sv(0)) {
      p.resample_retries = attempt;
      return p;
    }
  }
}

Vector forward(const FinalLayerParams& params, const VectorRef& x) {
  if (x.size() != params.dim)
    throw PreconditionError("forward: hidden state has wrong dimension");
  Vector xhat = normalize(x, params.norm, params.eps);
  Vector pre = params.scale.cwiseProduct(xhat) + params.bias;
  return log_softmax(params.unembed * pre);
}

LogprobMatrix sample_outputs(const FinalLayerParams& params, Index n,
                             std::uint64_t seed) {
  if (n < 1) throw PreconditionError("sample_outputs: n must be >= 1");
  Rng rng(splitmix64(seed));
  LogprobMatrix m;
  m.vocab = params.vocab;
  m.count = n;
  m.data.resize(params.vocab, n);
  m.token_ids.resize(static_cast<std::size_t>(params.vocab));
  for (Index t = 0; t < params.vocab; ++t)
    m.token_ids[static_cast<std::size_t>(t)] = t;
  for (Index j = 0; j < n; ++j)
    m.data.col(j) = forward(params, rng.gaussian_vector(params.dim));
  return m;
}

NormHistogram hidden_norm_histogram(const FinalLayerParams& params, Index n,
                                    Index bins, std::uint64_t seed) {
  if (n < 1 || bins < 1)
    throw PreconditionError("hidden_norm_histogram: n and bins must be >= 1");
  Rng rng(splitmix64(seed ^ 0x9d5f0a1cULL));
  const double radius = norm_sphere_radius(params.norm, params.dim);

  NormHistogram h;
  h.bins = bins;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  h.min = 1.0;
  h.max = 0.0;
  double sum = 0.0;
  for (Index i = 0; i < n; ++i) {
    Vector xhat = normalize(rng.gaussian_vector(params.dim), params.norm,
                            params.eps);
    const double r = xhat.norm() / radius;
    sum += r;
    h.min = std::min(h.min, r);
    h.max = std::max(h.max, r);
    auto bin = static_cast<Index>(r * static_cast<double>(bins));
    bin = std::clamp<Index>(bin, 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(bin)];
  }
  h.mean = sum / static_cast<double>(n);
  return h;
}

}  // namespace elsig
