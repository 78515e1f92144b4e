#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "elsig/model.hpp"
#include "elsig/rng.hpp"
#include "helpers.hpp"

using namespace elsig;

TEST_CASE("synth_model draws a full-rank layer deterministically") {
  FinalLayerParams p = synth_model(256, 16, NormKind::ScaledRms, 0.0, 7);
  CHECK(p.vocab == 256);
  CHECK(p.dim == 16);
  CHECK(test::oracle_rank(p.unembed) == 16);
  CHECK((p.scale.array() != 0.0).all());

  FinalLayerParams q = synth_model(256, 16, NormKind::ScaledRms, 0.0, 7);
  CHECK((p.unembed - q.unembed).norm() == 0.0);
  CHECK((p.bias - q.bias).norm() == 0.0);

  FinalLayerParams big = synth_model(2048, 64, NormKind::LayerNorm, 1e-5, 1);
  CHECK(big.eps == 1e-5);
  CHECK(test::oracle_rank(big.unembed) == 64);
}

TEST_CASE("synth_model rejects bad shapes") {
  CHECK_THROWS_AS(synth_model(16, 16, NormKind::Rms, 0.0, 1), PreconditionError);
  CHECK_THROWS_AS(synth_model(8, 16, NormKind::Rms, 0.0, 1), PreconditionError);
  CHECK_THROWS_AS(synth_model(32, 4, NormKind::Rms, -1e-9, 1), PreconditionError);
}

TEST_CASE("normalize magnitudes per norm kind") {
  Vector x(2);
  x << 3.0, 4.0;
  Vector u = normalize(x, NormKind::ScaledRms, 0.0);
  CHECK(u(0) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(u(1) == doctest::Approx(0.8).epsilon(1e-14));

  Rng rng(3);
  Vector y = rng.gaussian_vector(64);
  CHECK(normalize(y, NormKind::ScaledRms, 0.0).norm() == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(normalize(y, NormKind::Rms, 0.0).norm() == doctest::Approx(8.0).epsilon(1e-13));

  Vector ln = normalize(y, NormKind::LayerNorm, 0.0);
  CHECK(ln.sum() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(ln.norm() == doctest::Approx(8.0).epsilon(1e-13));

  // Smoothing keeps the magnitude strictly below the sphere radius.
  CHECK(normalize(y, NormKind::Rms, 1e-5).norm() < 8.0);
}

TEST_CASE("normalize domain errors") {
  Vector zero = Vector::Zero(4);
  CHECK_THROWS_AS(normalize(zero, NormKind::ScaledRms, 0.0), PreconditionError);
  Vector ones = Vector::Ones(3);
  CHECK_THROWS_AS(normalize(ones, NormKind::LayerNorm, 0.0), PreconditionError);
  CHECK(normalize(ones, NormKind::LayerNorm, 1e-5).norm() == 0.0);
}

TEST_CASE("forward on the degenerate zero unembedding is uniform") {
  FinalLayerParams p;
  p.vocab = 32;
  p.dim = 4;
  p.unembed = Matrix::Zero(32, 4);
  p.scale = Vector::Ones(4);
  p.bias = Vector::Zero(4);
  p.norm = NormKind::ScaledRms;
  Rng rng(5);
  Vector lp = forward(p, rng.gaussian_vector(4));
  for (Index i = 0; i < 32; ++i)
    CHECK(lp(i) == doctest::Approx(-std::log(32.0)).epsilon(1e-12));
}

TEST_CASE("forward is scale invariant and produces valid logprobs") {
  FinalLayerParams p = synth_model(256, 16, NormKind::ScaledRms, 0.0, 11);
  Rng rng(12);
  Vector x = rng.gaussian_vector(16);
  Vector a = forward(p, x);
  Vector b = forward(p, 2.0 * x);
  CHECK((a - b).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK(std::abs(logsumexp(a)) < 1e-9);
}

TEST_CASE("log_softmax is shift invariant") {
  Rng rng(17);
  Vector z = rng.gaussian_vector(40);
  Vector shifted = z.array() + 3.7;
  CHECK((log_softmax(z) - log_softmax(shifted)).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("sample_outputs shape, validity, determinism") {
  FinalLayerParams p = synth_model(256, 16, NormKind::ScaledRms, 0.0, 2);
  LogprobMatrix one = sample_outputs(p, 1, 9);
  CHECK(one.count == 1);
  CHECK(std::abs(logsumexp(one.data.col(0))) < 1e-9);

  LogprobMatrix m = sample_outputs(p, 50, 9);
  Matrix centered = test::oracle_centered(m.data);
  CHECK(test::oracle_rank(centered) == 16);

  LogprobMatrix m2 = sample_outputs(p, 50, 9);
  CHECK((m.data - m2.data).norm() == 0.0);

  CHECK_THROWS_AS(sample_outputs(p, 0, 1), PreconditionError);
}

TEST_CASE("outputs sit exactly on the ellipse at eps = 0, inside for eps > 0") {
  FinalLayerParams exact = synth_model(128, 12, NormKind::ScaledRms, 0.0, 21);
  LogprobMatrix m = sample_outputs(exact, 20, 3);
  for (Index j = 0; j < m.count; ++j)
    CHECK(std::abs(test::oracle_sphere_radius(exact, m.data.col(j)) - 1.0) < 1e-9);

  FinalLayerParams smooth = synth_model(128, 12, NormKind::ScaledRms, 1e-5, 21);
  LogprobMatrix ms = sample_outputs(smooth, 20, 3);
  for (Index j = 0; j < ms.count; ++j)
    CHECK(test::oracle_sphere_radius(smooth, ms.data.col(j)) < 1.0);
}

TEST_CASE("hidden norm histogram") {
  FinalLayerParams exact = synth_model(64, 8, NormKind::ScaledRms, 0.0, 4);
  NormHistogram h = hidden_norm_histogram(exact, 500, 20, 6);
  CHECK(h.min == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(h.max == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(h.counts.back() == 500);

  FinalLayerParams smooth = synth_model(2048, 64, NormKind::ScaledRms, 1e-5, 4);
  NormHistogram hs = hidden_norm_histogram(smooth, 2000, 50, 6);
  CHECK(hs.max < 1.0);
  CHECK(hs.mean > 0.999);
  CHECK(hs.mean < 1.0);
}

TEST_CASE("smoothing offset shrinks as the width grows") {
  // Same eps, two widths: the wider model's mean magnitude sits closer to 1
  // because the per-sample mean square concentrates.
  const double eps = 1e-3;
  FinalLayerParams narrow = synth_model(64, 16, NormKind::ScaledRms, eps, 8);
  FinalLayerParams wide = synth_model(512, 256, NormKind::ScaledRms, eps, 8);
  NormHistogram hn = hidden_norm_histogram(narrow, 20000, 40, 13);
  NormHistogram hw = hidden_norm_histogram(wide, 20000, 40, 13);
  CHECK(hw.mean > hn.mean);
  CHECK(hw.mean < 1.0);
}
