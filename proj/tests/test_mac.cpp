#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include "elsig/mac.hpp"
#include "elsig/rng.hpp"
#include "helpers.hpp"

using namespace elsig;

TEST_CASE("keygen is deterministic and shape-checked") {
  MacKey a = mac_keygen(128, 12, 42);
  MacKey b = mac_keygen(128, 12, 42);
  CHECK(a.key_id == b.key_id);
  CHECK((a.params.unembed - b.params.unembed).norm() == 0.0);
  CHECK(test::oracle_rank(a.params.unembed) == 12);

  MacKey c = mac_keygen(128, 12, 43);
  CHECK(c.key_id != a.key_id);

  CHECK_THROWS_AS(mac_keygen(12, 12, 1), PreconditionError);
}

TEST_CASE("sign then verify round-trips; keys do not cross") {
  MacKey a = mac_keygen(256, 16, 1);
  MacKey b = mac_keygen(256, 16, 2);

  SignedMessage m = mac_sign(a, "the quick brown fox");
  CHECK(std::abs(logsumexp(m.logprob)) < 1e-9);
  VerificationReport ok = mac_verify(a, m);
  CHECK(ok.passed);
  CHECK(ok.distance < 1e-9);

  SignedMessage same = mac_sign(a, "the quick brown fox");
  CHECK((m.logprob - same.logprob).norm() == 0.0);

  SignedMessage cross = mac_sign(b, "the quick brown fox");
  cross.key_id = a.key_id;  // impersonation attempt
  VerificationReport bad = mac_verify(a, cross);
  CHECK_FALSE(bad.passed);
  CHECK(bad.distance > 1e-3);

  SignedMessage mislabeled = mac_sign(b, "x");
  CHECK_THROWS_AS(mac_verify(a, mislabeled), PreconditionError);
}

TEST_CASE("attribution separates two random keys by decades") {
  MacKey a = mac_keygen(256, 16, 7);
  MacKey b = mac_keygen(256, 16, 8);
  std::vector<EllipseKey> keys = {make_exact_key(a.params, a.key_id, a.tau),
                                  make_exact_key(b.params, b.key_id, b.tau)};
  for (int i = 0; i < 10; ++i) {
    SignedMessage m = mac_sign(a, "msg " + std::to_string(i));
    VerificationReport r = attribute(m.logprob, keys);
    CHECK(r.candidate_id == a.key_id);
    CHECK(*r.margin_log10 >= 3.0);
  }
}

TEST_CASE("tampering breaks verification") {
  MacKey key = mac_keygen(256, 16, 11);
  for (int i = 0; i < 20; ++i) {
    SignedMessage m = mac_sign(key, "payload " + std::to_string(i));
    m.logprob(static_cast<Index>(i * 13 % 256)) += 1e-3;
    VerificationReport r = mac_verify(key, m);
    CHECK_FALSE(r.passed);
  }
}

TEST_CASE("forgeries on the linear subspace fail the ellipse check") {
  MacKey key = mac_keygen(256, 16, 12);
  Matrix cw = test::oracle_centered(key.params.unembed);
  Rng rng(13);
  for (int i = 0; i < 20; ++i) {
    SignedMessage forged;
    forged.key_id = key.key_id;
    forged.logprob = log_softmax(cw * rng.gaussian_vector(16));
    VerificationReport r = mac_verify(key, forged);
    CHECK_FALSE(r.passed);
    CHECK(r.distance > 1e-3);
  }
}

TEST_CASE("replay detection flags repeated signatures") {
  MacKey key = mac_keygen(128, 8, 21);
  ReplayStore store;
  SignedMessage m = mac_sign(key, "only once");

  VerificationReport first = mac_verify(key, m, &store, true);
  CHECK(first.passed);
  CHECK_FALSE(first.replayed);
  CHECK(store.size() == 1);

  VerificationReport second = mac_verify(key, m, &store, true);
  CHECK(second.passed);
  CHECK(second.replayed);
  CHECK(store.size() == 1);  // idempotent insert

  SignedMessage other = mac_sign(key, "something else");
  CHECK_FALSE(mac_verify(key, other, &store, true).replayed);
}

TEST_CASE("replay store persists to disk") {
  const auto path = std::filesystem::temp_directory_path() /
                    ("elsig_replay_" + std::to_string(::getpid()) + ".bin");
  std::filesystem::remove(path);
  MacKey key = mac_keygen(128, 8, 22);
  SignedMessage m = mac_sign(key, "persist me");
  {
    ReplayStore store(path);
    mac_verify(key, m, &store, true);
    CHECK(store.size() == 1);
  }
  ReplayStore reloaded(path);
  CHECK(reloaded.size() == 1);
  CHECK(mac_verify(key, m, &reloaded, false).replayed);
  std::filesystem::remove(path);
}

TEST_CASE("canonical digests are stable and sensitive") {
  MacKey key = mac_keygen(128, 8, 23);
  SignedMessage m = mac_sign(key, "digest");
  Digest32 d1 = canonical_digest(m.logprob);
  Digest32 d2 = canonical_digest(m.logprob);
  CHECK(d1 == d2);

  Vector changed = m.logprob;
  changed(5) += 1e-3;
  CHECK(canonical_digest(changed) != d1);
}
