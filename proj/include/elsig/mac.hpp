#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <set>
#include <string>

#include "elsig/digest.hpp"
#include "elsig/model.hpp"
#include "elsig/types.hpp"
#include "elsig/verify.hpp"

namespace elsig {

/// Secret signing key: a full final layer whose ellipse is the secret.
/// Verification reports never carry the parameters, only the key id.
struct MacKey {
  std::string key_id;
  FinalLayerParams params;
  std::int64_t created_at = 0;  // unix seconds
  double tau = 1e-4;
};

struct SignedMessage {
  Vector logprob;
  std::string key_id;
  std::int64_t sequence_index = 0;
};

/// Append-only set of canonical output digests; membership is exact and
/// insertion idempotent. Optionally persisted as a flat file of 32-byte
/// records. Safe for concurrent use.
class ReplayStore {
 public:
  ReplayStore() = default;
  explicit ReplayStore(std::filesystem::path file);

  bool contains(const Digest32& d) const;
  /// Returns true when the digest was new.
  bool insert(const Digest32& d);
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::set<Digest32> digests_;
  std::optional<std::filesystem::path> file_;
};

/// Random ellipse key: orthogonalized Gaussian rotations, log-normal
/// singular values, Gaussian bias, assembled into a final layer.
/// Deterministic per seed.
MacKey mac_keygen(Index vocab, Index dim, std::uint64_t seed);

/// Hashes the message to a hidden state (SHA-256 expanded in counter mode
/// to d Gaussians) and emits the key's logprobs for it. The output sits on
/// the key's ellipse.
SignedMessage mac_sign(const MacKey& key, const std::string& message,
                       std::int64_t sequence_index = 0);

/// Ellipse-distance check plus optional replay detection. With record
/// set, the digest is added to the store after the check.
VerificationReport mac_verify(const MacKey& key, const SignedMessage& msg,
                              ReplayStore* store = nullptr, bool record = false);

}  // namespace elsig
