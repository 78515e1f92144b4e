#include "elsig/mac.hpp"

#include <Eigen/QR>

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

#include "elsig/rng.hpp"

namespace elsig {

ReplayStore::ReplayStore(std::filesystem::path file) : file_(std::move(file)) {
  std::ifstream in(*file_, std::ios::binary);
  Digest32 d;
  while (in.read(reinterpret_cast<char*>(d.data()), d.size()))
    digests_.insert(d);
}

bool ReplayStore::contains(const Digest32& d) const {
  std::lock_guard lock(mu_);
  return digests_.count(d) != 0;
}

bool ReplayStore::insert(const Digest32& d) {
  std::lock_guard lock(mu_);
  if (!digests_.insert(d).second) return false;
  if (file_) {
    std::ofstream out(*file_, std::ios::binary | std::ios::app);
    out.write(reinterpret_cast<const char*>(d.data()),
              static_cast<std::streamsize>(d.size()));
  }
  return true;
}

std::size_t ReplayStore::size() const {
  std::lock_guard lock(mu_);
  return digests_.size();
}

namespace {

Matrix random_orthogonal(Index dim, Rng& rng) {
  Eigen::HouseholderQR<Matrix> qr(rng.gaussian_matrix(dim, dim));
  Matrix q = qr.householderQ();
  Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index i = 0; i < dim; ++i)
    if (r(i, i) < 0.0) q.col(i) = -q.col(i);
  return q;
}

// Counter-mode expansion of a digest into Gaussian variates.
Vector digest_gaussians(const Digest32& digest, Index n) {
  Vector out(n);
  Index have = 0;
  std::uint32_t counter = 0;
  while (have < n) {
    std::uint8_t block[36];
    std::memcpy(block, digest.data(), 32);
    for (int b = 0; b < 4; ++b)
      block[32 + b] = static_cast<std::uint8_t>((counter >> (8 * b)) & 0xff);
    Digest32 h = sha256(block, sizeof(block));
    ++counter;

    // Four u64 words -> two Box-Muller pairs.
    for (int w = 0; w + 1 < 4 && have < n; w += 2) {
      std::uint64_t a = 0, b = 0;
      for (int i = 7; i >= 0; --i) {
        a = (a << 8) | h[static_cast<std::size_t>(8 * w + i)];
        b = (b << 8) | h[static_cast<std::size_t>(8 * (w + 1) + i)];
      }
      const double u1 = 1.0 - static_cast<double>(a >> 11) * 0x1.0p-53;
      const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
      const double r = std::sqrt(-2.0 * std::log(u1));
      out(have++) = r * std::cos(2.0 * M_PI * u2);
      if (have < n) out(have++) = r * std::sin(2.0 * M_PI * u2);
    }
  }
  return out;
}

}  // namespace

MacKey mac_keygen(Index vocab, Index dim, std::uint64_t seed) {
  if (dim >= vocab) throw PreconditionError("mac_keygen: requires d < v");
  if (dim < 2) throw PreconditionError("mac_keygen: d must be >= 2");
  Rng rng(splitmix64(seed ^ 0x6ac5ee1ULL));

  Matrix left = random_orthogonal(dim, rng);
  Matrix right = random_orthogonal(dim, rng);
  Vector axes = (0.25 * rng.gaussian_vector(dim)).array().exp();
  Matrix tall_q;
  {
    Eigen::HouseholderQR<Matrix> qr(rng.gaussian_matrix(vocab, dim));
    tall_q = Matrix(qr.householderQ()).leftCols(dim);
  }

  MacKey key;
  key.params.vocab = vocab;
  key.params.dim = dim;
  key.params.unembed = tall_q * left * axes.asDiagonal() * right.transpose();
  key.params.scale = Vector::Ones(dim);
  key.params.bias = rng.gaussian_vector(dim);
  key.params.norm = NormKind::ScaledRms;
  key.params.eps = 0.0;
  key.params.seed = seed;
  key.created_at = std::chrono::duration_cast<std::chrono::seconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();

  // Key id from the structural parameters, not the clock.
  std::string tag = "elsig-key:" + std::to_string(vocab) + ":" +
                    std::to_string(dim) + ":" + std::to_string(seed);
  key.key_id = hex(sha256(tag), 8);
  // Genuine eps = 0 signatures sit at numerical noise (~1e-13), so three
  // decades of slack still leaves tampering many decades away.
  key.tau = 1e-9;
  return key;
}

SignedMessage mac_sign(const MacKey& key, const std::string& message,
                       std::int64_t sequence_index) {
  Digest32 digest = sha256(message);
  Vector hidden = digest_gaussians(digest, key.params.dim);
  SignedMessage out;
  out.logprob = forward(key.params, hidden);
  out.key_id = key.key_id;
  out.sequence_index = sequence_index;
  return out;
}

VerificationReport mac_verify(const MacKey& key, const SignedMessage& msg,
                              ReplayStore* store, bool record) {
  if (msg.key_id != key.key_id)
    throw PreconditionError("mac_verify: key id mismatch");

  EllipseKey ellipse = make_exact_key(key.params, key.key_id, key.tau);
  VerificationReport report;
  report.candidate_id = key.key_id;
  // A tampered vector that is no longer a normalized logprob left the
  // signed set even if its centered image stays near the ellipse, so the
  // normalization defect joins the distance.
  report.distance = std::max(distance_to_ellipse(msg.logprob, ellipse),
                             std::abs(logsumexp(msg.logprob)));
  report.passed = report.distance <= key.tau;

  if (store) {
    const Digest32 d = canonical_digest(msg.logprob);
    report.replayed = store->contains(d);
    if (record) store->insert(d);
  }
  return report;
}

}  // namespace elsig
