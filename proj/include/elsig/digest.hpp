#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "elsig/types.hpp"

namespace elsig {

using Digest32 = std::array<std::uint8_t, 32>;

Digest32 sha256(const void* data, std::size_t len);
Digest32 sha256(const std::string& s);

std::string hex(const Digest32& d, std::size_t bytes = 32);

/// First 8 digest bytes as a little-endian u64; used to seed per-prompt
/// hidden-state draws.
std::uint64_t digest_seed(const Digest32& d);

/// Platform-independent digest of a logprob vector: each entry rounded to
/// 12 significant digits and rendered in a fixed text layout before hashing.
Digest32 canonical_digest(const Vector& logprob);

}  // namespace elsig
