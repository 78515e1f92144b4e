#include "elsig/digest.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <cstring>

namespace elsig {

Digest32 sha256(const void* data, std::size_t len) {
  Digest32 out{};
  unsigned int out_len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  EVP_DigestUpdate(ctx, data, len);
  EVP_DigestFinal_ex(ctx, out.data(), &out_len);
  EVP_MD_CTX_free(ctx);
  return out;
}

Digest32 sha256(const std::string& s) { return sha256(s.data(), s.size()); }

std::string hex(const Digest32& d, std::size_t bytes) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(2 * bytes);
  for (std::size_t i = 0; i < bytes && i < d.size(); ++i) {
    s.push_back(digits[d[i] >> 4]);
    s.push_back(digits[d[i] & 0xf]);
  }
  return s;
}

std::uint64_t digest_seed(const Digest32& d) {
  std::uint64_t x = 0;
  for (int i = 7; i >= 0; --i) x = (x << 8) | d[static_cast<std::size_t>(i)];
  return x;
}

Digest32 canonical_digest(const Vector& logprob) {
  std::string buf;
  buf.reserve(static_cast<std::size_t>(logprob.size()) * 20);
  char tmp[40];
  for (Index i = 0; i < logprob.size(); ++i) {
    // 12 significant digits, fixed scientific layout.
    std::snprintf(tmp, sizeof(tmp), "%.11e\n", logprob(i));
    buf += tmp;
  }
  return sha256(buf);
}

}  // namespace elsig
