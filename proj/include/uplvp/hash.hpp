#pragma once

// Git-style content hashes (SHA-1 over "blob <len>\0<bytes>") for fixture
// provenance. Requires linking OpenSSL::Crypto.

#include <openssl/evp.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "uplvp/error.hpp"

namespace uplvp::hash {

inline std::string sha1_hex(const void* data, std::size_t size) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data, size) != 1 || EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw Error("sha1 computation failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

inline std::string git_blob_hash(const std::vector<std::uint8_t>& bytes) {
  std::string payload = "blob " + std::to_string(bytes.size());
  payload.push_back('\0');
  payload.append(bytes.begin(), bytes.end());
  return sha1_hex(payload.data(), payload.size());
}

/// Hash of a named file set: SHA-1 over sorted "<name> <blob hash>\n" lines.
inline std::string tree_hash(std::vector<std::pair<std::string, std::vector<std::uint8_t>>> files) {
  std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::string listing;
  for (const auto& [name, bytes] : files) listing += name + " " + git_blob_hash(bytes) + "\n";
  return sha1_hex(listing.data(), listing.size());
}

}  // namespace uplvp::hash
