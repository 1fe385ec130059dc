#include "heal/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <stdexcept>

namespace heal {

namespace {

std::array<unsigned char, 32> sha256(std::string_view data) {
  std::array<unsigned char, 32> out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != out.size()) {
    throw std::runtime_error("sha256 failed");
  }
  return out;
}

}  // namespace

std::string sha256_hex(std::string_view data) {
  static constexpr char kHex[] = "0123456789abcdef";
  const auto raw = sha256(data);
  std::string hex;
  hex.reserve(raw.size() * 2);
  for (unsigned char b : raw) {
    hex.push_back(kHex[b >> 4]);
    hex.push_back(kHex[b & 0xF]);
  }
  return hex;
}

std::uint64_t hash64(std::string_view data) {
  const auto raw = sha256(data);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | raw[i];
  return v;
}

std::uint64_t derive_seed(std::uint64_t run_seed, std::string_view key, std::uint64_t attempt) {
  std::string material = std::to_string(run_seed);
  material.push_back('\x1f');
  material.append(key);
  material.push_back('\x1f');
  material.append(std::to_string(attempt));
  return hash64(material);
}

}  // namespace heal
