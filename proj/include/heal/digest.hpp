#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace heal {

// Lower-case hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view data);

// First 8 bytes of SHA-256, big-endian.
std::uint64_t hash64(std::string_view data);

/// Per-request seed derived from the run seed, a stable key (question id,
/// path digest, ...) and an attempt index. Identical inputs always map to the
/// same seed, which makes every request idempotent under retry and resume.
std::uint64_t derive_seed(std::uint64_t run_seed, std::string_view key,
                          std::uint64_t attempt);

}  // namespace heal
