#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "voltcast/tensor.hpp"

namespace voltcast {

// Single-file model container: magic, a little-endian u32 header length, a
// JSON header (format version, caller metadata, the declared block order
// with shapes, and an FNV-1a checksum of the payload), then the raw
// little-endian f64 parameter blocks in that order. Round-trips byte-exactly.

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a64(const unsigned char* data, std::size_t len);

void write_container(const std::string& path, nlohmann::json header_meta,
                     const std::vector<std::pair<std::string, Tensor>>& blocks);

// Returns the caller metadata; blocks come back in declared order. Throws
// FormatError on bad magic, version mismatch, truncation, or checksum
// failure.
nlohmann::json read_container(
    const std::string& path,
    std::vector<std::pair<std::string, Tensor>>& blocks_out);

}  // namespace voltcast
