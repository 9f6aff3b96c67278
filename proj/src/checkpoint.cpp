#include "voltcast/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "voltcast/errors.hpp"

namespace voltcast {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'V', 'C', 'K', 'P'};

void put_f64_le(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

double get_f64_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  }
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

std::uint64_t fnv1a64(const unsigned char* data, std::size_t len) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  return h;
}

void write_container(
    const std::string& path, nlohmann::json header_meta,
    const std::vector<std::pair<std::string, Tensor>>& blocks) {
  std::string payload;
  json block_list = json::array();
  for (const auto& [name, tensor] : blocks) {
    block_list.push_back({{"name", name}, {"shape", tensor.shape()}});
    for (double v : tensor.values()) put_f64_le(payload, v);
  }
  json header;
  header["format_version"] = kCheckpointVersion;
  header["meta"] = std::move(header_meta);
  header["blocks"] = std::move(block_list);
  header["payload_bytes"] = payload.size();
  char csum[32];
  std::snprintf(csum, sizeof csum, "%016llx",
                static_cast<unsigned long long>(fnv1a64(
                    reinterpret_cast<const unsigned char*>(payload.data()),
                    payload.size())));
  header["payload_fnv1a"] = csum;

  const std::string header_text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(kMagic, 4);
  const std::uint32_t hlen = static_cast<std::uint32_t>(header_text.size());
  char lenbuf[4];
  for (int i = 0; i < 4; ++i) {
    lenbuf[i] = static_cast<char>((hlen >> (8 * i)) & 0xff);
  }
  out.write(lenbuf, 4);
  out.write(header_text.data(),
            static_cast<std::streamsize>(header_text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw DataError("write to '" + path + "' failed");
}

nlohmann::json read_container(
    const std::string& path,
    std::vector<std::pair<std::string, Tensor>>& blocks_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("'" + path + "' is not a model container");
  }
  std::uint32_t hlen = 0;
  for (int i = 0; i < 4; ++i) {
    hlen |= static_cast<std::uint32_t>(
                static_cast<unsigned char>(bytes[4 + i]))
            << (8 * i);
  }
  if (bytes.size() < 8 + static_cast<std::size_t>(hlen)) {
    throw FormatError("'" + path + "' is truncated inside the header");
  }
  json header = json::parse(bytes.substr(8, hlen), nullptr, false);
  if (header.is_discarded()) {
    throw FormatError("'" + path + "' header is not valid JSON");
  }
  if (header.value("format_version", 0u) != kCheckpointVersion) {
    throw FormatError("'" + path + "': unsupported container version");
  }
  const std::size_t payload_bytes = header.at("payload_bytes");
  const std::size_t payload_off = 8 + hlen;
  if (bytes.size() != payload_off + payload_bytes) {
    throw FormatError("'" + path + "' is truncated: expected " +
                      std::to_string(payload_off + payload_bytes) +
                      " bytes, found " + std::to_string(bytes.size()));
  }
  const unsigned char* payload =
      reinterpret_cast<const unsigned char*>(bytes.data()) + payload_off;
  char csum[32];
  std::snprintf(csum, sizeof csum, "%016llx",
                static_cast<unsigned long long>(
                    fnv1a64(payload, payload_bytes)));
  if (header.at("payload_fnv1a").get<std::string>() != csum) {
    throw FormatError("'" + path + "' checksum mismatch; file is corrupt");
  }

  blocks_out.clear();
  std::size_t off = 0;
  for (const auto& blk : header.at("blocks")) {
    const std::string name = blk.at("name");
    const Shape shape = blk.at("shape").get<Shape>();
    const std::size_t count = shape_size(shape);
    if (off + count * 8 > payload_bytes) {
      throw FormatError("'" + path + "' block '" + name +
                        "' runs past the payload");
    }
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
      values[i] = get_f64_le(payload + off + i * 8);
    }
    off += count * 8;
    blocks_out.emplace_back(name,
                            Tensor::from(shape, std::move(values), false));
  }
  if (off != payload_bytes) {
    throw FormatError("'" + path + "' payload has trailing bytes");
  }
  return header.at("meta");
}

}  // namespace voltcast
