#pragma once
// Checkpoint file: "GLUEPK1\0" magic, u32 little-endian header length, UTF-8
// JSON header, then param_count little-endian f32 values.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glue/nn.hpp"

namespace glue {

inline constexpr std::array<char, 8> kCheckpointMagic = {'G', 'L', 'U', 'E', 'P', 'K', '1', '\0'};
inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  std::optional<std::size_t> expert_id;
  std::size_t train_size = 0;
  std::optional<double> proxy_accuracy;
  std::uint64_t seed = 0;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  ArchSpec arch;
  ParamVector params;
  CheckpointMeta meta;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline nlohmann::json arch_to_json(const ArchSpec& arch) {
  return {{"layer_sizes", arch.layer_sizes},
          {"activation", std::string(to_string(arch.activation))},
          {"output", std::string(to_string(arch.output))}};
}

inline ArchSpec arch_from_json(const nlohmann::json& j) {
  try {
    return ArchSpec(j.at("layer_sizes").get<std::vector<std::size_t>>(),
                    parse_activation(j.at("activation").get<std::string>()),
                    parse_output_kind(j.value("output", std::string("logits"))));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad architecture in header: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad architecture in header: ") + e.what());
  }
}

}  // namespace detail

/// Serializes to the on-disk byte layout. Values are stored as f32.
inline std::string encode_checkpoint(const ArchSpec& arch, const ParamVector& params,
                                     const CheckpointMeta& meta) {
  check_params(arch, params);
  nlohmann::json m = {{"train_size", meta.train_size}, {"seed", meta.seed}};
  if (meta.expert_id) m["expert_id"] = *meta.expert_id;
  if (meta.proxy_accuracy) m["proxy_accuracy"] = *meta.proxy_accuracy;
  const nlohmann::json header = {{"format_version", kCheckpointVersion},
                                 {"arch", detail::arch_to_json(arch)},
                                 {"param_count", arch.param_count()},
                                 {"dtype", "f32"},
                                 {"metadata", std::move(m)}};
  const std::string text = header.dump();
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out.reserve(out.size() + 4 * params.size());
  for (double v : params.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

/// Parses and validates a checkpoint image. Never returns a partial value.
inline Checkpoint decode_checkpoint(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < kCheckpointMagic.size() ||
      std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
    throw FormatError("bad checkpoint magic");
  }
  if (bytes.size() < 12) throw CorruptionError("checkpoint truncated before header length");
  const std::size_t header_len = detail::get_u32(p + 8);
  if (bytes.size() < 12 + header_len) throw CorruptionError("checkpoint truncated inside header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12,
                                   bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) throw FormatError("checkpoint header must be a JSON object");
  if (!header.contains("format_version") || !header["format_version"].is_number_integer()) {
    throw FormatError("checkpoint header lacks format_version");
  }
  if (header["format_version"].get<int>() != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint format_version " + header["format_version"].dump());
  }
  if (header.value("dtype", std::string()) != "f32") throw FormatError("checkpoint dtype must be f32");
  if (!header.contains("arch")) throw FormatError("checkpoint header lacks arch");
  Checkpoint ck;
  ck.arch = detail::arch_from_json(header["arch"]);
  if (!header.contains("param_count") || !header["param_count"].is_number_unsigned()) {
    throw FormatError("checkpoint header lacks param_count");
  }
  const std::size_t count = header["param_count"].get<std::size_t>();
  if (count != ck.arch.param_count()) {
    throw FormatError("header param_count " + std::to_string(count) +
                      " disagrees with architecture (" + std::to_string(ck.arch.param_count()) + ")");
  }
  const std::size_t payload = bytes.size() - 12 - header_len;
  if (payload != 4 * count) {
    throw CorruptionError("payload has " + std::to_string(payload) + " bytes, expected " +
                          std::to_string(4 * count));
  }
  try {
    const auto& m = header.at("metadata");
    ck.meta.train_size = m.value("train_size", std::size_t{0});
    ck.meta.seed = m.value("seed", std::uint64_t{0});
    if (m.contains("expert_id")) ck.meta.expert_id = m["expert_id"].get<std::size_t>();
    if (m.contains("proxy_accuracy")) ck.meta.proxy_accuracy = m["proxy_accuracy"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint metadata: ") + e.what());
  }

  std::vector<double> values(count);
  const unsigned char* data = p + 12 + header_len;
  for (std::size_t i = 0; i < count; ++i) {
    values[i] = std::bit_cast<float>(detail::get_u32(data + 4 * i));
    if (!std::isfinite(values[i])) throw NumericError("non-finite value in checkpoint payload");
  }
  ck.params = ParamVector(ck.arch, std::move(values));
  return ck;
}

inline void save_checkpoint(const std::string& path, const ArchSpec& arch, const ParamVector& params,
                            const CheckpointMeta& meta) {
  const std::string bytes = encode_checkpoint(arch, params, meta);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace glue
