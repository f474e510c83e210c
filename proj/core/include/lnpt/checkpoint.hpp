#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lnpt/model.hpp"

namespace lnpt {

// On-disk layout shared by checkpoints and matrix dumps:
//
//   "LNPT" | u32 version | u32 header length | UTF-8 JSON header | f64 arrays | mask bitsets
//
// Integers and floats are little-endian. The header lists each array as
// {name, shape, dtype, offset} with offsets relative to the start of the
// array section. The optional mask section stores one LSB-first packed bitset
// per parameter slot, in slot order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<Scalar> values;
};

struct Checkpoint {
  std::optional<ModelSpec> spec;
  std::uint64_t seed = 0;
  // Raw arrays in header order. For model checkpoints these are the parameter
  // slots of spec, in layout order.
  std::vector<NamedArray> arrays;
  // One 0/1 entry per flat parameter, when a prune mask is attached.
  std::optional<std::vector<std::uint8_t>> mask;
  nlohmann::json metadata = nlohmann::json::object();

  // Checkpoint for a model's parameters.
  static Checkpoint from_parameters(const ModelSpec& spec, std::uint64_t seed, const Parameters& params);
  // Flat parameter vector reassembled from the arrays; checks them against spec.
  Parameters parameters() const;
};

std::vector<std::byte> encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError on bad magic, unsupported version, truncation or inconsistent header.
Checkpoint decode_checkpoint(std::span<const std::byte> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<std::byte> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace lnpt
