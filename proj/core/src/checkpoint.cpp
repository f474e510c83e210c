#include "lnpt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "lnpt/error.hpp"

namespace lnpt {

namespace {

constexpr char kMagic[4] = {'L', 'N', 'P', 'T'};

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

void put_f64(std::vector<std::byte>& out, double d) {
  auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(std::span<const std::byte> bytes, std::size_t pos, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
  return v;
}

std::size_t bitset_bytes(std::size_t bits) { return (bits + 7) / 8; }

}  // namespace

Checkpoint Checkpoint::from_parameters(const ModelSpec& spec, std::uint64_t seed, const Parameters& params) {
  Checkpoint c;
  c.spec = spec;
  c.seed = seed;
  const auto& layout = params.layout();
  for (std::size_t i = 0; i < layout.slots().size(); ++i) {
    const auto& s = layout.slot(i);
    auto v = params.view(i);
    c.arrays.push_back({s.name, s.shape, std::vector<Scalar>(v.begin(), v.end())});
  }
  return c;
}

Parameters Checkpoint::parameters() const {
  if (!spec) throw FormatError("checkpoint: no model spec in header");
  ParamLayout layout(*spec);
  if (arrays.size() != layout.slots().size()) {
    throw FormatError("checkpoint: " + std::to_string(arrays.size()) + " arrays for " +
                      std::to_string(layout.slots().size()) + " parameter slots");
  }
  std::vector<Scalar> values;
  values.reserve(layout.size());
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    const auto& s = layout.slot(i);
    if (arrays[i].name != s.name || arrays[i].shape != s.shape) {
      throw FormatError("checkpoint: array '" + arrays[i].name + "' does not match slot '" + s.name + "'");
    }
    values.insert(values.end(), arrays[i].values.begin(), arrays[i].values.end());
  }
  return Parameters(std::move(layout), std::move(values));
}

std::vector<std::byte> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["seed"] = ckpt.seed;
  header["spec"] = ckpt.spec ? ckpt.spec->to_json() : nlohmann::json(nullptr);
  header["metadata"] = ckpt.metadata;
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& a : ckpt.arrays) {
    if (shape_numel(a.shape) != a.values.size()) {
      throw ShapeError("checkpoint: array '" + a.name + "' has shape " + shape_string(a.shape) + " but " +
                       std::to_string(a.values.size()) + " values");
    }
    tensors.push_back({{"name", a.name}, {"shape", a.shape}, {"dtype", "f64"}, {"offset", offset}});
    offset += a.values.size() * 8;
  }
  header["tensors"] = std::move(tensors);
  header["data_bytes"] = offset;
  if (ckpt.mask) {
    std::size_t total = 0;
    for (const auto& a : ckpt.arrays) total += a.values.size();
    if (ckpt.mask->size() != total) throw ShapeError("checkpoint: mask length does not match parameter count");
    nlohmann::json layers = nlohmann::json::array();
    std::size_t moff = 0;
    for (const auto& a : ckpt.arrays) {
      layers.push_back({{"name", a.name}, {"count", a.values.size()}, {"offset", moff}});
      moff += bitset_bytes(a.values.size());
    }
    header["mask"] = {{"layers", std::move(layers)}, {"bytes", moff}};
  } else {
    header["mask"] = nullptr;
  }

  const std::string text = header.dump();
  std::vector<std::byte> out;
  out.reserve(12 + text.size() + offset);
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  for (char c : text) out.push_back(static_cast<std::byte>(c));
  for (const auto& a : ckpt.arrays)
    for (Scalar v : a.values) put_f64(out, v);
  if (ckpt.mask) {
    std::size_t pos = 0;
    for (const auto& a : ckpt.arrays) {
      std::vector<std::byte> bits(bitset_bytes(a.values.size()), std::byte{0});
      for (std::size_t i = 0; i < a.values.size(); ++i) {
        if ((*ckpt.mask)[pos + i]) bits[i / 8] |= static_cast<std::byte>(1u << (i % 8));
      }
      pos += a.values.size();
      out.insert(out.end(), bits.begin(), bits.end());
    }
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::byte> bytes) {
  if (bytes.size() < 12) throw FormatError("checkpoint: truncated preamble (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("checkpoint: bad magic");
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto hlen = static_cast<std::size_t>(get_le(bytes, 8, 4));
  if (bytes.size() < 12 + hlen) throw FormatError("checkpoint: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(reinterpret_cast<const char*>(bytes.data() + 12),
                                   reinterpret_cast<const char*>(bytes.data() + 12 + hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: header is not valid JSON: ") + e.what());
  }

  Checkpoint c;
  try {
    c.seed = header.at("seed").get<std::uint64_t>();
    if (!header.at("spec").is_null()) c.spec = ModelSpec::from_json(header.at("spec"));
    c.metadata = header.at("metadata");
    const std::size_t data_start = 12 + hlen;
    const auto data_bytes = header.at("data_bytes").get<std::size_t>();
    if (bytes.size() < data_start + data_bytes) throw FormatError("checkpoint: truncated array section");
    std::size_t total = 0;
    for (const auto& t : header.at("tensors")) {
      NamedArray a;
      a.name = t.at("name").get<std::string>();
      a.shape = t.at("shape").get<Shape>();
      if (t.at("dtype").get<std::string>() != "f64") throw FormatError("checkpoint: unsupported dtype for " + a.name);
      const auto off = t.at("offset").get<std::size_t>();
      const std::size_t n = shape_numel(a.shape);
      if (off + n * 8 > data_bytes) throw FormatError("checkpoint: array '" + a.name + "' overruns the data section");
      a.values.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        a.values[i] = std::bit_cast<double>(get_le(bytes, data_start + off + i * 8, 8));
      }
      total += n;
      c.arrays.push_back(std::move(a));
    }
    const auto& mask = header.at("mask");
    const std::size_t mask_start = data_start + data_bytes;
    std::size_t end = mask_start;
    if (!mask.is_null()) {
      const auto mbytes = mask.at("bytes").get<std::size_t>();
      if (bytes.size() < mask_start + mbytes) throw FormatError("checkpoint: truncated mask section");
      std::vector<std::uint8_t> flat;
      flat.reserve(total);
      for (const auto& l : mask.at("layers")) {
        const auto count = l.at("count").get<std::size_t>();
        const auto off = l.at("offset").get<std::size_t>();
        if (off + bitset_bytes(count) > mbytes) throw FormatError("checkpoint: mask layer overruns section");
        for (std::size_t i = 0; i < count; ++i) {
          auto b = static_cast<unsigned>(bytes[mask_start + off + i / 8]);
          flat.push_back(static_cast<std::uint8_t>((b >> (i % 8)) & 1u));
        }
      }
      if (flat.size() != total) throw FormatError("checkpoint: mask covers " + std::to_string(flat.size()) +
                                                  " entries, parameters have " + std::to_string(total));
      c.mask = std::move(flat);
      end += mbytes;
    }
    if (bytes.size() != end) throw FormatError("checkpoint: " + std::to_string(bytes.size() - end) + " trailing bytes");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  return c;
}

std::vector<std::byte> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("failed reading '" + path.string() + "'");
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace lnpt
