#include "hitdvae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace hitdvae {

namespace {

constexpr char kMagic[8] = {'H', 'D', 'V', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t read_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

void Checkpoint::put(const std::string& name, const Shape& shape, std::span<const double> values) {
  if (shape_numel(shape) != values.size()) throw ShapeError("checkpoint entry '" + name + "' shape/value mismatch");
  entries_[name] = CheckpointEntry{shape, {values.begin(), values.end()}};
}

void Checkpoint::put(const ParamList& params, const std::string& prefix) {
  for (const auto& p : params) put(prefix + p.name, p.tensor.shape(), p.tensor.values());
}

const CheckpointEntry& Checkpoint::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("checkpoint has no entry '" + name + "'");
  return it->second;
}

void Checkpoint::restore(ParamList& params, const std::string& prefix) const {
  for (auto& p : params) {
    const auto& e = get(prefix + p.name);
    if (e.shape != p.tensor.shape()) {
      throw ShapeError("checkpoint entry '" + prefix + p.name + "' has shape " + shape_str(e.shape) +
                       ", model expects " + shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_values();
    std::copy(e.values.begin(), e.values.end(), dst.begin());
  }
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  nlohmann::ordered_json header;
  header["format"] = "hitdvae-checkpoint";
  header["version"] = 1;
  auto& index = header["tensors"] = nlohmann::ordered_json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, e] : entries_) {
    index[name] = {{"shape", e.shape}, {"offset", offset}};
    offset += e.values.size() * sizeof(double);
  }
  header["meta"] = meta_;
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  append_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  const std::size_t data_start = out.size();
  out.resize(data_start + offset);
  std::size_t pos = data_start;
  for (const auto& [name, e] : entries_) {
    std::memcpy(out.data() + pos, e.values.data(), e.values.size() * sizeof(double));
    pos += e.values.size() * sizeof(double);
  }
  return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: bad magic or truncated preamble");
  }
  const std::uint64_t header_len = read_u64(bytes.data() + 8);
  if (16 + header_len > bytes.size()) throw std::runtime_error("checkpoint: header extends past end of file");
  const auto header = nlohmann::ordered_json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  if (header.value("format", "") != "hitdvae-checkpoint" || header.value("version", 0) != 1) {
    throw std::runtime_error("checkpoint: unsupported format/version");
  }
  const std::size_t data_start = 16 + header_len;
  Checkpoint ck;
  for (const auto& [name, info] : header.at("tensors").items()) {
    const Shape shape = info.at("shape").get<Shape>();
    const std::uint64_t offset = info.at("offset").get<std::uint64_t>();
    const std::size_t count = shape_numel(shape);
    if (data_start + offset + count * sizeof(double) > bytes.size()) {
      throw std::runtime_error("checkpoint: entry '" + name + "' extends past end of file");
    }
    std::vector<double> values(count);
    std::memcpy(values.data(), bytes.data() + data_start + offset, count * sizeof(double));
    ck.entries_[name] = CheckpointEntry{shape, std::move(values)};
  }
  ck.meta_ = header.at("meta");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const { write_file_bytes(path, serialize()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) { return deserialize(read_file_bytes(path)); }

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace hitdvae
