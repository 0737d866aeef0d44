#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hitdvae/optim.hpp"

namespace hitdvae {

struct CheckpointEntry {
  Shape shape;
  std::vector<double> values;
};

/// Named float64 arrays plus free-form JSON metadata.
///
/// On disk: 8-byte magic "HDVCKPT1", little-endian u64 header length, a JSON
/// header mapping each name to {shape, offset}, then the raw little-endian
/// doubles. `offset` is in bytes from the start of the data section.
class Checkpoint {
 public:
  void put(const std::string& name, const Shape& shape, std::span<const double> values);
  void put(const ParamList& params, const std::string& prefix = "");
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const CheckpointEntry& get(const std::string& name) const;
  /// Copies stored values into `params`; every parameter must be present with its shape.
  void restore(ParamList& params, const std::string& prefix = "") const;
  const std::map<std::string, CheckpointEntry>& entries() const { return entries_; }

  nlohmann::ordered_json& meta() { return meta_; }
  const nlohmann::ordered_json& meta() const { return meta_; }

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::map<std::string, CheckpointEntry> entries_;
  nlohmann::ordered_json meta_ = nlohmann::ordered_json::object();
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace hitdvae
