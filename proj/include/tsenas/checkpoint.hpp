#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tsenas/tensor.hpp"

namespace tsenas {

struct ParamEntry {
  std::string name;
  ad::Shape shape;
  std::size_t offset = 0;
  std::string group;  // "weight" or "arch"
};

// Names, shapes and offsets of tensors packed into one flat vector.
class ParamLayout {
 public:
  const ParamEntry& add(std::string name, ad::Shape shape, std::string group = "weight");
  const std::vector<ParamEntry>& entries() const { return entries_; }
  const ParamEntry& at(std::size_t i) const { return entries_.at(i); }
  const ParamEntry& find(const std::string& name) const;
  std::size_t total() const { return total_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<ParamEntry> entries_;
  std::size_t total_ = 0;
};

struct Checkpoint {
  std::vector<ParamEntry> entries;
  std::vector<double> values;
};

// Manifest path for a checkpoint binary: same stem, ".json" extension.
std::filesystem::path manifest_path(const std::filesystem::path& bin_path);

// Writes `values` as little-endian float64 to `bin_path` and the manifest
// {"format": "float64-le", "count": N, "parameters": [{name, shape, offset,
// group}]} next to it.
void write_checkpoint(const std::filesystem::path& bin_path, const std::vector<ParamEntry>& entries,
                      std::span<const double> values);
Checkpoint read_checkpoint(const std::filesystem::path& bin_path);

// FNV-1a over the raw bytes of the values.
std::uint64_t checksum(std::span<const double> values);

}  // namespace tsenas
