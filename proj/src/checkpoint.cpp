#include "tsenas/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "tsenas/error.hpp"

namespace tsenas {

const ParamEntry& ParamLayout::add(std::string name, ad::Shape shape, std::string group) {
  const std::size_t n = ad::numel(shape);
  entries_.push_back({std::move(name), std::move(shape), total_, std::move(group)});
  total_ += n;
  return entries_.back();
}

const ParamEntry& ParamLayout::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw Error("no parameter named '" + name + "'");
}

std::filesystem::path manifest_path(const std::filesystem::path& bin_path) {
  std::filesystem::path p = bin_path;
  return p.replace_extension(".json");
}

void write_checkpoint(const std::filesystem::path& bin_path, const std::vector<ParamEntry>& entries,
                      std::span<const double> values) {
  std::size_t expected = 0;
  for (const auto& e : entries) expected = std::max(expected, e.offset + ad::numel(e.shape));
  if (expected > values.size()) throw ShapeError("checkpoint entries exceed value count");

  std::vector<char> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot open '" + bin_path.string() + "' for writing");
  bin.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));

  nlohmann::json params = nlohmann::json::array();
  for (const auto& e : entries) {
    params.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}, {"group", e.group}});
  }
  const nlohmann::json manifest{{"format", "float64-le"}, {"count", values.size()}, {"parameters", params}};
  std::ofstream js(manifest_path(bin_path));
  if (!js) throw IoError("cannot write manifest for '" + bin_path.string() + "'");
  js << manifest.dump(2) << '\n';
}

Checkpoint read_checkpoint(const std::filesystem::path& bin_path) {
  const auto mpath = manifest_path(bin_path);
  std::ifstream js(mpath);
  if (!js) throw IoError("cannot open manifest '" + mpath.string() + "'");
  nlohmann::json manifest;
  try {
    js >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt manifest '" + mpath.string() + "': " + e.what());
  }
  if (manifest.value("format", "") != "float64-le") {
    throw IoError("unsupported checkpoint format in '" + mpath.string() + "'");
  }
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot open '" + bin_path.string() + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  const auto count = manifest.at("count").get<std::size_t>();
  if (bytes.size() != count * 8) {
    throw IoError("'" + bin_path.string() + "' holds " + std::to_string(bytes.size()) +
                  " bytes, manifest expects " + std::to_string(count * 8));
  }
  Checkpoint ck;
  ck.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + b])) << (8 * b);
    ck.values[i] = std::bit_cast<double>(bits);
  }
  for (const auto& p : manifest.at("parameters")) {
    ParamEntry e{p.at("name").get<std::string>(), p.at("shape").get<ad::Shape>(),
                 p.at("offset").get<std::size_t>(), p.value("group", "weight")};
    if (e.offset + ad::numel(e.shape) > count) {
      throw IoError("parameter '" + e.name + "' extends past the end of the checkpoint");
    }
    ck.entries.push_back(std::move(e));
  }
  return ck;
}

std::uint64_t checksum(std::span<const double> values) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : values) {
    unsigned char raw[sizeof(double)];
    std::memcpy(raw, &v, sizeof(double));
    for (unsigned char c : raw) {
      h ^= c;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace tsenas
