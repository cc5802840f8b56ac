#include "tsenas/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "tsenas/checkpoint.hpp"
#include "tsenas/error.hpp"

namespace tsenas {

namespace {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(salt)};
  return std::mt19937_64(seq);
}

std::vector<std::size_t> permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t at,
                        const std::filesystem::path& path) {
  if (at + 4 > bytes.size()) throw IoError("'" + path.string() + "' is truncated (header)");
  return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
         (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
}

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

}  // namespace

ad::Shape Dataset::sample_shape() const {
  const ad::Shape& s = features.shape();
  return {s.at(1), s.at(2), s.at(3)};
}

void Dataset::validate() const {
  if (labels.empty()) throw ConfigError("dataset is empty");
  if (features.rank() != 4 || features.dim(0) != labels.size()) {
    throw ShapeError("features " + ad::shape_string(features.shape()) + " do not match " +
                     std::to_string(labels.size()) + " labels");
  }
  if (classes < 2) throw ConfigError("need at least two classes");
  for (int y : labels)
    if (y < 0 || y >= classes) throw ConfigError("label " + std::to_string(y) + " out of range");
  for (double x : features.values())
    if (!std::isfinite(x)) throw NumericError("non-finite feature value");
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw ConfigError("empty subset");
  const ad::Shape ss = sample_shape();
  const std::size_t stride = ad::numel(ss);
  std::vector<double> values;
  values.reserve(indices.size() * stride);
  std::vector<int> ys;
  ys.reserve(indices.size());
  const auto src = features.values();
  for (std::size_t i : indices) {
    if (i >= size()) throw Error("subset index out of range");
    values.insert(values.end(), src.begin() + static_cast<std::ptrdiff_t>(i * stride),
                  src.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
    ys.push_back(labels[i]);
  }
  return {ad::Tensor({indices.size(), ss[0], ss[1], ss[2]}, std::move(values)), std::move(ys), classes};
}

Batch as_batch(const Dataset& ds) { return {ds.features, ds.labels}; }

Dataset synth_blobs(int k, std::size_t d, std::size_t n, double noise, std::uint64_t seed) {
  if (k < 2 || d < 1 || n < static_cast<std::size_t>(k) || noise < 0.0) {
    throw ConfigError("synth_blobs needs k >= 2, d >= 1, n >= k and noise >= 0");
  }
  auto rng = make_rng(seed, 0, 0xb10b5);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(k));
  std::shuffle(labels.begin(), labels.end(), rng);

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> x(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    for (std::size_t j = 0; j < d; ++j) {
      const double mean = (j == c % d) ? 1.0 + static_cast<double>(c / d) : 0.0;
      x[i * d + j] = mean + noise * gauss(rng);
    }
  }
  return {ad::Tensor({n, 1, 1, d}, std::move(x)), std::move(labels), k};
}

Dataset synth_shells(int k, std::size_t d, std::size_t n, double noise, std::uint64_t seed) {
  if (k < 2 || d < 2 || n < static_cast<std::size_t>(k) || noise < 0.0) {
    throw ConfigError("synth_shells needs k >= 2, d >= 2, n >= k and noise >= 0");
  }
  auto rng = make_rng(seed, 0, 0x5e115);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(k));
  std::shuffle(labels.begin(), labels.end(), rng);

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> x(n * d);
  std::vector<double> dir(d);
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (double& v : dir) {
      v = gauss(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    const double radius = 1.0 + static_cast<double>(labels[i]);
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] = radius * dir[j] / norm + noise * gauss(rng);
  }
  return {ad::Tensor({n, 1, 1, d}, std::move(x)), std::move(labels), k};
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  if (read_be32(img, 0, images) != kImageMagic) {
    throw IoError("bad magic in image file '" + images.string() + "'");
  }
  if (read_be32(lab, 0, labels) != kLabelMagic) {
    throw IoError("bad magic in label file '" + labels.string() + "'");
  }
  const std::size_t count = read_be32(img, 4, images);
  const std::size_t rows = read_be32(img, 8, images);
  const std::size_t cols = read_be32(img, 12, images);
  const std::size_t label_count = read_be32(lab, 4, labels);
  if (count != label_count) {
    throw IoError("'" + images.string() + "' has " + std::to_string(count) + " images but '" +
                  labels.string() + "' has " + std::to_string(label_count) + " labels");
  }
  if (count == 0 || rows == 0 || cols == 0) throw IoError("'" + images.string() + "' is empty");
  if (img.size() != 16 + count * rows * cols) {
    throw IoError("'" + images.string() + "' is truncated or has trailing bytes");
  }
  if (lab.size() != 8 + count) {
    throw IoError("'" + labels.string() + "' is truncated or has trailing bytes");
  }
  std::vector<double> pixels(count * rows * cols);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = img[16 + i] / 255.0;
  std::vector<int> ys(count);
  int max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    ys[i] = lab[8 + i];
    max_label = std::max(max_label, ys[i]);
  }
  Dataset ds{ad::Tensor({count, rows, cols, 1}, std::move(pixels)), std::move(ys),
             std::max(2, max_label + 1)};
  ds.validate();
  return ds;
}

std::vector<std::uint8_t> encode_idx_images(const std::vector<std::uint8_t>& pixels,
                                            std::uint32_t count, std::uint32_t rows,
                                            std::uint32_t cols) {
  if (pixels.size() != std::size_t{count} * rows * cols) throw ShapeError("pixel count mismatch");
  std::vector<std::uint8_t> out;
  put_be32(out, kImageMagic);
  put_be32(out, count);
  put_be32(out, rows);
  put_be32(out, cols);
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> out;
  put_be32(out, kLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

Split split(const Dataset& ds, const SplitSpec& spec) {
  const double tf = spec.train_fraction;
  const double vf = spec.val_fraction;
  if (!(tf > 0.0 && tf <= 1.0) || vf < 0.0 || vf > 1.0 || tf + vf > 1.0 + 1e-12) {
    throw ConfigError("split fractions must lie in (0, 1] and sum to at most 1");
  }
  const std::size_t n = ds.size();
  auto n_train = static_cast<std::size_t>(std::llround(tf * static_cast<double>(n)));
  auto n_val = static_cast<std::size_t>(std::llround(vf * static_cast<double>(n)));
  if (n_train + n_val > n) n_val = n - n_train;
  if (n_train == 0) throw ConfigError("split leaves the training part empty");
  if (vf > 0.0 && n_val == 0) throw ConfigError("split leaves the validation part empty");

  auto rng = make_rng(spec.seed, 0, 0x5917);
  const auto perm = permutation(n, rng);
  Split out;
  out.train_indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val_indices.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                         perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.train = ds.subset(out.train_indices);
  if (n_val > 0) out.val = ds.subset(out.val_indices);
  return out;
}

std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                           std::uint64_t epoch) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (batch_size > ds.size()) throw ConfigError("batch size exceeds dataset size");
  auto rng = make_rng(seed, epoch, 0xba7c4);
  const auto perm = permutation(ds.size(), rng);
  std::vector<Batch> out;
  for (std::size_t start = 0; start < perm.size(); start += batch_size) {
    const std::size_t end = std::min(perm.size(), start + batch_size);
    Dataset part = ds.subset({perm.begin() + static_cast<std::ptrdiff_t>(start),
                              perm.begin() + static_cast<std::ptrdiff_t>(end)});
    out.push_back({std::move(part.features), std::move(part.labels)});
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& bin_path) {
  ds.validate();
  ParamLayout layout;
  layout.add("features", ds.features.shape(), "data");
  layout.add("labels", {ds.size()}, "data");
  layout.add("classes", {1}, "data");
  std::vector<double> values(ds.features.values().begin(), ds.features.values().end());
  for (int y : ds.labels) values.push_back(y);
  values.push_back(ds.classes);
  write_checkpoint(bin_path, layout.entries(), values);
}

Dataset load_dataset(const std::filesystem::path& bin_path) {
  const Checkpoint ck = read_checkpoint(bin_path);
  auto find = [&](const std::string& name) -> const ParamEntry& {
    for (const auto& e : ck.entries)
      if (e.name == name) return e;
    throw IoError("dataset cache '" + bin_path.string() + "' lacks '" + name + "'");
  };
  const ParamEntry& f = find("features");
  const ParamEntry& l = find("labels");
  const ParamEntry& c = find("classes");
  const auto at = [&](std::size_t i) { return ck.values[i]; };
  std::vector<double> feats(ck.values.begin() + static_cast<std::ptrdiff_t>(f.offset),
                            ck.values.begin() + static_cast<std::ptrdiff_t>(f.offset + ad::numel(f.shape)));
  std::vector<int> ys;
  for (std::size_t i = 0; i < ad::numel(l.shape); ++i) ys.push_back(static_cast<int>(at(l.offset + i)));
  Dataset ds{ad::Tensor(f.shape, std::move(feats)), std::move(ys), static_cast<int>(at(c.offset))};
  ds.validate();
  return ds;
}

}  // namespace tsenas
