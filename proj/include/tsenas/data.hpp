#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tsenas/tensor.hpp"

namespace tsenas {

// Labelled examples. Features are stored as (n, H, W, C); vector data uses
// H = W = 1 and C = d.
struct Dataset {
  ad::Tensor features;
  std::vector<int> labels;
  int classes = 0;

  std::size_t size() const { return labels.size(); }
  ad::Shape sample_shape() const;  // (H, W, C)
  void validate() const;
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

struct Batch {
  ad::Tensor inputs;  // (B, H, W, C)
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  friend bool operator==(const Batch&, const Batch&) = default;
};

Batch as_batch(const Dataset& ds);

// k Gaussian clusters; class c has mean (1 + floor(c / d)) * e_{c mod d}.
// Labels cycle 0..k-1 before a seeded shuffle, so counts differ by at most 1.
Dataset synth_blobs(int k, std::size_t d, std::size_t n, double noise, std::uint64_t seed);

// Concentric shells: class c lies near radius 1 + c in a uniform direction,
// plus isotropic Gaussian noise. Not linearly separable.
Dataset synth_shells(int k, std::size_t d, std::size_t n, double noise, std::uint64_t seed);

// IDX (MNIST-family) files: big-endian magic 0x00000803 for images
// (count, rows, cols, then bytes) and 0x00000801 for labels.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
std::vector<std::uint8_t> encode_idx_images(const std::vector<std::uint8_t>& pixels,
                                            std::uint32_t count, std::uint32_t rows,
                                            std::uint32_t cols);
std::vector<std::uint8_t> encode_idx_labels(const std::vector<std::uint8_t>& labels);

struct SplitSpec {
  double train_fraction = 1.0;
  double val_fraction = 0.0;
  std::uint64_t seed = 0;
};

struct Split {
  Dataset train;
  std::optional<Dataset> val;  // absent when val_fraction is 0
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;
};

// Disjoint parts drawn from one seeded permutation.
Split split(const Dataset& ds, const SplitSpec& spec);

// Seeded shuffle per (seed, epoch); the last short batch is kept.
std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                           std::uint64_t epoch);

// Dataset cache in the checkpoint format (flat little-endian float64 plus a
// JSON manifest).
void save_dataset(const Dataset& ds, const std::filesystem::path& bin_path);
Dataset load_dataset(const std::filesystem::path& bin_path);

}  // namespace tsenas
