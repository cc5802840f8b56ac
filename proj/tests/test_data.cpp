#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "tsenas/checkpoint.hpp"
#include "tsenas/data.hpp"
#include "tsenas/error.hpp"

using namespace tsenas;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "tsenas_test_data";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Multinomial logistic regression trained by full-batch gradient descent.
double linear_model_accuracy(const Dataset& ds, int iters) {
  const std::size_t n = ds.size(), d = ds.features.dim(3);
  const auto k = static_cast<std::size_t>(ds.classes);
  std::vector<double> w((d + 1) * k, 0.0);
  std::vector<double> p(k);
  auto scores = [&](std::size_t r) {
    for (std::size_t c = 0; c < k; ++c) {
      double s = w[d * k + c];
      for (std::size_t i = 0; i < d; ++i) s += ds.features[r * d + i] * w[i * k + c];
      p[c] = s;
    }
  };
  for (int it = 0; it < iters; ++it) {
    std::vector<double> g(w.size(), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      scores(r);
      const double m = *std::max_element(p.begin(), p.end());
      double z = 0.0;
      for (double& v : p) z += v = std::exp(v - m);
      for (std::size_t c = 0; c < k; ++c) {
        const double delta = p[c] / z - (static_cast<int>(c) == ds.labels[r] ? 1.0 : 0.0);
        for (std::size_t i = 0; i < d; ++i) g[i * k + c] += delta * ds.features[r * d + i];
        g[d * k + c] += delta;
      }
    }
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= 0.5 * g[i] / static_cast<double>(n);
  }
  std::size_t hits = 0;
  for (std::size_t r = 0; r < n; ++r) {
    scores(r);
    const auto best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    hits += best == ds.labels[r] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace

TEST_CASE("blobs are deterministic and balanced") {
  const Dataset a = synth_blobs(3, 4, 100, 0.3, 7), b = synth_blobs(3, 4, 100, 0.3, 7);
  CHECK(a.features.storage() == b.features.storage());
  CHECK(a.labels == b.labels);
  CHECK(synth_blobs(3, 4, 100, 0.3, 8).features.storage() != a.features.storage());
  std::vector<int> counts(3, 0);
  for (int y : a.labels) ++counts[static_cast<std::size_t>(y)];
  CHECK(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()) <= 1);
  CHECK(a.features.shape() == ad::Shape{100, 1, 1, 4});
  CHECK(a.sample_shape() == ad::Shape{1, 1, 4});

  CHECK_THROWS_AS(synth_blobs(1, 4, 100, 0.3, 0), ConfigError);
  CHECK_THROWS_AS(synth_blobs(3, 0, 100, 0.3, 0), ConfigError);
  CHECK_THROWS_AS(synth_blobs(3, 4, 2, 0.3, 0), ConfigError);
}

TEST_CASE("noise-free blobs are linearly separable") {
  const Dataset ds = synth_blobs(6, 4, 120, 0.0, 3);
  CHECK(linear_model_accuracy(ds, 3000) == 1.0);
}

TEST_CASE("noise-free shells sit on their radius") {
  const Dataset ds = synth_shells(3, 5, 90, 0.0, 2);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    double norm = 0.0;
    for (std::size_t i = 0; i < 5; ++i) norm += ds.features[r * 5 + i] * ds.features[r * 5 + i];
    CHECK(std::abs(std::sqrt(norm) - (1.0 + ds.labels[r])) <= 1e-12);
  }
  CHECK(synth_shells(3, 5, 90, 0.2, 2).features.storage() == synth_shells(3, 5, 90, 0.2, 2).features.storage());
  CHECK_THROWS_AS(synth_shells(3, 1, 90, 0.2, 2), ConfigError);
}

TEST_CASE("idx fixture decodes exactly") {
  // Four 2x3 images, hand-encoded.
  const std::vector<std::uint8_t> images{0x00, 0x00, 0x08, 0x03, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 3,
                                         0,   255, 51,  102, 153, 204,  // image 0
                                         1,   2,   3,   4,   5,   6,    // image 1
                                         255, 255, 255, 0,   0,   0,    // image 2
                                         10,  20,  30,  40,  50,  60};  // image 3
  const std::vector<std::uint8_t> labels{0x00, 0x00, 0x08, 0x01, 0, 0, 0, 4, 2, 0, 1, 2};
  const fs::path ip = scratch("fixture-images.idx"), lp = scratch("fixture-labels.idx");
  write_bytes(ip, images);
  write_bytes(lp, labels);
  const Dataset ds = load_idx(ip, lp);
  CHECK(ds.features.shape() == ad::Shape{4, 2, 3, 1});
  CHECK(ds.labels == std::vector<int>{2, 0, 1, 2});
  CHECK(ds.classes == 3);
  CHECK(ds.features[1] == 1.0);
  CHECK(ds.features[2] == 0.2);
  CHECK(ds.features[6] == 1.0 / 255.0);
  CHECK(ds.features[23] == 60.0 / 255.0);

  CHECK(encode_idx_images({0, 255, 51, 102, 153, 204, 1, 2, 3, 4, 5, 6, 255, 255, 255, 0, 0, 0, 10, 20, 30, 40,
                           50, 60},
                          4, 2, 3) == images);
  CHECK(encode_idx_labels({2, 0, 1, 2}) == labels);
}

TEST_CASE("idx errors name the offending file") {
  const auto images = encode_idx_images(std::vector<std::uint8_t>(8, 7), 2, 2, 2);
  const fs::path ip = scratch("err-images.idx"), lp = scratch("err-labels.idx");
  write_bytes(ip, images);

  write_bytes(lp, encode_idx_labels({1, 0, 1}));
  CHECK_THROWS_AS(load_idx(ip, lp), IoError);

  std::vector<std::uint8_t> bad_magic = encode_idx_labels({1, 0});
  bad_magic[3] = 0x02;
  write_bytes(lp, bad_magic);
  try {
    load_idx(ip, lp);
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("err-labels.idx") != std::string::npos);
  }

  write_bytes(lp, encode_idx_labels({1, 0}));
  write_bytes(ip, std::vector<std::uint8_t>(images.begin(), images.end() - 1));
  try {
    load_idx(ip, lp);
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("err-images.idx") != std::string::npos);
  }

  CHECK_THROWS_AS(load_idx(scratch("missing.idx"), lp), IoError);
}

TEST_CASE("splits") {
  const Dataset ds = synth_blobs(2, 3, 100, 0.5, 1);
  const Split s = split(ds, {0.5, 0.5, 4});
  CHECK(s.train.size() == 50);
  REQUIRE(s.val);
  CHECK(s.val->size() == 50);
  std::set<std::size_t> all(s.train_indices.begin(), s.train_indices.end());
  for (std::size_t i : s.val_indices) CHECK(all.insert(i).second);
  CHECK(all.size() == 100);

  const Split again = split(ds, {0.5, 0.5, 4});
  CHECK(again.train_indices == s.train_indices);
  CHECK(again.val_indices == s.val_indices);
  CHECK(split(ds, {0.5, 0.5, 5}).train_indices != s.train_indices);

  const Split tse = split(ds, {1.0, 0.0, 4});
  CHECK_FALSE(tse.val.has_value());
  CHECK(tse.train.size() == 100);

  for (std::size_t k = 0; k < s.train_indices.size(); ++k)
    CHECK(s.train.labels[k] == ds.labels[s.train_indices[k]]);

  CHECK_THROWS_AS(split(ds, {0.0, 0.5, 0}), ConfigError);
  CHECK_THROWS_AS(split(ds, {0.7, 0.5, 0}), ConfigError);
  CHECK_THROWS_AS(split(ds, {1.2, 0.0, 0}), ConfigError);
}

TEST_CASE("batches") {
  const Dataset ten = synth_blobs(2, 2, 10, 0.5, 0);
  const auto bs = batches(ten, 3, 1, 0);
  REQUIRE(bs.size() == 4);
  CHECK(bs[0].size() == 3);
  CHECK(bs[1].size() == 3);
  CHECK(bs[2].size() == 3);
  CHECK(bs[3].size() == 1);

  CHECK(batches(ten, 3, 1, 0) == bs);
  CHECK_FALSE(batches(ten, 3, 1, 1) == bs);

  const auto whole = batches(ten, 10, 1, 0);
  REQUIRE(whole.size() == 1);
  std::multiset<double> a(ten.features.values().begin(), ten.features.values().end());
  std::multiset<double> b(whole[0].inputs.values().begin(), whole[0].inputs.values().end());
  CHECK(a == b);

  CHECK_THROWS_AS(batches(ten, 0, 1, 0), ConfigError);
  CHECK_THROWS_AS(batches(ten, 11, 1, 0), ConfigError);
}

TEST_CASE("dataset cache round-trips") {
  const Dataset ds = synth_shells(3, 4, 30, 0.1, 9);
  const fs::path p = scratch("cache.bin");
  save_dataset(ds, p);
  CHECK(fs::exists(manifest_path(p)));
  const Dataset back = load_dataset(p);
  CHECK(back.features.storage() == ds.features.storage());
  CHECK(back.features.shape() == ds.features.shape());
  CHECK(back.labels == ds.labels);
  CHECK(back.classes == ds.classes);
}

TEST_CASE("checkpoint format") {
  ParamLayout layout;
  layout.add("a", {2, 2});
  layout.add("b", {3}, "arch");
  const std::vector<double> values{1.5, -2.0, 0.25, 1e-300, 7.0, -0.0, 3.0};
  const fs::path p = scratch("ck.bin");
  write_checkpoint(p, layout.entries(), values);
  CHECK(fs::file_size(p) == values.size() * 8);
  std::ifstream raw(p, std::ios::binary);
  unsigned char first[8];
  raw.read(reinterpret_cast<char*>(first), 8);
  CHECK(first[7] == 0x3f);  // 1.5 little-endian: 00 .. 00 f8 3f
  CHECK(first[6] == 0xf8);
  const Checkpoint ck = read_checkpoint(p);
  CHECK(ck.values == values);
  REQUIRE(ck.entries.size() == 2);
  CHECK(ck.entries[1].name == "b");
  CHECK(ck.entries[1].offset == 4);
  CHECK(ck.entries[1].group == "arch");
  CHECK(checksum(values) == checksum(ck.values));
  CHECK_THROWS_AS(read_checkpoint(scratch("nothing.bin")), IoError);
}
