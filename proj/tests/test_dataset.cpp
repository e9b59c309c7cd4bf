#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "capslab/dataset.hpp"
#include "doctest.h"

using namespace capslab;

namespace {

std::string write_tmp(const std::string& name, const std::vector<unsigned char>& bytes) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  return path.string();
}

void push_be32(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back(static_cast<unsigned char>(x >> 24));
  v.push_back(static_cast<unsigned char>(x >> 16));
  v.push_back(static_cast<unsigned char>(x >> 8));
  v.push_back(static_cast<unsigned char>(x));
}

std::vector<unsigned char> tiny_images(std::uint32_t count, std::uint32_t side,
                                       unsigned char fill) {
  std::vector<unsigned char> v;
  push_be32(v, 0x00000803u);
  push_be32(v, count);
  push_be32(v, side);
  push_be32(v, side);
  v.insert(v.end(), count * side * side, fill);
  return v;
}

std::vector<unsigned char> tiny_labels(const std::vector<unsigned char>& labels) {
  std::vector<unsigned char> v;
  push_be32(v, 0x00000801u);
  push_be32(v, static_cast<std::uint32_t>(labels.size()));
  v.insert(v.end(), labels.begin(), labels.end());
  return v;
}

}  // namespace

TEST_CASE("load_idx parses headers and normalizes pixels") {
  auto img = tiny_images(2, 28, 0);
  img[16] = 255;  // first pixel of first image
  img[17] = 0;
  img[18] = 51;
  const auto ip = write_tmp("caps_img.idx", img);
  const auto lp = write_tmp("caps_lab.idx", tiny_labels({3, 7}));
  const auto ds = load_idx(ip, lp);
  CHECK(ds.size() == 2);
  CHECK(ds.height == 28);
  CHECK(ds.width == 28);
  CHECK(ds.images[0][0] == 1.0);
  CHECK(ds.images[0][1] == 0.0);
  CHECK(ds.images[0][2] == doctest::Approx(51.0 / 255.0));
  CHECK(ds.labels[0] == 3);
  CHECK(ds.labels[1] == 7);
}

TEST_CASE("load_idx structured errors") {
  const auto good_lab = write_tmp("caps_good_lab.idx", tiny_labels({1}));

  auto bad_magic = tiny_images(1, 4, 0);
  bad_magic[3] = 0x99;
  const auto bm = write_tmp("caps_bad_magic.idx", bad_magic);
  CHECK_THROWS_WITH_AS(load_idx(bm, good_lab), doctest::Contains("magic"), IoError);

  auto truncated = tiny_images(2, 4, 0);
  truncated.resize(truncated.size() - 5);
  const auto tr = write_tmp("caps_trunc.idx", truncated);
  try {
    load_idx(tr, good_lab);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }

  const auto img1 = write_tmp("caps_one_img.idx", tiny_images(2, 4, 0));
  CHECK_THROWS_WITH_AS(load_idx(img1, good_lab), doctest::Contains("mismatch"), IoError);

  CHECK_THROWS_AS(load_idx("/nonexistent/file.idx", good_lab), IoError);
}

TEST_CASE("sample_attack_set determinism and target validity") {
  LabeledDataset ds;
  ds.height = ds.width = 4;
  for (int i = 0; i < 200; ++i) {
    ds.images.push_back(Tensor({4, 4}));
    ds.labels.push_back(i % 10);
  }
  const auto a = sample_attack_set(ds, 50, 7);
  const auto b = sample_attack_set(ds, 50, 7);
  REQUIRE(a.size() == 50);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].index == b[i].index);
    CHECK(a[i].target == b[i].target);
  }
  const auto c = sample_attack_set(ds, 50, 8);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs = differs || a[i].index != c[i].index;
  CHECK(differs);

  // no replacement
  std::set<std::size_t> seen;
  for (const auto& s : a) CHECK(seen.insert(s.index).second);

  // n == size permutes the whole set
  const auto full = sample_attack_set(ds, 200, 3);
  std::set<std::size_t> all;
  for (const auto& s : full) all.insert(s.index);
  CHECK(all.size() == 200);

  CHECK_THROWS_AS(sample_attack_set(ds, 201, 1), Error);
}

TEST_CASE("attack targets never equal true labels over 10^4 draws") {
  LabeledDataset ds;
  ds.height = ds.width = 2;
  for (int i = 0; i < 10000; ++i) {
    ds.images.push_back(Tensor({2, 2}));
    ds.labels.push_back(i % 10);
  }
  const auto samples = sample_attack_set(ds, 10000, 11);
  std::vector<int> target_hist(10, 0);
  for (const auto& s : samples) {
    CHECK(s.target != ds.labels[s.index]);
    CHECK(s.target >= 0);
    CHECK(s.target <= 9);
    ++target_hist[static_cast<std::size_t>(s.target)];
  }
  for (int h : target_hist) CHECK(h > 0);  // all labels reachable as targets
}

TEST_CASE("ten_fold_split covers disjointly with near-equal sizes") {
  LabeledDataset ds;
  ds.height = ds.width = 2;
  for (int i = 0; i < 10007; ++i) {
    ds.images.push_back(Tensor({2, 2}, static_cast<double>(0)));
    ds.images.back()[0] = i;  // identify images by first pixel
    ds.labels.push_back(i % 10);
  }
  const auto folds = ten_fold_split(ds);
  REQUIRE(folds.size() == 10);
  int of_1001 = 0, of_1000 = 0;
  std::set<int> seen;
  for (const auto& f : folds) {
    if (f.size() == 1001) ++of_1001;
    if (f.size() == 1000) ++of_1000;
    for (const auto& img : f.images) seen.insert(static_cast<int>(img[0]));
  }
  CHECK(of_1001 == 7);
  CHECK(of_1000 == 3);
  CHECK(seen.size() == 10007);  // exact disjoint cover

  LabeledDataset small;
  small.height = small.width = 2;
  for (int i = 0; i < 9; ++i) {
    small.images.push_back(Tensor({2, 2}));
    small.labels.push_back(0);
  }
  CHECK_THROWS_AS(ten_fold_split(small), Error);
}

TEST_CASE("gzip-compressed IDX loads transparently when present") {
  const std::string dir = "data";
  const std::string img = dir + "/mnist/t10k-images-idx3-ubyte.gz";
  if (!std::filesystem::exists(img)) return;  // repo data not present
  const auto ds = load_named_split(dir, "mnist", false);
  CHECK(ds.size() == 10000);
  std::vector<int> hist(10, 0);
  for (int l : ds.labels) ++hist[static_cast<std::size_t>(l)];
  const std::vector<int> expect{980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009};
  CHECK(hist == expect);
  // pixels normalized into the unit interval
  for (int i = 0; i < 28 * 28; ++i) {
    CHECK(ds.images[0][i] >= 0.0);
    CHECK(ds.images[0][i] <= 1.0);
  }
}
