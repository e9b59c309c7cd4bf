#include "capslab/dataset.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>

namespace capslab {
namespace {

// Reads a whole file, gunzipping when the gzip magic is present. gzread
// handles plain files too, but we keep the branch explicit so truncation
// errors can name the right layer.
std::vector<unsigned char> read_maybe_gzip(const std::string& path) {
  if (!std::filesystem::exists(path)) throw IoError("file not found: " + path);
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path);
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  int got = 0;
  while ((got = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + got);
  const bool bad = got < 0;
  gzclose(f);
  if (bad) throw IoError("decompression failed for " + path);
  return out;
}

std::uint32_t be32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

std::string offset_str(std::size_t off) { return " (byte offset " + std::to_string(off) + ")"; }

}  // namespace

Tensor LabeledDataset::batch(const std::vector<std::size_t>& indices) const {
  Tensor out = Tensor::uninit({static_cast<std::int64_t>(indices.size()), 1, height, width});
  const std::int64_t hw = height * width;
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::memcpy(out.data() + static_cast<std::int64_t>(i) * hw, images[indices[i]].data(),
                sizeof(double) * static_cast<std::size_t>(hw));
  return out;
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::string tag) {
  const auto img = read_maybe_gzip(images_path);
  const auto lab = read_maybe_gzip(labels_path);

  if (img.size() < 16)
    throw IoError("truncated IDX image header in " + images_path + offset_str(img.size()));
  if (be32(img.data()) != 0x00000803u)
    throw IoError("bad IDX image magic in " + images_path + offset_str(0));
  const std::size_t n_img = be32(img.data() + 4);
  const std::size_t rows = be32(img.data() + 8);
  const std::size_t cols = be32(img.data() + 12);
  const std::size_t expect_img = 16 + n_img * rows * cols;
  if (img.size() != expect_img)
    throw IoError("truncated IDX image data in " + images_path + offset_str(img.size()));

  if (lab.size() < 8)
    throw IoError("truncated IDX label header in " + labels_path + offset_str(lab.size()));
  if (be32(lab.data()) != 0x00000801u)
    throw IoError("bad IDX label magic in " + labels_path + offset_str(0));
  const std::size_t n_lab = be32(lab.data() + 4);
  if (lab.size() != 8 + n_lab)
    throw IoError("truncated IDX label data in " + labels_path + offset_str(lab.size()));
  if (n_img != n_lab)
    throw IoError("image/label count mismatch: " + std::to_string(n_img) + " images vs " +
                  std::to_string(n_lab) + " labels");

  LabeledDataset ds;
  ds.height = static_cast<std::int64_t>(rows);
  ds.width = static_cast<std::int64_t>(cols);
  ds.tag = std::move(tag);
  ds.images.reserve(n_img);
  ds.labels.reserve(n_img);
  const unsigned char* px = img.data() + 16;
  for (std::size_t i = 0; i < n_img; ++i) {
    Tensor t({ds.height, ds.width});
    const unsigned char* src = px + i * rows * cols;
    for (std::size_t j = 0; j < rows * cols; ++j) t[static_cast<std::int64_t>(j)] = src[j] / 255.0;
    ds.images.push_back(std::move(t));
    ds.labels.push_back(static_cast<int>(lab[8 + i]));
  }
  return ds;
}

std::vector<AttackSample> sample_attack_set(const LabeledDataset& test, std::size_t n,
                                            std::uint64_t seed) {
  if (n > test.size())
    throw Error("sample_attack_set: requested " + std::to_string(n) + " of " +
                std::to_string(test.size()));
  Rng rng(derive_seed(seed, "attack-set"));
  auto idx = rng.sample_without_replacement(test.size(), n);
  std::vector<AttackSample> out;
  out.reserve(n);
  for (const std::size_t i : idx) {
    const int truth = test.labels[i];
    int target = static_cast<int>(rng.below(9));
    if (target >= truth) ++target;  // uniform over the 9 labels != truth
    out.push_back({i, target});
  }
  return out;
}

std::vector<LabeledDataset> ten_fold_split(const LabeledDataset& test) {
  if (test.size() < 10) throw Error("ten_fold_split: need at least 10 samples");
  std::vector<LabeledDataset> folds(10);
  const std::size_t n = test.size();
  const std::size_t base = n / 10, extra = n % 10;
  std::size_t at = 0;
  for (std::size_t f = 0; f < 10; ++f) {
    const std::size_t len = base + (f < extra ? 1 : 0);
    LabeledDataset& fold = folds[f];
    fold.height = test.height;
    fold.width = test.width;
    fold.tag = test.tag + "/fold" + std::to_string(f);
    fold.images.assign(test.images.begin() + static_cast<std::ptrdiff_t>(at),
                       test.images.begin() + static_cast<std::ptrdiff_t>(at + len));
    fold.labels.assign(test.labels.begin() + static_cast<std::ptrdiff_t>(at),
                       test.labels.begin() + static_cast<std::ptrdiff_t>(at + len));
    at += len;
  }
  return folds;
}

std::string resolve_data_dir(const std::string& override_path) {
  if (!override_path.empty()) return override_path;
  if (const char* env = std::getenv("CAPSLAB_DATA_DIR")) return env;
  return "data";
}

LabeledDataset load_named_split(const std::string& data_dir, const std::string& name, bool train) {
  const std::string stem = train ? "train" : "t10k";
  const std::string base = data_dir + "/" + name + "/" + stem;
  auto pick = [](const std::string& p) {
    if (std::filesystem::exists(p)) return p;
    if (std::filesystem::exists(p + ".gz")) return p + ".gz";
    return p;  // let load_idx produce the not-found error for the plain name
  };
  return load_idx(pick(base + "-images-idx3-ubyte"), pick(base + "-labels-idx1-ubyte"),
                  train ? "train" : "test");
}

}  // namespace capslab
