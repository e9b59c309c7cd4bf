#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capslab/rng.hpp"
#include "capslab/tensor.hpp"

namespace capslab {

// Grayscale labeled images, pixels in [0,1], labels 0-9. Immutable after load.
struct LabeledDataset {
  std::vector<Tensor> images;  // each [H,W]
  std::vector<int> labels;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::string tag;  // e.g. "train" / "test"

  std::size_t size() const { return images.size(); }

  // contiguous batch tensor [count, 1, H, W] for the given indices
  Tensor batch(const std::vector<std::size_t>& indices) const;
};

// Reads an IDX image/label file pair. Plain or gzip-compressed files are
// accepted transparently. Pixel bytes are mapped to [0,1] by division by 255.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::string tag = "");

struct AttackSample {
  std::size_t index;  // position in the source dataset
  int target;         // random label != true label
};

// n uniform draws without replacement plus random targets different from the
// true labels; reproducible from the seed.
std::vector<AttackSample> sample_attack_set(const LabeledDataset& test, std::size_t n,
                                            std::uint64_t seed);

// ten disjoint contiguous parts covering the set, sizes differing by <= 1
std::vector<LabeledDataset> ten_fold_split(const LabeledDataset& test);

// resolves a dataset directory: explicit path if nonempty, else
// CAPSLAB_DATA_DIR, else ./data
std::string resolve_data_dir(const std::string& override_path);

// loads one of the named dataset conventions ("mnist", "fashion") from a
// data directory laid out as <dir>/<name>/{train,t10k}-{images,labels}-*
LabeledDataset load_named_split(const std::string& data_dir, const std::string& name, bool train);

}  // namespace capslab
