#pragma once

#include <array>
#include <string>
#include <vector>

#include "tlab/tensor.hpp"

namespace tlab {

// Images live in [0, 1]; the recorded per-channel statistics define the
// standardization applied at batch time.
struct DatasetShard {
  Tensor images;  // [N, 3, S, S]
  std::vector<uint32_t> labels;
  std::vector<std::string> class_names;
  std::array<double, 3> channel_mean{};
  std::array<double, 3> channel_std{};

  int64_t size() const { return images.defined() ? images.shape()[0] : 0; }
  int64_t image_size() const { return images.shape()[2]; }
  int64_t num_classes() const {
    return static_cast<int64_t>(class_names.size());
  }
  void validate() const;
};

// Procedurally rendered shape/texture classes. Each class has a distinct
// geometry; position, scale, palette, a per-channel color cast and a
// directional lighting ramp vary per image, so per-image statistics are
// nuisance while shape carries the label. Pixels are quantized to f32 so a
// disk round trip is lossless.
DatasetShard synth_dataset(int classes, int per_class, int size, Rng& rng);

void save_shard(const std::string& dir, const DatasetShard& shard);

// Loads either a TLAB shard directory (images.tlab + labels.u32 +
// manifest.txt) or a directory of PPM files with a labels.txt of
// "<filename> <label>" lines, ordered by filename.
DatasetShard ingest(const std::string& dir);

// Standardized image batch [B,3,S,S] using the shard statistics.
Tensor normalized_batch(const DatasetShard& shard,
                        const std::vector<int64_t>& indices);
std::vector<int64_t> batch_labels(const DatasetShard& shard,
                                  const std::vector<int64_t>& indices);

}  // namespace tlab
