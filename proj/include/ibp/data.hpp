#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ibp/tensor.hpp"

namespace ibp {

// Immutable image classification split; pixels in [0,1].
struct Dataset {
  Tensor<float> images;  // [count, C, H, W]
  std::vector<int> labels;
  int num_classes = 0;
  std::string split;                       // "train" or "test"
  std::vector<float> norm_mean, norm_std;  // per-channel stats, optional

  int count() const { return images.dim(0); }
  std::array<int, 3> image_shape() const {
    return {images.dim(1), images.dim(2), images.dim(3)};
  }
  Tensor<float> image(int index) const;
  Dataset take(int n) const;  // first n examples
};

// Copies of the rows named by indices, in order.
Tensor<float> gather_images(const Dataset& data, const std::vector<int>& indices);
std::vector<int> gather_labels(const Dataset& data, const std::vector<int>& indices);

// Big-endian IDX files (magic 2051 for images, 2049 for labels), pixels
// scaled by 1/255. Expects the standard file names under dir.
std::pair<Dataset, Dataset> load_mnist(const std::string& dir);
Dataset load_idx_pair(const std::string& image_path, const std::string& label_path,
                      const std::string& split);

// CIFAR-10 binary batches: 3073-byte records, label byte then 3072 pixels in
// channel-major R,G,B order. data_batch_1..5.bin for train, test_batch.bin.
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir);
Dataset load_cifar_batches(const std::vector<std::string>& paths, const std::string& split);

// Per-channel mean/std over all training pixels; std floored at 1e-6.
std::pair<std::vector<float>, std::vector<float>> normalization_stats(const Dataset& train);

// Per-image horizontal flip (p = 0.5) and integer translation in
// [-max_translate, max_translate]^2 via zero-pad-then-crop. Deterministic for
// a fixed seed.
Tensor<float> augment(const Tensor<float>& images, std::uint64_t seed, int max_translate = 4,
                      bool flip = true);

// Bundled procedural datasets; no files needed.
//   "synthetic"        two classes, 1x8x8 bar patterns
//   "synthetic-digits" ten classes, 1x28x28 glyphs, MNIST-shaped
Dataset make_synthetic(const std::string& split, int count, std::uint64_t seed);
Dataset make_synthetic_digits(const std::string& split, int count, std::uint64_t seed);

// Versioned little-endian cache; round-trips a Dataset bit-exactly.
void save_dataset_cache(const std::string& path, const Dataset& data);
Dataset load_dataset_cache(const std::string& path);

// FNV-1a over image bytes and labels; recorded in run manifests.
std::uint64_t dataset_content_hash(const Dataset& data);

}  // namespace ibp
