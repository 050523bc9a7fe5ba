#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nodebench/tensor.hpp"

namespace nodebench {

/// Affine map from the raw pixel domain to what models consume:
/// model_input = (raw - mean) / std.
struct Normalization {
  double mean = 0.0;
  double std = 255.0;

  Tensor apply(const Tensor& raw) const;
  /// Bounds of the valid input range, the images of raw 0 and raw 255.
  double lower() const { return (0.0 - mean) / std; }
  double upper() const { return (255.0 - mean) / std; }
};

/// Model-boundary normalization for a dataset key (mnist or synthetic).
Normalization normalization_for(const std::string& dataset_key);

/// Images in the raw pixel domain plus labels. Normalization is applied only
/// at the model boundary.
struct Dataset {
  Tensor images;  // [N, C, H, W] (or [N, d] for vector blobs)
  std::vector<int> labels;
  std::size_t num_classes = 10;
  Normalization normalization{};

  std::size_t size() const { return labels.size(); }
  /// Throws InputError if labels, shapes or values are inconsistent.
  void validate() const;
  Tensor normalized_images() const { return normalization.apply(images); }
  /// Rows `indices` as a new dataset sharing the normalization.
  Dataset select(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> class_counts() const;
};

/// Malformed IDX input; the message names the byte offset.
class ParseError : public InputError {
 public:
  using InputError::InputError;
};

/// Parses an IDX image file (magic 0x00000803) and label file (0x00000801).
Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path);

/// Loads `<root>/<split>-images-idx3-ubyte` and the matching labels file,
/// where split is "train" or "t10k".
Dataset load_mnist_split(const std::filesystem::path& root, const std::string& split);

/// Writes an IDX pair; used for fixtures and round-trips.
void write_mnist_idx(const Dataset& data, const std::filesystem::path& images_path,
                     const std::filesystem::path& labels_path);

struct BlobOptions {
  std::size_t n_per_class = 100;
  std::size_t classes = 10;
  /// {d} renders feature vectors; {C, H, W} renders low-resolution images.
  Shape sample_shape{1, 8, 8};
  /// Class centres are random unit directions scaled by this many noise σ.
  double separation = 4.0;
  std::uint64_t seed = 0;
};

/// Seeded Gaussian blobs with unit per-coordinate noise. Image renderings map
/// a blob value v to the pixel 127.5 + 12.75 v (clipped to [0, 255]) with a
/// matching normalization, so models see v again.
Dataset synthetic_blobs(const BlobOptions& options);

/// Seeded stratified subsample of n items: classes are drawn round-robin so
/// per-class counts differ by at most one (where supply allows).
Dataset subset(const Dataset& data, std::size_t n, std::uint64_t seed);

void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace nodebench
