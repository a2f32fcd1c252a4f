#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "splab/model.hpp"
#include "splab/tensor.hpp"

namespace splab {

/// A labelled slice of examples; `x` is (N, input shape...).
struct Batch {
  Tensor x;
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

struct Dataset {
  std::string name;
  Tensor train_x;
  std::vector<std::size_t> train_y;
  Tensor test_x;
  std::vector<std::size_t> test_y;
  std::size_t classes = 0;
  Shape input_shape;
  /// Per-channel statistics of the raw training split, applied to both splits.
  std::vector<double> norm_mean;
  std::vector<double> norm_std;

  std::size_t train_size() const noexcept { return train_y.size(); }
  std::size_t test_size() const noexcept { return test_y.size(); }
  Batch train_batch(std::span<const std::size_t> rows) const;
  /// First `limit` training examples (clamped).
  Batch train_head(std::size_t limit) const;
  Batch test_all() const;
};

struct SyntheticOptions {
  std::string name = "spirals";  ///< "spirals" or "teacher"
  std::size_t n = 1000;
  std::size_t classes = 2;
  double noise = 0.0;
  std::uint64_t seed = 0;
  double test_fraction = 0.25;
  Shape input_shape;              ///< teacher only; default {16}
  std::size_t teacher_hidden = 32;
};

/// Spirals: K interleaved 2-D arms with Gaussian coordinate noise.
/// Teacher: Gaussian inputs labelled by the argmax of a frozen random network.
Dataset make_synthetic(const SyntheticOptions& opts);

struct TeacherDataset {
  Dataset data;
  Model teacher;  ///< labels == argmax(teacher(normalized input)) on both splits
};
TeacherDataset make_teacher(const SyntheticOptions& opts);

/// IDX image file (magic 0x00000803), first `limit` images scaled to [0,1], shape (N,1,H,W).
Tensor load_idx_images(const std::filesystem::path& path, std::size_t limit);
/// IDX label file (magic 0x00000801).
std::vector<std::size_t> load_idx_labels(const std::filesystem::path& path, std::size_t limit);
Tensor decode_idx_images(const std::vector<std::uint8_t>& bytes, std::size_t limit);
std::vector<std::size_t> decode_idx_labels(const std::vector<std::uint8_t>& bytes, std::size_t limit);

/// Splits examples into disjoint train/test parts and normalizes both with
/// per-channel statistics of the training part.
Dataset split_and_normalize(std::string name, const Tensor& x, const std::vector<std::size_t>& y, std::size_t classes,
                            double test_fraction, std::uint64_t seed);

}  // namespace splab
