#include "splab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>

#include "splab/error.hpp"

namespace splab {

Batch Dataset::train_batch(std::span<const std::size_t> rows) const {
  Batch b{train_x.gather_rows(rows), {}};
  b.labels.reserve(rows.size());
  for (auto r : rows) b.labels.push_back(train_y[r]);
  return b;
}

Batch Dataset::train_head(std::size_t limit) const {
  const std::size_t n = std::min(limit, train_size());
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return train_batch(rows);
}

Batch Dataset::test_all() const { return Batch{test_x, test_y}; }

Dataset split_and_normalize(std::string name, const Tensor& x, const std::vector<std::size_t>& y, std::size_t classes,
                            double test_fraction, std::uint64_t seed) {
  const std::size_t n = y.size();
  if (x.rank() < 2 || x.dim(0) != n) throw ArgumentError("examples and labels disagree in count");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ArgumentError("test fraction must lie in (0,1)");
  for (auto label : y)
    if (label >= classes) throw ArgumentError("label " + std::to_string(label) + " outside [0, K)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n))));
  if (n_test >= n) throw ArgumentError("dataset too small to split");
  std::vector<std::size_t> train_rows(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> test_rows(order.end() - static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(test_rows.begin(), test_rows.end());

  Dataset d;
  d.name = std::move(name);
  d.classes = classes;
  d.input_shape = Shape(x.shape().begin() + 1, x.shape().end());
  d.train_x = x.gather_rows(train_rows);
  d.test_x = x.gather_rows(test_rows);
  for (auto r : train_rows) d.train_y.push_back(y[r]);
  for (auto r : test_rows) d.test_y.push_back(y[r]);

  const std::size_t channels = d.input_shape[0];
  const std::size_t inner = shape_numel(d.input_shape) / channels;
  const std::size_t n_train = train_rows.size();
  d.norm_mean.assign(channels, 0.0);
  d.norm_std.assign(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n_train; ++i)
      for (std::size_t j = 0; j < inner; ++j) acc += d.train_x[(i * channels + c) * inner + j];
    const double count = static_cast<double>(n_train * inner);
    const double mean = acc / count;
    double sq = 0.0;
    for (std::size_t i = 0; i < n_train; ++i)
      for (std::size_t j = 0; j < inner; ++j) {
        const double v = d.train_x[(i * channels + c) * inner + j] - mean;
        sq += v * v;
      }
    const double sd = std::sqrt(sq / count);
    d.norm_mean[c] = mean;
    d.norm_std[c] = sd > 0.0 ? sd : 1.0;
  }
  for (Tensor* t : {&d.train_x, &d.test_x}) {
    const std::size_t rows = t->dim(0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t j = 0; j < inner; ++j) {
          double& v = (*t)[(i * channels + c) * inner + j];
          v = (v - d.norm_mean[c]) / d.norm_std[c];
        }
  }
  return d;
}

namespace {

void check_synthetic(const SyntheticOptions& o) {
  if (o.classes < 2) throw ArgumentError("synthetic data needs K >= 2 classes");
  if (o.n < 10 * o.classes) throw ArgumentError("synthetic data needs n >= 10 K");
  if (o.noise < 0.0) throw ArgumentError("noise must be non-negative");
}

Dataset make_spirals(const SyntheticOptions& o) {
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t per_class = o.n / o.classes;
  const std::size_t n = per_class * o.classes;
  Tensor x({n, 2});
  std::vector<std::size_t> y(n);
  for (std::size_t c = 0; c < o.classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t row = c * per_class + i;
      const double t = static_cast<double>(i + 1) / static_cast<double>(per_class);
      const double r = 0.1 + 0.9 * t;
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(o.classes) +
                           3.0 * std::numbers::pi * t;
      const double ex = noise(rng), ey = noise(rng);
      x[row * 2] = r * std::cos(angle) + o.noise * ex;
      x[row * 2 + 1] = r * std::sin(angle) + o.noise * ey;
      y[row] = c;
    }
  return split_and_normalize("spirals", x, y, o.classes, o.test_fraction, o.seed);
}

}  // namespace

TeacherDataset make_teacher(const SyntheticOptions& o) {
  check_synthetic(o);
  const Shape in_shape = o.input_shape.empty() ? Shape{16} : o.input_shape;
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Shape full = in_shape;
  full.insert(full.begin(), o.n);
  Tensor x(full);
  for (double& v : x.values()) v = gauss(rng);
  // Normalize first with placeholder labels so the teacher sees exactly the stored inputs.
  std::vector<std::size_t> placeholder(o.n, 0);
  Dataset d = split_and_normalize("teacher", x, placeholder, o.classes, o.test_fraction, o.seed);

  ModelSpec spec = mlp_preset(shape_numel(in_shape), {o.teacher_hidden}, o.classes);
  spec.input_shape = in_shape;
  Model teacher = build_model(spec, o.seed + 1);
  // Shift the output bias so every class is the argmax for a comparable share of inputs.
  const ForwardOptions plain{};
  const Tensor logits = teacher.predict(d.train_x, plain);
  ParamBlock& out_bias = teacher.blocks().back();
  const std::size_t rows = logits.dim(0);
  for (std::size_t k = 0; k < o.classes; ++k) {
    std::vector<double> col(rows);
    for (std::size_t r = 0; r < rows; ++r) col[r] = logits[r * o.classes + k];
    std::nth_element(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(rows / 2), col.end());
    out_bias.value[k] = -col[rows / 2];
  }
  auto label = [&](const Tensor& inputs, std::vector<std::size_t>& labels) {
    const Tensor z = teacher.predict(inputs, plain);
    labels.resize(inputs.dim(0));
    for (std::size_t r = 0; r < labels.size(); ++r) {
      const double* zr = z.data().data() + r * o.classes;
      labels[r] = static_cast<std::size_t>(std::max_element(zr, zr + o.classes) - zr);
    }
  };
  label(d.train_x, d.train_y);
  label(d.test_x, d.test_y);
  return TeacherDataset{std::move(d), std::move(teacher)};
}

Dataset make_synthetic(const SyntheticOptions& opts) {
  check_synthetic(opts);
  if (opts.name == "spirals") return make_spirals(opts);
  if (opts.name == "teacher") return make_teacher(opts).data;
  throw ArgumentError("unknown synthetic dataset '" + opts.name + "'");
}

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  if (b.size() < off + 4) throw FormatError("truncated IDX header", b.size());
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

}  // namespace

Tensor decode_idx_images(const std::vector<std::uint8_t>& bytes, std::size_t limit) {
  const auto magic = be32(bytes, 0);
  if (magic != 0x00000803) throw FormatError("bad IDX image magic", 0);
  const std::size_t count = be32(bytes, 4), rows = be32(bytes, 8), cols = be32(bytes, 12);
  if (rows == 0 || cols == 0) throw FormatError("IDX image with zero extent", 8);
  const std::size_t n = std::min(limit, count);
  if (n == 0) throw ArgumentError("no IDX images requested");
  const std::size_t need = 16 + n * rows * cols;
  if (bytes.size() < need) throw FormatError("truncated IDX image payload", bytes.size());
  Tensor x({n, 1, rows, cols});
  for (std::size_t i = 0; i < n * rows * cols; ++i) x[i] = bytes[16 + i] / 255.0;
  return x;
}

std::vector<std::size_t> decode_idx_labels(const std::vector<std::uint8_t>& bytes, std::size_t limit) {
  const auto magic = be32(bytes, 0);
  if (magic != 0x00000801) throw FormatError("bad IDX label magic", 0);
  const std::size_t count = be32(bytes, 4);
  const std::size_t n = std::min(limit, count);
  if (bytes.size() < 8 + n) throw FormatError("truncated IDX label payload", bytes.size());
  return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(n)};
}

Tensor load_idx_images(const std::filesystem::path& path, std::size_t limit) {
  return decode_idx_images(read_bytes(path), limit);
}

std::vector<std::size_t> load_idx_labels(const std::filesystem::path& path, std::size_t limit) {
  return decode_idx_labels(read_bytes(path), limit);
}

}  // namespace splab
