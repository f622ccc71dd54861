#pragma once

#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "momtl/minnorm.hpp"
#include "momtl/models.hpp"
#include "momtl/rng.hpp"
#include "momtl/types.hpp"

namespace momtl {

// ---- IDX container ----------------------------------------------------------

// Unsigned-byte IDX tensor as used by the MNIST distribution. Only the two
// magics that occur there are accepted: 0x00000801 (rank-1 label vector) and
// 0x00000803 (rank-3 image tensor).
struct IdxTensor {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  std::size_t element_count() const {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t a, std::uint32_t b) { return a * b; });
  }

  bool operator==(const IdxTensor& other) const {
    return dims == other.dims && data == other.data;
  }
};

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
  return (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
         (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
}

inline IdxTensor parse_idx(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) {
    throw std::runtime_error("idx: truncated header, expected 4 magic bytes, got " +
                             std::to_string(bytes.size()));
  }
  const std::uint32_t magic = read_be32(bytes, 0);
  int rank = 0;
  if (magic == 0x00000801u) {
    rank = 1;
  } else if (magic == 0x00000803u) {
    rank = 3;
  } else {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "0x%08x", magic);
    throw std::runtime_error(std::string("idx: unsupported magic ") + buf + " at offset 0");
  }
  const std::size_t header = 4 + 4 * static_cast<std::size_t>(rank);
  if (bytes.size() < header) {
    throw std::runtime_error("idx: truncated dimensions, expected " + std::to_string(header) +
                             " header bytes, got " + std::to_string(bytes.size()));
  }
  IdxTensor t;
  for (int i = 0; i < rank; ++i) t.dims.push_back(read_be32(bytes, 4 + 4 * i));
  const std::size_t payload = t.element_count();
  if (bytes.size() < header + payload) {
    throw std::runtime_error("idx: truncated payload at offset " + std::to_string(header) +
                             ", expected " + std::to_string(payload) + " bytes, got " +
                             std::to_string(bytes.size() - header));
  }
  if (bytes.size() > header + payload) {
    throw std::runtime_error("idx: trailing bytes after payload, expected total " +
                             std::to_string(header + payload) + ", got " +
                             std::to_string(bytes.size()));
  }
  t.data.assign(bytes.begin() + header, bytes.end());
  return t;
}

inline std::vector<std::uint8_t> serialize_idx(const IdxTensor& t) {
  require(t.dims.size() == 1 || t.dims.size() == 3, "idx: rank must be 1 or 3");
  require(t.data.size() == t.element_count(), "idx: dims/payload mismatch");
  std::vector<std::uint8_t> out;
  out.reserve(4 + 4 * t.dims.size() + t.data.size());
  const std::uint32_t magic = t.dims.size() == 1 ? 0x00000801u : 0x00000803u;
  auto push_be32 = [&out](std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
  };
  push_be32(magic);
  for (std::uint32_t d : t.dims) push_be32(d);
  out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

inline IdxTensor read_idx_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("idx: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_idx(bytes);
}

inline void write_idx_file(const std::string& path, const IdxTensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("idx: cannot open " + path);
  const auto bytes = serialize_idx(t);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("idx: write failed for " + path);
}

// ---- multi-task dataset container -------------------------------------------

struct DataSplit {
  Matrix inputs;  // N x d_in
  std::vector<TaskTargets> tasks;

  int size() const { return static_cast<int>(inputs.rows()); }

  Batch batch(const std::vector<int>& indices) const {
    Batch b;
    b.inputs.resize(indices.size(), inputs.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) b.inputs.row(i) = inputs.row(indices[i]);
    for (const TaskTargets& t : tasks) {
      TaskTargets s;
      s.kind = t.kind;
      if (t.kind == LossKind::kSoftmaxCrossEntropy) {
        for (int idx : indices) s.classes.push_back(t.classes[idx]);
      } else {
        s.values.resize(indices.size(), t.values.cols());
        for (std::size_t i = 0; i < indices.size(); ++i) s.values.row(i) = t.values.row(indices[i]);
      }
      b.targets.push_back(std::move(s));
    }
    return b;
  }

  Batch full_batch() const {
    std::vector<int> all(size());
    std::iota(all.begin(), all.end(), 0);
    return batch(all);
  }

  // View of the same inputs keeping only one task's labels.
  DataSplit select_task(int task) const {
    DataSplit s;
    s.inputs = inputs;
    s.tasks = {tasks.at(task)};
    return s;
  }
};

struct MultiTaskDataset {
  DataSplit train;
  DataSplit val;
  DataSplit test;
  std::uint64_t seed = 0;
  std::string config_echo;  // generator parameters, serialized
  double loss_floor = 0.0;  // achievable per-task loss by construction, if known

  int tasks() const { return static_cast<int>(train.tasks.size()); }
};

// ---- MultiMNIST construction -------------------------------------------------

struct MultiMnistConfig {
  int shift = 8;  // canvas is (28 + shift)^2, partner placed bottom-right
  enum class Overlap { kMax, kClipSum } overlap = Overlap::kMax;
  int train_size = 10000;
  int val_size = 0;
  int test_size = 2000;
};

namespace detail {

inline void compose_pair(const std::uint8_t* base, const std::uint8_t* partner, int side,
                         int shift, MultiMnistConfig::Overlap overlap, std::uint8_t* out) {
  const int canvas = side + shift;
  std::fill(out, out + canvas * canvas, std::uint8_t{0});
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      out[r * canvas + c] = base[r * side + c];
    }
  }
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      std::uint8_t& cell = out[(r + shift) * canvas + (c + shift)];
      const std::uint8_t p = partner[r * side + c];
      if (overlap == MultiMnistConfig::Overlap::kMax) {
        cell = std::max(cell, p);
      } else {
        cell = static_cast<std::uint8_t>(std::min<int>(255, int(cell) + int(p)));
      }
    }
  }
}

inline DataSplit compose_split(const IdxTensor& images, const IdxTensor& labels, int first,
                               int count, const MultiMnistConfig& cfg, std::mt19937_64& rng) {
  const int n_src = static_cast<int>(images.dims[0]);
  const int side = static_cast<int>(images.dims[1]);
  const int canvas = side + cfg.shift;
  const int d_in = canvas * canvas;
  std::uniform_int_distribution<int> pick(0, n_src - 2);

  DataSplit split;
  split.inputs.resize(count, d_in);
  TaskTargets left, right;
  left.kind = right.kind = LossKind::kSoftmaxCrossEntropy;
  std::vector<std::uint8_t> buf(d_in);
  for (int i = 0; i < count; ++i) {
    const int base = (first + i) % n_src;
    int partner = pick(rng);
    if (partner >= base) partner += 1;  // uniform over {0..n-1} \ {base}
    compose_pair(images.data.data() + std::size_t(base) * side * side,
                 images.data.data() + std::size_t(partner) * side * side, side, cfg.shift,
                 cfg.overlap, buf.data());
    for (int p = 0; p < d_in; ++p) split.inputs(i, p) = buf[p] / 255.0;
    left.classes.push_back(labels.data[base]);
    right.classes.push_back(labels.data[partner]);
  }
  split.tasks = {std::move(left), std::move(right)};
  return split;
}

}  // namespace detail

// Two-task composite dataset: task 0 is the digit placed top-left, task 1 the
// digit placed bottom-right. Bases are taken in source order (cycling if the
// requested size exceeds the source); partners are drawn uniformly among the
// other source images from a stream derived from `seed`.
inline MultiTaskDataset build_multimnist(const IdxTensor& images, const IdxTensor& labels,
                                         std::uint64_t seed, const MultiMnistConfig& cfg = {}) {
  require(images.dims.size() == 3, "multimnist: images must be a rank-3 idx tensor");
  require(labels.dims.size() == 1, "multimnist: labels must be a rank-1 idx tensor");
  require(images.dims[0] == labels.dims[0], "multimnist: image/label count mismatch");
  require(images.dims[0] >= 2, "multimnist: need at least two source images");
  require(images.dims[1] == images.dims[2], "multimnist: images must be square");
  require(cfg.shift >= 0 && cfg.shift <= static_cast<int>(images.dims[1]),
          "multimnist: shift out of range");
  for (std::uint8_t l : labels.data) require(l <= 9, "multimnist: labels must be 0..9");

  MultiTaskDataset ds;
  ds.seed = seed;
  ds.config_echo = "multimnist(shift=" + std::to_string(cfg.shift) +
                   ",overlap=" + (cfg.overlap == MultiMnistConfig::Overlap::kMax ? "max" : "clip_sum") +
                   ",train=" + std::to_string(cfg.train_size) +
                   ",val=" + std::to_string(cfg.val_size) +
                   ",test=" + std::to_string(cfg.test_size) + ")";
  auto train_rng = make_stream(seed, "multimnist_train");
  auto val_rng = make_stream(seed, "multimnist_val");
  auto test_rng = make_stream(seed, "multimnist_test");
  int first = 0;
  ds.train = detail::compose_split(images, labels, first, cfg.train_size, cfg, train_rng);
  first += cfg.train_size;
  if (cfg.val_size > 0) {
    ds.val = detail::compose_split(images, labels, first, cfg.val_size, cfg, val_rng);
    first += cfg.val_size;
  }
  ds.test = detail::compose_split(images, labels, first, cfg.test_size, cfg, test_rng);
  return ds;
}

// ---- synthetic digit corpus ---------------------------------------------------

namespace detail {

// 5x7 glyph rows per digit, one bit per pixel.
inline const std::uint8_t* digit_glyph(int digit) {
  static const std::uint8_t glyphs[10][7] = {
      {0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110},  // 0
      {0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110},  // 1
      {0b01110, 0b10001, 0b00001, 0b00110, 0b01000, 0b10000, 0b11111},  // 2
      {0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110},  // 3
      {0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010},  // 4
      {0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110},  // 5
      {0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110},  // 6
      {0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000},  // 7
      {0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110},  // 8
      {0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100},  // 9
  };
  return glyphs[digit];
}

}  // namespace detail

struct SyntheticDigits {
  IdxTensor images;  // count x 28 x 28
  IdxTensor labels;  // count
};

// Deterministic MNIST-shaped stand-in corpus: upscaled 5x7 glyphs with random
// shift, intensity and pixel noise. Lets the composite pipeline run in
// environments without the real source files.
inline SyntheticDigits make_synthetic_digits(int count, std::uint64_t seed) {
  require(count >= 1, "synthetic digits: count must be >= 1");
  auto rng = make_stream(seed, "synthetic_digits");
  std::uniform_int_distribution<int> digit_dist(0, 9);
  std::uniform_int_distribution<int> shift_dist(-2, 2);
  std::uniform_real_distribution<double> intensity_dist(0.65, 1.0);
  std::uniform_real_distribution<double> noise_dist(0.0, 24.0);

  SyntheticDigits out;
  out.images.dims = {static_cast<std::uint32_t>(count), 28, 28};
  out.images.data.assign(std::size_t(count) * 28 * 28, 0);
  out.labels.dims = {static_cast<std::uint32_t>(count)};
  out.labels.data.resize(count);

  for (int i = 0; i < count; ++i) {
    const int digit = digit_dist(rng);
    const int dr = shift_dist(rng);
    const int dc = shift_dist(rng);
    const double intensity = intensity_dist(rng);
    out.labels.data[i] = static_cast<std::uint8_t>(digit);
    std::uint8_t* img = out.images.data.data() + std::size_t(i) * 28 * 28;
    const std::uint8_t* glyph = detail::digit_glyph(digit);
    for (int gr = 0; gr < 7; ++gr) {
      for (int gc = 0; gc < 5; ++gc) {
        if (!(glyph[gr] & (1 << (4 - gc)))) continue;
        for (int ur = 0; ur < 3; ++ur) {
          for (int uc = 0; uc < 3; ++uc) {
            const int r = 3 + gr * 3 + ur + dr;
            const int c = 6 + gc * 3 + uc + dc;
            if (r < 0 || r >= 28 || c < 0 || c >= 28) continue;
            img[r * 28 + c] = static_cast<std::uint8_t>(255.0 * intensity);
          }
        }
      }
    }
    for (int p = 0; p < 28 * 28; ++p) {
      const int noisy = int(img[p]) + int(noise_dist(rng));
      img[p] = static_cast<std::uint8_t>(std::min(255, noisy));
    }
  }
  return out;
}

// ---- analytic quadratic tasks -------------------------------------------------

// L_t(x) = ||x - c_t||^2. The Pareto set is exactly the convex hull of the
// centers, so hull membership is an analytic ground truth for convergence
// tests. Satisfies the vector-objective concept used by mgda_vector_step.
struct QuadraticTasks {
  Matrix centers;  // T x d

  int tasks() const { return static_cast<int>(centers.rows()); }
  int dimension() const { return static_cast<int>(centers.cols()); }

  LossVector losses(const Vector& x) const {
    LossVector l(tasks());
    for (int t = 0; t < tasks(); ++t) l(t) = (x - centers.row(t).transpose()).squaredNorm();
    return l;
  }

  GradientMatrix gradients(const Vector& x) const {
    GradientMatrix g(tasks(), dimension());
    for (int t = 0; t < tasks(); ++t) g.row(t) = 2.0 * (x - centers.row(t).transpose());
    return g;
  }

  // Exact distance from x to the convex hull of the centers (support
  // enumeration over the Gram of the shifted centers).
  double hull_distance(const Vector& x) const {
    Matrix shifted = centers;
    shifted.rowwise() -= x.transpose();
    const ExactMinNorm e = min_norm_by_support_enumeration(gram_matrix(shifted));
    return std::sqrt(std::max(0.0, e.squared_norm));
  }

  bool in_hull(const Vector& x, double tol) const { return hull_distance(x) <= tol; }
};

inline QuadraticTasks synth_quadratic_tasks(const Matrix& centers) {
  require(centers.rows() >= 2, "quadratic tasks: need T >= 2");
  for (int i = 0; i < centers.rows(); ++i) {
    for (int j = i + 1; j < centers.rows(); ++j) {
      require((centers.row(i) - centers.row(j)).norm() > 0.0,
              "quadratic tasks: centers must be distinct");
    }
  }
  return {centers};
}

inline QuadraticTasks synth_quadratic_tasks(int tasks, int dim, std::uint64_t seed) {
  auto rng = make_stream(seed, "quadratic_centers");
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix centers(tasks, dim);
  for (int t = 0; t < tasks; ++t) {
    for (int j = 0; j < dim; ++j) centers(t, j) = normal(rng);
  }
  return synth_quadratic_tasks(centers);
}

// ---- teacher-student regression -----------------------------------------------

struct SynthRegressionConfig {
  int tasks = 2;
  int d_in = 16;
  int d_repr = 4;
  int d_out = 1;
  double noise = 0.0;
  int train_size = 512;
  int val_size = 0;
  int test_size = 128;
  // Competing mode: per-task orthogonal teacher directions with a rank-1
  // student bottleneck, so tasks are forced to share contested capacity.
  bool competing = false;
};

inline MultiTaskDataset synth_mtl_regression(const SynthRegressionConfig& cfg,
                                             std::uint64_t seed) {
  require(cfg.tasks >= 1 && cfg.d_in >= 1 && cfg.d_repr >= 1 && cfg.d_out >= 1,
          "synth regression: bad dims");
  require(!cfg.competing || cfg.tasks <= cfg.d_in,
          "synth regression: competing mode needs tasks <= d_in");
  auto input_rng = make_stream(seed, "synth_inputs");
  auto teacher_rng = make_stream(seed, "synth_teacher");
  auto noise_rng = make_stream(seed, "synth_noise");
  std::normal_distribution<double> normal(0.0, 1.0);

  MultiTaskDataset ds;
  ds.seed = seed;
  ds.loss_floor = cfg.noise * cfg.noise * cfg.d_out;
  ds.config_echo = std::string("synth_regression(tasks=") + std::to_string(cfg.tasks) +
                   ",d_in=" + std::to_string(cfg.d_in) + ",d_repr=" + std::to_string(cfg.d_repr) +
                   ",d_out=" + std::to_string(cfg.d_out) + ",noise=" + format_double(cfg.noise) +
                   ",competing=" + (cfg.competing ? "1" : "0") + ")";

  // Teacher: shared random encoder plus per-task heads. Competing mode uses
  // orthonormal per-task directions instead of a shared encoder.
  Matrix teacher_enc;
  std::vector<Matrix> teacher_heads;
  Matrix teacher_dirs;
  if (cfg.competing) {
    Matrix raw(cfg.tasks, cfg.d_in);
    for (int t = 0; t < cfg.tasks; ++t) {
      for (int j = 0; j < cfg.d_in; ++j) raw(t, j) = normal(teacher_rng);
    }
    // Gram-Schmidt for exactly orthogonal target directions.
    for (int t = 0; t < cfg.tasks; ++t) {
      for (int u = 0; u < t; ++u) raw.row(t) -= raw.row(t).dot(raw.row(u)) * raw.row(u);
      raw.row(t) /= raw.row(t).norm();
    }
    teacher_dirs = raw;
  } else {
    teacher_enc.resize(cfg.d_repr, cfg.d_in);
    for (int r = 0; r < cfg.d_repr; ++r) {
      for (int c = 0; c < cfg.d_in; ++c) teacher_enc(r, c) = normal(teacher_rng) / std::sqrt(cfg.d_in);
    }
    for (int t = 0; t < cfg.tasks; ++t) {
      Matrix h(cfg.d_out, cfg.d_repr);
      for (int r = 0; r < cfg.d_out; ++r) {
        for (int c = 0; c < cfg.d_repr; ++c) h(r, c) = normal(teacher_rng) / std::sqrt(cfg.d_repr);
      }
      teacher_heads.push_back(std::move(h));
    }
  }

  auto make_split = [&](int count) {
    DataSplit split;
    split.inputs.resize(count, cfg.d_in);
    for (int i = 0; i < count; ++i) {
      for (int j = 0; j < cfg.d_in; ++j) split.inputs(i, j) = normal(input_rng);
    }
    for (int t = 0; t < cfg.tasks; ++t) {
      TaskTargets y;
      y.kind = LossKind::kMeanSquaredError;
      if (cfg.competing) {
        y.values = split.inputs * teacher_dirs.row(t).transpose();
        require(cfg.d_out == 1, "synth regression: competing mode uses d_out = 1");
      } else {
        y.values = (split.inputs * teacher_enc.transpose()) * teacher_heads[t].transpose();
      }
      if (cfg.noise > 0.0) {
        for (int i = 0; i < y.values.rows(); ++i) {
          for (int j = 0; j < y.values.cols(); ++j) y.values(i, j) += cfg.noise * normal(noise_rng);
        }
      }
      split.tasks.push_back(std::move(y));
    }
    return split;
  };
  ds.train = make_split(cfg.train_size);
  if (cfg.val_size > 0) ds.val = make_split(cfg.val_size);
  ds.test = make_split(cfg.test_size);
  return ds;
}

// ---- dataset cache file --------------------------------------------------------

inline constexpr char kDatasetMagic[8] = {'M', 'O', 'M', 'T', 'L', 'D', 'S', '1'};

namespace detail {

inline void write_split(std::ostream& out, const DataSplit& s) {
  write_pod<std::int64_t>(out, s.inputs.rows());
  write_pod<std::int64_t>(out, s.inputs.cols());
  if (s.inputs.size() > 0) write_bytes(out, s.inputs.data(), sizeof(double) * s.inputs.size());
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.tasks.size()));
  for (const TaskTargets& t : s.tasks) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.kind));
    if (t.kind == LossKind::kSoftmaxCrossEntropy) {
      write_pod<std::uint64_t>(out, t.classes.size());
      for (int c : t.classes) write_pod<std::int32_t>(out, c);
    } else {
      write_pod<std::int64_t>(out, t.values.rows());
      write_pod<std::int64_t>(out, t.values.cols());
      write_bytes(out, t.values.data(), sizeof(double) * t.values.size());
    }
  }
}

inline DataSplit read_split(std::istream& in) {
  DataSplit s;
  const auto rows = read_pod<std::int64_t>(in);
  const auto cols = read_pod<std::int64_t>(in);
  s.inputs.resize(rows, cols);
  if (rows * cols > 0) {
    in.read(reinterpret_cast<char*>(s.inputs.data()),
            static_cast<std::streamsize>(sizeof(double) * rows * cols));
  }
  const auto t_count = read_pod<std::uint32_t>(in);
  for (std::uint32_t t = 0; t < t_count; ++t) {
    TaskTargets y;
    y.kind = static_cast<LossKind>(read_pod<std::uint32_t>(in));
    if (y.kind == LossKind::kSoftmaxCrossEntropy) {
      const auto n = read_pod<std::uint64_t>(in);
      for (std::uint64_t i = 0; i < n; ++i) y.classes.push_back(read_pod<std::int32_t>(in));
    } else {
      const auto r = read_pod<std::int64_t>(in);
      const auto c = read_pod<std::int64_t>(in);
      y.values.resize(r, c);
      in.read(reinterpret_cast<char*>(y.values.data()),
              static_cast<std::streamsize>(sizeof(double) * r * c));
    }
    s.tasks.push_back(std::move(y));
  }
  if (!in) throw std::runtime_error("dataset cache: truncated");
  return s;
}

}  // namespace detail

inline void save_dataset(std::ostream& out, const MultiTaskDataset& ds) {
  detail::write_bytes(out, kDatasetMagic, sizeof(kDatasetMagic));
  detail::write_pod<std::uint64_t>(out, ds.seed);
  detail::write_pod<std::uint64_t>(out, ds.config_echo.size());
  detail::write_bytes(out, ds.config_echo.data(), ds.config_echo.size());
  detail::write_pod<double>(out, ds.loss_floor);
  detail::write_split(out, ds.train);
  detail::write_split(out, ds.val);
  detail::write_split(out, ds.test);
  if (!out) throw std::runtime_error("dataset cache: write failed");
}

// Loads a cached dataset, rejecting caches whose recorded seed or generator
// configuration differ from what the caller expects.
inline MultiTaskDataset load_dataset(std::istream& in, std::uint64_t expected_seed,
                                     const std::string& expected_config) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kDatasetMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("dataset cache: bad magic");
  }
  MultiTaskDataset ds;
  ds.seed = detail::read_pod<std::uint64_t>(in);
  const auto len = detail::read_pod<std::uint64_t>(in);
  ds.config_echo.resize(len);
  in.read(ds.config_echo.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("dataset cache: truncated config");
  if (ds.seed != expected_seed || ds.config_echo != expected_config) {
    throw std::runtime_error("dataset cache: stale (seed or config changed)");
  }
  ds.loss_floor = detail::read_pod<double>(in);
  ds.train = detail::read_split(in);
  ds.val = detail::read_split(in);
  ds.test = detail::read_split(in);
  return ds;
}

}  // namespace momtl
