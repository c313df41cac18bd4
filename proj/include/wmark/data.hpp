#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "wmark/bytes.hpp"
#include "wmark/error.hpp"
#include "wmark/nn.hpp"
#include "wmark/rng.hpp"

namespace wmark {

// Any type answering "what is the true label of x", with std::nullopt for
// inputs that have no meaningful label.
template <typename O>
concept LabelOracle = requires(const O& o, std::span<const float> x) {
  { o.label(x) } -> std::same_as<std::optional<int>>;
  { o.num_labels() } -> std::convertible_to<int>;
};

/// Nearest-prototype labeler with an undefined region.
///
/// x is in-domain iff its distance to some prototype is strictly below the
/// radius; the label is that prototype's class. Balls never overlap, so at
/// most one prototype qualifies.
class GroundTruthOracle {
 public:
  GroundTruthOracle() = default;

  GroundTruthOracle(Eigen::MatrixXd prototypes, double radius)
      : prototypes_(std::move(prototypes)), radius_(radius) {
    if (prototypes_.cols() < 2) throw Error("an oracle needs at least two classes");
    if (!(radius_ > 0.0)) throw Error("in-domain radius must be positive");
    const double min_dist = min_pairwise_distance(prototypes_);
    if (min_dist <= 0.0) throw Error("class prototypes must be pairwise distinct");
    if (2.0 * radius_ >= min_dist) {
      throw Error("in-domain radius " + std::to_string(radius_) + " makes prototype balls overlap (closest pair at " +
                  std::to_string(min_dist) + ")");
    }
  }

  std::optional<int> label(std::span<const float> x) const {
    if (static_cast<Eigen::Index>(x.size()) != prototypes_.rows()) {
      throw DimensionError("oracle query has dimension " + std::to_string(x.size()) + ", expected " +
                           std::to_string(prototypes_.rows()));
    }
    const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXf>(x.data(), prototypes_.rows()).cast<double>();
    for (Eigen::Index c = 0; c < prototypes_.cols(); ++c) {
      if ((prototypes_.col(c) - v).norm() < radius_) return static_cast<int>(c);
    }
    return std::nullopt;
  }

  int num_labels() const { return static_cast<int>(prototypes_.cols()); }
  int dim() const { return static_cast<int>(prototypes_.rows()); }
  double radius() const { return radius_; }
  const Eigen::MatrixXd& prototypes() const { return prototypes_; }

  static double min_pairwise_distance(const Eigen::MatrixXd& p) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < p.cols(); ++i) {
      for (Eigen::Index j = i + 1; j < p.cols(); ++j) best = std::min(best, (p.col(i) - p.col(j)).norm());
    }
    return best;
  }

 private:
  Eigen::MatrixXd prototypes_;
  double radius_ = 0.0;
};

static_assert(LabelOracle<GroundTruthOracle>);

/// Oracle that knows only a fixed table of examples (e.g. an IDX dataset);
/// every other input is undefined.
class LookupOracle {
 public:
  LookupOracle(const LabeledSet& known, int num_labels) : num_labels_(num_labels) {
    for (std::size_t i = 0; i < known.size(); ++i) {
      const auto x = known.input(i);
      table_.emplace(std::string(reinterpret_cast<const char*>(x.data()), x.size_bytes()), known.labels[i]);
    }
  }

  std::optional<int> label(std::span<const float> x) const {
    const auto it = table_.find(std::string(reinterpret_cast<const char*>(x.data()), x.size_bytes()));
    if (it == table_.end()) return std::nullopt;
    return it->second;
  }

  int num_labels() const { return num_labels_; }

 private:
  std::unordered_map<std::string, int> table_;
  int num_labels_;
};

static_assert(LabelOracle<LookupOracle>);

struct DatasetBundle {
  LabeledSet train;
  LabeledSet test;
  GroundTruthOracle oracle;
};

struct SyntheticParams {
  int num_labels = 10;
  int dim = 64;
  int train_n = 5000;
  int test_n = 1000;
  double noise_sigma = 0.1;
  // 0 selects 0.45 x the closest prototype distance.
  double radius = 0.0;
  std::uint64_t seed = 0;
};

/// Draws prototypes uniformly in [0,1]^d, then labeled points as
/// prototype + N(0, sigma^2 I), clipped to the unit box and resampled until
/// strictly inside the prototype's ball.
inline DatasetBundle generate_synthetic(const SyntheticParams& p) {
  if (p.num_labels < 2) throw Error("need at least two labels");
  if (p.dim < 8) throw Error("feature dimension must be at least 8");
  if (p.train_n < 0 || p.test_n < 0) throw Error("sample counts must be non-negative");
  if (!(p.noise_sigma >= 0.0)) throw Error("noise sigma must be non-negative");

  Rng proto_rng(derive_seed(p.seed, "data/prototypes"));
  Eigen::MatrixXd prototypes(p.dim, p.num_labels);
  for (int c = 0; c < p.num_labels; ++c) {
    for (int r = 0; r < p.dim; ++r) prototypes(r, c) = proto_rng.uniform();
  }
  const double min_dist = GroundTruthOracle::min_pairwise_distance(prototypes);
  const double radius = p.radius > 0.0 ? p.radius : 0.45 * min_dist;
  GroundTruthOracle oracle(prototypes, radius);  // throws on overlap

  auto draw = [&](int n, std::string_view purpose) {
    Rng rng(derive_seed(p.seed, purpose));
    Eigen::MatrixXf inputs(p.dim, n);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % p.num_labels;
    rng.shuffle(labels.begin(), labels.end());
    Eigen::VectorXd x(p.dim);
    for (int i = 0; i < n; ++i) {
      const int cls = labels[static_cast<std::size_t>(i)];
      for (;;) {
        for (int r = 0; r < p.dim; ++r) {
          x(r) = std::clamp(prototypes(r, cls) + p.noise_sigma * rng.normal(), 0.0, 1.0);
        }
        inputs.col(i) = x.cast<float>();
        // Check against the float representation the model will see.
        if ((inputs.col(i).cast<double>() - prototypes.col(cls)).norm() < radius) break;
      }
    }
    return LabeledSet(std::move(inputs), std::move(labels));
  };

  return {draw(p.train_n, "data/train"), draw(p.test_n, "data/test"), std::move(oracle)};
}

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixel bytes are scaled to [0,1]; each image is flattened row-major.
inline LabeledSet parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
  auto read_u32 = [](std::span<const std::uint8_t> buf, std::size_t offset, const char* what) {
    if (offset + 4 > buf.size()) throw ParseError(std::string("truncated ") + what + " header", buf.size());
    return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
           (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
  };

  const std::uint32_t image_magic = read_u32(images, 0, "image file");
  if (image_magic != 0x00000803) throw ParseError("bad image-file magic number " + std::to_string(image_magic), 0);
  const std::uint32_t count = read_u32(images, 4, "image file");
  const std::uint32_t rows = read_u32(images, 8, "image file");
  const std::uint32_t cols = read_u32(images, 12, "image file");

  const std::uint32_t label_magic = read_u32(labels, 0, "label file");
  if (label_magic != 0x00000801) throw ParseError("bad label-file magic number " + std::to_string(label_magic), 0);
  const std::uint32_t label_count = read_u32(labels, 4, "label file");
  if (label_count != count) {
    throw ParseError("image count " + std::to_string(count) + " does not match label count " +
                     std::to_string(label_count), 4);
  }

  const std::size_t pixels = std::size_t{rows} * cols;
  const std::size_t image_bytes = 16 + std::size_t{count} * pixels;
  if (images.size() < image_bytes) throw ParseError("truncated image data", images.size());
  if (labels.size() < 8 + std::size_t{count}) throw ParseError("truncated label data", labels.size());

  Eigen::MatrixXf inputs(static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(count));
  std::vector<int> out_labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < pixels; ++j) {
      inputs(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) =
          static_cast<float>(images[16 + i * pixels + j]) / 255.0f;
    }
    out_labels[i] = labels[8 + i];
  }
  return {std::move(inputs), std::move(out_labels)};
}

inline Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline LabeledSet load_idx(const std::string& images_path, const std::string& labels_path) {
  return parse_idx(read_file(images_path), read_file(labels_path));
}

}  // namespace wmark
