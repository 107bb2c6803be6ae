#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sba/tensor.hpp"

namespace sba {

enum class NormalizationKind { zscore, minmax };

/// Per-feature affine transform applied as (x - shift) / scale.
struct Normalization {
  NormalizationKind kind = NormalizationKind::zscore;
  std::vector<double> shift;
  std::vector<double> scale;
};

/// Labelled feature matrix. Immutable after loading apart from a single
/// normalization pass.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<double> features, std::size_t dim, std::vector<int> labels,
          std::size_t class_count);

  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t class_count() const { return class_count_; }
  std::span<const double> features() const { return features_; }
  std::span<const int> labels() const { return labels_; }
  std::span<const double> sample(std::size_t i) const;

  /// Rows in the given order, as a detached [n x d] tensor.
  Tensor gather(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
  Tensor all_features() const;

  /// First n samples (all if n == 0 or n >= size()).
  Dataset head(std::size_t n) const;

  /// Fits and applies a per-feature transform; a second call is rejected.
  const Normalization& normalize(NormalizationKind kind);
  /// Applies a transform fitted elsewhere (e.g. on the training split).
  void apply_normalization(const Normalization& norm);
  const std::optional<Normalization>& normalization() const { return normalization_; }

  /// Original label strings in index order, when the source had them.
  std::vector<std::string> label_names;

 private:
  std::vector<double> features_;
  std::size_t dim_ = 0;
  std::vector<int> labels_;
  std::size_t class_count_ = 0;
  std::optional<Normalization> normalization_;
};

/// IDX image/label pair (gzip accepted when a path ends in ".gz"). Pixels are
/// divided by 255; the class count is max(label) + 1.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Comma-separated numeric table; the header row is detected when a feature
/// cell of the first row is not a number. `label_column` < 0 counts from the
/// end. Labels become dense indices in first-appearance order.
Dataset load_delimited(const std::filesystem::path& path, int label_column = -1);

/// Two interleaved half circles of n/2 points each, displaced by
/// N(0, noise_std^2) per coordinate.
Dataset synth_two_moons(std::size_t n, double noise_std, std::uint64_t seed);

/// Seeded drop-last batching. The permutation of an epoch depends only on
/// (shuffle_seed, epoch).
struct BatchPlan {
  std::uint64_t shuffle_seed = 0;
  std::size_t batch_size = 32;

  std::vector<std::size_t> permutation(std::size_t n, std::size_t epoch) const;
  /// floor(n / B) index groups covering the first floor(n / B) * B entries
  /// of the epoch permutation. ConfigError when B > n or B == 0.
  std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t epoch) const;
};

struct Batch {
  Tensor features;
  std::vector<int> labels;
};

std::vector<Batch> batches(const Dataset& ds, const BatchPlan& plan, std::size_t epoch);

}  // namespace sba
