#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sba/rng.hpp"
#include "sba/tensor.hpp"

namespace sba {

struct DenseLayer {
  Tensor weight;  // fan_in x fan_out
  Tensor bias;    // fan_out
  bool relu = true;
};

/// Index of the layer after which activations are augmented: h_k applies
/// layers 1..k, g_{k+1} applies the rest.
struct SplitChoice {
  std::size_t layer = 0;
  friend bool operator==(SplitChoice, SplitChoice) = default;
};

/// Fully connected classifier with relu on every layer but the last.
class LayerStack {
 public:
  /// Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)) weights, zero biases.
  /// `eligible` defaults to every hidden layer.
  static LayerStack init(std::vector<std::size_t> widths, std::uint64_t seed,
                         std::vector<std::size_t> eligible = {});

  static LayerStack from_layers(std::vector<DenseLayer> layers,
                                std::vector<std::size_t> eligible = {});

  std::span<const DenseLayer> layers() const { return layers_; }
  std::span<const std::size_t> eligible_splits() const { return eligible_; }
  std::vector<std::size_t> widths() const;
  std::size_t depth() const { return layers_.size(); }
  std::size_t input_width() const { return layers_.front().weight.rows(); }
  std::size_t class_count() const { return layers_.back().weight.cols(); }
  /// Width Q_k of the activations after layer k (k = 0 is the input).
  std::size_t width_at(SplitChoice k) const;
  bool is_eligible(SplitChoice k) const;

  /// Weight and bias handles in layer order; shares storage with the model.
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  /// Deep copy with independent storage.
  LayerStack clone() const;

 private:
  std::vector<DenseLayer> layers_;
  std::vector<std::size_t> eligible_;
};

Tensor forward(const LayerStack& net, const Tensor& x);
Tensor forward(const LayerStack& net, const Tensor& x, Tape& tape);

/// Activations after layer k (post-nonlinearity). k must be eligible.
Tensor forward_to(const LayerStack& net, const Tensor& x, SplitChoice k);
Tensor forward_to(const LayerStack& net, const Tensor& x, SplitChoice k, Tape& tape);

/// Logits from layer-k activations; any number of rows.
Tensor forward_from(const LayerStack& net, const Tensor& h, SplitChoice k);
Tensor forward_from(const LayerStack& net, const Tensor& h, SplitChoice k, Tape& tape);

/// Uniform draw from the eligible set.
SplitChoice draw_split(std::span<const std::size_t> eligible, RandomStream& stream);

// Checkpoint layout, all integers little-endian:
//   "SBA1"                          4-byte magic
//   u32 layer_count + 1, then u32 widths[layer_count + 1]
//   u32 |S|, then u32 S[|S|]
//   per layer: f64 W[fan_in * fan_out] (row-major), f64 b[fan_out]
void save_checkpoint(const LayerStack& net, const std::filesystem::path& path);
LayerStack load_checkpoint(const std::filesystem::path& path);

}  // namespace sba
