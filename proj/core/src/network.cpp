#include "sba/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sba/error.hpp"

namespace sba {

namespace {

constexpr std::uint64_t kInitTag = 0x494e4954;  // "INIT"

std::vector<std::size_t> default_eligible(std::size_t depth) {
  std::vector<std::size_t> s;
  for (std::size_t k = 1; k < depth; ++k) s.push_back(k);
  return s;
}

void validate_eligible(const std::vector<std::size_t>& eligible, std::size_t depth) {
  for (std::size_t k : eligible) {
    if (k == 0 || k >= depth) {
      throw ConfigError("split layer " + std::to_string(k) +
                        " is not a hidden layer (valid: 1.." + std::to_string(depth - 1) +
                        ")");
    }
  }
}

void check_split(const LayerStack& net, SplitChoice k) {
  if (!net.is_eligible(k)) {
    throw ContractError("split layer " + std::to_string(k.layer) +
                        " is not in the eligible set");
  }
}

}  // namespace

LayerStack LayerStack::init(std::vector<std::size_t> widths, std::uint64_t seed,
                            std::vector<std::size_t> eligible) {
  if (widths.size() < 2) throw ConfigError("network needs at least 2 widths");
  if (std::find(widths.begin(), widths.end(), std::size_t{0}) != widths.end()) {
    throw ConfigError("network widths must be positive");
  }
  RandomStream stream = make_stream(seed, kInitTag);
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t fan_in = widths[l], fan_out = widths[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(fan_in * fan_out);
    for (double& v : w) v = dist(stream);
    layers.push_back(DenseLayer{Tensor(Shape{fan_in, fan_out}, std::move(w)),
                                Tensor(Shape{fan_out}), l + 2 < widths.size()});
  }
  return from_layers(std::move(layers), std::move(eligible));
}

LayerStack LayerStack::from_layers(std::vector<DenseLayer> layers,
                                   std::vector<std::size_t> eligible) {
  if (layers.empty()) throw ConfigError("network needs at least one layer");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.weight.rank() != 2 || layer.bias.rank() != 1 ||
        layer.bias.size() != layer.weight.cols()) {
      throw DimensionError("layer " + std::to_string(l + 1) + ": W " +
                           shape_string(layer.weight.shape()) + " and b " +
                           shape_string(layer.bias.shape()) + " do not conform");
    }
    if (l > 0 && layers[l - 1].weight.cols() != layer.weight.rows()) {
      throw DimensionError("layer " + std::to_string(l + 1) + " expects width " +
                           std::to_string(layer.weight.rows()) + " but previous layer emits " +
                           std::to_string(layers[l - 1].weight.cols()));
    }
  }
  if (layers.back().relu) throw ConfigError("final layer must emit raw logits");
  LayerStack net;
  net.layers_ = std::move(layers);
  if (eligible.empty()) eligible = default_eligible(net.layers_.size());
  std::sort(eligible.begin(), eligible.end());
  eligible.erase(std::unique(eligible.begin(), eligible.end()), eligible.end());
  validate_eligible(eligible, net.layers_.size());
  net.eligible_ = std::move(eligible);
  for (auto& layer : net.layers_) {
    layer.weight.set_requires_grad(true);
    layer.bias.set_requires_grad(true);
  }
  return net;
}

std::vector<std::size_t> LayerStack::widths() const {
  std::vector<std::size_t> w{input_width()};
  for (const auto& layer : layers_) w.push_back(layer.weight.cols());
  return w;
}

std::size_t LayerStack::width_at(SplitChoice k) const {
  if (k.layer > layers_.size()) throw ContractError("layer index beyond network depth");
  return k.layer == 0 ? input_width() : layers_[k.layer - 1].weight.cols();
}

bool LayerStack::is_eligible(SplitChoice k) const {
  return std::binary_search(eligible_.begin(), eligible_.end(), k.layer);
}

std::vector<Tensor> LayerStack::parameters() const {
  std::vector<Tensor> params;
  for (const auto& layer : layers_) {
    params.push_back(layer.weight);
    params.push_back(layer.bias);
  }
  return params;
}

std::size_t LayerStack::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

LayerStack LayerStack::clone() const {
  std::vector<DenseLayer> copy;
  for (const auto& layer : layers_) {
    copy.push_back(DenseLayer{layer.weight.detach(), layer.bias.detach(), layer.relu});
  }
  return from_layers(std::move(copy), eligible_);
}

namespace {

Tensor apply_range(const LayerStack& net, Tensor h, std::size_t first, std::size_t last) {
  for (std::size_t l = first; l < last; ++l) {
    const auto& layer = net.layers()[l];
    h = ops::affine(h, layer.weight, layer.bias);
    if (layer.relu) h = ops::relu(h);
  }
  return h;
}

Tensor apply_range(const LayerStack& net, Tensor h, std::size_t first, std::size_t last,
                   Tape& tape) {
  for (std::size_t l = first; l < last; ++l) {
    const auto& layer = net.layers()[l];
    h = tape.affine(h, layer.weight, layer.bias);
    if (layer.relu) h = tape.relu(h);
  }
  return h;
}

void check_input_width(const Tensor& h, std::size_t expected, const char* what) {
  if (h.rank() != 2 || h.cols() != expected) {
    throw DimensionError(std::string(what) + ": expected width " + std::to_string(expected) +
                         ", got " + shape_string(h.shape()));
  }
}

}  // namespace

Tensor forward(const LayerStack& net, const Tensor& x) {
  check_input_width(x, net.input_width(), "forward");
  return apply_range(net, x, 0, net.depth());
}

Tensor forward(const LayerStack& net, const Tensor& x, Tape& tape) {
  check_input_width(x, net.input_width(), "forward");
  return apply_range(net, x, 0, net.depth(), tape);
}

Tensor forward_to(const LayerStack& net, const Tensor& x, SplitChoice k) {
  check_split(net, k);
  check_input_width(x, net.input_width(), "forward_to");
  return apply_range(net, x, 0, k.layer);
}

Tensor forward_to(const LayerStack& net, const Tensor& x, SplitChoice k, Tape& tape) {
  check_split(net, k);
  check_input_width(x, net.input_width(), "forward_to");
  return apply_range(net, x, 0, k.layer, tape);
}

Tensor forward_from(const LayerStack& net, const Tensor& h, SplitChoice k) {
  check_split(net, k);
  check_input_width(h, net.width_at(k), "forward_from");
  return apply_range(net, h, k.layer, net.depth());
}

Tensor forward_from(const LayerStack& net, const Tensor& h, SplitChoice k, Tape& tape) {
  check_split(net, k);
  check_input_width(h, net.width_at(k), "forward_from");
  return apply_range(net, h, k.layer, net.depth(), tape);
}

SplitChoice draw_split(std::span<const std::size_t> eligible, RandomStream& stream) {
  if (eligible.empty()) throw ConfigError("no eligible split layers to draw from");
  std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
  return SplitChoice{eligible[pick(stream)]};
}

}  // namespace sba
