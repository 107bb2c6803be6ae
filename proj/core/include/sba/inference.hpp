#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sba/data_io.hpp"
#include "sba/network.hpp"
#include "sba/vicinity.hpp"

namespace sba {

/// Index of the largest entry; ties go to the lowest index.
int argmax(std::span<const double> row);

/// Row-wise argmax of the network logits.
std::vector<int> predict_argmax(const LayerStack& net, const Tensor& x);

struct VotePrediction {
  int predicted_class = 0;
  std::vector<std::size_t> vote_counts;  // one tally per class, sums to M + 1
  int reference_class = 0;
};

/// Plurality over voter classes, voters[0] being the reference sample. Ties
/// go to the reference's class when it is among the leaders, otherwise to the
/// lowest class index.
VotePrediction tally_votes(std::span<const int> voters, std::size_t class_count);

/// Majority vote over a sample and its M virtual replicas at layer k, using a
/// freshly drawn basis. M = 0 reduces to argmax.
VotePrediction predict_vote(const LayerStack& net, std::span<const double> x, SplitChoice k,
                            const VicinityConfig& cfg, RandomStream& noise,
                            RandomStream& mask);

enum class EvalMode { argmax, vote };
EvalMode parse_eval_mode(std::string_view name);

/// Randomness and batching for vote-mode evaluation. Streams are rebuilt from
/// the seeds on every call, so evaluation has no side effects.
struct VoteSettings {
  VicinityConfig vicinity;
  std::optional<SplitChoice> split;  // unset: uniform draw per evaluation batch
  std::uint64_t noise_seed = 0;
  std::uint64_t mask_seed = 0;
  std::uint64_t split_seed = 0;
  std::uint64_t stream_index = 0;  // e.g. the epoch, to decorrelate repeated evaluations
  std::size_t batch_size = 500;
};

struct EvalResult {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy = 0.0;
  double error_rate = 1.0;
};

EvalResult evaluate(const LayerStack& net, const Dataset& ds, EvalMode mode,
                    const VoteSettings& settings = {},
                    std::vector<VotePrediction>* predictions = nullptr);

}  // namespace sba
