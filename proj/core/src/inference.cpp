#include "sba/inference.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "sba/error.hpp"

namespace sba {

namespace {
constexpr std::uint64_t kVoteTag = 0x564f5445;  // "VOTE"
constexpr std::size_t kArgmaxChunk = 1000;
}  // namespace

int argmax(std::span<const double> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

std::vector<int> predict_argmax(const LayerStack& net, const Tensor& x) {
  const Tensor logits = forward(net, x);
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = argmax(logits.row(i));
  return out;
}

VotePrediction tally_votes(std::span<const int> voters, std::size_t class_count) {
  if (voters.empty()) throw ContractError("tally_votes needs at least the reference voter");
  VotePrediction out;
  out.vote_counts.assign(class_count, 0);
  for (int v : voters) out.vote_counts.at(static_cast<std::size_t>(v)) += 1;
  out.reference_class = voters[0];
  const std::size_t best = *std::max_element(out.vote_counts.begin(), out.vote_counts.end());
  if (out.vote_counts[static_cast<std::size_t>(out.reference_class)] == best) {
    out.predicted_class = out.reference_class;
  } else {
    out.predicted_class = static_cast<int>(
        std::find(out.vote_counts.begin(), out.vote_counts.end(), best) - out.vote_counts.begin());
  }
  return out;
}

namespace {

// Votes for every row of `x` at layer k with one shared basis.
std::vector<VotePrediction> vote_batch(const LayerStack& net, const Tensor& x, SplitChoice k,
                                       const VicinityConfig& cfg, RandomStream& noise,
                                       RandomStream& mask) {
  const Tensor activations = forward_to(net, x, k);
  const std::size_t batch = x.rows();
  std::vector<std::vector<int>> voters(batch);
  if (cfg.fold() == 0) {
    const Tensor logits = forward_from(net, activations, k);
    for (std::size_t i = 0; i < batch; ++i) voters[i].push_back(argmax(logits.row(i)));
  } else {
    const BasisMatrix basis = make_basis(activations.cols(), noise, cfg.basis_mode);
    const AugmentedBatch aug = augment_batch(activations, cfg, basis, noise, mask);
    const Tensor logits = forward_from(net, aug.rows, k);
    for (std::size_t i = 0; i < batch; ++i) voters[i].push_back(argmax(logits.row(i)));
    for (std::size_t v = 0; v < aug.virtual_count(); ++v) {
      voters[aug.ref_index[v]].push_back(argmax(logits.row(batch + v)));
    }
  }
  std::vector<VotePrediction> out;
  out.reserve(batch);
  for (const auto& v : voters) out.push_back(tally_votes(v, net.class_count()));
  return out;
}

}  // namespace

VotePrediction predict_vote(const LayerStack& net, std::span<const double> x, SplitChoice k,
                            const VicinityConfig& cfg, RandomStream& noise, RandomStream& mask) {
  cfg.validate(false);
  const Tensor row(Shape{1, x.size()}, std::vector<double>(x.begin(), x.end()));
  return vote_batch(net, row, k, cfg, noise, mask).front();
}

EvalMode parse_eval_mode(std::string_view name) {
  if (name == "argmax") return EvalMode::argmax;
  if (name == "vote") return EvalMode::vote;
  throw ConfigError("eval mode must be argmax or vote, got '" + std::string(name) + "'");
}

EvalResult evaluate(const LayerStack& net, const Dataset& ds, EvalMode mode,
                    const VoteSettings& settings, std::vector<VotePrediction>* predictions) {
  if (ds.size() == 0) throw ConfigError("cannot evaluate on an empty dataset");
  if (ds.dim() != net.input_width()) {
    throw DimensionError("dataset width " + std::to_string(ds.dim()) +
                         " does not match network input " + std::to_string(net.input_width()));
  }
  EvalResult result;
  result.total = ds.size();
  if (predictions) predictions->clear();

  std::vector<std::size_t> idx;
  if (mode == EvalMode::argmax) {
    for (std::size_t start = 0; start < ds.size(); start += kArgmaxChunk) {
      const std::size_t end = std::min(ds.size(), start + kArgmaxChunk);
      idx.resize(end - start);
      std::iota(idx.begin(), idx.end(), start);
      const auto pred = predict_argmax(net, ds.gather(idx));
      for (std::size_t i = 0; i < pred.size(); ++i)
        result.correct += pred[i] == ds.labels()[start + i] ? 1 : 0;
    }
  } else {
    settings.vicinity.validate(false);
    if (settings.batch_size == 0) throw ConfigError("vote batch size must be at least 1");
    RandomStream noise = make_stream(settings.noise_seed, kVoteTag, settings.stream_index);
    RandomStream mask = make_stream(settings.mask_seed, kVoteTag, settings.stream_index);
    RandomStream split = make_stream(settings.split_seed, kVoteTag, settings.stream_index);
    for (std::size_t start = 0; start < ds.size(); start += settings.batch_size) {
      const std::size_t end = std::min(ds.size(), start + settings.batch_size);
      idx.resize(end - start);
      std::iota(idx.begin(), idx.end(), start);
      const SplitChoice k = settings.split ? *settings.split : draw_split(net.eligible_splits(), split);
      auto votes = vote_batch(net, ds.gather(idx), k, settings.vicinity, noise, mask);
      for (std::size_t i = 0; i < votes.size(); ++i) {
        result.correct += votes[i].predicted_class == ds.labels()[start + i] ? 1 : 0;
        if (predictions) predictions->push_back(std::move(votes[i]));
      }
    }
  }
  result.accuracy = static_cast<double>(result.correct) / static_cast<double>(result.total);
  result.error_rate = 1.0 - result.accuracy;
  return result;
}

}  // namespace sba
