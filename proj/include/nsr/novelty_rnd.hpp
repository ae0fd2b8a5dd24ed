#pragma once

// Random network distillation: a frozen random target network and a trained
// predictor. The squared gap between their embeddings is the state novelty,
// which is standardized over the batch and clamped to [1, 3] to become a
// per-sample update weight.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsr/error.hpp"
#include "nsr/rng.hpp"
#include "nsr/tensor_net.hpp"

namespace nsr {

inline constexpr double kMinWeight = 1.0;
inline constexpr double kMaxWeight = 3.0;

// Per-dimension running mean/variance (parallel-merge form). normalize()
// divides by max(std, min_std) and clips to +-clip; before the first update
// it passes inputs through unchanged.
class RunningNormalizer {
 public:
  RunningNormalizer() = default;
  explicit RunningNormalizer(int dim, double clip = 5.0, double min_std = 1e-4)
      : mean_(Vector::Zero(dim)), var_(Vector::Ones(dim)), clip_(clip), min_std_(min_std) {}

  void update(const Matrix& batch) {
    if (batch.rows() != mean_.size()) throw InvalidArgument("normalizer: dimension mismatch");
    const double n = static_cast<double>(batch.cols());
    if (n == 0) return;
    const Vector bmean = batch.rowwise().mean();
    const Vector bvar = (batch.colwise() - bmean).array().square().rowwise().mean();
    if (count_ == 0.0) {
      mean_ = bmean;
      var_ = bvar;
      count_ = n;
      return;
    }
    const double total = count_ + n;
    const double frac = n / total;
    const Vector delta = bmean - mean_;
    mean_ += delta * frac;
    var_ += (bvar - var_) * frac + delta.cwiseProduct(delta) * (count_ * frac / total);
    var_ = var_.cwiseMax(0.0);
    count_ = total;
  }

  Matrix normalize(const Matrix& x) const {
    if (x.rows() != mean_.size()) throw InvalidArgument("normalizer: dimension mismatch");
    if (count_ == 0.0) return x;
    const Vector inv_std = var_.array().sqrt().max(min_std_).inverse();
    Matrix out = (x.colwise() - mean_).array().colwise() * inv_std.array();
    return out.cwiseMax(-clip_).cwiseMin(clip_);
  }

  const Vector& mean() const { return mean_; }
  const Vector& variance() const { return var_; }
  double count() const { return count_; }
  double clip() const { return clip_; }
  double min_std() const { return min_std_; }

  nlohmann::json to_json() const {
    return {{"mean", std::vector<double>(mean_.data(), mean_.data() + mean_.size())},
            {"variance", std::vector<double>(var_.data(), var_.data() + var_.size())},
            {"count", count_},
            {"clip", clip_},
            {"min_std", min_std_}};
  }

  static RunningNormalizer from_json(const nlohmann::json& j) {
    const auto m = j.at("mean").get<std::vector<double>>();
    const auto v = j.at("variance").get<std::vector<double>>();
    if (m.size() != v.size()) throw InvalidArgument("normalizer: mean/variance length mismatch");
    RunningNormalizer r(static_cast<int>(m.size()), j.value("clip", 5.0), j.value("min_std", 1e-4));
    r.mean_ = Eigen::Map<const Vector>(m.data(), static_cast<Eigen::Index>(m.size()));
    r.var_ = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
    r.count_ = j.at("count").get<double>();
    return r;
  }

 private:
  Vector mean_;
  Vector var_;
  double count_ = 0.0;
  double clip_ = 5.0;
  double min_std_ = 1e-4;
};

struct NoveltyConfig {
  int embed_dim = 32;
  std::vector<int> hidden{64};
  double predictor_lr = 1e-3;
};

class NoveltyEstimator {
 public:
  NoveltyEstimator(int input_dim, std::uint64_t seed, NoveltyConfig cfg = {})
      : cfg_(std::move(cfg)), normalizer_(input_dim) {
    if (input_dim < 1 || cfg_.embed_dim < 1)
      throw InvalidArgument("NoveltyEstimator: dimensions must be >= 1");
    std::vector<int> dims{input_dim};
    dims.insert(dims.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    dims.push_back(cfg_.embed_dim);
    target_ = mlp_init(dims, derive_seed(seed, 0x7a7));
    predictor_ = mlp_init(dims, derive_seed(seed, 0x9ed));
  }

  int input_dim() const { return target_.input_dim(); }
  int embed_dim() const { return target_.output_dim(); }
  const NoveltyConfig& config() const { return cfg_; }

  const Network& target() const { return target_; }
  const Network& predictor() const { return predictor_; }
  Network& predictor() { return predictor_; }
  const RunningNormalizer& normalizer() const { return normalizer_; }

  // ||f_pred(x) - f_target(x)||^2 per column of `states`; read-only.
  std::vector<double> novelty_mse(const Matrix& states) const {
    check_states(states);
    const Matrix x = normalizer_.normalize(states);
    const Matrix gap = forward_batch(predictor_, x) - forward_batch(target_, x);
    const Vector sq = gap.colwise().squaredNorm();
    return {sq.data(), sq.data() + sq.size()};
  }

  // One Adam step on the predictor toward the target embeddings. The input
  // normalizer absorbs the batch first. Returns the pre-step mean loss.
  double train_predictor(const Matrix& states, double lr) {
    check_states(states);
    normalizer_.update(states);
    const Matrix x = normalizer_.normalize(states);
    const Matrix y = forward_batch(target_, x);
    auto lg = backward_weighted_scalar_loss(predictor_, LossKind::weighted_mse, x, &y, {});
    adam_step(predictor_, lg.grads, lr);
    return lg.loss;
  }

  double train_predictor(const Matrix& states) { return train_predictor(states, cfg_.predictor_lr); }

  nlohmann::json to_json() const {
    return {{"embed_dim", cfg_.embed_dim},
            {"hidden", cfg_.hidden},
            {"predictor_lr", cfg_.predictor_lr},
            {"target", network_to_json(target_)},
            {"predictor", network_to_json(predictor_)},
            {"normalizer", normalizer_.to_json()}};
  }

  static NoveltyEstimator from_json(const nlohmann::json& j) {
    NoveltyEstimator e;
    e.cfg_.embed_dim = j.at("embed_dim").get<int>();
    e.cfg_.hidden = j.at("hidden").get<std::vector<int>>();
    e.cfg_.predictor_lr = j.at("predictor_lr").get<double>();
    e.target_ = network_from_json(j.at("target"));
    e.predictor_ = network_from_json(j.at("predictor"));
    e.normalizer_ = RunningNormalizer::from_json(j.at("normalizer"));
    if (e.target_.layer_dims != e.predictor_.layer_dims)
      throw InvalidArgument("NoveltyEstimator: target and predictor shapes differ");
    return e;
  }

 private:
  NoveltyEstimator() = default;

  void check_states(const Matrix& states) const {
    if (states.cols() == 0) throw InvalidArgument("novelty: empty batch");
    if (states.rows() != input_dim())
      throw InvalidArgument("novelty: state length " + std::to_string(states.rows()) +
                            " != " + std::to_string(input_dim()));
    if (!states.allFinite()) throw NumericInputError("novelty: non-finite state");
  }

  NoveltyConfig cfg_;
  Network target_;
  Network predictor_;
  RunningNormalizer normalizer_;
};

struct NoveltyWeights {
  std::vector<double> raw;
  std::vector<double> standardized;
  std::vector<double> clamped;
};

inline std::vector<double> clamp_weights(std::span<const double> standardized) {
  std::vector<double> out(standardized.begin(), standardized.end());
  for (double& x : out) x = std::clamp(x, kMinWeight, kMaxWeight);
  return out;
}

// Batch standardization (population std) followed by a clamp to [1, 3].
// A batch with std < 1e-12 maps to all ones.
inline NoveltyWeights normalize_and_clamp(std::span<const double> raw) {
  if (raw.empty()) throw InvalidArgument("normalize_and_clamp: empty batch");
  for (double x : raw) {
    if (!std::isfinite(x)) throw NumericInputError("normalize_and_clamp: non-finite novelty");
    if (x < 0.0) throw InvalidArgument("normalize_and_clamp: novelty must be >= 0");
  }
  NoveltyWeights w;
  w.raw.assign(raw.begin(), raw.end());
  const double n = static_cast<double>(raw.size());
  double mean = 0.0;
  for (double x : raw) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : raw) var += (x - mean) * (x - mean);
  const double std = std::sqrt(var / n);
  if (!(std >= 1e-12)) {
    w.standardized.assign(raw.size(), 0.0);
    w.clamped.assign(raw.size(), kMinWeight);
    return w;
  }
  w.standardized.reserve(raw.size());
  for (double x : raw) w.standardized.push_back((x - mean) / std);
  w.clamped = clamp_weights(w.standardized);
  return w;
}

}  // namespace nsr
