#pragma once

// DDPG with target networks and per-sample weighted actor/critic losses.
//
//   critic:  mean_i w_i * (Q(s_i, a_i) - y_i)^2,
//            y_i = r_i + gamma * (1 - terminal_i) * Q'(s'_i, mu'(s'_i))
//   actor:   mean_i -w_i * Q(s_i, mu(s_i))
//
// The weights come from compute_weights(); in `nsr` mode they are the clamped
// standardized RND novelty of each state.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsr/envs.hpp"
#include "nsr/error.hpp"
#include "nsr/novelty_rnd.hpp"
#include "nsr/replay_her.hpp"
#include "nsr/rng.hpp"
#include "nsr/tensor_net.hpp"

namespace nsr {

enum class WeightMode { nsr, uniform, mean, random };

inline std::string to_string(WeightMode m) {
  switch (m) {
    case WeightMode::nsr: return "nsr";
    case WeightMode::uniform: return "uniform";
    case WeightMode::mean: return "mean";
    case WeightMode::random: return "random";
  }
  return "uniform";
}

inline WeightMode weight_mode_from_string(const std::string& s) {
  if (s == "nsr") return WeightMode::nsr;
  if (s == "uniform") return WeightMode::uniform;
  if (s == "mean") return WeightMode::mean;
  if (s == "random") return WeightMode::random;
  throw InvalidArgument("unknown weight mode '" + s + "' (expected nsr, uniform, mean or random)");
}

struct AgentConfig {
  int observation_dim = 6;
  int goal_dim = 3;
  int action_dim = 3;
  int hidden_width = 64;
  int hidden_layers = 3;
  double gamma = 0.98;
  double tau = 0.05;
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  double action_noise_std = 0.1;
  double random_episode_prob = 0.2;
  WeightMode weight_mode = WeightMode::nsr;
  int reuse_count = 1;
  int batch_size = 128;
  double future_k = 4.0;
  double reward_threshold = 0.05;
  double action_l2 = 0.0;
  bool clip_target = false;
  NoveltyConfig novelty;

  void validate() const {
    std::vector<std::string> errs;
    if (observation_dim < 1 || goal_dim < 1 || action_dim < 1) errs.push_back("dims must be >= 1");
    if (hidden_width < 1 || hidden_layers < 1) errs.push_back("hidden sizes must be >= 1");
    if (!(gamma > 0.0 && gamma < 1.0)) errs.push_back("gamma must be in (0, 1)");
    if (!(tau > 0.0 && tau <= 1.0)) errs.push_back("tau must be in (0, 1]");
    if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) errs.push_back("learning rates must be > 0");
    if (!(action_noise_std >= 0.0)) errs.push_back("action_noise_std must be >= 0");
    if (!(random_episode_prob >= 0.0 && random_episode_prob <= 1.0))
      errs.push_back("random_episode_prob must be in [0, 1]");
    if (reuse_count < 1) errs.push_back("reuse_count must be >= 1");
    if (batch_size < 1) errs.push_back("batch_size must be >= 1");
    if (!(future_k >= 0.0)) errs.push_back("future_k must be >= 0");
    if (!(reward_threshold > 0.0)) errs.push_back("reward_threshold must be > 0");
    if (errs.empty()) return;
    std::string msg = "agent config:";
    for (const auto& e : errs) msg += " " + e + ";";
    throw ValidationError(msg);
  }
};

struct UpdateMetrics {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double mean_weight = 1.0;
  double rnd_loss = 0.0;

  bool operator==(const UpdateMetrics&) const = default;
};

// Gradients of both losses before any optimizer step.
struct AgentGradients {
  Gradients critic;
  Gradients actor;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
};

// Network inputs assembled from a sampled batch; one sample per column.
struct BatchTensors {
  Matrix states;       // observation ++ desired goal
  Matrix next_states;  // next observation ++ desired goal
  Matrix actions;
  Vector rewards;
  Vector not_terminal;

  static BatchTensors from(const TransitionBatch& b) {
    const auto n = static_cast<Eigen::Index>(b.size());
    if (n == 0) throw InvalidArgument("update: empty batch");
    const auto obs_dim = static_cast<Eigen::Index>(b.observations.front().size());
    const auto goal_dim = static_cast<Eigen::Index>(b.desired_goals.front().size());
    const auto act_dim = static_cast<Eigen::Index>(b.actions.front().size());
    BatchTensors t;
    t.states.resize(obs_dim + goal_dim, n);
    t.next_states.resize(obs_dim + goal_dim, n);
    t.actions.resize(act_dim, n);
    t.rewards.resize(n);
    t.not_terminal.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (static_cast<Eigen::Index>(b.observations[k].size()) != obs_dim ||
          static_cast<Eigen::Index>(b.next_observations[k].size()) != obs_dim ||
          static_cast<Eigen::Index>(b.desired_goals[k].size()) != goal_dim ||
          static_cast<Eigen::Index>(b.actions[k].size()) != act_dim)
        throw InvalidArgument("update: ragged batch");
      for (Eigen::Index r = 0; r < obs_dim; ++r) {
        t.states(r, i) = b.observations[k][static_cast<std::size_t>(r)];
        t.next_states(r, i) = b.next_observations[k][static_cast<std::size_t>(r)];
      }
      for (Eigen::Index r = 0; r < goal_dim; ++r) {
        t.states(obs_dim + r, i) = b.desired_goals[k][static_cast<std::size_t>(r)];
        t.next_states(obs_dim + r, i) = b.desired_goals[k][static_cast<std::size_t>(r)];
      }
      for (Eigen::Index r = 0; r < act_dim; ++r)
        t.actions(r, i) = b.actions[k][static_cast<std::size_t>(r)];
      t.rewards(i) = b.rewards[k];
      t.not_terminal(i) = b.terminal[k] ? 0.0 : 1.0;
    }
    if (!t.states.allFinite() || !t.next_states.allFinite() || !t.actions.allFinite() ||
        !t.rewards.allFinite())
      throw NumericInputError("update: non-finite batch entry");
    return t;
  }
};

inline Matrix stack_rows(const Matrix& top, const Matrix& bottom) {
  Matrix m(top.rows() + bottom.rows(), top.cols());
  m.topRows(top.rows()) = top;
  m.bottomRows(bottom.rows()) = bottom;
  return m;
}

class Agent {
 public:
  Agent(const AgentConfig& cfg, std::uint64_t seed)
      : cfg_(cfg),
        novelty_(cfg.observation_dim + cfg.goal_dim, derive_seed(seed, 0x4e0), cfg.novelty),
        input_norm_(cfg.observation_dim + cfg.goal_dim, 5.0, 1e-2),
        weight_rng_(derive_seed(seed, 0x3e1)) {
    cfg_.validate();
    const int in = cfg.observation_dim + cfg.goal_dim;
    std::vector<int> actor_dims{in}, critic_dims{in + cfg.action_dim};
    for (int i = 0; i < cfg.hidden_layers; ++i) {
      actor_dims.push_back(cfg.hidden_width);
      critic_dims.push_back(cfg.hidden_width);
    }
    actor_dims.push_back(cfg.action_dim);
    critic_dims.push_back(1);
    actor_ = mlp_init(actor_dims, derive_seed(seed, 0xac7), OutputActivation::tanh);
    critic_ = mlp_init(critic_dims, derive_seed(seed, 0xc71));
    target_actor_ = actor_;
    target_critic_ = critic_;
  }

  const AgentConfig& config() const { return cfg_; }
  int state_dim() const { return cfg_.observation_dim + cfg_.goal_dim; }

  Network& actor() { return actor_; }
  Network& critic() { return critic_; }
  Network& target_actor() { return target_actor_; }
  Network& target_critic() { return target_critic_; }
  const Network& actor() const { return actor_; }
  const Network& critic() const { return critic_; }
  const Network& target_actor() const { return target_actor_; }
  const Network& target_critic() const { return target_critic_; }
  NoveltyEstimator& novelty() { return novelty_; }
  const NoveltyEstimator& novelty() const { return novelty_; }

  std::uint64_t update_calls() const { return update_calls_; }

  // Actor/critic see (observation ++ goal) standardized by running
  // statistics of the stored experience; identity until the first episode.
  const RunningNormalizer& input_normalizer() const { return input_norm_; }

  void observe_episode(const Episode& episode) {
    if (episode.empty()) return;
    Matrix x(state_dim(), static_cast<Eigen::Index>(episode.size()));
    for (std::size_t i = 0; i < episode.size(); ++i) {
      const auto& s = episode[i].state;
      for (int r = 0; r < cfg_.observation_dim; ++r)
        x(r, static_cast<Eigen::Index>(i)) = s.observation[static_cast<std::size_t>(r)];
      for (int r = 0; r < cfg_.goal_dim; ++r)
        x(cfg_.observation_dim + r, static_cast<Eigen::Index>(i)) = s.desired_goal[static_cast<std::size_t>(r)];
    }
    input_norm_.update(x);
  }

  void set_weight_mode(WeightMode m) { cfg_.weight_mode = m; }
  void set_reuse_count(int n) {
    if (n < 1) throw InvalidArgument("reuse_count must be >= 1");
    cfg_.reuse_count = n;
  }

  // Decides whether an exploration episode acts uniformly at random.
  bool begin_exploration_episode(Rng& rng) const { return rng.uniform() < cfg_.random_episode_prob; }

  std::vector<double> select_action(const GoalObservation& obs, bool explore, Rng& rng,
                                    bool random_episode = false) const {
    if (static_cast<int>(obs.observation.size()) != cfg_.observation_dim ||
        static_cast<int>(obs.desired_goal.size()) != cfg_.goal_dim)
      throw InvalidArgument("select_action: observation size mismatch");
    std::vector<double> a(static_cast<std::size_t>(cfg_.action_dim));
    if (explore && random_episode) {
      for (double& x : a) x = rng.uniform(-1.0, 1.0);
      return a;
    }
    Matrix x(state_dim(), 1);
    for (int i = 0; i < cfg_.observation_dim; ++i) x(i, 0) = obs.observation[static_cast<std::size_t>(i)];
    for (int i = 0; i < cfg_.goal_dim; ++i)
      x(cfg_.observation_dim + i, 0) = obs.desired_goal[static_cast<std::size_t>(i)];
    if (!x.allFinite()) throw NumericInputError("select_action: non-finite observation");
    const Matrix y = forward_batch(actor_, input_norm_.normalize(x));
    for (int i = 0; i < cfg_.action_dim; ++i) {
      double v = y(i, 0);
      if (explore) v += rng.normal(0.0, cfg_.action_noise_std);
      a[static_cast<std::size_t>(i)] = std::clamp(v, -1.0, 1.0);
    }
    return a;
  }

  std::vector<double> compute_weights(const Matrix& states, Rng& rng) const {
    if (states.cols() == 0) throw InvalidArgument("compute_weights: empty batch");
    const auto n = static_cast<std::size_t>(states.cols());
    if (cfg_.weight_mode == WeightMode::uniform) return std::vector<double>(n, 1.0);

    const auto nsr = normalize_and_clamp(novelty_.novelty_mse(states)).clamped;
    if (cfg_.weight_mode == WeightMode::nsr) return nsr;

    double mean = 0.0;
    for (double w : nsr) mean += w;
    mean /= static_cast<double>(n);
    if (cfg_.weight_mode == WeightMode::mean) return std::vector<double>(n, mean);

    double var = 0.0;
    for (double w : nsr) var += (w - mean) * (w - mean);
    const double std = std::sqrt(var / static_cast<double>(n));
    std::vector<double> out(n);
    for (double& w : out) w = std::clamp(rng.normal(mean, std), kMinWeight, kMaxWeight);
    return out;
  }

  std::vector<double> compute_weights(const Matrix& states) { return compute_weights(states, weight_rng_); }

  // Pre-optimizer gradients of both weighted losses. An empty `weights` span
  // runs the unweighted DDPG losses.
  AgentGradients compute_gradients(const BatchTensors& t, std::span<const double> weights) const {
    AgentGradients g;
    const Matrix states = input_norm_.normalize(t.states);
    const Matrix next_states = input_norm_.normalize(t.next_states);
    const Matrix next_actions = forward_batch(target_actor_, next_states);
    const Matrix next_q = forward_batch(target_critic_, stack_rows(next_states, next_actions));
    Matrix y(1, t.rewards.size());
    for (Eigen::Index i = 0; i < y.cols(); ++i)
      y(0, i) = t.rewards(i) + cfg_.gamma * t.not_terminal(i) * next_q(0, i);
    if (cfg_.clip_target) y = y.cwiseMax(-1.0 / (1.0 - cfg_.gamma)).cwiseMin(0.0);

    auto critic_lg = backward_weighted_scalar_loss(
        critic_, LossKind::weighted_mse, stack_rows(states, t.actions), &y, weights);
    g.critic = std::move(critic_lg.grads);
    g.critic_loss = critic_lg.loss;

    // Actor: chain -w_i/B through the critic's action inputs into mu.
    const ForwardCache actor_cache = forward_cached(actor_, states);
    const ForwardCache q_cache = forward_cached(critic_, stack_rows(states, actor_cache.output()));
    Matrix dq;
    g.actor_loss = loss_output_grad(LossKind::weighted_neg_mean, q_cache.output(), nullptr, weights, dq);
    const Matrix dinput = backward(critic_, q_cache, dq, true).input_grad;
    Matrix daction = dinput.bottomRows(cfg_.action_dim);
    if (cfg_.action_l2 > 0.0) {
      const Matrix& a = actor_cache.output();
      const double inv_b = 1.0 / static_cast<double>(a.cols());
      g.actor_loss += cfg_.action_l2 * a.squaredNorm() * inv_b;
      daction += (2.0 * cfg_.action_l2 * inv_b) * a;
    }
    g.actor = backward(actor_, actor_cache, daction).grads;
    return g;
  }

  UpdateMetrics update(const TransitionBatch& batch, std::span<const double> weights) {
    if (weights.size() != batch.size())
      throw ContractViolation("update: weights length does not match batch");
    for (double w : weights) {
      if (std::isnan(w)) throw NumericInputError("update: NaN weight");
      if (w < kMinWeight || w > kMaxWeight) throw ContractViolation("update: weight outside [1, 3]");
    }
    return apply_update(BatchTensors::from(batch), weights, true);
  }

  // Plain DDPG step: no weighting and no novelty training.
  UpdateMetrics update_unweighted(const TransitionBatch& batch) {
    return apply_update(BatchTensors::from(batch), {}, false);
  }

  // n_batches HER batches, each applied reuse_count times with weights
  // recomputed before every pass.
  std::vector<UpdateMetrics> update_cycle(const ReplayBuffer& buffer, int n_batches, Rng& rng) {
    if (buffer.empty()) throw EmptyBufferError("update_cycle: replay buffer is empty");
    if (n_batches < 1) throw InvalidArgument("update_cycle: n_batches must be >= 1");
    std::vector<UpdateMetrics> out;
    out.reserve(static_cast<std::size_t>(n_batches * cfg_.reuse_count));
    for (int b = 0; b < n_batches; ++b) {
      const TransitionBatch batch = sample_with_her(buffer, static_cast<std::size_t>(cfg_.batch_size),
                                                    cfg_.future_k, cfg_.reward_threshold, rng);
      const BatchTensors t = BatchTensors::from(batch);
      for (int r = 0; r < cfg_.reuse_count; ++r) {
        const auto w = compute_weights(t.states);
        out.push_back(apply_update(t, w, true));
      }
    }
    return out;
  }

  // Reference DDPG-HER cycle that never touches the weighting path.
  std::vector<UpdateMetrics> update_cycle_unweighted(const ReplayBuffer& buffer, int n_batches, Rng& rng) {
    if (buffer.empty()) throw EmptyBufferError("update_cycle: replay buffer is empty");
    std::vector<UpdateMetrics> out;
    for (int b = 0; b < n_batches; ++b) {
      const TransitionBatch batch = sample_with_her(buffer, static_cast<std::size_t>(cfg_.batch_size),
                                                    cfg_.future_k, cfg_.reward_threshold, rng);
      out.push_back(update_unweighted(batch));
    }
    return out;
  }

  nlohmann::json to_json() const;
  static Agent from_json(const nlohmann::json& j);

 private:
  UpdateMetrics apply_update(const BatchTensors& t, std::span<const double> weights, bool train_novelty) {
    AgentGradients g = compute_gradients(t, weights);
    if (!std::isfinite(g.critic_loss) || !std::isfinite(g.actor_loss))
      throw NumericInputError("update: non-finite loss");
    adam_step(critic_, g.critic, cfg_.critic_lr);
    adam_step(actor_, g.actor, cfg_.actor_lr);
    soft_update(target_critic_, critic_, cfg_.tau);
    soft_update(target_actor_, actor_, cfg_.tau);

    UpdateMetrics m;
    m.critic_loss = g.critic_loss;
    m.actor_loss = g.actor_loss;
    if (!weights.empty()) {
      double s = 0.0;
      for (double w : weights) s += w;
      m.mean_weight = s / static_cast<double>(weights.size());
    }
    if (train_novelty) m.rnd_loss = novelty_.train_predictor(t.states);
    ++update_calls_;
    return m;
  }

  AgentConfig cfg_;
  Network actor_, critic_, target_actor_, target_critic_;
  NoveltyEstimator novelty_;
  RunningNormalizer input_norm_;
  Rng weight_rng_;
  std::uint64_t update_calls_ = 0;
};

inline nlohmann::json agent_config_to_json(const AgentConfig& c) {
  return {{"observation_dim", c.observation_dim},
          {"goal_dim", c.goal_dim},
          {"action_dim", c.action_dim},
          {"hidden_width", c.hidden_width},
          {"hidden_layers", c.hidden_layers},
          {"gamma", c.gamma},
          {"tau", c.tau},
          {"actor_lr", c.actor_lr},
          {"critic_lr", c.critic_lr},
          {"action_noise_std", c.action_noise_std},
          {"random_episode_prob", c.random_episode_prob},
          {"weight_mode", to_string(c.weight_mode)},
          {"reuse_count", c.reuse_count},
          {"batch_size", c.batch_size},
          {"future_k", c.future_k},
          {"reward_threshold", c.reward_threshold},
          {"rnd_embed_dim", c.novelty.embed_dim},
          {"rnd_hidden", c.novelty.hidden},
          {"rnd_lr", c.novelty.predictor_lr}};
}

// Missing keys keep their defaults.
inline AgentConfig agent_config_from_json(const nlohmann::json& j, AgentConfig c = {}) {
  try {
    c.observation_dim = j.value("observation_dim", c.observation_dim);
    c.goal_dim = j.value("goal_dim", c.goal_dim);
    c.action_dim = j.value("action_dim", c.action_dim);
    c.hidden_width = j.value("hidden_width", c.hidden_width);
    c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
    c.gamma = j.value("gamma", c.gamma);
    c.tau = j.value("tau", c.tau);
    c.actor_lr = j.value("actor_lr", c.actor_lr);
    c.critic_lr = j.value("critic_lr", c.critic_lr);
    c.action_noise_std = j.value("action_noise_std", c.action_noise_std);
    c.random_episode_prob = j.value("random_episode_prob", c.random_episode_prob);
    if (j.contains("weight_mode")) c.weight_mode = weight_mode_from_string(j["weight_mode"]);
    c.reuse_count = j.value("reuse_count", c.reuse_count);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.future_k = j.value("future_k", c.future_k);
    c.reward_threshold = j.value("reward_threshold", c.reward_threshold);
    c.novelty.embed_dim = j.value("rnd_embed_dim", c.novelty.embed_dim);
    c.novelty.hidden = j.value("rnd_hidden", c.novelty.hidden);
    c.novelty.predictor_lr = j.value("rnd_lr", c.novelty.predictor_lr);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("agent config: ") + e.what());
  }
}

inline nlohmann::json Agent::to_json() const {
  return {{"config", agent_config_to_json(cfg_)},
          {"actor", network_to_json(actor_)},
          {"critic", network_to_json(critic_)},
          {"target_actor", network_to_json(target_actor_)},
          {"target_critic", network_to_json(target_critic_)},
          {"novelty", novelty_.to_json()},
          {"input_normalizer", input_norm_.to_json()},
          {"update_calls", update_calls_}};
}

inline Agent Agent::from_json(const nlohmann::json& j) {
  Agent a(agent_config_from_json(j.at("config")), 0);
  auto load = [](Network& dst, const nlohmann::json& src) {
    Network n = network_from_json(src);
    if (n.layer_dims != dst.layer_dims) throw InvalidArgument("agent checkpoint: shape mismatch");
    dst = std::move(n);
  };
  load(a.actor_, j.at("actor"));
  load(a.critic_, j.at("critic"));
  load(a.target_actor_, j.at("target_actor"));
  load(a.target_critic_, j.at("target_critic"));
  a.novelty_ = NoveltyEstimator::from_json(j.at("novelty"));
  if (j.contains("input_normalizer")) a.input_norm_ = RunningNormalizer::from_json(j["input_normalizer"]);
  a.update_calls_ = j.value("update_calls", std::uint64_t{0});
  return a;
}

}  // namespace nsr
