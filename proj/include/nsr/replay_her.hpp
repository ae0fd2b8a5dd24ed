#pragma once

// Episode replay with hindsight relabeling ("future" strategy) at sample time.

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "nsr/envs.hpp"
#include "nsr/error.hpp"
#include "nsr/rng.hpp"

namespace nsr {

class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int episode_length)
      : capacity_(capacity), episode_length_(episode_length) {
    if (capacity == 0) throw InvalidArgument("ReplayBuffer: capacity must be >= 1");
    if (episode_length < 1) throw InvalidArgument("ReplayBuffer: episode length must be >= 1");
  }

  // Oldest episode is evicted once capacity is exceeded.
  void store_episode(Episode episode) {
    if (static_cast<int>(episode.size()) != episode_length_)
      throw InvalidArgument("store_episode: episode has " + std::to_string(episode.size()) +
                            " transitions, expected " + std::to_string(episode_length_));
    episodes_.push_back(std::move(episode));
    if (episodes_.size() > capacity_) episodes_.pop_front();
    ++total_stored_;
  }

  std::size_t size() const { return episodes_.size(); }
  bool empty() const { return episodes_.empty(); }
  std::size_t capacity() const { return capacity_; }
  int episode_length() const { return episode_length_; }
  std::uint64_t total_stored() const { return total_stored_; }
  const Episode& episode(std::size_t i) const { return episodes_.at(i); }

 private:
  std::size_t capacity_;
  int episode_length_;
  std::deque<Episode> episodes_;
  std::uint64_t total_stored_ = 0;
};

// Transition t with its goal replaced by the achieved goal reached after
// step `future_index`, and the reward recomputed for that goal.
inline Transition her_relabel(const Episode& episode, int t, int future_index, double threshold) {
  const int n = static_cast<int>(episode.size());
  if (t < 0 || t >= n || future_index < t || future_index >= n)
    throw InvalidArgument("her_relabel: need 0 <= t <= future_index < " + std::to_string(n));
  Transition tr = episode[static_cast<std::size_t>(t)];
  const auto& goal = episode[static_cast<std::size_t>(future_index)].next_state.achieved_goal;
  tr.state.desired_goal = goal;
  tr.next_state.desired_goal = goal;
  tr.reward = compute_reward(tr.next_state.achieved_goal, goal, threshold);
  tr.success = tr.reward == 0.0;
  return tr;
}

struct TransitionBatch {
  std::vector<std::vector<double>> observations;
  std::vector<std::vector<double>> actions;
  std::vector<double> rewards;
  std::vector<std::vector<double>> next_observations;
  std::vector<std::vector<double>> desired_goals;  // after relabeling
  std::vector<std::vector<double>> next_achieved_goals;
  std::vector<bool> terminal;  // always false for fixed-horizon episodes
  std::vector<bool> relabeled;
  std::vector<std::size_t> episode_indices;
  std::vector<int> time_indices;

  std::size_t size() const { return rewards.size(); }

  void reserve(std::size_t n) {
    observations.reserve(n);
    actions.reserve(n);
    rewards.reserve(n);
    next_observations.reserve(n);
    desired_goals.reserve(n);
    next_achieved_goals.reserve(n);
    terminal.reserve(n);
    relabeled.reserve(n);
    episode_indices.reserve(n);
    time_indices.reserve(n);
  }
};

// Uniform (episode, t) draws; each is relabeled with probability
// future_k / (future_k + 1) to a future index drawn uniformly from
// [t, episode_length).
inline TransitionBatch sample_with_her(const ReplayBuffer& buffer, std::size_t batch_size,
                                       double future_k, double threshold, Rng& rng) {
  if (buffer.empty()) throw EmptyBufferError("sample_with_her: replay buffer is empty");
  if (batch_size == 0) throw InvalidArgument("sample_with_her: batch_size must be >= 1");
  if (!(future_k >= 0.0)) throw InvalidArgument("sample_with_her: future_k must be >= 0");
  const double relabel_p = future_k / (future_k + 1.0);
  const int T = buffer.episode_length();

  TransitionBatch b;
  b.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t e = static_cast<std::size_t>(rng.below(buffer.size()));
    const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(T)));
    const bool relabel = rng.uniform() < relabel_p;
    const Episode& ep = buffer.episode(e);
    const Transition& tr = ep[static_cast<std::size_t>(t)];

    b.observations.push_back(tr.state.observation);
    b.actions.push_back(tr.action);
    b.next_observations.push_back(tr.next_state.observation);
    b.next_achieved_goals.push_back(tr.next_state.achieved_goal);
    if (relabel) {
      const int future = t + static_cast<int>(rng.below(static_cast<std::uint64_t>(T - t)));
      const auto& goal = ep[static_cast<std::size_t>(future)].next_state.achieved_goal;
      b.desired_goals.push_back(goal);
      b.rewards.push_back(compute_reward(tr.next_state.achieved_goal, goal, threshold));
    } else {
      b.desired_goals.push_back(tr.state.desired_goal);
      b.rewards.push_back(tr.reward);
    }
    b.terminal.push_back(false);
    b.relabeled.push_back(relabel);
    b.episode_indices.push_back(e);
    b.time_indices.push_back(t);
  }
  return b;
}

inline TransitionBatch sample_with_her(const ReplayBuffer& buffer, std::size_t batch_size,
                                       double future_k, double threshold, std::uint64_t seed) {
  Rng rng(seed);
  return sample_with_her(buffer, batch_size, future_k, threshold, rng);
}

}  // namespace nsr
