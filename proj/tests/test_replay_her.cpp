#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "nsr/replay_her.hpp"
#include "support.hpp"

using namespace nsr;
using nsr::testing::random_buffer;
using nsr::testing::random_episode;

TEST(ReplayHer, StoreAndEvict) {
  const EnvSpec s = make_env_spec(Task::reach, 5);
  ReplayBuffer buf(2, 5);
  EXPECT_THROW(sample_with_her(buf, 4, 4.0, 0.05, 1ULL), EmptyBufferError);
  const Episode a = random_episode(s, 1), b = random_episode(s, 2), c = random_episode(s, 3);
  buf.store_episode(a);
  buf.store_episode(b);
  buf.store_episode(c);
  EXPECT_EQ(buf.size(), 2u);
  EXPECT_EQ(buf.total_stored(), 3u);
  EXPECT_EQ(buf.episode(0), b);
  EXPECT_EQ(buf.episode(1), c);
  EXPECT_THROW(buf.store_episode(Episode(a.begin(), a.end() - 1)), InvalidArgument);
  EXPECT_THROW(ReplayBuffer(0, 5), InvalidArgument);
}

TEST(ReplayHer, SelfRelabelGivesZeroReward) {
  const EnvSpec s = make_env_spec(Task::push);
  const Episode ep = random_episode(s, 4);
  for (int t = 0; t < static_cast<int>(ep.size()); ++t) {
    const Transition tr = her_relabel(ep, t, t, s.success_threshold);
    EXPECT_EQ(tr.reward, 0.0);
    EXPECT_TRUE(tr.success);
    EXPECT_EQ(tr.state.desired_goal, ep[static_cast<std::size_t>(t)].next_state.achieved_goal);
  }
  EXPECT_THROW(her_relabel(ep, 3, 2, s.success_threshold), InvalidArgument);
  EXPECT_THROW(her_relabel(ep, 0, static_cast<int>(ep.size()), s.success_threshold), InvalidArgument);
}

TEST(ReplayHer, RelabelFractionMatchesFutureK) {
  const EnvSpec s = make_env_spec(Task::reach);
  const ReplayBuffer buf = random_buffer(s, 20, 5);
  Rng rng(6);
  const auto batch = sample_with_her(buf, 10000, 4.0, s.success_threshold, rng);
  std::size_t relabeled = 0;
  for (bool r : batch.relabeled) relabeled += r ? 1 : 0;
  EXPECT_NEAR(static_cast<double>(relabeled) / 10000.0, 0.8, 0.02);

  const auto none = sample_with_her(buf, 500, 0.0, s.success_threshold, rng);
  for (bool r : none.relabeled) EXPECT_FALSE(r);
}

TEST(ReplayHer, RewardsAgreeWithRecomputation) {
  for (Task task : {Task::reach, Task::push, Task::pick_and_place}) {
    const EnvSpec s = make_env_spec(task);
    const ReplayBuffer buf = random_buffer(s, 10, 7);
    const auto b = sample_with_her(buf, 2000, 4.0, s.success_threshold, 8ULL);
    ASSERT_EQ(b.size(), 2000u);
    for (std::size_t i = 0; i < b.size(); ++i) {
      ASSERT_EQ(b.rewards[i], compute_reward(b.next_achieved_goals[i], b.desired_goals[i], s.success_threshold));
      ASSERT_FALSE(b.terminal[i]);
      const Transition& src = buf.episode(b.episode_indices[i])[static_cast<std::size_t>(b.time_indices[i])];
      ASSERT_EQ(b.observations[i], src.state.observation);
      ASSERT_EQ(b.actions[i], src.action);
      if (!b.relabeled[i]) ASSERT_EQ(b.desired_goals[i], src.state.desired_goal);
    }
  }
}

TEST(ReplayHer, RelabeledGoalComesFromSameEpisodeFuture) {
  const EnvSpec s = make_env_spec(Task::reach, 10);
  const ReplayBuffer buf = random_buffer(s, 5, 9);
  const auto b = sample_with_her(buf, 3000, 4.0, s.success_threshold, 10ULL);
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (!b.relabeled[i]) continue;
    const Episode& ep = buf.episode(b.episode_indices[i]);
    bool found = false;
    for (std::size_t f = static_cast<std::size_t>(b.time_indices[i]); f < ep.size() && !found; ++f)
      found = ep[f].next_state.achieved_goal == b.desired_goals[i];
    EXPECT_TRUE(found);
  }
}

TEST(ReplayHer, SamplingIsUniformWithinThreeSigma) {
  const EnvSpec s = make_env_spec(Task::reach, 10);
  const ReplayBuffer buf = random_buffer(s, 8, 11);
  const std::size_t n = 40000;
  const auto b = sample_with_her(buf, n, 4.0, s.success_threshold, 12ULL);
  std::map<std::pair<std::size_t, int>, int> counts;
  for (std::size_t i = 0; i < n; ++i) ++counts[{b.episode_indices[i], b.time_indices[i]}];
  const double cells = 8.0 * 10.0;
  ASSERT_EQ(counts.size(), static_cast<std::size_t>(cells));
  const double p = 1.0 / cells;
  const double mean = static_cast<double>(n) * p;
  const double sigma = std::sqrt(static_cast<double>(n) * p * (1.0 - p));
  int outside = 0;
  for (const auto& [key, c] : counts) outside += std::abs(c - mean) > 3.0 * sigma ? 1 : 0;
  // 3 sigma holds for ~99.7% of cells; allow one stray out of 80.
  EXPECT_LE(outside, 1);
}

TEST(ReplayHer, SamplingDoesNotMutateBuffer) {
  const EnvSpec s = make_env_spec(Task::push);
  const ReplayBuffer buf = random_buffer(s, 6, 13);
  std::vector<Episode> before;
  for (std::size_t i = 0; i < buf.size(); ++i) before.push_back(buf.episode(i));
  sample_with_her(buf, 1000, 4.0, s.success_threshold, 14ULL);
  for (std::size_t i = 0; i < buf.size(); ++i) EXPECT_EQ(buf.episode(i), before[i]);
}

TEST(ReplayHer, SeededSamplingIsDeterministic) {
  const EnvSpec s = make_env_spec(Task::reach);
  const ReplayBuffer buf = random_buffer(s, 6, 15);
  const auto a = sample_with_her(buf, 256, 4.0, s.success_threshold, 16ULL);
  const auto b = sample_with_her(buf, 256, 4.0, s.success_threshold, 16ULL);
  EXPECT_EQ(a.desired_goals, b.desired_goals);
  EXPECT_EQ(a.rewards, b.rewards);
  EXPECT_EQ(a.time_indices, b.time_indices);
  EXPECT_THROW(sample_with_her(buf, 0, 4.0, s.success_threshold, 1ULL), InvalidArgument);
  EXPECT_THROW(sample_with_her(buf, 4, -1.0, s.success_threshold, 1ULL), InvalidArgument);
}
