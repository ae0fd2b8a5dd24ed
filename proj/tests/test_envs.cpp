#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "nsr/envs.hpp"
#include "support.hpp"

using namespace nsr;

namespace {

bool inside(const Vec3& p, const EnvSpec& s) {
  for (int k = 0; k < 3; ++k)
    if (p[k] < s.workspace_lo[k] || p[k] > s.workspace_hi[k]) return false;
  return true;
}

const Task kTasks[] = {Task::reach, Task::push, Task::pick_and_place};

}  // namespace

TEST(Envs, TaskNames) {
  for (Task t : kTasks) EXPECT_EQ(task_from_string(to_string(t)), t);
  EXPECT_THROW(task_from_string("slide"), InvalidArgument);
}

TEST(Envs, RewardBoundary) {
  const std::vector<double> o{0.0, 0.0, 0.0};
  EXPECT_EQ(compute_reward(o, o, 0.05), 0.0);
  // 3-4-5 triangle scaled so the distance is exactly representable.
  const std::vector<double> at{0.375, 0.5, 0.0};  // distance 0.625
  EXPECT_EQ(compute_reward(at, o, 0.625), 0.0);
  EXPECT_EQ(compute_reward(at, o, std::nextafter(0.625, 0.0)), -1.0);
  const std::vector<double> twice{0.1, 0.0, 0.0};
  EXPECT_EQ(compute_reward(twice, o, 0.05), -1.0);
  const std::vector<double> two{0.0, 0.0};
  EXPECT_THROW(compute_reward(two, o, 0.05), InvalidArgument);
  EXPECT_THROW(compute_reward(o, o, 0.0), InvalidArgument);
}

TEST(Envs, ResetIsDeterministic) {
  for (Task t : kTasks) {
    const EnvSpec s = make_env_spec(t);
    for (std::uint64_t seed : {0ULL, 1ULL, 12345ULL}) {
      EXPECT_EQ(reset(s, seed).observe(), reset(s, seed).observe());
    }
    EXPECT_NE(reset(s, 1).observe(), reset(s, 2).observe());
  }
}

TEST(Envs, ResetInvariants) {
  for (Task t : kTasks) {
    const EnvSpec s = make_env_spec(t);
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
      const EnvState st = reset(s, seed);
      const GoalObservation o = st.observe();
      ASSERT_EQ(static_cast<int>(o.observation.size()), s.observation_dim());
      ASSERT_EQ(o.achieved_goal.size(), 3u);
      ASSERT_EQ(o.desired_goal.size(), 3u);
      EXPECT_GT(goal_distance(o.achieved_goal, o.desired_goal), s.success_threshold);
      EXPECT_TRUE(inside(st.gripper, s));
      EXPECT_TRUE(inside(st.goal, s));
      if (t != Task::reach) EXPECT_TRUE(inside(st.object, s));
      EXPECT_EQ(st.gripper, s.gripper_start);
    }
  }
  EXPECT_TRUE(inside(reset(make_env_spec(Task::push), 3).object, make_env_spec(Task::push)));
}

TEST(Envs, ZeroActionKeepsGripper) {
  for (Task t : kTasks) {
    const EnvSpec s = make_env_spec(t);
    EnvState st = reset(s, 4);
    const Vec3 g = st.gripper;
    const Vec3 obj = st.object;
    step(st, std::vector<double>(static_cast<std::size_t>(s.action_dim), 0.0));
    EXPECT_EQ(st.gripper, g);
    EXPECT_EQ(st.object, obj);
  }
}

TEST(Envs, ActionIsClampedAndScaled) {
  const EnvSpec s = make_env_spec(Task::reach);
  EnvState st = reset(s, 0);
  const Vec3 g = st.gripper;
  step(st, std::vector<double>{5.0, -0.5, 0.0});
  EXPECT_DOUBLE_EQ(st.gripper[0], g[0] + s.action_scale);
  EXPECT_DOUBLE_EQ(st.gripper[1], g[1] - 0.5 * s.action_scale);
  EXPECT_DOUBLE_EQ(st.gripper[2], g[2]);
}

TEST(Envs, OneStepToGoalSucceeds) {
  const EnvSpec s = make_env_spec(Task::reach);
  EnvState st = reset(s, 0);
  // Goal one action_scale away along a unit direction.
  const double d[3] = {0.6, 0.0, 0.8};
  for (int k = 0; k < 3; ++k) st.goal[k] = st.gripper[k] + s.action_scale * d[k];
  const Transition tr = step(st, std::vector<double>{d[0], d[1], d[2]});
  EXPECT_LE(goal_distance(tr.next_state.achieved_goal, tr.next_state.desired_goal), 1e-12);
  EXPECT_TRUE(tr.success);
  EXPECT_EQ(tr.reward, 0.0);
  EXPECT_FALSE(tr.done);
}

TEST(Envs, FixedHorizonAndStepAfterDone) {
  for (Task t : kTasks) {
    const EnvSpec s = make_env_spec(t, 7);
    EnvState st = reset(s, 1);
    const std::vector<double> a(static_cast<std::size_t>(s.action_dim), 0.3);
    for (int i = 0; i < 7; ++i) {
      const Transition tr = step(st, a);
      EXPECT_EQ(tr.done, i == 6);
      EXPECT_TRUE(tr.reward == 0.0 || tr.reward == -1.0);
      EXPECT_EQ(tr.success, tr.reward == 0.0);
    }
    EXPECT_THROW(step(st, a), ContractViolation);
  }
}

TEST(Envs, StepRejectsBadActions) {
  EnvState st = reset(make_env_spec(Task::push), 0);
  EXPECT_THROW(step(st, std::vector<double>{0.0, 0.0, 0.0}), InvalidArgument);
  EXPECT_THROW(step(st, std::vector<double>{0.0, std::numeric_limits<double>::quiet_NaN(), 0.0, 0.0}),
               NumericInputError);
}

TEST(Envs, SameActionsSameTrajectory) {
  for (Task t : kTasks) {
    const EnvSpec s = make_env_spec(t);
    EXPECT_EQ(nsr::testing::random_episode(s, 9), nsr::testing::random_episode(s, 9));
  }
}

TEST(Envs, RandomRolloutsStayInBounds) {
  for (Task t : kTasks) {
    const EnvSpec s = make_env_spec(t);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const Episode ep = nsr::testing::random_episode(s, seed);
      ASSERT_EQ(static_cast<int>(ep.size()), s.max_episode_steps);
      for (const auto& tr : ep) {
        for (double x : tr.next_state.observation) ASSERT_TRUE(std::isfinite(x));
        Vec3 ag{tr.next_state.achieved_goal[0], tr.next_state.achieved_goal[1], tr.next_state.achieved_goal[2]};
        ASSERT_TRUE(inside(ag, s));
        ASSERT_EQ(tr.reward, compute_reward(tr.next_state.achieved_goal, tr.next_state.desired_goal,
                                            s.success_threshold));
      }
    }
  }
}

TEST(Envs, PushMovesObjectOnlyInContact) {
  const EnvSpec s = make_env_spec(Task::push);
  EnvState st = reset(s, 2);
  st.gripper = {0.5, 0.5, s.table_height};
  st.object = {0.5 + 0.5 * s.contact_radius, 0.5, s.table_height};
  step(st, std::vector<double>{1.0, 0.0, 0.0, 0.0});
  EXPECT_DOUBLE_EQ(st.object[0], 0.5 + 0.5 * s.contact_radius + s.action_scale);
  EXPECT_DOUBLE_EQ(st.object[1], 0.5);

  EnvState far = reset(s, 2);
  far.gripper = {0.4, 0.4, s.table_height};
  far.object = {0.6, 0.6, s.table_height};
  const Vec3 before = far.object;
  step(far, std::vector<double>{-1.0, 0.0, 0.0, 0.0});
  EXPECT_EQ(far.object, before);
}

TEST(Envs, PickAttachesOnlyWhenClosedNearby) {
  const EnvSpec s = make_env_spec(Task::pick_and_place);
  EnvState st = reset(s, 5);
  st.gripper = {0.5, 0.5, s.table_height};
  st.object = {0.5 + 0.5 * s.grasp_radius, 0.5, s.table_height};
  const Vec3 obj = st.object;

  step(st, std::vector<double>{0.0, 0.0, 1.0, 0.0});  // open: object stays
  EXPECT_EQ(st.object, obj);
  EXPECT_FALSE(st.attached);

  st.gripper = {0.5, 0.5, s.table_height};
  step(st, std::vector<double>{0.0, 0.0, 1.0, 1.0});  // close: lifts
  EXPECT_TRUE(st.attached);
  EXPECT_DOUBLE_EQ(st.object[2], s.table_height + s.action_scale);

  step(st, std::vector<double>{0.0, 0.0, 1.0, 0.5});  // 0.5 is not > 0.5: release
  EXPECT_FALSE(st.attached);
  EXPECT_DOUBLE_EQ(st.object[2], s.table_height + s.action_scale);
}

TEST(Envs, SpecValidation) {
  EnvSpec s = make_env_spec(Task::reach);
  s.max_episode_steps = 0;
  EXPECT_THROW(s.validate(), ValidationError);
  s = make_env_spec(Task::reach);
  s.success_threshold = 0.0;
  EXPECT_THROW(reset(s, 0), ValidationError);
  s = make_env_spec(Task::push);
  s.action_dim = 3;
  EXPECT_THROW(s.validate(), ValidationError);
}

TEST(Envs, SpecAndTransitionJsonRoundTrip) {
  const EnvSpec s = make_env_spec(Task::pick_and_place, 12);
  const EnvSpec back = env_spec_from_json(nlohmann::json::parse(env_spec_to_json(s).dump()));
  EXPECT_EQ(env_spec_to_json(back), env_spec_to_json(s));

  const Episode ep = nsr::testing::random_episode(s, 3);
  std::ostringstream os;
  write_jsonl(os, ep);
  std::istringstream is(os.str());
  std::string line;
  std::size_t i = 0;
  while (std::getline(is, line)) {
    ASSERT_LT(i, ep.size());
    EXPECT_EQ(transition_from_json(nlohmann::json::parse(line)), ep[i]);
    ++i;
  }
  EXPECT_EQ(i, ep.size());
}
