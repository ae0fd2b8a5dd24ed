#pragma once

// Kinematic goal-conditioned manipulation tasks with sparse rewards.
//
// The gripper is a point that moves by action_scale * clamp(action) per step.
// Push: the object follows the gripper's horizontal displacement whenever the
// gripper is within contact_radius of it (horizontal distance) before or after
// the move. Pick-and-place: the
// object attaches while the gripper command (action[3]) is > 0.5 and the
// gripper is within grasp_radius, then follows the gripper in 3D.
// Episodes have a fixed horizon; reward is 0 on success and -1 otherwise.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsr/error.hpp"
#include "nsr/rng.hpp"

namespace nsr {

using Vec3 = std::array<double, 3>;

enum class Task { reach, push, pick_and_place };

inline std::string to_string(Task t) {
  switch (t) {
    case Task::reach: return "reach";
    case Task::push: return "push";
    case Task::pick_and_place: return "pick_and_place";
  }
  return "reach";
}

inline Task task_from_string(const std::string& s) {
  if (s == "reach") return Task::reach;
  if (s == "push") return Task::push;
  if (s == "pick_and_place" || s == "pick") return Task::pick_and_place;
  throw InvalidArgument("unknown task '" + s + "' (expected reach, push or pick_and_place)");
}

struct EnvSpec {
  Task task = Task::reach;
  Vec3 workspace_lo{0.0, 0.0, 0.0};
  Vec3 workspace_hi{1.0, 1.0, 1.0};
  int action_dim = 3;
  int max_episode_steps = 30;
  double success_threshold = 0.05;
  double action_scale = 0.05;
  double contact_radius = 0.05;
  double grasp_radius = 0.05;
  Vec3 gripper_start{0.5, 0.5, 0.5};
  double table_height = 0.1;
  // Half-widths of the sampling boxes centred on the gripper start.
  double object_range = 0.15;
  double goal_range = 0.15;
  // Pick-and-place goals are lifted up to this height above the table.
  double goal_max_lift = 0.2;

  int observation_dim() const {
    switch (task) {
      case Task::reach: return 6;
      case Task::push: return 15;
      case Task::pick_and_place: return 16;
    }
    return 6;
  }
  static constexpr int goal_dim() { return 3; }

  void validate() const {
    if (max_episode_steps < 1) throw ValidationError("env: max_episode_steps must be >= 1");
    if (!(success_threshold > 0.0)) throw ValidationError("env: success_threshold must be > 0");
    if (!(action_scale > 0.0)) throw ValidationError("env: action_scale must be > 0");
    for (int k = 0; k < 3; ++k)
      if (!(workspace_lo[k] < workspace_hi[k])) throw ValidationError("env: empty workspace box");
    const int expected = task == Task::reach ? 3 : 4;
    if (action_dim != expected)
      throw ValidationError("env: action_dim must be " + std::to_string(expected) + " for " +
                            to_string(task));
  }
};

// Default geometry for each task. Reach starts the gripper mid-air; push and
// pick-and-place start it at table height next to the object.
inline EnvSpec make_env_spec(Task task, int max_episode_steps = 30) {
  EnvSpec s;
  s.task = task;
  s.max_episode_steps = max_episode_steps;
  switch (task) {
    case Task::reach:
      s.action_dim = 3;
      s.gripper_start = {0.5, 0.5, 0.5};
      s.goal_range = 0.3;
      break;
    case Task::push:
      s.action_dim = 4;
      s.gripper_start = {0.5, 0.5, s.table_height};
      // A small table keeps the gripper near the object so contact is common.
      s.workspace_lo = {0.38, 0.38, s.table_height - 0.05};
      s.workspace_hi = {0.62, 0.62, s.table_height + 0.05};
      s.object_range = 0.1;
      s.goal_range = 0.1;
      break;
    case Task::pick_and_place:
      s.action_dim = 4;
      s.gripper_start = {0.5, 0.5, s.table_height};
      s.workspace_lo[0] = s.workspace_lo[1] = 0.38;
      s.workspace_hi[0] = s.workspace_hi[1] = 0.62;
      s.object_range = 0.1;
      s.goal_range = 0.1;
      break;
  }
  return s;
}

struct GoalObservation {
  std::vector<double> observation;
  std::vector<double> achieved_goal;
  std::vector<double> desired_goal;

  bool operator==(const GoalObservation&) const = default;
};

struct Transition {
  GoalObservation state;
  std::vector<double> action;
  double reward = -1.0;
  GoalObservation next_state;
  bool done = false;
  bool success = false;

  bool operator==(const Transition&) const = default;
};

using Episode = std::vector<Transition>;

inline double goal_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("goal_distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Sparse reward: 0 when ||achieved - desired|| <= threshold, else -1.
inline double compute_reward(std::span<const double> achieved, std::span<const double> desired,
                             double threshold) {
  if (achieved.size() != desired.size())
    throw InvalidArgument("compute_reward: achieved and desired goals differ in length");
  if (!(threshold > 0.0)) throw InvalidArgument("compute_reward: threshold must be > 0");
  return goal_distance(achieved, desired) <= threshold ? 0.0 : -1.0;
}

struct EnvState {
  EnvSpec spec;
  Vec3 gripper{};
  Vec3 object{};
  Vec3 goal{};
  Vec3 gripper_velocity{};
  Vec3 object_velocity{};
  bool attached = false;
  int t = 0;
  bool done = false;

  Vec3 achieved() const { return spec.task == Task::reach ? gripper : object; }

  GoalObservation observe() const {
    GoalObservation o;
    auto& obs = o.observation;
    obs.reserve(static_cast<std::size_t>(spec.observation_dim()));
    obs.insert(obs.end(), gripper.begin(), gripper.end());
    if (spec.task != Task::reach) {
      obs.insert(obs.end(), object.begin(), object.end());
      for (int k = 0; k < 3; ++k) obs.push_back(object[k] - gripper[k]);
      obs.insert(obs.end(), object_velocity.begin(), object_velocity.end());
    }
    obs.insert(obs.end(), gripper_velocity.begin(), gripper_velocity.end());
    if (spec.task == Task::pick_and_place) obs.push_back(attached ? 1.0 : 0.0);
    const Vec3 a = achieved();
    o.achieved_goal.assign(a.begin(), a.end());
    o.desired_goal.assign(goal.begin(), goal.end());
    return o;
  }
};

namespace detail {

inline Vec3 clamp_to_box(Vec3 p, const EnvSpec& s) {
  for (int k = 0; k < 3; ++k) p[k] = std::clamp(p[k], s.workspace_lo[k], s.workspace_hi[k]);
  return p;
}

inline Vec3 sample_around(Rng& rng, const Vec3& centre, double half, const EnvSpec& s, bool planar) {
  Vec3 p = centre;
  for (int k = 0; k < (planar ? 2 : 3); ++k) p[k] = centre[k] + rng.uniform(-half, half);
  return clamp_to_box(p, s);
}

inline double dist3(const Vec3& a, const Vec3& b) { return goal_distance(a, b); }

inline double planar_dist(const Vec3& a, const Vec3& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

}  // namespace detail

// Gripper at its fixed start; object and goal drawn from `seed`, resampled
// until the goal is farther than success_threshold from the achieved goal
// (and, with an object, the object is out of the gripper's reach).
inline EnvState reset(const EnvSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  EnvState st;
  st.spec = spec;
  st.gripper = detail::clamp_to_box(spec.gripper_start, spec);
  if (spec.task != Task::reach) {
    const double min_gap = std::max(spec.contact_radius, spec.grasp_radius);
    do {
      st.object = detail::sample_around(rng, st.gripper, spec.object_range, spec, true);
      st.object[2] = spec.table_height;
    } while (detail::dist3(st.object, st.gripper) <= min_gap);
  }
  do {
    switch (spec.task) {
      case Task::reach:
        st.goal = detail::sample_around(rng, st.gripper, spec.goal_range, spec, false);
        break;
      case Task::push:
        st.goal = detail::sample_around(rng, st.gripper, spec.goal_range, spec, true);
        st.goal[2] = spec.table_height;
        break;
      case Task::pick_and_place:
        st.goal = detail::sample_around(rng, st.gripper, spec.goal_range, spec, true);
        st.goal[2] = spec.table_height + rng.uniform(0.0, spec.goal_max_lift);
        st.goal = detail::clamp_to_box(st.goal, spec);
        break;
    }
  } while (detail::dist3(st.goal, st.achieved()) <= spec.success_threshold);
  return st;
}

inline Transition step(EnvState& st, std::span<const double> action) {
  const EnvSpec& s = st.spec;
  if (st.done) throw ContractViolation("step: episode already finished");
  if (static_cast<int>(action.size()) != s.action_dim)
    throw InvalidArgument("step: action has length " + std::to_string(action.size()) +
                          ", expected " + std::to_string(s.action_dim));
  std::vector<double> a(action.begin(), action.end());
  for (double& x : a) {
    if (!std::isfinite(x)) throw NumericInputError("step: non-finite action");
    x = std::clamp(x, -1.0, 1.0);
  }

  Transition tr;
  tr.state = st.observe();
  tr.action = a;

  const Vec3 old_gripper = st.gripper;
  const Vec3 old_object = st.object;
  Vec3 target = old_gripper;
  for (int k = 0; k < 3; ++k) target[k] += s.action_scale * a[k];
  st.gripper = detail::clamp_to_box(target, s);
  Vec3 disp{};
  for (int k = 0; k < 3; ++k) disp[k] = st.gripper[k] - old_gripper[k];

  if (s.task == Task::push) {
    if (detail::planar_dist(old_gripper, old_object) <= s.contact_radius ||
        detail::planar_dist(st.gripper, old_object) <= s.contact_radius) {
      st.object[0] += disp[0];
      st.object[1] += disp[1];
      st.object = detail::clamp_to_box(st.object, s);
    }
  } else if (s.task == Task::pick_and_place) {
    const bool closing = a[3] > 0.5;
    if (!closing) {
      st.attached = false;
    } else if (!st.attached && detail::dist3(old_gripper, old_object) <= s.grasp_radius) {
      st.attached = true;
    }
    if (st.attached) {
      for (int k = 0; k < 3; ++k) st.object[k] += disp[k];
      st.object = detail::clamp_to_box(st.object, s);
    }
  }
  st.gripper_velocity = disp;
  for (int k = 0; k < 3; ++k) st.object_velocity[k] = st.object[k] - old_object[k];

  ++st.t;
  st.done = st.t >= s.max_episode_steps;
  tr.next_state = st.observe();
  tr.reward = compute_reward(tr.next_state.achieved_goal, tr.next_state.desired_goal,
                             s.success_threshold);
  tr.success = tr.reward == 0.0;
  tr.done = st.done;
  return tr;
}

// ---- serialization ----

inline nlohmann::json env_spec_to_json(const EnvSpec& s) {
  return {{"task", to_string(s.task)},
          {"workspace_lo", s.workspace_lo},
          {"workspace_hi", s.workspace_hi},
          {"action_dim", s.action_dim},
          {"max_episode_steps", s.max_episode_steps},
          {"success_threshold", s.success_threshold},
          {"action_scale", s.action_scale},
          {"contact_radius", s.contact_radius},
          {"grasp_radius", s.grasp_radius},
          {"gripper_start", s.gripper_start},
          {"table_height", s.table_height},
          {"object_range", s.object_range},
          {"goal_range", s.goal_range},
          {"goal_max_lift", s.goal_max_lift}};
}

// Missing keys fall back to the task defaults from make_env_spec.
inline EnvSpec env_spec_from_json(const nlohmann::json& j) {
  try {
    EnvSpec s = make_env_spec(task_from_string(j.value("task", std::string("reach"))),
                              j.value("max_episode_steps", 30));
    s.workspace_lo = j.value("workspace_lo", s.workspace_lo);
    s.workspace_hi = j.value("workspace_hi", s.workspace_hi);
    s.action_dim = j.value("action_dim", s.action_dim);
    s.success_threshold = j.value("success_threshold", s.success_threshold);
    s.action_scale = j.value("action_scale", s.action_scale);
    s.contact_radius = j.value("contact_radius", s.contact_radius);
    s.grasp_radius = j.value("grasp_radius", s.grasp_radius);
    s.gripper_start = j.value("gripper_start", s.gripper_start);
    s.table_height = j.value("table_height", s.table_height);
    s.object_range = j.value("object_range", s.object_range);
    s.goal_range = j.value("goal_range", s.goal_range);
    s.goal_max_lift = j.value("goal_max_lift", s.goal_max_lift);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("env spec: ") + e.what());
  }
}

inline nlohmann::json goal_observation_to_json(const GoalObservation& o) {
  return {{"observation", o.observation},
          {"achieved_goal", o.achieved_goal},
          {"desired_goal", o.desired_goal}};
}

inline GoalObservation goal_observation_from_json(const nlohmann::json& j) {
  return {j.at("observation").get<std::vector<double>>(),
          j.at("achieved_goal").get<std::vector<double>>(),
          j.at("desired_goal").get<std::vector<double>>()};
}

inline nlohmann::json transition_to_json(const Transition& t) {
  return {{"state", goal_observation_to_json(t.state)},
          {"action", t.action},
          {"reward", t.reward},
          {"next_state", goal_observation_to_json(t.next_state)},
          {"done", t.done},
          {"success", t.success}};
}

inline Transition transition_from_json(const nlohmann::json& j) {
  Transition t;
  t.state = goal_observation_from_json(j.at("state"));
  t.action = j.at("action").get<std::vector<double>>();
  t.reward = j.at("reward").get<double>();
  t.next_state = goal_observation_from_json(j.at("next_state"));
  t.done = j.at("done").get<bool>();
  t.success = j.at("success").get<bool>();
  return t;
}

// JSON-lines: one transition per line.
inline void write_jsonl(std::ostream& out, const Episode& episode) {
  for (const auto& t : episode) out << transition_to_json(t).dump() << '\n';
}

}  // namespace nsr
