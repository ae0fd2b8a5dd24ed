#pragma once

// Seeded experiment loop: epochs -> cycles -> (episodes, update cycle),
// deterministic evaluation after each epoch, CSV/JSON emission.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <system_error>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsr/agent.hpp"
#include "nsr/envs.hpp"
#include "nsr/error.hpp"
#include "nsr/replay_her.hpp"
#include "nsr/rng.hpp"

namespace nsr {

inline constexpr const char* kCodeVersion = "nsr-1.0.0";

struct RunConfig {
  EnvSpec env = make_env_spec(Task::reach);
  AgentConfig agent;
  int epochs = 30;
  int cycles_per_epoch = 10;
  int episodes_per_cycle = 4;
  int updates_per_cycle = 40;
  int eval_episodes = 20;
  int buffer_capacity = 1000;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string out_dir;   // empty: nothing is written
  std::string group = "custom";
  std::string run_name;  // empty: derived from task/mode/reuse
  int jobs = 1;

  WeightMode weight_mode() const { return agent.weight_mode; }
  int reuse_count() const { return agent.reuse_count; }

  std::string resolved_run_name() const {
    if (!run_name.empty()) return run_name;
    return to_string(env.task) + "_" + to_string(agent.weight_mode) + "_r" +
           std::to_string(agent.reuse_count);
  }

  std::filesystem::path run_dir() const {
    return std::filesystem::path(out_dir) / group / resolved_run_name();
  }

  // Fills the agent's environment-derived fields.
  AgentConfig resolved_agent() const {
    AgentConfig a = agent;
    a.observation_dim = env.observation_dim();
    a.goal_dim = EnvSpec::goal_dim();
    a.action_dim = env.action_dim;
    a.reward_threshold = env.success_threshold;
    return a;
  }

  // Throws ValidationError listing every violated constraint.
  void validate() const {
    std::vector<std::string> errs;
    auto need = [&](bool ok, const std::string& msg) {
      if (!ok) errs.push_back(msg);
    };
    need(epochs >= 1, "epochs must be >= 1");
    need(cycles_per_epoch >= 1, "cycles_per_epoch must be >= 1");
    need(episodes_per_cycle >= 1, "episodes_per_cycle must be >= 1");
    need(updates_per_cycle >= 1, "updates_per_cycle must be >= 1");
    need(eval_episodes >= 1, "eval_episodes must be >= 1");
    need(buffer_capacity >= 1, "buffer_capacity must be >= 1");
    need(!seeds.empty(), "seeds must be nonempty");
    need(jobs >= 1, "jobs must be >= 1");
    need(run_name.find('/') == std::string::npos, "run_name must not contain '/'");
    try {
      env.validate();
    } catch (const Error& e) {
      errs.push_back(e.what());
    }
    try {
      resolved_agent().validate();
    } catch (const Error& e) {
      errs.push_back(e.what());
    }
    if (errs.empty()) return;
    std::string msg = "invalid run config:";
    for (const auto& e : errs) msg += " " + e + ";";
    throw ValidationError(msg);
  }
};

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  return {{"env", env_spec_to_json(c.env)},
          {"agent", agent_config_to_json(c.resolved_agent())},
          {"weight_mode", to_string(c.agent.weight_mode)},
          {"reuse_count", c.agent.reuse_count},
          {"epochs", c.epochs},
          {"cycles_per_epoch", c.cycles_per_epoch},
          {"episodes_per_cycle", c.episodes_per_cycle},
          {"updates_per_cycle", c.updates_per_cycle},
          {"eval_episodes", c.eval_episodes},
          {"buffer_capacity", c.buffer_capacity},
          {"seeds", c.seeds},
          {"out", c.out_dir},
          {"group", c.group},
          {"run_name", c.resolved_run_name()},
          {"jobs", c.jobs}};
}

// Missing keys keep the values already in `base`. "env" may be a task name
// or a full env object.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c = {}) {
  try {
    if (j.contains("env")) {
      const auto& e = j["env"];
      c.env = e.is_string() ? make_env_spec(task_from_string(e.get<std::string>()), c.env.max_episode_steps)
                            : env_spec_from_json(e);
    }
    if (j.contains("agent")) c.agent = agent_config_from_json(j["agent"], c.agent);
    if (j.contains("weight_mode")) c.agent.weight_mode = weight_mode_from_string(j["weight_mode"]);
    c.agent.reuse_count = j.value("reuse_count", c.agent.reuse_count);
    if (j.contains("batch_size")) c.agent.batch_size = j["batch_size"].get<int>();
    c.epochs = j.value("epochs", c.epochs);
    c.cycles_per_epoch = j.value("cycles_per_epoch", c.cycles_per_epoch);
    c.episodes_per_cycle = j.value("episodes_per_cycle", c.episodes_per_cycle);
    c.updates_per_cycle = j.value("updates_per_cycle", c.updates_per_cycle);
    c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
    c.buffer_capacity = j.value("buffer_capacity", c.buffer_capacity);
    c.seeds = j.value("seeds", c.seeds);
    c.out_dir = j.value("out", c.out_dir);
    c.group = j.value("group", c.group);
    c.run_name = j.value("run_name", c.run_name);
    c.jobs = j.value("jobs", c.jobs);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("run config: ") + e.what());
  }
}

struct EpochRecord {
  std::uint64_t seed = 0;
  int epoch = 0;
  double success_rate = 0.0;
  double mean_return = 0.0;
  double mean_weight = 1.0;
  double epoch_seconds = 0.0;
};

struct RunReport {
  RunConfig config;
  std::vector<EpochRecord> records;  // seed-major, epochs ascending
  std::string code_version = kCodeVersion;

  std::vector<EpochRecord> for_seed(std::uint64_t seed) const {
    std::vector<EpochRecord> out;
    for (const auto& r : records)
      if (r.seed == seed) out.push_back(r);
    return out;
  }
};

struct SummaryRow {
  int epoch = 0;
  double success_mean = 0.0;
  double success_std = 0.0;  // population std across seeds
  int n_seeds = 0;
};

inline std::vector<SummaryRow> summarize(const RunReport& report) {
  std::map<int, std::vector<double>> by_epoch;
  for (const auto& r : report.records) by_epoch[r.epoch].push_back(r.success_rate);
  std::vector<SummaryRow> rows;
  for (const auto& [epoch, v] : by_epoch) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    rows.push_back({epoch, mean, std::sqrt(var / static_cast<double>(v.size())),
                    static_cast<int>(v.size())});
  }
  return rows;
}

// First epoch at which the seed-mean success reaches `level`, or -1.
inline int epochs_to_reach(const std::vector<SummaryRow>& rows, double level) {
  for (const auto& r : rows)
    if (r.success_mean >= level) return r.epoch;
  return -1;
}

struct EvalResult {
  double success_rate = 0.0;
  double mean_return = 0.0;
};

// Environment seeds: training episodes use even values, evaluation odd, so
// the two sets never overlap.
inline std::uint64_t train_env_seed(std::uint64_t run_seed, std::uint64_t episode) {
  return derive_seed(run_seed, 0x7a1, episode) << 1;
}
inline std::uint64_t eval_env_seed(std::uint64_t eval_seed, std::uint64_t episode) {
  return (derive_seed(eval_seed, 0xe7a, episode) << 1) | 1u;
}

// Deterministic-policy rollouts; an episode counts as a success if any step
// reaches the goal.
inline EvalResult evaluate_detailed(const Agent& agent, const EnvSpec& spec, int n_episodes,
                                    std::uint64_t seed) {
  if (n_episodes < 1) throw InvalidArgument("evaluate: n_episodes must be >= 1");
  Rng unused(0);
  int successes = 0;
  double returns = 0.0;
  for (int e = 0; e < n_episodes; ++e) {
    EnvState st = reset(spec, eval_env_seed(seed, static_cast<std::uint64_t>(e)));
    GoalObservation obs = st.observe();
    bool success = false;
    while (!st.done) {
      const auto a = agent.select_action(obs, false, unused);
      const Transition tr = step(st, a);
      success = success || tr.success;
      returns += tr.reward;
      obs = tr.next_state;
    }
    successes += success ? 1 : 0;
  }
  return {static_cast<double>(successes) / n_episodes, returns / n_episodes};
}

inline double evaluate(const Agent& agent, const EnvSpec& spec, int n_episodes, std::uint64_t seed) {
  return evaluate_detailed(agent, spec, n_episodes, seed).success_rate;
}

// One seed's training state. `plain_ddpg` swaps the update cycle for the
// reference path that never computes or applies weights.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::uint64_t seed, bool plain_ddpg = false)
      : cfg_(cfg),
        seed_(seed),
        plain_(plain_ddpg),
        agent_(cfg.resolved_agent(), derive_seed(seed, 0xa6e)),
        buffer_(static_cast<std::size_t>(cfg.buffer_capacity), cfg.env.max_episode_steps),
        explore_rng_(derive_seed(seed, 0xe1)),
        sample_rng_(derive_seed(seed, 0x5a)) {}

  Episode collect_episode() {
    EnvState st = reset(cfg_.env, train_env_seed(seed_, episodes_collected_++));
    const bool random_episode = agent_.begin_exploration_episode(explore_rng_);
    Episode ep;
    ep.reserve(static_cast<std::size_t>(cfg_.env.max_episode_steps));
    GoalObservation obs = st.observe();
    while (!st.done) {
      const auto a = agent_.select_action(obs, true, explore_rng_, random_episode);
      ep.push_back(step(st, a));
      obs = ep.back().next_state;
    }
    return ep;
  }

  EpochRecord run_epoch() {
    const auto t0 = std::chrono::steady_clock::now();
    double weight_sum = 0.0;
    std::size_t weight_n = 0;
    for (int c = 0; c < cfg_.cycles_per_epoch; ++c) {
      for (int e = 0; e < cfg_.episodes_per_cycle; ++e) {
        Episode ep = collect_episode();
        agent_.observe_episode(ep);
        buffer_.store_episode(std::move(ep));
      }
      const auto metrics = plain_ ? agent_.update_cycle_unweighted(buffer_, cfg_.updates_per_cycle, sample_rng_)
                                  : agent_.update_cycle(buffer_, cfg_.updates_per_cycle, sample_rng_);
      for (const auto& m : metrics) {
        weight_sum += m.mean_weight;
        ++weight_n;
      }
    }
    const EvalResult ev = evaluate_detailed(agent_, cfg_.env, cfg_.eval_episodes,
                                            derive_seed(seed_, 0xe5a1, static_cast<std::uint64_t>(epoch_)));
    const auto t1 = std::chrono::steady_clock::now();
    EpochRecord r;
    r.seed = seed_;
    r.epoch = epoch_++;
    r.success_rate = ev.success_rate;
    r.mean_return = ev.mean_return;
    r.mean_weight = weight_n ? weight_sum / static_cast<double>(weight_n) : 1.0;
    r.epoch_seconds = std::chrono::duration<double>(t1 - t0).count();
    return r;
  }

  Agent& agent() { return agent_; }
  const Agent& agent() const { return agent_; }
  const ReplayBuffer& buffer() const { return buffer_; }

 private:
  RunConfig cfg_;
  std::uint64_t seed_;
  bool plain_;
  Agent agent_;
  ReplayBuffer buffer_;
  Rng explore_rng_;
  Rng sample_rng_;
  std::uint64_t episodes_collected_ = 0;
  int epoch_ = 0;
};

// ---- emission ----

inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double x = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw InvalidArgument("csv: bad number '" + s + "'");
  return x;
}

inline constexpr const char* kMetricsHeader =
    "seed,epoch,success_rate,mean_return,mean_weight,epoch_seconds";
inline constexpr const char* kSummaryHeader = "epoch,success_mean,success_std,n_seeds";

inline std::string metrics_csv(const RunReport& report) {
  std::ostringstream os;
  os << kMetricsHeader << '\n';
  for (const auto& r : report.records) {
    os << r.seed << ',' << r.epoch << ',' << format_double(r.success_rate) << ','
       << format_double(r.mean_return) << ',' << format_double(r.mean_weight) << ','
       << format_double(r.epoch_seconds) << '\n';
  }
  return os.str();
}

inline std::string summary_csv(const RunReport& report) {
  std::ostringstream os;
  os << kSummaryHeader << '\n';
  for (const auto& s : summarize(report)) {
    os << s.epoch << ',' << format_double(s.success_mean) << ',' << format_double(s.success_std)
       << ',' << s.n_seeds << '\n';
  }
  return os.str();
}

inline std::vector<EpochRecord> parse_metrics_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader)
    throw InvalidArgument("metrics.csv: unexpected header");
  std::vector<EpochRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 6) throw InvalidArgument("metrics.csv: expected 6 columns");
    EpochRecord r;
    r.seed = std::stoull(f[0]);
    r.epoch = std::stoi(f[1]);
    r.success_rate = parse_double(f[2]);
    r.mean_return = parse_double(f[3]);
    r.mean_weight = parse_double(f[4]);
    r.epoch_seconds = parse_double(f[5]);
    out.push_back(r);
  }
  return out;
}

namespace detail {

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + p.string() + "' for writing");
  f << content;
  f.flush();
  if (!f) throw IoError("write to '" + p.string() + "' failed");
}

inline void prepare_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
  const auto probe = dir / ".write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw IoError("output directory '" + dir.string() + "' is not writable");
  }
  std::filesystem::remove(probe, ec);
}

}  // namespace detail

// Writes config.json, metrics.csv and summary.csv into `dir`.
inline void emit_metrics(const RunReport& report, const std::filesystem::path& dir) {
  detail::prepare_dir(dir);
  nlohmann::json cfg = run_config_to_json(report.config);
  cfg["code_version"] = report.code_version;
  detail::write_file(dir / "config.json", cfg.dump(2) + "\n");
  detail::write_file(dir / "metrics.csv", metrics_csv(report));
  detail::write_file(dir / "summary.csv", summary_csv(report));
}

inline std::vector<EpochRecord> train_seed(const RunConfig& config, std::uint64_t seed,
                                           bool plain_ddpg = false) {
  Trainer trainer(config, seed, plain_ddpg);
  std::vector<EpochRecord> out;
  for (int e = 0; e < config.epochs; ++e) out.push_back(trainer.run_epoch());
  return out;
}

// Runs every seed (up to config.jobs in parallel) and, when out_dir is set,
// writes the report to config.run_dir(). Results do not depend on jobs.
inline RunReport run_experiment(const RunConfig& config) {
  config.validate();
  if (!config.out_dir.empty()) detail::prepare_dir(config.run_dir());

  std::vector<std::vector<EpochRecord>> per_seed(config.seeds.size());
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(config.jobs), config.seeds.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < config.seeds.size(); ++i) per_seed[i] = train_seed(config, config.seeds[i]);
  } else {
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < config.seeds.size(); i = next++) {
          try {
            per_seed[i] = train_seed(config, config.seeds[i]);
          } catch (...) {
            std::lock_guard lock(err_mu);
            if (!first_error) first_error = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  RunReport report;
  report.config = config;
  for (auto& v : per_seed) report.records.insert(report.records.end(), v.begin(), v.end());
  if (!config.out_dir.empty()) emit_metrics(report, config.run_dir());
  return report;
}

// ---- presets ----

// fig3: nsr vs uniform on all three tasks. fig4: uniform with reuse counts
// 1/2/3/5 vs nsr on push. fig5: nsr vs mean vs random weights on reach.
inline std::vector<RunConfig> expand_preset(const std::string& name, const RunConfig& base) {
  auto make = [&](Task task, WeightMode mode, int reuse) {
    RunConfig c = base;
    c.env = make_env_spec(task, base.env.max_episode_steps);
    c.agent.weight_mode = mode;
    c.agent.reuse_count = reuse;
    c.group = name;
    c.run_name.clear();
    return c;
  };
  std::vector<RunConfig> out;
  if (name == "fig3") {
    for (Task t : {Task::reach, Task::push, Task::pick_and_place})
      for (WeightMode m : {WeightMode::nsr, WeightMode::uniform}) out.push_back(make(t, m, 1));
  } else if (name == "fig4") {
    for (int r : {1, 2, 3, 5}) out.push_back(make(Task::push, WeightMode::uniform, r));
    out.push_back(make(Task::push, WeightMode::nsr, 1));
  } else if (name == "fig5") {
    for (WeightMode m : {WeightMode::nsr, WeightMode::mean, WeightMode::random})
      out.push_back(make(Task::reach, m, 1));
  } else {
    throw ValidationError("unknown preset '" + name + "' (expected fig3, fig4 or fig5)");
  }
  return out;
}

}  // namespace nsr
