// nsr: train DDPG+HER agents with novelty-weighted updates and write
// per-run metrics; `nsr dump` writes exploration rollouts as JSON lines.
//
// On failure a single line {"error": <kind>, "message": <text>} goes to
// stderr and the exit code is nonzero.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nsr/runner.hpp"

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kIo = 3 };

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return code;
}

// "0,1,2" or "0-4" or a mix ("0-2,7").
std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string part;
  auto num = [&](const std::string& s) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (s.empty() || used != s.size() || s[0] == '-')
      throw nsr::ValidationError("bad seed '" + s + "' in --seeds");
    return v;
  };
  while (std::getline(ss, part, ',')) {
    const auto dash = part.find('-', 1);
    if (dash == std::string::npos) {
      out.push_back(num(part));
      continue;
    }
    const auto lo = num(part.substr(0, dash));
    const auto hi = num(part.substr(dash + 1));
    if (hi < lo) throw nsr::ValidationError("empty seed range '" + part + "'");
    for (auto s = lo; s <= hi; ++s) out.push_back(s);
  }
  if (out.empty()) throw nsr::ValidationError("--seeds is empty");
  return out;
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw nsr::IoError("cannot read config '" + path + "'");
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw nsr::ValidationError("config '" + path + "': " + e.what());
  }
}

struct RunArgs {
  std::string config, preset, env, weight_mode, seeds, out, run_name;
  std::optional<int> reuse_count, epochs, jobs;
};

int cmd_run(const RunArgs& a) {
  nsr::RunConfig base;
  base.out_dir = "runs";
  if (!a.config.empty()) base = nsr::run_config_from_json(read_json(a.config), base);
  if (!a.env.empty())
    base.env = nsr::make_env_spec(nsr::task_from_string(a.env), base.env.max_episode_steps);
  if (!a.weight_mode.empty()) base.agent.weight_mode = nsr::weight_mode_from_string(a.weight_mode);
  if (a.reuse_count) base.agent.reuse_count = *a.reuse_count;
  if (a.epochs) base.epochs = *a.epochs;
  if (a.jobs) base.jobs = *a.jobs;
  if (!a.seeds.empty()) base.seeds = parse_seeds(a.seeds);
  if (!a.out.empty()) base.out_dir = a.out;
  if (!a.run_name.empty()) base.run_name = a.run_name;

  std::vector<nsr::RunConfig> runs;
  if (a.preset.empty()) {
    runs.push_back(base);
  } else {
    if (!a.env.empty() || !a.weight_mode.empty() || a.reuse_count || !a.run_name.empty())
      throw nsr::ValidationError("--env, --weight-mode, --reuse-count and --run-name are fixed by --preset");
    runs = nsr::expand_preset(a.preset, base);
  }
  for (const auto& r : runs) r.validate();

  for (const auto& r : runs) {
    const auto report = nsr::run_experiment(r);
    const auto rows = nsr::summarize(report);
    std::cout << r.run_dir().string() << " final_success_mean="
              << nsr::format_double(rows.empty() ? 0.0 : rows.back().success_mean) << std::endl;
  }
  return kOk;
}

struct DumpArgs {
  std::string env = "reach", out;
  std::uint64_t seed = 0;
  int episodes = 1;
};

// Exploration rollouts of a freshly initialized agent.
int cmd_dump(const DumpArgs& a) {
  if (a.episodes < 1) throw nsr::ValidationError("--episodes must be >= 1");
  nsr::RunConfig cfg;
  cfg.env = nsr::make_env_spec(nsr::task_from_string(a.env));
  cfg.validate();
  nsr::Trainer trainer(cfg, a.seed);
  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out, std::ios::trunc);
    if (!file) throw nsr::IoError("cannot open '" + a.out + "' for writing");
  }
  std::ostream& os = a.out.empty() ? std::cout : file;
  for (int e = 0; e < a.episodes; ++e) nsr::write_jsonl(os, trainer.collect_episode());
  os.flush();
  if (!os) throw nsr::IoError("write failed");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Novelty-weighted DDPG+HER on toy goal-conditioned tasks"};
  app.require_subcommand(0, 1);

  RunArgs run;
  auto add_run_flags = [&](CLI::App* c) {
    c->add_option("--config", run.config, "JSON run configuration; flags override it");
    c->add_option("--preset", run.preset, "fig3, fig4 or fig5");
    c->add_option("--env", run.env, "reach, push or pick_and_place");
    c->add_option("--weight-mode", run.weight_mode, "nsr, uniform, mean or random");
    c->add_option("--reuse-count", run.reuse_count, "gradient steps per sampled batch");
    c->add_option("--seeds", run.seeds, "e.g. 0,1,2 or 0-4");
    c->add_option("--epochs", run.epochs, "training epochs");
    c->add_option("--out", run.out, "output root (default: runs)");
    c->add_option("--jobs", run.jobs, "parallel seed workers");
    c->add_option("--run-name", run.run_name, "run directory name");
  };
  add_run_flags(&app);
  auto* run_cmd = app.add_subcommand("run", "train and write metrics (default)");
  add_run_flags(run_cmd);

  DumpArgs dump;
  auto* dump_cmd = app.add_subcommand("dump", "write exploration episodes as JSON lines");
  dump_cmd->add_option("--env", dump.env, "reach, push or pick_and_place");
  dump_cmd->add_option("--seed", dump.seed, "agent and environment seed");
  dump_cmd->add_option("--episodes", dump.episodes, "number of episodes");
  dump_cmd->add_option("--out", dump.out, "output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kUsage);
  }

  try {
    if (*dump_cmd) return cmd_dump(dump);
    return cmd_run(run);
  } catch (const nsr::IoError& e) {
    return fail(e.kind(), e.what(), kIo);
  } catch (const nsr::ValidationError& e) {
    return fail(e.kind(), e.what(), kUsage);
  } catch (const nsr::InvalidArgument& e) {
    return fail(e.kind(), e.what(), kUsage);
  } catch (const nsr::Error& e) {
    return fail(e.kind(), e.what(), kFailure);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), kFailure);
  }
}
