// Experiment runner for the decentralized random-walk federated averaging
// simulator. Subcommands: run, bound, partition, sweep, inspect.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dfedrw/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const dfedrw::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DFedRW simulator: random-walk decentralized federated averaging"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir_override;
  std::uint64_t seed_override = 0;
  bool seed_set = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("config", config_path, "experiment config (JSON)")->required();
    cmd->add_option("--out-dir", out_dir_override, "override run.out_dir");
    cmd->add_option("--seed", seed_override, "override run.master_seed")
        ->each([&](const std::string&) { seed_set = true; });
  };

  auto* run = app.add_subcommand("run", "run the configured experiment");
  add_common(run);

  auto* bound = app.add_subcommand("bound", "evaluate the convergence-bound reports");
  add_common(bound);
  long horizon = 0;
  bound->add_option("--horizon", horizon, "summation horizon k (default from config)");

  auto* partition = app.add_subcommand("partition", "materialize and export the data partition");
  add_common(partition);

  auto* sweep = app.add_subcommand("sweep", "run one experiment per axis value");
  add_common(sweep);
  std::string axis;
  std::vector<std::string> values;
  sweep->add_option("--axis", axis, "u | h | b | K | topology | algorithm")->required();
  sweep->add_option("--values", values, "axis values")->required()->expected(-1);

  auto* inspect = app.add_subcommand("inspect", "pretty-print a trace.jsonl");
  std::string trace_path;
  inspect->add_option("trace", trace_path, "trace.jsonl path")->required();

  CLI11_PARSE(app, argc, argv);

  auto load = [&]() {
    dfedrw::ExperimentConfig cfg = dfedrw::load_config(config_path);
    // overrides are written back into the echoed config so a run directory
    // always reproduces itself
    if (!out_dir_override.empty()) {
      cfg.out_dir = out_dir_override;
      cfg.raw["run"]["out_dir"] = out_dir_override;
    }
    if (seed_set) {
      cfg.master_seed = seed_override;
      cfg.raw["run"]["master_seed"] = seed_override;
    }
    return cfg;
  };

  if (run->parsed()) {
    return guarded([&] {
      const auto result = dfedrw::cmd_run(load());
      std::printf("final accuracy %.4f, loss %.4f, total bits %llu\n", result.final_accuracy,
                  result.final_loss, (unsigned long long)result.total_bits);
      return kExitOk;
    });
  }
  if (bound->parsed()) {
    return guarded([&] {
      const auto report = dfedrw::cmd_bound(load(), horizon);
      std::printf("bound totals: plain %.6g, quantized %.6g\n",
                  report.at("walk_bound").at("total").get<double>(),
                  report.at("quantized_bound").at("total").get<double>());
      return kExitOk;
    });
  }
  if (partition->parsed()) {
    return guarded([&] {
      dfedrw::cmd_partition(load());
      return kExitOk;
    });
  }
  if (sweep->parsed()) {
    return guarded([&] {
      const auto cells = dfedrw::cmd_sweep(load(), axis, values);
      int failures = 0;
      for (const auto& cell : cells) {
        if (cell.ok) {
          std::printf("%s=%s: final accuracy %.4f\n", axis.c_str(), cell.value.c_str(),
                      cell.rows.back().accuracy);
        } else {
          ++failures;
          std::fprintf(stderr, "%s=%s failed: %s\n", axis.c_str(), cell.value.c_str(),
                       cell.error.c_str());
        }
      }
      return failures == 0 ? kExitOk : kExitUsage;
    });
  }
  if (inspect->parsed()) {
    return guarded([&] {
      std::fputs(dfedrw::inspect_trace(trace_path).c_str(), stdout);
      return kExitOk;
    });
  }
  return kExitUsage;
}
