#pragma once

#include <chrono>
#include <tuple>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfedrw/analysis.hpp"
#include "dfedrw/dataset.hpp"
#include "dfedrw/errors.hpp"
#include "dfedrw/fedsim.hpp"
#include "dfedrw/model.hpp"
#include "dfedrw/quantizer.hpp"
#include "dfedrw/topology.hpp"

namespace dfedrw {

// Experiment config: one JSON file with one object per section. Every CLI
// flag is an override of a key path in here.
struct ExperimentConfig {
  // dataset
  bool use_idx = false;
  std::string train_images, train_labels, test_images, test_labels;
  int synth_classes = 10, synth_dim = 64, synth_per_class = 600, synth_test_per_class = 100;
  double synth_spread = 0.08;

  // partition
  std::string scheme = "similarity";  // similarity | dirichlet | nonbalance | file
  double u_percent = 100.0;
  double alpha = 0.1;
  long per_label_cap = 1500;
  std::string partition_file;

  // topology
  TopologyKind topo_kind = TopologyKind::complete;
  int n_devices = 20;
  int expander_c = 3;
  std::string topo_file;

  // model
  std::string model_arch = "3fnn";  // 2fnn | 3fnn | custom
  std::vector<int> custom_sizes;

  // round + algorithm
  RoundConfig round;

  // feasible set; radius 0 means unbounded
  double feasible_radius = 0.0;

  // run
  long rounds = 50;
  long eval_every = 5;
  std::uint64_t master_seed = 1;
  std::string out_dir = "run_out";
  bool write_trace = false;
  bool write_svg = false;

  // theory (cmd_bound)
  TheoryInputs theory;
  long bound_horizon = 1000;
  double prop_epsilon = 1.0;
  double prop_rho_ratio = 2.0;
  int prop_bits = 8;

  nlohmann::json raw;  // config echo for reproducibility
};

namespace detail {

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config field '" + key + "': " + e.what());
  }
}

inline TopologyKind topology_from_string(const std::string& s) {
  if (s == "complete") return TopologyKind::complete;
  if (s == "ring") return TopologyKind::ring;
  if (s == "expander") return TopologyKind::expander;
  if (s == "custom") return TopologyKind::custom;
  throw ValidationError("config field 'topology.kind': unknown kind '" + s + "'");
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::get_or;
  ExperimentConfig cfg;
  cfg.raw = j;

  const auto ds = j.value("dataset", nlohmann::json::object());
  const std::string data_kind = get_or<std::string>(ds, "kind", "synth");
  if (data_kind == "idx") {
    cfg.use_idx = true;
    cfg.train_images = get_or<std::string>(ds, "train_images", "");
    cfg.train_labels = get_or<std::string>(ds, "train_labels", "");
    cfg.test_images = get_or<std::string>(ds, "test_images", "");
    cfg.test_labels = get_or<std::string>(ds, "test_labels", "");
    if (cfg.train_images.empty() || cfg.train_labels.empty() || cfg.test_images.empty() ||
        cfg.test_labels.empty())
      throw ValidationError("config field 'dataset': idx kind needs all four file paths");
  } else if (data_kind == "synth") {
    cfg.synth_classes = get_or<int>(ds, "classes", cfg.synth_classes);
    cfg.synth_dim = get_or<int>(ds, "dim", cfg.synth_dim);
    cfg.synth_per_class = get_or<int>(ds, "per_class", cfg.synth_per_class);
    cfg.synth_test_per_class = get_or<int>(ds, "test_per_class", cfg.synth_test_per_class);
    cfg.synth_spread = get_or<double>(ds, "spread", cfg.synth_spread);
  } else {
    throw ValidationError("config field 'dataset.kind': must be 'idx' or 'synth'");
  }

  const auto part = j.value("partition", nlohmann::json::object());
  cfg.scheme = get_or<std::string>(part, "scheme", cfg.scheme);
  if (cfg.scheme != "similarity" && cfg.scheme != "dirichlet" && cfg.scheme != "nonbalance" &&
      cfg.scheme != "file")
    throw ValidationError("config field 'partition.scheme': unknown scheme '" + cfg.scheme + "'");
  cfg.u_percent = get_or<double>(part, "u", cfg.u_percent);
  cfg.alpha = get_or<double>(part, "alpha", cfg.alpha);
  cfg.per_label_cap = get_or<long>(part, "cap", cfg.per_label_cap);
  cfg.partition_file = get_or<std::string>(part, "file", "");
  if (cfg.scheme == "file" && cfg.partition_file.empty())
    throw ValidationError("config field 'partition.file': required for scheme 'file'");

  const auto topo = j.value("topology", nlohmann::json::object());
  cfg.topo_kind = detail::topology_from_string(get_or<std::string>(topo, "kind", "complete"));
  cfg.n_devices = get_or<int>(topo, "n", cfg.n_devices);
  cfg.expander_c = get_or<int>(topo, "c", cfg.expander_c);
  cfg.topo_file = get_or<std::string>(topo, "file", "");
  if (cfg.topo_kind == TopologyKind::custom && cfg.topo_file.empty())
    throw ValidationError("config field 'topology.file': required for kind 'custom'");

  const auto model = j.value("model", nlohmann::json::object());
  cfg.model_arch = get_or<std::string>(model, "arch", cfg.model_arch);
  if (cfg.model_arch != "2fnn" && cfg.model_arch != "3fnn" && cfg.model_arch != "custom")
    throw ValidationError("config field 'model.arch': must be 2fnn, 3fnn or custom");
  if (cfg.model_arch == "custom") {
    cfg.custom_sizes = get_or<std::vector<int>>(model, "sizes", {});
    if (cfg.custom_sizes.size() < 2)
      throw ValidationError("config field 'model.sizes': custom arch needs >= 2 sizes");
  }

  cfg.round.algorithm = algorithm_from_string(get_or<std::string>(j, "algorithm", "dfedrw"));
  const auto round = j.value("round", nlohmann::json::object());
  cfg.round.chains_m = get_or<int>(round, "M", 5);
  cfg.round.epochs_k = get_or<int>(round, "K", 5);
  cfg.round.epochs_k_prime = get_or<int>(round, "K_prime", 1);
  cfg.round.h_percent = get_or<double>(round, "h", 0.0);
  cfg.round.agg_fraction = get_or<double>(round, "rho", 0.25);
  cfg.round.phi = get_or<int>(round, "phi", 1);
  cfg.round.batch_size = get_or<long>(round, "batch_size", 50);
  const std::string agg_mode = get_or<std::string>(round, "agg_mode", "contributors");
  if (agg_mode == "contributors")
    cfg.round.agg_mode = AggMode::contributors;
  else if (agg_mode == "aggregators")
    cfg.round.agg_mode = AggMode::aggregators;
  else
    throw ValidationError("config field 'round.agg_mode': contributors or aggregators");
  cfg.round.inherit_starts = get_or<bool>(round, "inherit_starts", false);

  const auto lr = j.value("lr", nlohmann::json::object());
  cfg.round.lr_r = get_or<double>(lr, "R", 5.0);
  cfg.round.lr_q = get_or<double>(lr, "q", 0.499);

  if (j.contains("quant") && !j.at("quant").is_null()) {
    const auto q = j.at("quant");
    const int bits = get_or<int>(q, "bits", 8);
    const double interval = get_or<double>(q, "interval", 0.0);
    cfg.round.quant = make_quant_config(bits, interval);
  }

  const auto feas = j.value("feasible", nlohmann::json::object());
  cfg.feasible_radius = get_or<double>(feas, "radius", 0.0);
  if (cfg.feasible_radius < 0.0)
    throw ValidationError("config field 'feasible.radius': must be >= 0 (0 = unbounded)");

  const auto run = j.value("run", nlohmann::json::object());
  cfg.rounds = get_or<long>(run, "rounds", cfg.rounds);
  cfg.eval_every = get_or<long>(run, "eval_every", cfg.eval_every);
  cfg.master_seed = get_or<std::uint64_t>(run, "master_seed", cfg.master_seed);
  cfg.out_dir = get_or<std::string>(run, "out_dir", cfg.out_dir);
  cfg.write_trace = get_or<bool>(run, "trace", false);
  cfg.write_svg = get_or<bool>(run, "svg", false);
  if (cfg.rounds < 1) throw ValidationError("config field 'run.rounds': must be >= 1");
  if (cfg.eval_every < 1) throw ValidationError("config field 'run.eval_every': must be >= 1");

  if (j.contains("theory")) {
    const auto th = j.at("theory");
    cfg.theory.n = get_or<int>(th, "n", cfg.n_devices);
    cfg.theory.grad_bound_d = get_or<double>(th, "D", 1.0);
    cfg.theory.zeta = get_or<double>(th, "zeta", 1.0);
    cfg.theory.k_p = get_or<long>(th, "K_P", 1);
    cfg.theory.lambda_p = get_or<double>(th, "lambda_p", 0.5);
    cfg.theory.delta_sq = get_or<double>(th, "delta_sq", 1.0);
    cfg.theory.gamma_hat = get_or<double>(th, "gamma_hat", 1.0);
    cfg.theory.dim = get_or<long>(th, "d", 1);
    cfg.theory.interval = get_or<double>(th, "s", 0.0);
    cfg.theory.sigma = get_or<double>(th, "sigma", 1.0);
    cfg.theory.q_exp = get_or<double>(th, "q", 0.6);
    cfg.theory.r_const = get_or<double>(th, "R", 5.0);
    cfg.theory.w0_dist = get_or<double>(th, "w0_dist", 1.0);
    cfg.theory.k_bar_start = get_or<long>(th, "k_bar_start", 2);
    cfg.bound_horizon = get_or<long>(th, "horizon", 1000);
    cfg.prop_epsilon = get_or<double>(th, "epsilon", 1.0);
    cfg.prop_rho_ratio = get_or<double>(th, "rho_ratio", 2.0);
    cfg.prop_bits = get_or<int>(th, "bits", 8);
  }

  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Materialization helpers shared by run/partition/sweep.

struct ExperimentData {
  Dataset train, test;
  DevicePartition partition;
  Graph graph;
  MlpSpec spec;
};

// Synth train/test share one set of class centers via the split generator.
inline std::pair<Dataset, Dataset> build_datasets(const ExperimentConfig& cfg) {
  if (cfg.use_idx)
    return {load_idx(cfg.train_images, cfg.train_labels),
            load_idx(cfg.test_images, cfg.test_labels)};
  return synth_clusters_split(cfg.synth_classes, cfg.synth_dim, cfg.synth_per_class,
                              cfg.synth_test_per_class, cfg.synth_spread,
                              hash_combine64(cfg.master_seed, hash_tag("data")));
}

inline Dataset build_train_dataset(const ExperimentConfig& cfg) {
  return build_datasets(cfg).first;
}

inline DevicePartition build_partition(const ExperimentConfig& cfg, const Dataset& train) {
  const std::uint64_t seed = hash_combine64(cfg.master_seed, hash_tag("partition"));
  if (cfg.scheme == "similarity")
    return partition_similarity(train, cfg.n_devices, cfg.u_percent, seed);
  if (cfg.scheme == "dirichlet") return partition_dirichlet(train, cfg.n_devices, cfg.alpha, seed);
  if (cfg.scheme == "nonbalance")
    return partition_nonbalance(train, cfg.n_devices, cfg.per_label_cap, seed);
  std::ifstream in(cfg.partition_file);
  if (!in) throw ValidationError("cannot open partition file: " + cfg.partition_file);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("partition file: ") + e.what());
  }
  DevicePartition dp = partition_from_json(j);
  validate_partition(dp, train.num_samples());
  if (dp.n_dev != cfg.n_devices)
    throw ValidationError("partition file n_dev does not match topology.n");
  return dp;
}

inline MlpSpec build_spec(const ExperimentConfig& cfg, const Dataset& train) {
  MlpSpec spec;
  if (cfg.model_arch == "2fnn")
    spec.layer_sizes = {train.feature_dim, 100, train.num_classes};
  else if (cfg.model_arch == "3fnn")
    spec.layer_sizes = {train.feature_dim, 200, 200, train.num_classes};
  else {
    spec.layer_sizes = cfg.custom_sizes;
    if (spec.layer_sizes.front() != train.feature_dim)
      throw ValidationError("model.sizes front must equal the dataset feature dim");
    if (spec.layer_sizes.back() != train.num_classes)
      throw ValidationError("model.sizes back must equal the dataset class count");
  }
  validate_spec(spec);
  return spec;
}

inline Graph build_graph(const ExperimentConfig& cfg) {
  if (cfg.topo_kind == TopologyKind::custom) return load_adjacency_file(cfg.topo_file);
  return build_topology(cfg.topo_kind, cfg.n_devices, cfg.expander_c,
                        hash_combine64(cfg.master_seed, hash_tag("topology")));
}

inline ExperimentData build_experiment_data(const ExperimentConfig& cfg) {
  ExperimentData data;
  std::tie(data.train, data.test) = build_datasets(cfg);
  data.partition = build_partition(cfg, data.train);
  data.graph = build_graph(cfg);
  data.spec = build_spec(cfg, data.train);
  return data;
}

// ---------------------------------------------------------------------------
// Output writers

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace detail

struct EvalRow {
  long round;
  double accuracy, loss;
  std::uint64_t cum_bits_total;
  int busiest_device_id;
  std::uint64_t c_upd, c_agg, c_r;
};

inline void write_metrics_csv(const std::string& path, const std::vector<EvalRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << "round,accuracy,loss,cum_bits_total,busiest_device_id,C_upd,C_agg,C_R\n";
  for (const auto& r : rows)
    out << r.round << ',' << detail::fmt_double(r.accuracy) << ',' << detail::fmt_double(r.loss)
        << ',' << r.cum_bits_total << ',' << r.busiest_device_id << ',' << r.c_upd << ','
        << r.c_agg << ',' << r.c_r << '\n';
}

inline void append_trace(std::ofstream& out, const RoundMetrics& mx) {
  for (const auto& msg : mx.messages) {
    nlohmann::json rec{{"round", msg.round}, {"step", msg.step},   {"from", msg.from},
                       {"to", msg.to},       {"bits", msg.bits},   {"kind", to_string(msg.kind)}};
    out << rec.dump() << '\n';
  }
}

// Minimal line chart; presentation plumbing only.
inline void write_accuracy_svg(const std::string& path, const std::vector<EvalRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  const double w = 640, h = 400, ml = 50, mb = 40, mt = 20, mr = 20;
  double xmax = 1;
  for (const auto& r : rows) xmax = std::max(xmax, double(r.round));
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  out << "<line x1='" << ml << "' y1='" << h - mb << "' x2='" << w - mr << "' y2='" << h - mb
      << "' stroke='black'/>\n";
  out << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << h - mb
      << "' stroke='black'/>\n";
  out << "<text x='" << w / 2 << "' y='" << h - 8 << "' font-size='12'>round</text>\n";
  out << "<text x='12' y='" << h / 2 << "' font-size='12' transform='rotate(-90 12 " << h / 2
      << ")'>accuracy</text>\n";
  out << "<polyline fill='none' stroke='steelblue' stroke-width='1.5' points='";
  for (const auto& r : rows) {
    const double x = ml + (double(r.round) / xmax) * (w - ml - mr);
    const double y = (h - mb) - r.accuracy * (h - mb - mt);
    out << detail::fmt_double(x) << ',' << detail::fmt_double(y) << ' ';
  }
  out << "'/>\n</svg>\n";
}

// ---------------------------------------------------------------------------
// Subcommand bodies. These throw; the CLI maps exception type to exit code.

struct RunResult {
  std::vector<EvalRow> rows;
  double final_accuracy = 0.0;
  double final_loss = 0.0;
  std::uint64_t total_bits = 0;
};

inline RunResult cmd_run(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  validate_round_config(cfg.round, cfg.n_devices);
  ExperimentData data = build_experiment_data(cfg);
  fs::create_directories(cfg.out_dir);

  const FeasibleSet feas = cfg.feasible_radius > 0.0 ? FeasibleSet::ball(cfg.feasible_radius)
                                                     : FeasibleSet::unbounded();
  SimState st = make_sim_state(std::move(data.graph), &data.train, &data.test,
                               std::move(data.partition), data.spec, feas, cfg.master_seed);

  std::ofstream trace;
  if (cfg.write_trace) {
    trace.open(cfg.out_dir + "/trace.jsonl");
    if (!trace) throw ValidationError("cannot write trace.jsonl");
  }

  const auto t0 = std::chrono::steady_clock::now();
  RunResult result;
  std::uint64_t cum_bits = 0;
  for (long t = 1; t <= cfg.rounds; ++t) {
    RoundMetrics mx = run_round(st, cfg.round);
    cum_bits += mx.total_sent_bits();
    if (cfg.write_trace) append_trace(trace, mx);
    if (t % cfg.eval_every == 0 || t == cfg.rounds) {
      const ParamVector model = reporting_model(st, cfg.round.algorithm);
      const auto [acc, loss] = evaluate(model, *st.test);
      result.rows.push_back(
          EvalRow{t, acc, loss, cum_bits, mx.busiest_device, mx.c_upd, mx.c_agg, mx.c_r});
    }
  }
  const auto wall_ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0)
          .count();

  result.final_accuracy = result.rows.back().accuracy;
  result.final_loss = result.rows.back().loss;
  result.total_bits = cum_bits;

  write_metrics_csv(cfg.out_dir + "/metrics.csv", result.rows);
  nlohmann::json summary{{"final_accuracy", result.final_accuracy},
                         {"final_loss", result.final_loss},
                         {"rounds", cfg.rounds},
                         {"total_bits", result.total_bits},
                         {"estimated_D", estimated_grad_bound(st)},
                         {"wall_ms", wall_ms},
                         {"config", cfg.raw}};
  std::ofstream sj(cfg.out_dir + "/summary.json");
  if (!sj) throw ValidationError("cannot write summary.json");
  sj << summary.dump(2) << '\n';
  if (cfg.write_svg) write_accuracy_svg(cfg.out_dir + "/accuracy.svg", result.rows);
  return result;
}

inline nlohmann::json cmd_bound(const ExperimentConfig& cfg, long horizon = 0) {
  const long k = horizon > 0 ? horizon : cfg.bound_horizon;
  const BoundReport t1 = walk_convergence_bound(cfg.theory, k);
  const BoundReport t2 = quantized_convergence_bound(cfg.theory, k);
  const QuantizationSavingVerdict prop =
      quantization_saving_check(cfg.theory, cfg.prop_epsilon, cfg.prop_rho_ratio, cfg.prop_bits);
  auto report_json = [](const BoundReport& r) {
    return nlohmann::json{{"psi_n_lambda", r.psi_n_lambda}, {"kappa", r.kappa},
                          {"lambda_n", r.lambda_n},         {"psi_d_s", r.psi_d_s},
                          {"total", r.total},               {"horizon", r.horizon},
                          {"q_in_valid_range", r.q_in_valid_range}};
  };
  nlohmann::json out{
      {"walk_bound", report_json(t1)},
      {"quantized_bound", report_json(t2)},
      {"quantization_saving",
       {{"epsilon", prop.epsilon},
        {"error_threshold", prop.error_threshold},
        {"condition1", prop.condition1},
        {"bits", prop.bits},
        {"bits_threshold", prop.bits_threshold},
        {"condition2", prop.condition2},
        {"saves_communication", prop.saves_communication}}}};
  const StepSizeReport ar = step_size_check(cfg.theory.r_const, cfg.theory.q_exp,
                                               std::max<long>(k, 10));
  out["step_size"] = nlohmann::json{{"checkpoints", ar.checkpoints},
                                      {"eta_sum", ar.eta_sum},
                                      {"ln_eta_sq_sum", ar.ln_eta_sq_sum},
                                      {"first_diverges", ar.first_diverges},
                                      {"second_converges", ar.second_converges},
                                      {"satisfied", ar.satisfied}};
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  std::ofstream bj(cfg.out_dir + "/bound.json");
  if (!bj) throw ValidationError("cannot write bound.json");
  bj << out.dump(2) << '\n';
  return out;
}

inline void cmd_partition(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  Dataset train = build_train_dataset(cfg);
  DevicePartition dp = build_partition(cfg, train);
  fs::create_directories(cfg.out_dir);
  std::ofstream pj(cfg.out_dir + "/partition.json");
  if (!pj) throw ValidationError("cannot write partition.json");
  pj << partition_to_json(dp).dump() << '\n';

  const auto hist = label_histogram(train, dp);
  std::ofstream hc(cfg.out_dir + "/label_histogram.csv");
  if (!hc) throw ValidationError("cannot write label_histogram.csv");
  hc << "device,total";
  for (int c = 0; c < train.num_classes; ++c) hc << ",label_" << c;
  hc << ",entropy\n";
  for (int d2 = 0; d2 < dp.n_dev; ++d2) {
    long total = 0;
    for (long v : hist[std::size_t(d2)]) total += v;
    hc << d2 << ',' << total;
    for (long v : hist[std::size_t(d2)]) hc << ',' << v;
    hc << ',' << detail::fmt_double(label_entropy(hist[std::size_t(d2)])) << '\n';
  }
}

struct SweepCell {
  std::string value;
  bool ok = false;
  std::string error;
  std::vector<EvalRow> rows;
};

inline ExperimentConfig apply_axis(const ExperimentConfig& base, const std::string& axis,
                                   const std::string& value) {
  ExperimentConfig cfg = base;
  auto as_number = [&](const char* what) {
    try {
      return std::stod(value);
    } catch (const std::exception&) {
      throw ValidationError(std::string("sweep value '") + value + "' is not a number for axis " +
                            what);
    }
  };
  if (axis == "u")
    cfg.u_percent = as_number("u");
  else if (axis == "h")
    cfg.round.h_percent = as_number("h");
  else if (axis == "b")
    cfg.round.quant = make_quant_config(int(as_number("b")));
  else if (axis == "K") {
    cfg.round.epochs_k = int(as_number("K"));
    cfg.round.epochs_k_prime = std::min(cfg.round.epochs_k_prime, cfg.round.epochs_k);
  } else if (axis == "topology")
    cfg.topo_kind = detail::topology_from_string(value);
  else if (axis == "algorithm")
    cfg.round.algorithm = algorithm_from_string(value);
  else
    throw ValidationError("sweep axis must be one of u, h, b, K, topology, algorithm");
  return cfg;
}

inline std::vector<SweepCell> cmd_sweep(const ExperimentConfig& base, const std::string& axis,
                                        const std::vector<std::string>& values) {
  namespace fs = std::filesystem;
  if (values.empty()) throw ValidationError("sweep needs at least one value");
  if (axis != "u" && axis != "h" && axis != "b" && axis != "K" && axis != "topology" &&
      axis != "algorithm")
    throw ValidationError("sweep axis must be one of u, h, b, K, topology, algorithm");
  fs::create_directories(base.out_dir);
  std::vector<SweepCell> cells;
  for (const auto& value : values) {
    SweepCell cell;
    cell.value = value;
    try {
      ExperimentConfig cfg = apply_axis(base, axis, value);
      cfg.out_dir = base.out_dir + "/" + axis + "_" + value;
      RunResult rr = cmd_run(cfg);
      cell.rows = std::move(rr.rows);
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
    cells.push_back(std::move(cell));
  }
  std::ofstream out(base.out_dir + "/sweep.csv");
  if (!out) throw ValidationError("cannot write sweep.csv");
  out << "value,round,accuracy,loss,cum_bits_total,busiest_device_id,C_upd,C_agg,C_R\n";
  for (const auto& cell : cells)
    for (const auto& r : cell.rows)
      out << cell.value << ',' << r.round << ',' << detail::fmt_double(r.accuracy) << ','
          << detail::fmt_double(r.loss) << ',' << r.cum_bits_total << ',' << r.busiest_device_id
          << ',' << r.c_upd << ',' << r.c_agg << ',' << r.c_r << '\n';
  return cells;
}

// Per-round roll-up of a message trace for quick auditing.
inline std::string inspect_trace(const std::string& trace_path) {
  std::ifstream in(trace_path);
  if (!in) throw ValidationError("cannot open trace: " + trace_path);
  struct Roll {
    long msgs = 0;
    std::uint64_t bits = 0;
    std::map<std::string, long> by_kind;
  };
  std::map<int, Roll> per_round;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("trace line " + std::to_string(line_no) + ": " + e.what());
    }
    Roll& roll = per_round[rec.at("round").get<int>()];
    ++roll.msgs;
    roll.bits += rec.at("bits").get<std::uint64_t>();
    ++roll.by_kind[rec.at("kind").get<std::string>()];
  }
  std::ostringstream out;
  out << "round  messages  bits  kinds\n";
  for (const auto& [round, roll] : per_round) {
    out << round << "  " << roll.msgs << "  " << roll.bits << "  ";
    bool first = true;
    for (const auto& [kind, count] : roll.by_kind) {
      if (!first) out << ' ';
      out << kind << '=' << count;
      first = false;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace dfedrw
