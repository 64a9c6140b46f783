#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dfedrw/dataset.hpp"
#include "dfedrw/errors.hpp"
#include "dfedrw/model.hpp"
#include "dfedrw/quantizer.hpp"
#include "dfedrw/rng.hpp"
#include "dfedrw/topology.hpp"

namespace dfedrw {

enum class Algorithm { dfedrw, qdfedrw, dsgd, fedavg, dfedavg };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::dfedrw: return "dfedrw";
    case Algorithm::qdfedrw: return "qdfedrw";
    case Algorithm::dsgd: return "dsgd";
    case Algorithm::fedavg: return "fedavg";
    case Algorithm::dfedavg: return "dfedavg";
  }
  return "?";
}

inline Algorithm algorithm_from_string(const std::string& s) {
  if (s == "dfedrw") return Algorithm::dfedrw;
  if (s == "qdfedrw") return Algorithm::qdfedrw;
  if (s == "dsgd") return Algorithm::dsgd;
  if (s == "fedavg") return Algorithm::fedavg;
  if (s == "dfedavg") return Algorithm::dfedavg;
  throw ValidationError("unknown algorithm tag: " + s);
}

// "aggregates 25% of the devices": contributors-mode caps each device's
// contributor set at ceil(rho*n); aggregators-mode lets ceil(rho*n) devices
// aggregate over all visited neighbors.
enum class AggMode { contributors, aggregators };

enum class MsgKind { hop, agg, down, up };

inline const char* to_string(MsgKind k) {
  switch (k) {
    case MsgKind::hop: return "hop";
    case MsgKind::agg: return "agg";
    case MsgKind::down: return "down";
    case MsgKind::up: return "up";
  }
  return "?";
}

struct RoundConfig {
  Algorithm algorithm = Algorithm::dfedrw;
  int chains_m = 1;        // M parallel walks
  int epochs_k = 1;        // K nominal walk epochs per round
  int epochs_k_prime = 1;  // K' for truncated chains
  double h_percent = 0.0;  // share of chains truncated to K'
  double agg_fraction = 0.25;  // rho
  int phi = 1;             // aggregation period in rounds
  long batch_size = 50;
  double lr_r = 5.0;
  double lr_q = 0.499;
  std::optional<QuantConfig> quant;
  AggMode agg_mode = AggMode::contributors;
  bool inherit_starts = false;
};

inline void validate_round_config(const RoundConfig& cfg, int n) {
  if (cfg.chains_m < 1 || cfg.chains_m > n)
    throw ValidationError("round config: 1 <= M <= n required");
  if (cfg.epochs_k < 1) throw ValidationError("round config: K >= 1 required");
  if (cfg.epochs_k_prime < 1 || cfg.epochs_k_prime > cfg.epochs_k)
    throw ValidationError("round config: 1 <= K' <= K required");
  if (cfg.h_percent < 0.0 || cfg.h_percent > 100.0)
    throw ValidationError("round config: h in [0,100]");
  if (cfg.agg_fraction <= 0.0 || cfg.agg_fraction > 1.0)
    throw ValidationError("round config: rho in (0,1]");
  if (cfg.phi < 1) throw ValidationError("round config: phi >= 1");
  if (cfg.batch_size < 1) throw ValidationError("round config: batch size >= 1");
  if (cfg.algorithm == Algorithm::qdfedrw && !cfg.quant)
    throw ValidationError("round config: qdfedrw requires a quant section");
}

struct DeviceState {
  int id = 0;
  ParamVector params;                      // w_i^{t,0}
  std::optional<ParamVector> last_update;  // w_i^{t,last}, present iff visited since last aggregation
  long last_stamp = -1;
  long n_samples = 0;
  std::uint64_t comm_bits_sent = 0;
};

struct Message {
  int round = 0;
  int step = -1;  // -1 for aggregation / server legs
  int from = 0;   // device id; n stands for the FedAvg server
  int to = 0;
  std::uint64_t bits = 0;
  MsgKind kind = MsgKind::hop;
};

struct RoundMetrics {
  int round = 0;
  // n+1 slots; the extra slot is the FedAvg server
  std::vector<std::uint64_t> sent_upd, recv_upd, sent_agg, recv_agg;
  std::vector<std::vector<int>> chain_visits;  // updating device per step, per chain
  std::vector<Message> messages;
  int busiest_device = 0;
  std::uint64_t c_upd = 0, c_agg = 0, c_r = 0;
  std::optional<double> accuracy, loss;

  std::uint64_t total_sent_bits() const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < sent_upd.size(); ++i) s += sent_upd[i] + sent_agg[i];
    return s;
  }
};

struct SimState {
  Graph graph;
  TransitionMatrix walk;
  const Dataset* train = nullptr;
  const Dataset* test = nullptr;
  DevicePartition partition;
  MlpSpec spec;
  FeasibleSet feasible = FeasibleSet::unbounded();
  std::vector<DeviceState> devices;
  ParamVector server_params;  // FedAvg global model
  std::uint64_t master_seed = 0;
  int round = 0;  // rounds completed
  std::vector<int> chain_cursor;  // walk end devices, read when inherit_starts is set
  double max_grad_norm = 0.0;  // running max of minibatch gradient norms, feeds the D estimate
};

// Runtime surrogate for the Lipschitz bound D when the user supplies none.
inline double estimated_grad_bound(const SimState& st) { return 1.5 * st.max_grad_norm; }

// All devices start from one shared random model w^{1,0}.
inline SimState make_sim_state(Graph graph, const Dataset* train, const Dataset* test,
                               DevicePartition partition, MlpSpec spec, FeasibleSet feasible,
                               std::uint64_t master_seed) {
  if (graph.n != partition.n_dev)
    throw ValidationError("sim state: partition device count does not match the graph");
  SimState st;
  st.walk = mh_transition(graph);
  st.graph = std::move(graph);
  st.train = train;
  st.test = test;
  st.partition = std::move(partition);
  st.spec = std::move(spec);
  st.feasible = feasible;
  st.master_seed = master_seed;
  ParamVector w0 = init_params(st.spec, hash_combine64(master_seed, hash_tag("init")));
  project(w0, st.feasible);
  st.devices.resize(std::size_t(st.graph.n));
  for (int i = 0; i < st.graph.n; ++i) {
    auto& dev = st.devices[std::size_t(i)];
    dev.id = i;
    dev.params = w0;
    dev.n_samples = st.partition.device_size(i);
  }
  st.server_params = std::move(w0);
  return st;
}

// round(M*h/100) chains run K' epochs; which ones is a fresh uniform draw.
inline std::vector<int> assign_chain_lengths(const RoundConfig& cfg, RngStream& rng) {
  const int m = cfg.chains_m;
  std::vector<int> lengths(std::size_t(m), cfg.epochs_k);
  const int truncated = int(std::llround(double(m) * cfg.h_percent / 100.0));
  auto chosen = rng.sample_without_replacement(m, truncated);
  for (int c : chosen) lengths[std::size_t(c)] = cfg.epochs_k_prime;
  return lengths;
}

namespace detail {

inline void charge(RoundMetrics& mx, std::vector<DeviceState>& devices, int round, int step,
                   int from, int to, std::uint64_t bits, MsgKind kind) {
  mx.messages.push_back(Message{round, step, from, to, bits, kind});
  const bool upd = kind == MsgKind::hop;
  auto& sent = upd ? mx.sent_upd : mx.sent_agg;
  auto& recv = upd ? mx.recv_upd : mx.recv_agg;
  sent[std::size_t(from)] += bits;
  recv[std::size_t(to)] += bits;
  if (from < int(devices.size())) devices[std::size_t(from)].comm_bits_sent += bits;
}

// Busiest device maximizes bits sent; its cost splits into update and
// aggregation legs, both directions counted.
inline void finalize_busiest(RoundMetrics& mx) {
  int best = 0;
  std::uint64_t best_sent = 0;
  for (int i = 0; i < int(mx.sent_upd.size()); ++i) {
    const std::uint64_t s = mx.sent_upd[std::size_t(i)] + mx.sent_agg[std::size_t(i)];
    if (s > best_sent) {
      best_sent = s;
      best = i;
    }
  }
  mx.busiest_device = best;
  mx.c_upd = mx.sent_upd[std::size_t(best)] + mx.recv_upd[std::size_t(best)];
  mx.c_agg = mx.sent_agg[std::size_t(best)] + mx.recv_agg[std::size_t(best)];
  mx.c_r = mx.c_upd + mx.c_agg;
}

struct WalkOptions {
  bool identity_walk = false;
  bool drop_stragglers = false;
  bool quantized = false;
};

// Synchronous decentralized aggregation on a global barrier; all reads come
// from pre-aggregation snapshots.
inline void aggregate_decentralized(SimState& st, const RoundConfig& cfg, int t,
                                    bool quantized, RoundMetrics& mx) {
  const int n = st.graph.n;
  std::vector<int> visited;
  for (int l = 0; l < n; ++l)
    if (st.devices[std::size_t(l)].last_update) visited.push_back(l);
  if (visited.empty()) return;

  const long d = param_count(st.spec);
  // one quantized broadcast object per contributor, reused by every recipient
  std::vector<std::vector<double>> decoded(static_cast<std::size_t>(n));
  if (quantized) {
    RngStream rng_q = seed_stream(st.master_seed, "quant-agg", std::uint64_t(t));
    for (int l : visited) {
      const auto& dev = st.devices[std::size_t(l)];
      const ParamVector diff = subtract(*dev.last_update, dev.params);
      decoded[std::size_t(l)] = dequantize(quantize(diff.values, *cfg.quant, rng_q));
    }
  }

  RngStream rng_agg = seed_stream(st.master_seed, "agg", std::uint64_t(t));
  std::vector<std::vector<int>> contributors(static_cast<std::size_t>(n));
  if (cfg.agg_mode == AggMode::contributors) {
    const int target = int(std::ceil(cfg.agg_fraction * double(n)));
    for (int i = 0; i < n; ++i) {
      std::vector<int> cand;
      for (int l : st.graph.neighbors[std::size_t(i)])
        if (st.devices[std::size_t(l)].last_update) cand.push_back(l);
      const int take = std::min<int>(target, int(cand.size()));
      if (take == 0) continue;
      std::vector<int> picked = rng_agg.sample_without_replacement(int(cand.size()), take);
      std::vector<int>& mine = contributors[std::size_t(i)];
      for (int p : picked) mine.push_back(cand[std::size_t(p)]);
      std::sort(mine.begin(), mine.end());
    }
  } else {
    const int count = int(std::ceil(cfg.agg_fraction * double(n)));
    std::vector<int> aggs = rng_agg.sample_without_replacement(n, count);
    std::sort(aggs.begin(), aggs.end());
    for (int i : aggs) {
      for (int l : st.graph.neighbors[std::size_t(i)])
        if (st.devices[std::size_t(l)].last_update) contributors[std::size_t(i)].push_back(l);
    }
  }

  const std::uint64_t msg_bits =
      quantized ? wire_size_bits(d, *cfg.quant) : full_precision_bits(d);
  std::vector<std::optional<ParamVector>> staged(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& set = contributors[std::size_t(i)];
    if (set.empty()) continue;
    double m_total = 0.0;
    for (int l : set) m_total += double(st.devices[std::size_t(l)].n_samples);
    ParamVector next = quantized ? st.devices[std::size_t(i)].params : zeros_like(st.spec);
    for (int l : set) {
      const double w = double(st.devices[std::size_t(l)].n_samples) / m_total;
      if (quantized) {
        const auto& dec = decoded[std::size_t(l)];
        for (std::size_t v = 0; v < next.values.size(); ++v) next.values[v] += w * dec[v];
      } else {
        axpy(next, w, *st.devices[std::size_t(l)].last_update);
      }
      if (l != i) charge(mx, st.devices, t, -1, l, i, msg_bits, MsgKind::agg);
    }
    staged[std::size_t(i)] = std::move(next);
  }
  for (int i = 0; i < n; ++i)
    if (staged[std::size_t(i)]) st.devices[std::size_t(i)].params = std::move(*staged[std::size_t(i)]);
  for (auto& dev : st.devices) {
    dev.last_update.reset();
    dev.last_stamp = -1;
  }
}

inline RoundMetrics walk_round(SimState& st, const RoundConfig& cfg, const WalkOptions& opt) {
  const int n = st.graph.n;
  const int t = st.round + 1;
  const long d = param_count(st.spec);
  RoundMetrics mx;
  mx.round = t;
  mx.sent_upd.assign(std::size_t(n) + 1, 0);
  mx.recv_upd.assign(std::size_t(n) + 1, 0);
  mx.sent_agg.assign(std::size_t(n) + 1, 0);
  mx.recv_agg.assign(std::size_t(n) + 1, 0);
  mx.chain_visits.assign(std::size_t(cfg.chains_m), {});

  const TransitionMatrix identity = opt.identity_walk ? identity_transition(n) : TransitionMatrix{};
  const TransitionMatrix& walk = opt.identity_walk ? identity : st.walk;

  std::vector<int> starts;
  if (cfg.inherit_starts && int(st.chain_cursor.size()) == cfg.chains_m) {
    starts = st.chain_cursor;
  } else {
    RngStream rng_starts = seed_stream(st.master_seed, "starts", std::uint64_t(t));
    starts = rng_starts.sample_without_replacement(n, cfg.chains_m);
  }

  RngStream rng_het = seed_stream(st.master_seed, "hetero", std::uint64_t(t));
  const std::vector<int> lengths = assign_chain_lengths(cfg, rng_het);

  // Streams are split by purpose so that, under one master seed, every
  // algorithm draws the same batches for chain m regardless of how many walk
  // or quantization draws it makes.
  struct Chain {
    int device = 0;
    bool active = true;
    ParamVector carried;            // full-precision walking model
    std::vector<double> incoming;   // delta riding into the next step (quantized mode)
    RngStream rng_batch{0}, rng_walk{0}, rng_quant{0};
  };
  std::vector<Chain> chains;
  chains.reserve(std::size_t(cfg.chains_m));
  int max_len = 0;
  for (int m = 0; m < cfg.chains_m; ++m) {
    Chain ch;
    ch.device = starts[std::size_t(m)];
    ch.active = !opt.drop_stragglers || lengths[std::size_t(m)] == cfg.epochs_k;
    ch.rng_batch = seed_stream(st.master_seed, "batch", std::uint64_t(t), std::uint64_t(m));
    ch.rng_walk = seed_stream(st.master_seed, "walk", std::uint64_t(t), std::uint64_t(m));
    ch.rng_quant = seed_stream(st.master_seed, "qhop", std::uint64_t(t), std::uint64_t(m));
    if (ch.active) {
      if (opt.quantized)
        ch.incoming.assign(std::size_t(d), 0.0);
      else
        ch.carried = st.devices[std::size_t(ch.device)].params;
      max_len = std::max(max_len, lengths[std::size_t(m)]);
    }
    chains.push_back(std::move(ch));
  }

  const std::uint64_t hop_bits =
      opt.quantized ? wire_size_bits(d, *cfg.quant) : full_precision_bits(d);
  long stamp = 0;
  for (int k = 0; k < max_len; ++k) {
    for (int m = 0; m < cfg.chains_m; ++m) {
      Chain& ch = chains[std::size_t(m)];
      if (!ch.active || k >= lengths[std::size_t(m)]) continue;
      const int i = ch.device;
      DeviceState& dev = st.devices[std::size_t(i)];

      const auto batch_idx = batch_iter(st.partition, i, cfg.batch_size, ch.rng_batch);
      auto [feats, labels] = gather_batch(*st.train, batch_idx);
      const long k_bar = long(t - 1) * cfg.epochs_k + k + 1;
      const double eta = lr_schedule(cfg.lr_r, k_bar, cfg.lr_q);

      ParamVector w_new;
      if (opt.quantized) {
        // substitute model: round-start params plus the delta that rode in.
        // Deltas are anchored to the sender's round-start params, so under
        // near-consensus starts the chain tracks the full-precision walk to
        // quantization error on every hop, revisits included.
        ParamVector wtilde = dev.params;
        for (std::size_t v = 0; v < wtilde.values.size(); ++v) wtilde.values[v] += ch.incoming[v];
        auto [loss, grad] = loss_grad(wtilde, feats, long(labels.size()), labels);
        st.max_grad_norm = std::max(st.max_grad_norm, norm(grad));
        w_new = sgd_step(wtilde, grad, eta, st.feasible);
        dev.last_update = w_new;
        dev.last_stamp = stamp;
        mx.chain_visits[std::size_t(m)].push_back(i);
        const int next = sample_next(walk, i, ch.rng_walk);
        const ParamVector diff = subtract(w_new, dev.params);
        if (next != i) {
          const QuantizedDelta qd = quantize(diff.values, *cfg.quant, ch.rng_quant);
          ch.incoming = dequantize(qd);
          charge(mx, st.devices, t, k, i, next, hop_bits, MsgKind::hop);
        } else {
          ch.incoming = diff.values;  // no transfer, the device keeps exact state
        }
        ch.device = next;
      } else {
        auto [loss, grad] = loss_grad(ch.carried, feats, long(labels.size()), labels);
        st.max_grad_norm = std::max(st.max_grad_norm, norm(grad));
        ch.carried = sgd_step(ch.carried, grad, eta, st.feasible);
        dev.last_update = ch.carried;
        dev.last_stamp = stamp;
        mx.chain_visits[std::size_t(m)].push_back(i);
        const int next = sample_next(walk, i, ch.rng_walk);
        if (next != i) charge(mx, st.devices, t, k, i, next, hop_bits, MsgKind::hop);
        ch.device = next;
      }
      ++stamp;
    }
  }

  if (cfg.inherit_starts) {
    st.chain_cursor.resize(std::size_t(cfg.chains_m));
    for (int m = 0; m < cfg.chains_m; ++m) st.chain_cursor[std::size_t(m)] = chains[std::size_t(m)].device;
  }

  if (t % cfg.phi == 0) aggregate_decentralized(st, cfg, t, opt.quantized, mx);

  finalize_busiest(mx);
  st.round = t;
  return mx;
}

// Centralized baseline; the server occupies metrics slot n and drops
// truncated chains entirely.
inline RoundMetrics fedavg_round(SimState& st, const RoundConfig& cfg) {
  const int n = st.graph.n;
  const int t = st.round + 1;
  const long d = param_count(st.spec);
  const int server = n;
  RoundMetrics mx;
  mx.round = t;
  mx.sent_upd.assign(std::size_t(n) + 1, 0);
  mx.recv_upd.assign(std::size_t(n) + 1, 0);
  mx.sent_agg.assign(std::size_t(n) + 1, 0);
  mx.recv_agg.assign(std::size_t(n) + 1, 0);
  mx.chain_visits.assign(std::size_t(cfg.chains_m), {});

  RngStream rng_starts = seed_stream(st.master_seed, "starts", std::uint64_t(t));
  const std::vector<int> sampled = rng_starts.sample_without_replacement(n, cfg.chains_m);
  RngStream rng_het = seed_stream(st.master_seed, "hetero", std::uint64_t(t));
  const std::vector<int> lengths = assign_chain_lengths(cfg, rng_het);

  const std::uint64_t leg_bits = full_precision_bits(d);
  for (int m = 0; m < cfg.chains_m; ++m)
    charge(mx, st.devices, t, -1, server, sampled[std::size_t(m)], leg_bits, MsgKind::down);

  struct Update {
    int device;
    long n_samples;
    ParamVector params;
  };
  std::vector<Update> updates;
  for (int m = 0; m < cfg.chains_m; ++m) {
    if (lengths[std::size_t(m)] != cfg.epochs_k) continue;  // straggler dropped
    const int i = sampled[std::size_t(m)];
    RngStream rng = seed_stream(st.master_seed, "batch", std::uint64_t(t), std::uint64_t(m));
    ParamVector w = st.server_params;
    for (int k = 0; k < cfg.epochs_k; ++k) {
      const auto batch_idx = batch_iter(st.partition, i, cfg.batch_size, rng);
      auto [feats, labels] = gather_batch(*st.train, batch_idx);
      const long k_bar = long(t - 1) * cfg.epochs_k + k + 1;
      auto [loss, grad] = loss_grad(w, feats, long(labels.size()), labels);
      st.max_grad_norm = std::max(st.max_grad_norm, norm(grad));
      w = sgd_step(w, grad, lr_schedule(cfg.lr_r, k_bar, cfg.lr_q), st.feasible);
      mx.chain_visits[std::size_t(m)].push_back(i);
    }
    charge(mx, st.devices, t, -1, i, server, leg_bits, MsgKind::up);
    updates.push_back(Update{i, st.devices[std::size_t(i)].n_samples, std::move(w)});
  }

  if (!updates.empty()) {
    std::sort(updates.begin(), updates.end(),
              [](const Update& a, const Update& b) { return a.device < b.device; });
    double m_total = 0.0;
    for (const auto& u : updates) m_total += double(u.n_samples);
    ParamVector next = zeros_like(st.spec);
    for (const auto& u : updates) axpy(next, double(u.n_samples) / m_total, u.params);
    st.server_params = std::move(next);
  }

  finalize_busiest(mx);
  st.round = t;
  return mx;
}

}  // namespace detail

inline RoundMetrics run_dfedrw_round(SimState& st, const RoundConfig& cfg) {
  return detail::walk_round(st, cfg, detail::WalkOptions{false, false, false});
}

inline RoundMetrics run_qdfedrw_round(SimState& st, const RoundConfig& cfg) {
  if (!cfg.quant) throw ValidationError("qdfedrw requires a quant config");
  return detail::walk_round(st, cfg, detail::WalkOptions{false, false, true});
}

// DSGD: one step everywhere then gossip. Shares the walk path with the
// transition forced to identity, so every hop is an uncharged self-loop.
inline RoundMetrics run_dsgd_round(SimState& st, const RoundConfig& cfg) {
  RoundConfig local = cfg;
  local.chains_m = st.graph.n;
  local.epochs_k = 1;
  local.epochs_k_prime = 1;
  return detail::walk_round(st, local, detail::WalkOptions{true, false, false});
}

// DFedAvg: K local epochs on M sampled devices, then gossip; stragglers drop.
inline RoundMetrics run_dfedavg_round(SimState& st, const RoundConfig& cfg) {
  return detail::walk_round(st, cfg, detail::WalkOptions{true, true, false});
}

inline RoundMetrics run_fedavg_round(SimState& st, const RoundConfig& cfg) {
  return detail::fedavg_round(st, cfg);
}

inline RoundMetrics run_round(SimState& st, const RoundConfig& cfg) {
  validate_round_config(cfg, st.graph.n);
  switch (cfg.algorithm) {
    case Algorithm::dfedrw: return run_dfedrw_round(st, cfg);
    case Algorithm::qdfedrw: return run_qdfedrw_round(st, cfg);
    case Algorithm::dsgd: return run_dsgd_round(st, cfg);
    case Algorithm::fedavg: return run_fedavg_round(st, cfg);
    case Algorithm::dfedavg: return run_dfedavg_round(st, cfg);
  }
  throw ValidationError("unknown algorithm");
}

// Reported model: FedAvg evaluates the server, decentralized algorithms the
// uniform mean of device params.
inline ParamVector reporting_model(const SimState& st, Algorithm alg) {
  if (alg == Algorithm::fedavg) return st.server_params;
  ParamVector mean = zeros_like(st.spec);
  for (const auto& dev : st.devices) axpy(mean, 1.0 / double(st.devices.size()), dev.params);
  return mean;
}

// Per-round (device, C_upd, C_agg, C_R) for the device that sent the most.
struct BusiestRow {
  int round;
  int device;
  std::uint64_t c_upd, c_agg, c_r;
};

inline std::vector<BusiestRow> busiest_device_report(const std::vector<RoundMetrics>& rounds) {
  if (rounds.empty()) throw ValidationError("busiest_device_report: no rounds");
  std::vector<BusiestRow> out;
  out.reserve(rounds.size());
  for (const auto& mx : rounds)
    out.push_back(BusiestRow{mx.round, mx.busiest_device, mx.c_upd, mx.c_agg, mx.c_r});
  return out;
}

}  // namespace dfedrw
