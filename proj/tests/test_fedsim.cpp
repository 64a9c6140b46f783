#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "dfedrw/fedsim.hpp"

using namespace dfedrw;

namespace {

struct Fixture {
  Dataset train, test;

  Fixture() {
    train = synth_clusters(4, 6, 64, 0.08, 31);  // 256 samples
    test = synth_clusters(4, 6, 16, 0.08, 32);
  }

  SimState state(int n, TopologyKind kind, std::uint64_t seed, double u = 100.0) const {
    Graph g = build_topology(kind, n, kind == TopologyKind::expander ? 3 : 0, seed);
    DevicePartition dp = partition_similarity(train, n, u, seed);
    MlpSpec spec{{6, 8, 4}};
    return make_sim_state(std::move(g), &train, &test, std::move(dp), spec,
                          FeasibleSet::unbounded(), seed);
  }
};

RoundConfig base_config(Algorithm alg) {
  RoundConfig cfg;
  cfg.algorithm = alg;
  cfg.chains_m = 4;
  cfg.epochs_k = 3;
  cfg.epochs_k_prime = 1;
  cfg.h_percent = 0.0;
  cfg.agg_fraction = 1.0;
  cfg.phi = 1;
  cfg.batch_size = 8;
  cfg.lr_r = 5.0;
  cfg.lr_q = 0.499;
  return cfg;
}

std::vector<std::vector<double>> device_params(const SimState& st) {
  std::vector<std::vector<double>> out;
  for (const auto& dev : st.devices) out.push_back(dev.params.values);
  return out;
}

void check_conservation(const RoundMetrics& mx) {
  std::uint64_t from_messages = 0;
  for (const auto& m : mx.messages) from_messages += m.bits;
  CHECK(mx.total_sent_bits() == from_messages);
}

}  // namespace

TEST_CASE("chain lengths split by the heterogeneity share") {
  RoundConfig cfg = base_config(Algorithm::dfedrw);
  cfg.chains_m = 10;
  cfg.epochs_k = 5;
  cfg.epochs_k_prime = 2;
  cfg.h_percent = 50.0;
  RngStream rng(3);
  const auto lengths = assign_chain_lengths(cfg, rng);
  CHECK(std::count(lengths.begin(), lengths.end(), 2) == 5);
  CHECK(std::count(lengths.begin(), lengths.end(), 5) == 5);

  cfg.h_percent = 0.0;
  RngStream rng2(3);
  for (int k : assign_chain_lengths(cfg, rng2)) CHECK(k == 5);
  cfg.h_percent = 100.0;
  RngStream rng3(3);
  for (int k : assign_chain_lengths(cfg, rng3)) CHECK(k == 2);
}

TEST_CASE("a single 3-step chain does 3 updates and charges at most 3 hops") {
  Fixture fx;
  SimState st = fx.state(4, TopologyKind::ring, 7);
  RoundConfig cfg = base_config(Algorithm::dfedrw);
  cfg.chains_m = 1;
  cfg.epochs_k = 3;
  const long d = param_count(st.spec);
  const RoundMetrics mx = run_dfedrw_round(st, cfg);
  REQUIRE(mx.chain_visits.size() == 1);
  CHECK(mx.chain_visits[0].size() == 3);
  std::uint64_t hop_bits = 0;
  int hops = 0;
  for (const auto& m : mx.messages)
    if (m.kind == MsgKind::hop) {
      hop_bits += m.bits;
      ++hops;
      CHECK(m.bits == std::uint64_t(32) * std::uint64_t(d));
      CHECK(m.from != m.to);  // self-loops are never charged
    }
  CHECK(hops <= 3);
  CHECK(hop_bits <= 3 * std::uint64_t(32) * std::uint64_t(d));
  check_conservation(mx);
}

TEST_CASE("round gradient-step budget is the sum of chain lengths") {
  Fixture fx;
  SimState st = fx.state(8, TopologyKind::complete, 11);
  RoundConfig cfg = base_config(Algorithm::dfedrw);
  cfg.chains_m = 5;
  cfg.epochs_k = 4;
  cfg.epochs_k_prime = 2;
  cfg.h_percent = 40.0;  // 2 of 5 chains truncated
  const RoundMetrics mx = run_dfedrw_round(st, cfg);
  long steps = 0;
  for (const auto& visits : mx.chain_visits) steps += long(visits.size());
  CHECK(steps == 2 * 2 + 3 * 4);
}

TEST_CASE("DFedRW with K=1 and phi=1 walks in lockstep with DSGD") {
  Fixture fx;
  const int n = 8;
  RoundConfig cfg = base_config(Algorithm::dfedrw);
  cfg.chains_m = n;
  cfg.epochs_k = 1;
  cfg.epochs_k_prime = 1;
  cfg.agg_fraction = 0.5;

  SimState a = fx.state(n, TopologyKind::ring, 5);
  SimState b = fx.state(n, TopologyKind::ring, 5);
  RoundConfig dsgd = cfg;
  dsgd.algorithm = Algorithm::dsgd;
  for (int t = 0; t < 10; ++t) {
    run_dfedrw_round(a, cfg);
    run_dsgd_round(b, dsgd);
    REQUIRE(device_params(a) == device_params(b));  // bit-exact
  }
}

TEST_CASE("DFedRW on an identity transition is DFedAvg") {
  Fixture fx;
  const int n = 8;
  RoundConfig cfg = base_config(Algorithm::dfedrw);
  cfg.chains_m = 4;
  cfg.epochs_k = 3;

  SimState a = fx.state(n, TopologyKind::complete, 9);
  a.walk = identity_transition(n);  // force self-loops for the walk only
  SimState b = fx.state(n, TopologyKind::complete, 9);
  RoundConfig davg = cfg;
  davg.algorithm = Algorithm::dfedavg;
  for (int t = 0; t < 10; ++t) {
    run_dfedrw_round(a, cfg);
    run_dfedavg_round(b, davg);
    REQUIRE(device_params(a) == device_params(b));
  }
}

TEST_CASE("DSGD rounds post zero update traffic") {
  Fixture fx;
  SimState st = fx.state(6, TopologyKind::ring, 13);
  RoundConfig cfg = base_config(Algorithm::dsgd);
  const RoundMetrics mx = run_dsgd_round(st, cfg);
  for (const auto& m : mx.messages) CHECK(m.kind != MsgKind::hop);
  CHECK(mx.c_upd == 0);
  CHECK(mx.c_r == mx.c_agg);
  check_conservation(mx);
}

TEST_CASE("full aggregation on a complete graph plainly averages the updates") {
  Fixture fx;
  const int n = 6;
  // equal n_l by construction of the similarity partition at u=100
  SimState st = fx.state(n, TopologyKind::complete, 17);
  RoundConfig cfg = base_config(Algorithm::dsgd);
  cfg.agg_fraction = 1.0;
  run_dsgd_round(st, cfg);  // every device visited, every device aggregates

  // all devices end identical: same contributor set, same order, same weights
  const auto params = device_params(st);
  for (int i = 1; i < n; ++i) REQUIRE(params[std::size_t(i)] == params[0]);
}

TEST_CASE("a single visited device hands its update to every neighbor") {
  Fixture fx;
  const int n = 5;
  SimState st = fx.state(n, TopologyKind::complete, 23);
  RoundConfig cfg = base_config(Algorithm::dfedrw);
  cfg.chains_m = 1;
  cfg.epochs_k = 1;
  st.walk = identity_transition(n);  // chain stays on its start device
  const RoundMetrics mx = run_dfedrw_round(st, cfg);
  REQUIRE(mx.chain_visits[0].size() == 1);
  const int visited = mx.chain_visits[0][0];
  const auto params = device_params(st);
  for (int i = 0; i < n; ++i) REQUIRE(params[std::size_t(i)] == params[std::size_t(visited)]);
  check_conservation(mx);
}

TEST_CASE("aggregation takes the n_l-weighted mean with weights summing to one") {
  Fixture fx;
  const int n = 5;
  SimState st = fx.state(n, TopologyKind::complete, 29);
  // hand-placed updates: device l's update is the constant vector (l+1),
  // with deliberately unequal sample counts
  for (int l = 0; l < n; ++l) {
    ParamVector u = zeros_like(st.spec);
    std::fill(u.values.begin(), u.values.end(), double(l + 1));
    st.devices[std::size_t(l)].last_update = std::move(u);
    st.devices[std::size_t(l)].n_samples = 10 * (l + 1);
  }
  RoundConfig cfg = base_config(Algorithm::dfedrw);
  cfg.agg_fraction = 1.0;  // every device aggregates all visited neighbors
  RoundMetrics mx;
  mx.sent_upd.assign(std::size_t(n) + 1, 0);
  mx.recv_upd.assign(std::size_t(n) + 1, 0);
  mx.sent_agg.assign(std::size_t(n) + 1, 0);
  mx.recv_agg.assign(std::size_t(n) + 1, 0);
  detail::aggregate_decentralized(st, cfg, 1, false, mx);

  double m_total = 0, expect = 0;
  for (int l = 0; l < n; ++l) m_total += 10.0 * (l + 1);
  for (int l = 0; l < n; ++l) expect += (10.0 * (l + 1) / m_total) * double(l + 1);
  for (int i = 0; i < n; ++i) {
    for (double v : st.devices[std::size_t(i)].params.values) {
      CHECK(v == Catch::Approx(expect).margin(1e-12));  // weights summed to 1
      CHECK(v >= 1.0);
      CHECK(v <= double(n));  // convex envelope of the contributions
    }
    CHECK_FALSE(st.devices[std::size_t(i)].last_update.has_value());
  }
}

TEST_CASE("FedAvg with full participation equals averaged-gradient SGD at K=1") {
  Fixture fx;
  const int n = 6;
  SimState st = fx.state(n, TopologyKind::complete, 41);
  RoundConfig cfg = base_config(Algorithm::fedavg);
  cfg.chains_m = n;
  cfg.epochs_k = 1;
  cfg.epochs_k_prime = 1;

  const ParamVector w0 = st.server_params;
  // oracle: per-device gradients at w0, each device steps, then average
  std::vector<ParamVector> locals;
  for (int m = 0; m < n; ++m) {
    RngStream probe = seed_stream(st.master_seed, "starts", 1);
    const auto sampled = probe.sample_without_replacement(n, n);
    RngStream rng = seed_stream(st.master_seed, "batch", 1, std::uint64_t(m));
    const auto batch = batch_iter(st.partition, sampled[std::size_t(m)], cfg.batch_size, rng);
    auto [feats, labels] = gather_batch(fx.train, batch);
    const auto grad = loss_grad(w0, feats, long(labels.size()), labels).second;
    locals.push_back(sgd_step(w0, grad, lr_schedule(cfg.lr_r, 1, cfg.lr_q), st.feasible));
  }
  run_fedavg_round(st, cfg);
  // equal n_l: the server model is the plain average of the local steps,
  // which equals one SGD step with the averaged gradient
  ParamVector mean = zeros_like(st.spec);
  for (const auto& w : locals) axpy(mean, 1.0 / n, w);
  for (std::size_t i = 0; i < mean.values.size(); ++i)
    CHECK(st.server_params.values[i] == Catch::Approx(mean.values[i]).margin(1e-12));
}

TEST_CASE("DFedAvg on a complete graph with full aggregation tracks FedAvg") {
  Fixture fx;
  const int n = 6;
  RoundConfig cfg = base_config(Algorithm::dfedavg);
  cfg.chains_m = n;  // full participation
  cfg.epochs_k = 3;
  cfg.agg_fraction = 1.0;

  SimState a = fx.state(n, TopologyKind::complete, 43);
  SimState b = fx.state(n, TopologyKind::complete, 43);
  RoundConfig fed = cfg;
  fed.algorithm = Algorithm::fedavg;
  for (int t = 0; t < 6; ++t) {
    run_dfedavg_round(a, cfg);
    run_fedavg_round(b, fed);
    const auto pa = device_params(a);
    for (std::size_t i = 0; i < pa[0].size(); ++i)
      REQUIRE(pa[0][i] == Catch::Approx(b.server_params.values[i]).margin(1e-12));
  }
}

TEST_CASE("QDFedRW hop messages carry 64 + b*d bits") {
  Fixture fx;
  SimState st = fx.state(6, TopologyKind::complete, 47);
  RoundConfig cfg = base_config(Algorithm::qdfedrw);
  cfg.quant = make_quant_config(8);
  cfg.chains_m = 2;
  cfg.epochs_k = 3;
  const long d = param_count(st.spec);
  const RoundMetrics mx = run_qdfedrw_round(st, cfg);
  bool saw_hop = false;
  for (const auto& m : mx.messages)
    if (m.kind == MsgKind::hop) {
      saw_hop = true;
      CHECK(m.bits == std::uint64_t(64 + 8 * d));
    }
  CHECK(saw_hop);
  check_conservation(mx);
}

TEST_CASE("hop charges equal the serialized wire length at b=8") {
  Fixture fx;
  SimState st = fx.state(6, TopologyKind::complete, 53);
  RoundConfig cfg = base_config(Algorithm::qdfedrw);
  cfg.quant = make_quant_config(8);
  const long d = param_count(st.spec);
  const RoundMetrics mx = run_qdfedrw_round(st, cfg);
  // b = 8 packs without padding, so charged bits equal serialized bytes * 8
  RngStream rng(1);
  std::vector<double> probe(std::size_t(d), 0.25);
  const auto bytes = serialize_delta(quantize(probe, *cfg.quant, rng));
  for (const auto& m : mx.messages)
    if (m.kind == MsgKind::hop) CHECK(m.bits == 8 * bytes.size());
}

TEST_CASE("quantized aggregation adds weighted decoded deltas to own params") {
  Fixture fx;
  const int n = 4;
  SimState st = fx.state(n, TopologyKind::complete, 59);
  // device 1 visited with a known delta; everyone else unvisited
  ParamVector moved = st.devices[1].params;
  for (auto& v : moved.values) v += 0.125;  // exactly representable delta
  st.devices[1].last_update = moved;
  RoundConfig cfg = base_config(Algorithm::qdfedrw);
  cfg.quant = make_quant_config(32, 1e-6);
  cfg.agg_fraction = 1.0;
  RoundMetrics mx;
  mx.sent_upd.assign(std::size_t(n) + 1, 0);
  mx.recv_upd.assign(std::size_t(n) + 1, 0);
  mx.sent_agg.assign(std::size_t(n) + 1, 0);
  mx.recv_agg.assign(std::size_t(n) + 1, 0);
  const auto before = device_params(st);
  detail::aggregate_decentralized(st, cfg, 1, true, mx);
  for (int i = 0; i < n; ++i) {
    // single contributor, weight 1: params_i + decoded(delta of device 1)
    for (std::size_t v = 0; v < before[std::size_t(i)].size(); ++v) {
      const double got = st.devices[std::size_t(i)].params.values[v];
      CHECK(got == Catch::Approx(before[std::size_t(i)][v] + 0.125).margin(1e-5));
    }
  }
}

TEST_CASE("a zero parameter delta decodes to exactly zero") {
  const QuantConfig cfg = make_quant_config(8);
  RngStream rng(3);
  const std::vector<double> zero(64, 0.0);
  const auto decoded = dequantize(quantize(zero, cfg, rng));
  for (double v : decoded) CHECK(v == 0.0);
}

TEST_CASE("near-lossless quantization tracks DFedRW closely") {
  Fixture fx;
  const int n = 8;
  RoundConfig cfg = base_config(Algorithm::dfedrw);
  cfg.chains_m = 3;
  cfg.epochs_k = 3;
  cfg.agg_fraction = 1.0;

  SimState plain = fx.state(n, TopologyKind::complete, 51);
  SimState quant = fx.state(n, TopologyKind::complete, 51);
  RoundConfig qcfg = cfg;
  qcfg.algorithm = Algorithm::qdfedrw;
  qcfg.quant = make_quant_config(32, 1e-6);

  double worst_gap = 0.0;
  for (int t = 0; t < 20; ++t) {
    run_dfedrw_round(plain, cfg);
    run_qdfedrw_round(quant, qcfg);
    const auto [acc_p, loss_p] = evaluate(reporting_model(plain, Algorithm::dfedrw), fx.test);
    const auto [acc_q, loss_q] = evaluate(reporting_model(quant, Algorithm::qdfedrw), fx.test);
    worst_gap = std::max(worst_gap, std::abs(acc_p - acc_q));
  }
  CHECK(worst_gap <= 0.005);  // within half an accuracy point at every eval
}

TEST_CASE("runs are deterministic given the master seed") {
  Fixture fx;
  RoundConfig cfg = base_config(Algorithm::qdfedrw);
  cfg.quant = make_quant_config(8);
  cfg.h_percent = 30.0;
  cfg.epochs_k = 3;
  cfg.epochs_k_prime = 1;

  SimState a = fx.state(8, TopologyKind::expander, 61);
  SimState b = fx.state(8, TopologyKind::expander, 61);
  for (int t = 0; t < 5; ++t) {
    const RoundMetrics ma = run_round(a, cfg);
    const RoundMetrics mb = run_round(b, cfg);
    REQUIRE(ma.total_sent_bits() == mb.total_sent_bits());
    REQUIRE(ma.messages.size() == mb.messages.size());
    REQUIRE(device_params(a) == device_params(b));
  }
}

TEST_CASE("dropped stragglers do no work in baseline rounds") {
  Fixture fx;
  SimState st = fx.state(8, TopologyKind::complete, 67);
  RoundConfig cfg = base_config(Algorithm::dfedavg);
  cfg.chains_m = 4;
  cfg.epochs_k = 4;
  cfg.epochs_k_prime = 1;
  cfg.h_percent = 50.0;  // 2 of 4 chains dropped
  const RoundMetrics mx = run_dfedavg_round(st, cfg);
  long active_chains = 0;
  for (const auto& visits : mx.chain_visits) {
    if (!visits.empty()) {
      ++active_chains;
      CHECK(visits.size() == 4);  // survivors run the full K
    }
  }
  CHECK(active_chains == 2);
}

TEST_CASE("phi=2 delays aggregation and pools both rounds' updates") {
  Fixture fx;
  SimState st = fx.state(6, TopologyKind::complete, 71);
  RoundConfig cfg = base_config(Algorithm::dfedrw);
  cfg.chains_m = 2;
  cfg.epochs_k = 2;
  cfg.phi = 2;

  const RoundMetrics m1 = run_dfedrw_round(st, cfg);
  for (const auto& m : m1.messages) CHECK(m.kind == MsgKind::hop);  // no agg messages yet
  int visited_after_1 = 0;
  for (const auto& dev : st.devices)
    if (dev.last_update) ++visited_after_1;
  CHECK(visited_after_1 >= 1);

  const RoundMetrics m2 = run_dfedrw_round(st, cfg);
  bool saw_agg = false;
  for (const auto& m : m2.messages) saw_agg |= (m.kind == MsgKind::agg);
  CHECK(saw_agg);
  for (const auto& dev : st.devices) CHECK_FALSE(dev.last_update.has_value());
}

TEST_CASE("inherit_starts resumes each chain at its previous end device") {
  Fixture fx;
  SimState st = fx.state(8, TopologyKind::ring, 73);
  RoundConfig cfg = base_config(Algorithm::dfedrw);
  cfg.chains_m = 2;
  cfg.epochs_k = 2;
  cfg.inherit_starts = true;

  run_dfedrw_round(st, cfg);
  const auto cursor = st.chain_cursor;
  REQUIRE(cursor.size() == 2);
  const RoundMetrics m2 = run_dfedrw_round(st, cfg);
  for (int m = 0; m < 2; ++m) REQUIRE(m2.chain_visits[std::size_t(m)][0] == cursor[std::size_t(m)]);
}

TEST_CASE("busiest-device report splits update and aggregation legs") {
  Fixture fx;
  SimState st = fx.state(8, TopologyKind::complete, 79);
  RoundConfig cfg = base_config(Algorithm::dfedrw);
  cfg.chains_m = 3;
  cfg.epochs_k = 3;
  cfg.agg_fraction = 0.5;
  std::vector<RoundMetrics> rounds;
  for (int t = 0; t < 3; ++t) rounds.push_back(run_dfedrw_round(st, cfg));
  const auto report = busiest_device_report(rounds);
  REQUIRE(report.size() == 3);
  for (std::size_t i = 0; i < report.size(); ++i) {
    CHECK(report[i].round == int(i) + 1);
    CHECK(report[i].c_r == report[i].c_upd + report[i].c_agg);
    // recompute the busiest device from the trace
    const auto& mx = rounds[i];
    std::vector<std::uint64_t> sent(st.devices.size() + 1, 0);
    for (const auto& m : mx.messages) sent[std::size_t(m.from)] += m.bits;
    std::uint64_t best = 0;
    for (auto b : sent) best = std::max(best, b);
    CHECK(sent[std::size_t(report[i].device)] == best);
  }
}

TEST_CASE("FedAvg charges the server for both legs and it is the busiest") {
  Fixture fx;
  const int n = 6;
  SimState st = fx.state(n, TopologyKind::complete, 83);
  RoundConfig cfg = base_config(Algorithm::fedavg);
  cfg.chains_m = 3;
  const long d = param_count(st.spec);
  const RoundMetrics mx = run_fedavg_round(st, cfg);
  std::uint64_t down = 0, up = 0;
  for (const auto& m : mx.messages) {
    if (m.kind == MsgKind::down) {
      CHECK(m.from == n);
      down += m.bits;
    } else if (m.kind == MsgKind::up) {
      CHECK(m.to == n);
      up += m.bits;
    }
  }
  CHECK(down == std::uint64_t(3) * 32 * std::uint64_t(d));
  CHECK(up == std::uint64_t(3) * 32 * std::uint64_t(d));
  CHECK(mx.busiest_device == n);
  check_conservation(mx);
}
