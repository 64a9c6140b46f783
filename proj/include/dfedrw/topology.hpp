#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dfedrw/errors.hpp"
#include "dfedrw/rng.hpp"

namespace dfedrw {

enum class TopologyKind { complete, ring, expander, custom };

inline const char* to_string(TopologyKind k) {
  switch (k) {
    case TopologyKind::complete: return "complete";
    case TopologyKind::ring: return "ring";
    case TopologyKind::expander: return "expander";
    case TopologyKind::custom: return "custom";
  }
  return "?";
}

// Undirected device graph with mandatory self-loops. Immutable once built.
struct Graph {
  int n = 0;
  std::vector<std::vector<int>> neighbors;  // sorted, always contains the device itself
  TopologyKind kind = TopologyKind::custom;
  int expander_c = 0;

  int degree(int i) const { return int(neighbors[std::size_t(i)].size()); }

  bool adjacent(int i, int j) const {
    const auto& ni = neighbors[std::size_t(i)];
    return std::binary_search(ni.begin(), ni.end(), j);
  }
};

// Row-stochastic Metropolis-Hastings walk matrix, dense row-major.
struct TransitionMatrix {
  int n = 0;
  std::vector<double> p;  // n*n row-major

  double at(int i, int j) const { return p[std::size_t(i) * std::size_t(n) + std::size_t(j)]; }
  double& at(int i, int j) { return p[std::size_t(i) * std::size_t(n) + std::size_t(j)]; }
};

struct SpectralSummary {
  std::vector<double> eigenvalues;  // sorted descending, eigenvalues[0] ~ 1
  double lambda_p = 0.0;            // (max{|lambda_2|, |lambda_n|} + 1) / 2
};

namespace detail {

inline bool connected(const std::vector<std::vector<int>>& adj) {
  const int n = int(adj.size());
  if (n == 0) return false;
  std::vector<char> seen(std::size_t(n), 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int count = 1;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (int w : adj[std::size_t(v)]) {
      if (!seen[std::size_t(w)]) {
        seen[std::size_t(w)] = 1;
        ++count;
        stack.push_back(w);
      }
    }
  }
  return count == n;
}

inline void add_self_loops_and_sort(std::vector<std::vector<int>>& adj) {
  for (int i = 0; i < int(adj.size()); ++i) {
    auto& ni = adj[std::size_t(i)];
    ni.push_back(i);
    std::sort(ni.begin(), ni.end());
    ni.erase(std::unique(ni.begin(), ni.end()), ni.end());
  }
}

// One attempt at a random c-regular simple graph. Even n: union of c random
// perfect matchings. Odd n (c must be even): union of c/2 random Hamiltonian
// cycles. Returns nullopt when an attempt collides with an existing edge.
inline std::optional<std::vector<std::set<int>>> regular_attempt(int n, int c, RngStream& rng) {
  std::vector<std::set<int>> edges(static_cast<std::size_t>(n));
  auto add_edge = [&](int a, int b) -> bool {
    if (a == b) return false;
    if (edges[std::size_t(a)].count(b)) return false;
    edges[std::size_t(a)].insert(b);
    edges[std::size_t(b)].insert(a);
    return true;
  };
  if (n % 2 == 0) {
    for (int matching = 0; matching < c; ++matching) {
      std::vector<int> perm(static_cast<std::size_t>(n));
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm);
      for (int i = 0; i < n; i += 2)
        if (!add_edge(perm[std::size_t(i)], perm[std::size_t(i + 1)])) return std::nullopt;
    }
  } else {
    for (int cyc = 0; cyc < c / 2; ++cyc) {
      std::vector<int> perm(static_cast<std::size_t>(n));
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm);
      for (int i = 0; i < n; ++i)
        if (!add_edge(perm[std::size_t(i)], perm[std::size_t((i + 1) % n)])) return std::nullopt;
    }
  }
  return edges;
}

}  // namespace detail

inline constexpr int kMaxDevices = 4096;  // dense spectral work beyond this is refused

inline void validate_graph(const Graph& g) {
  if (g.n < 2) throw ValidationError("graph requires n >= 2");
  if (g.n > kMaxDevices) throw ValidationError("graph exceeds the dense-matrix cap n <= 4096");
  for (int i = 0; i < g.n; ++i) {
    const auto& ni = g.neighbors[std::size_t(i)];
    if (!std::is_sorted(ni.begin(), ni.end())) throw ValidationError("neighbor lists must be sorted");
    if (!std::binary_search(ni.begin(), ni.end(), i))
      throw ValidationError("device " + std::to_string(i) + " lacks its self-loop");
    for (int j : ni) {
      if (j < 0 || j >= g.n) throw ValidationError("neighbor id out of range");
      if (!g.adjacent(j, i))
        throw ValidationError("asymmetric adjacency between " + std::to_string(i) + " and " + std::to_string(j));
    }
  }
  if (!detail::connected(g.neighbors)) throw ValidationError("graph is not connected");
}

inline Graph build_topology(TopologyKind kind, int n, int c = 0, std::uint64_t seed = 0) {
  if (n < 2) throw ValidationError("build_topology: n >= 2 required");
  if (n > kMaxDevices) throw ValidationError("build_topology: n exceeds the dense cap 4096");
  Graph g;
  g.n = n;
  g.kind = kind;
  g.neighbors.assign(std::size_t(n), {});
  switch (kind) {
    case TopologyKind::complete: {
      for (int i = 0; i < n; ++i) {
        g.neighbors[std::size_t(i)].resize(std::size_t(n));
        std::iota(g.neighbors[std::size_t(i)].begin(), g.neighbors[std::size_t(i)].end(), 0);
      }
      break;
    }
    case TopologyKind::ring: {
      if (n < 3) throw ValidationError("build_topology: ring requires n >= 3");
      for (int i = 0; i < n; ++i) {
        std::vector<int> ni{(i + n - 1) % n, i, (i + 1) % n};
        std::sort(ni.begin(), ni.end());
        g.neighbors[std::size_t(i)] = ni;
      }
      break;
    }
    case TopologyKind::expander: {
      if (c < 2 || c >= n)
        throw ValidationError("build_topology: expander requires 2 <= c < n");
      if ((std::int64_t(c) * n) % 2 != 0)
        throw ValidationError("build_topology: expander requires c*n even");
      if (n % 2 != 0 && c % 2 != 0)
        throw ValidationError("build_topology: odd n requires even c");
      g.expander_c = c;
      RngStream rng = seed_stream(seed, "expander");
      bool ok = false;
      for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
        auto edges = detail::regular_attempt(n, c, rng);
        if (!edges) continue;
        std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) adj[std::size_t(i)].assign((*edges)[std::size_t(i)].begin(), (*edges)[std::size_t(i)].end());
        if (!detail::connected(adj)) continue;
        detail::add_self_loops_and_sort(adj);
        g.neighbors = std::move(adj);
        ok = true;
      }
      if (!ok) throw ValidationError("build_topology: no connected c-regular graph found in 1000 attempts");
      break;
    }
    case TopologyKind::custom:
      throw ValidationError("build_topology: custom graphs load from an adjacency file");
  }
  validate_graph(g);
  return g;
}

// Adjacency-list text format, one line per device: "id: j1 j2 ...".
// Self-loops are implied and added when absent.
inline Graph load_adjacency(std::istream& in) {
  std::vector<std::vector<int>> adj;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos)
      throw FormatError("adjacency line " + std::to_string(line_no) + ": missing ':'");
    int id = 0;
    try {
      id = std::stoi(line.substr(0, colon));
    } catch (const std::exception&) {
      throw FormatError("adjacency line " + std::to_string(line_no) + ": bad device id");
    }
    if (id < 0) throw FormatError("adjacency line " + std::to_string(line_no) + ": negative id");
    if (int(adj.size()) <= id) adj.resize(std::size_t(id) + 1);
    std::istringstream rest(line.substr(colon + 1));
    int j = 0;
    while (rest >> j) {
      if (j < 0) throw FormatError("adjacency line " + std::to_string(line_no) + ": negative neighbor");
      if (int(adj.size()) <= j) adj.resize(std::size_t(j) + 1);
      adj[std::size_t(id)].push_back(j);
    }
  }
  // symmetry is required of the file; only the self-loop is implied
  const int n = int(adj.size());
  for (int i = 0; i < n; ++i) {
    for (int j : adj[std::size_t(i)]) {
      if (j == i) continue;
      const auto& nj = adj[std::size_t(j)];
      if (std::find(nj.begin(), nj.end(), i) == nj.end())
        throw FormatError("adjacency is asymmetric: " + std::to_string(i) + " -> " + std::to_string(j) +
                          " has no reverse edge");
    }
  }
  detail::add_self_loops_and_sort(adj);
  Graph g;
  g.n = n;
  g.kind = TopologyKind::custom;
  g.neighbors = std::move(adj);
  validate_graph(g);
  return g;
}

inline Graph load_adjacency_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open adjacency file: " + path);
  return load_adjacency(in);
}

// MH rule with uniform target: p[i][j] = min{1/deg(i), 1/deg(j)} off the
// diagonal, residual mass on the self-loop. deg counts the self-loop.
inline TransitionMatrix mh_transition(const Graph& g) {
  TransitionMatrix tm;
  tm.n = g.n;
  tm.p.assign(std::size_t(g.n) * std::size_t(g.n), 0.0);
  for (int i = 0; i < g.n; ++i) {
    double off = 0.0;
    for (int j : g.neighbors[std::size_t(i)]) {
      if (j == i) continue;
      const double pij = std::min(1.0 / g.degree(i), 1.0 / g.degree(j));
      tm.at(i, j) = pij;
      off += pij;
    }
    tm.at(i, i) = 1.0 - off;
  }
  return tm;
}

inline TransitionMatrix identity_transition(int n) {
  TransitionMatrix tm;
  tm.n = n;
  tm.p.assign(std::size_t(n) * std::size_t(n), 0.0);
  for (int i = 0; i < n; ++i) tm.at(i, i) = 1.0;
  return tm;
}

inline SpectralSummary spectral_summary(const TransitionMatrix& tm) {
  const int n = tm.n;
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = tm.at(i, j);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success)
    throw NumericError("eigensolver failed on a " + std::to_string(n) + "x" + std::to_string(n) +
                       " transition matrix");
  SpectralSummary s;
  s.eigenvalues.assign(solver.eigenvalues().data(), solver.eigenvalues().data() + n);
  std::sort(s.eigenvalues.begin(), s.eigenvalues.end(), std::greater<>());
  const double l2 = n >= 2 ? std::abs(s.eigenvalues[1]) : 0.0;
  const double ln = std::abs(s.eigenvalues.back());
  s.lambda_p = (std::max(l2, ln) + 1.0) / 2.0;
  return s;
}

// Inverse-CDF draw over row i with an explicit uniform; candidates are taken
// in ascending device id. Exposed for golden tests.
inline int sample_next_u(const TransitionMatrix& tm, int i, double u) {
  double acc = 0.0;
  int last_support = i;
  for (int j = 0; j < tm.n; ++j) {
    const double pij = tm.at(i, j);
    if (pij <= 0.0) continue;
    last_support = j;
    acc += pij;
    if (u < acc) return j;
  }
  return last_support;  // u landed in the rounding tail
}

// Always consumes exactly one uniform, even on degenerate rows, so lockstep
// replays stay aligned across transition matrices.
inline int sample_next(const TransitionMatrix& tm, int i, RngStream& rng) {
  const double u = rng.uniform01();
  return sample_next_u(tm, i, u);
}

// tau^k = min{k, max{ceil(ln(2*zeta*k) / ln(1/lambda_p)), K_P}}; the small
// epsilon keeps analytically-integral ratios from ceiling up a step.
inline long mixing_time_tau(double lambda_p, double zeta, long k, long k_p) {
  if (lambda_p >= 1.0) throw ValidationError("chain not mixing (lambda_p >= 1)");
  if (lambda_p <= 0.0 || zeta <= 0.0 || k < 1 || k_p < 1)
    throw ValidationError("mixing_time_tau: need 0 < lambda_p < 1, zeta > 0, k >= 1, k_p >= 1");
  const double raw = std::log(2.0 * zeta * double(k)) / std::log(1.0 / lambda_p);
  const long ceiled = long(std::ceil(raw - 1e-9));
  return std::min(k, std::max(ceiled, k_p));
}

}  // namespace dfedrw
