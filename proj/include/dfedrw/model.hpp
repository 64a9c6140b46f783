#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfedrw/dataset.hpp"
#include "dfedrw/errors.hpp"
#include "dfedrw/rng.hpp"

namespace dfedrw {

// ReLU MLP with log-softmax output; layer_sizes includes input and output.
struct MlpSpec {
  std::vector<int> layer_sizes;

  bool operator==(const MlpSpec&) const = default;
};

inline void validate_spec(const MlpSpec& spec) {
  if (spec.layer_sizes.size() < 2) throw ValidationError("mlp spec needs >= 2 layers");
  for (int s : spec.layer_sizes)
    if (s < 1) throw ValidationError("mlp spec layer sizes must be >= 1");
}

inline long param_count(const MlpSpec& spec) {
  long d = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l)
    d += long(spec.layer_sizes[l]) * spec.layer_sizes[l + 1] + spec.layer_sizes[l + 1];
  return d;
}

// Flat dense parameter vector, layout per layer: weights row-major
// (out x in), then biases (out).
struct ParamVector {
  std::vector<double> values;
  MlpSpec spec;

  long dim() const { return long(values.size()); }
};

inline ParamVector zeros_like(const MlpSpec& spec) {
  ParamVector p;
  p.spec = spec;
  p.values.assign(std::size_t(param_count(spec)), 0.0);
  return p;
}

inline double squared_norm(const ParamVector& p) {
  double s = 0.0;
  for (double v : p.values) s += v * v;
  return s;
}

inline double norm(const ParamVector& p) { return std::sqrt(squared_norm(p)); }

inline void axpy(ParamVector& y, double a, const ParamVector& x) {
  for (std::size_t i = 0; i < y.values.size(); ++i) y.values[i] += a * x.values[i];
}

inline void scale(ParamVector& p, double a) {
  for (double& v : p.values) v *= a;
}

inline ParamVector subtract(const ParamVector& a, const ParamVector& b) {
  ParamVector out = a;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= b.values[i];
  return out;
}

// L2-ball feasible set; radius absent means projection is the identity.
struct FeasibleSet {
  std::optional<double> radius;

  static FeasibleSet unbounded() { return FeasibleSet{std::nullopt}; }
  static FeasibleSet ball(double r) {
    if (r <= 0.0) throw ValidationError("feasible set radius must be positive");
    return FeasibleSet{r};
  }
};

inline void project(ParamVector& p, const FeasibleSet& fs) {
  if (!fs.radius) return;
  const double n = norm(p);
  if (n > *fs.radius) scale(p, *fs.radius / n);
}

// Glorot-uniform weights, zero biases.
inline ParamVector init_params(const MlpSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  ParamVector p = zeros_like(spec);
  RngStream rng = seed_stream(seed, "init");
  std::size_t at = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
    const int fan_in = spec.layer_sizes[l];
    const int fan_out = spec.layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    for (long i = 0; i < long(fan_in) * fan_out; ++i)
      p.values[at++] = (2.0 * rng.uniform01() - 1.0) * limit;
    at += std::size_t(fan_out);  // biases stay zero
  }
  return p;
}

namespace detail {

struct LayerView {
  const double* weights;  // out x in, row-major
  const double* biases;
  int in, out;
};

inline std::vector<LayerView> layer_views(const ParamVector& p) {
  std::vector<LayerView> views;
  std::size_t at = 0;
  for (std::size_t l = 0; l + 1 < p.spec.layer_sizes.size(); ++l) {
    LayerView v;
    v.in = p.spec.layer_sizes[l];
    v.out = p.spec.layer_sizes[l + 1];
    v.weights = p.values.data() + at;
    at += std::size_t(v.in) * std::size_t(v.out);
    v.biases = p.values.data() + at;
    at += std::size_t(v.out);
    views.push_back(v);
  }
  return views;
}

// forward pass retaining post-activation values per layer (batch-major)
struct ForwardTrace {
  std::vector<std::vector<double>> activations;  // [layer] -> batch x width
  std::vector<double> log_probs;                 // batch x out
};

inline ForwardTrace forward_trace(const ParamVector& p, const double* batch, long batch_rows) {
  const auto views = layer_views(p);
  ForwardTrace tr;
  const int in0 = views.front().in;
  tr.activations.emplace_back(batch, batch + std::size_t(batch_rows) * std::size_t(in0));
  for (std::size_t l = 0; l < views.size(); ++l) {
    const auto& v = views[l];
    const auto& prev = tr.activations.back();
    std::vector<double> next(std::size_t(batch_rows) * std::size_t(v.out));
    for (long r = 0; r < batch_rows; ++r) {
      const double* x = prev.data() + std::size_t(r) * std::size_t(v.in);
      double* y = next.data() + std::size_t(r) * std::size_t(v.out);
      for (int o = 0; o < v.out; ++o) {
        const double* w = v.weights + std::size_t(o) * std::size_t(v.in);
        double acc = v.biases[o];
        for (int i = 0; i < v.in; ++i) acc += w[i] * x[i];
        y[o] = acc;
      }
    }
    const bool last = (l + 1 == views.size());
    if (!last)
      for (double& v2 : next) v2 = v2 > 0.0 ? v2 : 0.0;
    tr.activations.push_back(std::move(next));
  }
  // log-softmax on the final layer
  const int out = views.back().out;
  auto& logits = tr.activations.back();
  tr.log_probs.resize(logits.size());
  for (long r = 0; r < batch_rows; ++r) {
    const double* z = logits.data() + std::size_t(r) * std::size_t(out);
    double* lp = tr.log_probs.data() + std::size_t(r) * std::size_t(out);
    double mx = z[0];
    for (int o = 1; o < out; ++o) mx = std::max(mx, z[o]);
    double sum = 0.0;
    for (int o = 0; o < out; ++o) sum += std::exp(z[o] - mx);
    const double lse = mx + std::log(sum);
    for (int o = 0; o < out; ++o) {
      lp[o] = z[o] - lse;
      if (!std::isfinite(lp[o])) throw NumericError("non-finite activation in forward pass");
    }
  }
  return tr;
}

}  // namespace detail

// Per-row log-probabilities for a row-major batch (rows x input size).
inline std::vector<double> forward(const ParamVector& p, const std::vector<double>& batch,
                                   long batch_rows) {
  validate_spec(p.spec);
  if (long(batch.size()) != batch_rows * p.spec.layer_sizes.front())
    throw ValidationError("forward: batch width does not match the input layer");
  return detail::forward_trace(p, batch.data(), batch_rows).log_probs;
}

// Mean NLL over the batch plus its gradient by backpropagation.
inline std::pair<double, ParamVector> loss_grad(const ParamVector& p,
                                                const std::vector<double>& batch, long batch_rows,
                                                const std::vector<int>& labels) {
  if (long(labels.size()) != batch_rows) throw ValidationError("loss_grad: label count mismatch");
  if (long(batch.size()) != batch_rows * p.spec.layer_sizes.front())
    throw ValidationError("loss_grad: batch width mismatch");
  const auto views = detail::layer_views(p);
  auto tr = detail::forward_trace(p, batch.data(), batch_rows);
  const int out = views.back().out;

  double loss = 0.0;
  for (long r = 0; r < batch_rows; ++r)
    loss -= tr.log_probs[std::size_t(r) * std::size_t(out) + std::size_t(labels[std::size_t(r)])];
  loss /= double(batch_rows);

  // delta at the output: (softmax - onehot) / batch
  std::vector<double> delta(std::size_t(batch_rows) * std::size_t(out));
  for (long r = 0; r < batch_rows; ++r)
    for (int o = 0; o < out; ++o) {
      const double soft = std::exp(tr.log_probs[std::size_t(r) * std::size_t(out) + std::size_t(o)]);
      delta[std::size_t(r) * std::size_t(out) + std::size_t(o)] =
          (soft - (labels[std::size_t(r)] == o ? 1.0 : 0.0)) / double(batch_rows);
    }

  ParamVector grad = zeros_like(p.spec);
  std::size_t layer_offset = grad.values.size();
  for (std::size_t l = views.size(); l-- > 0;) {
    const auto& v = views[l];
    layer_offset -= std::size_t(v.in) * std::size_t(v.out) + std::size_t(v.out);
    double* gw = grad.values.data() + layer_offset;
    double* gb = gw + std::size_t(v.in) * std::size_t(v.out);
    const auto& input = tr.activations[l];
    for (long r = 0; r < batch_rows; ++r) {
      const double* d = delta.data() + std::size_t(r) * std::size_t(v.out);
      const double* x = input.data() + std::size_t(r) * std::size_t(v.in);
      for (int o = 0; o < v.out; ++o) {
        const double dv = d[o];
        gb[o] += dv;
        double* gwr = gw + std::size_t(o) * std::size_t(v.in);
        for (int i = 0; i < v.in; ++i) gwr[i] += dv * x[i];
      }
    }
    if (l == 0) break;
    // propagate delta through the weights and the ReLU mask of layer l-1
    std::vector<double> prev_delta(std::size_t(batch_rows) * std::size_t(v.in), 0.0);
    for (long r = 0; r < batch_rows; ++r) {
      const double* d = delta.data() + std::size_t(r) * std::size_t(v.out);
      const double* a = input.data() + std::size_t(r) * std::size_t(v.in);
      double* pd = prev_delta.data() + std::size_t(r) * std::size_t(v.in);
      for (int o = 0; o < v.out; ++o) {
        const double dv = d[o];
        const double* w = v.weights + std::size_t(o) * std::size_t(v.in);
        for (int i = 0; i < v.in; ++i) pd[i] += dv * w[i];
      }
      for (int i = 0; i < v.in; ++i)
        if (a[i] <= 0.0) pd[i] = 0.0;  // post-ReLU activation of layer l-1
    }
    delta = std::move(prev_delta);
  }
  return {loss, std::move(grad)};
}

// One projected SGD step; returns a new vector.
inline ParamVector sgd_step(const ParamVector& p, const ParamVector& grad, double eta,
                            const FeasibleSet& fs) {
  if (eta <= 0.0) throw ValidationError("sgd_step: eta > 0 required");
  ParamVector out = p;
  axpy(out, -eta, grad);
  project(out, fs);
  return out;
}

// eta = 1 / (r_const * k_bar^q_exp), k_bar = (t-1)K + k.
inline double lr_schedule(double r_const, long k_bar, double q_exp) {
  if (k_bar < 1 || r_const <= 0.0 || q_exp <= 0.0 || q_exp >= 1.0)
    throw ValidationError("lr_schedule: need k_bar >= 1, r_const > 0, 0 < q_exp < 1");
  return 1.0 / (r_const * std::pow(double(k_bar), q_exp));
}

// Accuracy (argmax ties -> lowest class index) and mean NLL over a dataset.
inline std::pair<double, double> evaluate(const ParamVector& p, const Dataset& test) {
  validate_spec(p.spec);
  if (test.feature_dim != p.spec.layer_sizes.front())
    throw ValidationError("evaluate: dataset feature_dim does not match the model input");
  const int out = p.spec.layer_sizes.back();
  const long n = test.num_samples();
  long correct = 0;
  double nll = 0.0;
  const long chunk = 512;
  for (long start = 0; start < n; start += chunk) {
    const long rows = std::min(chunk, n - start);
    auto tr = detail::forward_trace(p, test.row(start), rows);
    for (long r = 0; r < rows; ++r) {
      const double* lp = tr.log_probs.data() + std::size_t(r) * std::size_t(out);
      int best = 0;
      for (int o = 1; o < out; ++o)
        if (lp[o] > lp[best]) best = o;
      const int y = test.labels[std::size_t(start + r)];
      if (best == y) ++correct;
      nll -= lp[y];
    }
  }
  return {double(correct) / double(n), nll / double(n)};
}

// ---------------------------------------------------------------------------
// Checkpointing: flat little-endian f64 blob plus a JSON sidecar.

inline void save_params(const ParamVector& p, const std::string& bin_path,
                        const std::string& json_path) {
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw FormatError("cannot open for write: " + bin_path);
  bin.write(reinterpret_cast<const char*>(p.values.data()),
            std::streamsize(p.values.size() * sizeof(double)));
  nlohmann::json side{{"layer_sizes", p.spec.layer_sizes}, {"activation", "relu"}, {"d", p.dim()}};
  std::ofstream js(json_path);
  if (!js) throw FormatError("cannot open for write: " + json_path);
  js << side.dump(2) << "\n";
}

inline ParamVector load_params(const std::string& bin_path, const std::string& json_path) {
  std::ifstream js(json_path);
  if (!js) throw FormatError("cannot open checkpoint sidecar: " + json_path);
  nlohmann::json side;
  try {
    js >> side;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint sidecar: ") + e.what());
  }
  ParamVector p;
  p.spec.layer_sizes = side.at("layer_sizes").get<std::vector<int>>();
  validate_spec(p.spec);
  const long d = side.at("d").get<long>();
  if (d != param_count(p.spec)) throw FormatError("checkpoint sidecar: d does not match the spec");
  p.values.resize(std::size_t(d));
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw FormatError("cannot open checkpoint blob: " + bin_path);
  if (!bin.read(reinterpret_cast<char*>(p.values.data()), std::streamsize(p.values.size() * sizeof(double))))
    throw FormatError("checkpoint blob truncated: " + bin_path);
  return p;
}

// Gather a batch's features and labels out of a dataset by sample index.
inline std::pair<std::vector<double>, std::vector<int>> gather_batch(const Dataset& ds,
                                                                     const std::vector<long>& idx) {
  std::vector<double> feats(idx.size() * std::size_t(ds.feature_dim));
  std::vector<int> labels(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(ds.row(idx[r]), ds.feature_dim, feats.begin() + long(r) * ds.feature_dim);
    labels[r] = ds.labels[std::size_t(idx[r])];
  }
  return {std::move(feats), std::move(labels)};
}

}  // namespace dfedrw
