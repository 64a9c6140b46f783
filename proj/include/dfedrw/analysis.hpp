#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dfedrw/errors.hpp"
#include "dfedrw/topology.hpp"

namespace dfedrw {

// User-supplied constants for the convergence-bound diagnostics. The chain
// constants zeta and K_P depend on the Jordan form of P and are not computable
// here; they default to 1.
struct TheoryInputs {
  int n = 20;
  double grad_bound_d = 1.0;  // D, Lipschitz / gradient-norm bound
  double zeta = 1.0;
  long k_p = 1;
  double lambda_p = 0.5;
  double delta_sq = 1.0;
  double gamma_hat = 1.0;
  long dim = 1;       // d
  double interval = 0.0;  // s, quantization interval (0 disables the quantization term)
  double sigma = 1.0;     // parameter-norm bound
  double q_exp = 0.6;
  double r_const = 5.0;
  double w0_dist = 1.0;   // ||w^0 - w*|| surrogate
  long k_bar_start = 2;   // tail-sum start for the ln-weighted term
};

inline void validate_theory(const TheoryInputs& in) {
  if (in.n < 1 || in.grad_bound_d <= 0.0 || in.zeta <= 0.0 || in.k_p < 1 || in.dim < 1 ||
      in.sigma <= 0.0 || in.r_const <= 0.0 || in.w0_dist <= 0.0 || in.k_bar_start < 1 ||
      in.interval < 0.0)
    throw ValidationError("theory inputs must be positive");
  if (in.lambda_p >= 1.0) throw ValidationError("chain not mixing (lambda_p >= 1)");
  if (in.lambda_p <= 0.0) throw ValidationError("lambda_p must be in (0,1)");
  if (in.delta_sq < 1.0) throw ValidationError("delta_sq >= 1 per its definition");
  if (in.gamma_hat < 0.0 || in.gamma_hat > 1.0) throw ValidationError("gamma_hat in [0,1]");
  if (in.q_exp <= 0.0 || in.q_exp >= 1.0) throw ValidationError("q_exp must be in (0,1)");
}

struct BoundReport {
  double psi_n_lambda = 0.0;  // ln-weighted topology term
  double kappa = 0.0;         // heterogeneity term
  double lambda_n = 0.0;      // stationarity gap term
  double psi_d_s = 0.0;       // quantization term (0 for the plain walk bound)
  double total = 0.0;         // bound at the horizon
  long horizon = 0;
  bool q_in_valid_range = true;  // flags q outside (1/2, 1)
};

// Mean local squared gradient norm over the global squared norm, floored at 1.
inline double estimate_delta_sq(const std::vector<double>& local_grad_sq_norms,
                                double global_grad_sq_norm, bool* clamped = nullptr) {
  if (global_grad_sq_norm <= 0.0)
    throw ValidationError("stationary point, delta undefined (zero global gradient)");
  if (local_grad_sq_norms.empty()) throw ValidationError("estimate_delta_sq: no local norms");
  double mean = 0.0;
  for (double v : local_grad_sq_norms) mean += v;
  mean /= double(local_grad_sq_norms.size());
  const double raw = mean / global_grad_sq_norm;
  if (clamped) *clamped = raw < 1.0;
  return std::max(raw, 1.0);
}

inline double estimate_gamma(double grad_norm_after, double grad_norm_before) {
  if (grad_norm_before <= 0.0) throw ValidationError("estimate_gamma: pre-update norm must be > 0");
  return std::min(1.0, grad_norm_after / grad_norm_before);
}

// gamma_hat along a chain is the product of the per-step gammas.
inline double chain_inexactness(const std::vector<double>& per_step_gammas) {
  double prod = 1.0;
  for (double g : per_step_gammas) {
    if (g < 0.0 || g > 1.0) throw ValidationError("chain_inexactness: gammas must be in [0,1]");
    prod *= g;
  }
  return prod;
}

namespace detail {

inline double eta_at(const TheoryInputs& in, long j) {
  return 1.0 / (in.r_const * std::pow(double(j), in.q_exp));
}

}  // namespace detail

inline BoundReport walk_convergence_bound(const TheoryInputs& in, long horizon) {
  validate_theory(in);
  if (horizon < 1) throw ValidationError("walk_convergence_bound: horizon >= 1");
  BoundReport r;
  r.horizon = horizon;
  r.q_in_valid_range = in.q_exp > 0.5 && in.q_exp < 1.0;
  const double log_inv_lam = std::log(1.0 / in.lambda_p);
  double ln_sum = 0.0, sq_sum = 0.0, gap_sum = 0.0;
  for (long j = 1; j <= horizon; ++j) {
    const double e = detail::eta_at(in, j);
    if (j >= in.k_bar_start) ln_sum += std::log(double(j)) * e * e;
    sq_sum += e * e;
    gap_sum += double(in.n) * e / (2.0 * double(j));
  }
  const double d2 = in.grad_bound_d * in.grad_bound_d;
  r.psi_n_lambda = double(1 + in.n) * 2.0 * d2 * ln_sum / log_inv_lam;
  r.kappa = (in.delta_sq + in.gamma_hat * in.gamma_hat) * d2 / 4.0 * sq_sum;
  r.lambda_n = gap_sum;
  r.total = (0.5 * in.w0_dist * in.w0_dist + r.psi_n_lambda + r.kappa + r.lambda_n) /
            std::pow(double(horizon), 1.0 - in.q_exp);
  return r;
}

inline BoundReport quantized_convergence_bound(const TheoryInputs& in, long horizon) {
  BoundReport r = walk_convergence_bound(in, horizon);
  if (in.interval == 0.0) return r;  // quantization-free limit
  double tau_sum = 0.0;
  for (long j = 1; j <= horizon; ++j)
    tau_sum += detail::eta_at(in, j) * double(mixing_time_tau(in.lambda_p, in.zeta, j, in.k_p));
  r.psi_d_s = double(1 + in.n) * in.grad_bound_d * in.sigma * std::sqrt(double(in.dim)) *
              in.interval / 2.0 * tau_sum;
  r.total += r.psi_d_s / std::pow(double(horizon), 1.0 - in.q_exp);
  return r;
}

// When does b-bit quantized DFedRW need less communication than 32-bit DFedRW.
struct QuantizationSavingVerdict {
  double error_threshold = 0.0;  // right-hand side of condition 1
  double epsilon = 0.0;
  bool condition1 = false;  // epsilon exceeds the threshold
  double bits_threshold = 0.0;  // 32/rho - 64/d
  int bits = 0;
  bool condition2 = false;  // b below the threshold
  bool saves_communication = false;
};

inline QuantizationSavingVerdict quantization_saving_check(const TheoryInputs& in, double epsilon,
                                              double rho_ratio, int bits) {
  validate_theory(in);
  if (rho_ratio <= 1.0) throw ValidationError("quantization_saving_check: rho_ratio > 1 required");
  if (bits < 2) throw ValidationError("quantization_saving_check: bits >= 2 required");
  QuantizationSavingVerdict v;
  v.epsilon = epsilon;
  v.bits = bits;
  v.error_threshold = double(1 + in.n) * in.grad_bound_d * in.sigma * std::sqrt(double(in.dim)) *
                      in.interval / std::sqrt(std::log(1.0 / in.lambda_p));
  v.condition1 = epsilon > v.error_threshold;
  v.bits_threshold = 32.0 / rho_ratio - 64.0 / double(in.dim);
  v.condition2 = double(bits) < v.bits_threshold;
  v.saves_communication = v.condition1 && v.condition2;
  return v;
}

// Step-size summability diagnostics: partial sums of sum(eta) and sum(ln k * eta^2)
// at geometric checkpoints plus the analytic verdict from the exponent.
struct StepSizeReport {
  std::vector<long> checkpoints;
  std::vector<double> eta_sum;
  std::vector<double> ln_eta_sq_sum;
  bool first_diverges = false;     // sum eta = +inf  <=>  q <= 1
  bool second_converges = false;   // sum ln k eta^2 < inf  <=>  q > 1/2
  bool satisfied = false;
};

inline StepSizeReport step_size_check(double r_const, double q_exp, long horizon) {
  if (horizon < 10) throw ValidationError("step_size_check: horizon >= 10");
  if (r_const <= 0.0 || q_exp <= 0.0 || q_exp > 1.0)
    throw ValidationError("step_size_check: r_const > 0 and 0 < q_exp <= 1 required");
  StepSizeReport rep;
  double s1 = 0.0, s2 = 0.0;
  long next = 10;
  for (long j = 1; j <= horizon; ++j) {
    const double e = 1.0 / (r_const * std::pow(double(j), q_exp));
    s1 += e;
    s2 += std::log(double(j)) * e * e;
    if (j == next || j == horizon) {
      rep.checkpoints.push_back(j);
      rep.eta_sum.push_back(s1);
      rep.ln_eta_sq_sum.push_back(s2);
      if (j == next) next *= 10;
    }
  }
  rep.first_diverges = q_exp <= 1.0;
  rep.second_converges = q_exp > 0.5;
  rep.satisfied = rep.first_diverges && rep.second_converges;
  return rep;
}

}  // namespace dfedrw
