#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "dfedrw/errors.hpp"
#include "dfedrw/rng.hpp"

namespace dfedrw {

// b-bit stochastic quantizer: one sign bit plus a (b-1)-bit index onto the
// grid {0, s, 2s, ..., (2^(b-1)-1) s} of normalized magnitudes.
struct QuantConfig {
  int bits = 8;
  double interval = 0.0;

  long max_index() const { return (1L << (bits - 1)) - 1; }
};

inline double default_interval(int bits) {
  if (bits < 2) throw ValidationError("quantizer needs bits >= 2");
  return 1.0 / double((1L << (bits - 1)) - 1);
}

inline QuantConfig make_quant_config(int bits, double interval = 0.0) {
  QuantConfig cfg;
  cfg.bits = bits;
  cfg.interval = interval > 0.0 ? interval : default_interval(bits);
  if (bits < 2 || bits > 32) throw ValidationError("quantizer bits must be in [2, 32]");
  if (cfg.interval <= 0.0) throw ValidationError("quantizer interval must be positive");
  if (cfg.interval * double(cfg.max_index()) < 1.0 - 1e-12)
    throw ValidationError("quantizer grid s*(2^(b-1)-1) must cover the normalized range [0,1]");
  return cfg;
}

struct QuantCode {
  std::int8_t sign;     // +1 or -1
  std::uint32_t index;  // 0 .. 2^(b-1)-1
};

// Wire object (Lambda, s, ||w||); norm and s live at 32-bit precision, which
// is also what the in-memory decode uses.
struct QuantizedDelta {
  float norm = 0.0f;
  float interval = 0.0f;
  int bits = 0;
  std::vector<QuantCode> codes;

  long dim() const { return long(codes.size()); }
};

// Single-component code given the normalized magnitude x = |w|/||w|| and an
// explicit uniform; exposed for enumeration tests. Promotion past the top
// index is clamped (the grid is finite; the clamp also guards 32-bit norm
// rounding pushing x slightly past 1).
inline std::uint32_t quantize_component(double x, double s, long max_index, double u) {
  double ratio = x / s;
  long idx = long(std::floor(ratio));
  if (idx >= max_index) return std::uint32_t(max_index);
  const double phi = ratio - double(idx);
  if (u < phi) ++idx;
  return std::uint32_t(idx);
}

inline QuantizedDelta quantize(const std::vector<double>& w, const QuantConfig& cfg,
                               RngStream& rng) {
  QuantizedDelta qd;
  qd.bits = cfg.bits;
  qd.interval = float(cfg.interval);
  double sq = 0.0;
  for (double v : w) sq += v * v;
  qd.norm = float(std::sqrt(sq));
  qd.codes.resize(w.size());
  if (qd.norm == 0.0f) {
    for (auto& c : qd.codes) c = {+1, 0};
    return qd;
  }
  const double norm = double(qd.norm);
  const double s = double(qd.interval);
  const long max_index = cfg.max_index();
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double x = std::abs(w[i]) / norm;
    const double u = rng.uniform01();
    qd.codes[i].index = quantize_component(x, s, max_index, u);
    qd.codes[i].sign = w[i] < 0.0 ? -1 : +1;
  }
  return qd;
}

inline std::vector<double> dequantize(const QuantizedDelta& qd) {
  std::vector<double> out(qd.codes.size());
  const double scale = double(qd.interval) * double(qd.norm);
  for (std::size_t i = 0; i < qd.codes.size(); ++i)
    out[i] = double(qd.codes[i].sign) * double(qd.codes[i].index) * scale;
  return out;
}

// Quantized hop payload: 32 bits each for s and ||w|| plus b bits per
// component. The full-precision counterpart is 32*d.
inline std::uint64_t wire_size_bits(long d, const QuantConfig& cfg) {
  if (d < 1) throw ValidationError("wire_size_bits: d >= 1");
  return 64 + std::uint64_t(cfg.bits) * std::uint64_t(d);
}

inline std::uint64_t full_precision_bits(long d) { return 32 * std::uint64_t(d); }

// Analytic upper bound on E||Q(w)-w||^2 for the stochastic codec.
inline double variance_bound(double sigma, long d, double s) {
  if (sigma <= 0.0 || d < 1 || s <= 0.0)
    throw ValidationError("variance_bound: all inputs must be positive");
  return sigma * sigma * double(d) * s * s / 4.0;
}

// ---------------------------------------------------------------------------
// Byte layout: [f32 norm][f32 s][packed codes, ceil(b*d/8) bytes]. Codes are
// packed little-endian; within each b-bit field the low b-1 bits hold the
// index and the top bit holds the sign (1 = negative).

inline std::vector<std::uint8_t> serialize_delta(const QuantizedDelta& qd) {
  const long d = qd.dim();
  const int b = qd.bits;
  std::vector<std::uint8_t> out(8 + std::size_t((std::uint64_t(b) * std::uint64_t(d) + 7) / 8), 0);
  std::uint32_t norm_bits, s_bits;
  std::memcpy(&norm_bits, &qd.norm, 4);
  std::memcpy(&s_bits, &qd.interval, 4);
  for (int i = 0; i < 4; ++i) out[std::size_t(i)] = std::uint8_t(norm_bits >> (8 * i));
  for (int i = 0; i < 4; ++i) out[std::size_t(4 + i)] = std::uint8_t(s_bits >> (8 * i));
  for (long v = 0; v < d; ++v) {
    std::uint64_t field = qd.codes[std::size_t(v)].index;
    if (qd.codes[std::size_t(v)].sign < 0) field |= 1ULL << (b - 1);
    const std::uint64_t base = std::uint64_t(v) * std::uint64_t(b);
    for (int j = 0; j < b; ++j) {
      if ((field >> j) & 1ULL) {
        const std::uint64_t bit = base + std::uint64_t(j);
        out[std::size_t(8 + (bit >> 3))] |= std::uint8_t(1u << (bit & 7));
      }
    }
  }
  return out;
}

inline QuantizedDelta deserialize_delta(const std::vector<std::uint8_t>& bytes, long d, int b) {
  if (b < 2 || b > 32) throw FormatError("deserialize_delta: bits out of range");
  const std::size_t want = 8 + std::size_t((std::uint64_t(b) * std::uint64_t(d) + 7) / 8);
  if (bytes.size() != want)
    throw FormatError("deserialize_delta: expected " + std::to_string(want) + " bytes, got " +
                      std::to_string(bytes.size()));
  QuantizedDelta qd;
  qd.bits = b;
  std::uint32_t norm_bits = 0, s_bits = 0;
  for (int i = 0; i < 4; ++i) norm_bits |= std::uint32_t(bytes[std::size_t(i)]) << (8 * i);
  for (int i = 0; i < 4; ++i) s_bits |= std::uint32_t(bytes[std::size_t(4 + i)]) << (8 * i);
  std::memcpy(&qd.norm, &norm_bits, 4);
  std::memcpy(&qd.interval, &s_bits, 4);
  qd.codes.resize(std::size_t(d));
  for (long v = 0; v < d; ++v) {
    std::uint64_t field = 0;
    const std::uint64_t base = std::uint64_t(v) * std::uint64_t(b);
    for (int j = 0; j < b; ++j) {
      const std::uint64_t bit = base + std::uint64_t(j);
      if ((bytes[std::size_t(8 + (bit >> 3))] >> (bit & 7)) & 1u) field |= 1ULL << j;
    }
    qd.codes[std::size_t(v)].index = std::uint32_t(field & ((1ULL << (b - 1)) - 1));
    qd.codes[std::size_t(v)].sign = (field >> (b - 1)) & 1ULL ? -1 : +1;
  }
  return qd;
}

// Full-precision parameter payload: 8-byte header (tag, dim) + f32 values.
inline std::vector<std::uint8_t> serialize_params_f32(const std::vector<double>& w) {
  std::vector<std::uint8_t> out(8 + 4 * w.size(), 0);
  const std::uint32_t tag = 0x44465257u;  // "DFRW"
  const std::uint32_t d = std::uint32_t(w.size());
  for (int i = 0; i < 4; ++i) out[std::size_t(i)] = std::uint8_t(tag >> (8 * i));
  for (int i = 0; i < 4; ++i) out[std::size_t(4 + i)] = std::uint8_t(d >> (8 * i));
  for (std::size_t v = 0; v < w.size(); ++v) {
    const float f = float(w[v]);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int i = 0; i < 4; ++i) out[8 + 4 * v + std::size_t(i)] = std::uint8_t(bits >> (8 * i));
  }
  return out;
}

}  // namespace dfedrw
