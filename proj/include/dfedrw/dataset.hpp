#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfedrw/errors.hpp"
#include "dfedrw/rng.hpp"

namespace dfedrw {

// Features scaled to [0,1], labels in [0, num_classes).
struct Dataset {
  std::vector<double> features;  // row-major, num_samples x feature_dim
  std::vector<int> labels;
  int feature_dim = 0;
  int num_classes = 0;

  long num_samples() const { return long(labels.size()); }
  const double* row(long i) const { return features.data() + std::size_t(i) * std::size_t(feature_dim); }
};

inline void validate_dataset(const Dataset& ds) {
  if (ds.feature_dim <= 0 || ds.labels.empty())
    throw ValidationError("dataset is empty");
  if (ds.features.size() != std::size_t(ds.labels.size()) * std::size_t(ds.feature_dim))
    throw ValidationError("dataset feature row count does not match label count");
  std::vector<char> seen(std::size_t(ds.num_classes), 0);
  for (int y : ds.labels) {
    if (y < 0 || y >= ds.num_classes) throw ValidationError("label out of range");
    seen[std::size_t(y)] = 1;
  }
  for (int c = 0; c < ds.num_classes; ++c)
    if (!seen[std::size_t(c)])
      throw ValidationError("class " + std::to_string(c) + " has no samples");
}

// Disjoint per-device index lists into one Dataset.
struct DevicePartition {
  std::vector<std::vector<long>> assignments;
  int n_dev = 0;

  long device_size(int d) const { return long(assignments[std::size_t(d)].size()); }
};

inline void validate_partition(const DevicePartition& dp, long num_samples) {
  if (int(dp.assignments.size()) != dp.n_dev) throw ValidationError("partition device count mismatch");
  std::vector<char> used(std::size_t(num_samples), 0);
  for (int d = 0; d < dp.n_dev; ++d) {
    if (dp.assignments[std::size_t(d)].empty())
      throw ValidationError("device " + std::to_string(d) + " received no samples");
    for (long idx : dp.assignments[std::size_t(d)]) {
      if (idx < 0 || idx >= num_samples) throw ValidationError("sample index out of range");
      if (used[std::size_t(idx)]) throw ValidationError("sample assigned to two devices");
      used[std::size_t(idx)] = 1;
    }
  }
}

// ---------------------------------------------------------------------------
// IDX container (MNIST / Fashion-MNIST)

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const char* what, std::streamoff offset) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(std::string("IDX truncated reading ") + what + " at offset " +
                      std::to_string(offset));
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

}  // namespace detail

inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw FormatError("cannot open IDX image file: " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw FormatError("cannot open IDX label file: " + labels_path);

  const std::uint32_t img_magic = detail::read_be32(img, "image magic", 0);
  if (img_magic != 0x00000803u)
    throw FormatError("bad magic in " + images_path + ": expected 0x00000803, offset 0");
  const std::uint32_t n_img = detail::read_be32(img, "image count", 4);
  const std::uint32_t rows = detail::read_be32(img, "rows", 8);
  const std::uint32_t cols = detail::read_be32(img, "cols", 12);

  const std::uint32_t lab_magic = detail::read_be32(lab, "label magic", 0);
  if (lab_magic != 0x00000801u)
    throw FormatError("bad magic in " + labels_path + ": expected 0x00000801, offset 0");
  const std::uint32_t n_lab = detail::read_be32(lab, "label count", 4);
  if (n_img != n_lab)
    throw FormatError("IDX count mismatch: " + std::to_string(n_img) + " images vs " +
                      std::to_string(n_lab) + " labels");

  Dataset ds;
  ds.feature_dim = int(rows * cols);
  const std::size_t pixels = std::size_t(n_img) * std::size_t(ds.feature_dim);
  std::vector<unsigned char> buf(pixels);
  if (!img.read(reinterpret_cast<char*>(buf.data()), std::streamsize(pixels)))
    throw FormatError("IDX truncated payload in " + images_path + " at offset " +
                      std::to_string(16 + img.gcount()));
  ds.features.resize(pixels);
  for (std::size_t i = 0; i < pixels; ++i) ds.features[i] = double(buf[i]) / 255.0;

  std::vector<unsigned char> lbuf(n_lab);
  if (!lab.read(reinterpret_cast<char*>(lbuf.data()), std::streamsize(n_lab)))
    throw FormatError("IDX truncated payload in " + labels_path + " at offset " +
                      std::to_string(8 + lab.gcount()));
  ds.labels.assign(lbuf.begin(), lbuf.end());
  ds.num_classes = ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  validate_dataset(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic Gaussian blobs, the desk-scale stand-in when IDX files are absent.

inline Dataset synth_clusters(int num_classes, int dim, int per_class, double spread,
                              std::uint64_t seed) {
  if (num_classes < 1 || dim < 1 || per_class < 1)
    throw ValidationError("synth_clusters: all counts must be >= 1");
  RngStream rng = seed_stream(seed, "synth");
  std::vector<double> centers(std::size_t(num_classes) * std::size_t(dim));
  for (auto& v : centers) v = rng.uniform01();
  Dataset ds;
  ds.feature_dim = dim;
  ds.num_classes = num_classes;
  ds.features.resize(std::size_t(num_classes) * std::size_t(per_class) * std::size_t(dim));
  ds.labels.resize(std::size_t(num_classes) * std::size_t(per_class));
  std::size_t at = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (int s = 0; s < per_class; ++s) {
      ds.labels[at / std::size_t(dim)] = c;
      for (int f = 0; f < dim; ++f) {
        double v = centers[std::size_t(c) * std::size_t(dim) + std::size_t(f)] + spread * rng.gaussian();
        ds.features[at++] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  validate_dataset(ds);
  return ds;
}

// Train/test pair drawn from one set of class centers; the test rows are the
// holdout tail of each class block.
inline std::pair<Dataset, Dataset> synth_clusters_split(int num_classes, int dim,
                                                        int per_class_train, int per_class_test,
                                                        double spread, std::uint64_t seed) {
  const Dataset all =
      synth_clusters(num_classes, dim, per_class_train + per_class_test, spread, seed);
  auto take = [&](int offset, int count) {
    Dataset out;
    out.feature_dim = dim;
    out.num_classes = num_classes;
    for (int c = 0; c < num_classes; ++c) {
      const long base = long(c) * (per_class_train + per_class_test) + offset;
      for (int s = 0; s < count; ++s) {
        const long row = base + s;
        out.features.insert(out.features.end(), all.row(row), all.row(row) + dim);
        out.labels.push_back(all.labels[std::size_t(row)]);
      }
    }
    validate_dataset(out);
    return out;
  };
  return {take(0, per_class_train), take(per_class_train, per_class_test)};
}

// ---------------------------------------------------------------------------
// Partitioners

namespace detail {

inline std::vector<std::vector<long>> indices_by_class(const Dataset& ds) {
  std::vector<std::vector<long>> by_class(std::size_t(ds.num_classes));
  for (long i = 0; i < ds.num_samples(); ++i) by_class[std::size_t(ds.labels[std::size_t(i)])].push_back(i);
  return by_class;
}

}  // namespace detail

// u% of each device's budget comes from a stratified draw out of the shuffled
// IID pool, the rest arrives as two label-sorted shards.
inline DevicePartition partition_similarity(const Dataset& ds, int n_dev, double u,
                                            std::uint64_t seed) {
  if (u < 0.0 || u > 100.0) throw ValidationError("partition_similarity: u must be in [0,100]");
  if (n_dev < 1) throw ValidationError("partition_similarity: n_dev >= 1");
  const long budget = ds.num_samples() / n_dev;
  if (budget < 1) throw ValidationError("partition_similarity: fewer samples than devices");
  const long iid_take = long(std::floor(double(budget) * u / 100.0));
  const long shard_take = budget - iid_take;

  int shards_per_class = 0;
  if (shard_take > 0) {
    if ((2 * n_dev) % ds.num_classes != 0)
      throw ValidationError("partition_similarity: 2*n_dev/num_classes must be an integer (got 2*" +
                            std::to_string(n_dev) + "/" + std::to_string(ds.num_classes) + ")");
    shards_per_class = 2 * n_dev / ds.num_classes;
    if (shards_per_class < 1) throw ValidationError("partition_similarity: shard scheme infeasible");
  }

  RngStream rng = seed_stream(seed, "part-sim");
  auto by_class = detail::indices_by_class(ds);
  for (auto& v : by_class) rng.shuffle(v);

  DevicePartition dp;
  dp.n_dev = n_dev;
  dp.assignments.assign(std::size_t(n_dev), {});

  // IID pool: per-class proportional deal keeps every device's histogram at
  // the global mix, then a shuffled top-up fills rounding gaps to the budget.
  std::vector<std::size_t> cursor(std::size_t(ds.num_classes), 0);
  if (iid_take > 0) {
    for (int d = 0; d < n_dev; ++d) {
      auto& mine = dp.assignments[std::size_t(d)];
      for (int c = 0; c < ds.num_classes; ++c) {
        const long want = iid_take * long(by_class[std::size_t(c)].size()) / ds.num_samples();
        for (long t = 0; t < want; ++t)
          mine.push_back(by_class[std::size_t(c)][cursor[std::size_t(c)]++]);
      }
    }
    std::vector<long> leftovers;
    for (int c = 0; c < ds.num_classes; ++c)
      for (std::size_t i = cursor[std::size_t(c)]; i < by_class[std::size_t(c)].size(); ++i)
        leftovers.push_back(by_class[std::size_t(c)][i]);
    rng.shuffle(leftovers);
    std::size_t li = 0;
    for (int d = 0; d < n_dev; ++d) {
      auto& mine = dp.assignments[std::size_t(d)];
      while (long(mine.size()) < iid_take && li < leftovers.size()) mine.push_back(leftovers[li++]);
    }
    // re-pool what the top-up did not consume, keyed back by class
    for (auto& v : by_class) v.clear();
    for (std::size_t i = li; i < leftovers.size(); ++i)
      by_class[std::size_t(ds.labels[std::size_t(leftovers[i])])].push_back(leftovers[i]);
  }

  if (shard_take > 0) {
    // cut each class pool into equal shards, deal two shards per device
    std::vector<std::vector<long>> shards;
    for (int c = 0; c < ds.num_classes; ++c) {
      const auto& pool = by_class[std::size_t(c)];
      const std::size_t shard_size = pool.size() / std::size_t(shards_per_class);
      if (shard_size == 0)
        throw ValidationError("partition_similarity: class " + std::to_string(c) +
                              " pool too small for " + std::to_string(shards_per_class) + " shards");
      for (int s = 0; s < shards_per_class; ++s)
        shards.emplace_back(pool.begin() + long(std::size_t(s) * shard_size),
                            pool.begin() + long(std::size_t(s + 1) * shard_size));
    }
    rng.shuffle(shards);
    for (int d = 0; d < n_dev; ++d) {
      auto& mine = dp.assignments[std::size_t(d)];
      mine.insert(mine.end(), shards[std::size_t(2 * d)].begin(), shards[std::size_t(2 * d)].end());
      mine.insert(mine.end(), shards[std::size_t(2 * d + 1)].begin(), shards[std::size_t(2 * d + 1)].end());
    }
  }

  validate_partition(dp, ds.num_samples());
  return dp;
}

// Dirichlet(alpha) label-proportion split with largest-remainder rounding.
inline DevicePartition partition_dirichlet(const Dataset& ds, int n_dev, double alpha,
                                           std::uint64_t seed) {
  if (alpha <= 0.0) throw ValidationError("partition_dirichlet: alpha > 0 required");
  if (n_dev < 1) throw ValidationError("partition_dirichlet: n_dev >= 1");
  RngStream rng = seed_stream(seed, "part-dir");
  auto by_class = detail::indices_by_class(ds);
  for (auto& v : by_class) rng.shuffle(v);

  DevicePartition dp;
  dp.n_dev = n_dev;
  dp.assignments.assign(std::size_t(n_dev), {});

  for (int c = 0; c < ds.num_classes; ++c) {
    std::vector<double> props(static_cast<std::size_t>(n_dev));
    double sum = 0.0;
    for (auto& p : props) {
      p = rng.gamma(alpha);
      sum += p;
    }
    const long total = long(by_class[std::size_t(c)].size());
    std::vector<long> take(static_cast<std::size_t>(n_dev));
    std::vector<std::pair<double, int>> rema(static_cast<std::size_t>(n_dev));
    long assigned = 0;
    for (int d = 0; d < n_dev; ++d) {
      const double exact = double(total) * props[std::size_t(d)] / sum;
      take[std::size_t(d)] = long(std::floor(exact));
      assigned += take[std::size_t(d)];
      rema[std::size_t(d)] = {exact - std::floor(exact), d};
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (long r = 0; r < total - assigned; ++r) ++take[std::size_t(rema[std::size_t(r)].second)];
    std::size_t at = 0;
    for (int d = 0; d < n_dev; ++d)
      for (long t = 0; t < take[std::size_t(d)]; ++t)
        dp.assignments[std::size_t(d)].push_back(by_class[std::size_t(c)][at++]);
  }

  // empty-device repair: steal one sample from the currently largest device
  for (int d = 0; d < n_dev; ++d) {
    if (!dp.assignments[std::size_t(d)].empty()) continue;
    int big = 0;
    for (int e = 1; e < n_dev; ++e)
      if (dp.assignments[std::size_t(e)].size() > dp.assignments[std::size_t(big)].size()) big = e;
    if (dp.assignments[std::size_t(big)].size() < 2)
      throw ValidationError("partition_dirichlet: not enough samples to repair empty devices");
    dp.assignments[std::size_t(d)].push_back(dp.assignments[std::size_t(big)].back());
    dp.assignments[std::size_t(big)].pop_back();
  }

  validate_partition(dp, ds.num_samples());
  return dp;
}

// Imbalanced-label scheme: each device fills its budget label by label,
// at most `per_label_cap` samples from any one label.
inline DevicePartition partition_nonbalance(const Dataset& ds, int n_dev, long per_label_cap,
                                            std::uint64_t seed) {
  if (per_label_cap < 1) throw ValidationError("partition_nonbalance: cap >= 1");
  if (n_dev < 1) throw ValidationError("partition_nonbalance: n_dev >= 1");
  const long budget = ds.num_samples() / n_dev;
  if (budget < 1) throw ValidationError("partition_nonbalance: fewer samples than devices");

  RngStream rng = seed_stream(seed, "part-nonbal");
  auto by_class = detail::indices_by_class(ds);
  for (auto& v : by_class) rng.shuffle(v);
  std::vector<std::size_t> cursor(std::size_t(ds.num_classes), 0);

  DevicePartition dp;
  dp.n_dev = n_dev;
  dp.assignments.assign(std::size_t(n_dev), {});

  for (int d = 0; d < n_dev; ++d) {
    auto& mine = dp.assignments[std::size_t(d)];
    std::vector<char> used(std::size_t(ds.num_classes), 0);
    long remaining = budget;
    while (remaining > 0) {
      std::vector<int> open;
      for (int c = 0; c < ds.num_classes; ++c)
        if (!used[std::size_t(c)] && cursor[std::size_t(c)] < by_class[std::size_t(c)].size())
          open.push_back(c);
      if (open.empty())
        throw ValidationError("partition_nonbalance: pool exhausted before device " +
                              std::to_string(d) + " filled its budget");
      const int c = open[std::size_t(rng.uniform_int(0, long(open.size()) - 1))];
      used[std::size_t(c)] = 1;
      const long avail = long(by_class[std::size_t(c)].size() - cursor[std::size_t(c)]);
      const long take = std::min({per_label_cap, avail, remaining});
      for (long t = 0; t < take; ++t) mine.push_back(by_class[std::size_t(c)][cursor[std::size_t(c)]++]);
      remaining -= take;
    }
  }

  validate_partition(dp, ds.num_samples());
  return dp;
}

// Fresh uniform draw without replacement of min(batch_size, n_l) local indices.
inline std::vector<long> batch_iter(const DevicePartition& dp, int device, long batch_size,
                                    RngStream& rng) {
  if (device < 0 || device >= dp.n_dev) throw ValidationError("batch_iter: bad device id");
  const auto& local = dp.assignments[std::size_t(device)];
  const long n = long(local.size());
  const long k = std::min(batch_size, n);
  std::vector<long> pos(static_cast<std::size_t>(n));
  std::iota(pos.begin(), pos.end(), 0L);
  std::vector<long> out;
  out.reserve(std::size_t(k));
  for (long i = 0; i < k; ++i) {
    const long j = rng.uniform_int(i, n - 1);
    std::swap(pos[std::size_t(i)], pos[std::size_t(j)]);
    out.push_back(local[std::size_t(pos[std::size_t(i)])]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Partition JSON (device -> [indices]) for run reproducibility.

inline nlohmann::json partition_to_json(const DevicePartition& dp) {
  nlohmann::json assignments = nlohmann::json::object();
  for (int d = 0; d < dp.n_dev; ++d) assignments[std::to_string(d)] = dp.assignments[std::size_t(d)];
  return nlohmann::json{{"n_dev", dp.n_dev}, {"assignments", assignments}};
}

inline DevicePartition partition_from_json(const nlohmann::json& j) {
  DevicePartition dp;
  try {
    dp.n_dev = j.at("n_dev").get<int>();
    dp.assignments.assign(std::size_t(dp.n_dev), {});
    for (const auto& [key, value] : j.at("assignments").items()) {
      const int d = std::stoi(key);
      if (d < 0 || d >= dp.n_dev) throw FormatError("partition JSON: device id out of range");
      dp.assignments[std::size_t(d)] = value.get<std::vector<long>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("partition JSON: ") + e.what());
  }
  return dp;
}

inline std::vector<std::vector<long>> label_histogram(const Dataset& ds, const DevicePartition& dp) {
  std::vector<std::vector<long>> hist(std::size_t(dp.n_dev),
                                      std::vector<long>(std::size_t(ds.num_classes), 0));
  for (int d = 0; d < dp.n_dev; ++d)
    for (long idx : dp.assignments[std::size_t(d)])
      ++hist[std::size_t(d)][std::size_t(ds.labels[std::size_t(idx)])];
  return hist;
}

inline double label_entropy(const std::vector<long>& counts) {
  long total = std::accumulate(counts.begin(), counts.end(), 0L);
  if (total == 0) return 0.0;
  double h = 0.0;
  for (long c : counts) {
    if (c == 0) continue;
    const double p = double(c) / double(total);
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace dfedrw
