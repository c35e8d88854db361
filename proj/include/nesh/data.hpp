#pragma once

// Interaction-event datasets: CSV ingestion with time normalization and
// node re-indexing, train/test splits over whole sequences, summary
// statistics, and synthetic generation from known rate functions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nesh/common.hpp"
#include "nesh/gp.hpp"

namespace nesh::data {

struct EventSequence {
  std::vector<std::int32_t> key;  // one 0-based node index per mode
  std::vector<double> times;      // sorted ascending, within [0, horizon]
};

struct EventDataset {
  int num_modes = 0;                       // K
  std::vector<std::int32_t> mode_sizes;    // D_k
  std::vector<EventSequence> sequences;    // distinct keys
  double horizon = 0.0;                    // T
  double time_offset = 0.0;                // raw -> normalized: (t - offset) / scale
  double time_scale = 1.0;
  // Per mode: internal index -> original node id. Empty raw ids mean the
  // dataset was built directly in internal coordinates.
  std::vector<std::vector<std::int64_t>> raw_ids;

  std::int64_t event_count() const {
    std::int64_t m = 0;
    for (const auto& s : sequences) m += static_cast<std::int64_t>(s.times.size());
    return m;
  }
};

struct DatasetStats {
  int num_modes = 0;
  std::vector<std::int32_t> mode_sizes;
  std::int64_t num_sequences = 0;  // N
  std::int64_t num_events = 0;     // m
  double horizon = 0.0;
  double sparsity = 0.0;           // N / prod_k D_k
};

inline DatasetStats dataset_stats(const EventDataset& ds) {
  DatasetStats s;
  s.num_modes = ds.num_modes;
  s.mode_sizes = ds.mode_sizes;
  s.num_sequences = static_cast<std::int64_t>(ds.sequences.size());
  s.num_events = ds.event_count();
  s.horizon = ds.horizon;
  double volume = 1.0;
  for (auto d : ds.mode_sizes) volume *= static_cast<double>(d);
  s.sparsity = volume > 0.0 ? static_cast<double>(s.num_sequences) / volume : 0.0;
  return s;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace detail

// Event file: header `mode_0,...,mode_{K-1},t`, then one event per row with
// arbitrary nonnegative integer node ids and a finite timestamp. Timestamps
// are shifted so the minimum maps to 0; node ids are re-indexed per mode to
// 0..D_k-1 ordered by descending event count (ties by first appearance).
inline EventDataset load_events(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("data: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw ParseError("data: no events in '" + path + "'");
  auto header = detail::split_csv_line(line);
  if (header.size() < 2 || header.back() != "t")
    throw ParseError("data: header must be mode_0,...,mode_{K-1},t", 1);
  const int num_modes = static_cast<int>(header.size()) - 1;
  for (int k = 0; k < num_modes; ++k)
    if (header[k] != "mode_" + std::to_string(k))
      throw ParseError("data: header must be mode_0,...,mode_{K-1},t", 1);

  struct RawEvent {
    std::vector<std::int64_t> key;
    double t;
  };
  std::vector<RawEvent> events;
  long line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (static_cast<int>(fields.size()) != num_modes + 1)
      throw ParseError("data: expected " + std::to_string(num_modes + 1) + " columns",
                       line_number);
    RawEvent ev;
    ev.key.resize(num_modes);
    try {
      std::size_t used = 0;
      for (int k = 0; k < num_modes; ++k) {
        ev.key[k] = std::stoll(fields[k], &used);
        if (used != fields[k].size()) throw std::invalid_argument(fields[k]);
        if (ev.key[k] < 0) throw std::invalid_argument("negative node id");
      }
      ev.t = std::stod(fields[num_modes], &used);
      if (used != fields[num_modes].size()) throw std::invalid_argument(fields.back());
    } catch (const std::exception&) {
      throw ParseError("data: malformed row '" + line + "'", line_number);
    }
    if (!std::isfinite(ev.t)) throw ParseError("data: non-finite timestamp", line_number);
    if (ev.t < 0.0) throw ParseError("data: negative timestamp", line_number);
    events.push_back(std::move(ev));
  }
  if (events.empty()) throw ParseError("data: no events in '" + path + "'");

  double t_min = events.front().t, t_max = events.front().t;
  for (const auto& ev : events) {
    t_min = std::min(t_min, ev.t);
    t_max = std::max(t_max, ev.t);
  }
  if (!(t_max > t_min))
    throw ParseError("data: all events share one timestamp; zero horizon");

  // Event counts per raw id, in first-appearance order for stable ties.
  std::vector<std::vector<std::pair<std::int64_t, std::int64_t>>> counts(num_modes);
  std::vector<std::map<std::int64_t, std::size_t>> position(num_modes);
  for (const auto& ev : events) {
    for (int k = 0; k < num_modes; ++k) {
      auto [it, fresh] = position[k].emplace(ev.key[k], counts[k].size());
      if (fresh) counts[k].push_back({ev.key[k], 0});
      ++counts[k][it->second].second;
    }
  }
  EventDataset ds;
  ds.num_modes = num_modes;
  ds.time_offset = t_min;
  ds.time_scale = 1.0;
  ds.horizon = t_max - t_min;
  ds.mode_sizes.resize(num_modes);
  ds.raw_ids.resize(num_modes);
  std::vector<std::map<std::int64_t, std::int32_t>> remap(num_modes);
  for (int k = 0; k < num_modes; ++k) {
    std::vector<std::size_t> order(counts[k].size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return counts[k][a].second > counts[k][b].second;
    });
    ds.mode_sizes[k] = static_cast<std::int32_t>(order.size());
    ds.raw_ids[k].resize(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      ds.raw_ids[k][i] = counts[k][order[i]].first;
      remap[k][counts[k][order[i]].first] = static_cast<std::int32_t>(i);
    }
  }

  std::map<std::vector<std::int32_t>, std::vector<double>> grouped;
  for (const auto& ev : events) {
    std::vector<std::int32_t> key(num_modes);
    for (int k = 0; k < num_modes; ++k) key[k] = remap[k][ev.key[k]];
    grouped[key].push_back((ev.t - ds.time_offset) / ds.time_scale);
  }
  for (auto& [key, times] : grouped) {
    std::sort(times.begin(), times.end());
    ds.sequences.push_back({key, std::move(times)});
  }
  return ds;
}

// Writes events in raw-id coordinates (raw timestamps restored) so that a
// write/load round trip reproduces the dataset.
inline void save_events(const EventDataset& ds, std::ostream& out) {
  for (int k = 0; k < ds.num_modes; ++k) out << "mode_" << k << ',';
  out << "t\n";
  for (const auto& seq : ds.sequences) {
    for (double t : seq.times) {
      for (int k = 0; k < ds.num_modes; ++k) {
        std::int64_t id = ds.raw_ids.empty() || ds.raw_ids[k].empty()
                              ? seq.key[k]
                              : ds.raw_ids[k][seq.key[k]];
        out << id << ',';
      }
      out << format_g17(t * ds.time_scale + ds.time_offset) << '\n';
    }
  }
}

inline void save_events(const EventDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("data: cannot write '" + path + "'");
  save_events(ds, out);
}

// Sidecar mapping: one row per (mode, raw id, internal id).
inline void save_index_mapping(const EventDataset& ds, std::ostream& out) {
  out << "mode,raw_id,internal_id\n";
  for (int k = 0; k < ds.num_modes; ++k)
    for (std::size_t i = 0; i < ds.raw_ids[k].size(); ++i)
      out << k << ',' << ds.raw_ids[k][i] << ',' << i << '\n';
}

// Whole sequences are assigned to the splits uniformly at random; both sides
// share mode sizes, horizon, and node-index mappings.
inline std::pair<EventDataset, EventDataset> split_sequences(const EventDataset& ds,
                                                             double train_fraction,
                                                             std::uint64_t seed) {
  if (!(train_fraction > 0.0) || !(train_fraction < 1.0))
    throw std::invalid_argument("data: train_fraction must be in (0, 1)");
  const std::size_t n = ds.sequences.size();
  if (n < 2) throw std::invalid_argument("data: need at least 2 sequences to split");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(seed, /*stream=*/0x5eed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * n));
  if (n_train == 0 || n_train == n)
    throw Error("data: split would leave one side empty");

  EventDataset train = ds, test = ds;
  train.sequences.clear();
  test.sequences.clear();
  std::vector<bool> in_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;
  for (std::size_t i = 0; i < n; ++i)
    (in_train[i] ? train : test).sequences.push_back(ds.sequences[i]);
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Synthetic data from known rate functions (verification oracle).

enum class RateFamily { kConstant, kSinusoidalSquared, kTabulated };

// A bounded rate on [0, horizon]. kTabulated holds a piecewise-constant rate
// on a uniform grid, which is how model-sampled paths are represented.
struct RateFunction {
  RateFamily family = RateFamily::kConstant;
  double constant = 1.0;
  double base = 1.0, amplitude = 1.0, phase = 0.0;  // (base + amp*sin(2*pi*t/T + phase))^2
  std::vector<double> table;
  double declared_bound = 0.0;  // 0 = use the intrinsic maximum

  double max_rate(double horizon) const {
    (void)horizon;
    if (declared_bound > 0.0) return declared_bound;
    switch (family) {
      case RateFamily::kConstant:
        return constant;
      case RateFamily::kSinusoidalSquared: {
        double peak = std::abs(base) + std::abs(amplitude);
        return peak * peak;
      }
      case RateFamily::kTabulated:
        return *std::max_element(table.begin(), table.end());
    }
    return 0.0;
  }

  double operator()(double t, double horizon) const {
    switch (family) {
      case RateFamily::kConstant:
        return constant;
      case RateFamily::kSinusoidalSquared: {
        double rho = base + amplitude * std::sin(2.0 * M_PI * t / horizon + phase);
        return rho * rho;
      }
      case RateFamily::kTabulated: {
        auto idx = static_cast<std::size_t>(t / horizon * table.size());
        return table[std::min(idx, table.size() - 1)];
      }
    }
    return 0.0;
  }
};

struct GeneratorSpec {
  int num_modes = 0;
  std::vector<std::int32_t> mode_sizes;
  double horizon = 0.0;
  std::vector<std::vector<std::int32_t>> keys;
  std::vector<RateFunction> rates;  // one per key
};

// Exact thinning: homogeneous candidates at the per-key bound, each kept
// with probability rate(t)/bound. Keys with no accepted events are dropped.
inline EventDataset synth_from_model(const GeneratorSpec& spec, std::mt19937_64& rng) {
  if (spec.num_modes < 1 || spec.keys.size() != spec.rates.size() ||
      !(spec.horizon > 0.0))
    throw std::invalid_argument("data: malformed generator spec");
  EventDataset ds;
  ds.num_modes = spec.num_modes;
  ds.mode_sizes = spec.mode_sizes;
  ds.horizon = spec.horizon;
  ds.raw_ids.resize(spec.num_modes);

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = 0; i < spec.keys.size(); ++i) {
    const auto& rate = spec.rates[i];
    const double bound = rate.max_rate(spec.horizon);
    if (bound <= 0.0) continue;
    std::poisson_distribution<std::int64_t> candidates(bound * spec.horizon);
    std::int64_t n = candidates(rng);
    std::vector<double> accepted;
    for (std::int64_t j = 0; j < n; ++j) {
      double t = unif(rng) * spec.horizon;
      double lambda = rate(t, spec.horizon);
      if (lambda > bound * (1.0 + 1e-12))
        throw Error("data: rate exceeds its declared bound during thinning");
      if (unif(rng) * bound < lambda) accepted.push_back(t);
    }
    if (accepted.empty()) continue;
    std::sort(accepted.begin(), accepted.end());
    ds.sequences.push_back({spec.keys[i], std::move(accepted)});
  }
  return ds;
}

// Attaches model-sampled rates to a generator spec: stick-breaking
// sociabilities give each node a log-sociability embedding, a GP path over
// (standardized embedding, time) is squared into a rate, and the path is held
// piecewise-constant on a uniform grid so thinning stays exact.
inline void attach_model_rates(GeneratorSpec& spec, int rank, double alpha,
                               int grid, double len_x, double len_t,
                               double variance, std::mt19937_64& rng) {
  if (rank < 1 || grid < 2 || !(alpha > 0.0))
    throw std::invalid_argument("data: bad model-rate parameters");
  const int num_modes = spec.num_modes;
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // per (mode, node, component): omega_j = v_j prod_{l<j} (1 - v_l)
  std::vector<Eigen::MatrixXd> log_weights;
  for (int k = 0; k < num_modes; ++k) {
    Eigen::MatrixXd logw(spec.mode_sizes[k], rank);
    for (int r = 0; r < rank; ++r) {
      double log_residual = 0.0;
      for (int j = 0; j < spec.mode_sizes[k]; ++j) {
        double v = -std::expm1(std::log(unif(rng)) / alpha);  // Beta(1, alpha)
        v = std::min(std::max(v, 1e-12), 1.0 - 1e-12);
        logw(j, r) = std::log(v) + log_residual;
        log_residual += std::log1p(-v);
      }
    }
    log_weights.push_back(std::move(logw));
  }

  const auto n = static_cast<Eigen::Index>(spec.keys.size());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(num_modes) * rank);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int k = 0; k < num_modes; ++k)
      x.row(i).segment(static_cast<Eigen::Index>(k) * rank, rank) =
          log_weights[k].row(spec.keys[i][k]);
  // standardize embedding coordinates, mirroring inference-time normalization
  Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::RowVectorXd sd =
      ((x.rowwise() - mean).array().square().colwise().mean()).sqrt().max(1e-8);
  x = (x.rowwise() - mean).array().rowwise() / sd.array();

  // exact GP path on the keys x time grid, squared into rates
  Eigen::MatrixXd pts(n * grid, x.cols() + 1);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int g = 0; g < grid; ++g) {
      pts.row(i * grid + g).head(x.cols()) = x.row(i);
      pts(i * grid + g, x.cols()) = (g + 0.5) / grid * spec.horizon;
    }
  gp::KernelParams params;
  params.log_lengthscales = Eigen::VectorXd::Constant(pts.cols(), std::log(len_x));
  params.log_lengthscales[pts.cols() - 1] = std::log(len_t);
  params.log_variance1 = std::log(variance);
  params.jitter = 1e-8;
  auto cov = gp::kernel_matrix(pts, pts, params, true);
  Eigen::MatrixXd chol = gp::factorize_spd(cov).matrixL();
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd white(pts.rows());
  for (Eigen::Index i = 0; i < white.size(); ++i) white[i] = normal(rng);
  Eigen::VectorXd path = chol * white;

  spec.rates.clear();
  for (Eigen::Index i = 0; i < n; ++i) {
    RateFunction rate;
    rate.family = RateFamily::kTabulated;
    rate.table.resize(grid);
    for (int g = 0; g < grid; ++g) {
      double f = path[i * grid + g];
      rate.table[g] = f * f;
    }
    spec.rates.push_back(std::move(rate));
  }
}

// ---------------------------------------------------------------------------
// Generator spec file: `key = value` lines, `#` comments. Documented keys:
//   k, mode_sizes, horizon, family (constant|sinsq|tabulated),
//   rate (constant), base/amp/random_phase (sinsq), table (tabulated,
//   per-key `;`-separated lists), keys (either explicit `i1,i2;j1,j2;...`
//   tuples or `random:<count>` distinct uniform keys).
inline GeneratorSpec parse_generator_spec(std::istream& in, std::mt19937_64& rng) {
  std::map<std::string, std::string> kv;
  std::string line;
  long line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw ParseError("data: expected `key = value`", line_number);
      continue;
    }
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto require = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError("data: generator spec missing '" + key + "'");
    return it->second;
  };
  auto parse_ints = [](const std::string& s) {
    std::vector<std::int32_t> out;
    std::istringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
    return out;
  };

  GeneratorSpec spec;
  spec.num_modes = std::stoi(require("k"));
  spec.mode_sizes = parse_ints(require("mode_sizes"));
  spec.horizon = std::stod(require("horizon"));
  if (static_cast<int>(spec.mode_sizes.size()) != spec.num_modes)
    throw ParseError("data: mode_sizes must list k values");

  const std::string keyspec = require("keys");
  if (keyspec.rfind("random:", 0) == 0) {
    auto want = static_cast<std::size_t>(std::stoll(keyspec.substr(7)));
    double volume = 1.0;
    for (auto d : spec.mode_sizes) volume *= d;
    if (static_cast<double>(want) > volume)
      throw ParseError("data: more random keys requested than distinct tuples exist");
    std::set<std::vector<std::int32_t>> chosen;
    while (chosen.size() < want) {
      std::vector<std::int32_t> key(spec.num_modes);
      for (int k = 0; k < spec.num_modes; ++k) {
        std::uniform_int_distribution<std::int32_t> pick(0, spec.mode_sizes[k] - 1);
        key[k] = pick(rng);
      }
      chosen.insert(std::move(key));
    }
    spec.keys.assign(chosen.begin(), chosen.end());
  } else {
    std::istringstream ss(keyspec);
    std::string tuple;
    while (std::getline(ss, tuple, ';')) {
      auto key = parse_ints(tuple);
      if (static_cast<int>(key.size()) != spec.num_modes)
        throw ParseError("data: key arity mismatch in '" + tuple + "'");
      spec.keys.push_back(std::move(key));
    }
  }
  for (const auto& key : spec.keys)
    for (int k = 0; k < spec.num_modes; ++k)
      if (key[k] < 0 || key[k] >= spec.mode_sizes[k])
        throw ParseError("data: key index out of range");

  const std::string family = require("family");
  if (family == "model") {
    auto opt = [&](const std::string& key, double fallback) {
      return kv.count(key) ? std::stod(kv[key]) : fallback;
    };
    attach_model_rates(spec, static_cast<int>(opt("rank", 2)), opt("alpha_emb", 1.0),
                       static_cast<int>(opt("grid", 32)), opt("len_x", 1.0),
                       opt("len_t", 1.0), opt("variance", 1.0), rng);
    return spec;
  }
  std::uniform_real_distribution<double> unif(0.0, 2.0 * M_PI);
  for (std::size_t i = 0; i < spec.keys.size(); ++i) {
    RateFunction rate;
    if (family == "constant") {
      rate.family = RateFamily::kConstant;
      rate.constant = std::stod(require("rate"));
    } else if (family == "sinsq") {
      rate.family = RateFamily::kSinusoidalSquared;
      rate.base = kv.count("base") ? std::stod(kv["base"]) : 1.0;
      rate.amplitude = kv.count("amp") ? std::stod(kv["amp"]) : 1.0;
      if (kv.count("random_phase") && kv["random_phase"] == "1") rate.phase = unif(rng);
    } else if (family == "tabulated") {
      std::istringstream ss(require("table"));
      std::string chunk;
      std::vector<std::string> chunks;
      while (std::getline(ss, chunk, ';')) chunks.push_back(chunk);
      if (chunks.size() != spec.keys.size())
        throw ParseError("data: tabulated family needs one table per key");
      std::istringstream vs(chunks[i]);
      while (std::getline(vs, chunk, ','))
        rate.table.push_back(std::stod(chunk));
      rate.family = RateFamily::kTabulated;
      if (rate.table.empty()) throw ParseError("data: empty rate table");
    } else {
      throw ParseError("data: unknown rate family '" + family + "'");
    }
    if (kv.count("bound")) rate.declared_bound = std::stod(kv["bound"]);
    spec.rates.push_back(std::move(rate));
  }
  return spec;
}

}  // namespace nesh::data
