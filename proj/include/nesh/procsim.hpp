#pragma once

// Sparse hypergraph sampling from the Gamma-process / Poisson-point-process
// construction, empirical sparsity ratios, and the closed-form asymptotic
// bounds on the sparsity ratio.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "nesh/common.hpp"

namespace nesh::procsim {

// A multiset of sampled hyperedges. Node labels are positive integers and
// per mode form exactly {1, ..., active_node_counts[k]}.
struct SampledHypergraph {
  int num_modes = 0;  // K
  int rank = 1;       // R
  double alpha = 0.0;
  std::map<std::vector<std::int32_t>, std::int64_t> edges;  // edge -> multiplicity
  std::int64_t raw_count = 0;       // PPP points with multiplicity
  std::int64_t distinct_count = 0;  // |support|
  std::vector<std::int64_t> active_node_counts;  // D_k, per mode
};

struct BoundsPair {
  double lower = 0.0;
  double upper = 0.0;
  int num_modes = 0;
  double alpha = 0.0;
};

struct SweepRow {
  double alpha = 0.0;
  int reps = 0;
  int empty_reps = 0;
  double ratio_mean = std::numeric_limits<double>::quiet_NaN();
  double ratio_std = std::numeric_limits<double>::quiet_NaN();
  double mean_distinct = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> mean_active;  // per mode
  double lower = 0.0;
  double upper = 0.0;

  bool valid() const { return empty_reps < reps; }
};

inline void check_graph_args(int num_modes, int rank, double alpha) {
  if (num_modes < 2) throw std::invalid_argument("procsim: need at least 2 modes");
  if (rank < 1) throw std::invalid_argument("procsim: rank must be >= 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw std::invalid_argument("procsim: alpha must be positive and finite");
}

// Total mass of each Gamma process on [0, alpha]: independent Gamma(alpha, 1).
inline std::vector<std::vector<double>> sample_total_masses(int num_modes, int rank,
                                                            double alpha,
                                                            std::mt19937_64& rng) {
  check_graph_args(num_modes, rank, alpha);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<std::vector<double>> masses(num_modes, std::vector<double>(rank));
  for (auto& mode : masses)
    for (double& g : mode) g = gamma(rng);
  return masses;
}

namespace detail {

inline void finalize_counts(SampledHypergraph& g) {
  g.distinct_count = static_cast<std::int64_t>(g.edges.size());
  for (const auto& [edge, mult] : g.edges) {
    (void)mult;
    for (int k = 0; k < g.num_modes; ++k)
      g.active_node_counts[k] = std::max<std::int64_t>(g.active_node_counts[k], edge[k]);
  }
}

// GEM(alpha) weights grown on demand; cumulative sums kept for label draws.
struct StickSequence {
  std::vector<double> cumulative;
  double log_residual = 0.0;  // log prod_l (1 - v_l)

  void extend_one(double alpha, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    // 1 - U^(1/alpha) ~ Beta(1, alpha)
    double v = -std::expm1(std::log(unif(rng)) / alpha);
    v = std::min(std::max(v, 1e-300), 1.0 - 1e-16);
    double w = v * std::exp(log_residual);
    cumulative.push_back((cumulative.empty() ? 0.0 : cumulative.back()) + w);
    log_residual += std::log1p(-v);
  }

  void extend_to_residual(double alpha, double tol, std::mt19937_64& rng) {
    while (std::exp(log_residual) >= tol) extend_one(alpha, rng);
  }

  // 1-based stick index; grows the sequence if u falls past the kept mass.
  // Extension stops once new weights are absorbed by rounding, at which point
  // the final stick takes the residual draw.
  std::int32_t draw_label(double u, double alpha, std::mt19937_64& rng) {
    while (cumulative.empty() || u >= cumulative.back()) {
      double before = cumulative.empty() ? -1.0 : cumulative.back();
      extend_one(alpha, rng);
      if (cumulative.back() == before)
        return static_cast<std::int32_t>(cumulative.size());
    }
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    return static_cast<std::int32_t>(it - cumulative.begin()) + 1;
  }
};

}  // namespace detail

// R = 1 sampler with the per-mode Dirichlet-process labels marginalized out
// through the Chinese-restaurant predictive rule. Exact: no truncation.
inline SampledHypergraph sample_hypergraph_crp(int num_modes, double alpha,
                                               std::mt19937_64& rng) {
  check_graph_args(num_modes, 1, alpha);
  SampledHypergraph g;
  g.num_modes = num_modes;
  g.rank = 1;
  g.alpha = alpha;
  g.active_node_counts.assign(num_modes, 0);

  auto masses = sample_total_masses(num_modes, 1, alpha, rng);
  double mean = 1.0;
  for (int k = 0; k < num_modes; ++k) mean *= masses[k][0];
  std::poisson_distribution<std::int64_t> poisson(mean);
  g.raw_count = poisson(rng);
  if (g.raw_count == 0) return g;

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  // Picking an existing label with probability proportional to its count is
  // the same as copying a uniformly chosen earlier assignment.
  std::vector<std::vector<std::int32_t>> labels(
      num_modes, std::vector<std::int32_t>(g.raw_count));
  for (int k = 0; k < num_modes; ++k) {
    std::int32_t next = 0;
    for (std::int64_t j = 0; j < g.raw_count; ++j) {
      double u = unif(rng) * (alpha + static_cast<double>(j));
      if (u < alpha) {
        labels[k][j] = ++next;
      } else {
        std::uniform_int_distribution<std::int64_t> pick(0, j - 1);
        labels[k][j] = labels[k][pick(rng)];
      }
    }
  }
  std::vector<std::int32_t> edge(num_modes);
  for (std::int64_t p = 0; p < g.raw_count; ++p) {
    for (int k = 0; k < num_modes; ++k) edge[k] = labels[k][p];
    ++g.edges[edge];
  }
  detail::finalize_counts(g);
  return g;
}

// General-R sampler with explicit GEM stick weights. Stick indices are shared
// across the R components, which probabilistically merges the R hypergraphs.
inline SampledHypergraph sample_hypergraph_stick(int num_modes, int rank, double alpha,
                                                 double truncation_tol,
                                                 std::mt19937_64& rng) {
  check_graph_args(num_modes, rank, alpha);
  if (!(truncation_tol > 0.0) || truncation_tol > 1e-4)
    throw std::invalid_argument("procsim: truncation_tol must be in (0, 1e-4]");

  SampledHypergraph g;
  g.num_modes = num_modes;
  g.rank = rank;
  g.alpha = alpha;
  g.active_node_counts.assign(num_modes, 0);

  auto masses = sample_total_masses(num_modes, rank, alpha, rng);
  std::vector<double> component_rate(rank, 1.0);
  double total_rate = 0.0;
  for (int r = 0; r < rank; ++r) {
    for (int k = 0; k < num_modes; ++k) component_rate[r] *= masses[k][r];
    total_rate += component_rate[r];
  }
  std::poisson_distribution<std::int64_t> poisson(total_rate);
  g.raw_count = poisson(rng);

  std::vector<std::vector<detail::StickSequence>> sticks(
      num_modes, std::vector<detail::StickSequence>(rank));
  for (auto& mode : sticks)
    for (auto& s : mode) s.extend_to_residual(alpha, truncation_tol, rng);

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::map<std::vector<std::int32_t>, std::int64_t> raw_edges;
  std::vector<std::int32_t> edge(num_modes);
  for (std::int64_t p = 0; p < g.raw_count; ++p) {
    double u = unif(rng) * total_rate;
    int r = 0;
    for (; r + 1 < rank; ++r) {
      if (u < component_rate[r]) break;
      u -= component_rate[r];
    }
    for (int k = 0; k < num_modes; ++k)
      edge[k] = sticks[k][r].draw_label(unif(rng), alpha, rng);
    ++raw_edges[edge];
  }
  if (raw_edges.empty()) return g;

  // Compress stick indices per mode to contiguous labels 1..D_k.
  std::vector<std::map<std::int32_t, std::int32_t>> relabel(num_modes);
  for (const auto& [e, mult] : raw_edges) {
    (void)mult;
    for (int k = 0; k < num_modes; ++k) relabel[k].emplace(e[k], 0);
  }
  for (int k = 0; k < num_modes; ++k) {
    std::int32_t next = 0;
    for (auto& [stick_index, label] : relabel[k]) label = ++next;
  }
  for (const auto& [e, mult] : raw_edges) {
    for (int k = 0; k < num_modes; ++k) edge[k] = relabel[k][e[k]];
    g.edges[edge] += mult;
  }
  detail::finalize_counts(g);
  return g;
}

// N^alpha / prod_k D_k^alpha. Undefined on an empty graph.
inline double sparsity_ratio(const SampledHypergraph& g) {
  if (g.distinct_count < 1)
    throw EmptyGraphError("procsim: sparsity ratio undefined on an empty hypergraph");
  double volume = 1.0;
  for (auto d : g.active_node_counts) volume *= static_cast<double>(d);
  return static_cast<double>(g.distinct_count) / volume;
}

// Closed-form asymptotic bounds on the sparsity ratio. Natural logarithms.
inline BoundsPair sparsity_bounds(int num_modes, double alpha) {
  if (num_modes < 2) throw std::invalid_argument("procsim: bounds need at least 2 modes");
  if (!(alpha >= 1.2) || !std::isfinite(alpha))
    throw std::invalid_argument("procsim: bounds require alpha >= 1.2");
  const double k = static_cast<double>(num_modes);
  BoundsPair b;
  b.num_modes = num_modes;
  b.alpha = alpha;
  b.upper = std::pow(2.11 / ((k - 1.0) * std::log(0.99 * alpha)), k);
  b.lower = std::exp(-1.03 * std::pow(2.0 * k, 1.0 / k) * k *
                     std::pow(std::log(alpha), 1.0 / k)) /
            (2.0 * k * std::log(alpha)) *
            std::pow(1.82 / ((k - 1.0) * std::log(1.01 * alpha)), k);
  return b;
}

// E[D_k | other-mode masses with product gamma] = alpha * psi(gamma) where
// psi(gamma) = integral of (1 - e^{-gamma x}) e^{-x}/x dx = log(1 + gamma)
// (Frullani integral).
inline double expected_active_nodes(double alpha, double gamma) {
  if (!(alpha > 0.0) || !(gamma > 0.0))
    throw std::invalid_argument("procsim: expected_active_nodes needs positive arguments");
  return alpha * std::log1p(gamma);
}

// Alternative candidate from an asymptotic psi(gamma) ~ 0.5 * log(gamma)
// claim. Kept so simulation can report which candidate the data matches.
inline double expected_active_nodes_lhopital(double alpha, double gamma) {
  if (!(alpha > 0.0) || !(gamma > 0.0))
    throw std::invalid_argument("procsim: expected_active_nodes needs positive arguments");
  return 0.5 * alpha * std::log(gamma);
}

namespace detail {

struct ReplicateStats {
  bool empty = true;
  double ratio = 0.0;
  double distinct = 0.0;
  std::vector<double> active;
};

inline ReplicateStats run_replicate(int num_modes, int rank, double alpha,
                                    double truncation_tol, std::uint64_t seed,
                                    std::uint64_t replicate_index) {
  auto rng = make_rng(seed, replicate_index);
  SampledHypergraph g = rank == 1
                            ? sample_hypergraph_crp(num_modes, alpha, rng)
                            : sample_hypergraph_stick(num_modes, rank, alpha,
                                                      truncation_tol, rng);
  ReplicateStats s;
  if (g.distinct_count == 0) return s;
  s.empty = false;
  s.ratio = sparsity_ratio(g);
  s.distinct = static_cast<double>(g.distinct_count);
  s.active.assign(g.active_node_counts.begin(), g.active_node_counts.end());
  return s;
}

}  // namespace detail

// One row per grid value; per-replicate RNG streams are derived from
// (seed, global replicate counter) so results do not depend on thread count.
inline std::vector<SweepRow> sweep(int num_modes, int rank,
                                   const std::vector<double>& alpha_grid, int reps,
                                   std::uint64_t seed, double truncation_tol = 1e-8,
                                   int threads = 0) {
  if (reps < 1) throw std::invalid_argument("procsim: sweep needs reps >= 1");
  for (double a : alpha_grid) (void)sparsity_bounds(num_modes, a);
  check_graph_args(num_modes, rank, alpha_grid.empty() ? 1.0 : alpha_grid.front());

  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, reps));

  std::vector<SweepRow> rows;
  rows.reserve(alpha_grid.size());
  for (std::size_t ai = 0; ai < alpha_grid.size(); ++ai) {
    const double alpha = alpha_grid[ai];
    std::vector<detail::ReplicateStats> stats(reps);
    auto worker = [&](int begin, int end) {
      for (int r = begin; r < end; ++r)
        stats[r] = detail::run_replicate(num_modes, rank, alpha, truncation_tol, seed,
                                         ai * static_cast<std::uint64_t>(reps) + r);
    };
    if (threads == 1) {
      worker(0, reps);
    } else {
      std::vector<std::thread> pool;
      int chunk = (reps + threads - 1) / threads;
      for (int t = 0; t < threads; ++t) {
        int begin = t * chunk, end = std::min(reps, begin + chunk);
        if (begin < end) pool.emplace_back(worker, begin, end);
      }
      for (auto& th : pool) th.join();
    }

    SweepRow row;
    row.alpha = alpha;
    row.reps = reps;
    row.mean_active.assign(num_modes, 0.0);
    auto bounds = sparsity_bounds(num_modes, alpha);
    row.lower = bounds.lower;
    row.upper = bounds.upper;

    double sum_ratio = 0.0, sum_ratio_sq = 0.0, sum_distinct = 0.0;
    int kept = 0;
    for (const auto& s : stats) {
      if (s.empty) {
        ++row.empty_reps;
        continue;
      }
      ++kept;
      sum_ratio += s.ratio;
      sum_ratio_sq += s.ratio * s.ratio;
      sum_distinct += s.distinct;
      for (int k = 0; k < num_modes; ++k) row.mean_active[k] += s.active[k];
    }
    if (kept > 0) {
      row.ratio_mean = sum_ratio / kept;
      row.mean_distinct = sum_distinct / kept;
      for (auto& d : row.mean_active) d /= kept;
      row.ratio_std =
          kept > 1 ? std::sqrt(std::max(0.0, (sum_ratio_sq - kept * row.ratio_mean *
                                                                  row.ratio_mean) /
                                                 (kept - 1)))
                   : 0.0;
    } else {
      row.mean_active.assign(num_modes, std::numeric_limits<double>::quiet_NaN());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out) {
  if (rows.empty()) return;
  out << "alpha,reps,empty_reps,ratio_mean,ratio_std,mean_N";
  for (std::size_t k = 0; k < rows.front().mean_active.size(); ++k)
    out << ",mean_D" << (k + 1);
  out << ",lower,upper\n";
  for (const auto& r : rows) {
    out << format_g17(r.alpha) << ',' << r.reps << ',' << r.empty_reps << ','
        << format_g17(r.ratio_mean) << ',' << format_g17(r.ratio_std) << ','
        << format_g17(r.mean_distinct);
    for (double d : r.mean_active) out << ',' << format_g17(d);
    out << ',' << format_g17(r.lower) << ',' << format_g17(r.upper) << '\n';
  }
}

}  // namespace nesh::procsim
