#pragma once

// Held-out scoring and embedding inspection. The test metric is the
// variational expectation of the log-likelihood: per sequence,
//   -T (1/Q) sum_q (m^2 + v)(x_i, t_q)  +  sum_j (1/S) sum_s log(f_s^2 + eps)
// with t_q ~ Uniform(0, T) and f_s reparameterized draws from q(f).

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nesh/common.hpp"
#include "nesh/data.hpp"
#include "nesh/embeddings.hpp"
#include "nesh/gp.hpp"
#include "nesh/inference.hpp"

namespace nesh::eval {

struct EvalReport {
  double total = 0.0;
  double mean = 0.0;
  std::vector<std::pair<int, double>> per_sequence;  // (test sequence index, loglik)
  long dropped = 0;  // sequences with nodes unknown to the checkpoint
  int event_samples = 0;
  int time_samples = 0;
  std::uint64_t seed = 0;
};

namespace detail {

// Remaps a test key into the checkpoint's internal node indices. Sequences
// referencing nodes the model never saw cannot be scored.
inline std::optional<std::vector<std::int32_t>> map_key(
    const inference::Checkpoint& ck, const data::EventDataset& test,
    const std::vector<std::int32_t>& key) {
  std::vector<std::int32_t> mapped(key.size());
  for (std::size_t k = 0; k < key.size(); ++k) {
    std::int64_t raw = key[k];
    if (k < test.raw_ids.size() && !test.raw_ids[k].empty())
      raw = test.raw_ids[k][key[k]];
    const auto d_k = ck.state.embed_params[k].rows();
    if (k < ck.raw_ids.size() && !ck.raw_ids[k].empty()) {
      auto it = std::find(ck.raw_ids[k].begin(), ck.raw_ids[k].end(), raw);
      if (it == ck.raw_ids[k].end()) return std::nullopt;
      mapped[k] = static_cast<std::int32_t>(it - ck.raw_ids[k].begin());
    } else {
      if (raw < 0 || raw >= d_k) return std::nullopt;
      mapped[k] = static_cast<std::int32_t>(raw);
    }
  }
  return mapped;
}

}  // namespace detail

inline EvalReport test_loglik(const inference::Checkpoint& ck,
                              const data::EventDataset& test, int event_samples,
                              int time_samples, std::uint64_t seed) {
  if (event_samples < 1 || time_samples < 1)
    throw std::invalid_argument("eval: sample counts must be >= 1");
  const auto& state = ck.state;
  auto table = state.embedding_table();
  const double horizon = state.horizon;

  EvalReport report;
  report.event_samples = event_samples;
  report.time_samples = time_samples;
  report.seed = seed;

  for (std::size_t i = 0; i < test.sequences.size(); ++i) {
    const auto& seq = test.sequences[i];
    auto key = detail::map_key(ck, test, seq.key);
    if (!key) {
      ++report.dropped;
      continue;
    }
    Eigen::VectorXd x =
        embeddings::batchnorm_apply(embeddings::gp_input(*key, table), state.bn);
    auto rng = make_rng(seed, /*stream=*/0xe7a1, i);
    std::uniform_real_distribution<double> unif(0.0, horizon);
    std::normal_distribution<double> normal(0.0, 1.0);

    const int m_i = static_cast<int>(seq.times.size());
    Eigen::MatrixXd queries(time_samples + m_i, x.size() + 1);
    for (int q = 0; q < time_samples; ++q) {
      queries.row(q).head(x.size()) = x.transpose();
      queries(q, x.size()) = unif(rng);
    }
    for (int j = 0; j < m_i; ++j) {
      queries.row(time_samples + j).head(x.size()) = x.transpose();
      queries(time_samples + j, x.size()) = seq.times[j];
    }
    auto marg = gp::q_marginal(queries, state.svgp);

    double integral = 0.0;
    for (int q = 0; q < time_samples; ++q)
      integral += marg.mean[q] * marg.mean[q] + marg.var[q];
    double loglik = -horizon / time_samples * integral;
    for (int j = 0; j < m_i; ++j) {
      double mean = marg.mean[time_samples + j];
      double sd = std::sqrt(std::max(marg.var[time_samples + j], 0.0));
      double acc = 0.0;
      for (int s = 0; s < event_samples; ++s) {
        double f = mean + sd * normal(rng);
        acc += std::log(f * f + state.eps_f);
      }
      loglik += acc / event_samples;
    }
    report.per_sequence.push_back({static_cast<int>(i), loglik});
    report.total += loglik;
  }
  if (report.per_sequence.empty())
    throw Error("eval: every test sequence was dropped (unseen nodes)");
  report.mean = report.total / static_cast<double>(report.per_sequence.size());
  return report;
}

// Homogeneous Poisson reference: per sequence the maximum-likelihood constant
// rate is m_i / T, giving log-likelihood m_i log(m_i / T) - m_i.
inline std::vector<double> homogeneous_mle_loglik(const data::EventDataset& ds) {
  std::vector<double> out;
  for (const auto& seq : ds.sequences) {
    auto m = static_cast<double>(seq.times.size());
    out.push_back(m * std::log(m / ds.horizon) - m);
  }
  return out;
}

inline void write_report(const EvalReport& report, std::ostream& out) {
  out << "sequence_index,loglik\n";
  for (const auto& [index, value] : report.per_sequence)
    out << index << ',' << format_g17(value) << '\n';
  out << "# total=" << format_g17(report.total) << " mean=" << format_g17(report.mean)
      << " scored=" << report.per_sequence.size() << " dropped=" << report.dropped
      << '\n';
}

// ---------------------------------------------------------------------------
// Embedding export and kernel PCA.

struct EmbeddingRow {
  int mode = 0;
  std::int32_t internal_id = 0;
  std::int64_t raw_id = 0;
  Eigen::VectorXd values;  // R log-sociabilities
};

inline std::vector<EmbeddingRow> export_embeddings(const inference::Checkpoint& ck) {
  std::vector<EmbeddingRow> rows;
  auto table = ck.state.embedding_table();
  for (int k = 0; k < ck.state.num_modes; ++k) {
    const auto& m = table.log_weights[k];
    for (Eigen::Index j = 0; j < m.rows(); ++j) {
      EmbeddingRow row;
      row.mode = k;
      row.internal_id = static_cast<std::int32_t>(j);
      row.raw_id = (static_cast<std::size_t>(k) < ck.raw_ids.size() &&
                    !ck.raw_ids[k].empty())
                       ? ck.raw_ids[k][j]
                       : j;
      row.values = m.row(j);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline void write_embeddings(const std::vector<EmbeddingRow>& rows, int rank,
                             std::ostream& out) {
  out << "mode,internal_id,raw_id";
  for (int r = 1; r <= rank; ++r) out << ",u_" << r;
  out << '\n';
  for (const auto& row : rows) {
    out << row.mode << ',' << row.internal_id << ',' << row.raw_id;
    for (Eigen::Index r = 0; r < row.values.size(); ++r)
      out << ',' << format_g17(row.values[r]);
    out << '\n';
  }
}

// Kernel PCA with the squared-exponential kernel: double-centered Gram,
// top eigenpairs, eigenvectors scaled by sqrt(eigenvalue). Sign convention:
// the first nonzero coordinate of each eigenvector is positive.
inline Eigen::MatrixXd kpca_project(const Eigen::MatrixXd& points, int out_dim,
                                    double lengthscale = 1.0, double variance = 1.0) {
  const Eigen::Index n = points.rows();
  if (out_dim < 1 || n < out_dim)
    throw std::invalid_argument("eval: need n >= out_dim >= 1 for kernel PCA");
  gp::KernelParams params;
  params.log_lengthscales =
      Eigen::VectorXd::Constant(points.cols(), std::log(lengthscale));
  params.log_variance1 = std::log(variance);
  params.log_variance2 = 0.0;
  params.jitter = 0.0;
  Eigen::MatrixXd gram = gp::kernel_matrix(points, points, params);
  Eigen::MatrixXd centering =
      Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / n);
  Eigen::MatrixXd centered = centering * gram * centering;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(centered);
  const auto& values = es.eigenvalues();  // ascending
  const double floor = 1e-10 * std::max(1.0, std::abs(values[n - 1]));
  int positive = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (values[i] > floor) ++positive;
  if (positive < out_dim)
    throw Error("eval: only " + std::to_string(positive) +
                " positive eigenvalues; cannot project to " + std::to_string(out_dim) +
                " dimensions");

  Eigen::MatrixXd coords(n, out_dim);
  for (int c = 0; c < out_dim; ++c) {
    Eigen::Index idx = n - 1 - c;  // descending eigenvalue order
    Eigen::VectorXd vec = es.eigenvectors().col(idx);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::abs(vec[i]) > 1e-9) {
        if (vec[i] < 0.0) vec = -vec;
        break;
      }
    }
    coords.col(c) = std::sqrt(values[idx]) * vec;
  }
  return coords;
}

inline void write_projection(const inference::Checkpoint& ck,
                             const std::vector<Eigen::MatrixXd>& per_mode_coords,
                             std::ostream& out) {
  int out_dim = per_mode_coords.empty() ? 0 : static_cast<int>(per_mode_coords[0].cols());
  out << "mode,internal_id";
  for (int c = 1; c <= out_dim; ++c) out << ",coord_" << c;
  out << '\n';
  for (std::size_t k = 0; k < per_mode_coords.size(); ++k)
    for (Eigen::Index j = 0; j < per_mode_coords[k].rows(); ++j) {
      out << k << ',' << j;
      for (Eigen::Index c = 0; c < per_mode_coords[k].cols(); ++c)
        out << ',' << format_g17(per_mode_coords[k](j, c));
      out << '\n';
    }
}

}  // namespace nesh::eval
