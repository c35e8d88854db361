#pragma once

// Stick-breaking sociability parameterization: unconstrained logits map to
// stick variables v in (0,1), whose cumulative products give per-component
// sociabilities. Node embeddings are the log sociabilities stacked across
// components; an interaction's GP input concatenates its nodes' embeddings.

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "nesh/common.hpp"

namespace nesh::embeddings {

// One logit per (mode, component, active node). Inactive nodes carry no
// parameters.
struct StickParams {
  int num_modes = 0;                    // K
  int rank = 0;                         // R
  double concentration = 1.0;           // alpha
  std::vector<Eigen::MatrixXd> logits;  // per mode: D_k x R
};

// log sociabilities per mode (D_k x R); row j is the embedding u^k_j.
struct EmbeddingTable {
  int num_modes = 0;
  int rank = 0;
  std::vector<Eigen::MatrixXd> log_weights;
};

struct BatchNormState {
  Eigen::VectorXd mean;       // eta, one per GP embedding coordinate (K*R)
  Eigen::VectorXd log_sigma;  // sigma stored in log domain
  double epsilon = 1e-5;
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// log(1 + e^x) without overflow.
inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

// omega_j = v_j * prod_{l<j} (1 - v_l), evaluated in the log domain.
inline std::vector<double> sticks_to_log_weights(const std::vector<double>& sticks) {
  if (sticks.empty())
    throw std::invalid_argument("embeddings: need at least one stick variable");
  std::vector<double> logw(sticks.size());
  double log_residual = 0.0;
  for (std::size_t j = 0; j < sticks.size(); ++j) {
    double v = sticks[j];
    if (!(v > 0.0) || !(v < 1.0))
      throw std::invalid_argument("embeddings: stick variables must lie in (0, 1)");
    logw[j] = std::log(v) + log_residual;
    log_residual += std::log1p(-v);
  }
  return logw;
}

inline std::vector<double> sticks_to_weights(const std::vector<double>& sticks) {
  auto logw = sticks_to_log_weights(sticks);
  for (double& w : logw) w = std::exp(w);
  return logw;
}

inline EmbeddingTable build_embedding_table(const StickParams& params) {
  EmbeddingTable table;
  table.num_modes = params.num_modes;
  table.rank = params.rank;
  table.log_weights.reserve(params.logits.size());
  for (const auto& theta : params.logits) {
    Eigen::MatrixXd logw(theta.rows(), theta.cols());
    for (Eigen::Index r = 0; r < theta.cols(); ++r) {
      double log_residual = 0.0;
      for (Eigen::Index j = 0; j < theta.rows(); ++j) {
        // log v = -softplus(-theta), log(1 - v) = -softplus(theta)
        logw(j, r) = -softplus(-theta(j, r)) + log_residual;
        log_residual -= softplus(theta(j, r));
      }
    }
    table.log_weights.push_back(std::move(logw));
  }
  return table;
}

// log w_i = logsumexp_r sum_k log omega^k_{r,i_k} - log R.
inline double edge_log_weight(const std::vector<std::int32_t>& key,
                              const EmbeddingTable& table) {
  const int rank = table.rank;
  Eigen::VectorXd per_component = Eigen::VectorXd::Zero(rank);
  for (int k = 0; k < table.num_modes; ++k)
    per_component += table.log_weights[k].row(key[k]).transpose();
  double peak = per_component.maxCoeff();
  double sum = 0.0;
  for (int r = 0; r < rank; ++r) sum += std::exp(per_component[r] - peak);
  return peak + std::log(sum) - std::log(static_cast<double>(rank));
}

// log Beta(v | 1, alpha) = log alpha + (alpha - 1) log(1 - v).
inline double beta_log_prior(double v, double alpha) {
  if (!(v > 0.0) || !(v < 1.0))
    throw std::invalid_argument("embeddings: Beta prior needs v in (0, 1)");
  if (!(alpha > 0.0))
    throw std::invalid_argument("embeddings: Beta prior needs alpha > 0");
  return std::log(alpha) + (alpha - 1.0) * std::log1p(-v);
}

// GP input for an interaction: concatenated per-node embeddings, K*R reals.
inline Eigen::VectorXd gp_input(const std::vector<std::int32_t>& key,
                                const EmbeddingTable& table) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(table.num_modes) * table.rank);
  for (int k = 0; k < table.num_modes; ++k)
    x.segment(static_cast<Eigen::Index>(k) * table.rank, table.rank) =
        table.log_weights[k].row(key[k]).transpose();
  return x;
}

inline Eigen::VectorXd batchnorm_apply(const Eigen::VectorXd& x,
                                       const BatchNormState& bn) {
  if (x.size() != bn.mean.size())
    throw std::invalid_argument("embeddings: batch-norm dimension mismatch");
  Eigen::VectorXd out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i)
    out[i] = (x[i] - bn.mean[i]) / (std::exp(bn.log_sigma[i]) + bn.epsilon);
  return out;
}

}  // namespace nesh::embeddings
