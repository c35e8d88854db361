#pragma once

// Sparse variational GP over f(x, t): the product squared-exponential kernel,
// the KL from the variational Gaussian to the inducing prior, marginal
// predictive moments, and reparameterized function-value draws.

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "nesh/common.hpp"

namespace nesh::gp {

// ARD lengthscales over the embedding coordinates plus one time lengthscale
// (the final entry); separate signal variances for the embedding and time
// factor kernels, stored in the log domain.
struct KernelParams {
  Eigen::VectorXd log_lengthscales;  // K*R + 1 entries, last one is time
  double log_variance1 = 0.0;
  double log_variance2 = 0.0;
  double jitter = 1e-6;

  double signal_variance() const { return std::exp(log_variance1 + log_variance2); }
};

// Variational state: inducing inputs Z, q(b) = N(mean, L L^T) with L stored
// as a raw matrix whose diagonal is kept in the log domain.
struct SvgpState {
  Eigen::MatrixXd inducing;  // h x d
  Eigen::VectorXd mean;      // h
  Eigen::MatrixXd chol_raw;  // h x h
  KernelParams kernel;

  Eigen::Index count() const { return inducing.rows(); }

  Eigen::MatrixXd chol_factor() const {
    Eigen::MatrixXd ell = Eigen::MatrixXd::Zero(chol_raw.rows(), chol_raw.cols());
    ell.triangularView<Eigen::StrictlyLower>() = chol_raw;
    ell.diagonal() = chol_raw.diagonal().array().exp();
    return ell;
  }
};

// kappa([x,t],[x',t']) = kappa1(x,x') * kappa2(t,t'), both squared
// exponential; jitter * signal variance is added to the diagonal when the two
// point sets are the same.
inline Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                     const KernelParams& params,
                                     bool same_points = false) {
  if (a.cols() != b.cols() || a.cols() != params.log_lengthscales.size())
    throw std::invalid_argument("gp: kernel dimension mismatch");
  const Eigen::ArrayXd len = params.log_lengthscales.array().exp();
  const double s = params.signal_variance();
  Eigen::MatrixXd k(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      double acc = 0.0;
      for (Eigen::Index c = 0; c < a.cols(); ++c) {
        double delta = (a(i, c) - b(j, c)) / len[c];
        acc += delta * delta;
      }
      k(i, j) = s * std::exp(-0.5 * acc);
    }
  if (same_points) {
    if (a.rows() != b.rows())
      throw std::invalid_argument("gp: same-point kernel needs equal row counts");
    k.diagonal().array() += params.jitter * s;
  }
  return k;
}

inline double kernel_diag_value(const KernelParams& params) {
  return params.signal_variance() * (1.0 + params.jitter);
}

// Cholesky with an escalating relative jitter ladder; throws NumericalError
// when even the largest level fails.
inline Eigen::LLT<Eigen::MatrixXd> factorize_spd(const Eigen::MatrixXd& m) {
  double scale = m.diagonal().array().abs().mean();
  Eigen::LLT<Eigen::MatrixXd> llt;
  for (double level : {0.0, 1e-6, 1e-4, 1e-2}) {
    Eigen::MatrixXd attempt = m;
    attempt.diagonal().array() += level * scale;
    llt.compute(attempt);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw NumericalError(
      "gp: Cholesky failed after jitter ladder 1e-6, 1e-4, 1e-2 (relative)");
}

// KL(N(mu, L L^T) || N(0, K)) via triangular solves against chol(K).
inline double kl_to_prior(const Eigen::VectorXd& mu, const Eigen::MatrixXd& ell,
                          const Eigen::MatrixXd& kzz) {
  const auto llt = factorize_spd(kzz);
  const Eigen::MatrixXd c = llt.matrixL();
  const Eigen::Index h = mu.size();
  Eigen::MatrixXd whitened = c.triangularView<Eigen::Lower>().solve(ell);
  double trace = whitened.squaredNorm();
  Eigen::VectorXd wmu = c.triangularView<Eigen::Lower>().solve(mu);
  double quad = wmu.squaredNorm();
  double logdet_k = 2.0 * c.diagonal().array().log().sum();
  double logdet_q = 2.0 * ell.diagonal().array().log().sum();
  return 0.5 * (trace + quad - static_cast<double>(h) + logdet_k - logdet_q);
}

struct Marginal {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  long clamped = 0;  // negative predictive variances clipped to zero
};

// Predictive moments of q(f) = ∫ p(f|b) q(b) db at the query points.
inline Marginal q_marginal(const Eigen::MatrixXd& queries, const SvgpState& state) {
  if (queries.rows() == 0) throw std::invalid_argument("gp: no query points");
  const Eigen::MatrixXd kzz =
      kernel_matrix(state.inducing, state.inducing, state.kernel, true);
  const Eigen::MatrixXd kxz = kernel_matrix(queries, state.inducing, state.kernel);
  const auto llt = factorize_spd(kzz);
  const Eigen::MatrixXd cross = llt.solve(kxz.transpose());  // K_zz^{-1} K_zx
  const Eigen::MatrixXd ell = state.chol_factor();

  Marginal out;
  out.mean = cross.transpose() * state.mean;
  Eigen::VectorXd nystrom = (cross.array() * kxz.transpose().array()).colwise().sum();
  Eigen::MatrixXd al = cross.transpose() * ell;
  Eigen::VectorXd qvar = al.array().square().rowwise().sum();
  out.var = Eigen::VectorXd::Constant(queries.rows(), kernel_diag_value(state.kernel)) -
            nystrom + qvar;
  for (Eigen::Index i = 0; i < out.var.size(); ++i)
    if (out.var[i] < 0.0) {
      out.var[i] = 0.0;
      ++out.clamped;
    }
  return out;
}

// f = mean + sqrt(var) .* noise; differentiable in the moments at fixed noise.
inline Eigen::VectorXd sample_f(const Eigen::VectorXd& mean, const Eigen::VectorXd& var,
                                const Eigen::VectorXd& noise) {
  if (mean.size() != var.size() || mean.size() != noise.size())
    throw std::invalid_argument("gp: moment/noise length mismatch");
  return mean.array() + var.array().max(0.0).sqrt() * noise.array();
}

}  // namespace nesh::gp
