#pragma once

// Shared helpers for the test suites: sample statistics, rank correlation,
// quadrature oracles, and finite differences.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

namespace testutil {

struct Moments {
  double mean = 0.0;
  double var = 0.0;   // unbiased
  double se = 0.0;    // standard error of the mean
  std::size_t n = 0;
};

inline Moments moments(const std::vector<double>& xs) {
  Moments m;
  m.n = xs.size();
  if (m.n == 0) return m;
  m.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / m.n;
  double ss = 0.0;
  for (double x : xs) ss += (x - m.mean) * (x - m.mean);
  m.var = m.n > 1 ? ss / (m.n - 1) : 0.0;
  m.se = std::sqrt(m.var / m.n);
  return m;
}

inline double sample_cov(const std::vector<double>& xs, const std::vector<double>& ys) {
  double mx = moments(xs).mean, my = moments(ys).mean, s = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (xs[i] - mx) * (ys[i] - my);
  return s / (xs.size() - 1);
}

inline std::vector<double> ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
  std::vector<double> r(xs.size());
  for (std::size_t pos = 0; pos < idx.size();) {
    std::size_t end = pos;
    while (end + 1 < idx.size() && xs[idx[end + 1]] == xs[idx[pos]]) ++end;
    double avg = 0.5 * (pos + end) + 1.0;
    for (std::size_t i = pos; i <= end; ++i) r[idx[i]] = avg;
    pos = end + 1;
  }
  return r;
}

inline double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
  auto rx = ranks(xs), ry = ranks(ys);
  double mx = moments(rx).mean, my = moments(ry).mean;
  double num = 0.0, dx = 0.0, dy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  return num / std::sqrt(dx * dy);
}

// Composite Simpson on [a, b].
inline double simpson(const std::function<double(double)>& f, double a, double b,
                      int intervals = 2048) {
  if (intervals % 2) ++intervals;
  double h = (b - a) / intervals, s = f(a) + f(b);
  for (int i = 1; i < intervals; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// Gauss-Hermite nodes/weights for the physicists' weight e^{-x^2}, via the
// Jacobi matrix of the Hermite recurrence.
inline void gauss_hermite(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    double off = std::sqrt(i / 2.0);
    jacobi(i, i - 1) = off;
    jacobi(i - 1, i) = off;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
  const double mu0 = std::sqrt(M_PI);  // integral of e^{-x^2}
  nodes.resize(n);
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    nodes[i] = es.eigenvalues()(i);
    double v0 = es.eigenvectors()(0, i);
    weights[i] = mu0 * v0 * v0;
  }
}

// E[g(X)] for X ~ N(mean, var) by Gauss-Hermite.
inline double gauss_expectation(const std::function<double(double)>& g, double mean,
                                double var, int n = 160) {
  std::vector<double> x, w;
  gauss_hermite(n, x, w);
  double s = 0.0;
  const double scale = std::sqrt(2.0 * var);
  for (int i = 0; i < n; ++i) s += w[i] * g(mean + scale * x[i]);
  return s / std::sqrt(M_PI);
}

// Central finite differences of a scalar function of a flat parameter vector.
inline Eigen::VectorXd finite_difference(
    const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& theta,
    double step = 1e-4) {
  Eigen::VectorXd g(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd hi = theta, lo = theta;
    hi[i] += step;
    lo[i] -= step;
    g[i] = (f(hi) - f(lo)) / (2.0 * step);
  }
  return g;
}

inline double max_rel_err(const Eigen::VectorXd& got, const Eigen::VectorXd& want,
                          double abs_floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < got.size(); ++i) {
    double denom = std::max(std::abs(want[i]), abs_floor);
    worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
  }
  return worst;
}

}  // namespace testutil
