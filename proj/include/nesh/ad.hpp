#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices. A Tape
// owns the expression graph for one evaluation: nodes hold values, ops push
// closures that accumulate adjoints, and backward() walks the graph once.
// The op set is exactly what the training objective needs; every op's
// derivative is covered by finite-difference tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "nesh/common.hpp"

namespace nesh::ad {

using Mat = Eigen::MatrixXd;

class Tape {
 public:
  // Leaf node; returns its id. Adjoints of leaves are read after backward().
  int var(Mat value) {
    nodes_.push_back({std::move(value), {}, {}});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Mat& val(int id) const { return nodes_[id].value; }

  double scalar(int id) const {
    const Mat& v = nodes_[id].value;
    if (v.size() != 1) throw std::invalid_argument("ad: node is not a scalar");
    return v(0, 0);
  }

  Mat& adj(int id) {
    Node& n = nodes_[id];
    if (n.adjoint.size() == 0) n.adjoint = Mat::Zero(n.value.rows(), n.value.cols());
    return n.adjoint;
  }

  void backward(int output) {
    if (nodes_[output].value.size() != 1)
      throw std::invalid_argument("ad: backward needs a scalar output");
    adj(output)(0, 0) = 1.0;
    for (int id = output; id >= 0; --id)
      if (nodes_[id].backward && nodes_[id].adjoint.size() != 0)
        nodes_[id].backward(*this);
  }

  std::size_t size() const { return nodes_.size(); }
  long clamp_events() const { return clamp_events_; }

  // --- elementwise and linear ops -----------------------------------------

  int add(int a, int b) {
    int out = var(val(a) + val(b));
    nodes_[out].backward = [a, b, out](Tape& t) {
      t.adj(a) += t.adj(out);
      t.adj(b) += t.adj(out);
    };
    return out;
  }

  int sub(int a, int b) {
    int out = var(val(a) - val(b));
    nodes_[out].backward = [a, b, out](Tape& t) {
      t.adj(a) += t.adj(out);
      t.adj(b) -= t.adj(out);
    };
    return out;
  }

  // scale * x + shift, elementwise
  int affine(int a, double scale, double shift = 0.0) {
    int out = var((val(a).array() * scale + shift).matrix());
    nodes_[out].backward = [a, out, scale](Tape& t) {
      t.adj(a) += scale * t.adj(out);
    };
    return out;
  }

  int hadamard(int a, int b) {
    int out = var(val(a).cwiseProduct(val(b)));
    nodes_[out].backward = [a, b, out](Tape& t) {
      t.adj(a) += t.adj(out).cwiseProduct(t.val(b));
      t.adj(b) += t.adj(out).cwiseProduct(t.val(a));
    };
    return out;
  }

  int matmul(int a, int b) {
    int out = var(val(a) * val(b));
    nodes_[out].backward = [a, b, out](Tape& t) {
      t.adj(a) += t.adj(out) * t.val(b).transpose();
      t.adj(b) += t.val(a).transpose() * t.adj(out);
    };
    return out;
  }

  int transpose(int a) {
    int out = var(val(a).transpose());
    nodes_[out].backward = [a, out](Tape& t) { t.adj(a) += t.adj(out).transpose(); };
    return out;
  }

  int sum(int a) {
    Mat s(1, 1);
    s(0, 0) = val(a).sum();
    int out = var(std::move(s));
    nodes_[out].backward = [a, out](Tape& t) {
      t.adj(a).array() += t.adj(out)(0, 0);
    };
    return out;
  }

  int rowsum(int a) {
    int out = var(val(a).rowwise().sum());
    nodes_[out].backward = [a, out](Tape& t) {
      t.adj(a).colwise() += t.adj(out).col(0);
    };
    return out;
  }

  int take_diag(int a) {
    int out = var(val(a).diagonal());
    nodes_[out].backward = [a, out](Tape& t) {
      t.adj(a).diagonal() += t.adj(out).col(0);
    };
    return out;
  }

  int exp(int a) {
    int out = var(val(a).array().exp().matrix());
    nodes_[out].backward = [a, out](Tape& t) {
      t.adj(a) += t.adj(out).cwiseProduct(t.val(out));
    };
    return out;
  }

  // log(x + eps)
  int log_guard(int a, double eps) {
    int out = var((val(a).array() + eps).log().matrix());
    nodes_[out].backward = [a, out, eps](Tape& t) {
      t.adj(a).array() += t.adj(out).array() / (t.val(a).array() + eps);
    };
    return out;
  }

  int square(int a) {
    int out = var(val(a).cwiseProduct(val(a)));
    nodes_[out].backward = [a, out](Tape& t) {
      t.adj(a) += 2.0 * t.adj(out).cwiseProduct(t.val(a));
    };
    return out;
  }

  // sqrt(max(x, 0)); derivative defined as 0 where x <= 0
  int sqrt_floor0(int a) {
    int out = var(val(a).cwiseMax(0.0).cwiseSqrt());
    nodes_[out].backward = [a, out](Tape& t) {
      const Mat& x = t.val(a);
      const Mat& v = t.val(out);
      Mat& ga = t.adj(a);
      const Mat& go = t.adj(out);
      for (Eigen::Index i = 0; i < x.size(); ++i)
        if (x.data()[i] > 0.0) ga.data()[i] += go.data()[i] / (2.0 * v.data()[i]);
    };
    return out;
  }

  int softplus(int a) {
    Mat v = val(a);
    for (Eigen::Index i = 0; i < v.size(); ++i)
      v.data()[i] = std::max(v.data()[i], 0.0) + std::log1p(std::exp(-std::abs(v.data()[i])));
    int out = var(std::move(v));
    nodes_[out].backward = [a, out](Tape& t) {
      t.adj(a).array() +=
          t.adj(out).array() / (1.0 + (-t.val(a).array()).exp());
    };
    return out;
  }

  // max(x, 0) with zero derivative on the clamped entries
  int clamp_min0(int a) {
    const Mat& x = val(a);
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (x.data()[i] < 0.0) ++clamp_events_;
    int out = var(x.cwiseMax(0.0));
    nodes_[out].backward = [a, out](Tape& t) {
      const Mat& xv = t.val(a);
      Mat& ga = t.adj(a);
      const Mat& go = t.adj(out);
      for (Eigen::Index i = 0; i < xv.size(); ++i)
        if (xv.data()[i] > 0.0) ga.data()[i] += go.data()[i];
    };
    return out;
  }

  // out(j, c) = sum_{l < j} in(l, c)
  int exclusive_prefix_rows(int a) {
    const Mat& x = val(a);
    Mat v = Mat::Zero(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      for (Eigen::Index j = 1; j < x.rows(); ++j) v(j, c) = v(j - 1, c) + x(j - 1, c);
    int out = var(std::move(v));
    nodes_[out].backward = [a, out](Tape& t) {
      const Mat& go = t.adj(out);
      Mat& ga = t.adj(a);
      for (Eigen::Index c = 0; c < go.cols(); ++c) {
        double suffix = 0.0;
        for (Eigen::Index j = go.rows() - 1; j >= 1; --j) {
          suffix += go(j, c);
          ga(j - 1, c) += suffix;
        }
      }
    };
    return out;
  }

  // --- shape ops ------------------------------------------------------------

  int gather_rows(int a, std::vector<int> idx) {
    const Mat& x = val(a);
    Mat v(static_cast<Eigen::Index>(idx.size()), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) v.row(i) = x.row(idx[i]);
    int out = var(std::move(v));
    nodes_[out].backward = [a, out, idx = std::move(idx)](Tape& t) {
      Mat& ga = t.adj(a);
      const Mat& go = t.adj(out);
      for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += go.row(i);
    };
    return out;
  }

  // each input row repeated `times` consecutive times
  int repeat_rows(int a, int times) {
    const Mat& x = val(a);
    Mat v(x.rows() * times, x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (int q = 0; q < times; ++q) v.row(i * times + q) = x.row(i);
    int out = var(std::move(v));
    nodes_[out].backward = [a, out, times](Tape& t) {
      Mat& ga = t.adj(a);
      const Mat& go = t.adj(out);
      for (Eigen::Index i = 0; i < ga.rows(); ++i)
        for (int q = 0; q < times; ++q) ga.row(i) += go.row(i * times + q);
    };
    return out;
  }

  int hstack(const std::vector<int>& parts) {
    Eigen::Index rows = val(parts.front()).rows(), cols = 0;
    for (int p : parts) cols += val(p).cols();
    Mat v(rows, cols);
    Eigen::Index at = 0;
    for (int p : parts) {
      v.middleCols(at, val(p).cols()) = val(p);
      at += val(p).cols();
    }
    int out = var(std::move(v));
    nodes_[out].backward = [parts, out](Tape& t) {
      Eigen::Index at = 0;
      for (int p : parts) {
        Eigen::Index w = t.val(p).cols();
        t.adj(p) += t.adj(out).middleCols(at, w);
        at += w;
      }
    };
    return out;
  }

  int append_const_col(int a, const Eigen::VectorXd& col) {
    const Mat& x = val(a);
    Mat v(x.rows(), x.cols() + 1);
    v.leftCols(x.cols()) = x;
    v.col(x.cols()) = col;
    int out = var(std::move(v));
    nodes_[out].backward = [a, out](Tape& t) {
      t.adj(a) += t.adj(out).leftCols(t.val(a).cols());
    };
    return out;
  }

  // n x 1 -> n x count
  int bcast_cols(int a, int count) {
    int out = var(val(a).replicate(1, count));
    nodes_[out].backward = [a, out](Tape& t) {
      t.adj(a).col(0) += t.adj(out).rowwise().sum();
    };
    return out;
  }

  int logsumexp_rows(int a) {
    const Mat& x = val(a);
    Mat v(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      double peak = x.row(i).maxCoeff();
      v(i, 0) = peak + std::log((x.row(i).array() - peak).exp().sum());
    }
    int out = var(std::move(v));
    nodes_[out].backward = [a, out](Tape& t) {
      const Mat& x = t.val(a);
      const Mat& v = t.val(out);
      const Mat& go = t.adj(out);
      Mat& ga = t.adj(a);
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        ga.row(i) += go(i, 0) * (x.row(i).array() - v(i, 0)).exp().matrix();
    };
    return out;
  }

  // --- model-specific fused ops ----------------------------------------------

  // (x - eta) / (exp(log_sigma) + eps), columnwise; eta and log_sigma are d x 1
  int batchnorm(int x, int eta, int log_sigma, double eps) {
    const Mat& xv = val(x);
    Eigen::ArrayXd denom = val(log_sigma).col(0).array().exp() + eps;
    Mat v = (xv.rowwise() - val(eta).col(0).transpose()).array().rowwise() /
            denom.transpose();
    int out = var(std::move(v));
    nodes_[out].backward = [x, eta, log_sigma, out, eps](Tape& t) {
      const Mat& go = t.adj(out);
      Eigen::ArrayXd sig = t.val(log_sigma).col(0).array().exp();
      Eigen::ArrayXd denom = sig + eps;
      t.adj(x) += (go.array().rowwise() / denom.transpose()).matrix();
      t.adj(eta).col(0) -= (go.array().rowwise() / denom.transpose()).colwise().sum().matrix().transpose();
      // d/dlog_sigma = -(x - eta)/denom^2 * sigma = -out * sigma / denom
      Eigen::ArrayXd factor = sig / denom;
      t.adj(log_sigma).col(0) -=
          ((go.cwiseProduct(t.val(out))).colwise().sum().array().transpose() * factor)
              .matrix();
    };
    return out;
  }

  // Lower-triangular factor with positive diagonal: strict lower part copied,
  // diagonal exponentiated.
  int tril_logdiag(int raw) {
    const Mat& x = val(raw);
    Mat v = Mat::Zero(x.rows(), x.cols());
    v.triangularView<Eigen::StrictlyLower>() = x;
    v.diagonal() = x.diagonal().array().exp();
    int out = var(std::move(v));
    nodes_[out].backward = [raw, out](Tape& t) {
      const Mat& go = t.adj(out);
      Mat& ga = t.adj(raw);
      for (Eigen::Index j = 0; j < go.cols(); ++j) {
        ga(j, j) += go(j, j) * t.val(out)(j, j);
        for (Eigen::Index i = j + 1; i < go.rows(); ++i) ga(i, j) += go(i, j);
      }
    };
    return out;
  }

  // Product squared-exponential kernel over inputs whose last coordinate is
  // time: entry (a,b) = s * exp(-0.5 sum_d (p_ad - q_bd)^2 / len_d^2) with
  // s = exp(log_var1 + log_var2); jitter * s is added to the diagonal when
  // the two point sets are the same node.
  int se_kernel(int p, int q, int log_len, int log_var1, int log_var2, double jitter,
                bool same_points) {
    const Mat& pv = val(p);
    const Mat& qv = val(q);
    const Eigen::ArrayXd len = val(log_len).col(0).array().exp();
    const double s = std::exp(scalar(log_var1) + scalar(log_var2));
    if (pv.cols() != qv.cols() || pv.cols() != len.size())
      throw std::invalid_argument("ad: kernel dimension mismatch");
    if (same_points && pv.rows() != qv.rows())
      throw std::invalid_argument("ad: same-point kernel needs equal row counts");

    const Eigen::Index n = pv.rows(), m = qv.rows(), d = pv.cols();
    Mat core(n, m);
    for (Eigen::Index a = 0; a < n; ++a)
      for (Eigen::Index b = 0; b < m; ++b) {
        double acc = 0.0;
        for (Eigen::Index c = 0; c < d; ++c) {
          double delta = (pv(a, c) - qv(b, c)) / len[c];
          acc += delta * delta;
        }
        core(a, b) = s * std::exp(-0.5 * acc);
      }
    Mat v = core;
    if (same_points) v.diagonal().array() += jitter * s;
    int out = var(std::move(v));

    nodes_[out].backward = [p, q, log_len, log_var1, log_var2, out,
                            core = std::move(core)](Tape& t) {
      const Mat& pv = t.val(p);
      const Mat& qv = t.val(q);
      const Eigen::ArrayXd len2 = t.val(log_len).col(0).array().exp().square();
      const Mat& go = t.adj(out);

      double var_grad = (go.array() * t.val(out).array()).sum();
      t.adj(log_var1)(0, 0) += var_grad;
      t.adj(log_var2)(0, 0) += var_grad;

      Mat& gp = t.adj(p);
      Mat& gq = t.adj(q);
      Mat& glen = t.adj(log_len);
      const Eigen::Index n = pv.rows(), m = qv.rows(), d = pv.cols();
      for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index b = 0; b < m; ++b) {
          double w = go(a, b) * core(a, b);
          if (w == 0.0) continue;
          for (Eigen::Index c = 0; c < d; ++c) {
            double delta = pv(a, c) - qv(b, c);
            double scaled = delta / len2[c];
            gp(a, c) -= w * scaled;
            gq(b, c) += w * scaled;
            glen(c, 0) += w * delta * scaled;  // d/dlog_len = w * delta^2 / len^2
          }
        }
    };
    return out;
  }

  // diag of the same-points kernel: s * (1 + jitter) per query row
  int kernel_diag(Eigen::Index n_rows, int log_var1, int log_var2, double jitter) {
    const double s = std::exp(scalar(log_var1) + scalar(log_var2));
    int out = var(Mat::Constant(n_rows, 1, s * (1.0 + jitter)));
    nodes_[out].backward = [log_var1, log_var2, out](Tape& t) {
      double g = (t.adj(out).array() * t.val(out).array()).sum();
      t.adj(log_var1)(0, 0) += g;
      t.adj(log_var2)(0, 0) += g;
    };
    return out;
  }

  // --- symmetric positive definite solves -------------------------------------

  // X = (A + ladder jitter I)^{ -1 } B via Cholesky; the factorization is
  // cached per node and shared with spd_logdet.
  int spd_solve(int a, int b) {
    auto factor = factorize(a);
    int out = var(factor->solve(val(b)));
    nodes_[out].backward = [a, b, out, factor](Tape& t) {
      Mat gb = factor->solve(t.adj(out));
      t.adj(b) += gb;
      t.adj(a) -= gb * t.val(out).transpose();
    };
    return out;
  }

  int spd_logdet(int a) {
    auto factor = factorize(a);
    Mat v(1, 1);
    v(0, 0) = 2.0 * factor->matrixLLT().diagonal().array().log().sum();
    int out = var(std::move(v));
    nodes_[out].backward = [a, out, factor](Tape& t) {
      Eigen::Index n = t.val(a).rows();
      t.adj(a) += t.adj(out)(0, 0) *
                  factor->solve(Mat::Identity(n, n));
    };
    return out;
  }

 private:
  struct Node {
    Mat value;
    Mat adjoint;
    std::function<void(Tape&)> backward;
  };

  // Escalating relative jitter on factorization failure.
  std::shared_ptr<Eigen::LLT<Mat>> factorize(int a) {
    auto it = factor_cache_.find(a);
    if (it != factor_cache_.end()) return it->second;
    const Mat& m = val(a);
    if (m.rows() != m.cols())
      throw std::invalid_argument("ad: SPD solve needs a square matrix");
    double scale = m.diagonal().array().abs().mean();
    auto factor = std::make_shared<Eigen::LLT<Mat>>();
    for (double level : {0.0, 1e-6, 1e-4, 1e-2}) {
      Mat attempt = m;
      attempt.diagonal().array() += level * scale;
      factor->compute(attempt);
      if (factor->info() == Eigen::Success) {
        factor_cache_.emplace(a, factor);
        return factor;
      }
    }
    throw NumericalError(
        "ad: Cholesky failed after jitter ladder 1e-6, 1e-4, 1e-2 (relative)");
  }

  std::vector<Node> nodes_;
  std::unordered_map<int, std::shared_ptr<Eigen::LLT<Mat>>> factor_cache_;
  long clamp_events_ = 0;
};

}  // namespace nesh::ad
