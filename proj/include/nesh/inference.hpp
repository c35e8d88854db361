#pragma once

// Stochastic ELBO assembly and training. The objective per minibatch of B
// interactions (with all their events) is
//
//   -KL(q(b) || p(b)) + (N/B) sum log w_i + sum log Beta(v | 1, alpha)
//   - (N/B) (T/Q) sum_q E_q[f^2]  + (N/B) (1/S) sum_events sum_s log(f_s^2 + eps)
//
// with the embedding-prior and edge-weight terms swapped for a standard
// Gaussian prior in the ablation mode. Gradients are exact reverse-mode
// derivatives of this estimator at fixed noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nesh/ad.hpp"
#include "nesh/common.hpp"
#include "nesh/data.hpp"
#include "nesh/embeddings.hpp"
#include "nesh/gp.hpp"

namespace nesh::inference {

enum class PriorMode { kNesh, kGaussian };

inline std::string to_string(PriorMode mode) {
  return mode == PriorMode::kNesh ? "nesh" : "gaussian";
}

inline PriorMode prior_mode_from_string(const std::string& name) {
  if (name == "nesh") return PriorMode::kNesh;
  if (name == "gaussian") return PriorMode::kGaussian;
  throw std::invalid_argument("inference: unknown prior mode '" + name + "'");
}

struct TrainConfig {
  int rank = 5;                   // R
  double alpha = 1.0;
  int inducing_count = 100;       // h
  int batch_size = 100;           // B
  int epochs = 400;
  double learning_rate = 1e-3;
  int event_samples = 8;          // S, Monte-Carlo draws for the event term
  int time_samples = 20;          // Q, Uniform(0,T) draws for the integral term
  std::uint64_t seed = 1;
  PriorMode prior = PriorMode::kNesh;
  double jitter = 1e-6;
  double eps_f = 1e-10;           // guard inside log(f^2 + eps)
  double bn_eps = 1e-5;

  void validate() const {
    if (rank < 1 || inducing_count < 1 || batch_size < 1 || epochs < 0)
      throw std::invalid_argument("inference: invalid size in train config");
    if (event_samples < 1 || time_samples < 1)
      throw std::invalid_argument("inference: sample counts must be >= 1");
    if (!(alpha > 0.0)) throw std::invalid_argument("inference: alpha must be > 0");
    if (!(learning_rate > 0.0))
      throw std::invalid_argument("inference: learning rate must be > 0");
  }
};

// Everything the objective differentiates: per-mode embedding parameters
// (stick logits, or free embeddings in the Gaussian ablation), the sparse GP
// state and kernel, and the batch-norm parameters.
struct ModelState {
  int num_modes = 0;
  int rank = 0;
  double alpha = 1.0;
  PriorMode prior = PriorMode::kNesh;
  double horizon = 0.0;  // T
  double eps_f = 1e-10;
  std::vector<Eigen::MatrixXd> embed_params;  // per mode: D_k x R
  gp::SvgpState svgp;
  embeddings::BatchNormState bn;

  int input_dim() const { return num_modes * rank; }

  // Per-mode log-sociability tables (identity in Gaussian mode, where the
  // parameters are the embeddings themselves).
  embeddings::EmbeddingTable embedding_table() const {
    if (prior == PriorMode::kGaussian) {
      embeddings::EmbeddingTable t;
      t.num_modes = num_modes;
      t.rank = rank;
      t.log_weights = embed_params;
      return t;
    }
    embeddings::StickParams p;
    p.num_modes = num_modes;
    p.rank = rank;
    p.concentration = alpha;
    p.logits = embed_params;
    return embeddings::build_embedding_table(p);
  }
};

// ---------------------------------------------------------------------------
// Flat parameter vector (fixed block order, column-major within blocks):
// embeddings per mode, kernel log lengthscales, the two log variances,
// inducing inputs, variational mean, variational factor raw matrix,
// batch-norm means, batch-norm log sigmas.

inline Eigen::Index param_count(const ModelState& s) {
  Eigen::Index n = 0;
  for (const auto& m : s.embed_params) n += m.size();
  n += s.svgp.kernel.log_lengthscales.size() + 2;
  n += s.svgp.inducing.size() + s.svgp.mean.size() + s.svgp.chol_raw.size();
  n += s.bn.mean.size() + s.bn.log_sigma.size();
  return n;
}

inline Eigen::VectorXd pack_params(const ModelState& s) {
  Eigen::VectorXd theta(param_count(s));
  Eigen::Index at = 0;
  auto put = [&](const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) theta[at++] = m.data()[i];
  };
  for (const auto& m : s.embed_params) put(m);
  put(s.svgp.kernel.log_lengthscales);
  theta[at++] = s.svgp.kernel.log_variance1;
  theta[at++] = s.svgp.kernel.log_variance2;
  put(s.svgp.inducing);
  put(s.svgp.mean);
  put(s.svgp.chol_raw);
  put(s.bn.mean);
  put(s.bn.log_sigma);
  return theta;
}

inline void unpack_params(ModelState& s, const Eigen::VectorXd& theta) {
  if (theta.size() != param_count(s))
    throw std::invalid_argument("inference: parameter vector size mismatch");
  Eigen::Index at = 0;
  auto take = [&](Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = theta[at++];
  };
  auto take_vec = [&](Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = theta[at++];
  };
  for (auto& m : s.embed_params) take(m);
  take_vec(s.svgp.kernel.log_lengthscales);
  s.svgp.kernel.log_variance1 = theta[at++];
  s.svgp.kernel.log_variance2 = theta[at++];
  take(s.svgp.inducing);
  take_vec(s.svgp.mean);
  take(s.svgp.chol_raw);
  take_vec(s.bn.mean);
  take_vec(s.bn.log_sigma);
}

// ---------------------------------------------------------------------------
// Batches and common random numbers.

struct Batch {
  std::vector<std::vector<std::int32_t>> keys;      // B interactions
  std::vector<std::pair<int, double>> events;       // (position in batch, time)

  int size() const { return static_cast<int>(keys.size()); }
  int event_count() const { return static_cast<int>(events.size()); }
};

inline Batch make_batch(const data::EventDataset& ds, const std::vector<int>& indices) {
  Batch b;
  for (std::size_t pos = 0; pos < indices.size(); ++pos) {
    const auto& seq = ds.sequences[indices[pos]];
    b.keys.push_back(seq.key);
    for (double t : seq.times) b.events.push_back({static_cast<int>(pos), t});
  }
  return b;
}

inline Batch full_batch(const data::EventDataset& ds) {
  std::vector<int> all(ds.sequences.size());
  std::iota(all.begin(), all.end(), 0);
  return make_batch(ds, all);
}

// The random draws an estimate/gradient pair shares: Uniform(0,T) times for
// the integral term and standard-normal noise for the event term.
struct ElboDraws {
  int time_samples = 0;           // Q
  int event_samples = 0;          // S
  Eigen::VectorXd times;          // B*Q, interaction-major
  Eigen::MatrixXd noise;          // E x S
};

inline ElboDraws make_draws(const Batch& batch, int time_samples, int event_samples,
                            double horizon, std::mt19937_64& rng) {
  ElboDraws d;
  d.time_samples = time_samples;
  d.event_samples = event_samples;
  std::uniform_real_distribution<double> unif(0.0, horizon);
  d.times.resize(static_cast<Eigen::Index>(batch.size()) * time_samples);
  for (Eigen::Index i = 0; i < d.times.size(); ++i) d.times[i] = unif(rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  d.noise.resize(batch.event_count(), event_samples);
  for (Eigen::Index i = 0; i < d.noise.size(); ++i) d.noise.data()[i] = normal(rng);
  return d;
}

struct ElboTerms {
  double kl = 0.0;        // KL(q(b) || p(b)), enters negated
  double edge = 0.0;      // (N/B) sum log w_i, or 0 in Gaussian mode
  double prior = 0.0;     // Beta stick prior, or Gaussian embedding prior
  double integral = 0.0;  // -(N/B)(T/Q) sum E_q[f^2]
  double event = 0.0;     // (N/B)(1/S) sum log(f^2 + eps)

  double total() const { return -kl + edge + prior + integral + event; }
};

// ---------------------------------------------------------------------------
// Value-path terms. These mirror the tape exactly and exist so each term can
// be computed and tested in isolation.

namespace detail {

// B x (K*R) matrix of concatenated per-node embeddings for the batch keys.
inline Eigen::MatrixXd raw_batch_inputs(const ModelState& s,
                                        const embeddings::EmbeddingTable& table,
                                        const std::vector<std::vector<std::int32_t>>& keys) {
  Eigen::MatrixXd x(keys.size(), s.input_dim());
  for (std::size_t b = 0; b < keys.size(); ++b)
    x.row(b) = embeddings::gp_input(keys[b], table).transpose();
  return x;
}

inline Eigen::MatrixXd normalize_inputs(const ModelState& s, const Eigen::MatrixXd& x) {
  Eigen::ArrayXd denom = s.bn.log_sigma.array().exp() + s.bn.epsilon;
  return (x.rowwise() - s.bn.mean.transpose()).array().rowwise() / denom.transpose();
}

inline Eigen::MatrixXd with_time_column(const Eigen::MatrixXd& x,
                                        const Eigen::VectorXd& times) {
  Eigen::MatrixXd out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = x;
  out.col(x.cols()) = times;
  return out;
}

}  // namespace detail

// -(T/Q) sum over the batch's Uniform(0,T) draws of E_q[f^2] = m^2 + v,
// unscaled by N/B.
inline double integral_term(const ModelState& s,
                            const std::vector<std::vector<std::int32_t>>& keys,
                            const ElboDraws& draws) {
  if (keys.empty()) return 0.0;
  auto table = s.embedding_table();
  Eigen::MatrixXd xbn = detail::normalize_inputs(s, detail::raw_batch_inputs(s, table, keys));
  Eigen::MatrixXd rep(xbn.rows() * draws.time_samples, xbn.cols());
  for (Eigen::Index b = 0; b < xbn.rows(); ++b)
    for (int q = 0; q < draws.time_samples; ++q)
      rep.row(b * draws.time_samples + q) = xbn.row(b);
  auto marg = gp::q_marginal(detail::with_time_column(rep, draws.times), s.svgp);
  double sum = (marg.mean.array().square() + marg.var.array()).sum();
  return -s.horizon / draws.time_samples * sum;
}

inline double integral_term(const ModelState& s,
                            const std::vector<std::vector<std::int32_t>>& keys,
                            int time_samples, std::mt19937_64& rng) {
  Batch b;
  b.keys = keys;
  auto draws = make_draws(b, time_samples, 1, s.horizon, rng);
  return integral_term(s, keys, draws);
}

// sum over events of (1/S) sum_s log(f_s^2 + eps_f) at fixed noise, unscaled.
inline double event_term(const ModelState& s, const Batch& batch,
                         const ElboDraws& draws) {
  if (batch.events.empty()) return 0.0;
  auto table = s.embedding_table();
  Eigen::MatrixXd xbn =
      detail::normalize_inputs(s, detail::raw_batch_inputs(s, table, batch.keys));
  Eigen::MatrixXd rows(batch.event_count(), xbn.cols());
  Eigen::VectorXd times(batch.event_count());
  for (int e = 0; e < batch.event_count(); ++e) {
    rows.row(e) = xbn.row(batch.events[e].first);
    times[e] = batch.events[e].second;
  }
  auto marg = gp::q_marginal(detail::with_time_column(rows, times), s.svgp);
  double total = 0.0;
  for (int e = 0; e < batch.event_count(); ++e) {
    double sd = std::sqrt(std::max(marg.var[e], 0.0));
    for (int j = 0; j < draws.event_samples; ++j) {
      double f = marg.mean[e] + sd * draws.noise(e, j);
      total += std::log(f * f + s.eps_f);
    }
  }
  return total / draws.event_samples;
}

// sum over all (mode, node, component) of log Beta(v | 1, alpha), with
// v = logistic(logit); log(1 - v) = -softplus(logit).
inline double stick_prior_total(const ModelState& s) {
  double total = 0.0;
  for (const auto& theta : s.embed_params) {
    total += static_cast<double>(theta.size()) * std::log(s.alpha);
    for (Eigen::Index i = 0; i < theta.size(); ++i)
      total -= (s.alpha - 1.0) * embeddings::softplus(theta.data()[i]);
  }
  return total;
}

// sum of log N(u | 0, 1) over all embedding entries (ablation prior).
inline double gaussian_prior_total(const ModelState& s) {
  double total = 0.0;
  for (const auto& u : s.embed_params)
    total += -0.5 * u.squaredNorm() -
             0.5 * static_cast<double>(u.size()) * std::log(2.0 * M_PI);
  return total;
}

inline ElboTerms elbo_terms(const ModelState& s, const Batch& batch,
                            const ElboDraws& draws, std::int64_t total_sequences) {
  ElboTerms t;
  const double scale =
      batch.size() > 0 ? static_cast<double>(total_sequences) / batch.size() : 0.0;
  auto kzz = gp::kernel_matrix(s.svgp.inducing, s.svgp.inducing, s.svgp.kernel, true);
  t.kl = gp::kl_to_prior(s.svgp.mean, s.svgp.chol_factor(), kzz);
  if (s.prior == PriorMode::kNesh) {
    auto table = s.embedding_table();
    double edge_sum = 0.0;
    for (const auto& key : batch.keys)
      edge_sum += embeddings::edge_log_weight(key, table);
    t.edge = scale * edge_sum;
    t.prior = stick_prior_total(s);
  } else {
    t.edge = 0.0;
    t.prior = gaussian_prior_total(s);
  }
  t.integral = scale * integral_term(s, batch.keys, draws);
  t.event = scale * event_term(s, batch, draws);
  return t;
}

inline double elbo_estimate(const ModelState& s, const Batch& batch,
                            const ElboDraws& draws, std::int64_t total_sequences) {
  return elbo_terms(s, batch, draws, total_sequences).total();
}

// ---------------------------------------------------------------------------
// Tape path: the same estimator as one differentiable graph.

struct ElboResult {
  double value = 0.0;
  ElboTerms terms;
  Eigen::VectorXd gradient;  // pack_params order
  long clamped = 0;          // negative predictive variances hit by the clamp
};

inline ElboResult elbo_gradient(const ModelState& s, const Batch& batch,
                                const ElboDraws& draws, std::int64_t total_sequences) {
  const int num_modes = s.num_modes;
  const double scale =
      batch.size() > 0 ? static_cast<double>(total_sequences) / batch.size() : 0.0;
  ad::Tape t;

  std::vector<int> embed_leaves;
  for (const auto& m : s.embed_params) embed_leaves.push_back(t.var(m));
  int loglen = t.var(s.svgp.kernel.log_lengthscales);
  int lv1 = t.var(Eigen::MatrixXd::Constant(1, 1, s.svgp.kernel.log_variance1));
  int lv2 = t.var(Eigen::MatrixXd::Constant(1, 1, s.svgp.kernel.log_variance2));
  int z = t.var(s.svgp.inducing);
  int mu = t.var(s.svgp.mean);
  int raw = t.var(s.svgp.chol_raw);
  int bn_eta = t.var(s.bn.mean);
  int bn_logsig = t.var(s.bn.log_sigma);
  const double jitter = s.svgp.kernel.jitter;
  const Eigen::Index h = s.svgp.count();

  // KL(q(b) || p(b))
  int kzz = t.se_kernel(z, z, loglen, lv1, lv2, jitter, true);
  int ell = t.tril_logdiag(raw);
  int trace_term = t.sum(t.hadamard(t.spd_solve(kzz, ell), ell));
  int quad_term = t.sum(t.hadamard(t.spd_solve(kzz, mu), mu));
  int logdet_q = t.affine(t.sum(t.take_diag(raw)), 2.0);
  int kl = t.affine(
      t.sub(t.add(t.add(trace_term, quad_term), t.spd_logdet(kzz)), logdet_q), 0.5,
      -0.5 * static_cast<double>(h));

  // Embedding tables: log sociabilities from stick logits, or free embeddings.
  std::vector<int> tables;
  int prior_node;
  if (s.prior == PriorMode::kNesh) {
    int log1mv_sum = -1;
    for (int k = 0; k < num_modes; ++k) {
      int theta = embed_leaves[k];
      int log_v = t.affine(t.softplus(t.affine(theta, -1.0)), -1.0);
      int log_1mv = t.affine(t.softplus(theta), -1.0);
      tables.push_back(t.add(log_v, t.exclusive_prefix_rows(log_1mv)));
      int part = t.sum(log_1mv);
      log1mv_sum = k == 0 ? part : t.add(log1mv_sum, part);
    }
    double entries = 0.0;
    for (const auto& m : s.embed_params) entries += static_cast<double>(m.size());
    prior_node = t.affine(log1mv_sum, s.alpha - 1.0, entries * std::log(s.alpha));
  } else {
    int sq_sum = -1;
    double entries = 0.0;
    for (int k = 0; k < num_modes; ++k) {
      tables.push_back(embed_leaves[k]);
      int part = t.sum(t.square(embed_leaves[k]));
      sq_sum = k == 0 ? part : t.add(sq_sum, part);
      entries += static_cast<double>(s.embed_params[k].size());
    }
    prior_node = t.affine(sq_sum, -0.5, -0.5 * entries * std::log(2.0 * M_PI));
  }

  int edge_node = -1, integral_node = -1, event_node = -1;
  if (batch.size() > 0) {
    std::vector<std::vector<int>> mode_indices(num_modes);
    for (const auto& key : batch.keys)
      for (int k = 0; k < num_modes; ++k) mode_indices[k].push_back(key[k]);

    if (s.prior == PriorMode::kNesh) {
      int acc = -1;
      for (int k = 0; k < num_modes; ++k) {
        int rows = t.gather_rows(tables[k], mode_indices[k]);
        acc = k == 0 ? rows : t.add(acc, rows);
      }
      edge_node = t.affine(t.sum(t.logsumexp_rows(acc)), scale,
                           -scale * batch.size() * std::log(static_cast<double>(s.rank)));
    }

    std::vector<int> parts;
    for (int k = 0; k < num_modes; ++k)
      parts.push_back(t.gather_rows(tables[k], mode_indices[k]));
    int xbn = t.batchnorm(num_modes == 1 ? parts[0] : t.hstack(parts), bn_eta,
                          bn_logsig, s.bn.epsilon);

    // marginal moments of f at a set of (normalized input, time) rows
    auto marginal = [&](int input_rows, Eigen::Index n) -> std::pair<int, int> {
      int kxz = t.se_kernel(input_rows, z, loglen, lv1, lv2, jitter, false);
      int cross = t.spd_solve(kzz, t.transpose(kxz));
      int mean = t.matmul(t.transpose(cross), mu);
      int kd = t.kernel_diag(n, lv1, lv2, jitter);
      int nystrom = t.rowsum(t.transpose(t.hadamard(cross, t.transpose(kxz))));
      int qv = t.rowsum(t.square(t.matmul(t.transpose(cross), ell)));
      int var = t.clamp_min0(t.add(t.sub(kd, nystrom), qv));
      return {mean, var};
    };

    int xq = t.append_const_col(t.repeat_rows(xbn, draws.time_samples), draws.times);
    auto [mq, vq] = marginal(xq, static_cast<Eigen::Index>(batch.size()) *
                                     draws.time_samples);
    integral_node = t.affine(t.sum(t.add(t.square(mq), vq)),
                             -scale * s.horizon / draws.time_samples);

    if (!batch.events.empty()) {
      std::vector<int> event_rows;
      Eigen::VectorXd event_times(batch.event_count());
      for (int e = 0; e < batch.event_count(); ++e) {
        event_rows.push_back(batch.events[e].first);
        event_times[e] = batch.events[e].second;
      }
      int xe = t.append_const_col(t.gather_rows(xbn, event_rows), event_times);
      auto [me, ve] = marginal(xe, batch.event_count());
      int sd = t.sqrt_floor0(ve);
      int f = t.add(t.bcast_cols(me, draws.event_samples),
                    t.hadamard(t.bcast_cols(sd, draws.event_samples), t.var(draws.noise)));
      event_node = t.affine(t.sum(t.log_guard(t.square(f), s.eps_f)),
                            scale / draws.event_samples);
    }
  }

  int zero = t.var(Eigen::MatrixXd::Zero(1, 1));
  if (edge_node < 0) edge_node = zero;
  if (integral_node < 0) integral_node = zero;
  if (event_node < 0) event_node = zero;
  int total = t.add(t.add(t.sub(prior_node, kl), t.add(edge_node, integral_node)),
                    event_node);
  t.backward(total);

  ElboResult out;
  out.value = t.scalar(total);
  out.terms.kl = t.scalar(kl);
  out.terms.edge = edge_node == zero ? 0.0 : t.scalar(edge_node);
  out.terms.prior = t.scalar(prior_node);
  out.terms.integral = integral_node == zero ? 0.0 : t.scalar(integral_node);
  out.terms.event = event_node == zero ? 0.0 : t.scalar(event_node);
  out.clamped = t.clamp_events();

  out.gradient.resize(param_count(s));
  Eigen::Index at = 0;
  auto put = [&](const Eigen::MatrixXd& adj) {
    for (Eigen::Index i = 0; i < adj.size(); ++i) out.gradient[at++] = adj.data()[i];
  };
  for (int k = 0; k < num_modes; ++k) put(t.adj(embed_leaves[k]));
  put(t.adj(loglen));
  put(t.adj(lv1));
  put(t.adj(lv2));
  put(t.adj(z));
  put(t.adj(mu));
  put(t.adj(raw));
  put(t.adj(bn_eta));
  put(t.adj(bn_logsig));
  return out;
}

// ---------------------------------------------------------------------------
// Adam (ascent convention: parameters move along +gradient of the ELBO).

struct AdamState {
  Eigen::VectorXd first;
  Eigen::VectorXd second;
  long step = 0;
};

// Returns false and leaves everything untouched when the gradient carries
// non-finite entries.
inline bool adam_step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad,
                      AdamState& opt, double learning_rate, double beta1 = 0.9,
                      double beta2 = 0.999, double epsilon = 1e-8) {
  if (theta.size() != grad.size())
    throw std::invalid_argument("inference: gradient size mismatch");
  if (!grad.allFinite()) return false;
  if (opt.first.size() != theta.size()) {
    opt.first = Eigen::VectorXd::Zero(theta.size());
    opt.second = Eigen::VectorXd::Zero(theta.size());
    opt.step = 0;
  }
  ++opt.step;
  opt.first = beta1 * opt.first + (1.0 - beta1) * grad;
  opt.second = beta2 * opt.second + (1.0 - beta2) * grad.array().square().matrix();
  double correct1 = 1.0 - std::pow(beta1, static_cast<double>(opt.step));
  double correct2 = 1.0 - std::pow(beta2, static_cast<double>(opt.step));
  theta.array() += learning_rate * (opt.first.array() / correct1) /
                   ((opt.second.array() / correct2).sqrt() + epsilon);
  return true;
}

// ---------------------------------------------------------------------------
// Initialization and the training loop.

struct Checkpoint {
  std::uint32_t version = 1;
  TrainConfig config;
  ModelState state;
  std::vector<std::vector<std::int64_t>> raw_ids;  // per mode, may be empty
  std::vector<double> history;                     // per-epoch mean ELBO
  AdamState opt;
  long rejected_steps = 0;
  bool aborted = false;  // numerical failure; state is the last good one
};

namespace detail {

// Distinct RNG stream tags within a training run.
enum : std::uint64_t { kStreamInit = 1, kStreamEpoch = 2, kStreamStep = 3 };

inline std::vector<int> epoch_order(std::size_t n, std::uint64_t seed, long epoch) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(seed, kStreamEpoch, static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace detail

inline ModelState init_model(const data::EventDataset& ds, const TrainConfig& config) {
  config.validate();
  if (ds.sequences.empty()) throw std::invalid_argument("inference: empty dataset");
  if (!(ds.horizon > 0.0)) throw std::invalid_argument("inference: horizon must be > 0");

  ModelState s;
  s.num_modes = ds.num_modes;
  s.rank = config.rank;
  s.alpha = config.alpha;
  s.prior = config.prior;
  s.horizon = ds.horizon;
  s.eps_f = config.eps_f;

  auto rng = make_rng(config.seed, detail::kStreamInit);
  std::normal_distribution<double> normal(0.0, 0.01);
  for (int k = 0; k < ds.num_modes; ++k) {
    Eigen::MatrixXd theta(ds.mode_sizes[k], config.rank);
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta.data()[i] = normal(rng);
    s.embed_params.push_back(std::move(theta));
  }

  // Batch-norm statistics from the first minibatch of the first epoch.
  auto order = detail::epoch_order(ds.sequences.size(), config.seed, 0);
  std::vector<int> first(order.begin(),
                         order.begin() + std::min<std::size_t>(order.size(),
                                                               config.batch_size));
  auto table = s.embedding_table();
  std::vector<std::vector<std::int32_t>> first_keys;
  for (int i : first) first_keys.push_back(ds.sequences[i].key);
  Eigen::MatrixXd x0 = detail::raw_batch_inputs(s, table, first_keys);
  s.bn.epsilon = config.bn_eps;
  s.bn.mean = x0.colwise().mean();
  Eigen::ArrayXd var =
      (x0.rowwise() - s.bn.mean.transpose()).array().square().colwise().mean();
  s.bn.log_sigma = var.sqrt().max(1e-8).log().matrix();

  // Inducing inputs: distinct training event rows after the initial batch-norm.
  std::vector<std::pair<int, double>> event_rows;  // (sequence index, time)
  for (std::size_t i = 0; i < ds.sequences.size(); ++i)
    for (double time : ds.sequences[i].times)
      event_rows.push_back({static_cast<int>(i), time});
  Eigen::Index h = std::min<Eigen::Index>(config.inducing_count,
                                          static_cast<Eigen::Index>(event_rows.size()));
  std::vector<std::size_t> pick(event_rows.size());
  std::iota(pick.begin(), pick.end(), 0);
  std::shuffle(pick.begin(), pick.end(), rng);

  const int d = s.input_dim() + 1;
  s.svgp.kernel.log_lengthscales = Eigen::VectorXd::Zero(d);
  s.svgp.kernel.log_variance1 = 0.0;
  s.svgp.kernel.log_variance2 = 0.0;
  s.svgp.kernel.jitter = config.jitter;
  s.svgp.inducing.resize(h, d);
  for (Eigen::Index i = 0; i < h; ++i) {
    const auto& [seq_index, time] = event_rows[pick[i]];
    Eigen::VectorXd raw = embeddings::gp_input(ds.sequences[seq_index].key, table);
    Eigen::VectorXd xbn = embeddings::batchnorm_apply(raw, s.bn);
    s.svgp.inducing.row(i).head(d - 1) = xbn.transpose();
    s.svgp.inducing(i, d - 1) = time;
  }

  // q(b) starts as a confident homogeneous fit rather than at the prior:
  // the mean sits at the square root of the global event rate (the square
  // link makes the objective symmetric under f -> -f, so mu = 0 is a saddle
  // whose variance-inflating escape direction is a poor local optimum), and
  // L = 0.1 chol(K_ZZ) so early gradients flow into the mean instead of
  // first paying thousands of steps to shrink the predictive variance.
  double global_rate = static_cast<double>(ds.event_count()) /
                       (static_cast<double>(ds.sequences.size()) * ds.horizon);
  s.svgp.mean = Eigen::VectorXd::Constant(h, std::sqrt(global_rate));
  auto kzz = gp::kernel_matrix(s.svgp.inducing, s.svgp.inducing, s.svgp.kernel, true);
  Eigen::MatrixXd prior_l = 0.1 * gp::factorize_spd(kzz).matrixL().toDenseMatrix();
  s.svgp.chol_raw = Eigen::MatrixXd::Zero(h, h);
  s.svgp.chol_raw.triangularView<Eigen::StrictlyLower>() =
      prior_l.triangularView<Eigen::StrictlyLower>();
  s.svgp.chol_raw.diagonal() = prior_l.diagonal().array().log();
  return s;
}

inline Checkpoint train(const data::EventDataset& ds, const TrainConfig& config) {
  Checkpoint ck;
  ck.config = config;
  ck.state = init_model(ds, config);
  ck.raw_ids = ds.raw_ids;

  const auto n = static_cast<std::int64_t>(ds.sequences.size());
  Eigen::VectorXd theta = pack_params(ck.state);
  ck.opt.first = Eigen::VectorXd::Zero(theta.size());
  ck.opt.second = Eigen::VectorXd::Zero(theta.size());

  ModelState last_good = ck.state;
  AdamState last_good_opt = ck.opt;
  std::uint64_t global_step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto order = detail::epoch_order(ds.sequences.size(), config.seed, epoch);
    double epoch_sum = 0.0;
    long epoch_steps = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      std::vector<int> indices(
          order.begin() + begin,
          order.begin() + std::min(order.size(), begin + config.batch_size));
      Batch batch = make_batch(ds, indices);
      auto rng = make_rng(config.seed, detail::kStreamStep, global_step++);
      auto draws = make_draws(batch, config.time_samples, config.event_samples,
                              ck.state.horizon, rng);
      try {
        auto result = elbo_gradient(ck.state, batch, draws, n);
        epoch_sum += result.value;
        ++epoch_steps;
        if (adam_step(theta, result.gradient, ck.opt, config.learning_rate)) {
          unpack_params(ck.state, theta);
          last_good = ck.state;
          last_good_opt = ck.opt;
        } else {
          ++ck.rejected_steps;
        }
      } catch (const NumericalError&) {
        ck.state = last_good;
        ck.opt = last_good_opt;
        ck.aborted = true;
        return ck;
      }
    }
    ck.history.push_back(epoch_steps > 0 ? epoch_sum / epoch_steps : 0.0);
  }
  return ck;
}

}  // namespace nesh::inference
