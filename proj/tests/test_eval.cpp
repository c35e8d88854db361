#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "nesh/eval.hpp"
#include "testutil.hpp"

using namespace nesh;
using namespace nesh::eval;
using inference::Checkpoint;
using inference::ModelState;
using inference::PriorMode;

namespace {

// Checkpoint whose posterior f is exactly the constant `c` with variance L^2.
Checkpoint constant_checkpoint(double c, double log_ell, double horizon) {
  Checkpoint ck;
  ModelState s;
  s.num_modes = 2;
  s.rank = 1;
  s.alpha = 1.0;
  s.prior = PriorMode::kNesh;
  s.horizon = horizon;
  s.eps_f = 1e-10;
  s.embed_params = {Eigen::MatrixXd::Zero(2, 1), Eigen::MatrixXd::Zero(2, 1)};
  s.bn.mean = Eigen::VectorXd::Zero(2);
  s.bn.log_sigma = Eigen::VectorXd::Zero(2);
  s.bn.epsilon = 1e-5;
  s.svgp.kernel.log_lengthscales = Eigen::VectorXd::Constant(3, 50.0);
  s.svgp.kernel.jitter = 0.0;
  s.svgp.inducing = Eigen::MatrixXd::Zero(1, 3);
  s.svgp.mean = Eigen::VectorXd::Constant(1, c);
  s.svgp.chol_raw = Eigen::MatrixXd::Constant(1, 1, log_ell);
  ck.state = std::move(s);
  ck.raw_ids.resize(2);
  return ck;
}

data::EventDataset one_sequence(std::vector<double> times, double horizon) {
  data::EventDataset ds;
  ds.num_modes = 2;
  ds.mode_sizes = {2, 2};
  ds.horizon = horizon;
  ds.raw_ids.resize(2);
  ds.sequences.push_back({{0, 0}, std::move(times)});
  return ds;
}

}  // namespace

TEST_CASE("constant posterior reduces to the homogeneous log-likelihood") {
  const double c = 1.4, horizon = 2.5;
  auto ck = constant_checkpoint(c, -400.0, horizon);
  auto ds = one_sequence({0.3, 0.9, 2.1}, horizon);
  auto report = test_loglik(ck, ds, 3, 7, 5);
  double expected = -horizon * c * c + 3.0 * std::log(c * c + ck.state.eps_f);
  REQUIRE(report.total == Catch::Approx(expected).epsilon(1e-12));
  REQUIRE(report.per_sequence.size() == 1);
  REQUIRE(report.dropped == 0);
  REQUIRE(report.mean == report.total);
}

TEST_CASE("unit rate on a unit horizon scores about -1") {
  auto ck = constant_checkpoint(1.0, -400.0, 1.0);
  auto ds = one_sequence({0.42}, 1.0);
  auto report = test_loglik(ck, ds, 2, 5, 9);
  REQUIRE(report.total == Catch::Approx(-1.0).margin(1e-9));
}

TEST_CASE("sequences with unseen nodes are dropped and counted") {
  auto ck = constant_checkpoint(1.0, -400.0, 1.0);
  auto ds = one_sequence({0.5}, 1.0);
  ds.sequences.push_back({{1, 1}, {0.25}});
  ds.sequences.push_back({{0, 5}, {0.75}});  // node 5 unknown: D_1 = 2
  auto report = test_loglik(ck, ds, 2, 4, 3);
  REQUIRE(report.dropped == 1);
  REQUIRE(report.per_sequence.size() == 2);
  REQUIRE(report.total == Catch::Approx(report.per_sequence[0].second +
                                        report.per_sequence[1].second));

  data::EventDataset all_unseen = one_sequence({0.5}, 1.0);
  all_unseen.sequences[0].key = {7, 7};
  REQUIRE_THROWS_AS(test_loglik(ck, all_unseen, 2, 4, 3), Error);
}

TEST_CASE("raw-id mappings route test keys through the checkpoint") {
  auto ck = constant_checkpoint(2.0, -400.0, 1.0);
  ck.raw_ids = {{100, 200}, {300, 400}};
  auto ds = one_sequence({0.5}, 1.0);
  ds.raw_ids = {{200}, {300}};  // test internal 0 -> raw 200 / 300
  auto report = test_loglik(ck, ds, 2, 4, 3);
  REQUIRE(report.dropped == 0);

  ds.raw_ids = {{999}, {300}};  // raw 999 unknown to the checkpoint
  REQUIRE_THROWS_AS(test_loglik(ck, ds, 2, 4, 3), Error);
}

TEST_CASE("scores are stable in the sample counts") {
  // moderate posterior variance so S and Q matter
  auto ck = constant_checkpoint(0.9, std::log(0.4), 2.0);
  auto ds = one_sequence({0.2, 0.8, 1.1, 1.9}, 2.0);
  std::vector<double> small, large;
  for (std::uint64_t seed = 0; seed < 24; ++seed) {
    small.push_back(test_loglik(ck, ds, 1000, 1000, seed).total);
    large.push_back(test_loglik(ck, ds, 10000, 10000, seed + 1000).total);
  }
  auto ms = testutil::moments(small);
  auto ml = testutil::moments(large);
  double combined = std::sqrt(ms.se * ms.se + ml.se * ml.se);
  REQUIRE(std::abs(ms.mean - ml.mean) < 4.0 * combined);
}

TEST_CASE("the log guard is negligible away from zero") {
  auto ck = constant_checkpoint(0.5, -400.0, 1.0);  // |m_f| = 0.5 > 0.1, v = 0
  auto ds = one_sequence({0.1, 0.6}, 1.0);
  auto guarded = test_loglik(ck, ds, 4, 6, 11);
  Checkpoint unguarded = ck;
  unguarded.state.eps_f = 0.0;
  auto plain = test_loglik(unguarded, ds, 4, 6, 11);
  REQUIRE(std::abs(guarded.total - plain.total) < 1e-6);
}

TEST_CASE("homogeneous baseline formula") {
  auto ds = one_sequence({0.5, 0.7, 1.3}, 2.0);
  auto baseline = homogeneous_mle_loglik(ds);
  REQUIRE(baseline.size() == 1);
  REQUIRE(baseline[0] == Catch::Approx(3.0 * std::log(1.5) - 3.0));
}

TEST_CASE("report csv has one row per scored sequence plus a summary") {
  auto ck = constant_checkpoint(1.0, -400.0, 1.0);
  auto ds = one_sequence({0.5}, 1.0);
  ds.sequences.push_back({{1, 0}, {0.25}});
  auto report = test_loglik(ck, ds, 2, 4, 3);
  std::ostringstream out;
  write_report(report, out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  REQUIRE(line == "sequence_index,loglik");
  std::getline(in, line);
  REQUIRE(line.substr(0, 2) == "0,");
  std::getline(in, line);
  REQUIRE(line.substr(0, 2) == "1,");
  std::getline(in, line);
  REQUIRE(line.rfind("# total=", 0) == 0);
  REQUIRE(line.find("dropped=0") != std::string::npos);
}

TEST_CASE("embedding export lists every active node") {
  auto ck = constant_checkpoint(1.0, -400.0, 1.0);
  // mode 0: logits 0 -> v = 0.5 -> omega = (0.5, 0.25)
  auto rows = export_embeddings(ck);
  REQUIRE(rows.size() == 4);  // sum of mode sizes
  REQUIRE(rows[0].mode == 0);
  REQUIRE(rows[0].values[0] == Catch::Approx(std::log(0.5)));
  REQUIRE(rows[1].values[0] == Catch::Approx(std::log(0.25)));

  std::ostringstream out;
  write_embeddings(rows, 1, out);
  std::istringstream in(out.str());
  std::string header, first;
  std::getline(in, header);
  REQUIRE(header == "mode,internal_id,raw_id,u_1");
  std::getline(in, first);
  auto comma = first.rfind(',');
  REQUIRE(std::stod(first.substr(comma + 1)) == rows[0].values[0]);
}

TEST_CASE("kernel pca projects duplicates together and reconstructs the gram") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd pts(4, 2);
  for (int i = 0; i < pts.size(); ++i) pts.data()[i] = normal(rng);

  auto coords = kpca_project(pts, 2);
  REQUIRE(coords.rows() == 4);
  REQUIRE(coords.cols() == 2);

  // duplicated input points land on identical coordinates
  Eigen::MatrixXd dup(5, 2);
  dup << pts, pts.row(2);
  auto dup_coords = kpca_project(dup, 2);
  REQUIRE((dup_coords.row(2) - dup_coords.row(4)).norm() < 1e-10);

  // with every positive eigenpair kept, the feature inner products rebuild
  // the centered gram
  auto full = kpca_project(pts, 3);  // 4 centered points span at most 3 dims
  gp::KernelParams params;
  params.log_lengthscales = Eigen::VectorXd::Zero(2);
  params.jitter = 0.0;
  Eigen::MatrixXd gram = gp::kernel_matrix(pts, pts, params);
  Eigen::MatrixXd centering =
      Eigen::MatrixXd::Identity(4, 4) - Eigen::MatrixXd::Constant(4, 4, 0.25);
  Eigen::MatrixXd centered = centering * gram * centering;
  REQUIRE((full * full.transpose() - centered).norm() < 1e-8);

  // pairwise feature distances match the kernel-space identity
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double want = centered(i, i) + centered(j, j) - 2.0 * centered(i, j);
      double got = (full.row(i) - full.row(j)).squaredNorm();
      REQUIRE(got == Catch::Approx(want).margin(1e-8));
    }
}

TEST_CASE("kernel pca rejects degenerate inputs") {
  Eigen::MatrixXd same = Eigen::MatrixXd::Ones(3, 2);
  REQUIRE_THROWS_WITH(kpca_project(same, 1),
                      Catch::Matchers::ContainsSubstring("positive eigenvalues"));
  Eigen::MatrixXd pts(2, 1);
  pts << 0.0, 1.0;
  REQUIRE_THROWS_AS(kpca_project(pts, 3), std::invalid_argument);
}
