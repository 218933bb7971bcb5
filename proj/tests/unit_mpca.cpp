#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "fmpca/mpca.hpp"
#include "test_support.hpp"

using namespace fmpca;
namespace ts = test_support;

namespace {

std::vector<Tensor> random_samples(std::size_t count, const std::vector<std::size_t>& dims,
                                   rng::Stream& s) {
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(ts::random_tensor(dims, s));
  return out;
}

// Materialized scatter matrices, used only as oracles here.
Eigen::MatrixXd phi_star_oracle(const std::vector<Tensor>& samples, std::size_t mode) {
  const Tensor mean = tensor_mean({samples.data(), samples.size()});
  Eigen::MatrixXd acc;
  for (const Tensor& t : samples) {
    Tensor c = t;
    sub_in_place(c, mean);
    const Eigen::MatrixXd x = ts::to_eigen(matricize(c, mode));
    if (acc.size() == 0) acc = Eigen::MatrixXd::Zero(x.rows(), x.rows());
    acc += x * x.transpose();
  }
  return acc;
}

Eigen::MatrixXd phi_oracle(const std::vector<Tensor>& samples, std::size_t mode,
                           const ProjectionSet& p) {
  const Tensor mean = tensor_mean({samples.data(), samples.size()});
  const Eigen::MatrixXd chain = ts::to_eigen(other_modes_kron(p, mode));
  Eigen::MatrixXd acc;
  for (const Tensor& t : samples) {
    Tensor c = t;
    sub_in_place(c, mean);
    const Eigen::MatrixXd x = ts::to_eigen(matricize(c, mode));
    const Eigen::MatrixXd shrunk = x * chain;
    if (acc.size() == 0) acc = Eigen::MatrixXd::Zero(x.rows(), x.rows());
    acc += shrunk * shrunk.transpose();
  }
  return acc;
}

Matrix dominant_eigvecs(const Eigen::MatrixXd& sym, std::size_t p) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  const Eigen::Index n = sym.rows();
  Eigen::MatrixXd top(n, static_cast<Eigen::Index>(p));
  for (std::size_t j = 0; j < p; ++j)
    top.col(static_cast<Eigen::Index>(j)) = solver.eigenvectors().col(n - 1 - static_cast<Eigen::Index>(j));
  return ts::from_eigen(top);
}

}  // namespace

TEST_CASE("mpca_fit: identical samples give zero scatter and converge immediately") {
  rng::Stream s(51);
  const Tensor base = ts::random_tensor({3, 4, 2}, s);
  std::vector<Tensor> samples(2, base);  // the two-sample mean is exact
  mpca::FitOptions opts;
  opts.ranks = {2, 2, 1};
  const auto model = mpca::mpca_fit({samples.data(), samples.size()}, opts);
  CHECK(model.scatter_history[0] == 0.0);
  CHECK(model.converged);
  CHECK(model.iterations_run == 1);

  // With more copies the mean rounds, but the scatter stays at noise level.
  std::vector<Tensor> five(5, base);
  const auto noisy = mpca::mpca_fit({five.data(), five.size()}, opts);
  CHECK(noisy.scatter_history[0] <=
        1e-25 * inner_product(base, base) * static_cast<double>(five.size()));
  CHECK(noisy.converged);
  for (const auto& f : model.projection.factors) {
    const Eigen::MatrixXd m = ts::to_eigen(f);
    CHECK((m.transpose() * m - Eigen::MatrixXd::Identity(m.cols(), m.cols()))
              .cwiseAbs()
              .maxCoeff() <= 1e-10);
  }
  // Deterministic: a second run yields bit-identical factors.
  const auto again = mpca::mpca_fit({samples.data(), samples.size()}, opts);
  for (std::size_t n = 0; n < 3; ++n)
    CHECK(again.projection.factors[n].values() == model.projection.factors[n].values());
}

TEST_CASE("mpca_fit on order-1 tensors reduces to classic PCA") {
  rng::Stream s(52);
  const std::size_t dim = 6;
  std::vector<Tensor> samples;
  for (int i = 0; i < 40; ++i) samples.push_back(ts::random_tensor({dim}, s));
  mpca::FitOptions opts;
  opts.ranks = {3};
  const auto model = mpca::mpca_fit({samples.data(), samples.size()}, opts);

  const Matrix pca = dominant_eigvecs(phi_star_oracle(samples, 0), 3);
  CHECK(ts::sign_aligned_max_dev(model.projection.factors[0], pca) <= 1e-9);
}

TEST_CASE("mpca_fit: monotone scatter and orthonormal factors on random data") {
  rng::Stream s(53);
  const auto samples = random_samples(60, {8, 8, 5}, s);
  mpca::FitOptions opts;
  opts.ranks = {3, 3, 2};
  const auto model = mpca::mpca_fit({samples.data(), samples.size()}, opts);
  REQUIRE(model.scatter_history.size() >= 2);
  for (std::size_t k = 1; k < model.scatter_history.size(); ++k)
    CHECK(model.scatter_history[k] >=
          model.scatter_history[k - 1] - 1e-9 * model.scatter_history[0]);
  for (const auto& f : model.projection.factors) {
    const Eigen::MatrixXd m = ts::to_eigen(f);
    CHECK((m.transpose() * m - Eigen::MatrixXd::Identity(m.cols(), m.cols()))
              .cwiseAbs()
              .maxCoeff() <= 1e-10);
  }
}

TEST_CASE("mpca_fit input validation") {
  rng::Stream s(54);
  std::vector<Tensor> one{ts::random_tensor({2, 2}, s)};
  mpca::FitOptions opts;
  opts.ranks = {1, 1};
  CHECK_THROWS_AS(mpca::mpca_fit({one.data(), one.size()}, opts), std::invalid_argument);

  std::vector<Tensor> mixed{ts::random_tensor({2, 2}, s), ts::random_tensor({2, 3}, s)};
  CHECK_THROWS_AS(mpca::mpca_fit({mixed.data(), mixed.size()}, opts), std::invalid_argument);

  std::vector<Tensor> bad{ts::random_tensor({2, 2}, s), ts::random_tensor({2, 2}, s)};
  bad[1][0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(mpca::mpca_fit({bad.data(), bad.size()}, opts), std::invalid_argument);

  std::vector<Tensor> ok{ts::random_tensor({2, 2}, s), ts::random_tensor({2, 2}, s)};
  mpca::FitOptions big;
  big.ranks = {3, 1};
  CHECK_THROWS_AS(mpca::mpca_fit({ok.data(), ok.size()}, big), std::invalid_argument);
}

TEST_CASE("choose_ranks: full variation keeps the numerical rank") {
  rng::Stream s(55);
  // Rank-2 construction in a 4-dim mode.
  const Matrix basis = ts::random_orthonormal(4, 2, s);
  std::vector<Tensor> samples;
  for (int i = 0; i < 12; ++i) {
    const Matrix coef = ts::random_matrix(2, 1, s);
    const Matrix v = matmul(basis, coef);
    Tensor t({4});
    for (std::size_t r = 0; r < 4; ++r) t[r] = v(r, 0);
    samples.push_back(t);
    Tensor neg = t;
    scale_in_place(neg, -1.0);
    samples.push_back(neg);  // symmetric pair keeps the mean at zero
  }
  const auto ranks = mpca::choose_ranks({samples.data(), samples.size()}, 1.0);
  CHECK(ranks == std::vector<std::size_t>{2});
}

TEST_CASE("choose_ranks: cumulative shares follow the threshold") {
  // Eigenvalue shares (0.9, 0.08, 0.02): q = 0.97 needs two components.
  std::vector<Tensor> samples;
  const double scales[] = {std::sqrt(0.45), std::sqrt(0.04), std::sqrt(0.01)};
  for (std::size_t k = 0; k < 3; ++k) {
    Tensor t({3});
    t[k] = scales[k];
    samples.push_back(t);
    Tensor neg = t;
    scale_in_place(neg, -1.0);
    samples.push_back(neg);
  }
  CHECK(mpca::choose_ranks({samples.data(), samples.size()}, 0.97) ==
        std::vector<std::size_t>{2});
  CHECK(mpca::choose_ranks({samples.data(), samples.size()}, 0.9) ==
        std::vector<std::size_t>{1});
  CHECK_THROWS_AS(mpca::choose_ranks({samples.data(), samples.size()}, 0.0),
                  std::invalid_argument);
}

TEST_CASE("project_features: identity factors, zero tensors, centered means") {
  rng::Stream s(56);
  const auto samples = random_samples(10, {3, 3}, s);
  mpca::FitOptions opts;
  opts.ranks = {3, 3};
  const auto model = mpca::mpca_fit({samples.data(), samples.size()}, opts);

  // Full-rank features of centered data have zero mean.
  const auto centered_features =
      mpca::project_features({samples.data(), samples.size()}, model, true);
  Tensor mean_feature = tensor_mean({centered_features.data(), centered_features.size()});
  double scale = 0.0;
  for (const auto& f : centered_features) scale = std::max(scale, frobenius_norm(f));
  for (std::size_t i = 0; i < mean_feature.size(); ++i)
    CHECK(std::abs(mean_feature[i]) <= 1e-10 * std::max(1.0, scale));

  mpca::MpcaModel ident;
  ident.mean = Tensor({3, 3});
  ident.projection.factors = {Matrix::identity(3), Matrix::identity(3)};
  const auto same = mpca::project_features({samples.data(), samples.size()}, ident);
  for (std::size_t i = 0; i < samples.size(); ++i)
    CHECK(ts::max_abs_diff(same[i], samples[i]) <= 1e-12);

  std::vector<Tensor> zero{Tensor({3, 3}), Tensor({3, 3})};
  const auto zf = mpca::project_features({zero.data(), zero.size()}, model);
  CHECK(frobenius_norm(zf[0]) == 0.0);
}

TEST_CASE("initialization and cyclic updates match the eigendecomposition routes") {
  rng::Stream s(57);
  const auto samples = random_samples(20, {4, 3, 3}, s);
  const std::vector<std::size_t> ranks{2, 2, 2};

  mpca::FitOptions opts;
  opts.ranks = ranks;
  opts.max_iter = 3;
  const auto model = mpca::mpca_fit({samples.data(), samples.size()}, opts);

  // Initialization route vs eigendecomposition of the per-mode scatter.
  const Tensor mean = tensor_mean({samples.data(), samples.size()});
  std::vector<Tensor> centered(samples.begin(), samples.end());
  for (auto& t : centered) sub_in_place(t, mean);
  for (std::size_t n = 0; n < 3; ++n) {
    const auto state =
        linalg::svd_full(mpca::concat_unfoldings({centered.data(), centered.size()}, n)).state;
    const Matrix svd_route = linalg::truncate_left(state, ranks[n]);
    const Matrix eig_route = dominant_eigvecs(phi_star_oracle(samples, n), ranks[n]);
    CHECK(ts::projector_distance(svd_route, eig_route, ranks[n]) <= 1e-9);
  }

  // One cyclic update step vs eigendecomposition of the projected scatter.
  for (std::size_t n = 0; n < 3; ++n) {
    const auto state = linalg::svd_full(mpca::concat_projected_unfoldings(
                                            {centered.data(), centered.size()}, n,
                                            model.projection))
                           .state;
    const Matrix svd_route = linalg::truncate_left(state, ranks[n]);
    const Matrix eig_route =
        dominant_eigvecs(phi_oracle(samples, n, model.projection), ranks[n]);
    CHECK(ts::projector_distance(svd_route, eig_route, ranks[n]) <= 1e-9);
  }
}

TEST_CASE("projection energy is bounded and tight at full rank") {
  rng::Stream s(58);
  const auto samples = random_samples(15, {4, 3}, s);
  const Tensor mean = tensor_mean({samples.data(), samples.size()});
  double total = 0.0;
  for (const auto& t : samples) {
    Tensor c = t;
    sub_in_place(c, mean);
    total += inner_product(c, c);
  }

  mpca::FitOptions reduced;
  reduced.ranks = {2, 2};
  const auto small = mpca::mpca_fit({samples.data(), samples.size()}, reduced);
  CHECK(small.scatter_history.back() <= total * (1.0 + 1e-12));

  mpca::FitOptions full;
  full.ranks = {4, 3};
  const auto big = mpca::mpca_fit({samples.data(), samples.size()}, full);
  CHECK(big.scatter_history.back() == doctest::Approx(total).epsilon(1e-10));
}

TEST_CASE("model save/load round trip") {
  rng::Stream s(59);
  const auto samples = random_samples(8, {3, 4}, s);
  mpca::FitOptions opts;
  opts.ranks = {2, 2};
  const auto model = mpca::mpca_fit({samples.data(), samples.size()}, opts);

  const auto dir = std::filesystem::temp_directory_path() / "fmpca_model_test";
  std::filesystem::remove_all(dir);
  mpca::save_model(dir.string(), model);
  const auto loaded = mpca::load_model(dir.string());
  CHECK(loaded.mean.values() == model.mean.values());
  for (std::size_t n = 0; n < 2; ++n)
    CHECK(loaded.projection.factors[n].values() == model.projection.factors[n].values());
  CHECK(loaded.scatter_history == model.scatter_history);
  CHECK(loaded.converged == model.converged);
  CHECK(loaded.iterations_run == model.iterations_run);
  std::filesystem::remove_all(dir);
}
