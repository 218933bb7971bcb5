#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "fmpca/prognostics.hpp"
#include "test_support.hpp"

using namespace fmpca;
using prog::Family;
namespace ts = test_support;

namespace {

Tensor scalar_feature(double v) { return Tensor({1}, {v}); }

struct Synth {
  std::vector<Tensor> features;
  std::vector<double> ttfs;
};

Synth noisy_regression(std::size_t count, std::size_t dim, double sigma, rng::Stream& s,
                       Family family) {
  Synth out;
  std::vector<double> beta(dim);
  for (double& b : beta) b = s.next_gaussian(0.0, 0.5);
  for (std::size_t m = 0; m < count; ++m) {
    Tensor f({dim});
    for (std::size_t j = 0; j < dim; ++j) f[j] = s.next_gaussian(0.0, 1.0);
    double z = 0.4;
    for (std::size_t j = 0; j < dim; ++j) z += beta[j] * f[j];
    z += s.next_gaussian(0.0, sigma);
    out.features.push_back(std::move(f));
    out.ttfs.push_back(family == Family::lognormal ? std::exp(z) : std::abs(z) + 0.5);
  }
  return out;
}

}  // namespace

TEST_CASE("lls_fit: noiseless lognormal interpolation") {
  std::vector<Tensor> features{scalar_feature(0.0), scalar_feature(1.0), scalar_feature(2.0)};
  std::vector<double> ttfs{std::exp(1.0), std::exp(3.0), std::exp(5.0)};  // log z = 1 + 2 y
  const auto model =
      prog::lls_fit({features.data(), features.size()}, {ttfs.data(), ttfs.size()},
                    Family::lognormal);
  CHECK(model.beta0 == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(model.beta1[0] == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(model.sigma <= 1e-10);

  // A training point is reproduced.
  const auto pred = prog::predict_ttf(model, scalar_feature(1.0));
  CHECK(pred.point == doctest::Approx(std::exp(3.0)).epsilon(1e-8));
}

TEST_CASE("lls_fit: constant ttfs collapse to the intercept") {
  std::vector<Tensor> features;
  std::vector<double> ttfs;
  rng::Stream s(81);
  for (int i = 0; i < 6; ++i) {
    features.push_back(scalar_feature(s.next_gaussian(0.0, 1.0)));
    ttfs.push_back(7.5);
  }
  const auto model = prog::lls_fit({features.data(), features.size()},
                                   {ttfs.data(), ttfs.size()}, Family::lognormal);
  CHECK(model.beta0 == doctest::Approx(std::log(7.5)).epsilon(1e-10));
  CHECK(std::abs(model.beta1[0]) <= 1e-10);
  CHECK(model.sigma <= 1e-10);
}

TEST_CASE("lls_fit matches an independent least-squares oracle") {
  rng::Stream s(82);
  const auto data = noisy_regression(40, 3, 0.3, s, Family::normal);
  const auto model = prog::lls_fit({data.features.data(), data.features.size()},
                                   {data.ttfs.data(), data.ttfs.size()}, Family::normal);

  Eigen::MatrixXd design(40, 4);
  Eigen::VectorXd z(40);
  for (int m = 0; m < 40; ++m) {
    design(m, 0) = 1.0;
    for (int j = 0; j < 3; ++j) design(m, j + 1) = data.features[m][j];
    z(m) = data.ttfs[m];
  }
  const Eigen::VectorXd beta = design.colPivHouseholderQr().solve(z);
  CHECK(model.beta0 == doctest::Approx(beta(0)).epsilon(1e-8));
  for (int j = 0; j < 3; ++j)
    CHECK(model.beta1[j] == doctest::Approx(beta(j + 1)).epsilon(1e-8));

  // Residual orthogonality of the fitted coefficients.
  Eigen::VectorXd coef(4);
  coef(0) = model.beta0;
  for (int j = 0; j < 3; ++j) coef(j + 1) = model.beta1[j];
  const Eigen::VectorXd resid = z - design * coef;
  CHECK((design.transpose() * resid).cwiseAbs().maxCoeff() <=
        1e-8 * std::max(1.0, z.norm() * design.norm()));

  // MLE sigma uses 1/M.
  CHECK(model.sigma ==
        doctest::Approx(std::sqrt(resid.squaredNorm() / 40.0)).epsilon(1e-8));
}

TEST_CASE("lls_fit validation errors") {
  rng::Stream s(83);
  std::vector<Tensor> few{scalar_feature(1.0), scalar_feature(2.0)};
  std::vector<double> ttfs{1.0, 2.0};
  CHECK_THROWS_AS(
      prog::lls_fit({few.data(), few.size()}, {ttfs.data(), 2}, Family::lognormal),
      std::invalid_argument);

  std::vector<Tensor> features{scalar_feature(0.0), scalar_feature(1.0),
                               scalar_feature(2.0)};
  std::vector<double> nonpos{1.0, -2.0, 3.0};
  CHECK_THROWS_AS(prog::lls_fit({features.data(), features.size()}, {nonpos.data(), 3},
                                Family::lognormal),
                  std::invalid_argument);

  // Rank-deficient design: a feature column identical to the intercept.
  std::vector<Tensor> constant{scalar_feature(1.0), scalar_feature(1.0),
                               scalar_feature(1.0), scalar_feature(1.0)};
  std::vector<double> z{1.0, 2.0, 3.0, 4.0};
  CHECK_THROWS_AS(prog::lls_fit({constant.data(), constant.size()}, {z.data(), 4},
                                Family::lognormal),
                  std::runtime_error);
}

TEST_CASE("fed_lls_fit: one user equals the pooled fit") {
  rng::Stream s(84);
  const auto data = noisy_regression(25, 2, 0.2, s, Family::lognormal);
  const auto pooled = prog::lls_fit({data.features.data(), data.features.size()},
                                    {data.ttfs.data(), data.ttfs.size()}, Family::lognormal);

  std::vector<prog::ProgParticipant> users(1);
  users[0].user_id = 1;
  users[0].features = data.features;
  users[0].ttfs = data.ttfs;
  fed::InMemoryBus bus;
  const auto fed_model = prog::fed_lls_fit(users, bus, Family::lognormal, 5);
  CHECK(fed_model.beta0 == pooled.beta0);
  CHECK(fed_model.beta1 == pooled.beta1);
  CHECK(fed_model.sigma == pooled.sigma);
}

TEST_CASE("fed_lls_fit: three-way split matches the pooled fit") {
  rng::Stream s(85);
  const auto data = noisy_regression(60, 3, 0.25, s, Family::lognormal);
  const auto pooled = prog::lls_fit({data.features.data(), data.features.size()},
                                    {data.ttfs.data(), data.ttfs.size()}, Family::lognormal);

  std::vector<prog::ProgParticipant> users(3);
  const std::size_t split[] = {30, 20, 10};
  std::size_t at = 0;
  for (std::size_t d = 0; d < 3; ++d) {
    users[d].user_id = static_cast<int>(d + 1);
    users[d].features.assign(data.features.begin() + at,
                             data.features.begin() + at + split[d]);
    users[d].ttfs.assign(data.ttfs.begin() + at, data.ttfs.begin() + at + split[d]);
    at += split[d];
  }
  fed::InMemoryBus bus;
  const auto fed_model = prog::fed_lls_fit(users, bus, Family::lognormal, 5);
  CHECK(fed_model.beta0 == doctest::Approx(pooled.beta0).epsilon(1e-8));
  for (std::size_t j = 0; j < 3; ++j)
    CHECK(fed_model.beta1[j] == doctest::Approx(pooled.beta1[j]).epsilon(1e-8));
  CHECK(fed_model.sigma == doctest::Approx(pooled.sigma).epsilon(1e-8));

  // Structural audit: only mask tensors and masked statistic blocks travel.
  for (const auto& msg : bus.log()) {
    CHECK((msg.kind == fed::PayloadKind::mask_tensor ||
           msg.kind == fed::PayloadKind::masked_mean));
    CHECK(msg.round == "lls");
  }
  CHECK_THROWS_AS(prog::fed_lls_fit(users, bus, Family::sev, 5), std::invalid_argument);
}

TEST_CASE("predict_ttf basics") {
  prog::ProgModel model;
  model.family = Family::lognormal;
  model.beta0 = 0.7;
  model.beta1 = {1.0, -2.0};
  model.sigma = 0.3;
  model.feature_dims = {2};

  const auto zero = prog::predict_ttf(model, Tensor({2}));
  CHECK(zero.location == doctest::Approx(0.7));
  CHECK(zero.scale == doctest::Approx(0.3));

  model.beta0 = 0.0;
  model.beta1 = {0.0, 0.0};
  const auto unit = prog::predict_ttf(model, Tensor({2}, {1.0, 1.0}));
  CHECK(unit.point == doctest::Approx(1.0));

  model.family = Family::normal;
  model.beta0 = 4.2;
  const auto normal = prog::predict_ttf(model, Tensor({2}));
  CHECK(normal.point == doctest::Approx(4.2));

  CHECK_THROWS_AS(prog::predict_ttf(model, Tensor({3})), std::invalid_argument);
}

TEST_CASE("prediction_error arithmetic and scale invariance") {
  CHECK(prog::prediction_error(100.0, 100.0) == 0.0);
  CHECK(prog::prediction_error(110.0, 100.0) == doctest::Approx(0.10));
  CHECK(prog::prediction_error(50.0, 100.0) == doctest::Approx(0.50));
  CHECK_THROWS_AS(prog::prediction_error(1.0, 0.0), std::invalid_argument);

  rng::Stream s(86);
  for (int i = 0; i < 20; ++i) {
    const double est = std::abs(s.next_gaussian(0.0, 5.0)) + 0.1;
    const double truth = std::abs(s.next_gaussian(0.0, 5.0)) + 0.1;
    const double c = std::abs(s.next_gaussian(0.0, 2.0)) + 0.1;
    CHECK(prog::prediction_error(c * est, c * truth) ==
          doctest::Approx(prog::prediction_error(est, truth)).epsilon(1e-14));
  }
}

TEST_CASE("truncate_training keeps and slices by the time mode") {
  rng::Stream s(87);
  std::vector<prog::AssetRecord> assets;
  for (std::size_t frames : {5u, 8u, 10u}) {
    prog::AssetRecord a;
    a.id = "asset_" + std::to_string(frames);
    a.degradation = ts::random_tensor({3, 3, frames}, s);
    a.ttf = 1.0;
    assets.push_back(std::move(a));
  }

  const auto all = prog::truncate_training({assets.data(), assets.size()}, 1);
  CHECK(all.size() == 3);
  for (const auto& a : all) CHECK(a.degradation.dims().back() == 1);

  const auto none = prog::truncate_training({assets.data(), assets.size()}, 11);
  CHECK(none.empty());

  const auto some = prog::truncate_training({assets.data(), assets.size()}, 8);
  REQUIRE(some.size() == 2);
  for (const auto& a : some) {
    CHECK(a.degradation.dims().back() == 8);
    CHECK(a.degradation.dims()[0] == 3);
  }
  // The kept frames are the leading ones.
  const auto& original = assets[1].degradation;  // the 8-frame asset
  for (std::size_t i = 0; i < some[0].degradation.size(); ++i)
    CHECK(some[0].degradation[i] == original[i]);

  CHECK_THROWS_AS(prog::truncate_training({assets.data(), assets.size()}, 0),
                  std::invalid_argument);
}

TEST_CASE("sev family: gradient vanishes at the optimum and matches finite differences") {
  rng::Stream s(88);
  // Location-scale data with sev noise (inverse-cdf sampling).
  std::vector<Tensor> features;
  std::vector<double> ttfs;
  const double beta0 = 3.0;
  const double beta1 = 0.8;
  const double sigma = 0.4;
  for (int m = 0; m < 80; ++m) {
    const double x = s.next_gaussian(0.0, 1.0);
    const double u = s.next_double();
    const double eps = std::log(-std::log(1.0 - (u * 0.999998 + 1e-6)));
    features.push_back(scalar_feature(x));
    ttfs.push_back(beta0 + beta1 * x + sigma * eps + 10.0);  // keep ttfs positive
  }
  const auto model = prog::lls_fit({features.data(), features.size()},
                                   {ttfs.data(), ttfs.size()}, Family::sev);

  const auto grad = prog::sev_loglik_gradient(model, {features.data(), features.size()},
                                              {ttfs.data(), ttfs.size()});
  for (double g : grad) CHECK(std::abs(g) <= 1e-6);

  // Finite-difference check at random nearby parameter points.
  for (int probe = 0; probe < 3; ++probe) {
    prog::ProgModel p = model;
    p.beta0 += s.next_gaussian(0.0, 0.05);
    p.beta1[0] += s.next_gaussian(0.0, 0.05);
    p.sigma *= std::exp(s.next_gaussian(0.0, 0.05));
    const auto g = prog::sev_loglik_gradient(p, {features.data(), features.size()},
                                             {ttfs.data(), ttfs.size()});
    const double h = 1e-6;
    // beta0 direction
    prog::ProgModel up = p;
    up.beta0 += h;
    prog::ProgModel dn = p;
    dn.beta0 -= h;
    const double fd0 =
        (prog::sev_loglik(up, {features.data(), features.size()}, {ttfs.data(), ttfs.size()}) -
         prog::sev_loglik(dn, {features.data(), features.size()}, {ttfs.data(), ttfs.size()})) /
        (2 * h);
    CHECK(std::abs(fd0 - g[0]) <= 1e-5 * std::max(1.0, std::abs(g[0])));
    // log sigma direction
    up = p;
    up.sigma = p.sigma * std::exp(h);
    dn = p;
    dn.sigma = p.sigma * std::exp(-h);
    const double fds =
        (prog::sev_loglik(up, {features.data(), features.size()}, {ttfs.data(), ttfs.size()}) -
         prog::sev_loglik(dn, {features.data(), features.size()}, {ttfs.data(), ttfs.size()})) /
        (2 * h);
    CHECK(std::abs(fds - g.back()) <= 1e-5 * std::max(1.0, std::abs(g.back())));
  }

  // The sev median uses the log-log-2 quantile.
  const auto pred = prog::predict_ttf(model, scalar_feature(0.5));
  CHECK(pred.point ==
        doctest::Approx(pred.location + model.sigma * std::log(std::log(2.0))));
}

TEST_CASE("prognostic model JSON round trip") {
  prog::ProgModel model;
  model.family = Family::lognormal;
  model.beta0 = -0.25;
  model.beta1 = {0.5, 1.5, -2.0};
  model.sigma = 0.125;
  model.feature_dims = {3, 1};

  const auto dir = std::filesystem::temp_directory_path() / "fmpca_prog_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "prog_model.json").string();
  prog::save_prog_model(path, model);
  const auto loaded = prog::load_prog_model(path);
  CHECK(loaded.family == model.family);
  CHECK(loaded.beta0 == model.beta0);
  CHECK(loaded.beta1 == model.beta1);
  CHECK(loaded.sigma == model.sigma);
  CHECK(loaded.feature_dims == model.feature_dims);
  std::filesystem::remove_all(dir);
}
