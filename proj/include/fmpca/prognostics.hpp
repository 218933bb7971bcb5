#pragma once

#include <span>
#include <string>
#include <vector>

#include "fmpca/fed.hpp"
#include "fmpca/tensor.hpp"

namespace fmpca::prog {

enum class Family { normal, lognormal, sev };

Family family_from_name(const std::string& name);
std::string_view family_name(Family family);

// Location-scale regression of (log-)time-to-failure on vectorized features:
// z = beta0 + vec(y)^T beta1 + sigma * eps.
struct ProgModel {
  Family family = Family::lognormal;
  double beta0 = 0.0;
  std::vector<double> beta1;
  double sigma = 0.0;
  std::vector<std::size_t> feature_dims;
};

struct AssetRecord {
  std::string id;
  Tensor degradation;
  double ttf = 0.0;
};

// Least-squares fit of the coefficients; sigma is the maximum-likelihood
// (1/M) residual scale for normal/lognormal, and the sev family is fitted by
// damped-Newton maximum likelihood.
ProgModel lls_fit(std::span<const Tensor> features, std::span<const double> ttfs,
                  Family family);

struct ProgParticipant {
  int user_id = 0;
  std::vector<Tensor> features;
  std::vector<double> ttfs;
};

// Federated fit for normal/lognormal: users mask the sufficient statistics
// (X^T X, X^T z, z^T z) with the same pairwise antisymmetric scheme as the
// mean centralization, the server aggregates and solves the normal equations.
ProgModel fed_lls_fit(std::vector<ProgParticipant>& users, fed::Transport& bus,
                      Family family, std::uint64_t seed);

struct Prediction {
  double location = 0.0;
  double scale = 0.0;
  double point = 0.0;  // distribution median
};

Prediction predict_ttf(const ProgModel& model, const Tensor& feature);

// |estimated - true| / true.
double prediction_error(double estimated, double true_ttf);

// Keeps only assets with at least i_t frames along the last mode, truncated
// to exactly their first i_t frames.
std::vector<AssetRecord> truncate_training(std::span<const AssetRecord> assets,
                                           std::size_t i_t);

// Analytic log-likelihood gradient of the sev family at (beta0, beta1,
// log sigma); exposed for the optimizer's oracle tests.
std::vector<double> sev_loglik_gradient(const ProgModel& model,
                                        std::span<const Tensor> features,
                                        std::span<const double> ttfs);
double sev_loglik(const ProgModel& model, std::span<const Tensor> features,
                  std::span<const double> ttfs);

void save_prog_model(const std::string& path, const ProgModel& model);
ProgModel load_prog_model(const std::string& path);

}  // namespace fmpca::prog
