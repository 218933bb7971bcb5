#pragma once

#include <span>
#include <string>
#include <vector>

#include "fmpca/linalg.hpp"
#include "fmpca/tensor.hpp"

namespace fmpca::mpca {

struct FitOptions {
  // Fixed per-mode ranks; leave empty to select them from `variation`.
  std::vector<std::size_t> ranks;
  // Fraction of per-mode variation to keep when ranks is empty.
  double variation = 0.0;
  // Relative convergence tolerance: the loop stops once the scatter gain of a
  // full cycle drops to eta * initial scatter.
  double eta = 1e-6;
  std::size_t max_iter = 10;
};

struct MpcaModel {
  Tensor mean;
  ProjectionSet projection;
  std::vector<double> scatter_history;  // psi_0, psi_1, ...
  std::size_t iterations_run = 0;
  bool converged = false;
};

// Centralized multilinear PCA: center, initialize each factor from the
// dominant left singular vectors of the concatenated mode-n unfoldings, then
// cyclically re-solve each mode from the projected unfoldings until the
// scatter stops improving.
MpcaModel mpca_fit(std::span<const Tensor> samples, const FitOptions& options);

// Smallest per-mode ranks keeping at least fraction q of the unfolding
// variation (squared singular values).
std::vector<std::size_t> choose_ranks(std::span<const Tensor> samples, double q);

std::vector<Tensor> project_features(std::span<const Tensor> samples,
                                     const MpcaModel& model, bool center = false);

// Shared numerical core, also driven by the federated protocol.
Matrix concat_unfoldings(std::span<const Tensor> centered, std::size_t mode);
Matrix concat_projected_unfoldings(std::span<const Tensor> centered, std::size_t mode,
                                   const ProjectionSet& projection);
std::size_t rank_for_variation(const std::vector<double>& singular_values, double q);
double scatter_of(std::span<const Tensor> centered, const ProjectionSet& projection);
void validate_samples(std::span<const Tensor> samples);

// Model directory layout: model.json manifest (dims, ranks, iterations,
// converged, scatter history) plus mean.tnsr and factor_<n>.tnsr.
void save_model(const std::string& dir, const MpcaModel& model);
MpcaModel load_model(const std::string& dir);

}  // namespace fmpca::mpca
