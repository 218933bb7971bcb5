#include "fmpca/mpca.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fmpca::mpca {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<Tensor> center_samples(std::span<const Tensor> samples, const Tensor& mean) {
  std::vector<Tensor> centered(samples.begin(), samples.end());
  for (Tensor& t : centered) sub_in_place(t, mean);
  return centered;
}

void validate_ranks(const std::vector<std::size_t>& ranks,
                    const std::vector<std::size_t>& dims) {
  if (ranks.size() != dims.size())
    throw std::invalid_argument("rank count does not match tensor order");
  for (std::size_t n = 0; n < ranks.size(); ++n) {
    if (ranks[n] == 0 || ranks[n] > dims[n])
      throw std::invalid_argument("rank out of range for mode " + std::to_string(n));
  }
}

}  // namespace

void validate_samples(std::span<const Tensor> samples) {
  if (samples.size() < 2)
    throw std::invalid_argument("at least two samples are required");
  const auto& dims = samples[0].dims();
  for (const Tensor& t : samples) {
    if (t.dims() != dims) throw std::invalid_argument("samples have inconsistent dims");
    if (!all_finite(t.values()))
      throw std::invalid_argument("samples contain non-finite values");
  }
}

Matrix concat_unfoldings(std::span<const Tensor> centered, std::size_t mode) {
  const Matrix first = matricize(centered[0], mode);
  Matrix out(first.rows(), first.cols() * centered.size());
  std::size_t at = 0;
  for (const Tensor& t : centered) {
    const Matrix xm = matricize(t, mode);
    std::copy(xm.data(), xm.data() + xm.size(), out.col(at));
    at += xm.cols();
  }
  return out;
}

Matrix concat_projected_unfoldings(std::span<const Tensor> centered, std::size_t mode,
                                   const ProjectionSet& projection) {
  const Matrix phi = other_modes_kron(projection, mode);
  const Matrix first = matricize(centered[0], mode);
  if (first.cols() != phi.rows())
    throw std::invalid_argument("projection set does not match tensor dims");
  Matrix out(first.rows(), phi.cols() * centered.size());
  std::size_t at = 0;
  for (const Tensor& t : centered) {
    const Matrix shrunk = matmul(matricize(t, mode), phi);
    std::copy(shrunk.data(), shrunk.data() + shrunk.size(), out.col(at));
    at += shrunk.cols();
  }
  return out;
}

std::size_t rank_for_variation(const std::vector<double>& singular_values, double q) {
  if (q <= 0.0 || q > 1.0) throw std::invalid_argument("variation fraction must be in (0, 1]");
  if (singular_values.empty()) throw std::invalid_argument("empty spectrum");
  double total = 0.0;
  for (double s : singular_values) total += s * s;
  if (total == 0.0) return 1;
  if (q >= 1.0) {
    std::size_t rank = 0;
    for (double s : singular_values)
      if (s > 1e-12 * singular_values[0]) ++rank;
    return std::max<std::size_t>(rank, 1);
  }
  const double target = q * total - 1e-12 * total;
  double cum = 0.0;
  for (std::size_t i = 0; i < singular_values.size(); ++i) {
    cum += singular_values[i] * singular_values[i];
    if (cum >= target) return i + 1;
  }
  return singular_values.size();
}

double scatter_of(std::span<const Tensor> centered, const ProjectionSet& projection) {
  double psi = 0.0;
  for (const Tensor& t : centered) {
    const Tensor y = multi_mode_project(t, projection, true);
    psi += inner_product(y, y);
  }
  return psi;
}

MpcaModel mpca_fit(std::span<const Tensor> samples, const FitOptions& options) {
  validate_samples(samples);
  const auto& dims = samples[0].dims();
  const std::size_t order = dims.size();

  MpcaModel model;
  model.mean = tensor_mean(samples);
  const std::vector<Tensor> centered = center_samples(samples, model.mean);

  std::vector<std::size_t> ranks = options.ranks;
  model.projection.factors.reserve(order);
  for (std::size_t n = 0; n < order; ++n) {
    const auto state = linalg::svd_full(concat_unfoldings(centered, n)).state;
    if (ranks.size() <= n) {
      if (options.variation <= 0.0)
        throw std::invalid_argument("either ranks or a variation fraction is required");
      ranks.push_back(rank_for_variation(state.s, options.variation));
    }
    model.projection.factors.push_back(linalg::truncate_left(state, ranks[n]));
  }
  validate_ranks(ranks, dims);

  model.scatter_history.push_back(scatter_of(centered, model.projection));
  const double eta_abs = options.eta * model.scatter_history[0];

  for (std::size_t k = 1; k <= options.max_iter; ++k) {
    for (std::size_t n = 0; n < order; ++n) {
      const auto state =
          linalg::svd_full(concat_projected_unfoldings(centered, n, model.projection)).state;
      model.projection.factors[n] = linalg::truncate_left(state, ranks[n]);
    }
    const double psi = scatter_of(centered, model.projection);
    model.scatter_history.push_back(psi);
    model.iterations_run = k;
    if (psi - model.scatter_history[k - 1] <= eta_abs) {
      model.converged = true;
      break;
    }
  }
  return model;
}

std::vector<std::size_t> choose_ranks(std::span<const Tensor> samples, double q) {
  validate_samples(samples);
  const Tensor mean = tensor_mean(samples);
  const std::vector<Tensor> centered = center_samples(samples, mean);
  std::vector<std::size_t> ranks;
  for (std::size_t n = 0; n < samples[0].order(); ++n) {
    const auto state = linalg::svd_full(concat_unfoldings(centered, n)).state;
    ranks.push_back(rank_for_variation(state.s, q));
  }
  return ranks;
}

std::vector<Tensor> project_features(std::span<const Tensor> samples,
                                     const MpcaModel& model, bool center) {
  std::vector<Tensor> features;
  features.reserve(samples.size());
  for (const Tensor& t : samples) {
    if (t.dims() != model.mean.dims())
      throw std::invalid_argument("sample dims do not match model");
    if (center) {
      Tensor c = t;
      sub_in_place(c, model.mean);
      features.push_back(multi_mode_project(c, model.projection, true));
    } else {
      features.push_back(multi_mode_project(t, model.projection, true));
    }
  }
  return features;
}

void save_model(const std::string& dir, const MpcaModel& model) {
  fs::create_directories(dir);
  json manifest;
  manifest["dims"] = model.mean.dims();
  manifest["ranks"] = model.projection.ranks();
  manifest["iterations"] = model.iterations_run;
  manifest["converged"] = model.converged;
  manifest["scatter_history"] = model.scatter_history;
  manifest["mean_file"] = "mean.tnsr";
  std::vector<std::string> factor_files;
  for (std::size_t n = 0; n < model.projection.factors.size(); ++n)
    factor_files.push_back("factor_" + std::to_string(n + 1) + ".tnsr");
  manifest["factor_files"] = factor_files;

  std::ofstream out(fs::path(dir) / "model.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write model manifest in " + dir);
  out << manifest.dump(2) << "\n";

  tnsr_save((fs::path(dir) / "mean.tnsr").string(), model.mean);
  for (std::size_t n = 0; n < model.projection.factors.size(); ++n)
    tnsr_save((fs::path(dir) / factor_files[n]).string(),
              matrix_to_tensor(model.projection.factors[n]));
}

MpcaModel load_model(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "model.json");
  if (!in) throw std::runtime_error("cannot open model manifest in " + dir);
  json manifest = json::parse(in);

  MpcaModel model;
  model.mean = tnsr_load((fs::path(dir) / manifest.at("mean_file").get<std::string>()).string());
  for (const auto& file : manifest.at("factor_files")) {
    model.projection.factors.push_back(
        tensor_to_matrix(tnsr_load((fs::path(dir) / file.get<std::string>()).string())));
  }
  model.iterations_run = manifest.at("iterations").get<std::size_t>();
  model.converged = manifest.at("converged").get<bool>();
  model.scatter_history = manifest.at("scatter_history").get<std::vector<double>>();
  return model;
}

}  // namespace fmpca::mpca
