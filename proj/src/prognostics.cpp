#include "fmpca/prognostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "fmpca/kernels.hpp"
#include "fmpca/linalg.hpp"
#include "fmpca/rng.hpp"

namespace fmpca::prog {

namespace {

using nlohmann::json;

constexpr std::uint64_t kLlsMaskTag = 0x6c6c736dULL;
constexpr std::uint64_t kLlsScaleMaskTag = 0x6c6c7373ULL;

double transform_ttf(double ttf, Family family) {
  if (!(ttf > 0.0)) throw std::invalid_argument("time-to-failure must be positive");
  return family == Family::lognormal ? std::log(ttf) : ttf;
}

struct SufficientStats {
  Matrix gram;             // X^T X over rows [1, vec(y)]
  std::vector<double> xz;  // X^T z
  std::size_t count = 0;
};

SufficientStats accumulate_stats(std::span<const Tensor> features,
                                 std::span<const double> ttfs, Family family) {
  if (features.size() != ttfs.size())
    throw std::invalid_argument("feature and ttf counts differ");
  if (features.empty()) throw std::invalid_argument("empty training set");
  const std::size_t p = features[0].size();
  const std::size_t q = p + 1;

  SufficientStats stats;
  stats.gram = Matrix(q, q);
  stats.xz.assign(q, 0.0);
  stats.count = features.size();

  std::vector<double> row(q);
  for (std::size_t m = 0; m < features.size(); ++m) {
    if (features[m].size() != p)
      throw std::invalid_argument("features have inconsistent length");
    const double z = transform_ttf(ttfs[m], family);
    row[0] = 1.0;
    std::copy(features[m].data(), features[m].data() + p, row.begin() + 1);
    for (std::size_t j = 0; j < q; ++j) {
      kernels::axpy(row[j], row.data(), stats.gram.col(j), q);
      stats.xz[j] += row[j] * z;
    }
  }
  return stats;
}

// Solves gram * beta = xz through a diagonally-scaled symmetric
// eigendecomposition; throws on a rank-deficient design.
std::vector<double> solve_normal_equations(const Matrix& gram,
                                           const std::vector<double>& xz) {
  const std::size_t q = gram.rows();
  std::vector<double> scale(q);
  for (std::size_t i = 0; i < q; ++i) {
    const double d = gram(i, i);
    if (!(d > 0.0)) throw std::runtime_error("rank-deficient design");
    scale[i] = std::sqrt(d);
  }
  Matrix scaled(q, q);
  for (std::size_t j = 0; j < q; ++j)
    for (std::size_t i = 0; i < q; ++i)
      scaled(i, j) = gram(i, j) / (scale[i] * scale[j]);

  const auto eig = linalg::sym_eig(scaled);
  const double lambda_max = eig.values.empty() ? 0.0 : eig.values[0];
  if (!(lambda_max > 0.0)) throw std::runtime_error("rank-deficient design");

  std::vector<double> rhs(q);
  for (std::size_t i = 0; i < q; ++i) rhs[i] = xz[i] / scale[i];
  std::vector<double> beta(q, 0.0);
  for (std::size_t j = 0; j < q; ++j) {
    if (eig.values[j] <= 1e-12 * lambda_max) throw std::runtime_error("rank-deficient design");
    const double coef =
        kernels::dot(eig.vectors.col(j), rhs.data(), q) / eig.values[j];
    kernels::axpy(coef, eig.vectors.col(j), beta.data(), q);
  }
  for (std::size_t i = 0; i < q; ++i) beta[i] /= scale[i];
  return beta;
}

ProgModel model_from_stats(const SufficientStats& stats, Family family,
                           const std::vector<std::size_t>& feature_dims) {
  const std::vector<double> beta = solve_normal_equations(stats.gram, stats.xz);
  ProgModel model;
  model.family = family;
  model.beta0 = beta[0];
  model.beta1.assign(beta.begin() + 1, beta.end());
  model.feature_dims = feature_dims;
  return model;
}

// Residual sum of squares computed directly from the rows; the quadratic-form
// expression in the sufficient statistics cancels catastrophically for
// near-interpolating fits.
double residual_sum(const ProgModel& model, std::span<const Tensor> features,
                    std::span<const double> ttfs) {
  double rss = 0.0;
  for (std::size_t m = 0; m < features.size(); ++m) {
    const double z = transform_ttf(ttfs[m], model.family);
    const double loc = model.beta0 + kernels::dot(features[m].data(), model.beta1.data(),
                                                  model.beta1.size());
    rss += (z - loc) * (z - loc);
  }
  return rss;
}

std::vector<double> flatten_params(const ProgModel& m) {
  std::vector<double> theta;
  theta.push_back(m.beta0);
  theta.insert(theta.end(), m.beta1.begin(), m.beta1.end());
  theta.push_back(std::log(std::max(m.sigma, 1e-10)));
  return theta;
}

void unflatten_params(std::span<const double> theta, ProgModel& m) {
  m.beta0 = theta[0];
  m.beta1.assign(theta.begin() + 1, theta.end() - 1);
  m.sigma = std::exp(theta.back());
}

// Damped Newton ascent of the sev log-likelihood over (beta, log sigma).
void fit_sev(ProgModel& model, std::span<const Tensor> features,
             std::span<const double> ttfs) {
  const std::size_t dim = model.beta1.size() + 2;
  std::vector<double> theta = flatten_params(model);
  ProgModel work = model;
  unflatten_params(theta, work);  // keeps sigma strictly positive

  double value = sev_loglik(work, features, ttfs);
  for (int iter = 0; iter < 200; ++iter) {
    const std::vector<double> grad = sev_loglik_gradient(work, features, ttfs);
    double gmax = 0.0;
    for (double g : grad) gmax = std::max(gmax, std::abs(g));
    if (gmax <= 1e-9) break;

    // Hessian of the log-likelihood.
    const std::size_t q = model.beta1.size() + 1;
    Matrix hess(dim, dim);
    std::vector<double> row(q);
    const double sigma = work.sigma;
    for (std::size_t m = 0; m < features.size(); ++m) {
      row[0] = 1.0;
      std::copy(features[m].data(), features[m].data() + q - 1, row.begin() + 1);
      const double z = transform_ttf(ttfs[m], work.family);
      double loc = work.beta0;
      loc += kernels::dot(features[m].data(), work.beta1.data(), work.beta1.size());
      const double eps = (z - loc) / sigma;
      const double e = std::exp(std::min(eps, 700.0));
      for (std::size_t a = 0; a < q; ++a) {
        for (std::size_t b = 0; b < q; ++b)
          hess(a, b) -= e * row[a] * row[b] / (sigma * sigma);
        const double cross = -(eps * e + e - 1.0) / sigma * row[a];
        hess(a, q) += cross;
        hess(q, a) += cross;
      }
      hess(q, q) += eps * (1.0 - e) - eps * eps * e;
    }

    // Solve (-hess + damping) * step = grad, growing the damping until the
    // step improves the likelihood.
    bool accepted = false;
    for (double damping = 0.0; damping < 1e8; damping = damping == 0.0 ? 1e-8 : damping * 10) {
      Matrix lhs(dim, dim);
      for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t b = 0; b < dim; ++b) lhs(a, b) = -hess(a, b) + (a == b ? damping : 0.0);
      std::vector<double> step;
      try {
        step = solve_normal_equations(lhs, grad);
      } catch (const std::runtime_error&) {
        continue;
      }
      std::vector<double> trial(theta);
      for (std::size_t i = 0; i < dim; ++i) trial[i] += step[i];
      ProgModel trial_model = work;
      unflatten_params(trial, trial_model);
      const double trial_value = sev_loglik(trial_model, features, ttfs);
      if (std::isfinite(trial_value) && trial_value >= value) {
        theta = std::move(trial);
        work = trial_model;
        value = trial_value;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  model = work;
}

Tensor stats_to_tensor(const SufficientStats& stats) {
  const std::size_t q = stats.gram.rows();
  std::vector<double> flat;
  flat.reserve(q * q + q);
  flat.insert(flat.end(), stats.gram.data(), stats.gram.data() + q * q);
  flat.insert(flat.end(), stats.xz.begin(), stats.xz.end());
  const std::size_t len = flat.size();
  return Tensor({len}, std::move(flat));
}

SufficientStats stats_from_tensor(const Tensor& t, std::size_t q, std::size_t count) {
  SufficientStats stats;
  stats.gram = Matrix(q, q, std::vector<double>(t.data(), t.data() + q * q));
  stats.xz.assign(t.data() + q * q, t.data() + q * q + q);
  stats.count = count;
  return stats;
}

}  // namespace

Family family_from_name(const std::string& name) {
  if (name == "normal") return Family::normal;
  if (name == "lognormal") return Family::lognormal;
  if (name == "sev") return Family::sev;
  throw std::invalid_argument("unknown family: " + name);
}

std::string_view family_name(Family family) {
  switch (family) {
    case Family::normal: return "normal";
    case Family::lognormal: return "lognormal";
    case Family::sev: return "sev";
  }
  return "unknown";
}

ProgModel lls_fit(std::span<const Tensor> features, std::span<const double> ttfs,
                  Family family) {
  if (features.empty()) throw std::invalid_argument("empty training set");
  const std::size_t p = features[0].size();
  if (features.size() < p + 2)
    throw std::invalid_argument("need at least feature_len + 2 samples");
  const SufficientStats stats = accumulate_stats(features, ttfs, family);
  ProgModel model = model_from_stats(stats, family, features[0].dims());
  model.sigma =
      std::sqrt(residual_sum(model, features, ttfs) / static_cast<double>(features.size()));
  if (family == Family::sev) fit_sev(model, features, ttfs);
  return model;
}

ProgModel fed_lls_fit(std::vector<ProgParticipant>& users, fed::Transport& bus,
                      Family family, std::uint64_t seed) {
  if (family == Family::sev)
    throw std::invalid_argument("federated fitting supports normal and lognormal only");
  if (users.empty()) throw std::invalid_argument("no participants");

  const std::size_t p = users[0].features.empty() ? 0 : users[0].features[0].size();
  const std::size_t q = p + 1;
  const std::size_t block = q * q + q;

  std::vector<SufficientStats> local;
  std::size_t total = 0;
  for (auto& u : users) {
    if (u.features.empty()) throw std::invalid_argument("participant holds no samples");
    local.push_back(accumulate_stats({u.features.data(), u.features.size()},
                                     {u.ttfs.data(), u.ttfs.size()}, family));
    total += u.ttfs.size();
  }
  if (total < p + 2) throw std::invalid_argument("need at least feature_len + 2 samples");

  // Pairwise antisymmetric masks, one block stream for the statistics and one
  // scalar stream for the residual round.
  const auto mask_block = [&](int from, int to, std::uint64_t tag, std::size_t len) {
    rng::Stream stream(rng::derive_key({seed, tag,
                                        static_cast<std::uint64_t>(std::min(from, to)),
                                        static_cast<std::uint64_t>(std::max(from, to)),
                                        from < to ? 0ULL : 1ULL}));
    Tensor t({len});
    for (std::size_t i = 0; i < len; ++i) t[i] = stream.next_double();
    return t;
  };

  const auto exchange_masked = [&](std::uint64_t tag, const std::vector<Tensor>& raw) {
    const std::size_t len = raw[0].size();
    if (users.size() > 1) {
      for (const auto& from : users)
        for (const auto& to : users)
          if (from.user_id != to.user_id)
            bus.send({from.user_id, to.user_id, "lls", fed::PayloadKind::mask_tensor,
                      tnsr_encode(mask_block(from.user_id, to.user_id, tag, len))});
    }
    for (std::size_t i = 0; i < users.size(); ++i) {
      Tensor masked = raw[i];
      if (users.size() > 1) {
        for (const auto& other : users) {
          if (other.user_id == users[i].user_id) continue;
          const Tensor sent = mask_block(users[i].user_id, other.user_id, tag, len);
          const Tensor received =
              tnsr_decode(bus.receive(other.user_id, users[i].user_id).payload);
          for (std::size_t e = 0; e < len; ++e) masked[e] += sent[e] - received[e];
        }
      }
      bus.send({users[i].user_id, fed::kServerId, "lls", fed::PayloadKind::masked_mean,
                fed::encode_counted_tensor(masked, users[i].ttfs.size())});
    }
    Tensor aggregate({len});
    std::size_t count = 0;
    for (const auto& u : users) {
      auto [t, c] = fed::decode_counted_tensor(bus.receive(u.user_id, fed::kServerId).payload);
      add_in_place(aggregate, t);
      count += static_cast<std::size_t>(c);
    }
    return std::make_pair(aggregate, count);
  };

  std::vector<Tensor> stat_blocks;
  for (const auto& s : local) stat_blocks.push_back(stats_to_tensor(s));
  const auto [stat_sum, count] = exchange_masked(kLlsMaskTag, stat_blocks);
  ProgModel model =
      model_from_stats(stats_from_tensor(stat_sum, q, count), family,
                       users[0].features[0].dims());

  // The server returns the solved coefficients; users answer with masked
  // local residual sums, from which the server recovers the 1/M scale.
  std::vector<double> beta_flat;
  beta_flat.push_back(model.beta0);
  beta_flat.insert(beta_flat.end(), model.beta1.begin(), model.beta1.end());
  const Tensor beta_tensor({q}, beta_flat);
  std::vector<Tensor> rss_blocks;
  for (const auto& u : users) {
    bus.send({fed::kServerId, u.user_id, "lls", fed::PayloadKind::masked_mean,
              fed::encode_counted_tensor(beta_tensor, count)});
  }
  for (auto& u : users) {
    const Tensor beta_local =
        fed::decode_counted_tensor(bus.receive(fed::kServerId, u.user_id).payload).first;
    ProgModel local_model = model;
    local_model.beta0 = beta_local[0];
    local_model.beta1.assign(beta_local.data() + 1, beta_local.data() + q);
    const double rss = residual_sum(local_model, {u.features.data(), u.features.size()},
                                    {u.ttfs.data(), u.ttfs.size()});
    rss_blocks.push_back(Tensor({1}, {rss}));
  }
  const auto [rss_sum, rss_count] = exchange_masked(kLlsScaleMaskTag, rss_blocks);
  model.sigma = std::sqrt(std::max(rss_sum[0], 0.0) / static_cast<double>(rss_count));
  return model;
}

Prediction predict_ttf(const ProgModel& model, const Tensor& feature) {
  if (feature.size() != model.beta1.size())
    throw std::invalid_argument("feature dims do not match model");
  Prediction out;
  out.location =
      model.beta0 + kernels::dot(feature.data(), model.beta1.data(), model.beta1.size());
  out.scale = model.sigma;
  switch (model.family) {
    case Family::normal:
      out.point = out.location;
      break;
    case Family::lognormal:
      out.point = std::exp(out.location);
      break;
    case Family::sev:
      out.point = out.location + model.sigma * std::log(std::log(2.0));
      break;
  }
  return out;
}

double prediction_error(double estimated, double true_ttf) {
  if (!(true_ttf > 0.0)) throw std::invalid_argument("true ttf must be positive");
  return std::abs(estimated - true_ttf) / true_ttf;
}

std::vector<AssetRecord> truncate_training(std::span<const AssetRecord> assets,
                                           std::size_t i_t) {
  if (i_t == 0) throw std::invalid_argument("frame count must be >= 1");
  std::vector<AssetRecord> out;
  for (const AssetRecord& a : assets) {
    const auto& dims = a.degradation.dims();
    if (dims.back() < i_t) continue;
    std::vector<std::size_t> new_dims = dims;
    new_dims.back() = i_t;
    std::size_t frame = 1;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) frame *= dims[k];
    std::vector<double> data(a.degradation.data(), a.degradation.data() + frame * i_t);
    out.push_back({a.id, Tensor(new_dims, std::move(data)), a.ttf});
  }
  return out;
}

double sev_loglik(const ProgModel& model, std::span<const Tensor> features,
                  std::span<const double> ttfs) {
  double ll = 0.0;
  const double logsigma = std::log(model.sigma);
  for (std::size_t m = 0; m < features.size(); ++m) {
    const double z = transform_ttf(ttfs[m], model.family);
    const double loc = model.beta0 + kernels::dot(features[m].data(), model.beta1.data(),
                                                  model.beta1.size());
    const double eps = (z - loc) / model.sigma;
    if (eps > 700.0) return -std::numeric_limits<double>::infinity();
    ll += -logsigma + eps - std::exp(eps);
  }
  return ll;
}

std::vector<double> sev_loglik_gradient(const ProgModel& model,
                                        std::span<const Tensor> features,
                                        std::span<const double> ttfs) {
  const std::size_t p = model.beta1.size();
  std::vector<double> grad(p + 2, 0.0);
  for (std::size_t m = 0; m < features.size(); ++m) {
    const double z = transform_ttf(ttfs[m], model.family);
    const double loc =
        model.beta0 + kernels::dot(features[m].data(), model.beta1.data(), p);
    const double eps = (z - loc) / model.sigma;
    const double e = std::exp(std::min(eps, 700.0));
    const double w = (e - 1.0) / model.sigma;
    grad[0] += w;
    for (std::size_t j = 0; j < p; ++j) grad[1 + j] += w * features[m][j];
    grad[p + 1] += -1.0 + eps * (e - 1.0);
  }
  return grad;
}

void save_prog_model(const std::string& path, const ProgModel& model) {
  json j;
  j["family"] = std::string(family_name(model.family));
  j["beta0"] = model.beta0;
  j["beta1"] = model.beta1;
  j["sigma"] = model.sigma;
  j["feature_dims"] = model.feature_dims;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write prognostic model: " + path);
  out << j.dump(2) << "\n";
}

ProgModel load_prog_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open prognostic model: " + path);
  json j = json::parse(in);
  ProgModel model;
  model.family = family_from_name(j.at("family").get<std::string>());
  model.beta0 = j.at("beta0").get<double>();
  model.beta1 = j.at("beta1").get<std::vector<double>>();
  model.sigma = j.at("sigma").get<double>();
  model.feature_dims = j.at("feature_dims").get<std::vector<std::size_t>>();
  return model;
}

}  // namespace fmpca::prog
