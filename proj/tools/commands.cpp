#include "commands.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "fmpca/datagen.hpp"
#include "fmpca/fed.hpp"
#include "fmpca/kernels.hpp"
#include "fmpca/mpca.hpp"
#include "fmpca/prognostics.hpp"
#include "fmpca/rng.hpp"

namespace fmpca::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::uint64_t kBenchTag = 0x62656e6368ULL;

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string join_sizes(const std::vector<std::size_t>& v, char sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out.push_back(sep);
    out += std::to_string(v[i]);
  }
  return out;
}

int run_guarded(const char* what, const std::function<void()>& body) {
  try {
    body();
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << what << ": config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const json::exception& e) {
    std::cerr << what << ": config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << what << ": config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << what << ": numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  }
}

json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  return json::parse(in);
}

// Type-7 quantile (linear interpolation between order statistics).
double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double h = p * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

struct MethodOutcome {
  std::string name;
  std::vector<std::size_t> ranks;
  std::vector<double> predictions;  // per test asset
  std::vector<double> errors;
  std::vector<double> scatter;
  std::size_t iterations = 0;
  bool converged = false;
};

struct Evaluation {
  std::vector<Tensor> train_tensors;
  std::vector<double> train_ttfs;
  std::vector<Tensor> test_tensors;
  std::vector<double> test_ttfs;
  std::vector<std::string> test_ids;
};

// Variation-selected ranks, trimmed so the downstream regression stays
// determined (feature count <= training size - 2). The largest rank shrinks
// first; the report records what was actually used.
std::vector<std::size_t> resolve_method_ranks(const Evaluation& eval,
                                              const mpca::FitOptions& base) {
  if (!base.ranks.empty()) return base.ranks;
  std::vector<std::size_t> ranks = mpca::choose_ranks(
      {eval.train_tensors.data(), eval.train_tensors.size()}, base.variation);
  const std::size_t cap =
      eval.train_tensors.size() >= 3 ? eval.train_tensors.size() - 2 : 1;
  const auto product = [&] {
    std::size_t p = 1;
    for (std::size_t r : ranks) p *= r;
    return p;
  };
  while (product() > cap) {
    std::size_t arg = ranks.size();
    std::size_t best = 1;
    for (std::size_t n = 0; n < ranks.size(); ++n) {
      if (ranks[n] > best) {
        best = ranks[n];
        arg = n;
      }
    }
    if (arg == ranks.size()) break;
    --ranks[arg];
  }
  return ranks;
}

MethodOutcome central_fit_eval(const std::string& name, const Evaluation& eval,
                               const mpca::FitOptions& base, prog::Family family) {
  MethodOutcome out;
  out.name = name;
  mpca::FitOptions opts = base;
  opts.ranks = resolve_method_ranks(eval, base);
  const mpca::MpcaModel model =
      mpca::mpca_fit({eval.train_tensors.data(), eval.train_tensors.size()}, opts);
  out.ranks = model.projection.ranks();
  out.scatter = model.scatter_history;
  out.iterations = model.iterations_run;
  out.converged = model.converged;

  const std::vector<Tensor> features =
      mpca::project_features({eval.train_tensors.data(), eval.train_tensors.size()}, model);
  const prog::ProgModel prog_model =
      prog::lls_fit({features.data(), features.size()},
                    {eval.train_ttfs.data(), eval.train_ttfs.size()}, family);

  out.predictions.reserve(eval.test_tensors.size());
  for (std::size_t i = 0; i < eval.test_tensors.size(); ++i) {
    const Tensor y = multi_mode_project(eval.test_tensors[i], model.projection, true);
    const double point = prog::predict_ttf(prog_model, y).point;
    out.predictions.push_back(point);
    out.errors.push_back(prog::prediction_error(point, eval.test_ttfs[i]));
  }
  return out;
}

MethodOutcome federated_fit_eval(const std::string& name, const Evaluation& eval,
                                 const std::vector<std::size_t>& split,
                                 const mpca::FitOptions& base, prog::Family family,
                                 std::uint64_t seed) {
  if (std::accumulate(split.begin(), split.end(), std::size_t{0}) != eval.train_tensors.size())
    throw std::invalid_argument("split does not sum to the training size");
  mpca::FitOptions opts = base;
  opts.ranks = resolve_method_ranks(eval, base);

  std::vector<fed::Participant> participants;
  std::vector<std::vector<double>> ttfs_by_user;
  std::size_t at = 0;
  for (std::size_t d = 0; d < split.size(); ++d) {
    fed::Participant p;
    p.user_id = static_cast<int>(d + 1);
    p.samples.assign(eval.train_tensors.begin() + at,
                     eval.train_tensors.begin() + at + split[d]);
    ttfs_by_user.push_back(std::vector<double>(eval.train_ttfs.begin() + at,
                                               eval.train_ttfs.begin() + at + split[d]));
    at += split[d];
    participants.push_back(std::move(p));
  }

  fed::Server server;
  fed::InMemoryBus bus;
  fed::FedConfig cfg;
  cfg.ranks = opts.ranks;
  cfg.variation = opts.variation;
  cfg.eta = opts.eta;
  cfg.max_iter = opts.max_iter;
  cfg.seed = seed;
  const fed::FedResult result = fed::fed_mpca(participants, server, bus, cfg);

  MethodOutcome out;
  out.name = name;
  out.ranks = result.projection.ranks();
  out.scatter = result.scatter_history;
  out.iterations = result.iterations_run;
  out.converged = result.converged;

  std::vector<prog::ProgParticipant> prog_users;
  for (std::size_t d = 0; d < split.size(); ++d) {
    prog::ProgParticipant u;
    u.user_id = static_cast<int>(d + 1);
    u.features = result.features[d];
    u.ttfs = ttfs_by_user[d];
    prog_users.push_back(std::move(u));
  }
  const prog::ProgModel prog_model = prog::fed_lls_fit(prog_users, bus, family, seed);

  out.predictions.reserve(eval.test_tensors.size());
  for (std::size_t i = 0; i < eval.test_tensors.size(); ++i) {
    const Tensor y = multi_mode_project(eval.test_tensors[i], result.projection, true);
    const double point = prog::predict_ttf(prog_model, y).point;
    out.predictions.push_back(point);
    out.errors.push_back(prog::prediction_error(point, eval.test_ttfs[i]));
  }
  return out;
}

double cv_score_central(const Evaluation& eval, const mpca::FitOptions& opts,
                        prog::Family family, std::size_t folds) {
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    Evaluation sub;
    for (std::size_t i = 0; i < eval.train_tensors.size(); ++i) {
      if (i % folds == f) {
        sub.test_tensors.push_back(eval.train_tensors[i]);
        sub.test_ttfs.push_back(eval.train_ttfs[i]);
      } else {
        sub.train_tensors.push_back(eval.train_tensors[i]);
        sub.train_ttfs.push_back(eval.train_ttfs[i]);
      }
    }
    if (sub.test_tensors.empty() || sub.train_tensors.size() < 2) continue;
    try {
      const MethodOutcome outcome = central_fit_eval("cv", sub, opts, family);
      for (double e : outcome.errors) total += e;
      counted += outcome.errors.size();
    } catch (const std::exception&) {
      return std::numeric_limits<double>::infinity();
    }
  }
  return counted == 0 ? std::numeric_limits<double>::infinity()
                      : total / static_cast<double>(counted);
}

double cv_score_federated(const Evaluation& eval, const std::vector<std::size_t>& split,
                          const mpca::FitOptions& opts, prog::Family family,
                          std::uint64_t seed, std::size_t folds) {
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    Evaluation sub;
    std::vector<std::size_t> sub_split;
    std::size_t at = 0;
    std::vector<std::size_t> holdout;
    for (std::size_t d = 0; d < split.size(); ++d) {
      std::size_t kept = 0;
      for (std::size_t i = 0; i < split[d]; ++i) {
        const std::size_t idx = at + i;
        if (i % folds == f) {
          holdout.push_back(idx);
        } else {
          sub.train_tensors.push_back(eval.train_tensors[idx]);
          sub.train_ttfs.push_back(eval.train_ttfs[idx]);
          ++kept;
        }
      }
      sub_split.push_back(kept);
      at += split[d];
    }
    for (std::size_t idx : holdout) {
      sub.test_tensors.push_back(eval.train_tensors[idx]);
      sub.test_ttfs.push_back(eval.train_ttfs[idx]);
    }
    if (sub.test_tensors.empty()) continue;
    for (std::size_t kept : sub_split)
      if (kept == 0) return std::numeric_limits<double>::infinity();
    try {
      const MethodOutcome outcome =
          federated_fit_eval("cv", sub, sub_split, opts, family, seed);
      for (double e : outcome.errors) total += e;
      counted += outcome.errors.size();
    } catch (const std::exception&) {
      return std::numeric_limits<double>::infinity();
    }
  }
  return counted == 0 ? std::numeric_limits<double>::infinity()
                      : total / static_cast<double>(counted);
}

struct BenchmarkConfig {
  datagen::SimConfig generator;
  bool has_generator = false;
  std::string dataset_dir;
  std::size_t replications = 10;
  std::vector<std::size_t> train_split;
  std::size_t test_count = 0;
  std::vector<std::size_t> ranks;
  double variation = 0.97;
  double eta = 1e-6;
  std::size_t max_iter = 10;
  std::uint64_t seed = 0;
  prog::Family family = prog::Family::lognormal;
  std::vector<std::string> methods;
  bool cv = false;
  std::vector<double> cv_grid = {0.90, 0.95, 0.97, 0.99};
};

BenchmarkConfig parse_benchmark_config(const std::string& path) {
  const json j = parse_json_file(path);
  BenchmarkConfig cfg;
  if (j.contains("dataset")) {
    cfg.generator = datagen::config_from_json_text(j.at("dataset").dump());
    cfg.has_generator = true;
  } else if (j.contains("dataset_dir")) {
    cfg.dataset_dir = j.at("dataset_dir").get<std::string>();
  } else {
    throw ConfigError("benchmark config needs either dataset or dataset_dir");
  }
  if (j.contains("replications")) cfg.replications = j.at("replications").get<std::size_t>();
  if (!j.contains("train_split")) throw ConfigError("benchmark config needs train_split");
  cfg.train_split = j.at("train_split").get<std::vector<std::size_t>>();
  if (cfg.train_split.empty()) throw ConfigError("train_split must be nonempty");
  if (!j.contains("test_count")) throw ConfigError("benchmark config needs test_count");
  cfg.test_count = j.at("test_count").get<std::size_t>();
  if (cfg.test_count == 0) throw ConfigError("test_count must be >= 1");
  if (j.contains("ranks")) cfg.ranks = j.at("ranks").get<std::vector<std::size_t>>();
  if (j.contains("variation")) cfg.variation = j.at("variation").get<double>();
  if (j.contains("eta")) cfg.eta = j.at("eta").get<double>();
  if (j.contains("max_iter")) cfg.max_iter = j.at("max_iter").get<std::size_t>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("family"))
    cfg.family = prog::family_from_name(j.at("family").get<std::string>());
  if (j.contains("methods")) cfg.methods = j.at("methods").get<std::vector<std::string>>();
  if (j.contains("cv")) cfg.cv = j.at("cv").get<bool>();
  if (j.contains("cv_grid")) cfg.cv_grid = j.at("cv_grid").get<std::vector<double>>();
  return cfg;
}

struct RepOutcome {
  std::size_t rep = 0;
  std::vector<MethodOutcome> methods;
  std::vector<std::string> test_ids;
  std::vector<double> test_ttfs;
};

RepOutcome run_replication(std::size_t rep, const BenchmarkConfig& cfg,
                           const std::vector<datagen::SyntheticAsset>& assets) {
  const std::size_t train_total =
      std::accumulate(cfg.train_split.begin(), cfg.train_split.end(), std::size_t{0});

  // Seeded shuffle; each replication owns an independent stream.
  std::vector<std::size_t> idx(assets.size());
  std::iota(idx.begin(), idx.end(), 0);
  rng::Stream stream(rng::derive_key({cfg.seed, kBenchTag, rep}));
  for (std::size_t i = assets.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(stream.next_u64() % i);
    std::swap(idx[i - 1], idx[j]);
  }

  Evaluation eval;
  for (std::size_t i = 0; i < train_total; ++i) {
    eval.train_tensors.push_back(assets[idx[i]].images);
    eval.train_ttfs.push_back(assets[idx[i]].ttf);
  }
  for (std::size_t i = 0; i < cfg.test_count; ++i) {
    const auto& a = assets[idx[train_total + i]];
    eval.test_tensors.push_back(a.images);
    eval.test_ttfs.push_back(a.ttf);
    eval.test_ids.push_back(a.id);
  }

  const auto wants = [&](const std::string& name) {
    return cfg.methods.empty() ||
           std::find(cfg.methods.begin(), cfg.methods.end(), name) != cfg.methods.end();
  };

  mpca::FitOptions base;
  base.ranks = cfg.ranks;
  base.variation = cfg.variation;
  base.eta = cfg.eta;
  base.max_iter = cfg.max_iter;

  const auto tune = [&](const std::function<double(const mpca::FitOptions&)>& score) {
    mpca::FitOptions opts = base;
    if (!cfg.cv || !cfg.ranks.empty()) return opts;
    double best = std::numeric_limits<double>::infinity();
    double best_q = cfg.variation;
    for (double q : cfg.cv_grid) {
      mpca::FitOptions candidate = base;
      candidate.variation = q;
      const double s = score(candidate);
      if (s < best) {
        best = s;
        best_q = q;
      }
    }
    opts.variation = best_q;
    return opts;
  };

  RepOutcome out;
  out.rep = rep;
  out.test_ids = eval.test_ids;
  out.test_ttfs = eval.test_ttfs;

  if (wants("fmpca")) {
    const mpca::FitOptions opts = tune([&](const mpca::FitOptions& o) {
      return cv_score_federated(eval, cfg.train_split, o, cfg.family, cfg.seed, 10);
    });
    out.methods.push_back(
        federated_fit_eval("fmpca", eval, cfg.train_split, opts, cfg.family, cfg.seed));
  }
  if (wants("combined")) {
    const mpca::FitOptions opts = tune(
        [&](const mpca::FitOptions& o) { return cv_score_central(eval, o, cfg.family, 10); });
    out.methods.push_back(central_fit_eval("combined", eval, opts, cfg.family));
  }
  std::size_t at = 0;
  for (std::size_t d = 0; d < cfg.train_split.size(); ++d) {
    const std::string name = "user_" + std::to_string(d + 1);
    if (wants(name)) {
      Evaluation sub;
      sub.train_tensors.assign(eval.train_tensors.begin() + at,
                               eval.train_tensors.begin() + at + cfg.train_split[d]);
      sub.train_ttfs.assign(eval.train_ttfs.begin() + at,
                            eval.train_ttfs.begin() + at + cfg.train_split[d]);
      sub.test_tensors = eval.test_tensors;
      sub.test_ttfs = eval.test_ttfs;
      const mpca::FitOptions opts = tune(
          [&](const mpca::FitOptions& o) { return cv_score_central(sub, o, cfg.family, 10); });
      out.methods.push_back(central_fit_eval(name, sub, opts, cfg.family));
    }
    at += cfg.train_split[d];
  }
  return out;
}

const MethodOutcome* find_method(const RepOutcome& rep, const std::string& name) {
  for (const auto& m : rep.methods)
    if (m.name == name) return &m;
  return nullptr;
}

}  // namespace

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
  return run_guarded("gen-data", [&] {
    datagen::SimConfig cfg;
    try {
      cfg = datagen::config_from_json_file(config_path);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    } catch (const std::runtime_error& e) {
      throw ConfigError(e.what());
    }
    const auto assets = datagen::generate_dataset(cfg);
    datagen::write_dataset(out_dir, cfg, assets);
    std::cout << "wrote " << assets.size() << " assets to " << out_dir << "\n";
  });
}

namespace {

void save_fit_outputs(const std::string& out_dir, const mpca::MpcaModel& model,
                      const prog::ProgModel* prog_model, const json& info,
                      const std::vector<fed::RoundMessage>* log) {
  fs::create_directories(out_dir);
  mpca::save_model(out_dir, model);
  if (prog_model != nullptr)
    prog::save_prog_model((fs::path(out_dir) / "prog_model.json").string(), *prog_model);
  std::ofstream meta(fs::path(out_dir) / "fit.json", std::ios::trunc);
  meta << info.dump(2) << "\n";
  if (log != nullptr) {
    std::ofstream messages(fs::path(out_dir) / "messages.jsonl", std::ios::trunc);
    fed::write_message_log(messages, *log);
  }
}

void fit_from_run_config(const FitArgs& args) {
  const json j = parse_json_file(args.run_config);
  const fs::path base = fs::path(args.run_config).parent_path();

  if (j.contains("mask_distribution") &&
      j.at("mask_distribution").get<std::string>() != "uniform")
    throw ConfigError("only the uniform mask distribution is supported");

  std::vector<fed::Participant> participants;
  for (const auto& user : j.at("users")) {
    fed::Participant p;
    p.user_id = user.at("id").get<int>();
    if (user.contains("sample_files")) {
      for (const auto& f : user.at("sample_files"))
        p.samples.push_back(tnsr_load((base / f.get<std::string>()).string()));
    } else if (user.contains("generator")) {
      const auto& gen = user.at("generator");
      const auto cfg =
          datagen::config_from_json_file((base / gen.at("config").get<std::string>()).string());
      const auto assets = datagen::generate_dataset(cfg);
      const std::size_t first = gen.at("first").get<std::size_t>();
      const std::size_t count = gen.at("count").get<std::size_t>();
      if (first + count > assets.size())
        throw ConfigError("generator range exceeds asset count");
      for (std::size_t i = first; i < first + count; ++i)
        p.samples.push_back(assets[i].images);
    } else {
      throw ConfigError("user entry needs sample_files or generator");
    }
    participants.push_back(std::move(p));
  }

  fed::FedConfig cfg;
  if (j.contains("ranks")) cfg.ranks = j.at("ranks").get<std::vector<std::size_t>>();
  if (j.contains("variation")) cfg.variation = j.at("variation").get<double>();
  if (cfg.ranks.empty() && cfg.variation <= 0.0) cfg.variation = 0.97;
  if (j.contains("eta")) cfg.eta = j.at("eta").get<double>();
  if (j.contains("max_iter")) cfg.max_iter = j.at("max_iter").get<std::size_t>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.mask_scatter = args.mask_scatter;

  fed::Server server;
  fed::InMemoryBus bus;
  const fed::FedResult result = fed::fed_mpca(participants, server, bus, cfg);

  mpca::MpcaModel model;
  model.mean = result.mean;
  model.projection = result.projection;
  model.scatter_history = result.scatter_history;
  model.iterations_run = result.iterations_run;
  model.converged = result.converged;

  json info;
  info["mode"] = "federated";
  info["users"] = participants.size();
  info["seed"] = cfg.seed;
  info["converged"] = result.converged;
  info["iterations"] = result.iterations_run;
  save_fit_outputs(args.out_dir, model, nullptr, info, &bus.log());
  std::cout << "federated fit: " << participants.size() << " users, "
            << result.iterations_run << " iterations, converged="
            << (result.converged ? "yes" : "no") << "\n";
}

}  // namespace

int cmd_fit(const FitArgs& args) {
  return run_guarded("fit", [&] {
    if (args.out_dir.empty()) throw ConfigError("--out is required");
    if (!args.run_config.empty()) {
      fit_from_run_config(args);
      return;
    }
    if (args.dataset_dir.empty())
      throw ConfigError("either --dataset or --config is required");
    if (args.mode != "central" && args.mode != "federated")
      throw ConfigError("mode must be central or federated");

    datagen::Dataset dataset;
    try {
      dataset = datagen::load_dataset(args.dataset_dir);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    std::vector<Tensor> tensors;
    std::vector<double> ttfs;
    for (const auto& a : dataset.assets) {
      tensors.push_back(a.images);
      ttfs.push_back(a.ttf);
    }
    const prog::Family family = prog::family_from_name(args.family);

    json info;
    info["seed"] = args.seed;
    info["eta"] = args.eta;
    info["max_iter"] = args.max_iter;
    info["family"] = args.family;

    if (args.mode == "central") {
      mpca::FitOptions opts;
      opts.ranks = args.ranks;
      opts.variation = args.variation;
      opts.eta = args.eta;
      opts.max_iter = args.max_iter;
      const mpca::MpcaModel model = mpca::mpca_fit({tensors.data(), tensors.size()}, opts);
      const auto features = mpca::project_features({tensors.data(), tensors.size()}, model);
      const prog::ProgModel prog_model = prog::lls_fit(
          {features.data(), features.size()}, {ttfs.data(), ttfs.size()}, family);
      info["mode"] = "central";
      info["ranks"] = model.projection.ranks();
      info["converged"] = model.converged;
      info["iterations"] = model.iterations_run;
      save_fit_outputs(args.out_dir, model, &prog_model, info, nullptr);
      std::cout << "central fit: ranks " << join_sizes(model.projection.ranks(), 'x')
                << ", " << model.iterations_run << " iterations, converged="
                << (model.converged ? "yes" : "no") << "\n";
      return;
    }

    if (args.split.empty()) throw ConfigError("federated mode requires --split");
    if (std::accumulate(args.split.begin(), args.split.end(), std::size_t{0}) !=
        tensors.size())
      throw ConfigError("split must sum to the dataset size");

    std::vector<fed::Participant> participants;
    std::vector<prog::ProgParticipant> prog_users;
    std::size_t at = 0;
    for (std::size_t d = 0; d < args.split.size(); ++d) {
      fed::Participant p;
      p.user_id = static_cast<int>(d + 1);
      p.samples.assign(tensors.begin() + at, tensors.begin() + at + args.split[d]);
      participants.push_back(std::move(p));
      prog::ProgParticipant u;
      u.user_id = static_cast<int>(d + 1);
      u.ttfs.assign(ttfs.begin() + at, ttfs.begin() + at + args.split[d]);
      prog_users.push_back(std::move(u));
      at += args.split[d];
    }

    fed::FedConfig cfg;
    cfg.ranks = args.ranks;
    cfg.variation = args.variation;
    cfg.eta = args.eta;
    cfg.max_iter = args.max_iter;
    cfg.seed = args.seed;
    cfg.mask_scatter = args.mask_scatter;

    fed::Server server;
    fed::InMemoryBus bus;
    const fed::FedResult result = fed::fed_mpca(participants, server, bus, cfg);
    for (std::size_t d = 0; d < args.split.size(); ++d)
      prog_users[d].features = result.features[d];
    const prog::ProgModel prog_model = prog::fed_lls_fit(prog_users, bus, family, args.seed);

    mpca::MpcaModel model;
    model.mean = result.mean;
    model.projection = result.projection;
    model.scatter_history = result.scatter_history;
    model.iterations_run = result.iterations_run;
    model.converged = result.converged;

    info["mode"] = "federated";
    info["split"] = args.split;
    info["ranks"] = model.projection.ranks();
    info["converged"] = model.converged;
    info["iterations"] = model.iterations_run;
    save_fit_outputs(args.out_dir, model, &prog_model, info, &bus.log());
    std::cout << "federated fit: split " << join_sizes(args.split, ',') << ", ranks "
              << join_sizes(model.projection.ranks(), 'x') << ", "
              << model.iterations_run << " iterations, converged="
              << (model.converged ? "yes" : "no") << "\n";
  });
}

int cmd_benchmark(const BenchArgs& args) {
  return run_guarded("benchmark", [&] {
    BenchmarkConfig cfg = parse_benchmark_config(args.config_path);
    if (args.replications) cfg.replications = *args.replications;
    if (args.seed) cfg.seed = *args.seed;
    if (args.cross_validate) cfg.cv = true;
    if (cfg.replications == 0) throw ConfigError("replications must be >= 1");

    fs::create_directories(args.out_dir);
    std::vector<datagen::SyntheticAsset> assets;
    if (cfg.has_generator) {
      assets = datagen::generate_dataset(cfg.generator);
      datagen::write_dataset((fs::path(args.out_dir) / "dataset").string(), cfg.generator,
                             assets);
    } else {
      assets = datagen::load_dataset(cfg.dataset_dir).assets;
    }

    const std::size_t train_total =
        std::accumulate(cfg.train_split.begin(), cfg.train_split.end(), std::size_t{0});
    if (train_total + cfg.test_count > assets.size())
      throw ConfigError("train_split + test_count exceeds the asset count");

    // Replications are independent; run them on a small pool and assemble in
    // replication order.
    std::vector<RepOutcome> reps(cfg.replications);
    {
      std::vector<std::future<void>> futures;
      const std::size_t workers = std::min<std::size_t>(
          std::max(1u, std::thread::hardware_concurrency()), cfg.replications);
      for (std::size_t w = 0; w < workers; ++w) {
        futures.push_back(std::async(std::launch::async, [&, w] {
          for (std::size_t r = w; r < cfg.replications; r += workers)
            reps[r] = run_replication(r, cfg, assets);
        }));
      }
      for (auto& f : futures) f.get();
    }

    const std::string header_note =
        cfg.cv ? "# rank selection: 10-fold cross-validation over the variation grid\n"
               : "# rank selection: fixed variation fraction (cross-validation off)\n";

    // errors.csv: one row per (replication, method, test asset).
    {
      std::ofstream out(fs::path(args.out_dir) / "errors.csv", std::ios::trunc);
      out << header_note;
      out << "replication,method,asset_id,true_ttf,predicted_ttf,prediction_error\n";
      for (const auto& rep : reps) {
        for (const auto& m : rep.methods) {
          for (std::size_t i = 0; i < m.errors.size(); ++i) {
            out << rep.rep << "," << m.name << "," << rep.test_ids[i] << ","
                << format_double(rep.test_ttfs[i]) << "," << format_double(m.predictions[i])
                << "," << format_double(m.errors[i]) << "\n";
          }
        }
      }
    }

    // scatters.csv: the per-iteration objective of every fitted model.
    {
      std::ofstream out(fs::path(args.out_dir) / "scatters.csv", std::ios::trunc);
      out << "replication,method,k,psi\n";
      for (const auto& rep : reps)
        for (const auto& m : rep.methods)
          for (std::size_t k = 0; k < m.scatter.size(); ++k)
            out << rep.rep << "," << m.name << "," << k << "," << format_double(m.scatter[k])
                << "\n";
    }

    // report.csv: per-replication method summaries, then pooled rows.
    {
      std::ofstream out(fs::path(args.out_dir) / "report.csv", std::ios::trunc);
      out << header_note;
      out << "replication,method,ranks,median,q1,q3,iqr,converged,iterations,"
             "max_abs_pred_diff_vs_combined,max_abs_err_diff_vs_combined\n";
      std::map<std::string, std::vector<double>> pooled;
      std::vector<std::string> method_order;
      for (const auto& rep : reps) {
        const MethodOutcome* combined = find_method(rep, "combined");
        for (const auto& m : rep.methods) {
          if (pooled.find(m.name) == pooled.end()) method_order.push_back(m.name);
          auto& pool = pooled[m.name];
          pool.insert(pool.end(), m.errors.begin(), m.errors.end());
          const double med = quantile(m.errors, 0.5);
          const double q1 = quantile(m.errors, 0.25);
          const double q3 = quantile(m.errors, 0.75);
          std::string pred_cell;
          std::string err_cell;
          if (m.name == "fmpca" && combined != nullptr) {
            double pred_diff = 0.0;
            double err_diff = 0.0;
            for (std::size_t i = 0; i < m.predictions.size(); ++i) {
              pred_diff = std::max(pred_diff,
                                   std::abs(m.predictions[i] - combined->predictions[i]));
              err_diff = std::max(err_diff, std::abs(m.errors[i] - combined->errors[i]));
            }
            pred_cell = format_double(pred_diff);
            err_cell = format_double(err_diff);
          }
          out << rep.rep << "," << m.name << "," << join_sizes(m.ranks, 'x') << ","
              << format_double(med) << "," << format_double(q1) << "," << format_double(q3)
              << "," << format_double(q3 - q1) << "," << (m.converged ? 1 : 0) << ","
              << m.iterations << "," << pred_cell << "," << err_cell << "\n";
        }
      }
      for (const auto& name : method_order) {
        const auto& pool = pooled[name];
        const double med = quantile(pool, 0.5);
        const double q1 = quantile(pool, 0.25);
        const double q3 = quantile(pool, 0.75);
        out << "all," << name << ",," << format_double(med) << "," << format_double(q1)
            << "," << format_double(q3) << "," << format_double(q3 - q1) << ",,,,\n";
      }
    }

    std::cout << "benchmark: " << cfg.replications << " replications, "
              << (reps.empty() ? 0 : reps[0].methods.size()) << " methods, outputs in "
              << args.out_dir << "\n";
  });
}

int cmd_predict(const std::string& model_dir, const std::string& tensor_file,
                const std::string& out_file) {
  return run_guarded("predict", [&] {
    mpca::MpcaModel model;
    prog::ProgModel prog_model;
    try {
      model = mpca::load_model(model_dir);
      prog_model = prog::load_prog_model((fs::path(model_dir) / "prog_model.json").string());
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    const Tensor x = tnsr_load(tensor_file);
    const Tensor y = multi_mode_project(x, model.projection, true);
    const prog::Prediction pred = prog::predict_ttf(prog_model, y);
    json j;
    j["location"] = pred.location;
    j["scale"] = pred.scale;
    j["point_estimate"] = pred.point;
    const std::string text = j.dump(2) + "\n";
    if (out_file.empty()) {
      std::cout << text;
    } else {
      std::ofstream out(out_file, std::ios::trunc);
      out << text;
    }
  });
}

int cmd_compare(const std::string& dir_a, const std::string& dir_b) {
  return run_guarded("compare", [&] {
    mpca::MpcaModel a;
    mpca::MpcaModel b;
    try {
      a = mpca::load_model(dir_a);
      b = mpca::load_model(dir_b);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    if (a.projection.ranks() != b.projection.ranks())
      throw std::runtime_error("models have different ranks");

    double max_dev = 0.0;
    for (std::size_t n = 0; n < a.projection.factors.size(); ++n) {
      const Matrix& fa = a.projection.factors[n];
      const Matrix& fb = b.projection.factors[n];
      for (std::size_t c = 0; c < fa.cols(); ++c) {
        const double align =
            kernels::dot(fa.col(c), fb.col(c), fa.rows()) < 0.0 ? -1.0 : 1.0;
        for (std::size_t r = 0; r < fa.rows(); ++r)
          max_dev = std::max(max_dev, std::abs(fa(r, c) - align * fb(r, c)));
      }
    }
    const double psi_a = a.scatter_history.back();
    const double psi_b = b.scatter_history.back();
    const double scatter_dev =
        std::abs(psi_a - psi_b) / std::max({std::abs(psi_a), std::abs(psi_b), 1e-300});
    json j;
    j["max_factor_abs_dev"] = max_dev;
    j["scatter_rel_dev"] = scatter_dev;
    std::cout << j.dump(2) << "\n";
  });
}

}  // namespace fmpca::cli
