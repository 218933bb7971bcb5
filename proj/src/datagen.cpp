#include "fmpca/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "fmpca/kernels.hpp"
#include "fmpca/mpca.hpp"

namespace fmpca::datagen {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::uint64_t kAlphaTag = 0x616c706861ULL;
constexpr std::uint64_t kPixelTag = 0x706978ULL;
constexpr std::uint64_t kFactorTag = 0x666163ULL;
constexpr std::uint64_t kCoefTag = 0x636f6566ULL;
constexpr std::uint64_t kTtfTag = 0x747466ULL;

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string asset_name(std::size_t index) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "asset_%04zu", index);
  return buf;
}

template <typename Fn>
void parallel_over(std::size_t count, Fn&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::future<void>> futures;
  for (std::size_t w = 0; w < workers; ++w) {
    futures.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < count; i += workers) fn(i);
    }));
  }
  for (auto& f : futures) f.get();
}

}  // namespace

void validate_config(const SimConfig& cfg) {
  if (cfg.grid_n < 2) throw std::invalid_argument("grid_n must be >= 2");
  if (!(cfg.domain_length > 0.0)) throw std::invalid_argument("domain_length must be positive");
  if (!(cfg.alpha_min > 0.0) || !(cfg.alpha_max >= cfg.alpha_min))
    throw std::invalid_argument("alpha range must be positive and ordered");
  if (cfg.frame_count == 0) throw std::invalid_argument("frame_count must be >= 1");
  if (cfg.kept_frames.empty()) throw std::invalid_argument("kept_frames must be nonempty");
  for (std::size_t f : cfg.kept_frames)
    if (f == 0 || f > cfg.frame_count)
      throw std::invalid_argument("kept frame index outside 1..frame_count");
  if (cfg.substeps_per_frame == 0)
    throw std::invalid_argument("substeps_per_frame must be >= 1");
  if (!(cfg.courant > 0.0) || cfg.courant > 0.25)
    throw std::invalid_argument("courant must lie in (0, 0.25]");
  if (cfg.pixel_noise_sd < 0.0 || cfg.ttf_noise_sd < 0.0 || cfg.coef_sd < 0.0 ||
      cfg.factor_noise_sd < 0.0)
    throw std::invalid_argument("noise levels must be nonnegative");
  if (!(cfg.variation > 0.0) || cfg.variation > 1.0)
    throw std::invalid_argument("variation must lie in (0, 1]");
  if (cfg.asset_count == 0) throw std::invalid_argument("asset_count must be >= 1");
}

double grid_dx(const SimConfig& cfg) {
  return cfg.domain_length / static_cast<double>(cfg.grid_n + 1);
}

double substep_dt(const SimConfig& cfg) {
  const double dx = grid_dx(cfg);
  return cfg.courant * dx * dx / cfg.alpha_max;
}

Tensor simulate_heat_padded(double alpha, const SimConfig& cfg) {
  validate_config(cfg);
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  const double dx = grid_dx(cfg);
  const double dt = substep_dt(cfg);
  const double r = alpha * dt / (dx * dx);
  if (r > 0.25) {
    std::ostringstream oss;
    oss << "unstable explicit scheme: alpha*dt/dx^2 = " << r << " > 0.25 (alpha=" << alpha
        << ", dt=" << dt << ", dx=" << dx << ")";
    throw std::runtime_error(oss.str());
  }

  const std::size_t n = cfg.grid_n;
  const std::size_t ld = n + 2;
  std::vector<double> cur(ld * ld, 0.0);
  std::vector<double> next(ld * ld, 0.0);
  const auto set_boundary = [&](std::vector<double>& g) {
    for (std::size_t i = 0; i < ld; ++i) {
      g[i] = cfg.boundary_temp;                 // first column
      g[i + (ld - 1) * ld] = cfg.boundary_temp; // last column
      g[i * ld] = cfg.boundary_temp;            // first row
      g[i * ld + ld - 1] = cfg.boundary_temp;   // last row
    }
  };
  set_boundary(cur);
  set_boundary(next);

  Tensor out({ld, ld, cfg.frame_count});
  const std::size_t frame_len = ld * ld;
  std::memcpy(out.data(), cur.data(), frame_len * sizeof(double));
  for (std::size_t t = 1; t < cfg.frame_count; ++t) {
    for (std::size_t s = 0; s < cfg.substeps_per_frame; ++s) {
      kernels::heat_step(cur.data(), next.data(), n, r);
      std::swap(cur, next);
    }
    std::memcpy(out.data() + t * frame_len, cur.data(), frame_len * sizeof(double));
  }
  return out;
}

Tensor simulate_heat(double alpha, const SimConfig& cfg) {
  const Tensor padded = simulate_heat_padded(alpha, cfg);
  const std::size_t n = cfg.grid_n;
  const std::size_t ld = n + 2;
  Tensor out({n, n, cfg.frame_count});
  for (std::size_t t = 0; t < cfg.frame_count; ++t) {
    const double* frame = padded.data() + t * ld * ld;
    double* dst = out.data() + t * n * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* col = frame + (j + 1) * ld + 1;
      std::memcpy(dst + j * n, col, n * sizeof(double));
    }
  }
  return out;
}

Tensor make_asset_stream(double alpha, const SimConfig& cfg, rng::Stream& noise) {
  const Tensor raw = simulate_heat(alpha, cfg);
  const std::size_t n = cfg.grid_n;
  const std::size_t frames = cfg.kept_frames.size();
  Tensor out({n, n, frames});
  for (std::size_t k = 0; k < frames; ++k) {
    const std::size_t t = cfg.kept_frames[k] - 1;
    std::memcpy(out.data() + k * n * n, raw.data() + t * n * n, n * n * sizeof(double));
  }
  if (cfg.pixel_noise_sd > 0.0) {
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] += noise.next_gaussian(0.0, cfg.pixel_noise_sd);
  }
  return out;
}

std::vector<SyntheticAsset> generate_dataset(const SimConfig& cfg) {
  validate_config(cfg);
  std::vector<SyntheticAsset> assets(cfg.asset_count);

  parallel_over(cfg.asset_count, [&](std::size_t m) {
    rng::Stream alpha_stream(rng::derive_key({cfg.seed, kAlphaTag, m}));
    const double alpha = alpha_stream.next_uniform(cfg.alpha_min, cfg.alpha_max);
    rng::Stream pixel_stream(rng::derive_key({cfg.seed, kPixelTag, m}));
    assets[m].id = asset_name(m);
    assets[m].alpha = alpha;
    assets[m].images = make_asset_stream(alpha, cfg, pixel_stream);
  });

  // TTF synthesis: project through noise-perturbed factors and draw from the
  // lognormal link.
  std::vector<Tensor> streams;
  streams.reserve(cfg.asset_count);
  for (const auto& a : assets) streams.push_back(a.images);

  ProjectionSet perturbed;
  if (cfg.asset_count >= 2) {
    mpca::FitOptions fit;
    fit.variation = cfg.variation;
    const mpca::MpcaModel model = mpca::mpca_fit({streams.data(), streams.size()}, fit);
    perturbed = model.projection;
  } else {
    for (std::size_t d : streams[0].dims()) {
      Matrix f(d, 1);
      f(0, 0) = 1.0;
      perturbed.factors.push_back(f);
    }
  }
  rng::Stream factor_stream(rng::derive_key({cfg.seed, kFactorTag}));
  for (Matrix& f : perturbed.factors)
    for (std::size_t i = 0; i < f.size(); ++i)
      f.values()[i] += factor_stream.next_gaussian(0.0, cfg.factor_noise_sd);

  std::size_t feature_len = 1;
  for (const Matrix& f : perturbed.factors) feature_len *= f.cols();
  rng::Stream coef_stream(rng::derive_key({cfg.seed, kCoefTag}));
  const double beta0 = coef_stream.next_gaussian(0.0, cfg.coef_sd);
  std::vector<double> beta1(feature_len);
  for (double& b : beta1) b = coef_stream.next_gaussian(0.0, cfg.coef_sd);

  for (std::size_t m = 0; m < cfg.asset_count; ++m) {
    const Tensor y = multi_mode_project(assets[m].images, perturbed, true);
    double logz = beta0 + kernels::dot(y.data(), beta1.data(), feature_len);
    rng::Stream ttf_stream(rng::derive_key({cfg.seed, kTtfTag, m}));
    logz += ttf_stream.next_gaussian(0.0, cfg.ttf_noise_sd);
    assets[m].ttf = std::exp(logz);
  }
  return assets;
}

void write_dataset(const std::string& dir, const SimConfig& cfg,
                   const std::vector<SyntheticAsset>& assets) {
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.csv", std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir);
  manifest << "asset_id,alpha,ttf,tensor_file\n";
  for (const auto& a : assets) {
    const std::string file = a.id + ".tnsr";
    manifest << a.id << "," << format_double(a.alpha) << "," << format_double(a.ttf) << ","
             << file << "\n";
    tnsr_save((fs::path(dir) / file).string(), a.images);
  }

  json j;
  j["grid_n"] = cfg.grid_n;
  j["domain_length"] = cfg.domain_length;
  j["boundary_temp"] = cfg.boundary_temp;
  j["alpha_min"] = cfg.alpha_min;
  j["alpha_max"] = cfg.alpha_max;
  j["frame_count"] = cfg.frame_count;
  j["kept_frames"] = cfg.kept_frames;
  j["substeps_per_frame"] = cfg.substeps_per_frame;
  j["courant"] = cfg.courant;
  j["pixel_noise_sd"] = cfg.pixel_noise_sd;
  j["factor_noise_sd"] = cfg.factor_noise_sd;
  j["coef_sd"] = cfg.coef_sd;
  j["ttf_noise_sd"] = cfg.ttf_noise_sd;
  j["variation"] = cfg.variation;
  j["asset_count"] = cfg.asset_count;
  j["seed"] = cfg.seed;
  j["dx"] = grid_dx(cfg);
  j["dt"] = substep_dt(cfg);
  std::ofstream config(fs::path(dir) / "config.json", std::ios::trunc);
  config << j.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream manifest(fs::path(dir) / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot open manifest in " + dir);
  std::string header;
  std::getline(manifest, header);
  std::vector<std::string> columns;
  {
    std::stringstream ss(header);
    std::string col;
    while (std::getline(ss, col, ',')) columns.push_back(col);
  }
  const auto col_index = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    return -1;
  };
  const int id_col = col_index("asset_id");
  const int ttf_col = col_index("ttf");
  const int file_col = col_index("tensor_file");
  const int alpha_col = col_index("alpha");
  if (id_col < 0 || ttf_col < 0 || file_col < 0)
    throw std::runtime_error("manifest is missing required columns");

  Dataset out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    SyntheticAsset a;
    a.id = cells.at(id_col);
    a.ttf = std::stod(cells.at(ttf_col));
    if (alpha_col >= 0) a.alpha = std::stod(cells.at(alpha_col));
    a.images = tnsr_load((fs::path(dir) / cells.at(file_col)).string());
    out.assets.push_back(std::move(a));
  }
  return out;
}

SimConfig config_from_json_text(const std::string& text) {
  const json j = json::parse(text);
  SimConfig cfg;
  const auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("grid_n", cfg.grid_n);
  get("domain_length", cfg.domain_length);
  get("boundary_temp", cfg.boundary_temp);
  get("alpha_min", cfg.alpha_min);
  get("alpha_max", cfg.alpha_max);
  get("frame_count", cfg.frame_count);
  get("kept_frames", cfg.kept_frames);
  get("substeps_per_frame", cfg.substeps_per_frame);
  get("courant", cfg.courant);
  get("pixel_noise_sd", cfg.pixel_noise_sd);
  get("factor_noise_sd", cfg.factor_noise_sd);
  get("coef_sd", cfg.coef_sd);
  get("ttf_noise_sd", cfg.ttf_noise_sd);
  get("variation", cfg.variation);
  get("asset_count", cfg.asset_count);
  get("seed", cfg.seed);
  validate_config(cfg);
  return cfg;
}

SimConfig config_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json_text(ss.str());
}

}  // namespace fmpca::datagen
