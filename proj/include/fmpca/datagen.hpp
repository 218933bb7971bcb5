#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fmpca/rng.hpp"
#include "fmpca/tensor.hpp"

namespace fmpca::datagen {

// Heat-transfer degradation stream generator. Frames are the interior of an
// n x n lattice with the boundary ring held at boundary_temp and a cold
// start; integer frame t advances the explicit scheme by substeps_per_frame
// sub-steps. The sub-step is sized so alpha_max * dt / dx^2 = courant.
//
// Noise values are standard deviations; where the source design quotes
// N(mean, v) the v is read as a variance and converted once here.
struct SimConfig {
  std::size_t grid_n = 21;
  double domain_length = 0.2;
  double boundary_temp = 30.0;
  double alpha_min = 0.5e-4;
  double alpha_max = 1.0e-4;
  std::size_t frame_count = 150;
  std::vector<std::size_t> kept_frames =  // 1-based frame indices
      {15, 30, 45, 60, 75, 90, 105, 120, 135, 150};
  std::size_t substeps_per_frame = 50;
  double courant = 0.2;
  double pixel_noise_sd = 0.31622776601683794;  // variance 0.1
  double factor_noise_sd = 1.0;
  double coef_sd = 0.1;                         // variance 0.01
  double ttf_noise_sd = 0.31622776601683794;    // variance 0.1
  double variation = 0.97;
  std::size_t asset_count = 500;
  std::uint64_t seed = 0;
};

struct SyntheticAsset {
  std::string id;
  double alpha = 0.0;
  Tensor images;  // n x n x |kept_frames|
  double ttf = 0.0;
};

void validate_config(const SimConfig& cfg);
double substep_dt(const SimConfig& cfg);
double grid_dx(const SimConfig& cfg);

// Raw frame stream, interior only: n x n x frame_count. Frame 1 is the zero
// initial field. Throws when the scheme would be unstable for this alpha.
Tensor simulate_heat(double alpha, const SimConfig& cfg);

// Same simulation on the padded (n+2)^2 grid, boundary ring included.
Tensor simulate_heat_padded(double alpha, const SimConfig& cfg);

// Kept frames subsampled and pixel noise added.
Tensor make_asset_stream(double alpha, const SimConfig& cfg, rng::Stream& noise);

// Full dataset: alphas drawn uniformly, streams simulated, and TTFs drawn
// from a lognormal link on features projected through noise-perturbed
// factors.
std::vector<SyntheticAsset> generate_dataset(const SimConfig& cfg);

// Directory layout: manifest.csv (asset_id,alpha,ttf,tensor_file), per-asset
// TNSR files, config.json echoing the configuration and discretization.
void write_dataset(const std::string& dir, const SimConfig& cfg,
                   const std::vector<SyntheticAsset>& assets);

struct Dataset {
  std::vector<SyntheticAsset> assets;
};

Dataset load_dataset(const std::string& dir);

SimConfig config_from_json_file(const std::string& path);
SimConfig config_from_json_text(const std::string& text);

}  // namespace fmpca::datagen
