#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fmpca/datagen.hpp"
#include "test_support.hpp"

using namespace fmpca;
using datagen::SimConfig;

namespace {

SimConfig small_config() {
  SimConfig cfg;
  cfg.grid_n = 8;
  cfg.frame_count = 12;
  cfg.kept_frames = {2, 4, 6, 8, 10, 12};
  cfg.substeps_per_frame = 10;
  cfg.asset_count = 6;
  cfg.seed = 99;
  return cfg;
}

}  // namespace

TEST_CASE("simulate_heat: cold start, hot boundary, saturation") {
  SimConfig cfg = small_config();
  const Tensor padded = datagen::simulate_heat_padded(0.9e-4, cfg);
  const std::size_t ld = cfg.grid_n + 2;
  REQUIRE(padded.dims() == std::vector<std::size_t>{ld, ld, cfg.frame_count});

  // First frame: interior exactly zero.
  for (std::size_t j = 1; j <= cfg.grid_n; ++j)
    for (std::size_t i = 1; i <= cfg.grid_n; ++i) CHECK(padded.at({i, j, 0}) == 0.0);

  // Boundary ring pinned to the boundary temperature at every frame.
  for (std::size_t t = 0; t < cfg.frame_count; ++t) {
    for (std::size_t i = 0; i < ld; ++i) {
      CHECK(padded.at({i, 0, t}) == 30.0);
      CHECK(padded.at({i, ld - 1, t}) == 30.0);
      CHECK(padded.at({0, i, t}) == 30.0);
      CHECK(padded.at({ld - 1, i, t}) == 30.0);
    }
  }

  // Interior bounded by the maximum principle and monotone in time.
  const Tensor interior = datagen::simulate_heat(0.9e-4, cfg);
  for (std::size_t i = 0; i < interior.size(); ++i) {
    CHECK(interior[i] >= 0.0);
    CHECK(interior[i] <= 30.0);
  }
  const std::size_t frame = cfg.grid_n * cfg.grid_n;
  for (std::size_t t = 1; t < cfg.frame_count; ++t)
    for (std::size_t px = 0; px < frame; ++px)
      CHECK(interior[t * frame + px] >= interior[(t - 1) * frame + px] - 1e-12);

  // Long run: every pixel approaches the boundary temperature, and the worst
  // deviation shrinks monotonically.
  SimConfig long_cfg = cfg;
  long_cfg.frame_count = 60;
  long_cfg.kept_frames = {60};
  const Tensor long_run = datagen::simulate_heat(1e-4, long_cfg);
  double prev_dev = 31.0;
  for (std::size_t t = 0; t < long_cfg.frame_count; ++t) {
    double dev = 0.0;
    for (std::size_t px = 0; px < frame; ++px)
      dev = std::max(dev, 30.0 - long_run[t * frame + px]);
    CHECK(dev <= prev_dev + 1e-12);
    prev_dev = dev;
  }
  CHECK(prev_dev <= 0.5);
}

TEST_CASE("simulate_heat: larger alpha dominates pointwise") {
  SimConfig cfg = small_config();
  rng::Stream s(101);
  for (int pair = 0; pair < 10; ++pair) {
    const double lo = cfg.alpha_min + (cfg.alpha_max - cfg.alpha_min) * s.next_double() * 0.5;
    const double hi = lo + (cfg.alpha_max - lo) * (0.1 + 0.9 * s.next_double());
    const Tensor cold = datagen::simulate_heat(lo, cfg);
    const Tensor hot = datagen::simulate_heat(hi, cfg);
    for (std::size_t i = 0; i < cold.size(); ++i) CHECK(hot[i] >= cold[i] - 1e-12);
  }
}

TEST_CASE("simulate_heat rejects unstable configurations") {
  SimConfig cfg = small_config();
  CHECK_THROWS_AS(datagen::simulate_heat(cfg.alpha_max * 2.0, cfg), std::runtime_error);
  SimConfig bad = cfg;
  bad.courant = 0.3;
  CHECK_THROWS_AS(datagen::validate_config(bad), std::invalid_argument);
}

TEST_CASE("make_asset_stream: shape, determinism and the zero-noise case") {
  SimConfig cfg = small_config();
  rng::Stream noise_a(rng::derive_key({cfg.seed, 1}));
  const Tensor a = datagen::make_asset_stream(0.8e-4, cfg, noise_a);
  REQUIRE(a.dims() == std::vector<std::size_t>{8, 8, 6});

  rng::Stream noise_b(rng::derive_key({cfg.seed, 1}));
  const Tensor b = datagen::make_asset_stream(0.8e-4, cfg, noise_b);
  CHECK(a.values() == b.values());

  SimConfig clean = cfg;
  clean.pixel_noise_sd = 0.0;
  rng::Stream unused(1);
  const Tensor raw = datagen::simulate_heat(0.8e-4, clean);
  const Tensor stream = datagen::make_asset_stream(0.8e-4, clean, unused);
  const std::size_t frame = clean.grid_n * clean.grid_n;
  for (std::size_t k = 0; k < clean.kept_frames.size(); ++k) {
    const std::size_t t = clean.kept_frames[k] - 1;
    for (std::size_t px = 0; px < frame; ++px)
      CHECK(stream[k * frame + px] == raw[t * frame + px]);
  }

  // The full-scale default shape: 21 x 21 x 10.
  SimConfig full;
  full.asset_count = 1;
  rng::Stream pn(7);
  const Tensor big = datagen::make_asset_stream(0.7e-4, full, pn);
  CHECK(big.dims() == std::vector<std::size_t>{21, 21, 10});
}

TEST_CASE("generate_dataset: counts, positivity, determinism") {
  SimConfig cfg = small_config();
  const auto assets = datagen::generate_dataset(cfg);
  REQUIRE(assets.size() == cfg.asset_count);
  for (const auto& a : assets) {
    CHECK(a.ttf > 0.0);
    CHECK(a.alpha >= cfg.alpha_min);
    CHECK(a.alpha <= cfg.alpha_max);
    CHECK(a.images.dims() ==
          std::vector<std::size_t>{cfg.grid_n, cfg.grid_n, cfg.kept_frames.size()});
  }

  const auto again = datagen::generate_dataset(cfg);
  for (std::size_t m = 0; m < assets.size(); ++m) {
    CHECK(assets[m].ttf == again[m].ttf);
    CHECK(assets[m].alpha == again[m].alpha);
    CHECK(assets[m].images.values() == again[m].images.values());
  }

  SimConfig single = cfg;
  single.asset_count = 1;
  const auto one = datagen::generate_dataset(single);
  CHECK(one.size() == 1);
  CHECK(one[0].ttf > 0.0);
}

TEST_CASE("dataset write/load round trip") {
  SimConfig cfg = small_config();
  cfg.asset_count = 3;
  const auto assets = datagen::generate_dataset(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "fmpca_dataset_test";
  std::filesystem::remove_all(dir);
  datagen::write_dataset(dir.string(), cfg, assets);

  CHECK(std::filesystem::exists(dir / "manifest.csv"));
  CHECK(std::filesystem::exists(dir / "config.json"));

  const auto loaded = datagen::load_dataset(dir.string());
  REQUIRE(loaded.assets.size() == 3);
  for (std::size_t m = 0; m < 3; ++m) {
    CHECK(loaded.assets[m].id == assets[m].id);
    CHECK(loaded.assets[m].images.values() == assets[m].images.values());
    CHECK(loaded.assets[m].ttf == doctest::Approx(assets[m].ttf).epsilon(1e-15));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("config JSON parsing applies defaults and validates") {
  const SimConfig defaults;
  CHECK(defaults.asset_count == 500);
  CHECK(defaults.grid_n == 21);
  CHECK(defaults.kept_frames ==
        std::vector<std::size_t>{15, 30, 45, 60, 75, 90, 105, 120, 135, 150});

  const auto cfg = datagen::config_from_json_text(
      R"({"grid_n": 5, "frame_count": 4, "kept_frames": [1, 4], "asset_count": 2})");
  CHECK(cfg.grid_n == 5);
  CHECK(cfg.boundary_temp == 30.0);
  CHECK(cfg.alpha_min == doctest::Approx(0.5e-4));
  CHECK_THROWS(datagen::config_from_json_text(R"({"grid_n": 1})"));
  CHECK_THROWS(datagen::config_from_json_text(R"({"kept_frames": [500]})"));
}
