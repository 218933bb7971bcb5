#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"fmpca - federated multilinear PCA toolkit for degradation prognostics"};
  app.require_subcommand(1);

  // gen-data
  std::string gen_config;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic degradation dataset");
  gen->add_option("--config", gen_config, "Generator config JSON")->required();
  gen->add_option("--out", gen_out, "Output dataset directory")->required();

  // fit
  fmpca::cli::FitArgs fit_args;
  std::vector<std::size_t> fit_split;
  std::vector<std::size_t> fit_ranks;
  auto* fit = app.add_subcommand("fit", "Fit projection factors and a prognostic model");
  fit->add_option("--dataset", fit_args.dataset_dir, "Dataset directory");
  fit->add_option("--config", fit_args.run_config,
                  "Protocol run-config JSON (alternative to --dataset)");
  fit->add_option("--mode", fit_args.mode, "central | federated");
  fit->add_option("--split", fit_split, "Per-user sample counts (federated)")
      ->delimiter(',');
  fit->add_option("--ranks", fit_ranks, "Fixed per-mode ranks")->delimiter(',');
  fit->add_option("--variation", fit_args.variation,
                  "Variation fraction for rank selection");
  fit->add_option("--eta", fit_args.eta, "Relative convergence tolerance");
  fit->add_option("--max-iter", fit_args.max_iter, "Maximum optimization cycles");
  fit->add_option("--seed", fit_args.seed, "Mask/RNG seed");
  fit->add_option("--family", fit_args.family, "normal | lognormal | sev");
  fit->add_option("--out", fit_args.out_dir, "Output model directory")->required();
  fit->add_flag("--mask-scatter", fit_args.mask_scatter,
                "Also mask the scalar scatter aggregation");

  // benchmark
  fmpca::cli::BenchArgs bench_args;
  std::size_t bench_reps = 0;
  std::uint64_t bench_seed = 0;
  bool bench_has_reps = false;
  bool bench_has_seed = false;
  auto* bench = app.add_subcommand("benchmark", "Run the replicated prognostics benchmark");
  bench->add_option("--config", bench_args.config_path, "Benchmark config JSON")->required();
  bench->add_option("--out", bench_args.out_dir, "Output directory")->required();
  bench->add_option("--replications", bench_reps, "Override replication count")
      ->each([&](const std::string&) { bench_has_reps = true; });
  bench->add_option("--seed", bench_seed, "Override seed")
      ->each([&](const std::string&) { bench_has_seed = true; });
  bench->add_flag("--cv", bench_args.cross_validate, "Select ranks by 10-fold CV");

  // predict
  std::string predict_model;
  std::string predict_tensor;
  std::string predict_out;
  auto* predict = app.add_subcommand("predict", "Predict time-to-failure for one tensor");
  predict->add_option("--model", predict_model, "Model directory")->required();
  predict->add_option("--tensor", predict_tensor, "TNSR file")->required();
  predict->add_option("--out", predict_out, "Write JSON here instead of stdout");

  // compare
  std::string cmp_a;
  std::string cmp_b;
  auto* compare = app.add_subcommand("compare", "Compare two fitted models");
  compare->add_option("model_a", cmp_a, "First model directory")->required();
  compare->add_option("model_b", cmp_b, "Second model directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : fmpca::cli::kExitConfig;
  }

  if (gen->parsed()) return fmpca::cli::cmd_gen_data(gen_config, gen_out);
  if (fit->parsed()) {
    fit_args.split = fit_split;
    fit_args.ranks = fit_ranks;
    return fmpca::cli::cmd_fit(fit_args);
  }
  if (bench->parsed()) {
    if (bench_has_reps) bench_args.replications = bench_reps;
    if (bench_has_seed) bench_args.seed = bench_seed;
    return fmpca::cli::cmd_benchmark(bench_args);
  }
  if (predict->parsed())
    return fmpca::cli::cmd_predict(predict_model, predict_tensor, predict_out);
  if (compare->parsed()) return fmpca::cli::cmd_compare(cmp_a, cmp_b);
  return fmpca::cli::kExitConfig;
}
