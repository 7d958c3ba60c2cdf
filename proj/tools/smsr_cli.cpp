#include <smsr/pipeline.hpp>

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char **argv)
{
  namespace pl = smsr::pipeline;
  CLI::App app{"SMS fMRI reconstruction pipeline: simulate, mask, train, reconstruct, analyze, report"};
  std::string configPath;
  std::string stages = "all";
  std::string out = "run";
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  bool printConfig = false;
  app.add_option("--config", configPath, "JSON run configuration (defaults apply to missing keys)");
  app.add_option("--stages", stages, "Comma-separated subset of simulate,mask,train,reconstruct,analyze,report, or 'all'");
  app.add_option("--seed", seed, "Override the configuration seed");
  app.add_flag("--deterministic", deterministic, "Serialize all execution (single thread) for bit-reproducible output");
  app.add_option("--out", out, "Output directory");
  app.add_flag("--print-config", printConfig, "Print the resolved configuration and exit");
  CLI11_PARSE(app, argc, argv);

  pl::RunConfig cfg;
  std::vector<pl::Stage> list;
  try {
    if (!configPath.empty()) { cfg = pl::load_config(configPath); }
    if (seed) { cfg.seed = *seed; }
    cfg.deterministic = deterministic;
    if (printConfig) {
      std::cout << cfg.toJson().dump(2) << "\n";
      return pl::kExitOk;
    }
    list = pl::parse_stages(stages);
  } catch (pl::MissingDependency const &e) {
    std::cerr << "error: " << e.what() << "\n";
    return pl::kExitMissingDependency;
  } catch (std::exception const &e) {
    std::cerr << "error: " << e.what() << "\n";
    return pl::kExitValidation;
  }
  if (deterministic) { Eigen::setNbThreads(1); }
  auto const outcome = pl::run_pipeline(cfg, list, out, std::cerr);
  if (outcome.exit_code != pl::kExitOk) { std::cerr << "error: " << outcome.message << "\n"; }
  return outcome.exit_code;
}
