#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "rspace/experiment/run.hpp"

namespace {

using namespace rspace;
using namespace rspace::experiment;

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumeric = 4 };

void log_line(const std::string& msg) { std::cerr << "[rspace] " << msg << std::endl; }

int report_error(const char* family, const std::exception& e, int code) {
  std::cerr << "rspace: " << family << ": " << e.what() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Representation-space experiments on synthetic 3D ultrasound volumes"};
  app.require_subcommand(1);

  std::string config, out, data, model, patches, latents, variant_name, experiment_name, dir;
  std::uint64_t seed = 0;
  int k = 10;
  bool vae_sample = false, no_scatter = false;

  auto* gen = app.add_subcommand("gen-data", "Render the phantom, sample references and the training pool");
  gen->add_option("--config", config, "Experiment config (INI)")->required();
  gen->add_option("--out", out, "Output data directory")->required();

  auto* tr = app.add_subcommand("train", "Train one autoencoder variant on the pool");
  tr->add_option("--model", variant_name, "cae, vae or swae")->required()->check(CLI::IsMember({"cae", "vae", "swae"}));
  tr->add_option("--config", config, "Experiment config (INI)")->required();
  tr->add_option("--data", data, "Data directory from gen-data")->required();
  tr->add_option("--out", out, "Model file to write")->required();

  auto* aug = app.add_subcommand("augment", "Build the deformation and translation sets");
  aug->add_option("--config", config, "Experiment config (INI)")->required();
  aug->add_option("--data", data, "Data directory from gen-data")->required();
  aug->add_option("--out", out, "Output directory")->required();

  auto* enc = app.add_subcommand("encode", "Encode a patch file into a latent CSV");
  enc->add_option("--model", model, "Model file")->required();
  enc->add_option("--patches", patches, "Patch file (RSPAT1)")->required();
  enc->add_option("--out", out, "Latent CSV to write")->required();
  enc->add_flag("--vae-sample", vae_sample, "VAE: encode a posterior sample instead of the mean");
  enc->add_option("--seed", seed, "Seed for --vae-sample");

  auto* ev = app.add_subcommand("evaluate", "Cluster a latent CSV and score it");
  ev->add_option("--latents", latents, "Latent CSV")->required();
  ev->add_option("--k", k, "Number of clusters")->required();
  ev->add_option("--seed", seed, "k-means seed")->required();
  ev->add_option("--out", out, "Metrics JSON to write")->required();
  ev->add_option("--config", config, "Take k-means restarts/iterations/tolerance from this config");
  ev->add_option("--variant", variant_name, "Variant label stored in the metrics");
  ev->add_option("--experiment", experiment_name, "Experiment label stored in the metrics");

  auto* rep = app.add_subcommand("report", "Assemble report.json/report.csv from a stage-wise run directory");
  rep->add_option("--config", config, "Experiment config (INI)")->required();
  rep->add_option("--dir", dir, "Run directory")->required();
  rep->add_flag("--no-scatter", no_scatter, "Skip the PCA scatter plots");

  auto* all = app.add_subcommand("run-all", "Run the full protocol and write the report");
  all->add_option("--config", config, "Experiment config (INI)")->required();
  all->add_option("--out", out, "Run directory")->required();
  all->add_flag("--no-scatter", no_scatter, "Skip the PCA scatter plots");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*gen) {
      gen_data(load_config(config), out, log_line);
    } else if (*tr) {
      train_stage(load_config(config), variant_from_string(variant_name), data, out, log_line);
    } else if (*aug) {
      augment_stage(load_config(config), data, out, log_line);
    } else if (*enc) {
      encode_stage(model, patches, out, vae_sample, seed);
    } else if (*ev) {
      eval::KMeansConfig kcfg;
      if (!config.empty()) kcfg = load_config(config).eval.kmeans;
      const eval::EvalMetrics m = evaluate_stage(latents, k, seed, kcfg, variant_name, experiment_name, out);
      std::printf("precision %.6g\nch_ground_truth %.6g\nch_predicted %.6g\n", m.precision, m.ch_ground_truth,
                  m.ch_predicted);
    } else if (*rep) {
      emit_report(load_config(config), RunPaths{dir}, !no_scatter);
    } else if (*all) {
      const nlohmann::json report = run_all(load_config(config), out, log_line, !no_scatter);
      std::cout << report_csv(report);
    }
  } catch (const ConfigError& e) {
    return report_error("config error", e, kConfig);
  } catch (const FormatError& e) {
    return report_error("data error", e, kData);
  } catch (const IoError& e) {
    return report_error("I/O error", e, kData);
  } catch (const BoundsError& e) {
    return report_error("data error", e, kData);
  } catch (const TrainingError& e) {
    return report_error("training failure", e, kNumeric);
  } catch (const ShapeError& e) {
    return report_error("numeric error", e, kNumeric);
  } catch (const ContractError& e) {
    return report_error("numeric error", e, kNumeric);
  } catch (const std::exception& e) {
    return report_error("error", e, kOther);
  }
  return kOk;
}
