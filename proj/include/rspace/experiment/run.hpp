#pragma once

#include <chrono>
#include <string>

#include "json.hpp"
#include "rspace/experiment/config.hpp"
#include "rspace/experiment/pipeline.hpp"
#include "rspace/experiment/report.hpp"

namespace rspace::experiment {

/// Full protocol: phantom, references and pool; one training per variant;
/// deformation and translation sets; encode, evaluate, report.
inline nlohmann::json run_all(const ExperimentConfig& cfg, const fs::path& out_dir, const Log& log = {},
                              bool scatter = true) {
  const auto t0 = std::chrono::steady_clock::now();
  const Seeds seeds = cfg.seeds();
  const RunPaths run{out_dir};
  ensure_dir(out_dir);

  run_stage("gen-data", seeds.phantom, [&] { gen_data(cfg, run.data(), log); });
  for (Variant v : kAllVariants)
    run_stage(std::string("train ") + to_string(v), seeds.train.at(v),
              [&] { train_stage(cfg, v, run.data(), run.model(v), log); });
  run_stage("augment", seeds.augment, [&] { augment_stage(cfg, run.data(), run.augment(), log); });
  const AugmentPaths aug{run.augment()};
  for (Variant v : kAllVariants)
    for (AugmentKind e : kExperiments) {
      run_stage("encode " + cell_name(v, e), seeds.encode, [&] {
        encode_stage(run.model(v), aug.patches(e), run.latents(v, e), cfg.eval.vae_sample, seeds.encode);
      });
      run_stage("evaluate " + cell_name(v, e), seeds.eval, [&] {
        const eval::EvalMetrics m = evaluate_stage(run.latents(v, e), cfg.eval.k, seeds.eval, cfg.eval.kmeans,
                                                   to_string(v), to_string(e), run.metrics(v, e));
        if (log) {
          char buf[160];
          std::snprintf(buf, sizeof buf, "%s: precision %.4f, CH %.1f (predicted %.1f)", cell_name(v, e).c_str(),
                        m.precision, m.ch_ground_truth, m.ch_predicted);
          log(buf);
        }
      });
    }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json report;
  run_stage("report", cfg.master_seed, [&] { report = emit_report(cfg, run, scatter, wall); });
  return report;
}

}  // namespace rspace::experiment
