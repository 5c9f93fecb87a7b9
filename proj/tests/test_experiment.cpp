#include <cmath>

#include "rspace/experiment/config.hpp"
#include "rspace/experiment/pipeline.hpp"
#include "rspace/experiment/report.hpp"
#include "rspace/experiment/run.hpp"
#include "test_util.hpp"

using namespace rspace;
using namespace rspace::experiment;

namespace {

std::string smoke_text() { return test::slurp(std::string(RSPACE_SOURCE_DIR) + "/configs/smoke.ini"); }

std::string with_line(std::string text, const std::string& section, const std::string& line) {
  const std::string header = "[" + section + "]\n";
  const auto at = text.find(header);
  if (at == std::string::npos) return text + "\n" + header + line + "\n";
  return text.insert(at + header.size(), line + "\n");
}

}  // namespace

TEST(Config, EmptyTextGivesProtocolDefaults) {
  const ExperimentConfig c = parse_config_text("");
  EXPECT_EQ(c.patches.n, 10);
  EXPECT_EQ(c.patches.side, 30);
  EXPECT_EQ(c.patches.margin, 10);
  EXPECT_EQ(c.patches.pool_size, 2000);
  EXPECT_EQ(c.augment.n_aug, 50);
  EXPECT_EQ(c.augment.translate.max_shift, 10);
  EXPECT_EQ(c.train.latent_dim, 128);
  EXPECT_EQ(c.eval.k, 10);
  EXPECT_FALSE(c.eval.vae_sample);
  EXPECT_EQ(c.train.hyper.n_projections, 50);
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"smoke.ini", "paper_protocol.ini"}) {
    const ExperimentConfig c = load_config(std::string(RSPACE_SOURCE_DIR) + "/configs/" + name);
    EXPECT_NO_THROW(c.validate()) << name;
  }
}

TEST(Config, RejectsUnknownSectionsAndKeys) {
  EXPECT_THROW(parse_config_text("[bogus]\nx = 1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[train]\nepoch = 3\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[seeds]\ntrain_ae = 3\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[train.cae]\nbeta = 1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[train]\nepochs = three\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[train]\nchannels = 4,x\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[data]\nspeckle_mode = sometimes\n"), ConfigError);
  EXPECT_THROW(parse_config_text("not ini at all ]["), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.ini"), ConfigError);
}

TEST(Config, ValidationCatchesInconsistentSettings) {
  EXPECT_THROW(parse_config_text("[augment]\nmax_shift = 11\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[eval]\nk = 9\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[data]\nnz = 40\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[train.swae]\nbatch_size = 1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[patches]\nvalidation_fraction = 1.0\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[augment]\nsigma = -1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[augment]\nn_aug = 0\n"), ConfigError);
  EXPECT_NO_THROW(parse_config_text("[train.swae]\nbatch_size = 2\n"));
}

TEST(Config, PerVariantOverridesAndHyperparameters) {
  const ExperimentConfig c = parse_config_text(
      "[train]\nepochs = 4\nlearning_rate = 0.002\n[train.vae]\nepochs = 7\nbeta = 0.5\n"
      "[train.swae]\nlambda = 3\nn_projections = 12\nbatch_size = 4\n");
  EXPECT_EQ(c.train_config(Variant::cae).epochs, 4);
  EXPECT_EQ(c.train_config(Variant::vae).epochs, 7);
  EXPECT_EQ(c.train_config(Variant::swae).batch_size, 4);
  EXPECT_EQ(c.train_config(Variant::cae).batch_size, 16);
  EXPECT_DOUBLE_EQ(c.train_config(Variant::cae).adam.lr, 0.002);
  EXPECT_DOUBLE_EQ(c.train_config(Variant::vae).hyper.beta, 0.5);
  EXPECT_DOUBLE_EQ(c.train_config(Variant::swae).hyper.lambda, 3.0);
  EXPECT_EQ(c.train_config(Variant::swae).hyper.n_projections, 12);
}

TEST(Config, SeedsDeriveFromMasterAndCanBePinned) {
  const ExperimentConfig a = parse_config_text("[experiment]\nmaster_seed = 5\n");
  const ExperimentConfig b = parse_config_text("[experiment]\nmaster_seed = 6\n");
  const ExperimentConfig pinned = parse_config_text("[experiment]\nmaster_seed = 5\n[seeds]\naugment = 123\n");
  EXPECT_EQ(a.seeds().augment, derive_seed(5, "augment"));
  EXPECT_NE(a.seeds().phantom, b.seeds().phantom);
  EXPECT_NE(a.seeds().train.at(Variant::cae), a.seeds().train.at(Variant::vae));
  EXPECT_EQ(pinned.seeds().augment, 123u);
  EXPECT_EQ(pinned.seeds().phantom, a.seeds().phantom);
  EXPECT_EQ(a.train_config(Variant::swae).seed, a.seeds().train.at(Variant::swae));
}

TEST(Config, HashFollowsSourceBytes) {
  const std::string t = smoke_text();
  EXPECT_EQ(parse_config_text(t).hash(), parse_config_text(t).hash());
  EXPECT_NE(parse_config_text(t).hash(), parse_config_text(t + "\n").hash());
  EXPECT_EQ(parse_config_text(t).hash().size(), 16u);
}

TEST(Report, NumberFormatting) {
  EXPECT_EQ(format_precision(1.0), "1.000");
  EXPECT_EQ(format_precision(0.6), "0.6000");
  EXPECT_EQ(format_precision(0.12345), "0.1235");
  EXPECT_EQ(format_ch(1197.4), "1197");
  EXPECT_EQ(format_ch(27.5), "28");
  EXPECT_EQ(format_ch(std::numeric_limits<double>::infinity()), "inf");
}

TEST(Report, CsvHasOneRowPerVariant) {
  nlohmann::json r{{"cells", nlohmann::json::array()}};
  for (Variant v : kAllVariants)
    for (AugmentKind e : kExperiments) {
      eval::EvalMetrics m;
      m.precision = e == AugmentKind::deformation ? 1.0 : 0.6;
      m.ch_ground_truth = e == AugmentKind::deformation ? 1197.0 : 28.0;
      m.k = 10;
      m.n = 500;
      r["cells"].push_back(eval::to_json(m, to_string(v), to_string(e)));
    }
  EXPECT_EQ(report_csv(r),
            "variant,precision_deformation,precision_translation,ch_deformation,ch_translation\n"
            "cae,1.000,0.6000,1197,28\nvae,1.000,0.6000,1197,28\nswae,1.000,0.6000,1197,28\n");
}

TEST(Report, PcaIsDeterministicAndCentered) {
  const auto ps = test::gaussian_blobs(3, 20, 6, 5.0, 1.0, 2);
  const Points p = pca_2d(ps.points);
  ASSERT_EQ(p.cols(), 2);
  EXPECT_NEAR(p.col(0).mean(), 0.0, 1e-9);
  EXPECT_GE(p.col(0).squaredNorm(), p.col(1).squaredNorm());
  Points flipped = -ps.points;
  EXPECT_TRUE(pca_2d(flipped).isApprox(p, 1e-9) || pca_2d(flipped).isApprox(-p, 1e-9));
  const std::string svg = scatter_svg(ps, "t");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_EQ(svg, scatter_svg(ps, "t"));
}

TEST(Pool, KeepsAwayFromReferencesAndSplitsValidation) {
  const ExperimentConfig c = parse_config_text(smoke_text());
  const VolumeSequence seq = generate_phantom(c.data, c.seeds().phantom);
  const auto refs = sample_reference_patches(seq, c.patches.n, c.patches.side, c.patches.margin, c.seeds().references);
  const Pool pool = sample_pool(seq.dims(), int(seq.size()), refs, c.patches, 3);
  ASSERT_EQ(pool.entries.size(), 64u);
  EXPECT_EQ(pool.n_train, 48u);
  for (const auto& e : pool.entries) {
    EXPECT_NO_THROW(check_cube_in_bounds(seq.dims(), e.center, c.patches.side));
    for (const auto& r : refs) {
      if (r.frame_index != e.frame) continue;
      const double dz = e.center.z - r.center.z, dy = e.center.y - r.center.y, dx = e.center.x - r.center.x;
      EXPECT_GE(dz * dz + dy * dy + dx * dx, double(c.patches.side * c.patches.side));
    }
  }
  const Pool back = pool_from_json(to_json(pool));
  EXPECT_EQ(back.entries.size(), pool.entries.size());
  EXPECT_EQ(back.n_train, pool.n_train);
  EXPECT_THROW(pool_from_json(nlohmann::json{{"side", 14}}), FormatError);
}

TEST(Stages, ErrorsCarryStageAndSeedButKeepTheirType) {
  try {
    run_stage("augment", 42, [] { throw BoundsError("outside"); });
    FAIL();
  } catch (const BoundsError& e) {
    EXPECT_EQ(std::string(e.what()), "stage 'augment' (seed 42): outside");
  }
  EXPECT_THROW(run_stage("x", 1, [] { throw TrainingError("nan"); }), TrainingError);
  EXPECT_THROW(run_stage("x", 1, [] { throw FormatError("bad", 3); }), FormatError);
}

TEST(Stages, ComposedStagesEqualRunAll) {
  const ExperimentConfig c = parse_config_text(smoke_text());
  const auto dir = test::scratch_dir("compose");
  const nlohmann::json whole = run_all(c, dir / "whole", {}, false);

  const RunPaths run{dir / "parts"};
  const Seeds s = c.seeds();
  gen_data(c, run.data());
  for (Variant v : kAllVariants) train_stage(c, v, run.data(), run.model(v));
  augment_stage(c, run.data(), run.augment());
  for (Variant v : kAllVariants)
    for (AugmentKind e : kExperiments) {
      encode_stage(run.model(v), AugmentPaths{run.augment()}.patches(e), run.latents(v, e), c.eval.vae_sample, s.encode);
      evaluate_stage(run.latents(v, e), c.eval.k, s.eval, c.eval.kmeans, to_string(v), to_string(e), run.metrics(v, e));
    }
  const nlohmann::json parts = emit_report(c, run, false);
  EXPECT_EQ(strip_timing(whole), strip_timing(parts));
  EXPECT_TRUE(whole["timing"]["wall_time_seconds"].is_number());
  EXPECT_TRUE(parts["timing"]["wall_time_seconds"].is_null());
  EXPECT_EQ(test::slurp(dir / "whole" / "report.csv"), test::slurp(run.report_csv()));
  EXPECT_EQ(test::slurp(dir / "whole" / "latents" / "swae_translation.csv"),
            test::slurp(run.latents(Variant::swae, AugmentKind::translation)));
  ASSERT_EQ(whole["cells"].size(), 6u);
  for (const auto& cell : whole["cells"]) {
    EXPECT_EQ(cell["n"], 24);
    EXPECT_GE(cell["precision"].get<double>(), 0.25);
  }
  const auto manifest = read_json(run.augment() / "manifest.json");
  EXPECT_EQ(manifest["deformation"].size(), 24u);
  EXPECT_EQ(manifest["translate"]["max_shift"], 4);
}

TEST(Stages, ReportRejectsMislabeledMetrics) {
  const ExperimentConfig c = parse_config_text(smoke_text());
  const auto dir = test::scratch_dir("mislabel");
  run_all(c, dir, {}, false);
  const RunPaths run{dir};
  std::filesystem::copy_file(run.metrics(Variant::cae, AugmentKind::translation),
                             run.metrics(Variant::cae, AugmentKind::deformation),
                             std::filesystem::copy_options::overwrite_existing);
  EXPECT_THROW(build_report(c, run), FormatError);
}

TEST(Stages, TrainRejectsPoolOfAnotherSide) {
  const ExperimentConfig c = parse_config_text(smoke_text());
  const auto dir = test::scratch_dir("side");
  gen_data(c, dir / "data");
  std::string text = smoke_text();
  text.replace(text.find("side = 14"), 9, "side = 12");
  const ExperimentConfig other = parse_config_text(text);
  EXPECT_THROW(train_stage(other, Variant::cae, dir / "data", dir / "m.rsmdl"), FormatError);
}

TEST(Stages, RunAllIsDeterministicAcrossThreadCounts) {
  const ExperimentConfig c = parse_config_text(smoke_text());
  const auto dir = test::scratch_dir("threads");
  nlohmann::json a, b;
  {
    test::ThreadsOverride t(1);
    a = run_all(c, dir / "a", {}, true);
  }
  {
    test::ThreadsOverride t(3);
    b = run_all(c, dir / "b", {}, true);
  }
  EXPECT_EQ(strip_timing(a).dump(), strip_timing(b).dump());
  EXPECT_EQ(test::slurp(dir / "a" / "scatter" / "vae_deformation.svg"),
            test::slurp(dir / "b" / "scatter" / "vae_deformation.svg"));
}
