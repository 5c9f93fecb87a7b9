#pragma once

// Stage-wise experiment pipeline. Every stage reads and writes files, and
// run_all is their composition over one run directory:
//
//   data/      phantom.rsvol references.rspat pool.json manifest.json
//   models/    <variant>.rsmdl <variant>.rsmdl.train.json
//   augment/   deformation.rspat translation.rspat manifest.json
//   latents/   <variant>_<experiment>.csv
//   metrics/   <variant>_<experiment>.json
//   report.json report.csv scatter/<variant>_<experiment>.svg

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rspace/augmentation.hpp"
#include "rspace/autoencoders.hpp"
#include "rspace/common.hpp"
#include "rspace/eval/evaluate.hpp"
#include "rspace/experiment/config.hpp"
#include "rspace/latent_csv.hpp"
#include "rspace/phantom.hpp"
#include "rspace/training.hpp"
#include "rspace/volume.hpp"

namespace rspace::experiment {

namespace fs = std::filesystem;
using Log = std::function<void(const std::string&)>;

inline constexpr AugmentKind kExperiments[] = {AugmentKind::deformation, AugmentKind::translation};

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what(), e.byte);
  }
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory '" + dir.string() + "'");
}

inline std::string cell_name(Variant v, AugmentKind e) { return std::string(to_string(v)) + "_" + to_string(e); }

// ---------------------------------------------------------------------------
// Training pool

struct PoolEntry {
  int frame = 0;
  Index3 center;
};

struct Pool {
  int side = 0;
  std::size_t n_train = 0;  // entries [0, n_train) train, the rest validate
  std::vector<PoolEntry> entries;
};

/// Pool centers are uniform over all full-patch positions of every frame;
/// a center in the same frame as a reference must lie at Euclidean
/// distance >= side from that reference's center.
inline Pool sample_pool(const Dims& dims, int n_frames, const std::vector<Patch>& refs, const PatchConfig& pc,
                        std::uint64_t seed) {
  const AxisRange rz = admissible_centers(dims.nz, pc.side, 0);
  const AxisRange ry = admissible_centers(dims.ny, pc.side, 0);
  const AxisRange rx = admissible_centers(dims.nx, pc.side, 0);
  if (rz.empty() || ry.empty() || rx.empty()) throw ConfigError("volume too small for pool patches");
  Rng rng(seed);
  std::uniform_int_distribution<int> fd(0, n_frames - 1), zd(rz.lo, rz.hi), yd(ry.lo, ry.hi), xd(rx.lo, rx.hi);
  const double min_d2 = double(pc.side) * double(pc.side);
  Pool pool;
  pool.side = pc.side;
  const std::size_t max_attempts = std::size_t(pc.pool_size) * 1000;
  std::size_t attempts = 0;
  while (pool.entries.size() < std::size_t(pc.pool_size)) {
    if (++attempts > max_attempts)
      throw ConfigError("could not place " + std::to_string(pc.pool_size) +
                        " pool patches away from the reference centers");
    PoolEntry e;
    e.frame = fd(rng);
    e.center = {zd(rng), yd(rng), xd(rng)};
    bool ok = true;
    for (const auto& r : refs) {
      if (r.frame_index != e.frame) continue;
      const double dz = e.center.z - r.center.z, dy = e.center.y - r.center.y, dx = e.center.x - r.center.x;
      if (dz * dz + dy * dy + dx * dx < min_d2) {
        ok = false;
        break;
      }
    }
    if (ok) pool.entries.push_back(e);
  }
  const auto n_val = std::size_t(std::floor(pc.validation_fraction * double(pc.pool_size)));
  pool.n_train = pool.entries.size() - n_val;
  return pool;
}

inline nlohmann::json to_json(const Pool& p) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : p.entries) entries.push_back({e.frame, e.center.z, e.center.y, e.center.x});
  return {{"side", p.side}, {"n_train", p.n_train}, {"entries", entries}};
}

inline Pool pool_from_json(const nlohmann::json& j) {
  try {
    Pool p;
    p.side = j.at("side").get<int>();
    p.n_train = j.at("n_train").get<std::size_t>();
    for (const auto& e : j.at("entries")) {
      if (!e.is_array() || e.size() != 4) throw FormatError("pool entry must be [frame, z, y, x]", 0);
      p.entries.push_back({e[0].get<int>(), {e[1].get<int>(), e[2].get<int>(), e[3].get<int>()}});
    }
    if (p.n_train > p.entries.size() || p.n_train == 0) throw FormatError("pool n_train out of range", 0);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed pool file: ") + e.what(), 0);
  }
}

inline std::vector<Patch> extract_pool(const VolumeSequence& seq, const Pool& pool, std::size_t begin,
                                       std::size_t end) {
  std::vector<Patch> out(end - begin);
  parallel_for(out.size(), [&](std::size_t i) {
    const PoolEntry& e = pool.entries[begin + i];
    if (e.frame < 0 || std::size_t(e.frame) >= seq.size())
      throw FormatError("pool entry " + std::to_string(begin + i) + " refers to missing frame " +
                            std::to_string(e.frame),
                        0);
    out[i] = extract_patch(seq, e.frame, e.center, pool.side);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Stages

struct DataPaths {
  fs::path dir;
  fs::path phantom() const { return dir / "phantom.rsvol"; }
  fs::path references() const { return dir / "references.rspat"; }
  fs::path pool() const { return dir / "pool.json"; }
  fs::path manifest() const { return dir / "manifest.json"; }
};

inline void gen_data(const ExperimentConfig& cfg, const fs::path& out_dir, const Log& log = {}) {
  const Seeds seeds = cfg.seeds();
  const DataPaths p{out_dir};
  ensure_dir(out_dir);
  if (log) log("generating phantom (" + std::to_string(cfg.data.n_frames) + " frames)");
  const VolumeSequence seq = generate_phantom(cfg.data, seeds.phantom);
  const std::vector<Patch> refs =
      sample_reference_patches(seq, cfg.patches.n, cfg.patches.side, cfg.patches.margin, seeds.references);
  const Pool pool = sample_pool(seq.dims(), int(seq.size()), refs, cfg.patches, seeds.pool);
  write_sequence(p.phantom().string(), seq);
  write_patches(p.references().string(), refs);
  write_json(p.pool(), to_json(pool));
  nlohmann::json manifest{{"config_hash", cfg.hash()},
                          {"seeds", {{"phantom", seeds.phantom}, {"references", seeds.references}, {"pool", seeds.pool}}},
                          {"references", nlohmann::json::array()}};
  for (const auto& r : refs)
    manifest["references"].push_back(
        {{"label", r.label}, {"frame", r.frame_index}, {"center", {r.center.z, r.center.y, r.center.x}}});
  write_json(p.manifest(), manifest);
}

inline fs::path train_log_path(const fs::path& model_path) { return fs::path(model_path.string() + ".train.json"); }

inline TrainResult train_stage(const ExperimentConfig& cfg, Variant variant, const fs::path& data_dir,
                               const fs::path& model_path, const Log& log = {}) {
  const DataPaths p{data_dir};
  const TrainConfig tc = cfg.train_config(variant);
  const VolumeSequence seq = read_sequence(p.phantom().string());
  const Pool pool = pool_from_json(read_json(p.pool()));
  if (pool.side != cfg.patches.side)
    throw FormatError("pool patches have side " + std::to_string(pool.side) + " but the config asks for " +
                          std::to_string(cfg.patches.side),
                      0);
  const std::vector<Patch> train_set = extract_pool(seq, pool, 0, pool.n_train);
  const std::vector<Patch> val_set = extract_pool(seq, pool, pool.n_train, pool.entries.size());
  if (log)
    log(std::string("training ") + to_string(variant) + " on " + std::to_string(train_set.size()) + " patches (" +
        std::to_string(val_set.size()) + " validation), " + std::to_string(tc.epochs) + " epochs");
  TrainResult res = train(variant, train_set, tc, val_set, [&](int epoch, double tl, double vl) {
    if (log) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s epoch %d/%d: train %.6g, validation %.6g", to_string(variant), epoch,
                    tc.epochs, tl, vl);
      log(buf);
    }
  });
  if (model_path.has_parent_path()) ensure_dir(model_path.parent_path());
  save_model(model_path.string(), res.model);
  write_json(train_log_path(model_path), {{"variant", to_string(variant)},
                                          {"seed", tc.seed},
                                          {"epochs", tc.epochs},
                                          {"batch_size", tc.batch_size},
                                          {"learning_rate", tc.adam.lr},
                                          {"n_train", train_set.size()},
                                          {"n_validation", val_set.size()},
                                          {"loss_curve", res.loss_curve},
                                          {"validation_curve", res.validation_curve}});
  return res;
}

struct AugmentPaths {
  fs::path dir;
  fs::path patches(AugmentKind k) const { return dir / (std::string(to_string(k)) + ".rspat"); }
  fs::path manifest() const { return dir / "manifest.json"; }
};

inline void augment_stage(const ExperimentConfig& cfg, const fs::path& data_dir, const fs::path& out_dir,
                          const Log& log = {}) {
  const DataPaths p{data_dir};
  const AugmentPaths a{out_dir};
  const VolumeSequence seq = read_sequence(p.phantom().string());
  const std::vector<Patch> refs = read_patches(p.references().string());
  if (log) log("augmenting " + std::to_string(refs.size()) + " references x " + std::to_string(cfg.augment.n_aug));
  const std::uint64_t seed = cfg.seeds().augment;
  const auto [def, tra] =
      build_experiment_sets(seq, refs, cfg.augment.n_aug, cfg.augment.deform, cfg.augment.translate, seed);
  ensure_dir(out_dir);
  write_patches(a.patches(AugmentKind::deformation).string(), def.patches);
  write_patches(a.patches(AugmentKind::translation).string(), tra.patches);
  nlohmann::json manifest{{"seed", seed},
                          {"n_aug", cfg.augment.n_aug},
                          {"deform",
                           {{"grid_size", cfg.augment.deform.grid_size},
                            {"sigma", cfg.augment.deform.sigma},
                            {"spline_order", cfg.augment.deform.spline_order}}},
                          {"translate", {{"max_shift", cfg.augment.translate.max_shift}}}};
  for (const AugmentedSet* set : {&def, &tra}) {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : set->records) {
      nlohmann::json jr{{"parent", r.parent_label}, {"seed", r.seed}};
      if (set->kind == AugmentKind::translation) jr["shift"] = {r.shift.z, r.shift.y, r.shift.x};
      recs.push_back(jr);
    }
    manifest[to_string(set->kind)] = recs;
  }
  write_json(a.manifest(), manifest);
}

inline void encode_stage(const fs::path& model_path, const fs::path& patches_path, const fs::path& csv_path,
                         bool vae_sample = false, std::uint64_t seed = 0) {
  const AeModel<float> model = load_model(model_path.string());
  const std::vector<Patch> patches = read_patches(patches_path.string());
  if (!patches.empty() && patches.front().side() != model.patch_side)
    throw FormatError("patches in '" + patches_path.string() + "' have side " +
                          std::to_string(patches.front().side()) + " but the model expects " +
                          std::to_string(model.patch_side),
                      0);
  const auto z = encode_all(model, patches, vae_sample, seed);
  std::vector<LatentRow> rows(patches.size());
  for (std::size_t i = 0; i < patches.size(); ++i)
    rows[i] = {patches[i].label, patches[i].frame_index, patches[i].center, z[i]};
  if (csv_path.has_parent_path()) ensure_dir(csv_path.parent_path());
  write_latent_csv(csv_path.string(), rows);
}

inline eval::EvalMetrics evaluate_stage(const fs::path& csv_path, int k, std::uint64_t seed,
                                        const eval::KMeansConfig& kcfg, const std::string& variant,
                                        const std::string& experiment, const fs::path& json_path) {
  const eval::PointSet ps = to_point_set(read_latent_csv(csv_path.string()));
  try {
    ps.validate();
  } catch (const ContractError& e) {
    throw FormatError("latent CSV '" + csv_path.string() + "': " + e.what(), 0);
  }
  const eval::EvalMetrics m = eval::evaluate_rspace(ps, k, seed, kcfg);
  if (json_path.has_parent_path()) ensure_dir(json_path.parent_path());
  write_json(json_path, eval::to_json(m, variant, experiment));
  return m;
}

// ---------------------------------------------------------------------------
// Orchestration

struct RunPaths {
  fs::path dir;
  fs::path data() const { return dir / "data"; }
  fs::path model(Variant v) const { return dir / "models" / (std::string(to_string(v)) + ".rsmdl"); }
  fs::path augment() const { return dir / "augment"; }
  fs::path latents(Variant v, AugmentKind e) const { return dir / "latents" / (cell_name(v, e) + ".csv"); }
  fs::path metrics(Variant v, AugmentKind e) const { return dir / "metrics" / (cell_name(v, e) + ".json"); }
  fs::path report_json() const { return dir / "report.json"; }
  fs::path report_csv() const { return dir / "report.csv"; }
  fs::path scatter(Variant v, AugmentKind e) const { return dir / "scatter" / (cell_name(v, e) + ".svg"); }
};

/// Runs fn, prefixing any library error with the stage name and its seed.
/// The error family (and so the exit code) is preserved.
template <class Fn>
void run_stage(const std::string& stage, std::uint64_t seed, Fn&& fn) {
  const std::string ctx = "stage '" + stage + "' (seed " + std::to_string(seed) + "): ";
  try {
    fn();
  } catch (const FormatError& e) {
    throw e.with_prefix(ctx);
  } catch (const ConfigError& e) {
    throw ConfigError(ctx + e.what());
  } catch (const IoError& e) {
    throw IoError(ctx + e.what());
  } catch (const BoundsError& e) {
    throw BoundsError(ctx + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(ctx + e.what());
  } catch (const ContractError& e) {
    throw ContractError(ctx + e.what());
  } catch (const TrainingError& e) {
    throw TrainingError(ctx + e.what());
  }
}

}  // namespace rspace::experiment
