#pragma once

// Experiment configuration: one INI file with sections [experiment], [data],
// [patches], [augment], [train], [train.cae|vae|swae], [eval], [seeds].
// Unknown sections or keys are rejected.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rspace/augmentation.hpp"
#include "rspace/autoencoders.hpp"
#include "rspace/common.hpp"
#include "rspace/eval/kmeans.hpp"
#include "rspace/phantom.hpp"
#include "rspace/training.hpp"

namespace rspace::experiment {

struct PatchConfig {
  int n = 10;
  int side = 30;
  int margin = 10;
  int pool_size = 2000;
  double validation_fraction = 0.1;
};

struct AugmentConfig {
  int n_aug = 50;
  DeformConfig deform;
  TranslateConfig translate;
};

struct TrainSection {
  int epochs = 10;
  int batch_size = 16;
  double learning_rate = 1e-3;
  int latent_dim = 128;
  std::vector<int> channels{8, 16, 32};
  std::map<Variant, int> epochs_override, batch_override;
  std::map<Variant, double> lr_override;
  VariantParams hyper;
};

struct EvalConfig {
  int k = 10;
  bool vae_sample = false;
  eval::KMeansConfig kmeans;
};

/// Every RNG consumer's seed. Defaults derive from the master seed and a
/// stage tag; [seeds] may pin any of them.
struct Seeds {
  std::uint64_t phantom = 0, references = 0, pool = 0, augment = 0, encode = 0, eval = 0;
  std::map<Variant, std::uint64_t> train;

  nlohmann::json to_json() const {
    nlohmann::json j{{"phantom", phantom}, {"references", references}, {"pool", pool},
                     {"augment", augment}, {"encode", encode},         {"eval", eval}};
    for (const auto& [v, s] : train) j[std::string("train_") + to_string(v)] = s;
    return j;
  }
};

struct ExperimentConfig {
  std::uint64_t master_seed = 1;
  PhantomConfig data;
  PatchConfig patches;
  AugmentConfig augment;
  TrainSection train;
  EvalConfig eval;
  std::map<std::string, std::uint64_t> seed_pins;
  std::string source_text;  // raw bytes the config was parsed from

  Seeds seeds() const {
    auto pick = [&](const std::string& tag) {
      const auto it = seed_pins.find(tag);
      return it != seed_pins.end() ? it->second : derive_seed(master_seed, tag);
    };
    Seeds s;
    s.phantom = pick("phantom");
    s.references = pick("references");
    s.pool = pick("pool");
    s.augment = pick("augment");
    s.encode = pick("encode");
    s.eval = pick("eval");
    for (Variant v : kAllVariants) s.train[v] = pick(std::string("train_") + to_string(v));
    return s;
  }

  TrainConfig train_config(Variant v) const {
    TrainConfig t;
    t.epochs = train.epochs_override.count(v) ? train.epochs_override.at(v) : train.epochs;
    t.batch_size = train.batch_override.count(v) ? train.batch_override.at(v) : train.batch_size;
    t.adam.lr = train.lr_override.count(v) ? train.lr_override.at(v) : train.learning_rate;
    t.hyper = train.hyper;
    t.latent_dim = train.latent_dim;
    t.arch.channels = train.channels;
    t.seed = seeds().train.at(v);
    return t;
  }

  std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(source_text)));
    return buf;
  }

  void validate() const {
    data.validate();
    if (patches.n < 1) throw ConfigError("patches.n must be >= 1");
    if (patches.side < 2) throw ConfigError("patches.side must be >= 2");
    if (patches.pool_size < 2) throw ConfigError("patches.pool_size must be >= 2");
    if (!(patches.validation_fraction >= 0.0 && patches.validation_fraction < 1.0))
      throw ConfigError("patches.validation_fraction must be in [0, 1)");
    augment.deform.validate();
    augment.translate.validate();
    if (augment.n_aug < 1) throw ConfigError("augment.n_aug must be >= 1");
    if (patches.margin < augment.translate.max_shift)
      throw ConfigError("patches.margin (" + std::to_string(patches.margin) + ") must be >= augment.max_shift (" +
                        std::to_string(augment.translate.max_shift) + ")");
    const AxisRange rz = admissible_centers(data.dims.nz, patches.side, patches.margin);
    const AxisRange ry = admissible_centers(data.dims.ny, patches.side, patches.margin);
    const AxisRange rx = admissible_centers(data.dims.nx, patches.side, patches.margin);
    if (rz.empty() || ry.empty() || rx.empty())
      throw ConfigError("data dims too small for patches of side " + std::to_string(patches.side) + " with margin " +
                        std::to_string(patches.margin));
    if (eval.k != patches.n)
      throw ConfigError("eval.k (" + std::to_string(eval.k) + ") must equal the number of reference patches (" +
                        std::to_string(patches.n) + ")");
    for (Variant v : kAllVariants) train_config(v).validate(v);
  }

  nlohmann::json to_json() const {
    return {{"master_seed", master_seed},
            {"data",
             {{"nz", data.dims.nz},
              {"ny", data.dims.ny},
              {"nx", data.dims.nx},
              {"n_frames", data.n_frames},
              {"n_inclusions", data.n_inclusions},
              {"radius_min", data.radius_min},
              {"radius_max", data.radius_max},
              {"speckle_strength", data.speckle_strength},
              {"speckle_mode", data.speckle_mode == SpeckleMode::fixed ? "fixed" : "per_frame"},
              {"motion_amplitude", data.motion_amplitude},
              {"motion_period", data.motion_period}}},
            {"patches",
             {{"n", patches.n},
              {"side", patches.side},
              {"margin", patches.margin},
              {"pool_size", patches.pool_size},
              {"validation_fraction", patches.validation_fraction}}},
            {"augment",
             {{"n_aug", augment.n_aug},
              {"grid_size", augment.deform.grid_size},
              {"sigma", augment.deform.sigma},
              {"spline_order", augment.deform.spline_order},
              {"max_shift", augment.translate.max_shift}}},
            {"train", train_json()},
            {"eval",
             {{"k", eval.k},
              {"vae_sample", eval.vae_sample},
              {"n_restarts", eval.kmeans.n_restarts},
              {"max_iter", eval.kmeans.max_iter},
              {"tol", eval.kmeans.tol}}}};
  }

 private:
  nlohmann::json train_json() const {
    nlohmann::json j{{"latent_dim", train.latent_dim}, {"channels", train.channels}};
    for (Variant v : kAllVariants) {
      const TrainConfig t = train_config(v);
      j[to_string(v)] = {{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"learning_rate", t.adam.lr}};
    }
    j["vae"]["beta"] = train.hyper.beta;
    j["swae"]["lambda"] = train.hyper.lambda;
    j["swae"]["n_projections"] = train.hyper.n_projections;
    j["swae"]["prior_radius"] = train.hyper.prior_radius;
    return j;
  }
};

namespace detail {

namespace pt = boost::property_tree;

template <class T>
T get_value(const pt::ptree& sec, const std::string& section, const std::string& key) {
  const std::string raw = sec.get<std::string>(key);
  std::istringstream in(raw);
  T v{};
  if constexpr (std::is_same_v<T, bool>) {
    if (raw == "true" || raw == "1" || raw == "yes") return true;
    if (raw == "false" || raw == "0" || raw == "no") return false;
    throw ConfigError("[" + section + "] " + key + ": expected a boolean, got '" + raw + "'");
  } else {
    in >> v;
    if (in.fail() || !(in >> std::ws).eof())
      throw ConfigError("[" + section + "] " + key + ": cannot parse '" + raw + "'");
    return v;
  }
}

class SectionReader {
 public:
  SectionReader(const pt::ptree& root, std::string name) : name_(std::move(name)) {
    if (auto sec = root.get_child_optional(pt::ptree::path_type(name_, '\0'))) sec_ = *sec;
  }

  template <class T>
  void read(const std::string& key, T& out) {
    used_.insert(key);
    if (sec_.count(key)) out = get_value<T>(sec_, name_, key);
  }

  template <class T>
  bool read_optional(const std::string& key, T& out) {
    used_.insert(key);
    if (!sec_.count(key)) return false;
    out = get_value<T>(sec_, name_, key);
    return true;
  }

  void finish() const {
    for (const auto& kv : sec_)
      if (!used_.count(kv.first)) throw ConfigError("unknown key '" + kv.first + "' in section [" + name_ + "]");
  }

  const pt::ptree& section() const { return sec_; }

 private:
  std::string name_;
  pt::ptree sec_;
  std::set<std::string> used_;
};

}  // namespace detail

inline ExperimentConfig parse_config_text(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree root;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, root);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  static const std::set<std::string> known{"experiment", "data",      "patches",    "augment", "train",
                                           "train.cae",  "train.vae", "train.swae", "eval",    "seeds"};
  for (const auto& kv : root)
    if (!known.count(kv.first)) throw ConfigError("unknown config section [" + kv.first + "]");

  ExperimentConfig c;
  c.source_text = text;
  {
    detail::SectionReader s(root, "experiment");
    s.read("master_seed", c.master_seed);
    s.finish();
  }
  {
    detail::SectionReader s(root, "data");
    s.read("nz", c.data.dims.nz);
    s.read("ny", c.data.dims.ny);
    s.read("nx", c.data.dims.nx);
    s.read("n_frames", c.data.n_frames);
    s.read("n_inclusions", c.data.n_inclusions);
    s.read("radius_min", c.data.radius_min);
    s.read("radius_max", c.data.radius_max);
    s.read("speckle_strength", c.data.speckle_strength);
    std::string mode;
    if (s.read_optional("speckle_mode", mode)) {
      if (mode == "per_frame")
        c.data.speckle_mode = SpeckleMode::per_frame;
      else if (mode == "fixed")
        c.data.speckle_mode = SpeckleMode::fixed;
      else
        throw ConfigError("[data] speckle_mode must be per_frame or fixed");
    }
    s.read("motion_amplitude", c.data.motion_amplitude);
    s.read("motion_period", c.data.motion_period);
    s.finish();
  }
  {
    detail::SectionReader s(root, "patches");
    s.read("n", c.patches.n);
    s.read("side", c.patches.side);
    s.read("margin", c.patches.margin);
    s.read("pool_size", c.patches.pool_size);
    s.read("validation_fraction", c.patches.validation_fraction);
    s.finish();
  }
  {
    detail::SectionReader s(root, "augment");
    s.read("n_aug", c.augment.n_aug);
    s.read("grid_size", c.augment.deform.grid_size);
    s.read("sigma", c.augment.deform.sigma);
    s.read("spline_order", c.augment.deform.spline_order);
    s.read("max_shift", c.augment.translate.max_shift);
    s.finish();
  }
  {
    detail::SectionReader s(root, "train");
    s.read("epochs", c.train.epochs);
    s.read("batch_size", c.train.batch_size);
    s.read("learning_rate", c.train.learning_rate);
    s.read("latent_dim", c.train.latent_dim);
    std::string channels;
    if (s.read_optional("channels", channels)) {
      c.train.channels.clear();
      std::stringstream ss(channels);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        try {
          c.train.channels.push_back(std::stoi(tok));
        } catch (const std::exception&) {
          throw ConfigError("[train] channels must be a comma-separated list of integers");
        }
      }
    }
    s.finish();
  }
  for (Variant v : kAllVariants) {
    detail::SectionReader s(root, std::string("train.") + to_string(v));
    int epochs = 0, batch = 0;
    double lr = 0.0;
    if (s.read_optional("epochs", epochs)) c.train.epochs_override[v] = epochs;
    if (s.read_optional("batch_size", batch)) c.train.batch_override[v] = batch;
    if (s.read_optional("learning_rate", lr)) c.train.lr_override[v] = lr;
    if (v == Variant::vae) s.read("beta", c.train.hyper.beta);
    if (v == Variant::swae) {
      s.read("lambda", c.train.hyper.lambda);
      s.read("n_projections", c.train.hyper.n_projections);
      s.read("prior_radius", c.train.hyper.prior_radius);
    }
    s.finish();
  }
  {
    detail::SectionReader s(root, "eval");
    s.read("k", c.eval.k);
    s.read("vae_sample", c.eval.vae_sample);
    s.read("n_restarts", c.eval.kmeans.n_restarts);
    s.read("max_iter", c.eval.kmeans.max_iter);
    s.read("tol", c.eval.kmeans.tol);
    s.finish();
  }
  {
    detail::SectionReader s(root, "seeds");
    for (const auto& kv : s.section()) {
      std::uint64_t v = 0;
      s.read(kv.first, v);
      c.seed_pins[kv.first] = v;
    }
    static const std::set<std::string> tags{"phantom", "references", "pool",      "augment",   "encode",
                                            "eval",    "train_cae",  "train_vae", "train_swae"};
    for (const auto& [k, v] : c.seed_pins)
      if (!tags.count(k)) throw ConfigError("unknown key '" + k + "' in section [seeds]");
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace rspace::experiment
