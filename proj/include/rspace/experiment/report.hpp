#pragma once

#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>

#include "json.hpp"
#include "rspace/eval/evaluate.hpp"
#include "rspace/experiment/config.hpp"
#include "rspace/experiment/pipeline.hpp"
#include "rspace/latent_csv.hpp"

namespace rspace::experiment {

inline constexpr const char* kReportFormat = "rspace-report";
inline constexpr int kReportVersion = 1;

/// Gathers the per-cell metrics and training logs of a run directory into
/// the report object. `wall_time` is stored under "timing", which is the
/// only part of the report that may differ between identical runs.
inline nlohmann::json build_report(const ExperimentConfig& cfg, const RunPaths& run,
                                   std::optional<double> wall_time = std::nullopt) {
  nlohmann::json r{{"format", kReportFormat},
                   {"version", kReportVersion},
                   {"config_hash", cfg.hash()},
                   {"master_seed", cfg.master_seed},
                   {"seeds", cfg.seeds().to_json()},
                   {"config", cfg.to_json()},
                   {"cells", nlohmann::json::array()},
                   {"training", nlohmann::json::object()}};
  for (Variant v : kAllVariants) {
    for (AugmentKind e : kExperiments) {
      const nlohmann::json cell = read_json(run.metrics(v, e));
      if (cell.value("variant", "") != to_string(v) || cell.value("experiment", "") != to_string(e))
        throw FormatError("metrics file '" + run.metrics(v, e).string() + "' is labeled for another cell", 0);
      eval::metrics_from_json(cell);
      r["cells"].push_back(cell);
    }
    const nlohmann::json log = read_json(train_log_path(run.model(v)));
    r["training"][to_string(v)] = {{"seed", log.at("seed")},
                                   {"epochs", log.at("epochs")},
                                   {"loss_curve", log.at("loss_curve")},
                                   {"validation_curve", log.at("validation_curve")}};
  }
  r["timing"] = {{"wall_time_seconds", wall_time ? nlohmann::json(*wall_time) : nlohmann::json(nullptr)}};
  return r;
}

inline std::string format_precision(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%#.4g", v);
  return buf;
}

inline std::string format_ch(double v) {
  if (std::isinf(v)) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.0f", std::round(v));
  return buf;
}

/// Table layout: one row per variant; precision with 4 significant digits,
/// ground-truth CH score rounded to an integer.
inline std::string report_csv(const nlohmann::json& report) {
  std::string out = "variant,precision_deformation,precision_translation,ch_deformation,ch_translation\n";
  for (Variant v : kAllVariants) {
    eval::EvalMetrics cell[2];
    for (const auto& c : report.at("cells")) {
      if (c.at("variant") != to_string(v)) continue;
      const int idx = c.at("experiment") == "deformation" ? 0 : 1;
      cell[idx] = eval::metrics_from_json(c);
    }
    out += std::string(to_string(v)) + "," + format_precision(cell[0].precision) + "," +
           format_precision(cell[1].precision) + "," + format_ch(cell[0].ch_ground_truth) + "," +
           format_ch(cell[1].ch_ground_truth) + "\n";
  }
  return out;
}

/// First two principal components, each oriented so its largest-magnitude
/// loading is positive.
inline Points pca_2d(const Points& x) {
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / double(std::max<Eigen::Index>(1, x.rows() - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::Index d = x.cols();
  Eigen::MatrixXd basis(d, 2);
  for (int c = 0; c < 2; ++c) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
    if (d > c) v = es.eigenvectors().col(d - 1 - c);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    basis.col(c) = v;
  }
  return centered * basis;
}

inline std::string scatter_svg(const eval::PointSet& ps, const std::string& title) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  const Points p = pca_2d(ps.points);
  const double W = 480, H = 480, pad = 30;
  const double x0 = p.col(0).minCoeff(), x1 = p.col(0).maxCoeff();
  const double y0 = p.col(1).minCoeff(), y1 = p.col(1).maxCoeff();
  const double sx = x1 > x0 ? (W - 2 * pad) / (x1 - x0) : 1.0, sy = y1 > y0 ? (H - 2 * pad) / (y1 - y0) : 1.0;
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"480\" viewBox=\"0 0 480 480\">\n";
  out += "<rect width=\"480\" height=\"480\" fill=\"white\"/>\n";
  out += "<text x=\"10\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">" + title + " (PCA)</text>\n";
  char buf[160];
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double cx = pad + (p(i, 0) - x0) * sx, cy = H - pad - (p(i, 1) - y0) * sy;
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\" fill-opacity=\"0.7\"/>\n", cx,
                  cy, palette[std::size_t(ps.labels[std::size_t(i)]) % 10]);
    out += buf;
  }
  out += "</svg>\n";
  return out;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

/// Writes report.json and report.csv, plus one PCA scatter per cell when
/// `scatter` is set.
inline nlohmann::json emit_report(const ExperimentConfig& cfg, const RunPaths& run, bool scatter = true,
                                  std::optional<double> wall_time = std::nullopt) {
  const nlohmann::json report = build_report(cfg, run, wall_time);
  write_json(run.report_json(), report);
  write_text(run.report_csv(), report_csv(report));
  if (scatter) {
    ensure_dir(run.dir / "scatter");
    for (Variant v : kAllVariants)
      for (AugmentKind e : kExperiments)
        write_text(run.scatter(v, e), scatter_svg(to_point_set(read_latent_csv(run.latents(v, e).string())),
                                                  cell_name(v, e)));
  }
  return report;
}

/// The report with its timing block removed: a pure function of the config.
inline nlohmann::json strip_timing(nlohmann::json report) {
  report.erase("timing");
  return report;
}

}  // namespace rspace::experiment
