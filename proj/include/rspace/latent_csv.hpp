#pragma once

// Latent export: CSV with header label,frame,cz,cy,cx,z0..z{L-1}; one row
// per patch, floats with 9 significant digits.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rspace/common.hpp"
#include "rspace/eval/evaluate.hpp"
#include "rspace/volume.hpp"

namespace rspace {

struct LatentRow {
  int label = 0;
  int frame = 0;
  Index3 center;
  std::vector<float> z;
};

inline std::string format_g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline void write_latent_csv(const std::string& path, const std::vector<LatentRow>& rows) {
  const std::size_t dim = rows.empty() ? 0 : rows.front().z.size();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "label,frame,cz,cy,cx";
  for (std::size_t j = 0; j < dim; ++j) out << ",z" << j;
  out << '\n';
  for (const auto& r : rows) {
    if (r.z.size() != dim) throw ShapeError("latent rows differ in dimension");
    out << r.label << ',' << r.frame << ',' << r.center.z << ',' << r.center.y << ',' << r.center.x;
    for (float v : r.z) out << ',' << format_g9(v);
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::vector<LatentRow> read_latent_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string line;
  if (!std::getline(in, line)) throw FormatError("latent CSV '" + path + "' is empty", 0);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  const char* fixed[] = {"label", "frame", "cz", "cy", "cx"};
  if (header.size() < 6) throw FormatError("latent CSV header needs label,frame,cz,cy,cx,z0..", 0);
  for (std::size_t i = 0; i < 5; ++i)
    if (header[i] != fixed[i]) throw FormatError("latent CSV header column " + std::to_string(i) + " should be '" + fixed[i] + "'", 0);
  for (std::size_t i = 5; i < header.size(); ++i)
    if (header[i] != "z" + std::to_string(i - 5)) throw FormatError("latent CSV header column " + std::to_string(i) + " should be 'z" + std::to_string(i - 5) + "'", 0);
  const std::size_t dim = header.size() - 5;

  std::vector<LatentRow> rows;
  std::uint64_t offset = line.size() + 1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      offset += 1;
      continue;
    }
    std::vector<double> vals;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (p <= end) {
      const char* comma = std::find(p, end, ',');
      double v = 0.0;
      const auto res = std::from_chars(p, comma, v);
      if (res.ec != std::errc() || res.ptr != comma)
        throw FormatError("latent CSV line " + std::to_string(line_no) + ": bad number '" + std::string(p, comma) + "'",
                          offset + std::uint64_t(p - line.data()));
      vals.push_back(v);
      p = comma + 1;
    }
    if (vals.size() != dim + 5)
      throw FormatError("latent CSV line " + std::to_string(line_no) + ": expected " + std::to_string(dim + 5) +
                            " fields, got " + std::to_string(vals.size()),
                        offset);
    LatentRow r;
    r.label = int(vals[0]);
    r.frame = int(vals[1]);
    r.center = {int(vals[2]), int(vals[3]), int(vals[4])};
    r.z.assign(vals.begin() + 5, vals.end());
    rows.push_back(std::move(r));
    offset += line.size() + 1;
  }
  return rows;
}

inline eval::PointSet to_point_set(const std::vector<LatentRow>& rows) {
  eval::PointSet ps;
  const std::size_t dim = rows.empty() ? 0 : rows.front().z.size();
  ps.points.resize(Eigen::Index(rows.size()), Eigen::Index(dim));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < dim; ++j) ps.points(Eigen::Index(i), Eigen::Index(j)) = rows[i].z[j];
    ps.labels.push_back(rows[i].label);
  }
  return ps;
}

}  // namespace rspace
