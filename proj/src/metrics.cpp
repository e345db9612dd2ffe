#include "anatomatch/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace anatomatch {
namespace {

// Fixed summation order: records are sorted by value before summing so the
// result does not depend on record order.
MeanStd mean_std(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double sum = 0;
  for (double x : v) sum += x;
  const double mean = sum / static_cast<double>(v.size());
  double sq = 0;
  for (double x : v) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / static_cast<double>(v.size()))};
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt_ms(const MeanStd& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f±%.2f", m.mean, m.std);
  return buf;
}

}  // namespace

void validate_records(const std::vector<EvalRecord>& records) {
  require(!records.empty(), "no evaluation records");
  for (const auto& r : records) {
    require(std::isfinite(r.predicted.z) && std::isfinite(r.predicted.y) && std::isfinite(r.predicted.x) &&
                std::isfinite(r.truth.z) && std::isfinite(r.truth.y) && std::isfinite(r.truth.x),
            "record '" + r.id + "' has non-finite coordinates");
    require(r.radius_mm > 0, "record '" + r.id + "' needs a positive radius");
  }
}

double cpm(const std::vector<EvalRecord>& records, std::optional<double> fixed) {
  validate_records(records);
  int hits = 0;
  for (const auto& r : records) {
    const double thr = fixed ? *fixed : r.radius_mm;
    if (distance(r.predicted, r.truth) < thr) ++hits;
  }
  return 100.0 * hits / static_cast<double>(records.size());
}

MedResult med(const std::vector<EvalRecord>& records) {
  validate_records(records);
  std::vector<double> d, dz, dy, dx;
  for (const auto& r : records) {
    d.push_back(distance(r.predicted, r.truth));
    dz.push_back(std::abs(r.predicted.z - r.truth.z));
    dy.push_back(std::abs(r.predicted.y - r.truth.y));
    dx.push_back(std::abs(r.predicted.x - r.truth.x));
  }
  return {mean_std(d), mean_std(dx), mean_std(dy), mean_std(dz)};
}

EvalSummary summarize(const std::vector<EvalRecord>& records) {
  EvalSummary s;
  s.n = static_cast<int>(records.size());
  s.cpm_at_10mm = cpm(records, kCpmFixedThresholdMm);
  s.cpm_at_radius = cpm(records, std::nullopt);
  const MedResult m = med(records);
  s.med = m.med;
  s.med_x = m.med_x;
  s.med_y = m.med_y;
  s.med_z = m.med_z;
  return s;
}

LandmarkTable landmark_table(const std::vector<std::pair<std::string, std::vector<EvalRecord>>>& groups) {
  require(!groups.empty(), "landmark table needs at least one group");
  LandmarkTable t;
  std::vector<double> all;
  auto row_of = [](const std::string& name, const std::vector<double>& d) {
    const MeanStd ms = mean_std(d);
    return LandmarkRow{name, static_cast<int>(d.size()), ms.mean, ms.std, *std::max_element(d.begin(), d.end())};
  };
  for (const auto& [name, recs] : groups) {
    require(!recs.empty(), "landmark group '" + name + "' is empty");
    std::vector<double> d;
    for (const auto& r : recs) d.push_back(distance(r.predicted, r.truth));
    all.insert(all.end(), d.begin(), d.end());
    t.rows.push_back(row_of(name, d));
  }
  t.overall = row_of("overall", all);
  return t;
}

std::string format_landmark_cell(const LandmarkRow& row) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.1f±%.1f %.1f", row.mean, row.std, row.max);
  return buf;
}

std::string summary_table(const std::vector<std::pair<std::string, EvalSummary>>& rows) {
  const std::vector<std::string> head = {"Method", "CPM@10mm", "CPM@Radius", "MED_X", "MED_Y", "MED_Z", "MED"};
  std::vector<std::vector<std::string>> cells{head};
  for (const auto& [name, s] : rows)
    cells.push_back({name, fmt("%.2f", s.cpm_at_10mm), fmt("%.2f", s.cpm_at_radius), fmt_ms(s.med_x),
                     fmt_ms(s.med_y), fmt_ms(s.med_z), fmt_ms(s.med)});
  // Width in code points; "±" is two bytes in UTF-8.
  auto width = [](const std::string& s) {
    size_t w = 0;
    for (unsigned char c : s) w += (c & 0xC0) != 0x80;
    return w;
  };
  std::vector<size_t> w(head.size(), 0);
  for (const auto& r : cells)
    for (size_t c = 0; c < r.size(); ++c) w[c] = std::max(w[c], width(r[c]));
  std::ostringstream os;
  for (const auto& r : cells) {
    for (size_t c = 0; c < r.size(); ++c) {
      if (c) os << " | ";
      os << r[c] << std::string(w[c] - width(r[c]), ' ');
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace anatomatch
