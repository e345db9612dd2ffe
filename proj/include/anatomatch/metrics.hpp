#pragma once

#include <optional>
#include <string>
#include <vector>

#include "anatomatch/volume.hpp"

namespace anatomatch {

struct EvalRecord {
  std::string id;
  PhysPoint predicted;
  PhysPoint truth;
  double radius_mm = 0;
  std::string method;
};

struct MeanStd {
  double mean = 0;
  double std = 0;  // population
};

struct EvalSummary {
  int n = 0;
  double cpm_at_10mm = 0;   // percent
  double cpm_at_radius = 0; // percent
  MeanStd med, med_x, med_y, med_z;
};

inline constexpr double kCpmFixedThresholdMm = 10.0;

// Percentage of records with |pred - truth| strictly below the threshold.
// Without a fixed threshold each record's own radius is used.
double cpm(const std::vector<EvalRecord>& records, std::optional<double> fixed_threshold_mm);

struct MedResult {
  MeanStd med, med_x, med_y, med_z;
};

MedResult med(const std::vector<EvalRecord>& records);

EvalSummary summarize(const std::vector<EvalRecord>& records);

void validate_records(const std::vector<EvalRecord>& records);

// Landmark table: per-group mean +- std and max of the Euclidean distance.
struct LandmarkRow {
  std::string name;
  int n = 0;
  double mean = 0, std = 0, max = 0;
};

struct LandmarkTable {
  std::vector<LandmarkRow> rows;
  LandmarkRow overall;
};

LandmarkTable landmark_table(const std::vector<std::pair<std::string, std::vector<EvalRecord>>>& groups);

// "m±s max" with one decimal.
std::string format_landmark_cell(const LandmarkRow& row);

// Aligned plain text, columns: Method | CPM@10mm | CPM@Radius | MED_X | MED_Y | MED_Z | MED.
std::string summary_table(const std::vector<std::pair<std::string, EvalSummary>>& rows);

}  // namespace anatomatch
