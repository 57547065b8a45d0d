#pragma once

// Detection matching, FROC, ROC/AUC and false-positive reduction reports.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "volxai/volgrid.hpp"

namespace volxai {

/// Proposal box with its stage-1 confidence and optional stage-2 posterior.
struct Detection {
  Box3 box{};
  double confidence = 0.0;
  Index3 patch_center{};
  std::optional<double> stage2_posterior;
};

nlohmann::json to_json(const Detection& d);
Detection detection_from_json(const nlohmann::json& j);

}  // namespace volxai

namespace volxai::eval {

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> tp;  // (detection, lesion)
  std::vector<std::size_t> fp;                          // detection indices
  std::vector<std::size_t> fn;                          // lesion indices
  double iou_threshold = 0.1;
};

/// Detection visiting order: confidence descending, then box min corner
/// ascending, then input index.
std::vector<std::size_t> confidence_order(const std::vector<Detection>& dets);

/// Greedy matching in confidence order; each detection takes the unmatched
/// lesion of highest IoU >= threshold (lowest index on ties).
MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<Box3>& lesions,
                             double iou_threshold);

struct PatientDetections {
  std::string id;
  std::vector<Detection> detections;
  std::vector<Box3> lesions;
};

struct FrocPoint {
  double threshold = 0.0;
  double sensitivity = 0.0;
  double fp_per_patient = 0.0;
  long long tp = 0;
  long long fp = 0;
};

/// Points ordered by ascending threshold, one per distinct confidence.
struct FrocCurve {
  std::vector<FrocPoint> points;
  long long lesions = 0;
  std::size_t patients = 0;
};

/// Throws NumericalError when the cohort has no lesions.
FrocCurve froc(const std::vector<PatientDetections>& cohort, double iou_threshold);

/// Highest sensitivity attained at or below `max_fp_per_patient` (0 when none).
double sensitivity_at_fp(const FrocCurve& c, double max_fp_per_patient);

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

/// Starts at (0, 0) (threshold +inf) and ends at (1, 1).
struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

/// Labels are 1 (positive) or 0. Throws InvalidArgument for single-class input.
RocCurve roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct FpReduction {
  long long fp_before = 0;
  long long fp_after = 0;
  long long removed = 0;
  double percent = 0.0;
  bool tp_preserved = true;
  std::size_t patients = 0;
  double fp_per_patient_after = 0.0;
  long long tp_before = 0;
  long long tp_after = 0;
};

nlohmann::json to_json(const FpReduction& r);

/// Per-patient match results of the same cohort before and after filtering.
FpReduction fp_reduction_report(const std::vector<MatchResult>& stage1,
                                const std::vector<MatchResult>& stage2);

/// Count form. A zero fp_before gives percent 0.
FpReduction fp_reduction_report(long long fp_before, long long fp_after, bool tp_preserved,
                                std::size_t patients);

}  // namespace volxai::eval
