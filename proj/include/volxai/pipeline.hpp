#pragma once

// Two-stage detect-then-filter pipeline.
//
// Stage 1 scores a cube window (the detector's input size) on a regular
// grid of centers with a 1-logit scorer, keeps local maxima of the logit
// map whose sigmoid confidence clears the score threshold, refines each
// maximum on the unit grid around it and emits a fixed-size box (the
// window) centered there; NMS removes duplicates. Stage 2 annotates every
// detection with the posterior of a patch classifier.

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "volxai/evaluation.hpp"
#include "volxai/neuralnet.hpp"
#include "volxai/train.hpp"
#include "volxai/volgrid.hpp"

namespace volxai::pipeline {

struct DetectorConfig {
  int stride = 3;
  double score_threshold = 0.05;
  double nms_iou = 0.25;
  bool refine = true;

  void validate() const;
};

nlohmann::json to_json(const DetectorConfig& c);
DetectorConfig detector_config_from_json(const nlohmann::json& j, DetectorConfig base = {});

/// Window centers used by `detect`: stride/2, stride/2 + stride, ... per axis.
std::vector<int> grid_positions(int extent, int stride);

/// Greedy NMS by descending confidence (ties: lexicographic box min corner).
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

std::vector<Detection> detect(const MultiModalCase& c, const nn::Model& detector,
                              const DetectorConfig& cfg);

/// Same search with an arbitrary logit function of the window center.
std::vector<Detection> detect_with_scorer(const MultiModalCase& c, int window,
                                          const DetectorConfig& cfg,
                                          const std::function<double(const Index3&)>& scorer);

/// Same order as the input; only stage2_posterior is filled in.
std::vector<Detection> classify_detections(const MultiModalCase& c, std::vector<Detection> dets,
                                           const nn::Model& classifier);

enum class Stage { Detector, Classifier };
std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view s);

/// Stage-1 confidence or stage-2 posterior.
double stage_score(const Detection& d, Stage s);

struct OperatingPoint {
  Stage stage = Stage::Detector;
  double threshold = 0.0;
  double target_sensitivity = 0.0;
  double sensitivity = 0.0;
  double fp_per_patient = 0.0;
  long long tp = 0;
  long long fp = 0;
  bool reachable = true;
};

nlohmann::json to_json(const OperatingPoint& op);
OperatingPoint operating_point_from_json(const nlohmann::json& j);

/// Largest threshold among the stage scores whose sensitivity reaches the
/// target. When unreachable, the smallest threshold with reachable = false.
/// Throws NumericalError when the cohort has no lesions.
OperatingPoint threshold_at_sensitivity(const std::vector<eval::PatientDetections>& cohort,
                                        double iou_threshold, double target_sensitivity,
                                        Stage stage);

/// Detections whose stage score is >= the operating threshold.
std::vector<Detection> apply_operating_point(const std::vector<Detection>& dets,
                                             const OperatingPoint& op);

struct SampleConfig {
  int positives_per_lesion = 8;
  int jitter_vox = 1;
  int negatives_per_case = 32;
  /// Negatives keep at least this distance (voxels) from every lesion center.
  double negative_clearance_vox = 6.0;
  double candidate_iou = 0.1;

  void validate() const;
};

nlohmann::json to_json(const SampleConfig& c);
SampleConfig sample_config_from_json(const nlohmann::json& j, SampleConfig base = {});

/// Lesion-centered positives (center jitter) and random in-grid negatives.
std::vector<nn::LabeledPatch> detector_samples(const std::vector<MultiModalCase>& cases,
                                               int window, const SampleConfig& cfg,
                                               std::uint64_t seed);

/// Candidate detections labeled by matching (TP = 1), plus one patch centered
/// on every ground-truth lesion.
std::vector<nn::LabeledPatch> classifier_samples(const std::vector<MultiModalCase>& cases,
                                                 const std::vector<std::vector<Detection>>& dets,
                                                 int patch_size, const SampleConfig& cfg);

std::vector<Box3> lesion_boxes(const MultiModalCase& c);

/// 1 for detections matched to a lesion at `iou_threshold`, else 0.
std::vector<int> match_labels(const std::vector<Detection>& dets, const std::vector<Box3>& lesions,
                              double iou_threshold);

}  // namespace volxai::pipeline
