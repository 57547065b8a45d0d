#include "volxai/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "volxai/errors.hpp"
#include "volxai/parallel.hpp"
#include "volxai/rng.hpp"

namespace volxai::pipeline {

using nlohmann::json;

void DetectorConfig::validate() const {
  if (stride < 1) throw InvalidArgument("detector stride must be >= 1");
  if (!(score_threshold >= 0) || score_threshold > 1)
    throw InvalidArgument("detector score threshold must lie in [0, 1]");
  if (!(nms_iou > 0) || nms_iou > 1) throw InvalidArgument("NMS IoU threshold must lie in (0, 1]");
}

json to_json(const DetectorConfig& c) {
  return json{{"stride", c.stride}, {"score_threshold", c.score_threshold},
              {"nms_iou", c.nms_iou}, {"refine", c.refine}};
}

DetectorConfig detector_config_from_json(const json& j, DetectorConfig c) {
  c.stride = j.value("stride", c.stride);
  c.score_threshold = j.value("score_threshold", c.score_threshold);
  c.nms_iou = j.value("nms_iou", c.nms_iou);
  c.refine = j.value("refine", c.refine);
  c.validate();
  return c;
}

std::vector<int> grid_positions(int extent, int stride) {
  std::vector<int> out;
  for (int x = stride / 2; x < extent; x += stride) out.push_back(x);
  if (out.empty()) out.push_back(extent / 2);
  return out;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  const auto order = eval::confidence_order(dets);
  std::vector<Detection> kept;
  for (std::size_t i : order) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (iou(k.box, dets[i].box) >= iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(dets[i]);
  }
  return kept;
}

namespace {

using LogitFn = std::function<double(const Index3&)>;

std::vector<Detection> detect_impl(const Index3& dims, int window, const DetectorConfig& cfg,
                                   const LogitFn& logit_at) {
  cfg.validate();
  const auto px = grid_positions(dims[0], cfg.stride), py = grid_positions(dims[1], cfg.stride),
             pz = grid_positions(dims[2], cfg.stride);
  const Index3 g{static_cast<int>(px.size()), static_cast<int>(py.size()),
                 static_cast<int>(pz.size())};
  std::vector<Index3> centers;
  for (int z : pz)
    for (int y : py)
      for (int x : px) centers.push_back({x, y, z});
  std::vector<double> logits(centers.size());
  parallel_for(centers.size(), [&](std::size_t i) { logits[i] = logit_at(centers[i]); });

  std::vector<Detection> raw;
  std::vector<Index3> peaks;
  for (int z = 0; z < g[2]; ++z)
    for (int y = 0; y < g[1]; ++y)
      for (int x = 0; x < g[0]; ++x) {
        const std::size_t i = linear_index(g, x, y, z);
        const double v = logits[i];
        if (nn::sigmoid(v) < cfg.score_threshold) continue;
        bool peak = true;
        for (int dz = -1; dz <= 1 && peak; ++dz)
          for (int dy = -1; dy <= 1 && peak; ++dy)
            for (int dx = -1; dx <= 1 && peak; ++dx) {
              if (!(dx || dy || dz) || !in_grid(g, x + dx, y + dy, z + dz)) continue;
              const std::size_t j = linear_index(g, x + dx, y + dy, z + dz);
              // Plateaus keep only their first member in scan order.
              if (logits[j] > v || (logits[j] == v && j < i)) peak = false;
            }
        if (peak) peaks.push_back(centers[i]);
      }

  const int r = cfg.refine ? cfg.stride / 2 : 0;
  std::vector<Detection> out(peaks.size());
  parallel_for(peaks.size(), [&](std::size_t k) {
    Index3 best = peaks[k];
    double best_v = logit_at(best);
    for (int dz = -r; dz <= r; ++dz)
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const Index3 c{peaks[k][0] + dx, peaks[k][1] + dy, peaks[k][2] + dz};
          if (!(dx || dy || dz) || !in_grid(dims, c[0], c[1], c[2])) continue;
          const double v = logit_at(c);
          if (v > best_v) {
            best_v = v;
            best = c;
          }
        }
    Detection d;
    d.patch_center = best;
    d.box = clip_box(centered_box(best, window), dims);
    d.confidence = nn::sigmoid(best_v);
    out[k] = d;
  });
  std::erase_if(out, [&](const Detection& d) { return d.confidence < cfg.score_threshold; });
  return nms(std::move(out), cfg.nms_iou);
}

}  // namespace

std::vector<Detection> detect(const MultiModalCase& c, const nn::Model& detector,
                              const DetectorConfig& cfg) {
  if (detector.spec.outputs != 1) throw InvalidArgument("detector scorer must have one output");
  nn::check_params(detector.spec, detector.params);
  const int window = detector.spec.input_size;
  return detect_impl(c.pet.dims(), window, cfg, [&](const Index3& center) {
    return nn::forward(detector, extract_patch(c, center, window)).logits[0];
  });
}

std::vector<Detection> detect_with_scorer(const MultiModalCase& c, int window,
                                          const DetectorConfig& cfg, const LogitFn& scorer) {
  return detect_impl(c.pet.dims(), window, cfg, scorer);
}

std::vector<Detection> classify_detections(const MultiModalCase& c, std::vector<Detection> dets,
                                           const nn::Model& classifier) {
  nn::check_params(classifier.spec, classifier.params);
  parallel_for(dets.size(), [&](std::size_t i) {
    dets[i].stage2_posterior = nn::predict_posterior(
        classifier, extract_patch(c, dets[i].patch_center, classifier.spec.input_size));
  });
  return dets;
}

std::string_view to_string(Stage s) { return s == Stage::Detector ? "detector" : "classifier"; }

Stage stage_from_string(std::string_view s) {
  if (s == "detector") return Stage::Detector;
  if (s == "classifier") return Stage::Classifier;
  throw ConfigError("unknown stage '" + std::string(s) + "' (expected detector or classifier)");
}

double stage_score(const Detection& d, Stage s) {
  if (s == Stage::Detector) return d.confidence;
  if (!d.stage2_posterior) throw InvalidArgument("detection has no stage-2 posterior");
  return *d.stage2_posterior;
}

json to_json(const OperatingPoint& op) {
  return json{{"stage", std::string(to_string(op.stage))},
              {"threshold", op.threshold},
              {"target_sensitivity", op.target_sensitivity},
              {"sensitivity", op.sensitivity},
              {"fp_per_patient", op.fp_per_patient},
              {"tp", op.tp},
              {"fp", op.fp},
              {"reachable", op.reachable}};
}

OperatingPoint operating_point_from_json(const json& j) {
  OperatingPoint op;
  op.stage = stage_from_string(j.at("stage").get<std::string>());
  op.threshold = j.at("threshold").get<double>();
  op.target_sensitivity = j.at("target_sensitivity").get<double>();
  op.sensitivity = j.at("sensitivity").get<double>();
  op.fp_per_patient = j.at("fp_per_patient").get<double>();
  op.tp = j.at("tp").get<long long>();
  op.fp = j.at("fp").get<long long>();
  op.reachable = j.at("reachable").get<bool>();
  return op;
}

OperatingPoint threshold_at_sensitivity(const std::vector<eval::PatientDetections>& cohort,
                                        double iou_threshold, double target, Stage stage) {
  long long lesions = 0;
  for (const auto& p : cohort) lesions += static_cast<long long>(p.lesions.size());
  if (lesions == 0) throw NumericalError("undefined sensitivity: cohort has no lesions");
  std::set<double> scores;
  for (const auto& p : cohort)
    for (const auto& d : p.detections) scores.insert(stage_score(d, stage));

  auto evaluate = [&](double t) {
    OperatingPoint op;
    op.stage = stage;
    op.threshold = t;
    op.target_sensitivity = target;
    for (const auto& p : cohort) {
      std::vector<Detection> kept;
      for (const auto& d : p.detections)
        if (stage_score(d, stage) >= t) kept.push_back(d);
      const auto m = eval::match_detections(kept, p.lesions, iou_threshold);
      op.tp += static_cast<long long>(m.tp.size());
      op.fp += static_cast<long long>(m.fp.size());
    }
    op.sensitivity = static_cast<double>(op.tp) / static_cast<double>(lesions);
    op.fp_per_patient = cohort.empty() ? 0.0 : static_cast<double>(op.fp) / cohort.size();
    return op;
  };
  for (auto it = scores.rbegin(); it != scores.rend(); ++it) {
    OperatingPoint op = evaluate(*it);
    if (op.sensitivity >= target) return op;
  }
  OperatingPoint op = evaluate(scores.empty() ? 0.0 : *scores.begin());
  op.reachable = false;
  return op;
}

std::vector<Detection> apply_operating_point(const std::vector<Detection>& dets,
                                             const OperatingPoint& op) {
  std::vector<Detection> out;
  for (const auto& d : dets)
    if (stage_score(d, op.stage) >= op.threshold) out.push_back(d);
  return out;
}

void SampleConfig::validate() const {
  if (positives_per_lesion < 1) throw InvalidArgument("positives_per_lesion must be >= 1");
  if (jitter_vox < 0) throw InvalidArgument("jitter_vox must be >= 0");
  if (negatives_per_case < 0) throw InvalidArgument("negatives_per_case must be >= 0");
  if (!(negative_clearance_vox >= 0)) throw InvalidArgument("negative clearance must be >= 0");
  if (!(candidate_iou > 0) || candidate_iou > 1) throw InvalidArgument("candidate_iou must lie in (0, 1]");
}

json to_json(const SampleConfig& c) {
  return json{{"positives_per_lesion", c.positives_per_lesion},
              {"jitter_vox", c.jitter_vox},
              {"negatives_per_case", c.negatives_per_case},
              {"negative_clearance_vox", c.negative_clearance_vox},
              {"candidate_iou", c.candidate_iou}};
}

SampleConfig sample_config_from_json(const json& j, SampleConfig c) {
  c.positives_per_lesion = j.value("positives_per_lesion", c.positives_per_lesion);
  c.jitter_vox = j.value("jitter_vox", c.jitter_vox);
  c.negatives_per_case = j.value("negatives_per_case", c.negatives_per_case);
  c.negative_clearance_vox = j.value("negative_clearance_vox", c.negative_clearance_vox);
  c.candidate_iou = j.value("candidate_iou", c.candidate_iou);
  c.validate();
  return c;
}

std::vector<Box3> lesion_boxes(const MultiModalCase& c) {
  std::vector<Box3> out;
  for (const auto& a : c.annotations) out.push_back(a.box);
  return out;
}

std::vector<int> match_labels(const std::vector<Detection>& dets, const std::vector<Box3>& lesions,
                              double iou_threshold) {
  std::vector<int> labels(dets.size(), 0);
  for (const auto& [d, l] : eval::match_detections(dets, lesions, iou_threshold).tp) labels[d] = 1;
  return labels;
}

std::vector<nn::LabeledPatch> detector_samples(const std::vector<MultiModalCase>& cases,
                                               int window, const SampleConfig& cfg,
                                               std::uint64_t seed) {
  cfg.validate();
  std::vector<nn::LabeledPatch> out;
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const MultiModalCase& c = cases[ci];
    const Index3& dims = c.pet.dims();
    rng::Stream s(rng::derive_seed(rng::derive_seed(seed, rng::StreamTag::Negatives), ci));
    for (const auto& a : c.annotations)
      for (int k = 0; k < cfg.positives_per_lesion; ++k) {
        Index3 p;
        for (int ax = 0; ax < 3; ++ax) {
          const int j = k == 0 ? 0 : static_cast<int>(s.uniform_int(-cfg.jitter_vox, cfg.jitter_vox));
          p[ax] = std::clamp(a.center[ax] + j, 0, dims[ax] - 1);
        }
        out.push_back({extract_patch(c, p, window), 1});
      }
    int made = 0;
    for (int attempt = 0; made < cfg.negatives_per_case && attempt < 100 * cfg.negatives_per_case;
         ++attempt) {
      Index3 p;
      for (int ax = 0; ax < 3; ++ax) p[ax] = static_cast<int>(s.uniform_int(0, dims[ax] - 1));
      bool clear = true;
      for (const auto& a : c.annotations) {
        double d2 = 0;
        for (int ax = 0; ax < 3; ++ax) d2 += double(p[ax] - a.center[ax]) * (p[ax] - a.center[ax]);
        if (d2 < cfg.negative_clearance_vox * cfg.negative_clearance_vox) clear = false;
      }
      if (!clear) continue;
      out.push_back({extract_patch(c, p, window), 0});
      ++made;
    }
  }
  return out;
}

std::vector<nn::LabeledPatch> classifier_samples(const std::vector<MultiModalCase>& cases,
                                                 const std::vector<std::vector<Detection>>& dets,
                                                 int patch_size, const SampleConfig& cfg) {
  if (cases.size() != dets.size()) throw InvalidArgument("one detection list per case required");
  std::vector<nn::LabeledPatch> out;
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const auto labels = match_labels(dets[ci], lesion_boxes(cases[ci]), cfg.candidate_iou);
    for (std::size_t k = 0; k < dets[ci].size(); ++k)
      out.push_back({extract_patch(cases[ci], dets[ci][k].patch_center, patch_size), labels[k]});
    for (const auto& a : cases[ci].annotations)
      out.push_back({extract_patch(cases[ci], a.center, patch_size), 1});
  }
  return out;
}

}  // namespace volxai::pipeline
