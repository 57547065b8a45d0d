#include "volxai/evaluation.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <set>

#include "volxai/errors.hpp"

namespace volxai {

using nlohmann::json;

json to_json(const Detection& d) {
  json j{{"box", {{"min", d.box.min}, {"max", d.box.max}}},
         {"confidence", d.confidence},
         {"patch_center", d.patch_center}};
  j["stage2_posterior"] = d.stage2_posterior ? json(*d.stage2_posterior) : json(nullptr);
  return j;
}

Detection detection_from_json(const json& j) {
  Detection d;
  d.box.min = j.at("box").at("min").get<Index3>();
  d.box.max = j.at("box").at("max").get<Index3>();
  d.confidence = j.at("confidence").get<double>();
  d.patch_center = j.at("patch_center").get<Index3>();
  if (j.contains("stage2_posterior") && !j["stage2_posterior"].is_null())
    d.stage2_posterior = j["stage2_posterior"].get<double>();
  return d;
}

}  // namespace volxai

namespace volxai::eval {

using nlohmann::json;

std::vector<std::size_t> confidence_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> idx(dets.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].confidence != dets[b].confidence) return dets[a].confidence > dets[b].confidence;
    return dets[a].box.min < dets[b].box.min;
  });
  return idx;
}

MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<Box3>& lesions,
                             double iou_threshold) {
  MatchResult r;
  r.iou_threshold = iou_threshold;
  std::vector<bool> taken(lesions.size(), false);
  for (std::size_t d : confidence_order(dets)) {
    double best = -1.0;
    std::size_t pick = lesions.size();
    for (std::size_t l = 0; l < lesions.size(); ++l) {
      if (taken[l]) continue;
      const double v = iou(dets[d].box, lesions[l]);
      if (v >= iou_threshold && v > best) {
        best = v;
        pick = l;
      }
    }
    if (pick < lesions.size()) {
      taken[pick] = true;
      r.tp.emplace_back(d, pick);
    } else {
      r.fp.push_back(d);
    }
  }
  for (std::size_t l = 0; l < lesions.size(); ++l)
    if (!taken[l]) r.fn.push_back(l);
  return r;
}

FrocCurve froc(const std::vector<PatientDetections>& cohort, double iou_threshold) {
  FrocCurve c;
  c.patients = cohort.size();
  for (const auto& p : cohort) c.lesions += static_cast<long long>(p.lesions.size());
  if (c.lesions == 0) throw NumericalError("undefined sensitivity: cohort has no lesions");
  std::set<double> thresholds;
  for (const auto& p : cohort)
    for (const auto& d : p.detections) thresholds.insert(d.confidence);
  for (double t : thresholds) {
    FrocPoint pt;
    pt.threshold = t;
    for (const auto& p : cohort) {
      std::vector<Detection> kept;
      for (const auto& d : p.detections)
        if (d.confidence >= t) kept.push_back(d);
      const MatchResult m = match_detections(kept, p.lesions, iou_threshold);
      pt.tp += static_cast<long long>(m.tp.size());
      pt.fp += static_cast<long long>(m.fp.size());
    }
    pt.sensitivity = static_cast<double>(pt.tp) / static_cast<double>(c.lesions);
    pt.fp_per_patient =
        c.patients ? static_cast<double>(pt.fp) / static_cast<double>(c.patients) : 0.0;
    c.points.push_back(pt);
  }
  return c;
}

double sensitivity_at_fp(const FrocCurve& c, double max_fp_per_patient) {
  double best = 0.0;
  for (const auto& p : c.points)
    if (p.fp_per_patient <= max_fp_per_patient) best = std::max(best, p.sensitivity);
  return best;
}

RocCurve roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("scores and labels differ in length");
  long long pos = 0, neg = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw InvalidArgument("ROC labels must be 0 or 1");
    (l == 1 ? pos : neg) += 1;
  }
  if (pos == 0 || neg == 0) throw InvalidArgument("ROC needs both classes present");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  RocCurve r;
  r.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  long long tp = 0, fp = 0;
  for (std::size_t k = 0; k < idx.size();) {
    const double s = scores[idx[k]];
    while (k < idx.size() && scores[idx[k]] == s) {
      (labels[idx[k]] == 1 ? tp : fp) += 1;
      ++k;
    }
    const RocPoint prev = r.points.back();
    RocPoint pt{s, static_cast<double>(fp) / static_cast<double>(neg),
                static_cast<double>(tp) / static_cast<double>(pos)};
    r.auc += (pt.fpr - prev.fpr) * (pt.tpr + prev.tpr) / 2.0;
    r.points.push_back(pt);
  }
  return r;
}

json to_json(const FpReduction& r) {
  return json{{"fp_before", r.fp_before},
              {"fp_after", r.fp_after},
              {"removed", r.removed},
              {"percent", r.percent},
              {"tp_preserved", r.tp_preserved},
              {"patients", r.patients},
              {"fp_per_patient_after", r.fp_per_patient_after},
              {"tp_before", r.tp_before},
              {"tp_after", r.tp_after}};
}

FpReduction fp_reduction_report(long long fp_before, long long fp_after, bool tp_preserved,
                                std::size_t patients) {
  if (fp_before < 0 || fp_after < 0) throw InvalidArgument("false-positive counts must be >= 0");
  if (fp_after > fp_before) throw InvalidArgument("filtering cannot add false positives");
  if (patients == 0) throw InvalidArgument("false positives per patient need at least one patient");
  FpReduction r;
  r.fp_before = fp_before;
  r.fp_after = fp_after;
  r.removed = fp_before - fp_after;
  r.percent = fp_before > 0 ? 100.0 * static_cast<double>(r.removed) / static_cast<double>(fp_before)
                            : 0.0;
  r.tp_preserved = tp_preserved;
  r.patients = patients;
  r.fp_per_patient_after = static_cast<double>(fp_after) / static_cast<double>(patients);
  return r;
}

FpReduction fp_reduction_report(const std::vector<MatchResult>& stage1,
                                const std::vector<MatchResult>& stage2) {
  if (stage1.size() != stage2.size())
    throw InvalidArgument("stage results must cover the same cohort");
  long long fp1 = 0, fp2 = 0, tp1 = 0, tp2 = 0;
  bool preserved = true;
  for (std::size_t p = 0; p < stage1.size(); ++p) {
    fp1 += static_cast<long long>(stage1[p].fp.size());
    fp2 += static_cast<long long>(stage2[p].fp.size());
    tp1 += static_cast<long long>(stage1[p].tp.size());
    tp2 += static_cast<long long>(stage2[p].tp.size());
    std::set<std::size_t> after;
    for (const auto& [d, l] : stage2[p].tp) after.insert(l);
    for (const auto& [d, l] : stage1[p].tp)
      if (!after.count(l)) preserved = false;
  }
  FpReduction r = fp_reduction_report(fp1, fp2, preserved, stage1.size());
  r.tp_before = tp1;
  r.tp_after = tp2;
  return r;
}

}  // namespace volxai::eval
