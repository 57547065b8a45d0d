#include "volxai/commands.hpp"

#include <cstdio>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "volxai/concepts.hpp"
#include "volxai/errors.hpp"
#include "volxai/evaluation.hpp"
#include "volxai/explain.hpp"
#include "volxai/model_io.hpp"
#include "volxai/parallel.hpp"
#include "volxai/phantom.hpp"
#include "volxai/rng.hpp"
#include "volxai/svg.hpp"
#include "volxai/volume_io.hpp"

namespace volxai::cmd {

namespace fs = std::filesystem;
using nlohmann::json;
using pipeline::Stage;

namespace paths {

fs::path model(const cfg::RunConfig& c, Stage s) {
  return c.output_dir / "models" / (std::string(pipeline::to_string(s)) + ".bin");
}
fs::path cohort_dir(const cfg::RunConfig& c, const std::string& cohort) {
  return c.output_dir / "pipeline" / cohort;
}
fs::path operating_point(const cfg::RunConfig& c) {
  return c.output_dir / "pipeline" / "operating_point.json";
}
fs::path explain_dir(const cfg::RunConfig& c, Stage s) {
  return c.output_dir / "explain" / std::string(pipeline::to_string(s));
}
fs::path eval_dir(const cfg::RunConfig& c) { return c.output_dir / "eval"; }

}  // namespace paths

namespace {

json provenance(const cfg::RunConfig& c, const std::string& stage_hash) {
  return json{{"config_hash", cfg::stage_hashes(c).config}, {"stage_hash", stage_hash}, {"seed", c.seed}};
}

std::string csv_comment(const cfg::RunConfig& c, const std::string& stage_hash) {
  return "config_hash=" + cfg::stage_hashes(c).config + " stage_hash=" + stage_hash +
         " seed=" + std::to_string(c.seed);
}

// Reads an upstream JSON artifact and checks that it was produced by the
// same configuration.
json read_upstream(const fs::path& path, const std::string& expected_hash, const char* producer) {
  if (!fs::exists(path)) throw MissingArtifact(path.string() + " (run '" + producer + "' first)");
  json j = io::read_json(path);
  const std::string got = j.value("stage_hash", std::string());
  if (got != expected_hash)
    throw ConfigError(path.string() + " was produced by a different configuration (stage hash " +
                      got + ", expected " + expected_hash + "); rerun '" + producer + "'");
  return j;
}

nn::Model load_checked_model(const cfg::RunConfig& c, Stage s) {
  const auto h = cfg::stage_hashes(c);
  const fs::path p = paths::model(c, s);
  const char* producer = s == Stage::Detector ? "train --stage detector" : "train --stage classifier";
  read_upstream(nn::sidecar_path(p), s == Stage::Detector ? h.detector : h.classifier, producer);
  if (!fs::exists(p)) throw MissingArtifact(p.string());
  return nn::load_model(p);
}

phantom::DatasetSplit load_dataset(const cfg::RunConfig& c) {
  read_upstream(c.dataset_dir() / "split.json", cfg::stage_hashes(c).dataset, "phantom-gen");
  return phantom::read_dataset(c.dataset_dir());
}

std::size_t validation_count(const cfg::RunConfig& c, std::size_t n) {
  return static_cast<std::size_t>(c.validation_fraction * static_cast<double>(n));
}

std::string fmt(double v, const char* f = "%.4f") {
  char buf[48];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string candidate_id(const std::string& case_id, std::size_t k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_d%02zu", k);
  return case_id + buf;
}

json box_json(const Box3& b) { return json{{"min", b.min}, {"max", b.max}}; }
Box3 box_from(const json& j) { return Box3{j.at("min").get<Index3>(), j.at("max").get<Index3>()}; }

std::vector<eval::PatientDetections> as_cohort(const std::vector<CaseRecord>& cases,
                                               bool only_stage1, bool only_stage2) {
  std::vector<eval::PatientDetections> out;
  for (const auto& r : cases) {
    eval::PatientDetections p{r.case_id, {}, r.lesions};
    for (const auto& cand : r.candidates) {
      if (only_stage1 && !cand.retained_stage1) continue;
      if (only_stage2 && !cand.retained_stage2) continue;
      p.detections.push_back(cand.detection);
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- phantom-gen

void phantom_gen(const cfg::RunConfig& c) {
  const auto seeds = cfg::stage_seeds(c);
  phantom::PhantomSpec spec = c.phantom;
  spec.seed = seeds.dataset;
  const auto split = phantom::generate_dataset(spec, c.n_train, c.n_test, seeds.dataset);
  phantom::write_dataset(c.dataset_dir(), split, provenance(c, cfg::stage_hashes(c).dataset));
  std::size_t lesions = 0;
  for (const auto* set : {&split.train, &split.test})
    for (const auto& mc : *set) lesions += mc.annotations.size();
  std::printf("phantom-gen: %zu train + %zu test cases, %zu lesions -> %s\n", split.train.size(),
              split.test.size(), lesions, c.dataset_dir().string().c_str());
}

// ---------------------------------------------------------------------- train

void train(const cfg::RunConfig& c, Stage stage) {
  const auto h = cfg::stage_hashes(c);
  const auto seeds = cfg::stage_seeds(c);
  const auto ds = load_dataset(c);
  const std::size_t n_val = validation_count(c, ds.train.size());
  const std::vector<MultiModalCase> fit(ds.train.begin(), ds.train.end() - static_cast<std::ptrdiff_t>(n_val));
  const std::vector<MultiModalCase> val(ds.train.end() - static_cast<std::ptrdiff_t>(n_val), ds.train.end());
  if (fit.empty()) throw InvalidArgument("no training cases left after the validation split");

  std::vector<nn::LabeledPatch> train_set, val_set;
  nn::ModelSpec spec;
  nn::TrainConfig tc;
  std::string stage_hash;
  if (stage == Stage::Detector) {
    spec = c.detector_model;
    tc = c.detector_train;
    tc.seed = seeds.detector_init;
    stage_hash = h.detector;
    train_set = pipeline::detector_samples(fit, spec.input_size, c.samples, seeds.detector_samples);
    val_set = pipeline::detector_samples(val, spec.input_size, c.samples,
                                         rng::derive_seed(seeds.detector_samples, 1));
  } else {
    const nn::Model detector = load_checked_model(c, Stage::Detector);
    spec = c.classifier_model;
    tc = c.classifier_train;
    tc.seed = seeds.classifier_init;
    stage_hash = h.classifier;
    auto candidates = [&](const std::vector<MultiModalCase>& cases) {
      std::vector<std::vector<Detection>> d(cases.size());
      for (std::size_t i = 0; i < cases.size(); ++i)
        d[i] = pipeline::detect(cases[i], detector, c.detector_search);
      return d;
    };
    train_set = pipeline::classifier_samples(fit, candidates(fit), spec.input_size, c.samples);
    val_set = pipeline::classifier_samples(val, candidates(val), spec.input_size, c.samples);
  }
  long long positives = 0;
  for (const auto& s : train_set) positives += s.label;
  const nn::TrainResult r = nn::train(spec, train_set, val_set, tc);
  json prov = provenance(c, stage_hash);
  prov["stage"] = std::string(pipeline::to_string(stage));
  prov["train_config"] = nn::to_json(tc);
  prov["history"] = nn::to_json(r.history);
  prov["train_samples"] = train_set.size();
  prov["train_positives"] = positives;
  prov["val_samples"] = val_set.size();
  const fs::path out = paths::model(c, stage);
  nn::save_model(out, nn::Model{spec, r.params}, prov);
  const auto& last = r.history.epochs.back();
  std::printf("train %s: %zu samples (%lld positive), %zu epochs, best epoch %d, last train loss %s%s -> %s\n",
              std::string(pipeline::to_string(stage)).c_str(), train_set.size(), positives,
              r.history.epochs.size(), r.history.best_epoch, fmt(last.train_loss).c_str(),
              last.val_loss ? (", val loss " + fmt(*last.val_loss)).c_str() : "",
              out.string().c_str());
}

// --------------------------------------------------------------- run-pipeline

void run_pipeline(const cfg::RunConfig& c) {
  const auto h = cfg::stage_hashes(c);
  const auto ds = load_dataset(c);
  const nn::Model detector = load_checked_model(c, Stage::Detector);
  const nn::Model classifier = load_checked_model(c, Stage::Classifier);
  const double iou_thr = c.xai.iou_threshold;

  auto score = [&](const std::vector<MultiModalCase>& cases) {
    std::vector<CaseRecord> out;
    for (const auto& mc : cases) {
      CaseRecord r{mc.id, pipeline::lesion_boxes(mc), {}};
      auto dets = pipeline::classify_detections(mc, pipeline::detect(mc, detector, c.detector_search),
                                                classifier);
      const auto labels = pipeline::match_labels(dets, r.lesions, iou_thr);
      for (std::size_t k = 0; k < dets.size(); ++k)
        r.candidates.push_back({candidate_id(mc.id, k), dets[k], labels[k], false, false});
      out.push_back(std::move(r));
    }
    return out;
  };
  std::vector<CaseRecord> train_rec = score(ds.train), test_rec = score(ds.test);

  const pipeline::OperatingPoint op1 = pipeline::threshold_at_sensitivity(
      as_cohort(test_rec, false, false), iou_thr, c.xai.stage1_target_sensitivity, Stage::Detector);
  for (auto* recs : {&train_rec, &test_rec})
    for (auto& r : *recs)
      for (auto& cand : r.candidates) cand.retained_stage1 = cand.detection.confidence >= op1.threshold;
  const pipeline::OperatingPoint op2 = pipeline::threshold_at_sensitivity(
      as_cohort(test_rec, true, false), iou_thr, op1.sensitivity, Stage::Classifier);
  for (auto* recs : {&train_rec, &test_rec})
    for (auto& r : *recs)
      for (auto& cand : r.candidates)
        cand.retained_stage2 = cand.retained_stage1 && *cand.detection.stage2_posterior >= op2.threshold;

  const json prov = provenance(c, h.pipeline);
  for (const auto& [name, recs] : {std::pair{"train", &train_rec}, std::pair{"test", &test_rec}}) {
    json index = prov;
    index["cohort"] = name;
    index["cases"] = json::array();
    for (const auto& r : *recs) {
      json j = prov;
      j["case_id"] = r.case_id;
      j["lesions"] = json::array();
      for (const auto& b : r.lesions) j["lesions"].push_back(box_json(b));
      j["candidates"] = json::array();
      for (const auto& cand : r.candidates) {
        json d = to_json(cand.detection);
        d["id"] = cand.id;
        d["label"] = cand.label;
        d["retained_stage1"] = cand.retained_stage1;
        d["retained_stage2"] = cand.retained_stage2;
        j["candidates"].push_back(d);
      }
      io::write_json(paths::cohort_dir(c, name) / (r.case_id + ".json"), j);
      index["cases"].push_back(r.case_id);
    }
    io::write_json(paths::cohort_dir(c, name) / "index.json", index);
  }
  json opj = prov;
  opj["stage1"] = pipeline::to_json(op1);
  opj["stage2"] = pipeline::to_json(op2);
  opj["iou_threshold"] = iou_thr;
  opj["patients"] = test_rec.size();
  io::write_json(paths::operating_point(c), opj);
  std::printf("run-pipeline: stage 1 threshold %s sensitivity %s at %s FP/patient; stage 2 threshold %s "
              "sensitivity %s at %s FP/patient\n",
              fmt(op1.threshold).c_str(), fmt(op1.sensitivity).c_str(), fmt(op1.fp_per_patient).c_str(),
              fmt(op2.threshold).c_str(), fmt(op2.sensitivity).c_str(), fmt(op2.fp_per_patient).c_str());
}

std::vector<CaseRecord> read_cohort(const cfg::RunConfig& c, const std::string& cohort) {
  const json index =
      read_upstream(paths::cohort_dir(c, cohort) / "index.json", cfg::stage_hashes(c).pipeline, "run-pipeline");
  std::vector<CaseRecord> out;
  for (const auto& id : index.at("cases")) {
    const fs::path p = paths::cohort_dir(c, cohort) / (id.get<std::string>() + ".json");
    const json j = read_upstream(p, cfg::stage_hashes(c).pipeline, "run-pipeline");
    CaseRecord r;
    r.case_id = j.at("case_id").get<std::string>();
    for (const auto& b : j.at("lesions")) r.lesions.push_back(box_from(b));
    for (const auto& d : j.at("candidates")) {
      CandidateRecord cand;
      cand.id = d.at("id").get<std::string>();
      cand.detection = detection_from_json(d);
      cand.label = d.at("label").get<int>();
      cand.retained_stage1 = d.at("retained_stage1").get<bool>();
      cand.retained_stage2 = d.at("retained_stage2").get<bool>();
      r.candidates.push_back(std::move(cand));
    }
    out.push_back(std::move(r));
  }
  return out;
}

// -------------------------------------------------------------------- explain

namespace {

struct GlobalArtifact {
  rcax::GlobalExplanation g;
  std::map<std::string, rcax::ClassStat> stats;
  int layer = 0;
  std::size_t k = 10;
};

GlobalArtifact load_global(const cfg::RunConfig& c, Stage stage) {
  const fs::path p = paths::explain_dir(c, stage) / "global_explanation.json";
  const std::string producer = "explain --scope global --stage " + std::string(pipeline::to_string(stage));
  const json j = read_upstream(p, cfg::stage_hashes(c).explain, producer.c_str());
  GlobalArtifact a;
  a.g = rcax::global_from_json(j.at("explanation"));
  a.stats = rcax::class_stats_from_json(j.at("class_stats"));
  a.layer = j.at("layer").get<int>();
  a.k = j.at("explanation").at("k").get<std::size_t>();
  return a;
}

int stage_layer(const cfg::RunConfig& c, Stage stage, const nn::Model& m) {
  return cfg::RunConfig::resolve_layer(stage == Stage::Detector ? c.xai.detector_layer
                                                                : c.xai.classifier_layer,
                                       m.spec);
}

std::string local_svg(const rcax::LocalExplanation& l, const std::string& stage) {
  std::vector<svg::Bar> bars;
  for (const auto& r : l.rows)
    bars.push_back({r.name, r.s, true, r.class_mean, std::string(concepts::to_string(r.modality))});
  const std::string sim = l.similarity ? fmt(*l.similarity, "%.3f") : std::string("undefined");
  return svg::bar_chart("Sensitivity profile " + l.sample_id + " (" + stage + ")",
                        "sensitivity score (bar) vs class mean (line)", bars,
                        "similarity = " + sim + ", concepts used: " + std::to_string(l.concepts_used));
}

json local_to_json(const rcax::LocalExplanation& l, const CandidateRecord* cand) {
  json j = rcax::to_json(l);
  if (cand) {
    j["label"] = cand->label;
    j["confidence"] = cand->detection.confidence;
    j["stage2_posterior"] = cand->detection.stage2_posterior ? json(*cand->detection.stage2_posterior) : json(nullptr);
  }
  return j;
}

}  // namespace

void explain_global(const cfg::RunConfig& c, Stage stage) {
  const auto h = cfg::stage_hashes(c);
  const auto records = read_cohort(c, "train");
  const nn::Model model = load_checked_model(c, stage);
  const int layer = stage_layer(c, stage, model);

  std::vector<concepts::ConceptVector> vecs;
  std::vector<Patch> patches;
  std::vector<double> targets;
  std::vector<int> labels;
  std::vector<std::string> ids;
  for (const auto& r : records) {
    if (r.candidates.empty()) continue;
    const MultiModalCase mc = phantom::read_case(c.dataset_dir(), r.case_id);
    for (const auto& cand : r.candidates) {
      vecs.push_back(concepts::concepts_for_box(mc, cand.detection.box, c.xai.segment_fraction,
                                                c.xai.discretization, cand.id));
      patches.push_back(extract_patch(mc, cand.detection.patch_center, model.spec.input_size));
      targets.push_back(pipeline::stage_score(cand.detection, stage));
      labels.push_back(cand.label);
      ids.push_back(cand.id);
    }
  }
  if (vecs.size() < 3) throw NumericalError("global explanation needs at least 3 training candidates");
  const concepts::ConceptMatrix cm = concepts::build_concept_matrix(vecs, targets);
  const rcax::LayerProbe probe = rcax::probe_layer(model, layer, patches);
  const rcax::GlobalExplanation g =
      rcax::global_explain(probe.activations, probe.gradients, cm, layer, c.xai.lambda);

  std::vector<Eigen::Index> ref;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == 1) ref.push_back(static_cast<Eigen::Index>(i));
  if (ref.empty()) throw NumericalError("no true-positive training candidates for class statistics");
  Eigen::MatrixXd ref_grad(static_cast<Eigen::Index>(ref.size()), probe.gradients.cols());
  for (std::size_t i = 0; i < ref.size(); ++i) ref_grad.row(static_cast<Eigen::Index>(i)) = probe.gradients.row(ref[i]);
  const auto stats = rcax::class_statistics(g, ref_grad);

  const auto k = static_cast<std::size_t>(c.xai.top_k);
  json j = provenance(c, h.explain);
  j["stage"] = std::string(pipeline::to_string(stage));
  j["layer"] = layer;
  j["target"] = stage == Stage::Detector ? "detector confidence" : "classifier lesion posterior";
  j["reference_class"] = "training true-positive candidates";
  j["explanation"] = rcax::to_json(g, k);
  j["class_stats"] = rcax::to_json(stats);
  j["samples"] = json::array();
  for (std::size_t i = 0; i < ids.size(); ++i)
    j["samples"].push_back({{"id", ids[i]}, {"label", labels[i]}, {"target", targets[i]}});
  const fs::path dir = paths::explain_dir(c, stage);
  io::write_json(dir / "global_explanation.json", j);
  io::write_file_atomic(dir / "concepts.csv", concepts::to_csv(cm, csv_comment(c, h.explain)));
  io::write_file_atomic(dir / "global_measures.csv", rcax::to_csv(g, csv_comment(c, h.explain)));

  std::vector<svg::Bar> bars;
  for (std::size_t i : rcax::top_k(g, rcax::Measure::Br, k)) {
    const auto& r = g.rows[i];
    bars.push_back({r.name, r.br.value_or(0.0), false, 0.0, std::string(concepts::to_string(r.modality))});
  }
  io::write_file_atomic(dir / "global_top_br.svg",
                        svg::bar_chart("Top concepts by bidirectional relevance (" +
                                           std::string(pipeline::to_string(stage)) + ")",
                                       "Br", bars, csv_comment(c, h.explain)));
  std::size_t pet_top = 0;
  const auto top_rho = rcax::top_k(g, rcax::Measure::Rho, k);
  for (std::size_t i : top_rho) pet_top += g.rows[i].modality == concepts::ConceptModality::PET;
  std::printf("explain global %s: %zu samples, layer %d, %zu/%zu top-|rho| concepts are PET\n",
              std::string(pipeline::to_string(stage)).c_str(), ids.size(), layer, pet_top, top_rho.size());
}

namespace {

const CandidateRecord* find_candidate(const std::vector<CaseRecord>& recs, const std::string& id) {
  for (const auto& r : recs)
    for (const auto& cand : r.candidates)
      if (cand.id == id) return &cand;
  return nullptr;
}

}  // namespace

void explain_local(const cfg::RunConfig& c, Stage stage, const std::string& sample) {
  if (sample == "all") {
    const auto rows = local_explanations_for_cohort(c, stage, "test");
    json j = provenance(c, cfg::stage_hashes(c).explain);
    j["stage"] = std::string(pipeline::to_string(stage));
    j["cohort"] = "test";
    j["samples"] = rows;
    io::write_json(paths::explain_dir(c, stage) / "local_explanations_test.json", j);
    std::printf("explain local %s: %zu test candidates\n", std::string(pipeline::to_string(stage)).c_str(),
                rows.size());
    return;
  }
  const auto pos = sample.rfind("_d");
  if (pos == std::string::npos) throw ConfigError("sample id must look like <case id>_dNN: " + sample);
  const std::string case_id = sample.substr(0, pos);
  const std::string cohort = case_id.rfind("train_", 0) == 0 ? "train" : "test";
  const GlobalArtifact ga = load_global(c, stage);
  const auto recs = read_cohort(c, cohort);
  const CandidateRecord* cand = find_candidate(recs, sample);
  if (!cand) throw ConfigError("unknown sample id " + sample);
  const nn::Model model = load_checked_model(c, stage);
  const MultiModalCase mc = phantom::read_case(c.dataset_dir(), case_id);
  const Patch patch = extract_patch(mc, cand->detection.patch_center, model.spec.input_size);
  const auto l = rcax::local_explain(model, ga.layer, patch, sample, ga.g, ga.stats, ga.k);
  json j = provenance(c, cfg::stage_hashes(c).explain);
  j["stage"] = std::string(pipeline::to_string(stage));
  j["local"] = local_to_json(l, cand);
  const fs::path dir = paths::explain_dir(c, stage);
  io::write_json(dir / ("local_explanation_" + sample + ".json"), j);
  io::write_file_atomic(dir / ("local_explanation_" + sample + ".svg"),
                        local_svg(l, std::string(pipeline::to_string(stage))));
  std::printf("explain local %s %s: similarity %s over %zu concepts\n",
              std::string(pipeline::to_string(stage)).c_str(), sample.c_str(),
              l.similarity ? fmt(*l.similarity).c_str() : "undefined", l.concepts_used);
}

std::vector<json> local_explanations_for_cohort(const cfg::RunConfig& c, Stage stage,
                                                const std::string& cohort) {
  const GlobalArtifact ga = load_global(c, stage);
  const nn::Model model = load_checked_model(c, stage);
  std::vector<json> out;
  for (const auto& r : read_cohort(c, cohort)) {
    if (r.candidates.empty()) continue;
    const MultiModalCase mc = phantom::read_case(c.dataset_dir(), r.case_id);
    for (const auto& cand : r.candidates) {
      const Patch patch = extract_patch(mc, cand.detection.patch_center, model.spec.input_size);
      const auto l = rcax::local_explain(model, ga.layer, patch, cand.id, ga.g, ga.stats, ga.k);
      out.push_back(local_to_json(l, &cand));
    }
  }
  return out;
}

// ----------------------------------------------------------------------- eval

EvalKind eval_kind_from_string(const std::string& s) {
  if (s == "froc") return EvalKind::Froc;
  if (s == "roc") return EvalKind::Roc;
  if (s == "fp-reduction") return EvalKind::FpReduction;
  if (s == "posthoc-fn") return EvalKind::PosthocFn;
  throw ConfigError("unknown eval kind '" + s + "' (expected froc, roc, fp-reduction or posthoc-fn)");
}

namespace {

json eval_froc(const cfg::RunConfig& c) {
  const auto h = cfg::stage_hashes(c);
  const auto recs = read_cohort(c, "test");
  const eval::FrocCurve s1 = eval::froc(as_cohort(recs, false, false), c.xai.iou_threshold);
  auto s2_cohort = as_cohort(recs, true, false);
  for (auto& p : s2_cohort)
    for (auto& d : p.detections) d.confidence = *d.stage2_posterior;
  const eval::FrocCurve s2 = eval::froc(s2_cohort, c.xai.iou_threshold);

  std::string csv = "# " + csv_comment(c, h.pipeline) + "\n";
  csv += "stage,threshold,sensitivity,fp_per_patient,tp,fp\n";
  double max_fp = 1.0;
  std::vector<svg::Series> series;
  for (const auto& [name, curve] : {std::pair{"stage1", &s1}, std::pair{"stage2", &s2}}) {
    svg::Series se{name == std::string("stage1") ? "stage 1 (detector confidence)"
                                                 : "stage 2 (classifier posterior)",
                   {}, false};
    for (auto it = curve->points.rbegin(); it != curve->points.rend(); ++it) {
      csv += std::string(name) + "," + fmt(it->threshold, "%.17g") + "," + fmt(it->sensitivity, "%.17g") +
             "," + fmt(it->fp_per_patient, "%.17g") + "," + std::to_string(it->tp) + "," +
             std::to_string(it->fp) + "\n";
      se.points.emplace_back(it->fp_per_patient, it->sensitivity);
      max_fp = std::max(max_fp, it->fp_per_patient);
    }
    series.push_back(se);
  }
  const fs::path dir = paths::eval_dir(c);
  io::write_file_atomic(dir / "froc.csv", csv);
  io::write_file_atomic(dir / "froc.svg",
                        svg::line_chart({"FROC (IoU " + fmt(c.xai.iou_threshold, "%.2f") + ")",
                                         "false positives per patient", "sensitivity", 0.0, max_fp,
                                         0.0, 1.0},
                                        series, csv_comment(c, h.pipeline)));
  json out{{"stage1_sensitivity_at_3fp", eval::sensitivity_at_fp(s1, 3.0)},
           {"stage1_points", s1.points.size()},
           {"stage2_points", s2.points.size()},
           {"lesions", s1.lesions}};
  std::printf("eval froc: stage 1 sensitivity %s at <= 3 FP/patient (%lld lesions)\n",
              fmt(eval::sensitivity_at_fp(s1, 3.0)).c_str(), s1.lesions);
  return out;
}

json eval_roc(const cfg::RunConfig& c) {
  const auto h = cfg::stage_hashes(c);
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& r : read_cohort(c, "test"))
    for (const auto& cand : r.candidates) {
      scores.push_back(*cand.detection.stage2_posterior);
      labels.push_back(cand.label);
    }
  const eval::RocCurve roc = eval::roc_auc(scores, labels);
  std::string csv = "# " + csv_comment(c, h.pipeline) + "\n";
  csv += "threshold,fpr,tpr\n";
  svg::Series se{"classifier (AUC " + fmt(roc.auc, "%.3f") + ")", {}, false};
  for (const auto& p : roc.points) {
    csv += (std::isinf(p.threshold) ? std::string("inf") : fmt(p.threshold, "%.17g")) + "," +
           fmt(p.fpr, "%.17g") + "," + fmt(p.tpr, "%.17g") + "\n";
    se.points.emplace_back(p.fpr, p.tpr);
  }
  const fs::path dir = paths::eval_dir(c);
  io::write_file_atomic(dir / "roc.csv", csv);
  io::write_file_atomic(dir / "roc.svg",
                        svg::line_chart({"ROC of stage-2 classifier on test candidates",
                                         "false positive rate", "true positive rate", 0, 1, 0, 1},
                                        {se, svg::Series{"chance", {{0, 0}, {1, 1}}, false}},
                                        csv_comment(c, h.pipeline)));
  long long pos = 0;
  for (int l : labels) pos += l;
  json j = provenance(c, h.pipeline);
  j["auc"] = roc.auc;
  j["positives"] = pos;
  j["negatives"] = static_cast<long long>(labels.size()) - pos;
  io::write_json(dir / "roc.json", j);
  std::printf("eval roc: AUC %s over %zu candidates\n", fmt(roc.auc).c_str(), labels.size());
  return j;
}

json eval_fp_reduction(const cfg::RunConfig& c, const std::optional<FpFixture>& fixture) {
  const auto h = cfg::stage_hashes(c);
  if (fixture) {
    const auto r = eval::fp_reduction_report(fixture->fp_before, fixture->fp_after, true, fixture->patients);
    json j = provenance(c, h.config);
    j["fixture"] = true;
    j["report"] = eval::to_json(r);
    io::write_json(paths::eval_dir(c) / "fp_reduction_fixture.json", j);
    std::printf("eval fp-reduction (fixture): removed %lld of %lld (%s%%), %s FP/patient\n", r.removed,
                r.fp_before, fmt(r.percent, "%.1f").c_str(), fmt(r.fp_per_patient_after, "%.2f").c_str());
    return j;
  }
  read_upstream(paths::operating_point(c), h.pipeline, "run-pipeline");
  const auto recs = read_cohort(c, "test");
  std::vector<eval::MatchResult> m1, m2;
  for (const auto& p : as_cohort(recs, true, false))
    m1.push_back(eval::match_detections(p.detections, p.lesions, c.xai.iou_threshold));
  for (const auto& p : as_cohort(recs, false, true))
    m2.push_back(eval::match_detections(p.detections, p.lesions, c.xai.iou_threshold));
  const auto r = eval::fp_reduction_report(m1, m2);
  json j = provenance(c, h.pipeline);
  j["report"] = eval::to_json(r);
  io::write_json(paths::eval_dir(c) / "fp_reduction.json", j);
  std::printf("eval fp-reduction: removed %lld of %lld stage-1 FPs (%s%%), TPs preserved: %s, %s FP/patient\n",
              r.removed, r.fp_before, fmt(r.percent, "%.1f").c_str(), r.tp_preserved ? "yes" : "no",
              fmt(r.fp_per_patient_after, "%.2f").c_str());
  return j;
}

json eval_posthoc(const cfg::RunConfig& c) {
  const auto h = cfg::stage_hashes(c);
  const json opj = read_upstream(paths::operating_point(c), h.pipeline, "run-pipeline");
  const auto op2 = pipeline::operating_point_from_json(opj.at("stage2"));
  const GlobalArtifact ga = load_global(c, Stage::Classifier);
  const nn::Model classifier = load_checked_model(c, Stage::Classifier);
  const auto recs = read_cohort(c, "test");
  json rows = json::array();
  long long positive = 0;
  for (const auto& p : as_cohort(recs, true, false)) {
    const auto m = eval::match_detections(p.detections, p.lesions, c.xai.iou_threshold);
    if (m.fn.empty()) continue;
    const MultiModalCase mc = phantom::read_case(c.dataset_dir(), p.id);
    for (std::size_t l : m.fn) {
      const Index3 center = mc.annotations[l].center;
      const Patch patch = extract_patch(mc, center, classifier.spec.input_size);
      const double post = nn::predict_posterior(classifier, patch);
      const std::string id = p.id + "_fn" + std::to_string(l);
      const auto le = rcax::local_explain(classifier, ga.layer, patch, id, ga.g, ga.stats, ga.k);
      const bool lesion = post >= op2.threshold;
      positive += lesion;
      rows.push_back({{"id", id},
                      {"case_id", p.id},
                      {"lesion_index", l},
                      {"center", center},
                      {"posterior", post},
                      {"classified_as_lesion", lesion},
                      {"local", rcax::to_json(le)}});
    }
  }
  json j = provenance(c, h.explain);
  j["stage2_threshold"] = op2.threshold;
  j["false_negatives"] = rows.size();
  j["classified_as_lesion"] = positive;
  j["rows"] = rows;
  io::write_json(paths::eval_dir(c) / "posthoc_fn.json", j);
  std::printf("eval posthoc-fn: %zu stage-1 false negatives, %lld classified as lesion\n", rows.size(),
              positive);
  return j;
}

}  // namespace

json eval(const cfg::RunConfig& c, EvalKind kind, const std::optional<FpFixture>& fixture) {
  switch (kind) {
    case EvalKind::Froc: return eval_froc(c);
    case EvalKind::Roc: return eval_roc(c);
    case EvalKind::FpReduction: return eval_fp_reduction(c, fixture);
    case EvalKind::PosthocFn: return eval_posthoc(c);
  }
  return {};
}

void run_all(const cfg::RunConfig& c) {
  phantom_gen(c);
  train(c, Stage::Detector);
  train(c, Stage::Classifier);
  run_pipeline(c);
  explain_global(c, Stage::Detector);
  explain_global(c, Stage::Classifier);
  explain_local(c, Stage::Classifier, "all");
  for (EvalKind k : {EvalKind::Froc, EvalKind::Roc, EvalKind::FpReduction, EvalKind::PosthocFn}) eval(c, k);
}

// ------------------------------------------------------------------------ CLI

int main(int argc, char** argv) {
  std::setvbuf(stdout, nullptr, _IOLBF, 0);
  CLI::App app{"volxai: regression concept explanations for a two-stage lesion detector on PET/CT phantoms"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out;
  auto add_common = [&](CLI::App* a) {
    a->add_option("--config", config_path, "Run configuration (JSON)")->required();
    a->add_option("--seed", seed, "Override the global seed");
    a->add_option("--threads", threads, "Worker thread cap");
    a->add_option("--out", out, "Override the output directory");
  };
  std::string stage_name = "classifier", scope = "global", sample, kind;
  std::optional<long long> fp_before, fp_after;
  std::optional<std::size_t> patients;

  auto* gen = app.add_subcommand("phantom-gen", "Generate the phantom dataset");
  auto* tr = app.add_subcommand("train", "Train the detector or the classifier");
  tr->add_option("--stage", stage_name, "detector | classifier")->required();
  auto* rp = app.add_subcommand("run-pipeline", "Detect, classify and select operating points");
  auto* ex = app.add_subcommand("explain", "Global or local concept explanations");
  ex->add_option("--scope", scope, "global | local");
  ex->add_option("--sample", sample, "Candidate id (<case>_dNN) or 'all' for local scope");
  ex->add_option("--stage", stage_name, "detector | classifier (default classifier)");
  auto* ev = app.add_subcommand("eval", "FROC, ROC, FP reduction or post-hoc FN analysis");
  ev->add_option("--kind", kind, "froc | roc | fp-reduction | posthoc-fn")->required();
  ev->add_option("--fp-before", fp_before, "Fixture mode for fp-reduction: FP count before filtering");
  ev->add_option("--fp-after", fp_after, "Fixture mode for fp-reduction: FP count after filtering");
  ev->add_option("--patients", patients, "Fixture mode for fp-reduction: patient count");
  auto* all = app.add_subcommand("run-all", "Every stage in order");
  for (auto* a : {gen, tr, rp, ex, ev, all}) add_common(a);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (!fs::exists(config_path)) throw ConfigError("configuration file not found: " + config_path);
    cfg::RunConfig c = cfg::load_config(config_path);
    if (seed) c.seed = *seed;
    if (threads) c.threads = *threads;
    if (out) c.output_dir = *out;
    try {
      c.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
    set_thread_cap(c.threads);

    if (gen->parsed()) {
      phantom_gen(c);
    } else if (tr->parsed()) {
      train(c, pipeline::stage_from_string(stage_name));
    } else if (rp->parsed()) {
      run_pipeline(c);
    } else if (ex->parsed()) {
      const Stage s = pipeline::stage_from_string(stage_name);
      if (scope == "global") {
        explain_global(c, s);
      } else if (scope == "local") {
        if (sample.empty()) throw ConfigError("--scope local requires --sample");
        explain_local(c, s, sample);
      } else {
        throw ConfigError("unknown scope '" + scope + "' (expected global or local)");
      }
    } else if (ev->parsed()) {
      const EvalKind k = eval_kind_from_string(kind);
      std::optional<FpFixture> fx;
      if (fp_before || fp_after || patients) {
        if (k != EvalKind::FpReduction || !fp_before || !fp_after || !patients)
          throw ConfigError("--fp-before, --fp-after and --patients go together with --kind fp-reduction");
        fx = FpFixture{*fp_before, *fp_after, *patients};
      }
      eval(c, k, fx);
    } else if (all->parsed()) {
      run_all(c);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const InvalidArgument& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace volxai::cmd
