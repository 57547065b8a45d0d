#include "volxai/config.hpp"

#include <cstdio>

#include "volxai/errors.hpp"
#include "volxai/rng.hpp"
#include "volxai/volume_io.hpp"

namespace volxai::cfg {

namespace fs = std::filesystem;
using nlohmann::json;

void XaiConfig::validate() const {
  if (!(lambda >= 0)) throw InvalidArgument("xai.lambda must be >= 0");
  if (top_k < 1) throw InvalidArgument("xai.top_k must be >= 1");
  if (!(stage1_target_sensitivity > 0) || stage1_target_sensitivity > 1)
    throw InvalidArgument("xai.stage1_target_sensitivity must lie in (0, 1]");
  if (!(iou_threshold > 0) || iou_threshold > 1)
    throw InvalidArgument("xai.iou_threshold must lie in (0, 1]");
  if (!(segment_fraction > 0) || !(segment_fraction < 1))
    throw InvalidArgument("xai.segment_fraction must lie in (0, 1)");
  discretization.validate();
}

int RunConfig::resolve_layer(int layer, const nn::ModelSpec& spec) {
  const int nb = static_cast<int>(spec.blocks.size());
  const int l = layer < 0 ? nb + layer : layer;
  (void)spec.layer_width(l);
  return l;
}

void RunConfig::validate() const {
  if (threads < 1) throw InvalidArgument("threads must be >= 1");
  if (n_train < 0 || n_test < 0) throw InvalidArgument("case counts must be >= 0");
  phantom.validate();
  detector_model.validate();
  classifier_model.validate();
  if (detector_model.outputs != 1) throw InvalidArgument("detector model must have 1 output");
  if (classifier_model.outputs != 2) throw InvalidArgument("classifier model must have 2 outputs");
  detector_train.validate();
  classifier_train.validate();
  detector_search.validate();
  samples.validate();
  if (!(validation_fraction >= 0) || !(validation_fraction < 1))
    throw InvalidArgument("validation_fraction must lie in [0, 1)");
  xai.validate();
  (void)resolve_layer(xai.detector_layer, detector_model);
  (void)resolve_layer(xai.classifier_layer, classifier_model);
}

fs::path RunConfig::dataset_dir() const {
  return dataset_root.empty() ? output_dir / "dataset" : dataset_root;
}

RunConfig default_config() {
  RunConfig c;
  c.detector_model.input_size = 12;
  c.detector_model.blocks = {{4, 2}, {8, 2}, {16, 2}};
  c.detector_model.hidden_units = 8;
  c.detector_model.outputs = 1;
  c.detector_train.batch_size = 16;
  c.detector_train.augment = true;
  c.classifier_model.input_size = 16;
  c.classifier_model.blocks = {{8, 2}, {16, 2}, {32, 2}};
  c.classifier_model.hidden_units = 16;
  c.classifier_model.outputs = 2;
  c.classifier_train.batch_size = 16;
  c.classifier_train.weighted_sampling = true;
  c.classifier_train.augment = true;
  c.classifier_train.samples_per_epoch = 4096;
  return c;
}

json to_json(const RunConfig& c) {
  return json{
      {"seed", c.seed},
      {"output_dir", c.output_dir.string()},
      {"dataset_root", c.dataset_root.string()},
      {"threads", c.threads},
      {"dataset", {{"n_train", c.n_train}, {"n_test", c.n_test}, {"phantom", phantom::to_json(c.phantom)}}},
      {"detector",
       {{"model", nn::to_json(c.detector_model)},
        {"train", nn::to_json(c.detector_train)},
        {"search", pipeline::to_json(c.detector_search)},
        {"samples", pipeline::to_json(c.samples)}}},
      {"classifier",
       {{"model", nn::to_json(c.classifier_model)},
        {"train", nn::to_json(c.classifier_train)},
        {"validation_fraction", c.validation_fraction}}},
      {"xai",
       {{"detector_layer", c.xai.detector_layer},
        {"classifier_layer", c.xai.classifier_layer},
        {"lambda", c.xai.lambda},
        {"top_k", c.xai.top_k},
        {"stage1_target_sensitivity", c.xai.stage1_target_sensitivity},
        {"iou_threshold", c.xai.iou_threshold},
        {"bin_count", c.xai.discretization.bin_count},
        {"segment_fraction", c.xai.segment_fraction}}},
  };
}

namespace {

// Every key of `j` must exist in the reference layout; objects are checked recursively.
void check_known_keys(const json& j, const json& ref, const std::string& where) {
  if (!j.is_object() || !ref.is_object()) return;
  for (const auto& [k, v] : j.items()) {
    const std::string path = where.empty() ? k : where + "." + k;
    if (!ref.contains(k)) throw ConfigError("unknown configuration key '" + path + "'");
    check_known_keys(v, ref[k], path);
  }
}

}  // namespace

RunConfig config_from_json(const json& j) {
  RunConfig c = default_config();
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  check_known_keys(j, to_json(c), "");
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
    if (j.contains("dataset_root")) c.dataset_root = j["dataset_root"].get<std::string>();
    c.threads = j.value("threads", c.threads);
    if (j.contains("dataset")) {
      const json& d = j["dataset"];
      c.n_train = d.value("n_train", c.n_train);
      c.n_test = d.value("n_test", c.n_test);
      if (d.contains("phantom")) c.phantom = phantom::phantom_spec_from_json(d["phantom"], c.phantom);
    }
    if (j.contains("detector")) {
      const json& d = j["detector"];
      if (d.contains("model")) c.detector_model = nn::model_spec_from_json(d["model"], c.detector_model);
      if (d.contains("train")) c.detector_train = nn::train_config_from_json(d["train"], c.detector_train);
      if (d.contains("search"))
        c.detector_search = pipeline::detector_config_from_json(d["search"], c.detector_search);
      if (d.contains("samples")) c.samples = pipeline::sample_config_from_json(d["samples"], c.samples);
    }
    if (j.contains("classifier")) {
      const json& d = j["classifier"];
      if (d.contains("model"))
        c.classifier_model = nn::model_spec_from_json(d["model"], c.classifier_model);
      if (d.contains("train"))
        c.classifier_train = nn::train_config_from_json(d["train"], c.classifier_train);
      c.validation_fraction = d.value("validation_fraction", c.validation_fraction);
    }
    if (j.contains("xai")) {
      const json& x = j["xai"];
      c.xai.detector_layer = x.value("detector_layer", c.xai.detector_layer);
      c.xai.classifier_layer = x.value("classifier_layer", c.xai.classifier_layer);
      c.xai.lambda = x.value("lambda", c.xai.lambda);
      c.xai.top_k = x.value("top_k", c.xai.top_k);
      c.xai.stage1_target_sensitivity =
          x.value("stage1_target_sensitivity", c.xai.stage1_target_sensitivity);
      c.xai.iou_threshold = x.value("iou_threshold", c.xai.iou_threshold);
      c.xai.discretization.bin_count = x.value("bin_count", c.xai.discretization.bin_count);
      c.xai.segment_fraction = x.value("segment_fraction", c.xai.segment_fraction);
    }
    c.validate();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  return c;
}

RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifact(path.string());
  return config_from_json(io::read_json(path));
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

StageSeeds stage_seeds(const RunConfig& c) {
  return {rng::derive_seed(c.seed, 100), rng::derive_seed(c.seed, 101),
          rng::derive_seed(c.seed, 102), rng::derive_seed(c.seed, 103)};
}

StageHashes stage_hashes(const RunConfig& c) {
  json j = to_json(c);
  j.erase("output_dir");
  j.erase("dataset_root");
  j.erase("threads");
  auto h = [](const json& v) { return hex64(fnv1a64(v.dump())); };
  StageHashes s;
  s.config = h(j);
  s.dataset = h(json{{"seed", c.seed}, {"dataset", j["dataset"]}});
  s.detector = h(json{{"up", s.dataset}, {"model", j["detector"]["model"]},
                      {"train", j["detector"]["train"]}, {"samples", j["detector"]["samples"]}});
  s.classifier = h(json{{"up", s.detector}, {"search", j["detector"]["search"]},
                        {"classifier", j["classifier"]}});
  s.pipeline = h(json{{"up", s.classifier},
                      {"target", c.xai.stage1_target_sensitivity},
                      {"iou", c.xai.iou_threshold}});
  s.explain = h(json{{"up", s.pipeline}, {"xai", j["xai"]}});
  return s;
}

}  // namespace volxai::cfg
