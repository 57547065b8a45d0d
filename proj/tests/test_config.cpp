#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "volxai/config.hpp"
#include "volxai/errors.hpp"

using namespace volxai;
using namespace volxai::cfg;
using nlohmann::json;

#ifndef VOLXAI_SOURCE_DIR
#error "VOLXAI_SOURCE_DIR must point at the repository root"
#endif

TEST(Fnv1a, ReferenceVectors) {
  EXPECT_EQ(hex64(fnv1a64("")), "cbf29ce484222325");
  EXPECT_EQ(hex64(fnv1a64("a")), "af63dc4c8601ec8c");
  EXPECT_EQ(hex64(fnv1a64("foobar")), "85944171f73967e8");
}

TEST(Config, DefaultsAndRoundTrip) {
  const RunConfig d = default_config();
  EXPECT_EQ(d.n_train, 64);
  EXPECT_EQ(d.n_test, 16);
  EXPECT_EQ(d.classifier_train.initial_lr, 1e-3);
  EXPECT_EQ(d.classifier_train.max_epochs, 25);
  EXPECT_EQ(d.xai.stage1_target_sensitivity, 0.8);
  EXPECT_EQ(d.xai.iou_threshold, 0.1);
  EXPECT_EQ(d.xai.lambda, 1e-3);
  EXPECT_EQ(d.detector_search.nms_iou, 0.25);
  const RunConfig r = config_from_json(to_json(d));
  EXPECT_EQ(to_json(r), to_json(d));
  EXPECT_EQ(stage_hashes(r).explain, stage_hashes(d).explain);
}

TEST(Config, PartialOverridesKeepDefaults) {
  const RunConfig c = config_from_json(json::parse(R"({"seed": 5, "classifier": {"train": {"max_epochs": 2}}})"));
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.classifier_train.max_epochs, 2);
  EXPECT_EQ(c.classifier_train.samples_per_epoch, default_config().classifier_train.samples_per_epoch);
  EXPECT_EQ(c.classifier_model.input_size, default_config().classifier_model.input_size);
}

TEST(Config, Errors) {
  EXPECT_THROW(config_from_json(json::parse(R"({"sede": 1})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"xai": {"lamda": 1}})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"seed": "x"})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"dataset": {"n_train": -1}})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"classifier": {"model": {"outputs": 3}}})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse("[1, 2]")), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/volxai.json"), MissingArtifact);
  const auto p = std::filesystem::temp_directory_path() / "volxai_bad_config.json";
  std::ofstream(p) << "{ not json";
  EXPECT_THROW(load_config(p), ConfigError);
  std::filesystem::remove(p);
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* name : {"default.json", "smoke.json"}) {
    const RunConfig c = load_config(std::filesystem::path(VOLXAI_SOURCE_DIR) / "configs" / name);
    EXPECT_NO_THROW(c.validate()) << name;
  }
}

TEST(Config, ResolveLayer) {
  nn::ModelSpec s;
  s.blocks = {{4, 2}, {8, 2}, {16, 2}};
  s.hidden_units = 8;
  EXPECT_EQ(RunConfig::resolve_layer(-1, s), 2);
  EXPECT_EQ(RunConfig::resolve_layer(0, s), 0);
  EXPECT_EQ(RunConfig::resolve_layer(3, s), 3);
  EXPECT_THROW(RunConfig::resolve_layer(4, s), InvalidArgument);
  EXPECT_THROW(config_from_json(json::parse(R"({"xai": {"classifier_layer": 9}})")), ConfigError);
}

TEST(StageSeeds, DistinctAndSeedDriven) {
  RunConfig c = default_config();
  c.seed = 3;
  const auto a = stage_seeds(c);
  EXPECT_NE(a.dataset, a.detector_samples);
  EXPECT_NE(a.detector_init, a.classifier_init);
  c.seed = 4;
  EXPECT_NE(stage_seeds(c).dataset, a.dataset);
  c.seed = 3;
  c.threads = 8;
  EXPECT_EQ(stage_seeds(c).classifier_init, a.classifier_init);
}

TEST(StageHashes, IgnoreLocationAndThreads) {
  RunConfig a = default_config(), b = a;
  b.output_dir = "/elsewhere";
  b.dataset_root = "/data";
  b.threads = 7;
  const auto ha = stage_hashes(a), hb = stage_hashes(b);
  EXPECT_EQ(ha.config, hb.config);
  EXPECT_EQ(ha.explain, hb.explain);
}

TEST(StageHashes, ChangesPropagateDownstreamOnly) {
  const RunConfig base = default_config();
  const auto h0 = stage_hashes(base);
  auto changed = [&](auto mutate) {
    RunConfig c = base;
    mutate(c);
    const auto h = stage_hashes(c);
    return std::vector<bool>{h.config != h0.config, h.dataset != h0.dataset, h.detector != h0.detector,
                             h.classifier != h0.classifier, h.pipeline != h0.pipeline,
                             h.explain != h0.explain};
  };
  using V = std::vector<bool>;
  EXPECT_EQ(changed([](RunConfig& c) { c.seed = 99; }), (V{1, 1, 1, 1, 1, 1}));
  EXPECT_EQ(changed([](RunConfig& c) { c.phantom.noise_sigma_pet = 0.5; }), (V{1, 1, 1, 1, 1, 1}));
  EXPECT_EQ(changed([](RunConfig& c) { c.detector_train.max_epochs = 3; }), (V{1, 0, 1, 1, 1, 1}));
  EXPECT_EQ(changed([](RunConfig& c) { c.detector_search.stride = 4; }), (V{1, 0, 0, 1, 1, 1}));
  EXPECT_EQ(changed([](RunConfig& c) { c.classifier_train.batch_size = 8; }), (V{1, 0, 0, 1, 1, 1}));
  EXPECT_EQ(changed([](RunConfig& c) { c.xai.stage1_target_sensitivity = 0.7; }), (V{1, 0, 0, 0, 1, 1}));
  EXPECT_EQ(changed([](RunConfig& c) { c.xai.lambda = 0.01; }), (V{1, 0, 0, 0, 0, 1}));
}

TEST(StageHashes, KeyOrderDoesNotMatter) {
  const json a = json::parse(R"({"seed": 2, "classifier": {"validation_fraction": 0.3, "train": {"batch_size": 8}}})");
  const json b = json::parse(R"({"classifier": {"train": {"batch_size": 8}, "validation_fraction": 0.3}, "seed": 2})");
  EXPECT_EQ(stage_hashes(config_from_json(a)).explain, stage_hashes(config_from_json(b)).explain);
}
