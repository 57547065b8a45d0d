#pragma once

// Run configuration: one JSON document with nested sections, overridable by
// command-line flags. Hashes are FNV-1a 64 over the canonical (key-sorted,
// compact) JSON of the settings that influence results; output locations
// and the thread cap are excluded.

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "volxai/concepts.hpp"
#include "volxai/neuralnet.hpp"
#include "volxai/phantom.hpp"
#include "volxai/pipeline.hpp"
#include "volxai/train.hpp"

namespace volxai::cfg {

struct XaiConfig {
  /// Negative values count from the end: -1 is the last conv block.
  int detector_layer = -1;
  int classifier_layer = -1;
  double lambda = 1e-3;
  int top_k = 10;
  double stage1_target_sensitivity = 0.8;
  double iou_threshold = 0.1;
  concepts::DiscretizationSpec discretization{};
  double segment_fraction = 0.4;

  void validate() const;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "volxai_run";
  std::filesystem::path dataset_root;  // empty: <output_dir>/dataset
  int threads = 1;

  int n_train = 64;
  int n_test = 16;
  phantom::PhantomSpec phantom{};

  nn::ModelSpec detector_model{};
  nn::TrainConfig detector_train{};
  pipeline::DetectorConfig detector_search{};
  pipeline::SampleConfig samples{};

  nn::ModelSpec classifier_model{};
  nn::TrainConfig classifier_train{};
  double validation_fraction = 0.2;

  XaiConfig xai{};

  void validate() const;
  std::filesystem::path dataset_dir() const;
  /// Resolves a possibly negative layer index against a model spec.
  static int resolve_layer(int layer, const nn::ModelSpec& spec);
};

/// Defaults used when a key is absent.
RunConfig default_config();

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);

/// Throws MissingArtifact when absent and ConfigError when invalid.
RunConfig load_config(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// Seeds of the individual stages, derived from the global seed.
struct StageSeeds {
  std::uint64_t dataset;
  std::uint64_t detector_samples;
  std::uint64_t detector_init;
  std::uint64_t classifier_init;
};
StageSeeds stage_seeds(const RunConfig& c);

/// Cumulative hashes: each stage covers its own settings and every upstream one.
struct StageHashes {
  std::string config;
  std::string dataset;
  std::string detector;
  std::string classifier;
  std::string pipeline;
  std::string explain;
};
StageHashes stage_hashes(const RunConfig& c);

}  // namespace volxai::cfg
