#pragma once

// Mini-batch Adam training with step learning-rate decay, optional class-
// balanced sampling with replacement, per-sample augmentation and early
// stopping on validation cross-entropy (best parameters are restored).

#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "volxai/augment.hpp"
#include "volxai/errors.hpp"
#include "volxai/neuralnet.hpp"
#include "volxai/rng.hpp"

namespace volxai::nn {

struct LabeledPatch {
  Patch patch;
  int label = 0;
};

struct TrainConfig {
  double initial_lr = 1e-3;
  double lr_decay = 0.10;
  int lr_step_epochs = 5;
  int max_epochs = 25;
  int patience = 5;
  int batch_size = 16;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool weighted_sampling = false;
  /// Draws per epoch; 0 means the training set size.
  int samples_per_epoch = 0;
  bool augment = false;
  aug::AugmentationSpec augmentation{};
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

double lr_at_epoch(const TrainConfig& cfg, int epoch);

/// Draws indices with probability proportional to 1 / (size of the sample's class).
class WeightedSampler {
 public:
  explicit WeightedSampler(const std::vector<int>& labels);
  std::size_t draw(rng::Stream& s) const;
  double probability(std::size_t i) const;

 private:
  std::vector<double> cumulative_;
};

/// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> shuffled_indices(std::size_t n, rng::Stream& s);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  bool stopped_early = false;
};

nlohmann::json to_json(const TrainHistory& h);

class TrainError : public NumericalError {
 public:
  TrainError(int epoch, const std::string& what)
      : NumericalError("training diverged at epoch " + std::to_string(epoch) + ": " + what),
        epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

struct TrainResult {
  Params params;
  TrainHistory history;
};

/// Mean cross-entropy over a set, no augmentation.
double mean_loss(const Model& m, const std::vector<LabeledPatch>& set);

/// Every parameter rounded to the nearest float32, matching the model file.
void round_to_float32(Params& p);

/// Early stopping watches `val` when it is non-empty, otherwise the training loss.
TrainResult train(const ModelSpec& spec, const std::vector<LabeledPatch>& data,
                  const std::vector<LabeledPatch>& val, const TrainConfig& cfg);

}  // namespace volxai::nn
