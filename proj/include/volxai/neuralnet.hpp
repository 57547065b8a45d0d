#pragma once

// Small 3D CNN: conv3d(3x3x3, same padding) + ReLU blocks, global average
// pooling, an optional hidden dense ReLU layer and a dense output head.
//
// Layer ids exposed for explanation:
//   0 .. B-1  pooled (channel-mean) output of conv block b
//   B         hidden dense activations (only when hidden_units > 0)
//
// The gradient with respect to a pooled block activation is the derivative
// of an output logit when the same offset is added to every spatial
// position of that channel's feature map, i.e. the spatial sum of the map
// gradient. For the last block this coincides with the gradient with
// respect to the pooled vector feeding the head.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "volxai/volgrid.hpp"

namespace volxai::nn {

struct ConvBlockSpec {
  int channels = 8;
  int stride = 2;
};

struct ModelSpec {
  int input_size = 16;
  /// Per-channel input normalization of (PET, CT): values are clamped to
  /// [window lo, window hi], then mapped to (x - shift) * scale.
  std::array<std::array<double, 2>, 2> input_window{{{-1e6, 1e6}, {-160.0, 240.0}}};
  std::array<double, 2> input_shift{0.0, 40.0};
  std::array<double, 2> input_scale{0.2, 0.02};
  std::vector<ConvBlockSpec> blocks{{8, 2}, {16, 2}, {32, 2}};
  int hidden_units = 16;
  /// 2 = softmax classifier (class 1 = lesion), 1 = sigmoid confidence scorer.
  int outputs = 2;

  void validate() const;
  int input_channels() const { return 2; }
  int block_input_size(int b) const;
  int block_output_size(int b) const;
  int pooled_width() const { return blocks.back().channels; }
  int layer_count() const { return static_cast<int>(blocks.size()) + (hidden_units > 0 ? 1 : 0); }
  int layer_width(int layer) const;
  /// Index of the logit that explanations and posteriors refer to.
  int target_output() const { return outputs == 2 ? 1 : 0; }
};

nlohmann::json to_json(const ModelSpec& s);
ModelSpec model_spec_from_json(const nlohmann::json& j, ModelSpec base = {});

struct ConvParams {
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  std::vector<double> weight;  // [out][in][kz][ky][kx]
  std::vector<double> bias;
};

struct DenseParams {
  int in = 0;
  int out = 0;
  std::vector<double> weight;  // [out][in]
  std::vector<double> bias;
};

struct Params {
  std::vector<ConvParams> conv;
  std::optional<DenseParams> hidden;
  DenseParams head;
  std::uint64_t init_seed = 0;

  std::size_t parameter_count() const;
  /// Flat views in declaration order: conv blocks (weight, bias), hidden, head.
  std::vector<std::span<double>> blocks();
  std::vector<std::span<const double>> blocks() const;
  bool all_finite() const;
};

/// Fan-in scaled uniform initialization, biases zero.
Params init_params(const ModelSpec& spec, std::uint64_t seed);
Params zero_params(const ModelSpec& spec);
/// Throws InvalidArgument when tensor shapes disagree with the spec.
void check_params(const ModelSpec& spec, const Params& p);

struct Model {
  ModelSpec spec;
  Params params;
};

struct ActivationSnapshot {
  int layer = 0;
  std::vector<double> pooled;
};

struct ForwardResult {
  std::vector<double> logits;
  std::vector<ActivationSnapshot> snapshots;  // in the order requested
};

ForwardResult forward(const Model& m, const Patch& patch, std::span<const int> layers = {});

/// Gradient of logit `output` with respect to the pooled activations of `layer`.
std::vector<double> grad_wrt_layer(const Model& m, const Patch& patch, int layer, int output);

/// Logits after adding `shift[c]` to every spatial position of channel c of
/// `layer`'s output (or to hidden unit c for the hidden layer).
std::vector<double> forward_with_layer_shift(const Model& m, const Patch& patch, int layer,
                                             std::span<const double> shift);

std::vector<double> softmax(std::span<const double> logits);
double sigmoid(double x);
/// Lesion-class probability: softmax component 1, or sigmoid of the single logit.
double predict_posterior(const Model& m, const Patch& patch);

/// Parameter gradients with the same layout as Params.
struct Gradients {
  std::vector<std::vector<double>> blocks;  // aligned with Params::blocks()
  static Gradients zeros_like(const Params& p);
  void scale(double s);
};

/// Cross-entropy loss of one sample (softmax CE for 2 outputs, logistic for 1);
/// parameter gradients are accumulated into `acc` when given.
double loss_and_gradients(const Model& m, const Patch& patch, int label, Gradients* acc);

}  // namespace volxai::nn
