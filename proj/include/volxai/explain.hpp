#pragma once

// Regression concept activation.
//
// Global measures per concept: Pearson correlation with the network output,
// a ridge-regularized regression concept vector (unit direction v in the
// pooled activation space of one layer, with determination R^2), sensitivity
// scores S = grad(output) . v per sample, and bidirectional relevance
// Br = R^2 * mean(S) / std(S). Local explanations compare a sample's S to
// the reference-class mean in units of the class standard deviation.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "volxai/concepts.hpp"
#include "volxai/neuralnet.hpp"

namespace volxai::rcax {

struct PearsonResult {
  double rho = 0.0;
  double p_value = 1.0;
};

/// Two-sided p-value from Student's t with n - 2 degrees of freedom.
/// Throws NumericalError when either input has zero variance.
PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y);

struct RCVResult {
  std::string concept_name;
  int layer = 0;
  std::vector<double> v;  // unit regression concept vector
  double slope_norm = 0.0;
  double determination = 0.0;  // R^2 in [0, 1]
  double lambda = 0.0;
  std::size_t n = 0;
};

/// Solves (A'A + lambda * tr(A'A) / d * I) w = A'm on centered data.
/// Throws NumericalError for a constant concept or a zero fit.
RCVResult fit_rcv(const Eigen::MatrixXd& activations, const Eigen::VectorXd& concept_values,
                  double lambda = 1e-3);

struct SensitivityRecord {
  std::string sample_id;
  std::string concept_name;
  double s = 0.0;
};

/// Rows of `gradients` are per-sample gradients of the explained output.
std::vector<double> sensitivity_from_gradients(const Eigen::MatrixXd& gradients,
                                               const std::vector<double>& v);

std::vector<SensitivityRecord> sensitivity_scores(const nn::Model& m, int layer,
                                                  const RCVResult& rcv,
                                                  const std::vector<Patch>& samples,
                                                  const std::vector<std::string>& ids);

struct BrResult {
  std::optional<double> value;
  std::string flag;  // "zero sensitivity variance" when undefined
};

/// Population standard deviation; requires |S| >= 2.
BrResult bidirectional_relevance(double determination, const std::vector<double>& s);

struct GlobalRow {
  std::string name;
  concepts::ConceptModality modality = concepts::ConceptModality::PET;
  std::optional<double> rho, p_value, determination, slope_norm, mean_s, std_s, br;
  std::vector<double> v;
  std::vector<std::string> flags;

  bool usable() const { return flags.empty(); }
};

enum class Measure { Rho, Determination, MeanSensitivity, Br };
std::string_view to_string(Measure m);

struct GlobalExplanation {
  int layer = 0;
  double lambda = 1e-3;
  std::size_t n_samples = 0;
  std::vector<GlobalRow> rows;
  /// Row indices of usable concepts, descending by |measure|, ties by row
  /// order. Rows with undefined Br close the Br ranking.
  std::map<Measure, std::vector<std::size_t>> rankings;
};

/// Activations and gradients are n x d per-sample matrices of the chosen layer.
GlobalExplanation global_explain(const Eigen::MatrixXd& activations,
                                 const Eigen::MatrixXd& gradients,
                                 const concepts::ConceptMatrix& cm, int layer,
                                 double lambda = 1e-3);

struct LayerProbe {
  Eigen::MatrixXd activations;
  Eigen::MatrixXd gradients;
};

/// Pooled activations and gradients of output `m.spec.target_output()`.
LayerProbe probe_layer(const nn::Model& m, int layer, const std::vector<Patch>& samples);

GlobalExplanation global_explain(const nn::Model& m, int layer, const concepts::ConceptMatrix& cm,
                                 const std::vector<Patch>& samples, double lambda = 1e-3);

std::vector<std::size_t> top_k(const GlobalExplanation& g, Measure m, std::size_t k);

nlohmann::json to_json(const GlobalExplanation& g, std::size_t k);
std::string to_csv(const GlobalExplanation& g, const std::string& comment = {});

struct ClassStat {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

/// Per-concept mean and population std of S over reference samples,
/// computed for the usable rows of `g`.
std::map<std::string, ClassStat> class_statistics(const GlobalExplanation& g,
                                                  const Eigen::MatrixXd& reference_gradients);

nlohmann::json to_json(const std::map<std::string, ClassStat>& stats);
std::map<std::string, ClassStat> class_stats_from_json(const nlohmann::json& j);

struct LocalRow {
  std::string name;
  concepts::ConceptModality modality = concepts::ConceptModality::PET;
  double s = 0.0;
  double class_mean = 0.0;
  double class_std = 0.0;
  std::optional<double> z;
  std::string flag;
};

struct LocalExplanation {
  std::string sample_id;
  std::vector<LocalRow> rows;  // top-k concepts by |Br|
  std::optional<double> similarity;
  std::size_t concepts_used = 0;
};

/// `gradient` is the sample's gradient at the explained layer.
LocalExplanation local_explain(const std::string& sample_id, const std::vector<double>& gradient,
                               const GlobalExplanation& g,
                               const std::map<std::string, ClassStat>& stats, std::size_t k = 10);

LocalExplanation local_explain(const nn::Model& m, int layer, const Patch& sample,
                               const std::string& sample_id, const GlobalExplanation& g,
                               const std::map<std::string, ClassStat>& stats, std::size_t k = 10);

nlohmann::json to_json(const LocalExplanation& l);

/// Rebuilds the fields needed for local explanations from `to_json` output.
GlobalExplanation global_from_json(const nlohmann::json& j);

}  // namespace volxai::rcax
