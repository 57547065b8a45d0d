#pragma once

// Pipeline commands. Each reads its upstream artifacts from the run
// directory, checks their stage hash against the current configuration and
// writes its own outputs atomically.
//
// Run directory layout:
//   dataset/                       phantom cases and split.json (unless dataset_root is set)
//   models/{detector,classifier}.bin (+ .json sidecars)
//   pipeline/{train,test}/<case>.json, pipeline/operating_point.json
//   explain/<stage>/global_explanation.json, concepts.csv, global_measures.csv,
//                   global_top_br.svg, local_explanation_<sample>.{json,svg}
//   eval/froc.{csv,svg}, roc.{csv,svg,json}, fp_reduction.json, posthoc_fn.json

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "volxai/config.hpp"
#include "volxai/pipeline.hpp"

namespace volxai::cmd {

namespace paths {
std::filesystem::path model(const cfg::RunConfig& c, pipeline::Stage s);
std::filesystem::path cohort_dir(const cfg::RunConfig& c, const std::string& cohort);
std::filesystem::path operating_point(const cfg::RunConfig& c);
std::filesystem::path explain_dir(const cfg::RunConfig& c, pipeline::Stage s);
std::filesystem::path eval_dir(const cfg::RunConfig& c);
}  // namespace paths

void phantom_gen(const cfg::RunConfig& c);
void train(const cfg::RunConfig& c, pipeline::Stage stage);
void run_pipeline(const cfg::RunConfig& c);
void explain_global(const cfg::RunConfig& c, pipeline::Stage stage);
/// Sample ids have the form <case id>_d<NN> for candidates of either cohort.
void explain_local(const cfg::RunConfig& c, pipeline::Stage stage, const std::string& sample);

enum class EvalKind { Froc, Roc, FpReduction, PosthocFn };
EvalKind eval_kind_from_string(const std::string& s);

struct FpFixture {
  long long fp_before = 0;
  long long fp_after = 0;
  std::size_t patients = 0;
};

/// With `fixture`, fp-reduction reports the given counts instead of the run.
nlohmann::json eval(const cfg::RunConfig& c, EvalKind kind,
                    const std::optional<FpFixture>& fixture = std::nullopt);

/// phantom-gen, both trainings, run-pipeline, global explanations for both
/// stages and every evaluation.
void run_all(const cfg::RunConfig& c);

/// One scored candidate as stored in pipeline/<cohort>/<case>.json.
struct CandidateRecord {
  std::string id;
  Detection detection;
  int label = 0;  // 1 when matched to a lesion (all candidates, IoU threshold)
  bool retained_stage1 = false;
  bool retained_stage2 = false;
};

struct CaseRecord {
  std::string case_id;
  std::vector<Box3> lesions;
  std::vector<CandidateRecord> candidates;
};

std::vector<CaseRecord> read_cohort(const cfg::RunConfig& c, const std::string& cohort);

/// Local explanations for every test candidate of a stage, in cohort order.
/// Requires the stage's global explanation.
std::vector<nlohmann::json> local_explanations_for_cohort(const cfg::RunConfig& c,
                                                          pipeline::Stage stage,
                                                          const std::string& cohort);

/// Parses argv and dispatches; returns the process exit code
/// (0 ok, 1 unexpected, 2 config, 3 missing artifact, 4 numerical failure).
int main(int argc, char** argv);

}  // namespace volxai::cmd
