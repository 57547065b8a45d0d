// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.
//
//   acceptance [work_dir]
//
// The end-to-end criteria run the default configuration for seeds 1-3 and
// the smoke configuration twice under work_dir (default: a fresh directory
// under the system temp dir, removed afterwards).

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/binomial.hpp>
#include <json.hpp>

#include "oracles/radiomics_oracle.hpp"
#include "volxai/commands.hpp"
#include "volxai/concepts.hpp"
#include "volxai/config.hpp"
#include "volxai/errors.hpp"
#include "volxai/evaluation.hpp"
#include "volxai/explain.hpp"
#include "volxai/neuralnet.hpp"

#ifndef VOLXAI_SOURCE_DIR
#error "VOLXAI_SOURCE_DIR must point at the repository root"
#endif

namespace fs = std::filesystem;
using namespace volxai;
using nlohmann::json;

namespace {

// ------------------------------------------------------------ tolerances

constexpr double kOracleRel = 1e-9;
constexpr double kGradRel = 1e-3;
constexpr double kGradAbsFloor = 1e-8;  // channels whose gradient vanishes (dead ReLU)
constexpr double kGradStep = 1e-5;
constexpr double kCosExact = 0.999;
constexpr double kR2Exact = 0.999;
constexpr double kCosNoisy = 0.9;
constexpr double kExact = 1e-9;
constexpr double kPercentTol = 0.1;
constexpr double kRateTol = 0.01;
constexpr double kStage1Sensitivity = 0.8;
constexpr double kStage1MaxFpPerPatient = 3.0;
constexpr double kMinFpRemovalPercent = 25.0;
constexpr int kMinPetInTop10 = 8;
constexpr std::size_t kMinPairs = 10;
constexpr double kMinPairsOrdered = 0.8;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

bool rel_close(double a, double b, double rel) {
  return std::abs(a - b) <= rel * std::max({1.0, std::abs(a), std::abs(b)});
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw MissingArtifact("missing " + p.string());
  return json::parse(f);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Pipeline commands print progress; keep the report to one line per criterion.
class QuietStdout {
 public:
  QuietStdout() {
    std::fflush(stdout);
    saved_ = ::dup(1);
    const int null = ::open("/dev/null", O_WRONLY);
    ::dup2(null, 1);
    ::close(null);
  }
  ~QuietStdout() {
    std::fflush(stdout);
    ::dup2(saved_, 1);
    ::close(saved_);
  }

 private:
  int saved_ = -1;
};

// ------------------------------------------------- 1. radiomics oracle

struct RandomCase {
  Volume3 vol;
  Mask3 mask;
};

RandomCase random_case(unsigned seed) {
  std::mt19937 g(seed);
  const int levels = 2 + static_cast<int>(seed % 5);
  std::uniform_int_distribution<int> lv(0, levels - 1);
  std::uniform_real_distribution<double> jitter(-0.2, 0.2);
  std::bernoulli_distribution in(0.6);
  std::vector<double> v(125);
  std::vector<std::uint8_t> m(125);
  for (std::size_t i = 0; i < 125; ++i) {
    v[i] = lv(g) * 1.5 + 2.0 + (seed % 3 == 0 ? jitter(g) : 0.0);
    m[i] = in(g);
  }
  m[62] = 1;
  return {Volume3({5, 5, 5}, {1, 1, 1}, Modality::PET, v), Mask3({5, 5, 5}, m)};
}

Outcome radiomics_oracle() {
  using namespace concepts;
  std::size_t compared = 0, mismatched = 0;
  std::string first_bad;
  auto check = [&](const std::string& name, const std::optional<double>& got, const std::optional<double>& want) {
    ++compared;
    const bool ok = got.has_value() == want.has_value() && (!got || rel_close(*got, *want, kOracleRel));
    if (!ok && mismatched++ == 0) first_bad = name;
  };
  for (unsigned seed = 0; seed < 50; ++seed) {
    const auto rc = random_case(1000 + seed);
    const int nb = seed % 2 ? 32 : 4;
    const auto lv = discretize(rc.vol, rc.mask, {nb});
    const auto vox = oracle::voxels(lv.dims, lv.labels);
    oracle::Features ref = oracle::glcm(vox, nb);
    for (const auto& f : {oracle::glrlm(vox, nb), oracle::glszm(vox), oracle::gldm(vox)}) ref.insert(f.begin(), f.end());
    for (const auto& fs : {glcm_features(lv), glrlm_features(lv), glszm_features(lv), gldm_features(lv)})
      for (const auto& f : fs) check(f.name, f.value, ref.count(f.name) ? ref[f.name] : std::nullopt);
    std::vector<double> x;
    for (std::size_t i = 0; i < rc.vol.size(); ++i)
      if (rc.mask[i]) x.push_back(rc.vol[i]);
    const auto fo = oracle::firstorder(x, nb);
    for (const auto& f : firstorder_features(rc.vol, rc.mask, {nb}))
      check(f.name, f.value, fo.count(f.name) ? fo.at(f.name) : std::nullopt);
  }
  // degenerate constant regions hold exactly
  const Index3 d{3, 3, 3};
  const LabelVolume flat{d, std::vector<int>(27, 1), 32};
  const Mask3 full(d, std::vector<std::uint8_t>(27, 1));
  const Volume3 constant(d, {1, 1, 1}, Modality::PET, 5.0);
  const auto glcm = glcm_features(flat);
  const auto fo = firstorder_features(constant, full, {32});
  const auto single = gldm_features(LabelVolume{{1, 1, 1}, {1}, 2});
  const bool degenerate = find(glcm, "DifferenceAverage").value == 0.0 &&
                          find(glcm, "DifferenceEntropy").value == 0.0 &&
                          find(glcm, "SumEntropy").value == 0.0 &&
                          find(fo, "Entropy").value == 0.0 &&
                          find(glszm_features(flat), "ZoneEntropy").value == 0.0 &&
                          find(single, "SmallDependenceEmphasis").value == 1.0;
  return {mismatched == 0 && degenerate && compared > 0,
          fmt("%zu feature values on 50 volumes, %zu mismatches%s%s; degenerate values %s", compared, mismatched,
              first_bad.empty() ? "" : " (first: ", first_bad.empty() ? "" : (first_bad + ")").c_str(),
              degenerate ? "exact" : "WRONG")};
}

// --------------------------------------------------- 2. layer gradients

Patch random_patch(int size, std::mt19937& g) {
  std::uniform_real_distribution<double> pet(0.0, 12.0), ct(-150.0, 230.0);
  Patch p;
  p.size = size;
  p.pet.resize(p.voxels());
  p.ct.resize(p.voxels());
  for (auto& v : p.pet) v = pet(g);
  for (auto& v : p.ct) v = ct(g);
  return p;
}

Outcome layer_gradients() {
  const auto base = cfg::default_config();
  std::size_t checked = 0, bad = 0, layers = 0;
  double worst = 0.0;
  for (const nn::ModelSpec& spec : {base.detector_model, base.classifier_model}) {
    nn::Model m{spec, nn::init_params(spec, 2024)};
    std::mt19937 g(7);
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    for (auto& c : m.params.conv)
      for (auto& b : c.bias) b = u(g);
    if (m.params.hidden)
      for (auto& b : m.params.hidden->bias) b = u(g);
    const int out = spec.target_output();
    for (int l = 0; l < spec.layer_count(); ++l) {
      ++layers;
      for (int trial = 0; trial < 10; ++trial) {
        const Patch p = random_patch(spec.input_size, g);
        const auto grad = nn::grad_wrt_layer(m, p, l, out);
        std::vector<double> shift(grad.size(), 0.0);
        for (std::size_t c = 0; c < grad.size(); ++c) {
          shift[c] = kGradStep;
          const double up = nn::forward_with_layer_shift(m, p, l, shift)[static_cast<std::size_t>(out)];
          shift[c] = -kGradStep;
          const double dn = nn::forward_with_layer_shift(m, p, l, shift)[static_cast<std::size_t>(out)];
          shift[c] = 0.0;
          const double fd = (up - dn) / (2 * kGradStep);
          const double err = std::abs(grad[c] - fd);
          const double scale = std::max(std::abs(grad[c]), std::abs(fd));
          ++checked;
          if (err > kGradRel * scale + kGradAbsFloor) ++bad;
          if (scale > kGradAbsFloor) worst = std::max(worst, err / scale);
        }
      }
    }
  }
  return {bad == 0, fmt("%zu gradient entries over %zu layers x 10 inputs, %zu outside tolerance, worst relative error %.2e",
                        checked, layers, bad, worst)};
}

// ------------------------------------------------------- 3. RCV recovery

double abs_cos(const std::vector<double>& v, const Eigen::VectorXd& w) {
  double dot = 0.0, nv = 0.0;
  for (int i = 0; i < w.size(); ++i) {
    dot += v[static_cast<std::size_t>(i)] * w(i);
    nv += v[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)];
  }
  return std::abs(dot) / std::sqrt(nv) / w.norm();
}

Outcome rcv_recovery() {
  std::mt19937_64 g(31);
  std::normal_distribution<double> n01(0.0, 1.0);
  const int n = 50, d = 8;
  Eigen::MatrixXd a(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = n01(g);
  Eigen::VectorXd w(d);
  for (int j = 0; j < d; ++j) w(j) = n01(g);
  const Eigen::VectorXd signal = a * w;
  const auto exact = rcax::fit_rcv(a, signal, 1e-3);
  const double cos0 = abs_cos(exact.v, w);
  double mean = signal.mean(), var = 0.0;
  for (int i = 0; i < n; ++i) var += (signal(i) - mean) * (signal(i) - mean);
  const double sigma = 0.1 * std::sqrt(var / n);
  Eigen::VectorXd noisy = signal;
  for (int i = 0; i < n; ++i) noisy(i) += sigma * n01(g);
  const auto fit = rcax::fit_rcv(a, noisy, 1e-3);
  const double cos1 = abs_cos(fit.v, w);
  return {cos0 >= kCosExact && exact.determination >= kR2Exact && cos1 >= kCosNoisy,
          fmt("noise-free |cos| %.6f R^2 %.6f; noise 0.1*signal |cos| %.6f (R^2 %.4f)", cos0, exact.determination,
              cos1, fit.determination)};
}

// ---------------------------------------------------- 4. example tables

Outcome example_tables() {
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const char* what) {
    if (!ok) failed.emplace_back(what);
  };
  auto throws = [](auto f) {
    try {
      f();
    } catch (const std::exception&) {
      return true;
    }
    return false;
  };
  // pearson
  {
    const auto lin = rcax::pearson({1, 2, 3, 4, 5}, {3, 5, 7, 9, 11});
    expect(std::abs(lin.rho - 1.0) <= kExact, "pearson y = 2x + 1");
    expect(throws([] { rcax::pearson({0.3, 1.7, 2.2}, {4, 4, 4}); }), "pearson constant y");
    const auto r = rcax::pearson({1, 2, 3, 4, 5}, {2, 1, 4, 3, 5});
    expect(std::abs(r.rho - 0.8) <= kExact, "pearson textbook 0.8");
  }
  // Br
  {
    const auto two = rcax::bidirectional_relevance(1.0, {1, 3});  // mean 2, population std 1
    expect(two.value && std::abs(*two.value - 2.0) <= kExact, "Br mean 2 std 1");
    expect(!rcax::bidirectional_relevance(1.0, {2, 2, 2}).value, "Br constant S");
    const std::vector<double> s{0.3, -1.2, 2.5, 0.7};
    std::vector<double> neg(s.size());
    std::transform(s.begin(), s.end(), neg.begin(), [](double x) { return -x; });
    expect(*rcax::bidirectional_relevance(0.7, neg).value == -*rcax::bidirectional_relevance(0.7, s).value,
           "Br sign symmetry");
  }
  // roc_auc
  {
    expect(std::abs(eval::roc_auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}).auc - 1.0) <= kExact, "roc separated");
    expect(std::abs(eval::roc_auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}).auc - 0.5) <= kExact, "roc all equal");
    const std::vector<double> sc{0.9, 0.4, 0.7, 0.4, 0.2, 0.6};
    const std::vector<int> lb{1, 1, 0, 0, 1, 0};
    double u = 0.0;  // Mann-Whitney with half-credit ties
    for (std::size_t i = 0; i < sc.size(); ++i)
      for (std::size_t j = 0; j < sc.size(); ++j)
        if (lb[i] == 1 && lb[j] == 0) u += sc[i] > sc[j] ? 1.0 : (sc[i] == sc[j] ? 0.5 : 0.0);
    expect(std::abs(eval::roc_auc(sc, lb).auc - u / 9.0) <= kExact, "roc Mann-Whitney 6 samples");
  }
  // iou
  {
    const Box3 a{{0, 0, 0}, {4, 4, 4}};
    expect(iou(a, a) == 1.0, "iou identical");
    expect(iou(a, Box3{{9, 9, 9}, {11, 11, 11}}) == 0.0, "iou disjoint");
    expect(std::abs(iou(a, Box3{{0, 0, 2}, {4, 4, 6}}) - 1.0 / 3.0) <= kExact, "iou 32/96");
  }
  // match_detections
  auto det = [](Box3 b, double conf) {
    Detection d;
    d.box = b;
    d.confidence = conf;
    return d;
  };
  {
    const Box3 l{{2, 2, 2}, {6, 6, 6}};
    const auto one = eval::match_detections({det(l, 0.9)}, {l}, 0.1);
    expect(one.tp.size() == 1 && one.fp.empty() && one.fn.empty(), "match exact hit");
    const auto none = eval::match_detections({}, {l, Box3{{10, 10, 10}, {12, 12, 12}}}, 0.1);
    expect(none.tp.empty() && none.fn.size() == 2, "match no detections");
    // brute force: every injective assignment consistent with the greedy visiting order
    std::mt19937 g(5);
    std::uniform_int_distribution<int> pos(0, 6), conf(0, 9);
    bool all_ok = true;
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<Detection> ds;
      std::vector<Box3> ls;
      for (int k = 0; k < 3; ++k) {
        const Index3 c{pos(g), pos(g), pos(g)};
        ds.push_back(det(Box3{c, {c[0] + 3, c[1] + 3, c[2] + 3}}, conf(g) / 10.0));
      }
      for (int k = 0; k < 2; ++k) {
        const Index3 c{pos(g), pos(g), pos(g)};
        ls.push_back(Box3{c, {c[0] + 3, c[1] + 3, c[2] + 3}});
      }
      std::vector<bool> taken(ls.size(), false);
      std::size_t tp = 0;
      for (std::size_t d : eval::confidence_order(ds)) {
        double best = -1.0;
        std::size_t pick = ls.size();
        for (std::size_t k = 0; k < ls.size(); ++k) {
          const double v = iou(ds[d].box, ls[k]);
          if (!taken[k] && v >= 0.1 && v > best) best = v, pick = k;
        }
        if (pick < ls.size()) taken[pick] = true, ++tp;
      }
      const auto m = eval::match_detections(ds, ls, 0.1);
      all_ok = all_ok && m.tp.size() == tp && m.fp.size() == ds.size() - tp && m.fn.size() == ls.size() - tp;
    }
    expect(all_ok, "match greedy oracle 3x2");
  }
  // froc
  {
    const Box3 l1{{0, 0, 0}, {4, 4, 4}}, l2{{10, 10, 10}, {14, 14, 14}};
    const auto perfect = eval::froc({{"a", {det(l1, 0.9)}, {l1}}, {"b", {det(l2, 0.8)}, {l2}}}, 0.1);
    bool has_point = false;
    for (const auto& p : perfect.points) has_point = has_point || (p.sensitivity == 1.0 && p.fp_per_patient == 0.0);
    expect(has_point, "froc perfect detector");
    const auto misses = eval::froc({{"a", {det(l2, 0.9), det(l2, 0.3)}, {l1}}}, 0.1);
    bool zero = true;
    for (const auto& p : misses.points) zero = zero && p.sensitivity == 0.0;
    expect(zero, "froc all FP");
    // three patients, hand-listed detections, against an exhaustive threshold sweep
    const Box3 l3{{20, 0, 0}, {24, 4, 4}};
    const std::vector<eval::PatientDetections> cohort = {
        {"p1", {det(l1, 0.9), det(l2, 0.7), det(l1, 0.4)}, {l1}},
        {"p2", {det(l3, 0.6), det(l1, 0.8)}, {l3, l2}},
        {"p3", {det(l2, 0.5)}, {}}};
    const auto curve = eval::froc(cohort, 0.1);
    const double thresholds[] = {0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    const double sens[] = {2 / 3.0, 2 / 3.0, 2 / 3.0, 1 / 3.0, 1 / 3.0, 1 / 3.0};
    const double fpp[] = {4 / 3.0, 1.0, 2 / 3.0, 2 / 3.0, 1 / 3.0, 0.0};
    bool sweep = curve.points.size() == 6;
    for (std::size_t k = 0; sweep && k < 6; ++k)
      sweep = std::abs(curve.points[k].threshold - thresholds[k]) <= kExact &&
              std::abs(curve.points[k].sensitivity - sens[k]) <= kExact &&
              std::abs(curve.points[k].fp_per_patient - fpp[k]) <= kExact;
    expect(sweep, "froc 3-patient sweep");
  }
  std::string detail = "pearson, Br, roc_auc, iou, match_detections, froc examples";
  if (!failed.empty()) {
    detail += "; failed:";
    for (const auto& f : failed) detail += " [" + f + "]";
  }
  return {failed.empty(), detail};
}

// ------------------------------------------------------------ 5. fixture

Outcome fixture() {
  const auto r = eval::fp_reduction_report(48, 32, true, 18);
  return {r.removed == 16 && std::abs(r.percent - 33.3) <= kPercentTol &&
              std::abs(r.fp_per_patient_after - 1.78) <= kRateTol && r.tp_preserved,
          fmt("removed %lld, %.4f%%, %.4f FP/patient", r.removed, r.percent, r.fp_per_patient_after)};
}

// --------------------------------------------------------- end-to-end runs

cfg::RunConfig config_for(const std::string& name, std::uint64_t seed, const fs::path& out) {
  cfg::RunConfig c = cfg::load_config(fs::path(VOLXAI_SOURCE_DIR) / "configs" / name);
  c.seed = seed;
  c.output_dir = out;
  return c;
}

void run_default(const fs::path& work, std::uint64_t seed) {
  QuietStdout quiet;
  cmd::run_all(config_for("default.json", seed, work / ("default_seed" + std::to_string(seed))));
}

Outcome end_to_end(const fs::path& work) {
  const fs::path run = work / "default_seed1";
  const json op = read_json(run / "pipeline" / "operating_point.json");
  const json fr = read_json(run / "eval" / "fp_reduction.json").at("report");
  const json& s1 = op.at("stage1");
  const double sens = s1.at("sensitivity"), fpp = s1.at("fp_per_patient");
  const double pct = fr.at("percent");
  const bool preserved = fr.at("tp_preserved");
  const long long tp1 = fr.at("tp_before"), tp2 = fr.at("tp_after");
  const bool ok = sens >= kStage1Sensitivity && fpp <= kStage1MaxFpPerPatient && pct >= kMinFpRemovalPercent &&
                  preserved && tp1 == tp2;
  return {ok, fmt("seed 1: stage 1 sensitivity %.3f at %.3f FP/patient; stage 2 removed %lld of %lld FPs (%.1f%%), "
                  "TPs %lld -> %lld",
                  sens, fpp, fr.at("removed").get<long long>(), fr.at("fp_before").get<long long>(), pct, tp1, tp2)};
}

Outcome modality_attribution(const fs::path& work) {
  bool ok = true;
  std::string detail = "PET concepts in the classifier's top-10 |rho|:";
  for (int seed = 1; seed <= 3; ++seed) {
    const json g = read_json(work / ("default_seed" + std::to_string(seed)) / "explain" / "classifier" /
                             "global_explanation.json");
    const json& top = g.at("explanation").at("top_k").at("abs_rho");
    int pet = 0;
    for (const auto& r : top) pet += r.at("modality") == "PET";
    ok = ok && top.size() == 10 && pet >= kMinPetInTop10;
    detail += fmt(" seed %d %d/%zu", seed, pet, top.size());
  }
  return {ok, detail};
}

// TPs and FPs among the stage-1 retained test candidates (the classifier's
// inputs), each sorted by sample id and paired in that order. Seeds are
// pooled when seed 1 alone yields fewer than the required pairs.
Outcome local_similarity(const fs::path& work) {
  std::size_t pairs = 0, ordered = 0, all_pairs = 0, all_ordered = 0;
  double tp_sum = 0.0, fp_sum = 0.0;
  std::size_t tp_n = 0, fp_n = 0;
  int seeds_used = 0;
  for (int seed = 1; seed <= 3 && pairs < kMinPairs; ++seed) {
    ++seeds_used;
    const fs::path run = work / ("default_seed" + std::to_string(seed));
    std::map<std::string, bool> retained;
    for (const auto& rec : cmd::read_cohort(config_for("default.json", seed, run), "test"))
      for (const auto& c : rec.candidates) retained[c.id] = c.retained_stage1;
    std::vector<std::pair<std::string, double>> tps, fps, all_tps, all_fps;
    const json local = read_json(run / "explain" / "classifier" / "local_explanations_test.json");
    for (const auto& s : local.at("samples")) {
      const std::string id = s.at("sample_id");
      if (s.at("similarity").is_null()) continue;
      const bool tp = s.at("label") == 1;
      (tp ? all_tps : all_fps).emplace_back(id, s.at("similarity").get<double>());
      if (retained.at(id)) (tp ? tps : fps).emplace_back(id, s.at("similarity").get<double>());
    }
    // every detector candidate, reported for context only
    std::sort(all_tps.begin(), all_tps.end());
    std::sort(all_fps.begin(), all_fps.end());
    for (std::size_t i = 0; i < std::min(all_tps.size(), all_fps.size()); ++i, ++all_pairs)
      all_ordered += all_tps[i].second > all_fps[i].second;
    std::sort(tps.begin(), tps.end());
    std::sort(fps.begin(), fps.end());
    for (const auto& t : tps) tp_sum += t.second;
    for (const auto& f : fps) fp_sum += f.second;
    tp_n += tps.size();
    fp_n += fps.size();
    const std::size_t k = std::min(tps.size(), fps.size());
    for (std::size_t i = 0; i < k; ++i) ordered += tps[i].second > fps[i].second;
    pairs += k;
  }
  const double tp_mean = tp_n ? tp_sum / tp_n : std::nan(""), fp_mean = fp_n ? fp_sum / fp_n : std::nan("");
  const double frac = pairs ? static_cast<double>(ordered) / pairs : 0.0;
  // one-sided sign test: P(X >= ordered) for X ~ Binomial(pairs, 1/2)
  const double p = pairs && ordered ? boost::math::cdf(boost::math::complement(
                                          boost::math::binomial(static_cast<double>(pairs), 0.5), ordered - 1.0))
                                    : 1.0;
  return {pairs >= kMinPairs && frac >= kMinPairsOrdered && tp_mean > fp_mean,
          fmt("%zu/%zu stage-1 TP/FP pairs ordered (seeds 1-%d), sign test p = %.3g; mean similarity TP %.3f vs "
              "FP %.3f; all detector candidates: %zu/%zu",
              ordered, pairs, seeds_used, p, tp_mean, fp_mean, all_ordered, all_pairs)};
}

std::map<std::string, std::string> reports(const fs::path& root) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && (e.path().extension() == ".json" || e.path().extension() == ".csv"))
      m[fs::relative(e.path(), root).string()] = slurp(e.path());
  return m;
}

Outcome determinism(const fs::path& work) {
  using pipeline::Stage;
  const cfg::RunConfig a = config_for("smoke.json", 7, work / "smoke_a");
  cfg::RunConfig b = config_for("smoke.json", 7, work / "smoke_b");
  b.threads = 2;
  std::map<std::string, std::string> first, rerun, other;
  {
    QuietStdout quiet;
    cmd::run_all(a);
    first = reports(a.output_dir);
    cmd::phantom_gen(a);
    cmd::train(a, Stage::Detector);
    cmd::train(a, Stage::Classifier);
    cmd::run_pipeline(a);
    cmd::explain_global(a, Stage::Detector);
    cmd::explain_global(a, Stage::Classifier);
    cmd::explain_local(a, Stage::Classifier, "all");
    for (auto k : {cmd::EvalKind::Froc, cmd::EvalKind::Roc, cmd::EvalKind::FpReduction, cmd::EvalKind::PosthocFn})
      cmd::eval(a, k);
    rerun = reports(a.output_dir);
    cmd::run_all(b);
    other = reports(b.output_dir);
  }
  std::size_t differ = 0;
  std::string first_diff;
  for (const auto* cmp : {&rerun, &other})
    for (const auto& [name, body] : first) {
      const auto it = cmp->find(name);
      if (it == cmp->end() || it->second != body) {
        if (differ++ == 0) first_diff = name;
      }
    }
  const bool same_sets = rerun.size() == first.size() && other.size() == first.size();
  return {differ == 0 && same_sets && !first.empty(),
          fmt("%zu JSON/CSV reports compared against a per-command rerun and a relocated 2-thread run, %zu differ%s%s",
              first.size(), differ, first_diff.empty() ? "" : ", first: ", first_diff.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  const bool keep = argc > 1;
  const fs::path work = keep ? fs::path(argv[1]) : fs::temp_directory_path() / ("volxai_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(work);

  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("%s %d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
    std::fflush(stdout);
  };

  report(1, "radiomics oracle equivalence", radiomics_oracle);
  report(2, "gradient fidelity", layer_gradients);
  report(3, "RCV recovery", rcv_recovery);
  report(4, "measure formula examples", example_tables);
  report(5, "FP-reduction fixture", fixture);

  const auto t0 = std::chrono::steady_clock::now();
  std::string run_error;
  try {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) run_default(work, seed);
  } catch (const std::exception& e) {
    run_error = e.what();
  }
  const double run_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("     default configuration, seeds 1-3: %.1f s%s%s\n", run_secs, run_error.empty() ? "" : ", error: ",
              run_error.c_str());
  report(6, "end-to-end phantom detection and FP reduction", [&] { return end_to_end(work); });
  report(7, "modality attribution", [&] { return modality_attribution(work); });
  report(8, "local explanation TP/FP contrast", [&] { return local_similarity(work); });
  report(9, "determinism", [&] { return determinism(work); });

  if (!keep) fs::remove_all(work);
  std::printf("%d of 9 criteria passed\n", 9 - failures);
  return failures ? 1 : 0;
}
