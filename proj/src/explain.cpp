#include "volxai/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "volxai/errors.hpp"
#include "volxai/parallel.hpp"

namespace volxai::rcax {

using concepts::ConceptModality;
using nlohmann::json;

namespace {

bool constant(const std::vector<double>& x) {
  return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

// Mean that returns the common value exactly for constant input.
double mean_of(const std::vector<double>& x) {
  if (constant(x)) return x.front();
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double pop_std(const std::vector<double>& x, double mean) {
  if (constant(x)) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += (v - mean) * (v - mean);
  return std::sqrt(acc / static_cast<double>(x.size()));
}

ConceptModality modality_from(const std::string& s) {
  if (s == "PET") return ConceptModality::PET;
  if (s == "CT") return ConceptModality::CT;
  if (s == "SHAPE") return ConceptModality::SHAPE;
  throw ConfigError("unknown concept modality '" + s + "'");
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

}  // namespace

PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw InvalidArgument("pearson inputs differ in length");
  if (x.size() < 3) throw InvalidArgument("pearson needs at least 3 samples");
  if (constant(x) || constant(y)) throw NumericalError("zero variance input to pearson");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (!(sxx > 0) || !(syy > 0)) throw NumericalError("zero variance input to pearson");
  PearsonResult r;
  r.rho = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  if (std::abs(r.rho) == 1.0) {
    r.p_value = 0.0;
  } else {
    const double df = n - 2;
    const double t = r.rho * std::sqrt(df / (1.0 - r.rho * r.rho));
    const boost::math::students_t dist(df);
    r.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
  }
  return r;
}

RCVResult fit_rcv(const Eigen::MatrixXd& a, const Eigen::VectorXd& m, double lambda) {
  if (a.rows() != m.size()) throw InvalidArgument("activation rows and concept values differ");
  if (a.rows() < 3) throw InvalidArgument("concept fit needs at least 3 samples");
  if (a.cols() < 1) throw InvalidArgument("concept fit needs at least one activation unit");
  if (!(lambda >= 0)) throw InvalidArgument("ridge lambda must be >= 0");
  if (!a.allFinite() || !m.allFinite()) throw NumericalError("non-finite concept fit input");
  if ((m.array() == m(0)).all()) throw NumericalError("constant concept values");
  const Eigen::MatrixXd ac = a.rowwise() - a.colwise().mean();
  const Eigen::VectorXd mc = m.array() - m.mean();
  Eigen::MatrixXd g = ac.transpose() * ac;
  const double tr = g.trace();
  if (!(tr > 0)) throw NumericalError("degenerate fit: constant activations");
  g.diagonal().array() += lambda * tr / static_cast<double>(a.cols());
  const Eigen::VectorXd w = g.ldlt().solve(ac.transpose() * mc);
  const double norm = w.norm();
  if (!std::isfinite(norm) || norm == 0.0) throw NumericalError("degenerate fit: zero slope");
  RCVResult r;
  r.v.resize(static_cast<std::size_t>(w.size()));
  for (Eigen::Index i = 0; i < w.size(); ++i) r.v[static_cast<std::size_t>(i)] = w(i) / norm;
  r.slope_norm = norm;
  const double ss_tot = mc.squaredNorm();
  const double ss_res = (mc - ac * w).squaredNorm();
  r.determination = std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0);
  r.lambda = lambda;
  r.n = static_cast<std::size_t>(a.rows());
  return r;
}

std::vector<double> sensitivity_from_gradients(const Eigen::MatrixXd& gradients,
                                               const std::vector<double>& v) {
  if (static_cast<Eigen::Index>(v.size()) != gradients.cols())
    throw InvalidArgument("concept vector length does not match the layer width");
  std::vector<double> s(static_cast<std::size_t>(gradients.rows()), 0.0);
  for (Eigen::Index i = 0; i < gradients.rows(); ++i) {
    double acc = 0.0;
    for (Eigen::Index k = 0; k < gradients.cols(); ++k) acc += gradients(i, k) * v[static_cast<std::size_t>(k)];
    s[static_cast<std::size_t>(i)] = acc;
  }
  return s;
}

LayerProbe probe_layer(const nn::Model& m, int layer, const std::vector<Patch>& samples) {
  const int d = m.spec.layer_width(layer);
  const auto n = static_cast<Eigen::Index>(samples.size());
  LayerProbe p{Eigen::MatrixXd(n, d), Eigen::MatrixXd(n, d)};
  const int out = m.spec.target_output();
  const int layers[1] = {layer};
  parallel_for(samples.size(), [&](std::size_t i) {
    const auto f = nn::forward(m, samples[i], layers);
    const auto g = nn::grad_wrt_layer(m, samples[i], layer, out);
    for (int k = 0; k < d; ++k) {
      p.activations(static_cast<Eigen::Index>(i), k) = f.snapshots[0].pooled[static_cast<std::size_t>(k)];
      p.gradients(static_cast<Eigen::Index>(i), k) = g[static_cast<std::size_t>(k)];
    }
  });
  return p;
}

std::vector<SensitivityRecord> sensitivity_scores(const nn::Model& m, int layer,
                                                  const RCVResult& rcv,
                                                  const std::vector<Patch>& samples,
                                                  const std::vector<std::string>& ids) {
  if (ids.size() != samples.size()) throw InvalidArgument("one id per sample required");
  const LayerProbe p = probe_layer(m, layer, samples);
  const auto s = sensitivity_from_gradients(p.gradients, rcv.v);
  std::vector<SensitivityRecord> out;
  for (std::size_t i = 0; i < s.size(); ++i) out.push_back({ids[i], rcv.concept_name, s[i]});
  return out;
}

BrResult bidirectional_relevance(double determination, const std::vector<double>& s) {
  if (s.size() < 2) throw InvalidArgument("bidirectional relevance needs at least 2 scores");
  const double mean = mean_of(s);
  const double sd = pop_std(s, mean);
  if (!(sd > 0)) return {std::nullopt, "zero sensitivity variance"};
  return {determination * mean / sd, ""};
}

std::string_view to_string(Measure m) {
  switch (m) {
    case Measure::Rho: return "abs_rho";
    case Measure::Determination: return "determination";
    case Measure::MeanSensitivity: return "abs_mean_s";
    case Measure::Br: return "abs_br";
  }
  return "?";
}

GlobalExplanation global_explain(const Eigen::MatrixXd& a, const Eigen::MatrixXd& g,
                                 const concepts::ConceptMatrix& cm, int layer, double lambda) {
  const Eigen::Index n = cm.rows();
  if (n < 3) throw InvalidArgument("global explanation needs at least 3 samples");
  if (a.rows() != n || g.rows() != n || a.cols() != g.cols())
    throw InvalidArgument("activations, gradients and concept rows are not aligned");
  if (static_cast<Eigen::Index>(cm.target.size()) != n)
    throw InvalidArgument("concept target length does not match the sample count");
  GlobalExplanation out;
  out.layer = layer;
  out.lambda = lambda;
  out.n_samples = static_cast<std::size_t>(n);
  out.rows.resize(static_cast<std::size_t>(cm.cols()));
  parallel_for(out.rows.size(), [&](std::size_t j) {
    GlobalRow& row = out.rows[j];
    row.name = cm.names[j];
    row.modality = cm.modalities[j];
    if (!cm.column_flags[j].empty()) {
      row.flags.push_back(cm.column_flags[j]);
      return;
    }
    const auto col = static_cast<Eigen::Index>(j);
    std::vector<double> x(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = cm.values(i, col);
    try {
      const PearsonResult p = pearson(x, cm.target);
      row.rho = p.rho;
      row.p_value = p.p_value;
    } catch (const NumericalError& e) {
      row.flags.push_back(e.what());
      return;
    }
    try {
      const RCVResult r = fit_rcv(a, cm.values.col(col), lambda);
      row.determination = r.determination;
      row.slope_norm = r.slope_norm;
      row.v = r.v;
    } catch (const NumericalError& e) {
      row.flags.push_back(e.what());
      return;
    }
    const auto s = sensitivity_from_gradients(g, row.v);
    row.mean_s = mean_of(s);
    row.std_s = pop_std(s, *row.mean_s);
    row.br = bidirectional_relevance(*row.determination, s).value;
  });

  std::vector<std::size_t> usable;
  for (std::size_t j = 0; j < out.rows.size(); ++j)
    if (out.rows[j].usable()) usable.push_back(j);
  auto rank = [&](auto key) {
    std::vector<std::size_t> r = usable;
    std::stable_sort(r.begin(), r.end(), [&](std::size_t p, std::size_t q) {
      const std::optional<double> kp = key(out.rows[p]), kq = key(out.rows[q]);
      if (kp.has_value() != kq.has_value()) return kp.has_value();
      return kp && std::abs(*kp) > std::abs(*kq);
    });
    return r;
  };
  out.rankings[Measure::Rho] = rank([](const GlobalRow& r) { return r.rho; });
  out.rankings[Measure::Determination] = rank([](const GlobalRow& r) { return r.determination; });
  out.rankings[Measure::MeanSensitivity] = rank([](const GlobalRow& r) { return r.mean_s; });
  out.rankings[Measure::Br] = rank([](const GlobalRow& r) { return r.br; });
  return out;
}

GlobalExplanation global_explain(const nn::Model& m, int layer, const concepts::ConceptMatrix& cm,
                                 const std::vector<Patch>& samples, double lambda) {
  const LayerProbe p = probe_layer(m, layer, samples);
  return global_explain(p.activations, p.gradients, cm, layer, lambda);
}

std::vector<std::size_t> top_k(const GlobalExplanation& g, Measure m, std::size_t k) {
  const auto& r = g.rankings.at(m);
  return {r.begin(), r.begin() + static_cast<std::ptrdiff_t>(std::min(k, r.size()))};
}

json to_json(const GlobalExplanation& g, std::size_t k) {
  json rows = json::array();
  json diagnostics = json::array();
  for (const auto& r : g.rows) {
    rows.push_back({{"name", r.name},
                    {"modality", std::string(concepts::to_string(r.modality))},
                    {"rho", opt(r.rho)},
                    {"p_value", opt(r.p_value)},
                    {"determination", opt(r.determination)},
                    {"slope_norm", opt(r.slope_norm)},
                    {"mean_s", opt(r.mean_s)},
                    {"std_s", opt(r.std_s)},
                    {"br", opt(r.br)},
                    {"v", r.v},
                    {"flags", r.flags}});
    if (!r.flags.empty()) diagnostics.push_back({{"name", r.name}, {"flags", r.flags}});
  }
  json rankings = json::object(), tops = json::object();
  for (const auto& [measure, order] : g.rankings) {
    json names = json::array();
    for (std::size_t i : order) names.push_back(g.rows[i].name);
    rankings[std::string(to_string(measure))] = names;
    json table = json::array();
    const auto idx = top_k(g, measure, k);
    for (std::size_t rank = 0; rank < idx.size(); ++rank) {
      const GlobalRow& r = g.rows[idx[rank]];
      const std::optional<double> value = measure == Measure::Rho             ? r.rho
                                          : measure == Measure::Determination ? r.determination
                                          : measure == Measure::MeanSensitivity ? r.mean_s
                                                                                : r.br;
      table.push_back({{"rank", rank + 1},
                       {"name", r.name},
                       {"modality", std::string(concepts::to_string(r.modality))},
                       {"value", opt(value)}});
    }
    tops[std::string(to_string(measure))] = table;
  }
  return json{{"layer", g.layer},          {"lambda", g.lambda},
              {"n_samples", g.n_samples}, {"concepts", rows},
              {"rankings", rankings},     {"top_k", tops},
              {"k", k},                   {"diagnostics", diagnostics}};
}

std::string to_csv(const GlobalExplanation& g, const std::string& comment) {
  std::string out;
  if (!comment.empty()) out += "# " + comment + "\n";
  out += "name,modality,rho,p_value,determination,slope_norm,mean_s,std_s,br,flags\n";
  auto num = [](const std::optional<double>& v) {
    if (!v) return std::string("NA");
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", *v);
    return std::string(buf);
  };
  for (const auto& r : g.rows) {
    std::string flags;
    for (const auto& f : r.flags) flags += (flags.empty() ? "" : ";") + f;
    out += r.name + "," + std::string(concepts::to_string(r.modality)) + "," + num(r.rho) + "," +
           num(r.p_value) + "," + num(r.determination) + "," + num(r.slope_norm) + "," +
           num(r.mean_s) + "," + num(r.std_s) + "," + num(r.br) + ",\"" + flags + "\"\n";
  }
  return out;
}

std::map<std::string, ClassStat> class_statistics(const GlobalExplanation& g,
                                                  const Eigen::MatrixXd& reference_gradients) {
  if (reference_gradients.rows() < 1) throw InvalidArgument("class statistics need reference samples");
  std::map<std::string, ClassStat> out;
  for (const auto& r : g.rows) {
    if (!r.usable()) continue;
    const auto s = sensitivity_from_gradients(reference_gradients, r.v);
    ClassStat c;
    c.mean = mean_of(s);
    c.std = pop_std(s, c.mean);
    c.n = s.size();
    out[r.name] = c;
  }
  return out;
}

json to_json(const std::map<std::string, ClassStat>& stats) {
  json j = json::object();
  for (const auto& [name, c] : stats) j[name] = {{"mean", c.mean}, {"std", c.std}, {"n", c.n}};
  return j;
}

std::map<std::string, ClassStat> class_stats_from_json(const json& j) {
  std::map<std::string, ClassStat> out;
  for (const auto& [name, v] : j.items())
    out[name] = {v.at("mean").get<double>(), v.at("std").get<double>(), v.at("n").get<std::size_t>()};
  return out;
}

LocalExplanation local_explain(const std::string& sample_id, const std::vector<double>& gradient,
                               const GlobalExplanation& g,
                               const std::map<std::string, ClassStat>& stats, std::size_t k) {
  LocalExplanation out;
  out.sample_id = sample_id;
  std::vector<std::size_t> pick;
  for (std::size_t i : g.rankings.at(Measure::Br)) {
    if (pick.size() == k) break;
    if (g.rows[i].br) pick.push_back(i);
  }
  double acc = 0.0;
  for (std::size_t i : pick) {
    const GlobalRow& r = g.rows[i];
    if (r.v.size() != gradient.size())
      throw InvalidArgument("gradient length does not match the explained layer");
    LocalRow row;
    row.name = r.name;
    row.modality = r.modality;
    for (std::size_t q = 0; q < gradient.size(); ++q) row.s += gradient[q] * r.v[q];
    const auto it = stats.find(r.name);
    if (it == stats.end()) {
      row.flag = "no class statistics";
    } else {
      row.class_mean = it->second.mean;
      row.class_std = it->second.std;
      if (row.class_std > 0) {
        row.z = (row.s - row.class_mean) / row.class_std;
      } else if (row.s == row.class_mean) {
        row.z = 0.0;
      } else {
        row.flag = "zero class standard deviation";
      }
    }
    if (row.z) {
      acc += std::abs(*row.z);
      ++out.concepts_used;
    }
    out.rows.push_back(row);
  }
  if (out.concepts_used > 0) out.similarity = -acc / static_cast<double>(out.concepts_used);
  return out;
}

LocalExplanation local_explain(const nn::Model& m, int layer, const Patch& sample,
                               const std::string& sample_id, const GlobalExplanation& g,
                               const std::map<std::string, ClassStat>& stats, std::size_t k) {
  const auto grad = nn::grad_wrt_layer(m, sample, layer, m.spec.target_output());
  return local_explain(sample_id, grad, g, stats, k);
}

json to_json(const LocalExplanation& l) {
  json rows = json::array();
  for (const auto& r : l.rows)
    rows.push_back({{"name", r.name},
                    {"modality", std::string(concepts::to_string(r.modality))},
                    {"s", r.s},
                    {"class_mean", r.class_mean},
                    {"class_std", r.class_std},
                    {"z", opt(r.z)},
                    {"flag", r.flag}});
  return json{{"sample_id", l.sample_id},
              {"rows", rows},
              {"similarity", opt(l.similarity)},
              {"concepts_used", l.concepts_used}};
}

GlobalExplanation global_from_json(const json& j) {
  GlobalExplanation g;
  try {
    g.layer = j.at("layer").get<int>();
    g.lambda = j.at("lambda").get<double>();
    g.n_samples = j.at("n_samples").get<std::size_t>();
    for (const auto& r : j.at("concepts")) {
      GlobalRow row;
      row.name = r.at("name").get<std::string>();
      row.modality = modality_from(r.at("modality").get<std::string>());
      row.rho = opt_from(r, "rho");
      row.p_value = opt_from(r, "p_value");
      row.determination = opt_from(r, "determination");
      row.slope_norm = opt_from(r, "slope_norm");
      row.mean_s = opt_from(r, "mean_s");
      row.std_s = opt_from(r, "std_s");
      row.br = opt_from(r, "br");
      row.v = r.at("v").get<std::vector<double>>();
      row.flags = r.at("flags").get<std::vector<std::string>>();
      g.rows.push_back(std::move(row));
    }
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < g.rows.size(); ++i) index[g.rows[i].name] = i;
    for (Measure m : {Measure::Rho, Measure::Determination, Measure::MeanSensitivity, Measure::Br}) {
      std::vector<std::size_t> order;
      for (const auto& name : j.at("rankings").at(std::string(to_string(m))))
        order.push_back(index.at(name.get<std::string>()));
      g.rankings[m] = order;
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed global explanation: ") + e.what());
  } catch (const std::out_of_range& e) {
    throw ConfigError(std::string("global explanation ranking names an unknown concept"));
  }
  return g;
}

}  // namespace volxai::rcax
