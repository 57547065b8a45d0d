#include "volxai/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "volxai/parallel.hpp"

namespace volxai::nn {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(initial_lr > 0)) throw InvalidArgument("initial learning rate must be > 0");
  if (!(lr_decay > 0)) throw InvalidArgument("learning-rate decay must be > 0");
  if (lr_step_epochs < 1) throw InvalidArgument("lr_step_epochs must be >= 1");
  if (max_epochs < 1) throw InvalidArgument("max_epochs must be >= 1");
  if (patience < 1) throw InvalidArgument("patience must be >= 1");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (samples_per_epoch < 0) throw InvalidArgument("samples_per_epoch must be >= 0");
  augmentation.validate();
}

json to_json(const TrainConfig& c) {
  return json{{"initial_lr", c.initial_lr},
              {"lr_decay", c.lr_decay},
              {"lr_step_epochs", c.lr_step_epochs},
              {"max_epochs", c.max_epochs},
              {"patience", c.patience},
              {"batch_size", c.batch_size},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"weighted_sampling", c.weighted_sampling},
              {"samples_per_epoch", c.samples_per_epoch},
              {"augment", c.augment},
              {"augmentation", aug::to_json(c.augmentation)},
              {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  c.initial_lr = j.value("initial_lr", c.initial_lr);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.lr_step_epochs = j.value("lr_step_epochs", c.lr_step_epochs);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.weighted_sampling = j.value("weighted_sampling", c.weighted_sampling);
  c.samples_per_epoch = j.value("samples_per_epoch", c.samples_per_epoch);
  c.augment = j.value("augment", c.augment);
  if (j.contains("augmentation"))
    c.augmentation = aug::augmentation_spec_from_json(j["augmentation"], c.augmentation);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  return cfg.initial_lr * std::pow(cfg.lr_decay, epoch / cfg.lr_step_epochs);
}

WeightedSampler::WeightedSampler(const std::vector<int>& labels) {
  if (labels.empty()) throw InvalidArgument("weighted sampling needs a non-empty dataset");
  std::size_t pos = 0;
  for (int l : labels) pos += l == 1 ? 1 : 0;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw InvalidArgument("weighted sampling needs both classes present");
  double acc = 0.0;
  cumulative_.reserve(labels.size());
  for (int l : labels) {
    acc += 1.0 / static_cast<double>(l == 1 ? pos : neg);
    cumulative_.push_back(acc);
  }
}

std::size_t WeightedSampler::draw(rng::Stream& s) const {
  const double u = s.uniform() * cumulative_.back();
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  return std::min(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
}

double WeightedSampler::probability(std::size_t i) const {
  const double lo = i == 0 ? 0.0 : cumulative_[i - 1];
  return (cumulative_[i] - lo) / cumulative_.back();
}

std::vector<std::size_t> shuffled_indices(std::size_t n, rng::Stream& s) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(s.uniform_int(0, static_cast<long long>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

json to_json(const TrainHistory& h) {
  json epochs = json::array();
  for (const auto& e : h.epochs) {
    json row{{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}};
    row["val_loss"] = e.val_loss ? json(*e.val_loss) : json(nullptr);
    epochs.push_back(row);
  }
  return json{{"epochs", epochs}, {"best_epoch", h.best_epoch}, {"stopped_early", h.stopped_early}};
}

double mean_loss(const Model& m, const std::vector<LabeledPatch>& set) {
  if (set.empty()) throw InvalidArgument("mean_loss of an empty set");
  std::vector<double> losses(set.size());
  parallel_for(set.size(), [&](std::size_t i) {
    losses[i] = loss_and_gradients(m, set[i].patch, set[i].label, nullptr);
  });
  double acc = 0.0;
  for (double l : losses) acc += l;
  return acc / static_cast<double>(set.size());
}

void round_to_float32(Params& p) {
  for (auto b : p.blocks())
    for (double& x : b) x = static_cast<double>(static_cast<float>(x));
}

TrainResult train(const ModelSpec& spec, const std::vector<LabeledPatch>& data,
                  const std::vector<LabeledPatch>& val, const TrainConfig& cfg) {
  spec.validate();
  cfg.validate();
  if (data.empty()) throw InvalidArgument("training set is empty");
  std::vector<int> labels;
  for (const auto& s : data) labels.push_back(s.label);
  std::optional<WeightedSampler> sampler;
  if (cfg.weighted_sampling) sampler.emplace(labels);

  Model model{spec, init_params(spec, cfg.seed)};
  Gradients m1 = Gradients::zeros_like(model.params), m2 = Gradients::zeros_like(model.params);
  long long step = 0;
  const std::size_t draws =
      cfg.samples_per_epoch > 0 ? static_cast<std::size_t>(cfg.samples_per_epoch) : data.size();

  TrainResult result;
  Params best = model.params;
  double best_monitor = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    rng::Stream sampling(rng::derive_seed(rng::derive_seed(cfg.seed, rng::StreamTag::Sampling),
                                          static_cast<std::uint64_t>(epoch)));
    rng::Stream augs(rng::derive_seed(rng::derive_seed(cfg.seed, rng::StreamTag::Augment),
                                      static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order;
    if (sampler) {
      order.resize(draws);
      for (auto& i : order) i = sampler->draw(sampling);
    } else {
      order = shuffled_indices(data.size(), sampling);
      while (order.size() < draws) {
        const auto more = shuffled_indices(data.size(), sampling);
        order.insert(order.end(), more.begin(), more.end());
      }
      order.resize(draws);
    }
    std::vector<aug::AugmentDraw> transforms(order.size());
    if (cfg.augment)
      for (auto& t : transforms) t = aug::draw(cfg.augmentation, augs);

    double epoch_loss = 0.0;
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t n = std::min(bs, order.size() - start);
      std::vector<Gradients> per(n);
      std::vector<double> losses(n);
      parallel_for(n, [&](std::size_t k) {
        const LabeledPatch& s = data[order[start + k]];
        per[k] = Gradients::zeros_like(model.params);
        const Patch input = cfg.augment ? aug::augment(s.patch, transforms[start + k]) : s.patch;
        losses[k] = loss_and_gradients(model, input, s.label, &per[k]);
      });
      Gradients g = Gradients::zeros_like(model.params);
      for (std::size_t k = 0; k < n; ++k) {
        epoch_loss += losses[k];
        for (std::size_t b = 0; b < g.blocks.size(); ++b)
          for (std::size_t i = 0; i < g.blocks[b].size(); ++i) g.blocks[b][i] += per[k].blocks[b][i];
      }
      g.scale(1.0 / static_cast<double>(n));

      ++step;
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      auto blocks = model.params.blocks();
      for (std::size_t b = 0; b < blocks.size(); ++b)
        for (std::size_t i = 0; i < blocks[b].size(); ++i) {
          const double gi = g.blocks[b][i];
          double& mi = m1.blocks[b][i];
          double& vi = m2.blocks[b][i];
          mi = cfg.beta1 * mi + (1.0 - cfg.beta1) * gi;
          vi = cfg.beta2 * vi + (1.0 - cfg.beta2) * gi * gi;
          blocks[b][i] -= lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.adam_eps);
        }
    }
    epoch_loss /= static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss) || !model.params.all_finite())
      throw TrainError(epoch, "non-finite training loss");

    EpochRecord rec{epoch, lr, epoch_loss, std::nullopt};
    double monitor = epoch_loss;
    if (!val.empty()) {
      rec.val_loss = mean_loss(model, val);
      if (!std::isfinite(*rec.val_loss)) throw TrainError(epoch, "non-finite validation loss");
      monitor = *rec.val_loss;
    }
    result.history.epochs.push_back(rec);
    if (monitor < best_monitor) {
      best_monitor = monitor;
      best = model.params;
      result.history.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      result.history.stopped_early = true;
      break;
    }
  }
  round_to_float32(best);
  result.params = std::move(best);
  return result;
}

}  // namespace volxai::nn
