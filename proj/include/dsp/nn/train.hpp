#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsp/metrics.hpp"
#include "dsp/nn/beam.hpp"
#include "dsp/nn/model.hpp"
#include "dsp/random.hpp"

namespace dsp::nn {

struct TrainConfig {
  ModelConfig model;
  std::string optimizer = "adam";
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double l2 = 1e-5;
  double lr_decay = 0.98;
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  bool swa = true;
  double swa_fraction = 0.25;
  double clip_norm = 5.0;     // 0 disables
  double word_dropout = 0.0;  // per-type probability of reading a copied slot-value word as <unk>
  std::uint64_t seed = 1;
  double stop_at_accuracy = 0.0;  // > 0: stop once validation frame accuracy reaches it
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"model", c.model},
       {"optimizer", c.optimizer},
       {"learning_rate", c.learning_rate},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"epsilon", c.epsilon},
       {"l2", c.l2},
       {"lr_decay", c.lr_decay},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"swa", c.swa},
       {"swa_fraction", c.swa_fraction},
       {"clip_norm", c.clip_norm},
       {"word_dropout", c.word_dropout},
       {"seed", c.seed},
       {"stop_at_accuracy", c.stop_at_accuracy}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  c.optimizer = j.value("optimizer", d.optimizer);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.epsilon = j.value("epsilon", d.epsilon);
  c.l2 = j.value("l2", d.l2);
  c.lr_decay = j.value("lr_decay", d.lr_decay);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.swa = j.value("swa", d.swa);
  c.swa_fraction = j.value("swa_fraction", d.swa_fraction);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.word_dropout = j.value("word_dropout", d.word_dropout);
  c.seed = j.value("seed", d.seed);
  c.stop_at_accuracy = j.value("stop_at_accuracy", d.stop_at_accuracy);
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;  // mean per-example loss
  std::optional<double> valid_frame_acc;
  double learning_rate = 0;
  bool averaged = false;  // validation ran on the weight average
};

using Model = PointerGenerator<float>;

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;
  std::vector<std::string> warnings;
};

/// Greedy constrained frame accuracy of `model` on examples whose targets are
/// gold linearizations.
template <typename Real>
double greedy_frame_accuracy(const PointerGenerator<Real>& model, const std::vector<Example>& examples) {
  if (examples.empty()) return 0.0;
  Tally t;
  for (const auto& ex : examples) {
    auto pred = predict_beam(model, ex.source, 1).front();
    auto gold = to_prediction(ex.target);
    t.add(gold && frame_match(pred, *gold, {}));
  }
  return t.rate();
}

namespace detail {

inline void check_train_config(const TrainConfig& c) {
  c.model.check();
  if (c.batch_size == 0) throw Error(Errc::ConfigError, "batch_size must be positive");
  if (c.learning_rate < 0) throw Error(Errc::ConfigError, "learning_rate must be non-negative");
  if (c.word_dropout < 0 || c.word_dropout >= 1) throw Error(Errc::ConfigError, "word_dropout must be in [0, 1)");
  if (c.swa_fraction < 0 || c.swa_fraction > 1) throw Error(Errc::ConfigError, "swa_fraction must be in [0, 1]");
}

}  // namespace detail

/// Minibatch Adam on the summed sequence loss, averaged per batch.
/// Deterministic for a fixed seed: the batch order comes from the seeded
/// generator and per-example gradients are reduced in batch order.
/// `on_epoch` may return false to stop early.
inline TrainResult train(const std::vector<Example>& train_set, const std::vector<Example>& valid_set,
                         const TrainConfig& config,
                         const std::function<bool(const EpochRecord&)>& on_epoch = {}) {
  detail::check_train_config(config);
  if (train_set.empty()) throw Error(Errc::EmptyInput, "training set is empty");
  std::vector<std::string> warnings;
  if (config.optimizer == "lamb") warnings.push_back("optimizer 'lamb' is not implemented; using adam");
  else if (config.optimizer != "adam") throw Error(Errc::ConfigError, "unknown optimizer " + config.optimizer);

  Model model(config.model, Vocabulary::build(train_set), config.seed);
  auto& params = model.params();
  const std::size_t n_params = params.size();
  using Mat = Matrix<float>;
  std::vector<Mat> m(n_params), v(n_params), grad(n_params);
  for (std::size_t i = 0; i < n_params; ++i) {
    m[i] = Mat::Zero(params[i].value.rows(), params[i].value.cols());
    v[i] = m[i];
  }
  std::optional<ParameterSet<float>> average;
  std::size_t averaged_epochs = 0;
  const std::size_t swa_start =
      config.epochs - static_cast<std::size_t>(std::floor(config.swa_fraction * static_cast<double>(config.epochs)));

  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t step = 0;
  std::vector<EpochRecord> history;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.learning_rate * std::pow(config.lr_decay, static_cast<double>(epoch));
    rng.shuffle(order);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      for (auto& g : grad) g.resize(0, 0);
      for (std::size_t b = start; b < end; ++b) {
        const Example& ex = train_set[order[b]];
        UnkTypes unk;
        if (config.word_dropout > 0) {
          // Slot values only: trigger words after a separator are closed-class.
          std::vector<std::string> types;
          bool trigger = false;
          for (const auto& t : ex.target) {
            if (t == kSeparator) trigger = true;
            else if (t == kClose) trigger = false;
            else if (!trigger && model.vocab().copyable(t)) types.push_back(t);
          }
          std::sort(types.begin(), types.end());
          types.erase(std::unique(types.begin(), types.end()), types.end());
          for (const auto& t : types)
            if (rng.bernoulli(config.word_dropout)) unk.insert(t);
        }
        Graph<float> g(n_params);
        Var loss = model.sequence_nll(g, ex.source, ex.target, unk.empty() ? nullptr : &unk);
        const double l = static_cast<double>(g.scalar(loss));
        if (!std::isfinite(l))
          throw Error(Errc::DivergedLoss, "non-finite loss at epoch " + std::to_string(epoch));
        loss_sum += l;
        g.backward(loss);
        g.for_each_param_grad([&](int i, const Mat& gi) {
          auto& acc = grad[static_cast<std::size_t>(i)];
          if (acc.size() == 0) acc = gi;
          else acc += gi;
        });
      }
      const float inv = 1.0f / static_cast<float>(end - start);
      double norm2 = 0;
      for (auto& g : grad)
        if (g.size() != 0) {
          g *= inv;
          norm2 += static_cast<double>(g.squaredNorm());
        }
      float clip = 1.0f;
      if (config.clip_norm > 0 && std::sqrt(norm2) > config.clip_norm)
        clip = static_cast<float>(config.clip_norm / std::sqrt(norm2));

      ++step;
      const double bc1 = 1 - std::pow(config.beta1, static_cast<double>(step));
      const double bc2 = 1 - std::pow(config.beta2, static_cast<double>(step));
      const auto b1 = static_cast<float>(config.beta1), b2 = static_cast<float>(config.beta2);
      const auto step_size = static_cast<float>(lr / bc1);
      const auto inv_bc2 = static_cast<float>(1.0 / bc2);
      const auto eps = static_cast<float>(config.epsilon), l2 = static_cast<float>(config.l2);
      for (std::size_t i = 0; i < n_params; ++i) {
        Mat& w = params[i].value;
        Mat gi = grad[i].size() != 0 ? Mat(grad[i] * clip) : Mat::Zero(w.rows(), w.cols());
        if (l2 > 0) gi += l2 * w;
        m[i] = b1 * m[i] + (1 - b1) * gi;
        v[i] = b2 * v[i] + (1 - b2) * gi.cwiseProduct(gi);
        w.array() -= step_size * m[i].array() / ((v[i].array() * inv_bc2).sqrt() + eps);
      }
    }
    if (!params.all_finite())
      throw Error(Errc::DivergedLoss, "non-finite parameters at epoch " + std::to_string(epoch));

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.learning_rate = lr;
    if (config.swa && epoch >= swa_start) {
      ++averaged_epochs;
      if (!average) average = params;
      else
        for (std::size_t i = 0; i < n_params; ++i)
          (*average)[i].value += (params[i].value - (*average)[i].value) / static_cast<float>(averaged_epochs);
      rec.averaged = true;
    }
    if (!valid_set.empty()) {
      if (rec.averaged) rec.valid_frame_acc = greedy_frame_accuracy(Model(config.model, model.vocab(), *average), valid_set);
      else rec.valid_frame_acc = greedy_frame_accuracy(model, valid_set);
    }
    history.push_back(rec);
    bool keep_going = !on_epoch || on_epoch(rec);
    if (config.stop_at_accuracy > 0 && rec.valid_frame_acc && *rec.valid_frame_acc >= config.stop_at_accuracy)
      keep_going = false;
    if (!keep_going) break;
  }

  if (average) return {Model(config.model, model.vocab(), *average), std::move(history), std::move(warnings)};
  return {std::move(model), std::move(history), std::move(warnings)};
}

}  // namespace dsp::nn
