#pragma once

// Losses, Adam/AdamW, plateau scheduling, early stopping, and the
// train/evaluate loops. Training is strictly serial and seeded, so a rerun
// with the same config reproduces the history bitwise.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "flowgnn/metrics.hpp"
#include "flowgnn/models.hpp"
#include "flowgnn/tensor.hpp"

namespace flowgnn {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Mean of -log_probs[i, labels[i]]. Rows must already be log-probabilities.
inline Tensor nll_loss(const Tensor& log_probs, const std::vector<std::size_t>& labels) {
  Tensor lp = log_probs.rank() == 1 ? stack_rows({log_probs}) : log_probs;
  return scale(sum(pick(lp, labels)), real_t(-1) / static_cast<real_t>(labels.size()));
}

inline Tensor mse_loss(const Tensor& pred, const std::vector<real_t>& target) {
  if (pred.size() != target.size()) throw ShapeError("mse_loss: length mismatch");
  Tensor diff = sub(pred, Tensor::constant(pred.shape(), target));
  return mean(mul(diff, diff));
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct OptimizerConfig {
  double lr = 1e-3;
  bool adamw = false;
  double weight_decay = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction; AdamW applies decoupled weight decay
// (param <- param - lr*wd*param) before the Adam update term, while plain
// Adam folds the decay into the gradient.
class Optimizer {
 public:
  Optimizer(std::vector<Tensor> params, OptimizerConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0);
      v_.emplace_back(p.size(), 0);
    }
  }

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      Tensor& p = params_[pi];
      const auto& grad = p.grad();
      auto& value = p.mutable_value();
      for (std::size_t i = 0; i < value.size(); ++i) {
        double g = grad[i];
        if (!std::isfinite(g)) throw NonFiniteError("Optimizer: non-finite gradient");
        if (cfg_.weight_decay != 0) {
          if (cfg_.adamw)
            value[i] -= static_cast<real_t>(cfg_.lr * cfg_.weight_decay * value[i]);
          else
            g += cfg_.weight_decay * value[i];
        }
        m_[pi][i] = cfg_.beta1 * m_[pi][i] + (1 - cfg_.beta1) * g;
        v_[pi][i] = cfg_.beta2 * v_[pi][i] + (1 - cfg_.beta2) * g * g;
        const double m_hat = m_[pi][i] / bc1;
        const double v_hat = v_[pi][i] / bc2;
        value[i] -= static_cast<real_t>(cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps));
      }
    }
  }

 private:
  std::vector<Tensor> params_;
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

// Divides the learning rate by `factor` after `patience` consecutive
// epochs without improvement beyond eps; the counter resets on improvement
// and on reduction. Never increases the rate.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor, std::size_t patience, bool maximize, double eps = 1e-8)
      : factor_(factor), patience_(patience), maximize_(maximize), eps_(eps) {
    if (factor <= 1) throw std::invalid_argument("PlateauScheduler: factor must be > 1");
    if (patience < 1) throw std::invalid_argument("PlateauScheduler: patience must be >= 1");
  }

  double step(double metric, double lr) {
    if (!has_best_ || improved(metric)) {
      best_ = metric;
      has_best_ = true;
      bad_ = 0;
      return lr;
    }
    if (++bad_ >= patience_) {
      bad_ = 0;
      return lr / factor_;
    }
    return lr;
  }

 private:
  bool improved(double metric) const {
    return maximize_ ? metric > best_ + eps_ : metric < best_ - eps_;
  }
  double factor_;
  std::size_t patience_;
  bool maximize_;
  double eps_;
  double best_ = 0;
  bool has_best_ = false;
  std::size_t bad_ = 0;
};

// Signals a stop after `patience` epochs without improvement. The caller
// snapshots parameters whenever update() reports an improvement.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, bool maximize, double eps = 1e-8)
      : patience_(patience), maximize_(maximize), eps_(eps) {
    if (patience < 1) throw std::invalid_argument("EarlyStopping: patience must be >= 1");
  }

  // Returns true when the metric improved.
  bool update(double metric) {
    if (!has_best_ || (maximize_ ? metric > best_ + eps_ : metric < best_ - eps_)) {
      best_ = metric;
      has_best_ = true;
      bad_ = 0;
      return true;
    }
    ++bad_;
    return false;
  }

  bool should_stop() const { return bad_ >= patience_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  bool maximize_;
  double eps_;
  double best_ = 0;
  bool has_best_ = false;
  std::size_t bad_ = 0;
};

// ---------------------------------------------------------------------------
// Train / evaluate
// ---------------------------------------------------------------------------

struct SchedulerConfig {
  std::string kind = "none";  // none | plateau
  double factor = 5;
  std::size_t patience = 10;
};

struct TrainConfig {
  double lr = 1e-3;
  std::string optimizer = "adam";  // adam | adamw
  double weight_decay = 0;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 500;
  std::size_t early_stop_patience = 20;
  SchedulerConfig scheduler;
  std::string loss = "nll";  // nll | mse
  std::uint64_t seed = 0;
  real_t dropout = 0.1;

  void validate() const {
    if (lr < 0) throw std::invalid_argument("TrainConfig: lr must be >= 0");
    if (optimizer != "adam" && optimizer != "adamw")
      throw std::invalid_argument("TrainConfig: unknown optimizer '" + optimizer + "'");
    if (loss != "nll" && loss != "mse")
      throw std::invalid_argument("TrainConfig: unknown loss '" + loss + "'");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("TrainConfig: max_epochs must be >= 1");
    if (early_stop_patience < 1)
      throw std::invalid_argument("TrainConfig: early_stop_patience must be >= 1");
    if (dropout < 0 || dropout >= 1)
      throw std::invalid_argument("TrainConfig: dropout must be in [0,1)");
    if (scheduler.kind != "none" && scheduler.kind != "plateau")
      throw std::invalid_argument("TrainConfig: unknown scheduler '" + scheduler.kind + "'");
    if (scheduler.kind == "plateau" && scheduler.factor <= 1)
      throw std::invalid_argument("TrainConfig: scheduler factor must be > 1");
  }
};

struct HistoryRow {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_metric = 0;
  double lr = 0;
};

struct TrainOutcome {
  std::vector<HistoryRow> history;
  std::size_t best_epoch = 0;
  double best_val_metric = 0;
  bool stopped_early = false;
};

namespace detail {
inline Tensor record_loss(const Model& model, const GraphRecord& rec, bool train_mode, Rng& rng,
                          const TrainConfig& cfg) {
  Tensor out = model.forward(rec, train_mode, rng);
  if (cfg.loss == "nll")
    return nll_loss(out, {static_cast<std::size_t>(std::llround(rec.label))});
  return mse_loss(out, {static_cast<real_t>(rec.label)});
}
}  // namespace detail

// Forward pass over a dataset in evaluation mode.
inline MetricsReport evaluate(const Model& model, const Dataset& ds) {
  if (ds.records.empty()) throw std::invalid_argument("evaluate: empty dataset");
  Rng rng(0);  // never consulted: dropout is inactive in eval mode
  MetricsReport rep;
  double loss_sum = 0;

  if (model.config().is_regression()) {
    std::vector<double> preds, targets;
    for (const auto& rec : ds.records) {
      Tape tape;
      Tensor out = model.forward(rec, /*train_mode=*/false, rng);
      preds.push_back(out.value()[0]);
      targets.push_back(rec.label);
      const double d = out.value()[0] - rec.label;
      loss_sum += d * d;
    }
    rep.rmse = rmse(preds, targets);
    try {
      rep.pearson_r = pearson_r(preds, targets);
    } catch (const std::invalid_argument&) {
      // zero variance: leave unset
    }
  } else {
    ConfusionMatrix cm(model.config().num_classes);
    std::size_t correct = 0;
    for (const auto& rec : ds.records) {
      Tape tape;
      Tensor logp = model.forward(rec, /*train_mode=*/false, rng);
      std::size_t argmax = 0;
      for (std::size_t c = 1; c < logp.size(); ++c)
        if (logp.value()[c] > logp.value()[argmax]) argmax = c;
      const auto truth = static_cast<std::size_t>(std::llround(rec.label));
      cm.add(truth, argmax);
      if (argmax == truth) ++correct;
      loss_sum += nll_loss(logp, {truth}).item();
    }
    rep.confusion = cm;
    rep.balanced_accuracy = balanced_accuracy(cm);
    rep.macro_f1 = macro_f1(cm);
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(ds.records.size());
  }
  rep.loss = loss_sum / static_cast<double>(ds.records.size());
  return rep;
}

// Mini-batch gradient descent with seeded shuffling, per-epoch validation,
// plateau scheduling and early stopping. The best-validation parameters
// are restored into the model before returning.
inline TrainOutcome train(Model& model, const Splits& splits, const TrainConfig& cfg) {
  cfg.validate();
  if (splits.train.records.empty()) throw std::invalid_argument("train: empty training split");
  model.set_dropout(cfg.dropout);

  const bool classification = !model.config().is_regression();
  // Classification monitors balanced accuracy (maximized); regression
  // monitors the validation loss (minimized). The scheduler watches the
  // same metric as early stopping.
  const bool maximize = classification;
  const Dataset& val = splits.val.records.empty() ? splits.train : splits.val;

  std::vector<Tensor> params = model.params();
  OptimizerConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.adamw = cfg.optimizer == "adamw";
  ocfg.weight_decay = cfg.weight_decay;
  Optimizer opt(params, ocfg);

  std::optional<PlateauScheduler> scheduler;
  if (cfg.scheduler.kind == "plateau")
    scheduler.emplace(cfg.scheduler.factor, cfg.scheduler.patience, maximize);
  EarlyStopping stopper(cfg.early_stop_patience, maximize);

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(splits.train.records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainOutcome outcome;
  std::vector<std::vector<real_t>> best_params;
  for (const auto& p : params) best_params.push_back(p.value());

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      opt.zero_grad();
      for (std::size_t i = start; i < end; ++i) {
        const GraphRecord& rec = splits.train.records[order[i]];
        try {
          Tape tape;
          Tensor loss = detail::record_loss(model, rec, /*train_mode=*/true, rng, cfg);
          loss_sum += loss.item();
          backward(scale(loss, real_t(1) / static_cast<real_t>(end - start)));
        } catch (const NonFiniteError& e) {
          throw NonFiniteError("train: epoch " + std::to_string(epoch) + ", record '" + rec.id +
                               "': " + e.what());
        }
      }
      opt.step();
    }
    const double train_loss = loss_sum / static_cast<double>(order.size());

    const MetricsReport val_rep = evaluate(model, val);
    const double val_metric = classification ? *val_rep.balanced_accuracy : *val_rep.loss;

    outcome.history.push_back({epoch, train_loss, val_metric, opt.lr()});

    if (stopper.update(val_metric)) {
      outcome.best_epoch = epoch;
      outcome.best_val_metric = val_metric;
      for (std::size_t pi = 0; pi < params.size(); ++pi) best_params[pi] = params[pi].value();
    }
    if (scheduler) opt.set_lr(scheduler->step(val_metric, opt.lr()));
    if (stopper.should_stop()) {
      outcome.stopped_early = true;
      break;
    }
  }

  for (std::size_t pi = 0; pi < params.size(); ++pi) params[pi].mutable_value() = best_params[pi];
  return outcome;
}

}  // namespace flowgnn
