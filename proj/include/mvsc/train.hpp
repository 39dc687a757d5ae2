#pragma once

// Cross-entropy training of the compressor and classification head against
// a frozen extractor: AdamW with decoupled weight decay, linear warmup into
// cosine annealing, per-epoch metrics.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "mvsc/backbone.hpp"
#include "mvsc/errors.hpp"
#include "mvsc/io.hpp"
#include "mvsc/metrics.hpp"
#include "mvsc/network.hpp"
#include "mvsc/rng.hpp"
#include "mvsc/tensor.hpp"

namespace mvsc {

// -log softmax(logits)[label] for a single logit vector.
inline Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  Tensor row = logits.rank() == 1 ? reshape(logits, {1, logits.size()})
                                  : logits;
  return cross_entropy_mean(row, {label});
}

struct OptimConfig {
  double lr_max = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
};

// AdamW: decoupled weight decay, bias-corrected moments.
//   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, OptimConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    slots_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      slots_[i].m.assign(params_[i].size(), 0.0);
      slots_[i].v.assign(params_[i].size(), 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      const std::vector<double>& g = p.grad();
      std::vector<double>& theta = p.mutable_values();
      Slot& slot = slots_[i];
      for (std::size_t j = 0; j < theta.size(); ++j) {
        slot.m[j] = cfg_.beta1 * slot.m[j] + (1.0 - cfg_.beta1) * g[j];
        slot.v[j] = cfg_.beta2 * slot.v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double m_hat = slot.m[j] / bc1;
        const double v_hat = slot.v[j] / bc2;
        theta[j] -= lr * (m_hat / (std::sqrt(v_hat) + cfg_.epsilon) +
                          cfg_.weight_decay * theta[j]);
      }
    }
  }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

  long step_count() const { return t_; }

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  std::vector<Tensor> params_;
  std::vector<Slot> slots_;
  OptimConfig cfg_;
  long t_ = 0;
};

struct ScheduleConfig {
  std::size_t warmup_epochs = 2;
  std::size_t cosine_epochs = 30;
  double lr_max = 1e-4;
};

// Linear warmup to lr_max over warmup_epochs, then half-cosine decay to 0
// over cosine_epochs. Continuous at the boundary: both sides equal lr_max.
inline double lr_schedule(std::size_t epoch, const ScheduleConfig& cfg) {
  if (cfg.warmup_epochs > 0 && epoch < cfg.warmup_epochs) {
    return cfg.lr_max * static_cast<double>(epoch + 1) /
           static_cast<double>(cfg.warmup_epochs);
  }
  const double progress =
      static_cast<double>(epoch - cfg.warmup_epochs) /
      static_cast<double>(cfg.cosine_epochs);
  if (progress >= 1.0) return 0.0;
  return cfg.lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// --------------------------------------------------------------------------
// Training loop
// --------------------------------------------------------------------------

struct TrainSample {
  ScanInputs inputs;
  std::size_t label = 0;
  std::string subject_id;
  // Baseline surrogate replaces the learned one when the run trains only
  // the head on pooled inputs.
  Tensor fixed_surrogate;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_auc = 0.0;
  double val_macro_auc = 0.0;
  double val_acc = 0.0;
};

struct TrainOptions {
  OptimConfig optim;
  ScheduleConfig schedule;
  std::size_t epochs = 32;  // epochs actually run
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  // When set, the compressor is bypassed/frozen and only the head trains on
  // fixed_surrogate (pooling baselines) or sidecar features.
  bool head_only = false;
};

struct EvalResult {
  double acc = 0.0;
  double auc_positive = 0.0;  // one-vs-rest AUC of the last class
  double macro = 0.0;
  std::vector<std::string> warnings;
};

namespace detail {

inline Tensor sample_surrogate(const TrainSample& s, const SurrogateModel& m,
                               bool head_only) {
  if (head_only) {
    require(s.fixed_surrogate.defined(),
            "head-only training requires fixed surrogates");
    return s.fixed_surrogate;
  }
  return mvsc_forward_prepared(s.inputs, m);
}

}  // namespace detail

// Evaluation-mode metrics over a sample set. The positive class for the
// binary AUC is the highest class index (disease-positive by convention).
inline EvalResult evaluate(const std::vector<TrainSample>& samples,
                           const SurrogateModel& model, ClassifierHead& head,
                           const FrozenExtractor& extractor, bool head_only) {
  require(!samples.empty(), "evaluate: empty sample set");
  const std::size_t classes = head.classes();
  std::vector<std::vector<double>> probs;
  std::vector<std::size_t> labels, predicted;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Tensor surrogate =
        detail::sample_surrogate(samples[i], model, head_only);
    Tensor feature = extractor.extract(surrogate, i);
    Tensor logits = classify(feature, head);
    Tensor p = softmax(logits, 0);
    probs.push_back(p.values());
    labels.push_back(samples[i].label);
    std::size_t argmax = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (p.values()[c] > p.values()[argmax]) argmax = c;
    }
    predicted.push_back(argmax);
  }
  EvalResult r;
  r.acc = accuracy(predicted, labels);
  r.macro = macro_auc(probs, labels, &r.warnings);
  std::vector<double> pos_scores(samples.size());
  std::vector<int> pos_labels(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    pos_scores[i] = probs[i][classes - 1];
    pos_labels[i] = labels[i] == classes - 1 ? 1 : 0;
  }
  r.auc_positive = auc(pos_scores, pos_labels);
  return r;
}

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::uint64_t extractor_checksum_before = 0;
  std::uint64_t extractor_checksum_after = 0;
  std::size_t steps = 0;
};

// Trains compressor + head (or head only); the extractor is read, never
// written. Deterministic given (samples, options): shuffling draws from a
// dedicated stream of the run seed.
inline TrainResult train(std::vector<TrainSample>& train_samples,
                         const std::vector<TrainSample>& val_samples,
                         SurrogateModel& model, ClassifierHead& head,
                         const FrozenExtractor& extractor,
                         const TrainOptions& opts) {
  require(!train_samples.empty(), "train: empty training set");
  TrainResult result;
  result.extractor_checksum_before = extractor.checksum();

  std::vector<Tensor> params;
  if (!opts.head_only) {
    for (Tensor& p : model.parameters()) params.push_back(p);
  }
  for (Tensor& p : head.parameters()) params.push_back(p);
  AdamW optimizer(params, opts.optim);

  Rng shuffle_rng(derive_seed(opts.seed, SeedStream::kShuffle));
  std::vector<std::size_t> order(train_samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, opts.schedule);
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0, correct = 0;
    for (std::size_t start = 0; start < order.size();
         start += opts.batch_size) {
      const std::size_t end =
          std::min(order.size(), start + opts.batch_size);
      std::vector<Tensor> feature_rows;
      std::vector<std::size_t> labels;
      for (std::size_t i = start; i < end; ++i) {
        const TrainSample& s = train_samples[order[i]];
        Tensor surrogate =
            detail::sample_surrogate(s, model, opts.head_only);
        Tensor feature = extractor.extract(surrogate, order[i]);
        feature_rows.push_back(reshape(feature, {1, feature.size()}));
        labels.push_back(s.label);
      }
      Tensor features = concat_rows(feature_rows);
      Tensor logits = head.forward(features, /*training=*/true);
      Tensor loss = cross_entropy_mean(logits, labels);
      optimizer.zero_grad();
      backward(loss);
      optimizer.step(lr);
      loss_sum += loss.item();
      ++batches;
      const std::size_t classes = head.classes();
      for (std::size_t b = 0; b < labels.size(); ++b) {
        std::size_t argmax = 0;
        for (std::size_t c = 1; c < classes; ++c) {
          if (logits.values()[b * classes + c] >
              logits.values()[b * classes + argmax]) {
            argmax = c;
          }
        }
        correct += argmax == labels[b] ? 1 : 0;
      }
      ++result.steps;
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.lr = lr;
    em.train_loss = loss_sum / static_cast<double>(batches);
    em.train_acc =
        static_cast<double>(correct) / static_cast<double>(order.size());
    if (!val_samples.empty()) {
      EvalResult val =
          evaluate(val_samples, model, head, extractor, opts.head_only);
      em.val_auc = val.auc_positive;
      em.val_macro_auc = val.macro;
      em.val_acc = val.acc;
    }
    result.history.push_back(em);
  }
  result.extractor_checksum_after = extractor.checksum();
  return result;
}

// One line per epoch: epoch,lr,train_loss,train_acc,val_auc,val_macro_auc,
// val_acc.
inline std::string metrics_log(const std::vector<EpochMetrics>& history) {
  std::string out;
  for (const EpochMetrics& em : history) {
    out += std::to_string(em.epoch);
    out += ',';
    out += format_double(em.lr);
    out += ',';
    out += format_double(em.train_loss);
    out += ',';
    out += format_double(em.train_acc);
    out += ',';
    out += format_double(em.val_auc);
    out += ',';
    out += format_double(em.val_macro_auc);
    out += ',';
    out += format_double(em.val_acc);
    out += '\n';
  }
  return out;
}

}  // namespace mvsc
