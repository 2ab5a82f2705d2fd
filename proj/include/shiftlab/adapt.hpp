#pragma once

// Trainers: supervised source training, MMD-aligned UDA, source-free IM
// adaptation (single and weighted multi-source) and the "expanded base"
// variant that re-injects visible labeled source data.
//
// Trainers never see target labels. Accuracy trajectories come from an
// optional probe owned by the caller.

#include <chrono>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "shiftlab/datagen.hpp"
#include "shiftlab/nn.hpp"
#include "shiftlab/objectives.hpp"
#include "shiftlab/record.hpp"

namespace shiftlab {

struct AdaptationConfig {
  long long iterations = 300;
  long long batch_size = 64;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double lambda_uda = 5.0;
  double lambda_mea = 1.0;
  double beta_pseudo = 0.0;
  long long pseudo_refresh = 50;
  long long eval_every = 10;
  int hidden_dim = 64;
  int depth = 2;
  std::uint64_t seed = 0;

  void validate() const {
    if (iterations < 0) throw ParameterError("iterations must be non-negative");
    if (batch_size < 1) throw ParameterError("batch_size must be positive");
    if (pseudo_refresh < 1) throw ParameterError("pseudo_refresh must be positive");
    if (eval_every < 1) throw ParameterError("eval_every must be positive");
    if (hidden_dim < 1 || depth < 1) throw ParameterError("hidden_dim and depth must be positive");
    auto nonneg = [](double v, const char* name) {
      if (!std::isfinite(v) || v < 0.0) throw ParameterError(std::string(name) + " must be finite and >= 0");
    };
    nonneg(learning_rate, "learning_rate");
    nonneg(lambda_uda, "lambda_uda");
    nonneg(lambda_mea, "lambda_mea");
    nonneg(beta_pseudo, "beta_pseudo");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must lie in [0, 1)");
  }
};

using Predictor = std::function<Matrix(const Matrix&)>;
/// Returns target accuracy of a predictor; supplied by the harness.
using AccuracyProbe = std::function<double(const Predictor&)>;

struct TrainerOutput {
  std::vector<SourceModel> models;
  std::vector<double> weights;
  ExperimentRecord record;

  const SourceModel& model() const { return models.front(); }
};

enum class ExpandedMode { ce_only, ce_mmd };

namespace detail {

/// Epoch-wise reshuffled index stream.
class Batcher {
 public:
  Batcher(std::size_t n, std::size_t batch, std::uint64_t seed)
      : n_(n), batch_(std::min(batch, n)), rng_(seed), perm_(n) {
    reshuffle();
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> idx;
    idx.reserve(batch_);
    while (idx.size() < batch_) {
      if (pos_ == n_) reshuffle();
      idx.push_back(perm_[pos_++]);
    }
    return idx;
  }

 private:
  void reshuffle() {
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    std::shuffle(perm_.begin(), perm_.end(), rng_);
    pos_ = 0;
  }

  std::size_t n_, batch_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> perm_;
  std::size_t pos_ = 0;
};

inline Matrix gather(const Matrix& X, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

inline std::vector<int> gather(const std::vector<int>& y, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(y[i]);
  return out;
}

constexpr std::uint64_t kSourceStream = 0xa1;
constexpr std::uint64_t kTargetStream = 0xa1;  // same stream: identical data gives identical batches
constexpr std::uint64_t kVisibleStream = 0xb0;

class Clock {
 public:
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline void log_step(ExperimentRecord& rec, TrajectoryRow row, long long iterations, long long eval_every,
                     const AccuracyProbe& probe, const Predictor& predictor, const Clock& clock) {
  if (!std::isfinite(row.loss_total))
    throw NumericError("non-finite loss at iteration " + std::to_string(row.iteration));
  if (probe && (row.iteration % eval_every == 0 || row.iteration == iterations)) {
    row.acc_target = probe(predictor);
    rec.summary.final_accuracy = row.acc_target;
  }
  row.ms = clock.ms();
  rec.rows.push_back(row);
}

inline void start_record(ExperimentRecord& rec, const AccuracyProbe& probe, const Predictor& predictor) {
  if (probe) {
    rec.summary.initial_accuracy = probe(predictor);
    rec.summary.final_accuracy = rec.summary.initial_accuracy;
  }
}

inline double cosine_distance(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - a.dot(b) / (na * nb);
}

}  // namespace detail

/// Mini-batch SGD on cross-entropy from a freshly initialised model.
inline TrainerOutput train_source(const Dataset& ds, const AdaptationConfig& cfg, const AccuracyProbe& probe = {}) {
  cfg.validate();
  ds.validate();
  if (!ds.labeled()) throw ParameterError("source training needs a labeled dataset");

  SourceModel model = init_model(ds.dim(), cfg.hidden_dim, ds.num_classes, cfg.depth, cfg.seed);
  model.meta.domain_id = ds.domain_id;
  model.meta.epochs = cfg.iterations * cfg.batch_size / static_cast<long long>(ds.size());

  OptimizerState opt{cfg.learning_rate, cfg.momentum, std::nullopt, 0};
  detail::Batcher batches(ds.size(), static_cast<std::size_t>(cfg.batch_size),
                          detail::derive_seed(cfg.seed, detail::kSourceStream));
  TrainerOutput out;
  out.record.paradigm = "source-only";
  const Predictor predict = [&model](const Matrix& X) { return predict_probs(model, X); };
  detail::Clock clock;
  detail::start_record(out.record, probe, predict);

  for (long long t = 1; t <= cfg.iterations; ++t) {
    const auto idx = batches.next();
    const Matrix X = detail::gather(ds.features, idx);
    const auto y = detail::gather(*ds.labels, idx);
    const ForwardPass fp = forward(model, X);
    const LossValue ce = cross_entropy(fp.probs, y);
    const Matrix dz = softmax_backward(fp.probs, cross_entropy_grad(fp.probs, y));
    sgd_step(model, backward(model, X, fp, dz), opt);
    detail::log_step(out.record, {t, ce.value, ce.value, 0.0, 0.0, {}, 0.0}, cfg.iterations, cfg.eval_every, probe,
                     predict, clock);
  }
  out.models.push_back(std::move(model));
  out.weights = {1.0};
  return out;
}

/// min CE(source) + lambda_uda * MMD(features(source), features(target)).
/// Kernel bandwidths use the median heuristic per batch and are treated as
/// constants for differentiation.
inline TrainerOutput train_uda(const Dataset& source, const Dataset& target, const AdaptationConfig& cfg,
                               const AccuracyProbe& probe = {}) {
  cfg.validate();
  source.validate();
  target.validate();
  if (!source.labeled()) throw ParameterError("UDA needs a labeled source dataset");
  if (source.dim() != target.dim()) throw ParameterError("source and target differ in feature dimension");
  if (source.num_classes != target.num_classes) throw ParameterError("source and target differ in class count");

  SourceModel model = init_model(source.dim(), cfg.hidden_dim, source.num_classes, cfg.depth, cfg.seed);
  model.meta.domain_id = source.domain_id;
  model.meta.epochs = cfg.iterations * cfg.batch_size / static_cast<long long>(source.size());

  OptimizerState opt{cfg.learning_rate, cfg.momentum, std::nullopt, 0};
  detail::Batcher src_batches(source.size(), static_cast<std::size_t>(cfg.batch_size),
                              detail::derive_seed(cfg.seed, detail::kSourceStream));
  detail::Batcher tgt_batches(target.size(), static_cast<std::size_t>(cfg.batch_size),
                              detail::derive_seed(cfg.seed, detail::kTargetStream));
  TrainerOutput out;
  out.record.paradigm = "uda";
  const Predictor predict = [&model](const Matrix& X) { return predict_probs(model, X); };
  detail::Clock clock;
  detail::start_record(out.record, probe, predict);

  for (long long t = 1; t <= cfg.iterations; ++t) {
    const auto sidx = src_batches.next();
    const auto tidx = tgt_batches.next();
    const Matrix Xs = detail::gather(source.features, sidx);
    const Matrix Xt = detail::gather(target.features, tidx);
    const auto ys = detail::gather(*source.labels, sidx);

    const ForwardPass fs = forward(model, Xs);
    const ForwardPass ft = forward(model, Xt);
    const LossValue ce = cross_entropy(fs.probs, ys);
    const auto sigma2 = resolve_bandwidths(KernelSpec::median(), fs.features(), ft.features());
    const double mmd = mmd_rbf_fixed(fs.features(), ft.features(), sigma2);
    const MmdGrad mg = mmd_rbf_grad(fs.features(), ft.features(), sigma2);

    const Matrix dzs = softmax_backward(fs.probs, cross_entropy_grad(fs.probs, ys));
    const Matrix dfs = cfg.lambda_uda * mg.dX;
    const Matrix dft = cfg.lambda_uda * mg.dY;
    Gradient g = backward(model, Xs, fs, dzs, &dfs);
    g += backward(model, Xt, ft, Matrix::Zero(Xt.rows(), model.num_classes()), &dft);
    sgd_step(model, g, opt);

    detail::log_step(out.record, {t, ce.value + cfg.lambda_uda * mmd, ce.value, mmd, 0.0, {}, 0.0}, cfg.iterations,
                     cfg.eval_every, probe, predict, clock);
  }
  out.models.push_back(std::move(model));
  out.weights = {1.0};
  return out;
}

struct PseudoLabels {
  std::vector<int> labels;
  std::vector<Matrix> centroids;  // one K x h matrix per model
};

/// Two-round nearest-centroid pseudo labelling in feature space (cosine
/// distance). Round one weights features by the ensemble probabilities,
/// round two uses the hard assignments; empty classes keep their round-one
/// centroid. With several models the per-model distances are combined with
/// the ensemble weights. Ties resolve to the lowest class index.
inline PseudoLabels pseudo_labels(std::span<const SourceModel> models, std::span<const double> weights,
                                  const Matrix& X) {
  const EnsemblePass ep = ensemble_forward(models, weights, X);
  const auto K = static_cast<Eigen::Index>(models.front().num_classes());
  const Eigen::Index n = X.rows();

  PseudoLabels out;
  for (const auto& pass : ep.passes) {
    const Matrix& F = pass.features();
    Matrix c = ep.probs.transpose() * F;
    const Vector mass = ep.probs.colwise().sum().transpose();
    for (Eigen::Index k = 0; k < K; ++k)
      if (mass(k) > 0.0) c.row(k) /= mass(k);
    out.centroids.push_back(std::move(c));
  }

  auto assign = [&]() {
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = 0.0;
      for (Eigen::Index k = 0; k < K; ++k) {
        double d = 0.0;
        for (std::size_t m = 0; m < ep.passes.size(); ++m)
          d += weights[m] * detail::cosine_distance(ep.passes[m].features().row(i), out.centroids[m].row(k));
        if (k == 0 || d < best_d) {
          best_d = d;
          best = static_cast<int>(k);
        }
      }
      labels[static_cast<std::size_t>(i)] = best;
    }
    return labels;
  };

  out.labels = assign();
  for (std::size_t m = 0; m < ep.passes.size(); ++m) {
    const Matrix& F = ep.passes[m].features();
    Matrix sum = Matrix::Zero(K, F.cols());
    Vector count = Vector::Zero(K);
    for (Eigen::Index i = 0; i < n; ++i) {
      sum.row(out.labels[static_cast<std::size_t>(i)]) += F.row(i);
      count(out.labels[static_cast<std::size_t>(i)]) += 1.0;
    }
    for (Eigen::Index k = 0; k < K; ++k)
      if (count(k) > 0.0) out.centroids[m].row(k) = sum.row(k) / count(k);
  }
  out.labels = assign();
  return out;
}

inline PseudoLabels pseudo_labels(const SourceModel& model, const Dataset& target) {
  const double one = 1.0;
  return pseudo_labels(std::span<const SourceModel>(&model, 1), std::span<const double>(&one, 1), target.features);
}

namespace detail {

struct VisibleSources {
  std::span<const Dataset> datasets;
  ExpandedMode mode = ExpandedMode::ce_only;
};

/// Shared loop of the source-free trainers. Classifiers stay frozen; every
/// extractor is updated.
inline TrainerOutput run_source_free(std::vector<SourceModel> models, std::vector<double> weights,
                                     const Dataset& target, const AdaptationConfig& cfg, const AccuracyProbe& probe,
                                     const VisibleSources& visible, const char* paradigm) {
  cfg.validate();
  target.validate();
  check_ensemble(models, weights);
  if (models.front().input_dim() != target.dim()) throw ParameterError("model input dim differs from target dim");
  if (models.front().num_classes() != target.num_classes)
    throw ParameterError("model class count differs from target class count");
  for (const auto& v : visible.datasets) {
    v.validate();
    if (!v.labeled()) throw ParameterError("visible source data must be labeled");
    if (v.dim() != target.dim() || v.num_classes != target.num_classes)
      throw ParameterError("visible source shape differs from target");
  }

  std::vector<OptimizerState> opts(models.size(), OptimizerState{cfg.learning_rate, cfg.momentum, std::nullopt, 0});
  Batcher tgt_batches(target.size(), static_cast<std::size_t>(cfg.batch_size),
                      derive_seed(cfg.seed, kTargetStream));
  std::vector<Batcher> vis_batches;
  for (std::size_t v = 0; v < visible.datasets.size(); ++v)
    vis_batches.emplace_back(visible.datasets[v].size(), static_cast<std::size_t>(cfg.batch_size),
                             derive_seed(cfg.seed, kVisibleStream + v));

  TrainerOutput out;
  out.record.paradigm = paradigm;
  const Predictor predict = [&models, &weights](const Matrix& X) {
    return weighted_ensemble_probs(models, weights, X);
  };
  Clock clock;
  start_record(out.record, probe, predict);

  const bool use_pseudo = cfg.beta_pseudo > 0.0;
  std::vector<int> pseudo;
  const auto n_visible = static_cast<double>(visible.datasets.size());

  for (long long t = 1; t <= cfg.iterations; ++t) {
    if (use_pseudo && (t - 1) % cfg.pseudo_refresh == 0) pseudo = pseudo_labels(models, weights, target.features).labels;

    const auto idx = tgt_batches.next();
    const Matrix X = gather(target.features, idx);
    const EnsemblePass ep = ensemble_forward(models, weights, X);
    const LossValue im = im_loss(ep.probs);
    Matrix dp = im_grad(ep.probs);
    double ce_pseudo = 0.0;
    if (use_pseudo) {
      const auto y = gather(pseudo, idx);
      ce_pseudo = cross_entropy(ep.probs, y).value;
      dp += cfg.beta_pseudo * cross_entropy_grad(ep.probs, y);
    }
    const auto dz = ensemble_logit_grads(ep, weights, dp);
    std::vector<Gradient> grads;
    for (std::size_t m = 0; m < models.size(); ++m) grads.push_back(backward(models[m], X, ep.passes[m], dz[m]));

    double ce_visible = 0.0, mmd_visible = 0.0;
    for (std::size_t v = 0; v < visible.datasets.size(); ++v) {
      const Dataset& src = visible.datasets[v];
      const auto vidx = vis_batches[v].next();
      const Matrix Xv = gather(src.features, vidx);
      const auto yv = gather(*src.labels, vidx);
      const EnsemblePass ev = ensemble_forward(models, weights, Xv);
      ce_visible += cross_entropy(ev.probs, yv).value / n_visible;
      const Matrix dpv = cross_entropy_grad(ev.probs, yv) / n_visible;
      const auto dzv = ensemble_logit_grads(ev, weights, dpv);
      for (std::size_t m = 0; m < models.size(); ++m) {
        if (visible.mode == ExpandedMode::ce_mmd) {
          const Matrix& Fv = ev.passes[m].features();
          const Matrix& Ft = ep.passes[m].features();
          const auto sigma2 = resolve_bandwidths(KernelSpec::median(), Fv, Ft);
          const double scale = cfg.lambda_uda * weights[m] / n_visible;
          mmd_visible += weights[m] * mmd_rbf_fixed(Fv, Ft, sigma2) / n_visible;
          const MmdGrad mg = mmd_rbf_grad(Fv, Ft, sigma2);
          const Matrix dfv = scale * mg.dX;
          const Matrix dft = scale * mg.dY;
          grads[m] += backward(models[m], Xv, ev.passes[m], dzv[m], &dfv);
          grads[m] += backward(models[m], X, ep.passes[m], Matrix::Zero(X.rows(), dz[m].cols()), &dft);
        } else {
          grads[m] += backward(models[m], Xv, ev.passes[m], dzv[m]);
        }
      }
    }

    for (std::size_t m = 0; m < models.size(); ++m) {
      grads[m].zero_classifier();
      sgd_step(models[m], grads[m], opts[m]);
    }
    const double total = im.value + cfg.beta_pseudo * ce_pseudo + ce_visible + cfg.lambda_uda * mmd_visible;
    log_step(out.record, {t, total, ce_pseudo + ce_visible, mmd_visible, im.value, {}, 0.0}, cfg.iterations,
             cfg.eval_every, probe, predict, clock);
  }
  out.models = std::move(models);
  out.weights = std::move(weights);
  return out;
}

}  // namespace detail

/// Source-free adaptation of one model: min IM(probs) + beta * CE(pseudo).
inline TrainerOutput train_sfda(const SourceModel& source_model, const Dataset& target, const AdaptationConfig& cfg,
                                const AccuracyProbe& probe = {}) {
  return detail::run_source_free({source_model}, {1.0}, target, cfg, probe, {}, "sfda");
}

/// Weighted multi-source-free adaptation with frozen model weights.
inline TrainerOutput train_msfda(std::span<const SourceModel> models, std::span<const double> weights,
                                 const Dataset& target, const AdaptationConfig& cfg, const AccuracyProbe& probe = {}) {
  return detail::run_source_free({models.begin(), models.end()}, {weights.begin(), weights.end()}, target, cfg, probe,
                                 {}, "msfda");
}

/// MSFDA plus supervised CE on visible labeled source batches, optionally
/// with MMD alignment between visible-source and target features.
inline TrainerOutput train_expanded_base(std::span<const SourceModel> models, std::span<const double> weights,
                                         const Dataset& target, std::span<const Dataset> visible_sources,
                                         ExpandedMode mode, const AdaptationConfig& cfg,
                                         const AccuracyProbe& probe = {}) {
  if (visible_sources.empty()) throw ParameterError("expanded base needs at least one visible source");
  return detail::run_source_free({models.begin(), models.end()}, {weights.begin(), weights.end()}, target, cfg, probe,
                                 {visible_sources, mode}, "expanded-base");
}

/// Accuracy probe over a labeled evaluation set; the probe keeps its own copy.
inline AccuracyProbe make_probe(const Dataset& labeled_eval) {
  if (!labeled_eval.labeled()) throw ParameterError("evaluation probe needs labels");
  auto eval = std::make_shared<const Dataset>(labeled_eval);
  return [eval](const Predictor& predict) { return accuracy(predict(eval->features), *eval->labels); };
}

}  // namespace shiftlab
