#pragma once

// Losses and statistics composed by the trainers. Every loss comes with its
// derivative with respect to the probability matrix it consumes; chain
// through `softmax_backward` to reach the logits.

#include <algorithm>
#include <optional>
#include <span>
#include <vector>

#include "shiftlab/common.hpp"
#include "shiftlab/nn.hpp"

namespace shiftlab {

struct LossValue {
  double value = 0.0;
  std::optional<Vector> per_sample;
};

namespace detail {

inline void check_probs(const Matrix& probs) {
  if (probs.rows() < 1 || probs.cols() < 1) throw ParameterError("probability matrix is empty");
}

inline void check_labels(const Matrix& probs, std::span<const int> labels) {
  check_probs(probs);
  if (static_cast<Eigen::Index>(labels.size()) != probs.rows())
    throw ParameterError("label count differs from batch size");
  for (int y : labels)
    if (y < 0 || y >= probs.cols()) throw ParameterError("label " + std::to_string(y) + " out of range");
}

}  // namespace detail

/// -mean log(p[label] + eps)
inline LossValue cross_entropy(const Matrix& probs, std::span<const int> labels) {
  detail::check_labels(probs, labels);
  Vector per(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    per(i) = -std::log(probs(i, labels[static_cast<std::size_t>(i)]) + kLogEps);
  return {per.mean(), per};
}

inline Matrix cross_entropy_grad(const Matrix& probs, std::span<const int> labels) {
  detail::check_labels(probs, labels);
  const double n = static_cast<double>(probs.rows());
  Matrix g = Matrix::Zero(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const auto y = labels[static_cast<std::size_t>(i)];
    g(i, y) = -1.0 / (n * (probs(i, y) + kLogEps));
  }
  return g;
}

/// mean over samples of -sum_k p_k log(p_k + eps)
inline LossValue entropy_loss(const Matrix& probs) {
  detail::check_probs(probs);
  Vector per = -(probs.array() * (probs.array() + kLogEps).log()).rowwise().sum().matrix();
  return {per.mean(), per};
}

inline Matrix entropy_grad(const Matrix& probs) {
  detail::check_probs(probs);
  const double n = static_cast<double>(probs.rows());
  const auto p = probs.array();
  return (-((p + kLogEps).log() + p / (p + kLogEps)) / n).matrix();
}

/// sum_k pbar_k log(pbar_k + eps), pbar the batch-mean prediction.
/// Minimised by a uniform marginal.
inline LossValue diversity_loss(const Matrix& probs) {
  detail::check_probs(probs);
  const Eigen::RowVectorXd mean = probs.colwise().mean();
  return {(mean.array() * (mean.array() + kLogEps).log()).sum(), std::nullopt};
}

inline Matrix diversity_grad(const Matrix& probs) {
  detail::check_probs(probs);
  const double n = static_cast<double>(probs.rows());
  const Eigen::RowVectorXd mean = probs.colwise().mean();
  const Eigen::RowVectorXd d =
      (((mean.array() + kLogEps).log() + mean.array() / (mean.array() + kLogEps)) / n).matrix();
  return d.replicate(probs.rows(), 1);
}

/// Information maximisation: entropy + diversity. per_sample carries the
/// entropy term only.
inline LossValue im_loss(const Matrix& probs) {
  auto ent = entropy_loss(probs);
  ent.value += diversity_loss(probs).value;
  return ent;
}

inline Matrix im_grad(const Matrix& probs) { return entropy_grad(probs) + diversity_grad(probs); }

/// Pulls dL/dp back through a row-wise softmax: dz = p * (g - <g, p>).
inline Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs) {
  const Eigen::VectorXd dot = (grad_probs.array() * probs.array()).rowwise().sum();
  return (probs.array() * (grad_probs.colwise() - dot).array()).matrix();
}

// ---------------------------------------------------------------------------
// RBF maximum mean discrepancy (biased V-statistic).

struct KernelSpec {
  enum class Selection { explicit_values, median_heuristic };
  std::vector<double> bandwidths;  // sigma^2 values
  Selection selection = Selection::median_heuristic;

  static KernelSpec fixed(std::vector<double> sigma2) {
    return {std::move(sigma2), Selection::explicit_values};
  }
  static KernelSpec median() { return {{}, Selection::median_heuristic}; }
};

namespace detail {

inline void check_mmd_inputs(const Matrix& X, const Matrix& Y) {
  if (X.rows() < 1 || Y.rows() < 1) throw ParameterError("MMD needs non-empty samples");
  if (X.cols() != Y.cols()) throw ParameterError("MMD samples differ in dimension");
}

inline Matrix squared_distances(const Matrix& A, const Matrix& B) {
  const Vector a2 = A.rowwise().squaredNorm();
  const Vector b2 = B.rowwise().squaredNorm();
  Matrix d = (-2.0 * A * B.transpose()).eval();
  d.colwise() += a2;
  d.rowwise() += b2.transpose();
  return d.cwiseMax(0.0);
}

}  // namespace detail

/// Median squared pairwise distance over the pooled sample (distinct pairs).
/// Falls back to 1 when every pooled point coincides.
inline double median_squared_distance(const Matrix& X, const Matrix& Y) {
  detail::check_mmd_inputs(X, Y);
  Matrix pooled(X.rows() + Y.rows(), X.cols());
  pooled << X, Y;
  const Matrix d = detail::squared_distances(pooled, pooled);
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(pooled.rows() * (pooled.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < pooled.rows(); ++i)
    for (Eigen::Index j = i + 1; j < pooled.rows(); ++j) values.push_back(d(i, j));
  if (values.empty()) return 1.0;
  const auto mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  double median = values[mid];
  if (values.size() % 2 == 0) {
    const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (median + lower);
  }
  return median > 0.0 ? median : 1.0;
}

/// Concrete sigma^2 set: the explicit list, or {m/2, m, 2m} for the pooled
/// median squared distance m.
inline std::vector<double> resolve_bandwidths(const KernelSpec& k, const Matrix& X, const Matrix& Y) {
  if (k.selection == KernelSpec::Selection::explicit_values) {
    if (k.bandwidths.empty()) throw ParameterError("explicit kernel needs at least one bandwidth");
    for (double b : k.bandwidths)
      if (!(b > 0.0) || !std::isfinite(b)) throw ParameterError("kernel bandwidths must be positive");
    return k.bandwidths;
  }
  const double m = median_squared_distance(X, Y);
  return {0.5 * m, m, 2.0 * m};
}

inline double mmd_rbf_fixed(const Matrix& X, const Matrix& Y, const std::vector<double>& sigma2) {
  detail::check_mmd_inputs(X, Y);
  const Matrix dxx = detail::squared_distances(X, X);
  const Matrix dyy = detail::squared_distances(Y, Y);
  const Matrix dxy = detail::squared_distances(X, Y);
  double total = 0.0;
  for (double s2 : sigma2) {
    const double c = -1.0 / (2.0 * s2);
    total += (dxx * c).array().exp().mean() + (dyy * c).array().exp().mean() -
             2.0 * (dxy * c).array().exp().mean();
  }
  return total / static_cast<double>(sigma2.size());
}

inline double mmd_rbf(const Matrix& X, const Matrix& Y, const KernelSpec& kernel) {
  return mmd_rbf_fixed(X, Y, resolve_bandwidths(kernel, X, Y));
}

struct MmdGrad {
  Matrix dX;
  Matrix dY;
};

/// d MMD / d X and d MMD / d Y with the bandwidths held constant.
inline MmdGrad mmd_rbf_grad(const Matrix& X, const Matrix& Y, const std::vector<double>& sigma2) {
  detail::check_mmd_inputs(X, Y);
  const double n = static_cast<double>(X.rows()), m = static_cast<double>(Y.rows());
  const Matrix dxx = detail::squared_distances(X, X);
  const Matrix dyy = detail::squared_distances(Y, Y);
  const Matrix dxy = detail::squared_distances(X, Y);
  MmdGrad g{Matrix::Zero(X.rows(), X.cols()), Matrix::Zero(Y.rows(), Y.cols())};
  for (double s2 : sigma2) {
    const double c = -1.0 / (2.0 * s2);
    // d k(a,b)/da = -k(a,b) (a - b) / s2
    const Matrix kxx = (dxx * c).array().exp();
    const Matrix kyy = (dyy * c).array().exp();
    const Matrix kxy = (dxy * c).array().exp();
    // XX term: (1/n^2) sum_ij k(x_i,x_j), each pair contributes twice.
    const Vector kxx_rows = kxx.rowwise().sum();
    g.dX += (-2.0 / (n * n * s2)) * (kxx_rows.asDiagonal() * X - kxx * X);
    const Vector kyy_rows = kyy.rowwise().sum();
    g.dY += (-2.0 / (m * m * s2)) * (kyy_rows.asDiagonal() * Y - kyy * Y);
    // Cross term: -(2/nm) sum_ij k(x_i,y_j).
    const Vector kxy_rows = kxy.rowwise().sum();
    const Vector kxy_cols = kxy.colwise().sum().transpose();
    g.dX += (2.0 / (n * m * s2)) * (kxy_rows.asDiagonal() * X - kxy * Y);
    g.dY += (2.0 / (n * m * s2)) * (kxy_cols.asDiagonal() * Y - kxy.transpose() * X);
  }
  const double k = static_cast<double>(sigma2.size());
  g.dX /= k;
  g.dY /= k;
  return g;
}

// ---------------------------------------------------------------------------
// Weighted source-model ensembles.

inline void check_simplex(std::span<const double> w, double tol, const char* what) {
  if (w.empty()) throw ParameterError(std::string(what) + " must be non-empty");
  double sum = 0.0;
  for (double v : w) {
    if (!std::isfinite(v) || v < 0.0) throw ParameterError(std::string(what) + " must be finite and non-negative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > tol) throw ParameterError(std::string(what) + " must sum to 1");
}

inline void check_ensemble(std::span<const SourceModel> models, std::span<const double> weights) {
  if (models.empty()) throw ParameterError("ensemble needs at least one model");
  if (models.size() != weights.size()) throw ParameterError("one weight per model required");
  check_simplex(weights, 1e-6, "ensemble weights");
  for (const auto& m : models) {
    if (m.num_classes() != models.front().num_classes())
      throw ParameterError("ensemble models disagree on the number of classes");
    if (m.input_dim() != models.front().input_dim())
      throw ParameterError("ensemble models disagree on the input dimension");
  }
}

struct EnsemblePass {
  std::vector<ForwardPass> passes;
  Matrix probs;
};

inline EnsemblePass ensemble_forward(std::span<const SourceModel> models, std::span<const double> weights,
                                     const Matrix& X) {
  check_ensemble(models, weights);
  EnsemblePass out;
  out.probs = Matrix::Zero(X.rows(), models.front().num_classes());
  for (std::size_t i = 0; i < models.size(); ++i) {
    out.passes.push_back(forward(models[i], X));
    out.probs += weights[i] * out.passes.back().probs;
  }
  return out;
}

/// sum_i w_i softmax(model_i(X))
inline Matrix weighted_ensemble_probs(std::span<const SourceModel> models, std::span<const double> weights,
                                      const Matrix& X) {
  return ensemble_forward(models, weights, X).probs;
}

/// Per-model logit gradients for a loss on the ensemble probabilities.
inline std::vector<Matrix> ensemble_logit_grads(const EnsemblePass& ep, std::span<const double> weights,
                                                const Matrix& grad_probs) {
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < ep.passes.size(); ++i)
    out.push_back(weights[i] * softmax_backward(ep.passes[i].probs, grad_probs));
  return out;
}

/// Minimised objective of weighted multi-source-free adaptation.
inline LossValue msfda_loss(std::span<const SourceModel> models, std::span<const double> weights,
                            const Matrix& X_target) {
  return im_loss(weighted_ensemble_probs(models, weights, X_target));
}

inline int argmax_row(const Matrix& probs, Eigen::Index i) {
  Eigen::Index best = 0;
  probs.row(i).maxCoeff(&best);
  return static_cast<int>(best);
}

inline double accuracy(const Matrix& probs, std::span<const int> labels) {
  detail::check_labels(probs, labels);
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) hits += argmax_row(probs, i) == labels[static_cast<std::size_t>(i)];
  return static_cast<double>(hits) / static_cast<double>(probs.rows());
}

}  // namespace shiftlab
