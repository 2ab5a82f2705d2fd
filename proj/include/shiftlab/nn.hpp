#pragma once

// Feature-extractor MLP + linear classifier with exact backprop and a
// momentum SGD optimizer.

#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "shiftlab/common.hpp"

namespace shiftlab {

enum class Activation { identity, tanh };

inline std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "identity"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  throw FormatError("unknown activation '" + s + "'");
}

struct AffineLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::identity;

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

struct ModelMeta {
  std::string domain_id = "unknown";
  std::uint64_t seed = 0;
  long long epochs = 0;
  std::string architecture;
};

struct SourceModel {
  std::vector<AffineLayer> extractor;
  AffineLayer classifier;
  ModelMeta meta;

  Eigen::Index input_dim() const { return extractor.front().in_dim(); }
  Eigen::Index feature_dim() const { return extractor.back().out_dim(); }
  int num_classes() const { return static_cast<int>(classifier.out_dim()); }

  void validate() const {
    if (extractor.empty()) throw ParameterError("model needs at least one extractor layer");
    auto check = [](const AffineLayer& l) {
      if (l.weight.rows() < 1 || l.weight.cols() < 1 || l.bias.size() != l.weight.rows())
        throw ParameterError("layer bias does not match weight rows");
      if (!l.weight.allFinite() || !l.bias.allFinite()) throw ParameterError("model parameters must be finite");
    };
    for (std::size_t i = 0; i < extractor.size(); ++i) {
      check(extractor[i]);
      if (i > 0 && extractor[i].in_dim() != extractor[i - 1].out_dim())
        throw ParameterError("extractor layer " + std::to_string(i) + " does not compose with its predecessor");
    }
    check(classifier);
    if (classifier.in_dim() != feature_dim())
      throw ParameterError("classifier input dim differs from extractor output dim");
  }
};

inline bool operator==(const AffineLayer& a, const AffineLayer& b) {
  return a.activation == b.activation && a.weight.rows() == b.weight.rows() &&
         a.weight.cols() == b.weight.cols() && a.weight == b.weight && a.bias == b.bias;
}

inline bool operator==(const ModelMeta& a, const ModelMeta& b) {
  return a.domain_id == b.domain_id && a.seed == b.seed && a.epochs == b.epochs &&
         a.architecture == b.architecture;
}

inline bool operator==(const SourceModel& a, const SourceModel& b) {
  return a.extractor == b.extractor && a.classifier == b.classifier && a.meta == b.meta;
}

struct LayerGrad {
  Matrix weight;
  Vector bias;
};

/// Shape-congruent with the SourceModel it was computed for.
struct Gradient {
  std::vector<LayerGrad> extractor;
  LayerGrad classifier;

  static Gradient zeros_like(const SourceModel& m) {
    Gradient g;
    for (const auto& l : m.extractor)
      g.extractor.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    g.classifier = {Matrix::Zero(m.classifier.weight.rows(), m.classifier.weight.cols()),
                    Vector::Zero(m.classifier.bias.size())};
    return g;
  }

  Gradient& operator+=(const Gradient& o) {
    for (std::size_t i = 0; i < extractor.size(); ++i) {
      extractor[i].weight += o.extractor[i].weight;
      extractor[i].bias += o.extractor[i].bias;
    }
    classifier.weight += o.classifier.weight;
    classifier.bias += o.classifier.bias;
    return *this;
  }

  bool all_finite() const {
    for (const auto& l : extractor)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return classifier.weight.allFinite() && classifier.bias.allFinite();
  }

  double max_abs() const {
    double m = 0.0;
    auto upd = [&m](const LayerGrad& l) {
      if (l.weight.size()) m = std::max(m, l.weight.cwiseAbs().maxCoeff());
      if (l.bias.size()) m = std::max(m, l.bias.cwiseAbs().maxCoeff());
    };
    for (const auto& l : extractor) upd(l);
    upd(classifier);
    return m;
  }

  void zero_classifier() {
    classifier.weight.setZero();
    classifier.bias.setZero();
  }
};

struct OptimizerState {
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::optional<Gradient> velocity;  // lazily shaped on first step
  long long step = 0;
};

inline std::string architecture_string(Eigen::Index d, Eigen::Index h, int K, int depth) {
  std::ostringstream os;
  os << "mlp-tanh:" << d;
  for (int i = 0; i < depth; ++i) os << '-' << h;
  os << ':' << K;
  return os.str();
}

/// Weights ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
inline SourceModel init_model(int d, int h, int K, int depth, std::uint64_t seed) {
  if (d < 1 || h < 1 || K < 1 || depth < 1) throw ParameterError("model dimensions must be positive");
  std::mt19937_64 rng(detail::derive_seed(seed, 0x11));
  auto make = [&rng](int out, int in, Activation act) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    AffineLayer l{Matrix(out, in), Vector::Zero(out), act};
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) l.weight(i, j) = u(rng);
    return l;
  };
  SourceModel m;
  for (int i = 0; i < depth; ++i) m.extractor.push_back(make(h, i == 0 ? d : h, Activation::tanh));
  m.classifier = make(K, h, Activation::identity);
  m.meta.seed = seed;
  m.meta.architecture = architecture_string(d, h, K, depth);
  return m;
}

/// Row-wise softmax with max subtraction.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

/// Inputs and outputs of every extractor layer, kept for backprop.
struct ForwardPass {
  std::vector<Matrix> layer_outputs;  // post-activation, one per extractor layer
  Matrix logits;
  Matrix probs;

  const Matrix& features() const { return layer_outputs.back(); }
};

namespace detail {
inline Matrix affine(const AffineLayer& l, const Matrix& X) {
  Matrix out = X * l.weight.transpose();
  out.rowwise() += l.bias.transpose();
  if (l.activation == Activation::tanh) out = out.array().tanh();
  return out;
}
}  // namespace detail

inline ForwardPass forward(const SourceModel& model, const Matrix& X) {
  if (X.cols() != model.input_dim())
    throw ParameterError("batch has " + std::to_string(X.cols()) + " columns, model expects " +
                         std::to_string(model.input_dim()));
  ForwardPass fp;
  const Matrix* in = &X;
  for (const auto& layer : model.extractor) {
    fp.layer_outputs.push_back(detail::affine(layer, *in));
    in = &fp.layer_outputs.back();
  }
  fp.logits = detail::affine(model.classifier, fp.features());
  fp.probs = softmax_rows(fp.logits);
  return fp;
}

inline Matrix predict_probs(const SourceModel& model, const Matrix& X) { return forward(model, X).probs; }

/// Exact gradient of a loss whose upstream derivatives are given on the
/// logits and, optionally, directly on the extracted features.
inline Gradient backward(const SourceModel& model, const Matrix& X, const ForwardPass& fp,
                         const Matrix& grad_logits, const Matrix* grad_features = nullptr) {
  if (grad_logits.rows() != X.rows() || grad_logits.cols() != model.num_classes())
    throw ParameterError("logit gradient shape does not match batch x K");
  if (grad_features && (grad_features->rows() != X.rows() || grad_features->cols() != model.feature_dim()))
    throw ParameterError("feature gradient shape does not match batch x h");

  Gradient g;
  g.extractor.resize(model.extractor.size());
  g.classifier.weight = grad_logits.transpose() * fp.features();
  g.classifier.bias = grad_logits.colwise().sum().transpose();

  Matrix upstream = grad_logits * model.classifier.weight;
  if (grad_features) upstream += *grad_features;

  for (std::size_t li = model.extractor.size(); li-- > 0;) {
    const auto& layer = model.extractor[li];
    const Matrix& out = fp.layer_outputs[li];
    Matrix pre = layer.activation == Activation::tanh
                     ? Matrix(upstream.array() * (1.0 - out.array().square()))
                     : upstream;
    const Matrix& in = li == 0 ? X : fp.layer_outputs[li - 1];
    g.extractor[li].weight = pre.transpose() * in;
    g.extractor[li].bias = pre.colwise().sum().transpose();
    if (li > 0) upstream = pre * layer.weight;
  }
  return g;
}

inline Gradient backward(const SourceModel& model, const Matrix& X, const Matrix& grad_logits) {
  return backward(model, X, forward(model, X), grad_logits);
}

/// velocity <- momentum * velocity + grad; params <- params - lr * velocity.
/// The step is all-or-nothing: a non-finite gradient or a parameter that
/// would overflow leaves model and state untouched.
inline void sgd_step(SourceModel& model, const Gradient& grad, OptimizerState& state) {
  if (grad.extractor.size() != model.extractor.size())
    throw ParameterError("gradient does not match model depth");
  if (!grad.all_finite()) throw NumericError("non-finite gradient entry; step aborted");
  Gradient v = state.velocity ? *state.velocity : Gradient::zeros_like(model);
  SourceModel next = model;

  auto apply = [&](AffineLayer& p, LayerGrad& vel, const LayerGrad& gr) {
    if (gr.weight.rows() != p.weight.rows() || gr.weight.cols() != p.weight.cols() ||
        gr.bias.size() != p.bias.size())
      throw ParameterError("gradient shape does not match model");
    vel.weight = state.momentum * vel.weight + gr.weight;
    vel.bias = state.momentum * vel.bias + gr.bias;
    p.weight -= state.learning_rate * vel.weight;
    p.bias -= state.learning_rate * vel.bias;
    if (!p.weight.allFinite() || !p.bias.allFinite())
      throw NumericError("parameter overflow; step aborted (learning rate too large?)");
  };
  for (std::size_t i = 0; i < next.extractor.size(); ++i) apply(next.extractor[i], v.extractor[i], grad.extractor[i]);
  apply(next.classifier, v.classifier, grad.classifier);
  model = std::move(next);
  state.velocity = std::move(v);
  ++state.step;
}

// ---------------------------------------------------------------------------
// Model file:
//   #shiftlab-model v1
//   domain=<id> seed=<s> epochs=<e> arch=<a>
//   layer <rows> <cols> <activation>     (repeated; the last block is the classifier)
//   <rows*cols weight values, row-major, then rows bias values, one per line>

inline void write_model(std::ostream& os, const SourceModel& m) {
  m.validate();
  os << "#shiftlab-model v1\n";
  os << "domain=" << m.meta.domain_id << " seed=" << m.meta.seed << " epochs=" << m.meta.epochs
     << " arch=" << m.meta.architecture << '\n';
  auto block = [&os](const AffineLayer& l) {
    os << "layer " << l.weight.rows() << ' ' << l.weight.cols() << ' ' << to_string(l.activation) << '\n';
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) os << detail::format_double(l.weight(i, j)) << '\n';
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) os << detail::format_double(l.bias(i)) << '\n';
  };
  for (const auto& l : m.extractor) block(l);
  block(m.classifier);
}

inline SourceModel read_model(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("empty model file");
  if (line.rfind("#shiftlab-model", 0) != 0) throw FormatError("not a shiftlab model file");
  if (line != "#shiftlab-model v1") throw FormatError("model version mismatch: '" + line + "'");

  SourceModel m;
  if (!std::getline(is, line)) throw FormatError("model metadata line missing");
  {
    std::istringstream meta(line);
    for (std::string field; meta >> field;) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) throw FormatError("malformed metadata field '" + field + "'");
      const auto key = field.substr(0, eq), value = field.substr(eq + 1);
      if (key == "domain") m.meta.domain_id = value;
      else if (key == "seed") m.meta.seed = detail::parse_uint64(value);
      else if (key == "epochs") m.meta.epochs = detail::parse_int(value);
      else if (key == "arch") m.meta.architecture = value;
      else throw FormatError("unknown metadata key '" + key + "'");
    }
  }

  std::vector<AffineLayer> layers;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream hdr(line);
    std::string tag, act;
    long long rows = 0, cols = 0;
    if (!(hdr >> tag >> rows >> cols >> act) || tag != "layer" || rows < 1 || cols < 1)
      throw FormatError("malformed layer header '" + line + "'");
    AffineLayer l{Matrix(rows, cols), Vector(rows), parse_activation(act)};
    auto next = [&is, &line]() {
      if (!std::getline(is, line)) throw FormatError("model file truncated inside a layer block");
      return detail::parse_double(line);
    };
    for (long long i = 0; i < rows; ++i)
      for (long long j = 0; j < cols; ++j) l.weight(i, j) = next();
    for (long long i = 0; i < rows; ++i) l.bias(i) = next();
    layers.push_back(std::move(l));
  }
  if (layers.size() < 2) throw FormatError("model needs at least one extractor layer and a classifier");
  m.classifier = std::move(layers.back());
  layers.pop_back();
  m.extractor = std::move(layers);
  try {
    m.validate();
  } catch (const ParameterError& e) {
    throw FormatError(std::string("inconsistent model file: ") + e.what());
  }
  return m;
}

inline void save_model(const SourceModel& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_model(os, m);
  if (!os) throw IoError("write failed for '" + path + "'");
}

inline SourceModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return read_model(is);
}

}  // namespace shiftlab
