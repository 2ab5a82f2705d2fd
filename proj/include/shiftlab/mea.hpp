#pragma once

// Proxy-based source-model weight estimation:
//   w_s  proportional to each model's accuracy on the *other* visible source domains
//   w_t  proportional to each model's mean max-softmax confidence on the target
//   w    = w_t + lambda * w_s, normalised by (1 + lambda) before use as ensemble weights.

#include <algorithm>
#include <fstream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "shiftlab/datagen.hpp"
#include "shiftlab/nn.hpp"
#include "shiftlab/objectives.hpp"

namespace shiftlab {

enum class Visibility { data_visible, model_only };

struct SourceParty {
  std::string domain_id;
  Visibility visibility = Visibility::model_only;
};

/// Entry i describes the party that contributed models[i].
struct VisibilitySpec {
  std::vector<SourceParty> parties;
};

struct AccuracyEntry {
  std::size_t model_index;
  std::string model_domain;
  std::string proxy_domain;
  double accuracy;
};

struct ConfidenceEntry {
  std::size_t model_index;
  std::string model_domain;
  double confidence;
};

struct Provenance {
  std::vector<AccuracyEntry> accuracies;
  std::vector<ConfidenceEntry> confidences;
};

struct WeightEstimate {
  std::optional<std::vector<double>> w_s;  // absent in the single-source fallback
  std::vector<double> w_t;
  double lambda = 1.0;
  std::vector<double> w_raw;
  std::vector<double> w_final;
  bool fallback = false;
  Provenance provenance;
};

namespace detail {

inline std::vector<double> normalise(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  std::vector<double> out(v.size());
  if (sum <= 0.0) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(v.size()));
    return out;
  }
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / sum;
  return out;
}

inline double model_accuracy(const SourceModel& model, const Dataset& ds) {
  return accuracy(predict_probs(model, ds.features), *ds.labels);
}

}  // namespace detail

/// Macro average of per-domain accuracy. Scoring a model on its own
/// training domain is an ExclusionViolation.
inline double proxy_accuracy(const SourceModel& model, std::span<const Dataset> proxies,
                             std::vector<AccuracyEntry>* log = nullptr, std::size_t model_index = 0) {
  if (proxies.empty()) throw ParameterError("proxy accuracy needs at least one proxy domain");
  for (const auto& p : proxies)
    if (p.domain_id == model.meta.domain_id)
      throw ExclusionViolation("model trained on '" + model.meta.domain_id + "' cannot be scored on its own data");
  double sum = 0.0;
  for (const auto& p : proxies) {
    if (!p.labeled()) throw ParameterError("proxy domain '" + p.domain_id + "' is unlabeled");
    const double acc = detail::model_accuracy(model, p);
    if (log) log->push_back({model_index, model.meta.domain_id, p.domain_id, acc});
    sum += acc;
  }
  return sum / static_cast<double>(proxies.size());
}

struct ProxyWeights {
  std::optional<std::vector<double>> w_s;
  std::vector<double> accuracy;  // A(w_i); empty in the fallback
  std::vector<AccuracyEntry> log;
};

/// w_s = A / sum(A) with A the proxy accuracy over every data-visible
/// domain other than the model's own. Absent when some model would be left
/// without a proxy.
inline ProxyWeights proxy_weights(std::span<const SourceModel> models, const VisibilitySpec& visibility,
                                  std::span<const Dataset> datasets) {
  if (models.empty()) throw ParameterError("at least one source model required");
  if (visibility.parties.size() != models.size())
    throw ParameterError("visibility spec lists " + std::to_string(visibility.parties.size()) + " parties for " +
                         std::to_string(models.size()) + " models");

  std::vector<const Dataset*> visible;
  for (const auto& party : visibility.parties) {
    if (party.visibility != Visibility::data_visible) continue;
    auto it = std::find_if(datasets.begin(), datasets.end(),
                           [&](const Dataset& d) { return d.domain_id == party.domain_id; });
    if (it == datasets.end()) throw ParameterError("data-visible domain '" + party.domain_id + "' has no dataset");
    visible.push_back(&*it);
  }
  for (const auto& d : datasets) {
    const bool listed = std::any_of(visibility.parties.begin(), visibility.parties.end(), [&](const SourceParty& p) {
      return p.visibility == Visibility::data_visible && p.domain_id == d.domain_id;
    });
    if (!listed) throw ParameterError("dataset '" + d.domain_id + "' is not a data-visible party");
  }

  std::vector<std::vector<Dataset>> proxies(models.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    for (const Dataset* d : visible)
      if (d->domain_id != visibility.parties[i].domain_id && d->domain_id != models[i].meta.domain_id)
        proxies[i].push_back(*d);
    if (proxies[i].empty()) return {};
  }

  ProxyWeights out;
  for (std::size_t i = 0; i < models.size(); ++i) out.accuracy.push_back(proxy_accuracy(models[i], proxies[i], &out.log, i));
  out.w_s = detail::normalise(out.accuracy);
  return out;
}

struct ConfidenceWeights {
  std::vector<double> w_t;
  std::vector<double> confidence;  // C(w_i)
};

/// w_t = C / sum(C), C the mean over target samples of the max softmax probability.
inline ConfidenceWeights confidence_weights(std::span<const SourceModel> models, const Dataset& target) {
  if (models.empty()) throw ParameterError("at least one source model required");
  if (target.size() == 0) throw ParameterError("confidence weights need a non-empty target");
  ConfidenceWeights out;
  for (const auto& m : models) out.confidence.push_back(predict_probs(m, target.features).rowwise().maxCoeff().mean());
  out.w_t = detail::normalise(out.confidence);
  return out;
}

inline WeightEstimate combine_weights(const std::vector<double>& w_t, const std::optional<std::vector<double>>& w_s,
                                      double lambda) {
  if (!std::isfinite(lambda) || lambda < 0.0) throw ParameterError("lambda must be finite and >= 0");
  if (w_t.empty()) throw ParameterError("confidence weights are empty");
  if (w_s && w_s->size() != w_t.size()) throw ParameterError("w_s and w_t differ in length");

  WeightEstimate est;
  est.w_t = w_t;
  est.w_s = w_s;
  est.lambda = lambda;
  est.fallback = !w_s.has_value();
  if (est.fallback) {
    est.w_raw = w_t;
    est.w_final = w_t;
    return est;
  }
  est.w_raw.resize(w_t.size());
  est.w_final.resize(w_t.size());
  for (std::size_t i = 0; i < w_t.size(); ++i) {
    est.w_raw[i] = w_t[i] + lambda * (*w_s)[i];
    est.w_final[i] = est.w_raw[i] / (1.0 + lambda);
  }
  return est;
}

/// Full estimation; per-domain accuracies and per-model confidences are
/// recorded in the returned provenance.
inline WeightEstimate estimate(std::span<const SourceModel> models, const VisibilitySpec& visibility,
                               std::span<const Dataset> datasets, const Dataset& target, double lambda) {
  auto proxy = proxy_weights(models, visibility, datasets);
  auto conf = confidence_weights(models, target);
  WeightEstimate est = combine_weights(conf.w_t, proxy.w_s, lambda);
  est.provenance.accuracies = std::move(proxy.log);
  for (std::size_t i = 0; i < models.size(); ++i)
    est.provenance.confidences.push_back({i, models[i].meta.domain_id, conf.confidence[i]});
  return est;
}

// ---------------------------------------------------------------------------
// Weight file:
//   #shiftlab-weights v1
//   lambda=<l>
//   fallback=<0|1>
//   w_s=<comma list>|absent
//   w_t=..., w_raw=..., w_final=...

inline void write_weights(std::ostream& os, const WeightEstimate& est) {
  os << "#shiftlab-weights v1\n";
  os << "lambda=" << detail::format_double(est.lambda) << '\n';
  os << "fallback=" << (est.fallback ? 1 : 0) << '\n';
  os << "w_s=" << (est.w_s ? detail::join(*est.w_s) : std::string("absent")) << '\n';
  os << "w_t=" << detail::join(est.w_t) << '\n';
  os << "w_raw=" << detail::join(est.w_raw) << '\n';
  os << "w_final=" << detail::join(est.w_final) << '\n';
}

inline WeightEstimate read_weights(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "#shiftlab-weights v1") throw FormatError("not a shiftlab v1 weight file");
  auto list = [](const std::string& v) {
    std::vector<double> out;
    for (const auto& f : detail::split(v, ',')) out.push_back(detail::parse_double(f));
    return out;
  };
  WeightEstimate est;
  bool seen_final = false, seen_t = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("malformed weight line '" + line + "'");
    const auto key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "lambda") est.lambda = detail::parse_double(value);
    else if (key == "fallback") est.fallback = detail::parse_int(value) != 0;
    else if (key == "w_s") { if (value != "absent") est.w_s = list(value); }
    else if (key == "w_t") { est.w_t = list(value); seen_t = true; }
    else if (key == "w_raw") est.w_raw = list(value);
    else if (key == "w_final") { est.w_final = list(value); seen_final = true; }
    else throw FormatError("unknown weight key '" + key + "'");
  }
  if (!seen_final || !seen_t) throw FormatError("weight file lacks w_t or w_final");
  return est;
}

inline void save_weights(const WeightEstimate& est, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_weights(os, est);
}

inline WeightEstimate load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return read_weights(is);
}

// Provenance log:
//   #shiftlab-provenance v1
//   accuracy model=<i> model_domain=<id> proxy=<id> value=<a>
//   confidence model=<i> model_domain=<id> value=<c>
//   weights lambda=<l> fallback=<0|1> w_s=<...> w_t=<...> w_raw=<...> w_final=<...>
inline void write_provenance(std::ostream& os, const WeightEstimate& est) {
  os << "#shiftlab-provenance v1\n";
  for (const auto& a : est.provenance.accuracies)
    os << "accuracy model=" << a.model_index << " model_domain=" << a.model_domain << " proxy=" << a.proxy_domain
       << " value=" << detail::format_double(a.accuracy) << '\n';
  for (const auto& c : est.provenance.confidences)
    os << "confidence model=" << c.model_index << " model_domain=" << c.model_domain
       << " value=" << detail::format_double(c.confidence) << '\n';
  os << "weights lambda=" << detail::format_double(est.lambda) << " fallback=" << (est.fallback ? 1 : 0)
     << " w_s=" << (est.w_s ? detail::join(*est.w_s) : std::string("absent")) << " w_t=" << detail::join(est.w_t)
     << " w_raw=" << detail::join(est.w_raw) << " w_final=" << detail::join(est.w_final) << '\n';
}

/// True when no model was scored on its own training domain.
inline bool provenance_respects_exclusion(const WeightEstimate& est, const VisibilitySpec& visibility) {
  for (const auto& a : est.provenance.accuracies) {
    if (a.proxy_domain == a.model_domain) return false;
    if (a.model_index < visibility.parties.size() && a.proxy_domain == visibility.parties[a.model_index].domain_id)
      return false;
  }
  return true;
}

}  // namespace shiftlab
