#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "geoloc/domain.hpp"
#include "geoloc/features.hpp"
#include "geoloc/random.hpp"

namespace geoloc {

// Labeled sparse design matrix.
struct Dataset {
  std::vector<FeatureVector> x;
  std::vector<int> y;
  std::size_t width = 0;
  std::size_t num_classes = 0;

  std::size_t size() const { return x.size(); }
};

// First index of the maximum; ties go to the lowest index.
inline int argmax(std::span<const double> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

inline std::vector<double> softmax(std::span<const double> scores) {
  std::vector<double> p(scores.begin(), scores.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (auto& v : p) {
    v = std::exp(v - mx);
    z += v;
  }
  for (auto& v : p) v /= z;
  return p;
}

inline std::vector<double> class_counts(std::span<const int> y, std::size_t num_classes) {
  std::vector<double> counts(num_classes, 0.0);
  for (int label : y) counts.at(static_cast<std::size_t>(label)) += 1.0;
  return counts;
}

// ---------------------------------------------------------------------------
// Multinomial logistic regression
// ---------------------------------------------------------------------------

struct LogitConfig {
  double l2_lambda = 1.0;
  int max_iters = 1000;
  double tol = 1e-6;
};

// Weights are stored feature-major: w[j * C + c], with j == width the bias.
// Inputs are divided column-wise by `scale` (training max |x|) before use.
struct LogitModel {
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<double> weights;
  std::vector<double> scale;
  LogitConfig config;
  int iterations = 0;
  double final_loss = 0.0;

  std::vector<double> scores(const FeatureVector& x) const {
    const std::size_t c = num_classes;
    std::vector<double> s(weights.begin() + static_cast<std::ptrdiff_t>(width * c),
                          weights.begin() + static_cast<std::ptrdiff_t>((width + 1) * c));
    for (const auto& e : x.entries) {
      if (e.index >= width) continue;
      const double v = e.value / scale[e.index];
      const double* w = &weights[static_cast<std::size_t>(e.index) * c];
      for (std::size_t k = 0; k < c; ++k) s[k] += w[k] * v;
    }
    return s;
  }

  std::vector<double> predict_proba(const FeatureVector& x) const { return softmax(scores(x)); }
  int predict(const FeatureVector& x) const { return argmax(scores(x)); }

  nlohmann::json to_json() const {
    return {{"kind", "logit"},
            {"width", width},
            {"num_classes", num_classes},
            {"l2_lambda", config.l2_lambda},
            {"max_iters", config.max_iters},
            {"tol", config.tol},
            {"iterations", iterations},
            {"final_loss", final_loss},
            {"scale", scale},
            {"weights", weights}};
  }

  static LogitModel from_json(const nlohmann::json& j) {
    LogitModel m;
    m.width = j.at("width").get<std::size_t>();
    m.num_classes = j.at("num_classes").get<std::size_t>();
    m.config = {j.at("l2_lambda").get<double>(), j.at("max_iters").get<int>(),
                j.at("tol").get<double>()};
    m.iterations = j.at("iterations").get<int>();
    m.final_loss = j.at("final_loss").get<double>();
    m.scale = j.at("scale").get<std::vector<double>>();
    m.weights = j.at("weights").get<std::vector<double>>();
    if (m.weights.size() != (m.width + 1) * m.num_classes || m.scale.size() != m.width) {
      throw ParseError("logit model dimensions are inconsistent");
    }
    return m;
  }
};

namespace detail {

// Row-compressed copy of a dataset with every value already divided by its
// column scale.
struct ScaledRows {
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<std::size_t> row_start;
  std::vector<std::uint32_t> col;
  std::vector<double> val;
  std::vector<int> y;

  ScaledRows(const Dataset& data, std::span<const double> scale)
      : width(data.width), num_classes(data.num_classes), y(data.y) {
    row_start.reserve(data.size() + 1);
    row_start.push_back(0);
    for (const auto& x : data.x) {
      for (const auto& e : x.entries) {
        col.push_back(e.index);
        val.push_back(e.value / scale[e.index]);
      }
      row_start.push_back(col.size());
    }
  }

  double objective(std::span<const double> w, double lambda, std::vector<double>* grad) const {
    const std::size_t c = num_classes;
    if (grad) grad->assign(w.size(), 0.0);
    double loss = 0.0;
    std::vector<double> s(c);
    const double* bias = &w[width * c];
    for (std::size_t i = 0; i + 1 < row_start.size(); ++i) {
      std::copy(bias, bias + c, s.begin());
      for (std::size_t p = row_start[i]; p < row_start[i + 1]; ++p) {
        const double v = val[p];
        const double* wr = &w[static_cast<std::size_t>(col[p]) * c];
        for (std::size_t k = 0; k < c; ++k) s[k] += wr[k] * v;
      }
      const double mx = *std::max_element(s.begin(), s.end());
      const auto yi = static_cast<std::size_t>(y[i]);
      const double s_y = s[yi];
      double z = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        s[k] = std::exp(s[k] - mx);
        z += s[k];
      }
      loss += mx + std::log(z) - s_y;
      if (grad) {
        for (std::size_t k = 0; k < c; ++k) s[k] /= z;
        s[yi] -= 1.0;
        auto& g = *grad;
        for (std::size_t p = row_start[i]; p < row_start[i + 1]; ++p) {
          const double v = val[p];
          double* gr = &g[static_cast<std::size_t>(col[p]) * c];
          for (std::size_t k = 0; k < c; ++k) gr[k] += s[k] * v;
        }
        for (std::size_t k = 0; k < c; ++k) g[width * c + k] += s[k];
      }
    }
    double reg = 0.0;
    for (std::size_t j = 0; j < width * c; ++j) reg += w[j] * w[j];
    loss += 0.5 * lambda * reg;
    if (grad) {
      for (std::size_t j = 0; j < width * c; ++j) (*grad)[j] += lambda * w[j];
    }
    return loss;
  }
};

}  // namespace detail

// Penalized multinomial cross-entropy, inputs divided by `scale`:
//   sum_i -log softmax(W x_i + b)[y_i] + (lambda/2) * ||W||^2   (bias unpenalized)
// Weight layout as in LogitModel. Fills `grad` when non-null.
inline double logit_objective(std::span<const double> w, const Dataset& data,
                              std::span<const double> scale, double lambda,
                              std::vector<double>* grad) {
  return detail::ScaledRows(data, scale).objective(w, lambda, grad);
}

inline std::vector<double> column_scale(const Dataset& data) {
  std::vector<double> scale(data.width, 0.0);
  for (const auto& x : data.x) {
    for (const auto& e : x.entries) scale[e.index] = std::max(scale[e.index], std::abs(e.value));
  }
  for (auto& s : scale) {
    if (s == 0.0) s = 1.0;
  }
  return scale;
}

// Full-batch gradient descent from zero with a backtracking Armijo line
// search. The trial step is the Barzilai-Borwein step; sufficient decrease is
// measured against the worst of the last 10 accepted losses, which lets the
// BB steps through without giving up convergence.
inline LogitModel train_logit(const Dataset& data, const LogitConfig& cfg = {}) {
  if (data.num_classes < 1) throw ValidationError("logit needs at least one class");
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.y[i] < 0 || static_cast<std::size_t>(data.y[i]) >= data.num_classes) {
      throw ValidationError("label out of range");
    }
    for (const auto& e : data.x[i].entries) {
      if (e.index >= data.width) throw ValidationError("feature index beyond width");
    }
  }
  LogitModel m;
  m.width = data.width;
  m.num_classes = data.num_classes;
  m.config = cfg;
  m.scale = column_scale(data);
  const detail::ScaledRows rows(data, m.scale);
  const std::size_t n = (data.width + 1) * data.num_classes;
  constexpr std::size_t kMemory = 10;
  std::vector<double> w(n, 0.0), g, w_new(n), g_new;
  double f = rows.objective(w, cfg.l2_lambda, &g);
  std::vector<double> recent{f};
  double step = 1.0 / std::max<double>(1.0, static_cast<double>(data.size()));
  int it = 0;
  for (; it < cfg.max_iters; ++it) {
    double gmax = 0.0, gg = 0.0;
    for (double v : g) {
      gmax = std::max(gmax, std::abs(v));
      gg += v * v;
    }
    if (gmax < cfg.tol) break;
    const double ref = *std::max_element(recent.begin(), recent.end());
    double f_new = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t j = 0; j < n; ++j) w_new[j] = w[j] - step * g[j];
      f_new = rows.objective(w_new, cfg.l2_lambda, &g_new);
      if (std::isfinite(f_new) && f_new <= ref - 1e-4 * step * gg) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!std::isfinite(f_new)) throw Error("logit training produced a non-finite loss");
      break;  // no further decrease representable
    }
    double sy = 0.0, ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double sj = w_new[j] - w[j];
      sy += sj * (g_new[j] - g[j]);
      ss += sj * sj;
    }
    step = (sy > 0.0) ? std::clamp(ss / sy, 1e-12, 1e12) : step * 2.0;
    w.swap(w_new);
    g.swap(g_new);
    f = f_new;
    recent.push_back(f);
    if (recent.size() > kMemory) recent.erase(recent.begin());
  }
  m.weights = std::move(w);
  m.iterations = it;
  m.final_loss = f;
  return m;
}

// ---------------------------------------------------------------------------
// Multinomial Naive Bayes
// ---------------------------------------------------------------------------

// Feature values are treated as counts. Columns with a negative training
// minimum are shifted by -min (stored in `shift`) and clamped at zero.
struct NaiveBayesModel {
  std::size_t width = 0;
  std::size_t num_classes = 0;
  double alpha = 1.0;
  std::vector<double> log_prior;       // C
  std::vector<double> log_likelihood;  // feature-major: [j * C + c]
  std::vector<std::pair<std::uint32_t, double>> shift;  // (column, amount), sorted

  std::vector<double> log_joint(const FeatureVector& x) const {
    const std::size_t c = num_classes;
    std::vector<double> s = log_prior;
    auto add = [&](std::uint32_t j, double v) {
      if (v <= 0.0 || j >= width) return;
      const double* ll = &log_likelihood[static_cast<std::size_t>(j) * c];
      for (std::size_t k = 0; k < c; ++k) s[k] += v * ll[k];
    };
    std::size_t si = 0;
    for (const auto& e : x.entries) {
      while (si < shift.size() && shift[si].first < e.index) {
        add(shift[si].first, shift[si].second);
        ++si;
      }
      if (si < shift.size() && shift[si].first == e.index) {
        add(e.index, e.value + shift[si].second);
        ++si;
      } else {
        add(e.index, e.value);
      }
    }
    for (; si < shift.size(); ++si) add(shift[si].first, shift[si].second);
    return s;
  }

  std::vector<double> predict_proba(const FeatureVector& x) const { return softmax(log_joint(x)); }
  int predict(const FeatureVector& x) const { return argmax(log_joint(x)); }

  nlohmann::json to_json() const {
    auto sh = nlohmann::json::array();
    for (const auto& [j, a] : shift) sh.push_back({j, a});
    auto prior = nlohmann::json::array();
    for (double v : log_prior) prior.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json());
    return {{"kind", "nb"},        {"width", width},
            {"num_classes", num_classes}, {"alpha", alpha},
            {"log_prior", prior},  {"log_likelihood", log_likelihood},
            {"shift", sh}};
  }

  static NaiveBayesModel from_json(const nlohmann::json& j) {
    NaiveBayesModel m;
    m.width = j.at("width").get<std::size_t>();
    m.num_classes = j.at("num_classes").get<std::size_t>();
    m.alpha = j.at("alpha").get<double>();
    for (const auto& v : j.at("log_prior")) {
      m.log_prior.push_back(v.is_null() ? -std::numeric_limits<double>::infinity() : v.get<double>());
    }
    m.log_likelihood = j.at("log_likelihood").get<std::vector<double>>();
    for (const auto& p : j.at("shift")) {
      m.shift.emplace_back(p.at(0).get<std::uint32_t>(), p.at(1).get<double>());
    }
    return m;
  }
};

inline NaiveBayesModel train_nb(const Dataset& data, double alpha = 1.0) {
  const std::size_t c = data.num_classes;
  const std::size_t width = data.width;
  NaiveBayesModel m;
  m.width = width;
  m.num_classes = c;
  m.alpha = alpha;
  std::vector<double> col_min(width, 0.0);
  for (const auto& x : data.x) {
    for (const auto& e : x.entries) col_min[e.index] = std::min(col_min[e.index], e.value);
  }
  for (std::size_t j = 0; j < width; ++j) {
    if (col_min[j] < 0.0) m.shift.emplace_back(static_cast<std::uint32_t>(j), -col_min[j]);
  }
  std::vector<double> counts(width * c, 0.0);
  std::vector<double> totals(c, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto k = static_cast<std::size_t>(data.y[i]);
    // Densify only the shifted columns.
    FeatureVector shifted;
    std::size_t si = 0;
    for (const auto& e : data.x[i].entries) {
      while (si < m.shift.size() && m.shift[si].first < e.index) {
        shifted.push(m.shift[si].first, m.shift[si].second);
        ++si;
      }
      double v = e.value;
      if (si < m.shift.size() && m.shift[si].first == e.index) v += m.shift[si++].second;
      shifted.push(e.index, v);
    }
    for (; si < m.shift.size(); ++si) shifted.push(m.shift[si].first, m.shift[si].second);
    for (const auto& e : shifted.entries) {
      const double v = std::max(0.0, e.value);
      counts[static_cast<std::size_t>(e.index) * c + k] += v;
      totals[k] += v;
    }
  }
  m.log_likelihood.assign(width * c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    const double denom = totals[k] + alpha * static_cast<double>(width);
    for (std::size_t j = 0; j < width; ++j) {
      m.log_likelihood[j * c + k] = std::log((counts[j * c + k] + alpha) / denom);
    }
  }
  const auto prior = class_counts(data.y, c);
  const double n = static_cast<double>(data.size());
  m.log_prior.resize(c);
  for (std::size_t k = 0; k < c; ++k) m.log_prior[k] = std::log(prior[k] / n);
  return m;
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

enum class BaselineKind { majority, random };

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct BaselineModel {
  BaselineKind kind = BaselineKind::majority;
  std::size_t num_classes = 0;
  int majority_class = 0;
  std::uint64_t seed = 42;

  // Random predictions depend only on (seed, key) so they are reproducible
  // regardless of call order.
  int predict(std::string_view key) const {
    if (kind == BaselineKind::majority) return majority_class;
    Rng rng(derive_seed(seed, fnv1a(key)));
    return static_cast<int>(rng.index(num_classes));
  }

  nlohmann::json to_json() const {
    return {{"kind", kind == BaselineKind::majority ? "majority" : "random"},
            {"num_classes", num_classes},
            {"majority_class", majority_class},
            {"seed", seed}};
  }
};

inline BaselineModel train_baseline(BaselineKind kind, std::span<const int> labels,
                                    std::size_t num_classes, std::uint64_t seed = 42) {
  BaselineModel m;
  m.kind = kind;
  m.num_classes = num_classes;
  m.seed = seed;
  const auto counts = class_counts(labels, num_classes);
  m.majority_class = argmax(counts);
  return m;
}

// ---------------------------------------------------------------------------
// Either linear model behind one interface
// ---------------------------------------------------------------------------

enum class LinearKind { logit, nb };

struct LinearModel {
  std::variant<LogitModel, NaiveBayesModel> model;

  std::vector<double> predict_proba(const FeatureVector& x) const {
    return std::visit([&](const auto& m) { return m.predict_proba(x); }, model);
  }
  int predict(const FeatureVector& x) const {
    return std::visit([&](const auto& m) { return m.predict(x); }, model);
  }
  nlohmann::json to_json() const {
    return std::visit([](const auto& m) { return m.to_json(); }, model);
  }
  static LinearModel from_json(const nlohmann::json& j) {
    if (j.at("kind") == "logit") return {LogitModel::from_json(j)};
    if (j.at("kind") == "nb") return {NaiveBayesModel::from_json(j)};
    throw ParseError("unknown linear model kind");
  }
};

struct LinearConfig {
  LinearKind kind = LinearKind::logit;
  LogitConfig logit;
  double nb_alpha = 1.0;
};

inline LinearModel train_linear(const Dataset& data, const LinearConfig& cfg) {
  if (cfg.kind == LinearKind::logit) return {train_logit(data, cfg.logit)};
  return {train_nb(data, cfg.nb_alpha)};
}

}  // namespace geoloc
