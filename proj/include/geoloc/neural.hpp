#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "geoloc/classifiers.hpp"
#include "geoloc/domain.hpp"
#include "geoloc/features.hpp"
#include "geoloc/random.hpp"

namespace geoloc {

// Row-major n x dim matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
};

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDefaultEmbeddingDim = 200;

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim), zero_(dim, 0.0) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }

  // Returns true if the token replaced an existing entry.
  bool set(const std::string& token, std::vector<double> v) {
    if (v.size() != dim_) throw ValidationError("embedding dimension mismatch for '" + token + "'");
    auto [it, inserted] = vectors_.insert_or_assign(token, std::move(v));
    (void)it;
    return !inserted;
  }

  // Out-of-vocabulary tokens map to the zero vector.
  std::span<const double> lookup(const std::string& token) const {
    auto it = vectors_.find(token);
    return it == vectors_.end() ? std::span<const double>(zero_) : std::span<const double>(it->second);
  }

  bool contains(const std::string& token) const { return vectors_.count(token) > 0; }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write file: " + path);
    std::vector<std::string> keys;
    keys.reserve(vectors_.size());
    for (const auto& [k, v] : vectors_) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    out.precision(17);
    for (const auto& k : keys) {
      out << k;
      for (double x : vectors_.at(k)) out << ' ' << x;
      out << '\n';
    }
  }

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::vector<double>> vectors_;
  std::vector<double> zero_;
};

struct EmbeddingLoadReport {
  std::size_t duplicates = 0;
};

// Text format: one line per word, the token followed by dim space-separated
// decimals. The first non-empty line fixes the dimension.
inline EmbeddingTable load_embeddings(const std::string& path,
                                      EmbeddingLoadReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open file: " + path);
  std::string line;
  std::size_t lineno = 0;
  EmbeddingTable table;
  bool have_dim = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) continue;
    std::vector<double> v;
    std::string field;
    while (ls >> field) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(field, &used));
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": bad number '" + field + "'");
      }
    }
    if (!have_dim) {
      if (v.empty()) throw ParseError(path + ":" + std::to_string(lineno) + ": no vector values");
      table = EmbeddingTable(v.size());
      have_dim = true;
    }
    if (v.size() != table.dim()) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": dimension " +
                       std::to_string(v.size()) + " != " + std::to_string(table.dim()));
    }
    if (table.set(token, std::move(v)) && report) ++report->duplicates;
  }
  return table;
}

// One row per token; zero rows for OOV tokens.
inline Matrix token_matrix(std::span<const std::string> tokens, const EmbeddingTable& emb) {
  Matrix m(tokens.size(), emb.dim());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto v = emb.lookup(tokens[i]);
    std::copy(v.begin(), v.end(), m.row(i).begin());
  }
  return m;
}

// Mean of the token vectors; the zero vector for an empty message.
inline std::vector<double> mean_embedding(std::span<const std::string> tokens,
                                          const EmbeddingTable& emb) {
  std::vector<double> out(emb.dim(), 0.0);
  if (tokens.empty()) return out;
  for (const auto& t : tokens) {
    auto v = emb.lookup(t);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += v[j];
  }
  for (auto& x : out) x /= static_cast<double>(tokens.size());
  return out;
}

enum class MessageOrdering { random, distance, lm_score };

inline MessageOrdering ordering_from_name(std::string_view s) {
  if (s == "random") return MessageOrdering::random;
  if (s == "distance") return MessageOrdering::distance;
  if (s == "lm" || s == "lm_score") return MessageOrdering::lm_score;
  throw ValidationError("unknown message ordering: " + std::string(s));
}

inline const char* ordering_name(MessageOrdering o) {
  switch (o) {
    case MessageOrdering::random: return "random";
    case MessageOrdering::distance: return "distance";
    case MessageOrdering::lm_score: return "lm";
  }
  return "?";
}

// Row order of a site's messages for the joint CNN input.
//  distance: ascending distance, ties in record order.
//  lm_score: each message goes to its best-scoring class LM; groups appear in
//            a seeded random order, descending score within a group.
//  random:   seeded permutation.
inline std::vector<std::size_t> order_messages(const SiteRecord& r, MessageOrdering ordering,
                                               std::uint64_t seed,
                                               const ClassLanguageModels* lms = nullptr) {
  std::vector<std::size_t> idx(r.messages.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(derive_seed(seed, fnv1a(r.id)));
  switch (ordering) {
    case MessageOrdering::distance:
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return r.messages[a].distance_m < r.messages[b].distance_m;
      });
      break;
    case MessageOrdering::random:
      rng.shuffle(idx);
      break;
    case MessageOrdering::lm_score: {
      if (!lms) throw ValidationError("lm ordering needs class language models");
      const std::size_t c = lms->num_classes();
      std::vector<int> group(idx.size());
      std::vector<double> best(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto s = lm_features(tokenize(r.messages[i].message.text), *lms);
        group[i] = argmax(s);
        best[i] = s[static_cast<std::size_t>(group[i])];
      }
      std::vector<std::size_t> group_rank(c);
      for (std::size_t k = 0; k < c; ++k) group_rank[k] = k;
      rng.shuffle(group_rank);
      std::vector<std::size_t> pos_of(c);
      for (std::size_t k = 0; k < c; ++k) pos_of[group_rank[k]] = k;
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const auto ga = pos_of[static_cast<std::size_t>(group[a])];
        const auto gb = pos_of[static_cast<std::size_t>(group[b])];
        if (ga != gb) return ga < gb;
        return best[a] > best[b];
      });
      break;
    }
  }
  return idx;
}

// One row per message: the mean word embedding, rows in the chosen order.
inline Matrix joint_input(const SiteRecord& r, const EmbeddingTable& emb, MessageOrdering ordering,
                          std::uint64_t seed, const ClassLanguageModels* lms = nullptr) {
  const auto order = order_messages(r, ordering, seed, lms);
  Matrix m(order.size(), emb.dim());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto v = mean_embedding(tokenize(r.messages[order[i]].message.text), emb);
    std::copy(v.begin(), v.end(), m.row(i).begin());
  }
  return m;
}

// ---------------------------------------------------------------------------
// CNN
// ---------------------------------------------------------------------------

struct CnnConfig {
  std::vector<std::size_t> widths = {3, 4, 5};
  std::size_t filters_per_width = 100;
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  int epochs = 10;
  double init_range = 0.05;
  std::uint64_t seed = 42;
};

// Convolution over embedding rows (filters span the full embedding width),
// ReLU, max-over-time pooling, then an affine softmax layer.
//
// Parameters live in one flat vector. For width group g: F filter blocks of
// widths[g] * dim weights, then F biases. After all groups: the output layer
// as C x K weights (row-major) and C biases.
class CnnModel {
 public:
  CnnModel() = default;
  CnnModel(std::size_t dim, std::size_t num_classes, CnnConfig cfg)
      : dim_(dim), num_classes_(num_classes), cfg_(std::move(cfg)) {
    if (cfg_.widths.empty() || cfg_.filters_per_width == 0) {
      throw ValidationError("CNN needs at least one filter");
    }
    std::size_t off = 0;
    for (auto d : cfg_.widths) {
      group_offset_.push_back(off);
      off += cfg_.filters_per_width * (d * dim_ + 1);
    }
    out_offset_ = off;
    off += num_classes_ * num_filters() + num_classes_;
    params_.assign(off, 0.0);
  }

  void init_uniform(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : params_) p = rng.uniform(-cfg_.init_range, cfg_.init_range);
  }

  std::size_t dim() const { return dim_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t num_filters() const { return cfg_.widths.size() * cfg_.filters_per_width; }
  std::size_t max_width() const { return *std::max_element(cfg_.widths.begin(), cfg_.widths.end()); }
  const CnnConfig& config() const { return cfg_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  double* filter(std::size_t g, std::size_t f) {
    return &params_[group_offset_[g] + f * cfg_.widths[g] * dim_];
  }
  const double* filter(std::size_t g, std::size_t f) const {
    return &params_[group_offset_[g] + f * cfg_.widths[g] * dim_];
  }
  std::size_t filter_bias_index(std::size_t g, std::size_t f) const {
    return group_offset_[g] + cfg_.filters_per_width * cfg_.widths[g] * dim_ + f;
  }
  std::size_t out_weight_index(std::size_t c, std::size_t k) const {
    return out_offset_ + c * num_filters() + k;
  }
  std::size_t out_bias_index(std::size_t c) const {
    return out_offset_ + num_classes_ * num_filters() + c;
  }

  struct Trace {
    Matrix input;                              // padded input
    std::vector<std::vector<double>> conv;     // per filter, pre-pool ReLU activations
    std::vector<double> pooled;                // K
    std::vector<std::size_t> argmax_pos;       // K
    std::vector<double> probs;                 // C
  };

  // Rows are zero-padded at the end up to the largest filter width.
  Matrix pad(const Matrix& x) const {
    if (x.cols != dim_) throw ValidationError("CNN input width does not match embedding dim");
    Matrix m = x;
    if (m.rows < max_width()) {
      m.rows = max_width();
      m.data.resize(m.rows * m.cols, 0.0);
    }
    return m;
  }

  Trace forward_trace(const Matrix& x) const {
    Trace t;
    t.input = pad(x);
    const std::size_t n = t.input.rows;
    const std::size_t k_total = num_filters();
    t.conv.resize(k_total);
    t.pooled.assign(k_total, 0.0);
    t.argmax_pos.assign(k_total, 0);
    std::size_t k = 0;
    for (std::size_t g = 0; g < cfg_.widths.size(); ++g) {
      const std::size_t d = cfg_.widths[g];
      const std::size_t span = d * dim_;
      for (std::size_t f = 0; f < cfg_.filters_per_width; ++f, ++k) {
        const double* w = filter(g, f);
        const double b = params_[filter_bias_index(g, f)];
        auto& out = t.conv[k];
        out.resize(n - d + 1);
        for (std::size_t pos = 0; pos + d <= n; ++pos) {
          const double* xin = &t.input.data[pos * dim_];
          double s = b;
          for (std::size_t j = 0; j < span; ++j) s += w[j] * xin[j];
          out[pos] = s > 0.0 ? s : 0.0;
        }
        const auto it = std::max_element(out.begin(), out.end());
        t.pooled[k] = *it;
        t.argmax_pos[k] = static_cast<std::size_t>(it - out.begin());
      }
    }
    std::vector<double> logits(num_classes_);
    for (std::size_t c = 0; c < num_classes_; ++c) {
      double s = params_[out_bias_index(c)];
      const double* v = &params_[out_weight_index(c, 0)];
      for (std::size_t j = 0; j < k_total; ++j) s += v[j] * t.pooled[j];
      logits[c] = s;
    }
    t.probs = softmax(logits);
    return t;
  }

  std::vector<double> forward(const Matrix& x) const { return forward_trace(x).probs; }
  int predict(const Matrix& x) const { return argmax(forward(x)); }

  // Cross-entropy of one example; accumulates scale * dLoss/dparams into grad.
  double accumulate_gradient(const Matrix& x, int label, std::vector<double>& grad,
                             double scale = 1.0) const {
    const auto t = forward_trace(x);
    const auto y = static_cast<std::size_t>(label);
    const double loss = -std::log(std::max(t.probs[y], std::numeric_limits<double>::min()));
    std::vector<double> delta = t.probs;
    delta[y] -= 1.0;
    const std::size_t k_total = num_filters();
    std::vector<double> dpooled(k_total, 0.0);
    for (std::size_t c = 0; c < num_classes_; ++c) {
      const double dc = delta[c] * scale;
      grad[out_bias_index(c)] += dc;
      const double* v = &params_[out_weight_index(c, 0)];
      double* gv = &grad[out_weight_index(c, 0)];
      for (std::size_t j = 0; j < k_total; ++j) {
        gv[j] += dc * t.pooled[j];
        dpooled[j] += dc * v[j];
      }
    }
    std::size_t k = 0;
    for (std::size_t g = 0; g < cfg_.widths.size(); ++g) {
      const std::size_t span = cfg_.widths[g] * dim_;
      for (std::size_t f = 0; f < cfg_.filters_per_width; ++f, ++k) {
        if (t.pooled[k] <= 0.0) continue;  // ReLU inactive at the pooled position
        const double dp = dpooled[k];
        grad[filter_bias_index(g, f)] += dp;
        double* gw = &grad[group_offset_[g] + f * span];
        const double* xin = &t.input.data[t.argmax_pos[k] * dim_];
        for (std::size_t j = 0; j < span; ++j) gw[j] += dp * xin[j];
      }
    }
    return loss;
  }

  double loss(const Matrix& x, int label) const {
    const auto p = forward(x);
    return -std::log(std::max(p[static_cast<std::size_t>(label)], std::numeric_limits<double>::min()));
  }

  nlohmann::json to_json() const {
    return {{"kind", "cnn"},
            {"dim", dim_},
            {"num_classes", num_classes_},
            {"widths", cfg_.widths},
            {"filters_per_width", cfg_.filters_per_width},
            {"learning_rate", cfg_.learning_rate},
            {"batch_size", cfg_.batch_size},
            {"epochs", cfg_.epochs},
            {"init_range", cfg_.init_range},
            {"seed", cfg_.seed},
            {"params", params_}};
  }

  static CnnModel from_json(const nlohmann::json& j) {
    CnnConfig cfg;
    cfg.widths = j.at("widths").get<std::vector<std::size_t>>();
    cfg.filters_per_width = j.at("filters_per_width").get<std::size_t>();
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.batch_size = j.at("batch_size").get<std::size_t>();
    cfg.epochs = j.at("epochs").get<int>();
    cfg.init_range = j.at("init_range").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    CnnModel m(j.at("dim").get<std::size_t>(), j.at("num_classes").get<std::size_t>(), cfg);
    auto p = j.at("params").get<std::vector<double>>();
    if (p.size() != m.params_.size()) throw ParseError("CNN parameter count mismatch");
    m.params_ = std::move(p);
    return m;
  }

 private:
  std::size_t dim_ = 0;
  std::size_t num_classes_ = 0;
  CnnConfig cfg_;
  std::vector<std::size_t> group_offset_;
  std::size_t out_offset_ = 0;
  std::vector<double> params_;
};

struct CnnExample {
  Matrix input;
  int label = 0;
};

struct CnnTrainReport {
  std::vector<double> train_loss;  // mean per epoch
  std::vector<double> dev_loss;    // mean per epoch (empty without dev data)
  int best_epoch = -1;
};

inline double mean_loss(const CnnModel& m, std::span<const CnnExample> data) {
  if (data.empty()) return 0.0;
  double s = 0.0;
  for (const auto& ex : data) s += m.loss(ex.input, ex.label);
  return s / static_cast<double>(data.size());
}

// Mini-batch SGD on mean batch cross-entropy. Returns the parameters of the
// epoch with the lowest dev loss (the last epoch when `dev` is empty).
inline CnnModel train_cnn(std::size_t dim, std::size_t num_classes, std::span<const CnnExample> train,
                          std::span<const CnnExample> dev, const CnnConfig& cfg,
                          CnnTrainReport* report = nullptr) {
  CnnModel model(dim, num_classes, cfg);
  model.init_uniform(derive_seed(cfg.seed, 1));
  Rng shuffle_rng(derive_seed(cfg.seed, 2));
  CnnTrainReport local;
  CnnTrainReport& rep = report ? *report : local;
  CnnModel best = model;
  double best_dev = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> grad(model.params().size());
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const double inv = 1.0 / static_cast<double>(end - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i = start; i < end; ++i) {
        const auto& ex = train[order[i]];
        epoch_loss += model.accumulate_gradient(ex.input, ex.label, grad, inv);
      }
      auto& p = model.params();
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= cfg.learning_rate * grad[j];
    }
    rep.train_loss.push_back(train.empty() ? 0.0 : epoch_loss / static_cast<double>(train.size()));
    if (!dev.empty()) {
      const double dl = mean_loss(model, dev);
      rep.dev_loss.push_back(dl);
      if (dl < best_dev) {
        best_dev = dl;
        best = model;
        rep.best_epoch = epoch;
      }
    }
  }
  if (dev.empty()) {
    rep.best_epoch = cfg.epochs - 1;
    return model;
  }
  return best;
}

}  // namespace geoloc
