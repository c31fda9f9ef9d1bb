#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoloc/classifiers.hpp"
#include "geoloc/domain.hpp"
#include "geoloc/features.hpp"
#include "geoloc/neural.hpp"

namespace geoloc {

using LabelDistribution = std::vector<double>;

inline LabelDistribution label_fractions(std::span<const int> labels, std::size_t num_classes) {
  LabelDistribution d(num_classes, 0.0);
  if (labels.empty()) return d;
  for (int l : labels) d.at(static_cast<std::size_t>(l)) += 1.0;
  for (auto& v : d) v /= static_cast<double>(labels.size());
  return d;
}

enum class AggregationRule {
  diagonal,  // argmax_c observed[c] - learned[c][c]
  l1,        // argmin_c sum_l |observed[l] - learned[c][l]|
};

inline AggregationRule aggregation_from_name(std::string_view s) {
  if (s == "diagonal") return AggregationRule::diagonal;
  if (s == "l1") return AggregationRule::l1;
  throw ValidationError("unknown aggregation rule: " + std::string(s));
}

inline const char* aggregation_name(AggregationRule r) {
  return r == AggregationRule::diagonal ? "diagonal" : "l1";
}

// learned[c][l]: mean over training sites of true type c of the fraction of
// their messages predicted as l. `priors` holds training site frequencies.
struct AggregationProfile {
  std::vector<LabelDistribution> learned;
  std::vector<double> priors;
  std::vector<std::string> diagnostics;

  std::size_t num_classes() const { return learned.size(); }

  nlohmann::json to_json() const { return {{"learned", learned}, {"priors", priors}}; }
  static AggregationProfile from_json(const nlohmann::json& j) {
    AggregationProfile p;
    p.learned = j.at("learned").get<std::vector<LabelDistribution>>();
    p.priors = j.at("priors").get<std::vector<double>>();
    return p;
  }
};

struct LabeledPredictions {
  int truth = 0;
  std::vector<int> predicted;  // step-1 label per message
};

inline AggregationProfile fit_profile(std::span<const LabeledPredictions> sites,
                                      std::size_t num_classes) {
  AggregationProfile p;
  p.learned.assign(num_classes, LabelDistribution(num_classes, 0.0));
  std::vector<double> n(num_classes, 0.0);
  for (const auto& s : sites) {
    if (s.predicted.empty()) continue;
    const auto frac = label_fractions(s.predicted, num_classes);
    auto& row = p.learned.at(static_cast<std::size_t>(s.truth));
    for (std::size_t l = 0; l < num_classes; ++l) row[l] += frac[l];
    n[static_cast<std::size_t>(s.truth)] += 1.0;
  }
  double total = 0.0;
  for (double v : n) total += v;
  p.priors.assign(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (n[c] == 0.0) {
      std::fill(p.learned[c].begin(), p.learned[c].end(), 1.0 / static_cast<double>(num_classes));
      p.diagnostics.push_back("class " + std::to_string(c) +
                              " has no training sites; using a uniform profile row");
    } else {
      for (auto& v : p.learned[c]) v /= n[c];
    }
    if (total > 0.0) p.priors[c] = n[c] / total;
  }
  return p;
}

struct AggregationResult {
  int label = 0;
  std::vector<double> scores;  // higher is better under either rule
};

// Diagonal rule ties go to the higher observed[c], then the lowest index.
inline AggregationResult aggregate(const LabelDistribution& observed,
                                   const AggregationProfile& profile,
                                   AggregationRule rule = AggregationRule::diagonal) {
  const std::size_t c = profile.num_classes();
  if (observed.size() != c) throw ValidationError("observed distribution size mismatch");
  AggregationResult r;
  r.scores.resize(c);
  for (std::size_t k = 0; k < c; ++k) {
    if (rule == AggregationRule::diagonal) {
      r.scores[k] = observed[k] - profile.learned[k][k];
    } else {
      double d = 0.0;
      for (std::size_t l = 0; l < c; ++l) d += std::abs(observed[l] - profile.learned[k][l]);
      r.scores[k] = -d;
    }
  }
  int best = 0;
  for (std::size_t k = 1; k < c; ++k) {
    const auto b = static_cast<std::size_t>(best);
    if (r.scores[k] > r.scores[b] ||
        (r.scores[k] == r.scores[b] && rule == AggregationRule::diagonal && observed[k] > observed[b])) {
      best = static_cast<int>(k);
    }
  }
  r.label = best;
  return r;
}

struct PipelineDecision {
  int label = 0;
  LabelDistribution observed;
  std::vector<double> scores;
  bool empty = false;  // fell back to the profile prior majority
};

// Step 1 labels each message with its most probable class; step 2 aggregates
// the label fractions against the profile.
inline PipelineDecision classify_pipeline(const SiteRecord& record,
                                          const std::function<int(const SiteMessage&)>& step1,
                                          const AggregationProfile& profile,
                                          AggregationRule rule = AggregationRule::diagonal) {
  PipelineDecision d;
  const std::size_t c = profile.num_classes();
  if (record.messages.empty()) {
    d.empty = true;
    d.label = argmax(profile.priors);
    d.observed.assign(c, 0.0);
    d.scores = profile.priors;
    return d;
  }
  std::vector<int> labels;
  labels.reserve(record.messages.size());
  for (const auto& m : record.messages) labels.push_back(step1(m));
  d.observed = label_fractions(labels, c);
  auto agg = aggregate(d.observed, profile, rule);
  d.label = agg.label;
  d.scores = std::move(agg.scores);
  return d;
}

// ---------------------------------------------------------------------------
// Model descriptions and trained models
// ---------------------------------------------------------------------------

enum class Approach { pipeline, joint };
enum class ModelKind { logit, nb, cnn, majority, random };

inline Approach approach_from_name(std::string_view s) {
  if (s == "pipeline") return Approach::pipeline;
  if (s == "joint") return Approach::joint;
  throw ValidationError("unknown approach: " + std::string(s));
}
inline const char* approach_name(Approach a) { return a == Approach::joint ? "joint" : "pipeline"; }

inline ModelKind model_kind_from_name(std::string_view s) {
  if (s == "logit") return ModelKind::logit;
  if (s == "nb") return ModelKind::nb;
  if (s == "cnn") return ModelKind::cnn;
  if (s == "majority") return ModelKind::majority;
  if (s == "random") return ModelKind::random;
  throw ValidationError("unknown model kind: " + std::string(s));
}
inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::logit: return "logit";
    case ModelKind::nb: return "nb";
    case ModelKind::cnn: return "cnn";
    case ModelKind::majority: return "majority";
    case ModelKind::random: return "random";
  }
  return "?";
}

struct ModelSpec {
  Approach approach = Approach::joint;
  ModelKind kind = ModelKind::logit;
  FamilySet families{Family::ngrams};
  int ngram_threshold = kDefaultNgramThreshold;
  double dirichlet_mu = kDefaultDirichletMu;
  LogitConfig logit;
  double nb_alpha = 1.0;
  CnnConfig cnn;
  MessageOrdering ordering = MessageOrdering::random;
  AggregationRule aggregation = AggregationRule::diagonal;
  double tz_offset_hours = kDefaultTzOffsetHours;
  double radius_m = 20.0;
  std::uint64_t seed = 42;
  std::shared_ptr<const EmbeddingTable> embeddings;

  bool is_linear() const { return kind == ModelKind::logit || kind == ModelKind::nb; }
  bool is_baseline() const { return kind == ModelKind::majority || kind == ModelKind::random; }

  LinearConfig linear_config() const {
    LinearConfig c;
    c.kind = kind == ModelKind::nb ? LinearKind::nb : LinearKind::logit;
    c.logit = logit;
    c.nb_alpha = nb_alpha;
    return c;
  }

  nlohmann::json to_json() const {
    return {{"approach", approach_name(approach)},
            {"model", model_kind_name(kind)},
            {"families", families.to_string()},
            {"ngram_threshold", ngram_threshold},
            {"dirichlet_mu", dirichlet_mu},
            {"l2_lambda", logit.l2_lambda},
            {"logit_max_iters", logit.max_iters},
            {"logit_tol", logit.tol},
            {"nb_alpha", nb_alpha},
            {"cnn_filters", cnn.filters_per_width},
            {"cnn_widths", cnn.widths},
            {"cnn_lr", cnn.learning_rate},
            {"cnn_batch", cnn.batch_size},
            {"cnn_epochs", cnn.epochs},
            {"ordering", ordering_name(ordering)},
            {"aggregation", aggregation_name(aggregation)},
            {"tz_offset_hours", tz_offset_hours},
            {"radius_m", radius_m},
            {"seed", seed}};
  }
};

// One message together with the site it was attached to.
struct MessageUnit {
  const GeotaggedMessage* message = nullptr;
  LatLon entity;
  int label = 0;
};

inline std::vector<MessageUnit> message_units(std::span<const SiteRecord> records) {
  std::vector<MessageUnit> out;
  for (const auto& r : records) {
    for (const auto& m : r.messages) out.push_back({&m.message, r.point, r.truth.value_or(0)});
  }
  return out;
}

// Classifier over single messages: a linear model over registry features or a
// CNN over token embeddings.
struct MessageModel {
  ModelKind kind = ModelKind::logit;
  std::size_t num_classes = 0;
  double tz_offset_hours = kDefaultTzOffsetHours;
  std::optional<FeatureRegistry> registry;
  std::optional<LinearModel> linear;
  std::optional<CnnModel> cnn;
  std::shared_ptr<const EmbeddingTable> embeddings;
  std::optional<BaselineModel> baseline;

  std::vector<double> predict_proba(const GeotaggedMessage& m, const LatLon& entity) const {
    if (linear) return linear->predict_proba(assemble(message_input(m, entity, tz_offset_hours), *registry));
    if (cnn) return cnn->forward(token_matrix(tokenize(m.text), *embeddings));
    std::vector<double> p(num_classes, 0.0);
    p.at(static_cast<std::size_t>(baseline->predict(m.id))) = 1.0;
    return p;
  }

  int predict(const GeotaggedMessage& m, const LatLon& entity) const {
    return argmax(predict_proba(m, entity));
  }
};

// Builds a featurized message dataset over a frozen registry.
inline Dataset featurize_messages(std::span<const MessageUnit> units, const FeatureRegistry& reg,
                                  double tz_offset_hours) {
  Dataset d;
  d.width = reg.width();
  d.num_classes = reg.num_classes();
  d.x.reserve(units.size());
  for (const auto& u : units) {
    d.x.push_back(assemble(message_input(*u.message, u.entity, tz_offset_hours), reg));
    d.y.push_back(u.label);
  }
  return d;
}

inline FeatureRegistry fit_message_registry(std::span<const MessageUnit> units, const ModelSpec& spec,
                                            std::size_t num_classes) {
  std::vector<TokenSeq> toks;
  std::vector<int> labels;
  toks.reserve(units.size());
  for (const auto& u : units) {
    toks.push_back(tokenize(u.message->text));
    labels.push_back(u.label);
  }
  return FeatureRegistry::fit(FeatureMode::pipeline, spec.families, toks, labels, num_classes,
                              spec.ngram_threshold, spec.dirichlet_mu);
}

inline std::vector<CnnExample> cnn_message_examples(std::span<const MessageUnit> units,
                                                    const EmbeddingTable& emb) {
  std::vector<CnnExample> out;
  out.reserve(units.size());
  for (const auto& u : units) out.push_back({token_matrix(tokenize(u.message->text), emb), u.label});
  return out;
}

inline MessageModel train_message_model(std::span<const MessageUnit> train,
                                        std::span<const MessageUnit> dev, const ModelSpec& spec,
                                        std::size_t num_classes) {
  MessageModel m;
  m.kind = spec.kind;
  m.num_classes = num_classes;
  m.tz_offset_hours = spec.tz_offset_hours;
  if (spec.is_linear()) {
    m.registry = fit_message_registry(train, spec, num_classes);
    m.linear = train_linear(featurize_messages(train, *m.registry, spec.tz_offset_hours),
                            spec.linear_config());
  } else if (spec.kind == ModelKind::cnn) {
    if (!spec.embeddings) throw ValidationError("cnn model requires embeddings");
    m.embeddings = spec.embeddings;
    const auto tr = cnn_message_examples(train, *spec.embeddings);
    const auto dv = cnn_message_examples(dev, *spec.embeddings);
    m.cnn = train_cnn(spec.embeddings->dim(), num_classes, tr, dv, spec.cnn);
  } else {
    std::vector<int> labels;
    for (const auto& u : train) labels.push_back(u.label);
    m.baseline = train_baseline(spec.kind == ModelKind::majority ? BaselineKind::majority
                                                                 : BaselineKind::random,
                                labels, num_classes, spec.seed);
  }
  return m;
}

// Site-level classifier over the whole message set.
struct JointModel {
  ModelKind kind = ModelKind::logit;
  std::size_t num_classes = 0;
  std::optional<FeatureRegistry> registry;
  std::optional<LinearModel> linear;
  std::optional<CnnModel> cnn;
  std::shared_ptr<const EmbeddingTable> embeddings;
  MessageOrdering ordering = MessageOrdering::random;
  std::uint64_t ordering_seed = 42;
  std::optional<ClassLanguageModels> ordering_lms;
  std::optional<BaselineModel> baseline;

  std::vector<double> predict_proba(const SiteRecord& r) const {
    if (linear) return linear->predict_proba(assemble(joint_input_text(r), *registry));
    if (cnn) {
      return cnn->forward(joint_input(r, *embeddings, ordering, ordering_seed,
                                      ordering_lms ? &*ordering_lms : nullptr));
    }
    std::vector<double> p(num_classes, 0.0);
    p.at(static_cast<std::size_t>(baseline->predict(r.id))) = 1.0;
    return p;
  }

  int predict(const SiteRecord& r) const { return argmax(predict_proba(r)); }
};

inline Dataset featurize_sites(std::span<const SiteRecord> records, const FeatureRegistry& reg) {
  Dataset d;
  d.width = reg.width();
  d.num_classes = reg.num_classes();
  for (const auto& r : records) {
    d.x.push_back(assemble(joint_input_text(r), reg));
    d.y.push_back(r.truth.value_or(0));
  }
  return d;
}

inline FeatureRegistry fit_joint_registry(std::span<const SiteRecord> records, const ModelSpec& spec,
                                          std::size_t num_classes) {
  std::vector<TokenSeq> toks;
  std::vector<int> labels;
  for (const auto& r : records) {
    toks.push_back(joint_input_text(r).tokens);
    labels.push_back(r.truth.value_or(0));
  }
  return FeatureRegistry::fit(FeatureMode::joint, spec.families, toks, labels, num_classes,
                              spec.ngram_threshold, spec.dirichlet_mu);
}

inline ClassLanguageModels train_message_lms(std::span<const SiteRecord> records,
                                             std::size_t num_classes, double mu) {
  std::vector<TokenSeq> toks;
  std::vector<int> labels;
  for (const auto& r : records) {
    for (const auto& m : r.messages) {
      toks.push_back(tokenize(m.message.text));
      labels.push_back(r.truth.value_or(0));
    }
  }
  return ClassLanguageModels::train(toks, labels, num_classes, mu);
}

inline JointModel train_joint_model(std::span<const SiteRecord> train,
                                    std::span<const SiteRecord> dev, const ModelSpec& spec,
                                    std::size_t num_classes) {
  JointModel m;
  m.kind = spec.kind;
  m.num_classes = num_classes;
  if (spec.is_linear()) {
    m.registry = fit_joint_registry(train, spec, num_classes);
    m.linear = train_linear(featurize_sites(train, *m.registry), spec.linear_config());
  } else if (spec.kind == ModelKind::cnn) {
    if (!spec.embeddings) throw ValidationError("cnn model requires embeddings");
    m.embeddings = spec.embeddings;
    m.ordering = spec.ordering;
    m.ordering_seed = spec.seed;
    if (spec.ordering == MessageOrdering::lm_score) {
      m.ordering_lms = train_message_lms(train, num_classes, spec.dirichlet_mu);
    }
    const ClassLanguageModels* lms = m.ordering_lms ? &*m.ordering_lms : nullptr;
    auto examples = [&](std::span<const SiteRecord> rs) {
      std::vector<CnnExample> out;
      for (const auto& r : rs) {
        out.push_back({joint_input(r, *spec.embeddings, spec.ordering, spec.seed, lms),
                       r.truth.value_or(0)});
      }
      return out;
    };
    m.cnn = train_cnn(spec.embeddings->dim(), num_classes, examples(train), examples(dev), spec.cnn);
  } else {
    std::vector<int> labels;
    for (const auto& r : train) labels.push_back(r.truth.value_or(0));
    m.baseline = train_baseline(spec.kind == ModelKind::majority ? BaselineKind::majority
                                                                 : BaselineKind::random,
                                labels, num_classes, spec.seed);
  }
  return m;
}

inline int classify_joint(const SiteRecord& record, const JointModel& model) {
  return model.predict(record);
}

// A complete site classifier under either approach.
struct TrainedModel {
  TypeCatalog catalog;
  ModelSpec spec;
  std::optional<MessageModel> step1;    // pipeline
  std::optional<AggregationProfile> profile;
  std::optional<JointModel> joint;      // joint
  std::vector<double> site_priors;      // training site frequencies

  // Site-level class scores, ranked by the caller. Joint: probabilities.
  // Pipeline: aggregation scores. Empty sites: the training priors.
  struct Prediction {
    int label = 0;
    std::vector<double> scores;
    bool empty = false;
  };

  Prediction predict(const SiteRecord& r) const {
    Prediction p;
    if (r.messages.empty()) {
      p.empty = true;
      p.scores = site_priors;
      p.label = argmax(site_priors);
      return p;
    }
    if (joint) {
      p.scores = joint->predict_proba(r);
      p.label = argmax(p.scores);
      return p;
    }
    auto d = classify_pipeline(
        r, [&](const SiteMessage& m) { return step1->predict(m.message, r.point); }, *profile,
        spec.aggregation);
    p.label = d.label;
    p.scores = std::move(d.scores);
    return p;
  }
};

}  // namespace geoloc
