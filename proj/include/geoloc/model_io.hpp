#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoloc/evaluation.hpp"
#include "geoloc/neural.hpp"
#include "geoloc/pipeline.hpp"

namespace geoloc {

inline constexpr int kModelFormatVersion = 1;

// Trains a deployable model on the whole corpus. A seeded 80:20 slice of the
// training units serves as the dev set (CNN epoch selection) and, for the
// pipeline, as the data the aggregation profile is learned from.
inline TrainedModel train_model(std::span<const SiteRecord> corpus, const TypeCatalog& catalog,
                                const ModelSpec& spec) {
  const std::size_t c = catalog.size();
  TrainedModel tm;
  tm.catalog = catalog;
  tm.spec = spec;
  std::vector<int> site_labels;
  for (const auto& s : corpus) site_labels.push_back(s.truth.value_or(0));
  tm.site_priors = label_fractions(site_labels, c);
  SplitPlan plan{1, 80, 20, 0, spec.seed};
  if (spec.approach == Approach::joint || spec.is_baseline()) {
    const auto split = make_split(corpus.size(), plan, 0);
    auto train = detail::pick(corpus, split.train);
    auto dev = detail::pick(corpus, split.dev);
    if (spec.kind != ModelKind::cnn) {
      // Only the CNN needs a dev set; everything else fits on all sites.
      train.insert(train.end(), dev.begin(), dev.end());
    }
    if (spec.approach == Approach::joint) {
      tm.joint = train_joint_model(train, dev, spec, c);
      return tm;
    }
  }
  std::vector<MessageUnit> units;
  std::vector<std::size_t> unit_site;
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    for (const auto& m : corpus[s].messages) {
      units.push_back({&m.message, corpus[s].point, corpus[s].truth.value_or(0)});
      unit_site.push_back(s);
    }
  }
  const auto split = make_split(units.size(), plan, 0);
  const auto train = detail::pick(units, split.train);
  const auto dev = detail::pick(units, split.dev);
  tm.step1 = train_message_model(train, dev, spec, c);
  std::map<std::size_t, LabeledPredictions> dev_sites;
  for (auto i : split.dev) {
    auto& lp = dev_sites[unit_site[i]];
    lp.truth = units[i].label;
    lp.predicted.push_back(tm.step1->predict(*units[i].message, units[i].entity));
  }
  std::vector<LabeledPredictions> prof_in;
  for (auto& [s, lp] : dev_sites) prof_in.push_back(std::move(lp));
  tm.profile = fit_profile(prof_in, c);
  return tm;
}

namespace detail {

inline nlohmann::json baseline_to_json(const std::optional<BaselineModel>& b) {
  return b ? b->to_json() : nlohmann::json();
}

inline BaselineModel baseline_from_json(const nlohmann::json& j) {
  BaselineModel b;
  b.kind = j.at("kind") == "majority" ? BaselineKind::majority : BaselineKind::random;
  b.num_classes = j.at("num_classes").get<std::size_t>();
  b.majority_class = j.at("majority_class").get<int>();
  b.seed = j.at("seed").get<std::uint64_t>();
  return b;
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.approach = approach_from_name(j.at("approach").get<std::string>());
  s.kind = model_kind_from_name(j.at("model").get<std::string>());
  s.families = FamilySet::parse(j.at("families").get<std::string>());
  s.ngram_threshold = j.at("ngram_threshold").get<int>();
  s.dirichlet_mu = j.at("dirichlet_mu").get<double>();
  s.logit.l2_lambda = j.at("l2_lambda").get<double>();
  s.logit.max_iters = j.at("logit_max_iters").get<int>();
  s.logit.tol = j.at("logit_tol").get<double>();
  s.nb_alpha = j.at("nb_alpha").get<double>();
  s.cnn.filters_per_width = j.at("cnn_filters").get<std::size_t>();
  s.cnn.widths = j.at("cnn_widths").get<std::vector<std::size_t>>();
  s.cnn.learning_rate = j.at("cnn_lr").get<double>();
  s.cnn.batch_size = j.at("cnn_batch").get<std::size_t>();
  s.cnn.epochs = j.at("cnn_epochs").get<int>();
  s.ordering = ordering_from_name(j.at("ordering").get<std::string>());
  s.aggregation = aggregation_from_name(j.at("aggregation").get<std::string>());
  s.tz_offset_hours = j.at("tz_offset_hours").get<double>();
  s.radius_m = j.at("radius_m").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

}  // namespace detail

// Writes model.json, plus embeddings.txt for CNN models.
inline void save_model(const std::string& dir, const TrainedModel& m) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["format_version"] = kModelFormatVersion;
  j["catalog"] = m.catalog.names();
  j["spec"] = m.spec.to_json();
  j["site_priors"] = m.site_priors;
  std::shared_ptr<const EmbeddingTable> emb;
  if (m.step1) {
    const auto& s = *m.step1;
    nlohmann::json sj;
    sj["tz_offset_hours"] = s.tz_offset_hours;
    if (s.registry) sj["registry"] = s.registry->to_json();
    if (s.linear) sj["linear"] = s.linear->to_json();
    if (s.cnn) sj["cnn"] = s.cnn->to_json();
    if (s.baseline) sj["baseline"] = detail::baseline_to_json(s.baseline);
    j["step1"] = sj;
    j["profile"] = m.profile->to_json();
    emb = s.embeddings;
  }
  if (m.joint) {
    const auto& s = *m.joint;
    nlohmann::json jj;
    if (s.registry) jj["registry"] = s.registry->to_json();
    if (s.linear) jj["linear"] = s.linear->to_json();
    if (s.cnn) jj["cnn"] = s.cnn->to_json();
    if (s.baseline) jj["baseline"] = detail::baseline_to_json(s.baseline);
    jj["ordering"] = ordering_name(s.ordering);
    jj["ordering_seed"] = s.ordering_seed;
    if (s.ordering_lms) jj["ordering_lms"] = s.ordering_lms->to_json();
    j["joint"] = jj;
    emb = s.embeddings;
  }
  if (emb) emb->save(dir + "/embeddings.txt");
  std::ofstream out(dir + "/model.json");
  if (!out) throw Error("cannot write file: " + dir + "/model.json");
  out << j.dump() << '\n';
}

inline TrainedModel load_model(const std::string& dir) {
  std::ifstream in(dir + "/model.json");
  if (!in) throw Error("cannot read model: " + dir + "/model.json");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("model.json: " + std::string(e.what()));
  }
  if (j.value("format_version", 0) != kModelFormatVersion) {
    throw ParseError("unsupported model format version");
  }
  TrainedModel m;
  m.catalog = TypeCatalog(j.at("catalog").get<std::vector<std::string>>());
  m.spec = detail::spec_from_json(j.at("spec"));
  m.site_priors = j.at("site_priors").get<std::vector<double>>();
  const std::size_t c = m.catalog.size();
  std::shared_ptr<const EmbeddingTable> emb;
  auto embeddings = [&]() {
    if (!emb) emb = std::make_shared<const EmbeddingTable>(load_embeddings(dir + "/embeddings.txt"));
    return emb;
  };
  if (j.contains("step1")) {
    const auto& sj = j["step1"];
    MessageModel s;
    s.kind = m.spec.kind;
    s.num_classes = c;
    s.tz_offset_hours = sj.at("tz_offset_hours").get<double>();
    if (sj.contains("registry")) s.registry = FeatureRegistry::from_json(sj["registry"]);
    if (sj.contains("linear")) s.linear = LinearModel::from_json(sj["linear"]);
    if (sj.contains("cnn")) {
      s.cnn = CnnModel::from_json(sj["cnn"]);
      s.embeddings = embeddings();
    }
    if (sj.contains("baseline")) s.baseline = detail::baseline_from_json(sj["baseline"]);
    m.step1 = std::move(s);
    m.profile = AggregationProfile::from_json(j.at("profile"));
  }
  if (j.contains("joint")) {
    const auto& jj = j["joint"];
    JointModel s;
    s.kind = m.spec.kind;
    s.num_classes = c;
    if (jj.contains("registry")) s.registry = FeatureRegistry::from_json(jj["registry"]);
    if (jj.contains("linear")) s.linear = LinearModel::from_json(jj["linear"]);
    if (jj.contains("cnn")) {
      s.cnn = CnnModel::from_json(jj["cnn"]);
      s.embeddings = embeddings();
    }
    if (jj.contains("baseline")) s.baseline = detail::baseline_from_json(jj["baseline"]);
    s.ordering = ordering_from_name(jj.at("ordering").get<std::string>());
    s.ordering_seed = jj.at("ordering_seed").get<std::uint64_t>();
    if (jj.contains("ordering_lms")) s.ordering_lms = ClassLanguageModels::from_json(jj["ordering_lms"]);
    m.joint = std::move(s);
  }
  if (!m.step1 && !m.joint) throw ParseError("model.json holds neither a pipeline nor a joint model");
  m.spec.embeddings = emb;
  return m;
}

}  // namespace geoloc
