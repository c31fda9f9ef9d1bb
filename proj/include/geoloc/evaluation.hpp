#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <exception>
#include <mutex>
#include <optional>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "geoloc/classifiers.hpp"
#include "geoloc/domain.hpp"
#include "geoloc/features.hpp"
#include "geoloc/langmodel.hpp"
#include "geoloc/pipeline.hpp"
#include "geoloc/random.hpp"

namespace geoloc {

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

enum class SplitUnit { locations, messages };

struct SplitPlan {
  int repetitions = 10;
  int train_pct = 64;
  int dev_pct = 16;
  int test_pct = 20;
  std::uint64_t seed = 42;

  void validate() const {
    if (repetitions < 1) throw ValidationError("repetitions must be >= 1");
    if (train_pct < 0 || dev_pct < 0 || test_pct < 0 || train_pct + dev_pct + test_pct != 100) {
      throw ValidationError("split ratios must be non-negative and sum to 100");
    }
  }
};

struct Split {
  std::vector<std::size_t> train, dev, test;
};

// Seeded shuffle of 0..n-1 sliced by the plan's ratios. Disjoint and exhaustive.
inline Split make_split(std::size_t n, const SplitPlan& plan, int repetition) {
  plan.validate();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(derive_seed(plan.seed, static_cast<std::uint64_t>(repetition)));
  rng.shuffle(idx);
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * plan.train_pct / 100.0));
  const auto n_dev = std::min(
      n - n_train, static_cast<std::size_t>(std::llround(static_cast<double>(n) * plan.dev_pct / 100.0)));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.dev.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
               idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev), idx.end());
  return s;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// Rows: true class, columns: predicted class.
struct ConfusionMatrix {
  std::vector<std::vector<double>> counts;

  explicit ConfusionMatrix(std::size_t c = 0) : counts(c, std::vector<double>(c, 0.0)) {}
  std::size_t size() const { return counts.size(); }
  void add(int truth, int predicted, double w = 1.0) {
    counts.at(static_cast<std::size_t>(truth)).at(static_cast<std::size_t>(predicted)) += w;
  }
  double total() const {
    double t = 0.0;
    for (const auto& r : counts) {
      for (double v : r) t += v;
    }
    return t;
  }
  void merge(const ConfusionMatrix& o) {
    for (std::size_t i = 0; i < size(); ++i) {
      for (std::size_t j = 0; j < size(); ++j) counts[i][j] += o.counts[i][j];
    }
  }
};

struct Metrics {
  double accuracy = 0.0;
  std::vector<double> precision, recall, f1;
  double macro_f1 = 0.0;
  std::vector<std::string> diagnostics;
};

// Zero denominators give 0 with a diagnostic. Macro-F1 averages all classes.
inline Metrics metrics(const ConfusionMatrix& cm) {
  Metrics m;
  const std::size_t c = cm.size();
  m.precision.assign(c, 0.0);
  m.recall.assign(c, 0.0);
  m.f1.assign(c, 0.0);
  double diag = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    diag += cm.counts[k][k];
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      row += cm.counts[k][j];
      col += cm.counts[j][k];
    }
    if (col > 0) {
      m.precision[k] = cm.counts[k][k] / col;
    } else {
      m.diagnostics.push_back("class " + std::to_string(k) + ": precision undefined (never predicted)");
    }
    if (row > 0) {
      m.recall[k] = cm.counts[k][k] / row;
    } else {
      m.diagnostics.push_back("class " + std::to_string(k) + ": recall undefined (no support)");
    }
    const double s = m.precision[k] + m.recall[k];
    m.f1[k] = s > 0 ? 2.0 * m.precision[k] * m.recall[k] / s : 0.0;
  }
  const double total = cm.total();
  m.accuracy = total > 0 ? diag / total : 0.0;
  double sum = 0.0;
  for (double v : m.f1) sum += v;
  m.macro_f1 = c > 0 ? sum / static_cast<double>(c) : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalOptions {
  // Candidate feature families for dev selection (linear models). Empty means
  // the ModelSpec families only.
  std::vector<FamilySet> family_candidates;
  // Candidate L2 strengths for logit. Empty means ModelSpec::logit.l2_lambda only.
  std::vector<double> lambda_grid;
  int jobs = 1;
};

// Every non-empty subset of the five families (31 sets), in bitmask order.
inline std::vector<FamilySet> family_power_set(FamilySet base = FamilySet::all()) {
  std::vector<FamilySet> out;
  for (unsigned b = 1; b < 32; ++b) {
    if ((b & base.bits()) == b) out.emplace_back(b);
  }
  return out;
}

struct RepetitionResult {
  int repetition = 0;
  ConfusionMatrix confusion;
  Metrics metrics;
  std::string chosen_families;
  double chosen_lambda = 0.0;
  double dev_accuracy = 0.0;
  std::size_t test_units = 0;
  bool flagged = false;
  std::vector<std::string> notes;
};

struct EvalReport {
  std::string level;  // "site" or "message"
  TypeCatalog catalog;
  nlohmann::json config;
  std::vector<RepetitionResult> repetitions;
  double mean_accuracy = 0.0;
  double mean_macro_f1 = 0.0;
  std::vector<double> mean_precision, mean_recall, mean_f1;
  ConfusionMatrix confusion;  // summed over repetitions

  void finalize() {
    const std::size_t c = catalog.size();
    confusion = ConfusionMatrix(c);
    mean_precision.assign(c, 0.0);
    mean_recall.assign(c, 0.0);
    mean_f1.assign(c, 0.0);
    mean_accuracy = mean_macro_f1 = 0.0;
    const double n = static_cast<double>(repetitions.size());
    for (const auto& r : repetitions) {
      confusion.merge(r.confusion);
      mean_accuracy += r.metrics.accuracy / n;
      mean_macro_f1 += r.metrics.macro_f1 / n;
      for (std::size_t k = 0; k < c; ++k) {
        mean_precision[k] += r.metrics.precision[k] / n;
        mean_recall[k] += r.metrics.recall[k] / n;
        mean_f1[k] += r.metrics.f1[k] / n;
      }
    }
  }
};

namespace detail {

template <typename Fn>
void run_parallel(int count, int jobs, Fn&& fn) {
  jobs = std::max(1, std::min(jobs, count));
  if (jobs == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

inline std::vector<SiteRecord> pick(std::span<const SiteRecord> all, std::span<const std::size_t> idx) {
  std::vector<SiteRecord> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

inline std::vector<MessageUnit> pick(std::span<const MessageUnit> all, std::span<const std::size_t> idx) {
  std::vector<MessageUnit> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

inline bool missing_class(std::span<const int> labels, std::size_t c, std::vector<std::string>& notes,
                          const TypeCatalog& catalog) {
  const auto counts = class_counts(labels, c);
  bool missing = false;
  for (std::size_t k = 0; k < c; ++k) {
    if (counts[k] == 0) {
      missing = true;
      notes.push_back("class '" + catalog.name(static_cast<int>(k)) + "' absent from training slice");
    }
  }
  return missing;
}

struct Candidate {
  FamilySet families;
  double lambda = 1.0;
};

inline std::vector<Candidate> candidates(const ModelSpec& spec, const EvalOptions& opt, bool joint) {
  std::vector<FamilySet> fams = opt.family_candidates;
  if (fams.empty()) fams.push_back(spec.families);
  std::vector<double> lambdas = opt.lambda_grid;
  if (lambdas.empty() || spec.kind != ModelKind::logit) lambdas = {spec.logit.l2_lambda};
  std::vector<Candidate> out;
  for (auto f : fams) {
    if (joint) f.erase(Family::spatio_temporal);
    if (f.empty()) continue;
    if (std::any_of(out.begin(), out.end(), [&](const Candidate& c) { return c.families == f; }) &&
        lambdas.size() == 1) {
      continue;
    }
    for (double l : lambdas) out.push_back({f, l});
  }
  if (out.empty()) throw ValidationError("no usable feature family candidates");
  return out;
}

inline FamilySet union_of(std::span<const Candidate> cands) {
  FamilySet u;
  for (const auto& c : cands) u = FamilySet(u.bits() | c.families.bits());
  return u;
}

inline Dataset project_dataset(const Dataset& full, const FeatureRegistry& from,
                               const FeatureRegistry& to) {
  Dataset d;
  d.width = to.width();
  d.num_classes = full.num_classes;
  d.y = full.y;
  d.x.reserve(full.x.size());
  for (const auto& v : full.x) d.x.push_back(from.project(v, to));
  return d;
}

inline double accuracy_of(const LinearModel& m, const Dataset& d) {
  if (d.size() == 0) return 0.0;
  double ok = 0;
  for (std::size_t i = 0; i < d.size(); ++i) ok += m.predict(d.x[i]) == d.y[i] ? 1.0 : 0.0;
  return ok / static_cast<double>(d.size());
}

struct Selected {
  LinearModel model;
  FeatureRegistry registry;
  Candidate candidate;
  double dev_accuracy = -1.0;
};

// Trains every candidate on `train`, keeps the best by dev accuracy (first wins ties).
inline Selected select_linear(const Dataset& train_full, const Dataset& dev_full,
                              const FeatureRegistry& full_reg, std::span<const Candidate> cands,
                              const ModelSpec& spec) {
  std::optional<Selected> best;
  std::map<unsigned, std::pair<Dataset, Dataset>> cache;
  for (const auto& cand : cands) {
    auto reg = full_reg.restricted(cand.families);
    auto it = cache.find(cand.families.bits());
    if (it == cache.end()) {
      it = cache
               .emplace(cand.families.bits(),
                        std::make_pair(project_dataset(train_full, full_reg, reg),
                                       project_dataset(dev_full, full_reg, reg)))
               .first;
    }
    auto cfg = spec.linear_config();
    cfg.logit.l2_lambda = cand.lambda;
    auto model = train_linear(it->second.first, cfg);
    const double acc = accuracy_of(model, it->second.second);
    if (!best || acc > best->dev_accuracy) {
      best = Selected{std::move(model), std::move(reg), cand, acc};
    }
  }
  return std::move(*best);
}

}  // namespace detail

// Oracle stub used to validate the harness: predicts the ground truth.
inline constexpr std::string_view kOracleModelName = "oracle";

// Site-level evaluation under the plan. Joint models and baselines split
// sites; pipeline models split messages, fit step 1 on train messages and the
// aggregation profile on dev messages, and classify each site from its test
// messages.
inline EvalReport run_eval(std::span<const SiteRecord> corpus, const TypeCatalog& catalog,
                           const ModelSpec& spec, const SplitPlan& plan, const EvalOptions& opt = {},
                           bool oracle = false) {
  plan.validate();
  const std::size_t c = catalog.size();
  EvalReport rep;
  rep.level = "site";
  rep.catalog = catalog;
  rep.config = spec.to_json();
  rep.config["repetitions"] = plan.repetitions;
  rep.config["split"] = std::to_string(plan.train_pct) + ":" + std::to_string(plan.dev_pct) + ":" +
                        std::to_string(plan.test_pct);
  rep.config["split_seed"] = plan.seed;
  rep.config["oracle"] = oracle;
  {
    auto fams = nlohmann::json::array();
    for (auto f : opt.family_candidates) fams.push_back(f.to_string());
    rep.config["family_candidates"] = fams;
    rep.config["lambda_grid"] = opt.lambda_grid;
  }
  const bool message_split = spec.approach == Approach::pipeline && !spec.is_baseline() && !oracle;
  rep.config["split_unit"] = message_split ? "messages" : "locations";
  std::vector<MessageUnit> units;
  std::vector<std::size_t> unit_site;
  if (message_split) {
    for (std::size_t s = 0; s < corpus.size(); ++s) {
      for (const auto& m : corpus[s].messages) {
        units.push_back({&m.message, corpus[s].point, corpus[s].truth.value_or(0)});
        unit_site.push_back(s);
      }
    }
  }
  rep.repetitions.resize(static_cast<std::size_t>(plan.repetitions));
  detail::run_parallel(plan.repetitions, opt.jobs, [&](int r) {
    RepetitionResult res;
    res.repetition = r;
    res.confusion = ConfusionMatrix(c);
    if (!message_split) {
      const auto split = make_split(corpus.size(), plan, r);
      const auto train = detail::pick(corpus, split.train);
      const auto dev = detail::pick(corpus, split.dev);
      const auto test = detail::pick(corpus, split.test);
      std::vector<int> train_labels;
      for (const auto& s : train) train_labels.push_back(s.truth.value_or(0));
      res.flagged = detail::missing_class(train_labels, c, res.notes, catalog);
      std::function<int(const SiteRecord&)> predict;
      JointModel joint;
      if (oracle) {
        predict = [](const SiteRecord& s) { return s.truth.value_or(0); };
      } else if (spec.is_linear()) {
        const auto cands = detail::candidates(spec, opt, true);
        ModelSpec full = spec;
        full.families = detail::union_of(cands);
        const auto full_reg = fit_joint_registry(train, full, c);
        const auto sel = detail::select_linear(featurize_sites(train, full_reg),
                                               featurize_sites(dev, full_reg), full_reg, cands, spec);
        joint.kind = spec.kind;
        joint.num_classes = c;
        joint.registry = sel.registry;
        joint.linear = sel.model;
        res.chosen_families = sel.candidate.families.to_string();
        res.chosen_lambda = sel.candidate.lambda;
        res.dev_accuracy = sel.dev_accuracy;
        predict = [&joint](const SiteRecord& s) { return joint.predict(s); };
      } else {
        joint = train_joint_model(train, dev, spec, c);
        predict = [&joint](const SiteRecord& s) { return joint.predict(s); };
      }
      for (const auto& s : test) res.confusion.add(s.truth.value_or(0), predict(s));
      res.test_units = test.size();
    } else {
      const auto split = make_split(units.size(), plan, r);
      const auto train = detail::pick(units, split.train);
      const auto dev = detail::pick(units, split.dev);
      std::vector<int> train_labels;
      for (const auto& u : train) train_labels.push_back(u.label);
      res.flagged = detail::missing_class(train_labels, c, res.notes, catalog);
      MessageModel step1;
      if (spec.is_linear()) {
        const auto cands = detail::candidates(spec, opt, false);
        ModelSpec full = spec;
        full.families = detail::union_of(cands);
        const auto full_reg = fit_message_registry(train, full, c);
        auto sel = detail::select_linear(featurize_messages(train, full_reg, spec.tz_offset_hours),
                                         featurize_messages(dev, full_reg, spec.tz_offset_hours),
                                         full_reg, cands, spec);
        step1.kind = spec.kind;
        step1.num_classes = c;
        step1.tz_offset_hours = spec.tz_offset_hours;
        step1.registry = std::move(sel.registry);
        step1.linear = std::move(sel.model);
        res.chosen_families = sel.candidate.families.to_string();
        res.chosen_lambda = sel.candidate.lambda;
        res.dev_accuracy = sel.dev_accuracy;
      } else {
        step1 = train_message_model(train, dev, spec, c);
      }
      // Profile from step-1 predictions on dev messages, grouped by site.
      std::map<std::size_t, LabeledPredictions> dev_sites;
      for (auto i : split.dev) {
        auto& lp = dev_sites[unit_site[i]];
        lp.truth = units[i].label;
        lp.predicted.push_back(step1.predict(*units[i].message, units[i].entity));
      }
      std::vector<LabeledPredictions> prof_in;
      for (auto& [s, lp] : dev_sites) prof_in.push_back(std::move(lp));
      const auto profile = fit_profile(prof_in, c);
      for (const auto& d : profile.diagnostics) res.notes.push_back(d);
      // Test: each site classified from its test messages only.
      std::map<std::size_t, std::vector<int>> test_sites;
      for (auto i : split.test) {
        test_sites[unit_site[i]].push_back(step1.predict(*units[i].message, units[i].entity));
      }
      for (const auto& [s, labels] : test_sites) {
        const auto agg = aggregate(label_fractions(labels, c), profile, spec.aggregation);
        res.confusion.add(corpus[s].truth.value_or(0), agg.label);
      }
      res.test_units = test_sites.size();
    }
    res.metrics = metrics(res.confusion);
    rep.repetitions[static_cast<std::size_t>(r)] = std::move(res);
  });
  rep.finalize();
  return rep;
}

// Message-level evaluation of a linear model with fixed families and lambda.
// Splits messages under the plan; the message label is its site's type.
inline EvalReport run_message_eval(std::span<const SiteRecord> corpus, const TypeCatalog& catalog,
                                   const ModelSpec& spec, const SplitPlan& plan,
                                   const EvalOptions& opt = {}) {
  const std::size_t c = catalog.size();
  EvalReport rep;
  rep.level = "message";
  rep.catalog = catalog;
  rep.config = spec.to_json();
  rep.config["repetitions"] = plan.repetitions;
  rep.config["split_seed"] = plan.seed;
  const auto units = message_units(corpus);
  rep.repetitions.resize(static_cast<std::size_t>(plan.repetitions));
  detail::run_parallel(plan.repetitions, opt.jobs, [&](int r) {
    RepetitionResult res;
    res.repetition = r;
    res.confusion = ConfusionMatrix(c);
    const auto split = make_split(units.size(), plan, r);
    const auto train = detail::pick(units, split.train);
    const auto dev = detail::pick(units, split.dev);
    const auto test = detail::pick(units, split.test);
    const auto model = train_message_model(train, dev, spec, c);
    for (const auto& u : test) res.confusion.add(u.label, model.predict(*u.message, u.entity));
    res.test_units = test.size();
    res.chosen_families = spec.families.to_string();
    res.chosen_lambda = spec.logit.l2_lambda;
    res.metrics = metrics(res.confusion);
    rep.repetitions[static_cast<std::size_t>(r)] = std::move(res);
  });
  rep.finalize();
  return rep;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string name;       // "all", "only:<family>", "without:<family>"
  FamilySet families;
  double accuracy = 0.0;  // mean over repetitions
  double macro_f1 = 0.0;
};

struct AblationTable {
  nlohmann::json config;
  std::vector<AblationRow> rows;

  const AblationRow& row(const std::string& name) const {
    for (const auto& r : rows) {
      if (r.name == name) return r;
    }
    throw ValidationError("no ablation row " + name);
  }
};

// Message-level logit over: all families, each family alone, and all but each
// family. One featurization per repetition, projected for each row.
inline AblationTable run_ablation(std::span<const SiteRecord> corpus, const TypeCatalog& catalog,
                                  const ModelSpec& base, const SplitPlan& plan,
                                  FamilySet families = FamilySet::all(), int jobs = 1) {
  plan.validate();
  const std::size_t c = catalog.size();
  AblationTable table;
  table.config = base.to_json();
  table.config["families"] = families.to_string();
  table.config["repetitions"] = plan.repetitions;
  table.config["split_seed"] = plan.seed;
  table.config["split_unit"] = "messages";
  table.rows.push_back({"all", families});
  for (auto f : kAllFamilies) {
    if (!families.contains(f)) continue;
    table.rows.push_back({std::string("only:") + family_name(f), FamilySet{f}});
    table.rows.push_back({std::string("without:") + family_name(f), families.without(f)});
  }
  const auto units = message_units(corpus);
  std::vector<std::vector<Metrics>> per_rep(static_cast<std::size_t>(plan.repetitions));
  detail::run_parallel(plan.repetitions, jobs, [&](int r) {
    const auto split = make_split(units.size(), plan, r);
    const auto train = detail::pick(units, split.train);
    const auto test = detail::pick(units, split.test);
    ModelSpec full = base;
    full.families = families;
    const auto full_reg = fit_message_registry(train, full, c);
    const auto train_full = featurize_messages(train, full_reg, base.tz_offset_hours);
    const auto test_full = featurize_messages(test, full_reg, base.tz_offset_hours);
    auto& out = per_rep[static_cast<std::size_t>(r)];
    for (const auto& row : table.rows) {
      if (row.families.empty()) {
        // Nothing left to learn from: the bias-only model.
        Dataset empty_train = train_full;
        for (auto& x : empty_train.x) x.entries.clear();
        empty_train.width = 0;
        const auto m = train_linear(empty_train, base.linear_config());
        ConfusionMatrix cm(c);
        for (std::size_t i = 0; i < test_full.size(); ++i) cm.add(test_full.y[i], m.predict(FeatureVector{}));
        out.push_back(metrics(cm));
        continue;
      }
      const auto reg = full_reg.restricted(row.families);
      const auto tr = detail::project_dataset(train_full, full_reg, reg);
      const auto te = detail::project_dataset(test_full, full_reg, reg);
      const auto m = train_linear(tr, base.linear_config());
      ConfusionMatrix cm(c);
      for (std::size_t i = 0; i < te.size(); ++i) cm.add(te.y[i], m.predict(te.x[i]));
      out.push_back(metrics(cm));
    }
  });
  const double n = static_cast<double>(plan.repetitions);
  for (std::size_t k = 0; k < table.rows.size(); ++k) {
    for (const auto& rep : per_rep) {
      table.rows[k].accuracy += rep[k].accuracy / n;
      table.rows[k].macro_f1 += rep[k].macro_f1 / n;
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Corpus analysis
// ---------------------------------------------------------------------------

struct CorpusAnalysis {
  TypeCatalog catalog;
  double tz_offset_hours = kDefaultTzOffsetHours;
  // Row per class, plus a final "all" row; values are percentages.
  std::vector<std::array<double, 3>> distance_pct;
  std::vector<std::array<double, 7>> day_period_pct;
  std::vector<std::array<double, kPosTags.size()>> pos_pct;
  std::vector<std::vector<BigramContribution>> top_bigrams;  // per class
  std::vector<std::string> diagnostics;
};

inline CorpusAnalysis corpus_analysis(std::span<const SiteRecord> corpus, const TypeCatalog& catalog,
                                      double tz_offset_hours = kDefaultTzOffsetHours,
                                      std::size_t top_k = 10) {
  const std::size_t c = catalog.size();
  CorpusAnalysis a;
  a.catalog = catalog;
  a.tz_offset_hours = tz_offset_hours;
  a.distance_pct.assign(c + 1, {});
  a.day_period_pct.assign(c + 1, {});
  a.pos_pct.assign(c + 1, {});
  std::vector<double> n_msgs(c + 1, 0.0), n_tags(c + 1, 0.0);
  std::vector<TokenSeq> all_tokens;
  std::vector<std::vector<TokenSeq>> class_tokens(c);
  std::size_t tagged_messages = 0;
  for (const auto& s : corpus) {
    if (!s.truth) continue;
    const auto k = static_cast<std::size_t>(*s.truth);
    for (const auto& sm : s.messages) {
      const auto db = static_cast<std::size_t>(distance_bin(sm.distance_m));
      const auto dp = static_cast<std::size_t>(day_period(local_hour(sm.message.timestamp, tz_offset_hours)));
      for (auto row : {k, c}) {
        a.distance_pct[row][db] += 1.0;
        a.day_period_pct[row][dp] += 1.0;
        n_msgs[row] += 1.0;
      }
      if (sm.message.pos_tags) {
        ++tagged_messages;
        for (const auto& tag : *sm.message.pos_tags) {
          auto it = std::find(kPosTags.begin(), kPosTags.end(), tag);
          for (auto row : {k, c}) {
            n_tags[row] += 1.0;
            if (it != kPosTags.end()) a.pos_pct[row][static_cast<std::size_t>(it - kPosTags.begin())] += 1.0;
          }
        }
      }
      auto toks = tokenize(sm.message.text);
      class_tokens[k].push_back(toks);
      all_tokens.push_back(std::move(toks));
    }
  }
  for (std::size_t row = 0; row <= c; ++row) {
    for (auto& v : a.distance_pct[row]) v = n_msgs[row] > 0 ? 100.0 * v / n_msgs[row] : 0.0;
    for (auto& v : a.day_period_pct[row]) v = n_msgs[row] > 0 ? 100.0 * v / n_msgs[row] : 0.0;
    for (auto& v : a.pos_pct[row]) v = n_tags[row] > 0 ? 100.0 * v / n_tags[row] : 0.0;
  }
  if (tagged_messages == 0) a.diagnostics.push_back("no POS tags in corpus; POS prevalence is all zero");
  const auto vocab = Vocabulary::build(all_tokens);
  const auto corpus_lm = train_bigram(all_tokens, vocab);
  for (std::size_t k = 0; k < c; ++k) {
    if (class_tokens[k].empty()) {
      a.diagnostics.push_back("class '" + catalog.name(static_cast<int>(k)) + "' has no messages");
      a.top_bigrams.emplace_back();
      continue;
    }
    const auto class_lm = train_bigram(class_tokens[k], vocab);
    a.top_bigrams.push_back(top_k_distinguishing_bigrams(*class_lm, *corpus_lm, top_k));
  }
  return a;
}

// ---------------------------------------------------------------------------
// Report writers
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path);
  return out;
}

}  // namespace detail

inline void write_eval_report(const std::string& dir, const EvalReport& r) {
  const auto echo = "# config: " + r.config.dump() + "\n";
  const std::size_t c = r.catalog.size();
  {
    auto out = detail::open_out(dir + "/eval_repetitions.csv");
    out << echo << "repetition,accuracy,macro_f1,test_units,families,lambda,dev_accuracy,flagged\n";
    for (const auto& rr : r.repetitions) {
      out << rr.repetition << ',' << detail::fmt(rr.metrics.accuracy) << ','
          << detail::fmt(rr.metrics.macro_f1) << ',' << rr.test_units << ','
          << detail::csv_escape(rr.chosen_families) << ',';
      // Models without dev selection (NB, CNN, baselines) leave these blank.
      if (!rr.chosen_families.empty()) out << detail::fmt(rr.chosen_lambda) << ',' << detail::fmt(rr.dev_accuracy);
      else out << ',';
      out << ',' << (rr.flagged ? 1 : 0) << '\n';
    }
  }
  {
    auto out = detail::open_out(dir + "/eval_classes.csv");
    out << echo << "class,precision,recall,f1\n";
    for (std::size_t k = 0; k < c; ++k) {
      out << r.catalog.name(static_cast<int>(k)) << ',' << detail::fmt(r.mean_precision[k]) << ','
          << detail::fmt(r.mean_recall[k]) << ',' << detail::fmt(r.mean_f1[k]) << '\n';
    }
  }
  {
    auto out = detail::open_out(dir + "/eval_confusion.csv");
    out << echo << "truth\\predicted";
    for (std::size_t k = 0; k < c; ++k) out << ',' << r.catalog.name(static_cast<int>(k));
    out << '\n';
    for (std::size_t i = 0; i < c; ++i) {
      out << r.catalog.name(static_cast<int>(i));
      for (std::size_t j = 0; j < c; ++j) out << ',' << detail::fmt(r.confusion.counts[i][j], 0);
      out << '\n';
    }
  }
  {
    auto out = detail::open_out(dir + "/eval_summary.txt");
    out << "evaluation (" << r.level << " level)\n";
    out << "config: " << r.config.dump() << "\n\n";
    out << "mean accuracy: " << detail::fmt(100.0 * r.mean_accuracy, 2) << "%\n";
    out << "mean macro-F1: " << detail::fmt(100.0 * r.mean_macro_f1, 2) << "\n\n";
    out << std::left << std::setw(14) << "class" << std::setw(11) << "precision" << std::setw(9)
        << "recall" << "f1\n";
    for (std::size_t k = 0; k < c; ++k) {
      out << std::setw(14) << r.catalog.name(static_cast<int>(k)) << std::setw(11)
          << detail::fmt(r.mean_precision[k]) << std::setw(9) << detail::fmt(r.mean_recall[k])
          << detail::fmt(r.mean_f1[k]) << '\n';
    }
    out << '\n';
    for (const auto& rr : r.repetitions) {
      out << "rep " << rr.repetition << ": accuracy " << detail::fmt(rr.metrics.accuracy) << ", macro-F1 "
          << detail::fmt(rr.metrics.macro_f1);
      if (!rr.chosen_families.empty()) out << ", families " << rr.chosen_families;
      if (rr.flagged) out << " [flagged]";
      out << '\n';
      for (const auto& n : rr.notes) out << "  note: " << n << '\n';
      for (const auto& d : rr.metrics.diagnostics) out << "  diagnostic: " << d << '\n';
    }
  }
}

inline void write_ablation_report(const std::string& dir, const AblationTable& t) {
  const auto echo = "# config: " + t.config.dump() + "\n";
  {
    auto out = detail::open_out(dir + "/ablation.csv");
    out << echo << "row,families,accuracy,macro_f1\n";
    for (const auto& r : t.rows) {
      out << r.name << ',' << detail::csv_escape(r.families.to_string()) << ','
          << detail::fmt(100.0 * r.accuracy, 2) << ',' << detail::fmt(100.0 * r.macro_f1, 2) << '\n';
    }
  }
  auto out = detail::open_out(dir + "/ablation.txt");
  out << "ablation (message-level)\nconfig: " << t.config.dump() << "\n\n";
  out << std::left << std::setw(26) << "row" << std::setw(10) << "accuracy" << "macro-F1\n";
  for (const auto& r : t.rows) {
    out << std::setw(26) << r.name << std::setw(10) << detail::fmt(100.0 * r.accuracy, 2)
        << detail::fmt(100.0 * r.macro_f1, 2) << '\n';
  }
}

inline void write_analysis_report(const std::string& dir, const CorpusAnalysis& a,
                                  const nlohmann::json& config) {
  const auto echo = "# config: " + config.dump() + "\n";
  const std::size_t c = a.catalog.size();
  auto row_name = [&](std::size_t row) {
    return row < c ? a.catalog.name(static_cast<int>(row)) : std::string("all");
  };
  {
    auto out = detail::open_out(dir + "/analysis_distance.csv");
    out << echo << "class,adjacent,near,far\n";
    for (std::size_t row = 0; row <= c; ++row) {
      out << row_name(row);
      for (double v : a.distance_pct[row]) out << ',' << detail::fmt(v, 2);
      out << '\n';
    }
  }
  {
    auto out = detail::open_out(dir + "/analysis_day_period.csv");
    out << echo << "class";
    for (auto n : kDayPeriodNames) out << ',' << n;
    out << '\n';
    for (std::size_t row = 0; row <= c; ++row) {
      out << row_name(row);
      for (double v : a.day_period_pct[row]) out << ',' << detail::fmt(v, 2);
      out << '\n';
    }
  }
  {
    auto out = detail::open_out(dir + "/analysis_pos.csv");
    out << echo << "class";
    for (auto n : kPosTags) out << ',' << n;
    out << '\n';
    for (std::size_t row = 0; row <= c; ++row) {
      out << row_name(row);
      for (double v : a.pos_pct[row]) out << ',' << detail::fmt(v, 2);
      out << '\n';
    }
  }
  {
    auto out = detail::open_out(dir + "/analysis_kl_bigrams.csv");
    out << echo << "class,rank,bigram,contribution\n";
    for (std::size_t k = 0; k < c; ++k) {
      for (std::size_t i = 0; i < a.top_bigrams[k].size(); ++i) {
        out << row_name(k) << ',' << i + 1 << ',' << detail::csv_escape(a.top_bigrams[k][i].bigram) << ','
            << detail::fmt(a.top_bigrams[k][i].contribution, 6) << '\n';
      }
    }
  }
  auto out = detail::open_out(dir + "/analysis.txt");
  out << "corpus analysis\nconfig: " << config.dump() << "\n";
  out << "local time offset (hours from UTC): " << a.tz_offset_hours << "\n\n";
  out << "distance from entity (%)\n";
  out << std::left << std::setw(12) << "class" << std::setw(10) << "adjacent" << std::setw(10) << "near"
      << "far\n";
  for (std::size_t row = 0; row <= c; ++row) {
    out << std::setw(12) << row_name(row) << std::setw(10) << detail::fmt(a.distance_pct[row][0], 2)
        << std::setw(10) << detail::fmt(a.distance_pct[row][1], 2) << detail::fmt(a.distance_pct[row][2], 2)
        << '\n';
  }
  out << "\nmost distinguishing bigrams (KL contribution)\n";
  for (std::size_t k = 0; k < c; ++k) {
    out << row_name(k) << ':';
    for (const auto& b : a.top_bigrams[k]) out << " [" << b.bigram << ']';
    out << '\n';
  }
  for (const auto& d : a.diagnostics) out << "diagnostic: " << d << '\n';
}

}  // namespace geoloc
