#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "geoloc/evaluation.hpp"
#include "test_corpus.hpp"

using namespace geoloc;
namespace fs = std::filesystem;

namespace {

SynthConfig small_config(int locations = 150, double noise = 0.6) {
  SynthConfig c;
  c.locations = locations;
  c.noise_rate = noise;
  c.messages_mean = {8, 10, 12, 14, 16, 9};
  return c;
}

ModelSpec quick_spec(ModelKind kind, Approach approach) {
  ModelSpec s;
  s.kind = kind;
  s.approach = approach;
  s.logit.max_iters = 200;
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Metrics, HandTwoByTwo) {
  ConfusionMatrix cm(2);
  cm.counts = {{3, 1}, {2, 4}};
  const auto m = metrics(cm);
  EXPECT_DOUBLE_EQ(m.precision[0], 0.6);
  EXPECT_DOUBLE_EQ(m.recall[0], 0.75);
  EXPECT_NEAR(m.f1[0], 2 * 0.6 * 0.75 / 1.35, 1e-12);
  EXPECT_NEAR(m.f1[0], 0.667, 1e-3);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.7);
  EXPECT_LE(m.macro_f1, std::max(m.f1[0], m.f1[1]));
}

TEST(Metrics, IdentityAndEmptyRow) {
  ConfusionMatrix cm(3);
  cm.add(0, 0, 5);
  cm.add(1, 1, 2);
  cm.add(2, 2, 1);
  const auto m = metrics(cm);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.macro_f1, 1.0);
  ConfusionMatrix e(2);
  e.add(0, 0, 3);
  const auto me = metrics(e);
  EXPECT_EQ(me.recall[1], 0.0);
  EXPECT_EQ(me.precision[1], 0.0);
  EXPECT_FALSE(me.diagnostics.empty());
}

TEST(Metrics, ConstantWrongModel) {
  ConfusionMatrix cm(2);
  cm.add(0, 1, 4);
  cm.add(1, 0, 6);
  const auto m = metrics(cm);
  EXPECT_EQ(m.accuracy, 0.0);
  EXPECT_EQ(m.f1[0], 0.0);
  EXPECT_EQ(m.f1[1], 0.0);
}

TEST(Split, DisjointExhaustiveDeterministic) {
  SplitPlan plan;
  for (std::size_t n : {0u, 1u, 7u, 100u, 597u}) {
    for (int r = 0; r < 3; ++r) {
      const auto s = make_split(n, plan, r);
      std::set<std::size_t> all;
      for (const auto* part : {&s.train, &s.dev, &s.test}) all.insert(part->begin(), part->end());
      EXPECT_EQ(all.size(), n);
      EXPECT_EQ(s.train.size() + s.dev.size() + s.test.size(), n);
      if (n) EXPECT_EQ(*all.rbegin(), n - 1);
      const auto again = make_split(n, plan, r);
      EXPECT_EQ(s.train, again.train);
      EXPECT_EQ(s.test, again.test);
    }
  }
  const auto s = make_split(100, plan, 0);
  EXPECT_EQ(s.train.size(), 64u);
  EXPECT_EQ(s.dev.size(), 16u);
  EXPECT_NE(make_split(100, plan, 0).test, make_split(100, plan, 1).test);
  SplitPlan bad;
  bad.test_pct = 30;
  EXPECT_THROW(make_split(10, bad, 0), ValidationError);
}

TEST(Eval, OracleIsPerfect) {
  const auto sites = fixtures::synth_sites(small_config());
  const auto cat = TypeCatalog::default_catalog();
  SplitPlan plan;
  plan.repetitions = 3;
  const auto r = run_eval(sites, cat, quick_spec(ModelKind::majority, Approach::joint), plan, {}, true);
  EXPECT_EQ(r.mean_accuracy, 1.0);
  // Macro-F1 is 1 only when every class is present in the test split; an absent class scores 0.
  for (const auto& rep : r.repetitions) {
    bool all_present = true;
    for (const auto& row : rep.confusion.counts) all_present &= std::accumulate(row.begin(), row.end(), 0.0) > 0;
    EXPECT_EQ(rep.metrics.macro_f1 == 1.0, all_present);
  }
}

TEST(Eval, MajorityMatchesSchoolPrior) {
  auto cfg = small_config(3000);
  const auto sites = fixtures::synth_sites(cfg);
  const auto r = run_eval(sites, TypeCatalog::default_catalog(),
                          quick_spec(ModelKind::majority, Approach::joint), SplitPlan{});
  EXPECT_NEAR(r.mean_accuracy, 0.327, 0.02);
  for (const auto& rep : r.repetitions) {
    // Row sums equal the class supports of the test split.
    double total = 0;
    for (const auto& row : rep.confusion.counts) for (double v : row) total += v;
    EXPECT_EQ(total, static_cast<double>(rep.test_units));
    EXPECT_GE(rep.metrics.accuracy, 0.0);
    EXPECT_LE(rep.metrics.accuracy, 1.0);
  }
}

TEST(Eval, JointSplitsSitesPipelineSplitsMessages) {
  const auto sites = fixtures::synth_sites(small_config());
  const auto cat = TypeCatalog::default_catalog();
  SplitPlan plan;
  plan.repetitions = 2;
  const auto j = run_eval(sites, cat, quick_spec(ModelKind::nb, Approach::joint), plan);
  EXPECT_EQ(j.config.at("split_unit"), "locations");
  EXPECT_EQ(j.repetitions[0].test_units, make_split(sites.size(), plan, 0).test.size());
  const auto p = run_eval(sites, cat, quick_spec(ModelKind::nb, Approach::pipeline), plan);
  EXPECT_EQ(p.config.at("split_unit"), "messages");
  EXPECT_LE(p.repetitions[0].test_units, sites.size());
  EXPECT_GT(p.repetitions[0].test_units, j.repetitions[0].test_units);
}

TEST(Eval, CleanCorpusIsEasyForBothApproaches) {
  // No noise and disjoint unigram vocabularies only.
  auto cfg = small_config(150, 0.0);
  cfg.signal_share = 0.7;
  cfg.phrase_rate = 0.0;
  const auto sites = fixtures::synth_sites(cfg);
  const auto cat = TypeCatalog::default_catalog();
  SplitPlan plan;
  plan.repetitions = 2;
  EXPECT_GE(run_eval(sites, cat, quick_spec(ModelKind::logit, Approach::joint), plan).mean_accuracy, 0.95);
  EXPECT_GE(run_eval(sites, cat, quick_spec(ModelKind::nb, Approach::pipeline), plan).mean_accuracy, 0.9);
}

TEST(Eval, DevSelectionRecordsChoice) {
  const auto sites = fixtures::synth_sites(small_config());
  SplitPlan plan;
  plan.repetitions = 2;
  EvalOptions opt;
  opt.family_candidates = {FamilySet{Family::ngrams}, FamilySet{Family::textual}};
  opt.lambda_grid = {0.1, 10};
  const auto r = run_eval(sites, TypeCatalog::default_catalog(), quick_spec(ModelKind::logit, Approach::joint), plan, opt);
  for (const auto& rep : r.repetitions) {
    EXPECT_TRUE(rep.chosen_families == "ngrams" || rep.chosen_families == "textual");
    EXPECT_TRUE(rep.chosen_lambda == 0.1 || rep.chosen_lambda == 10);
  }
  EXPECT_EQ(family_power_set().size(), 31u);
  EXPECT_EQ(family_power_set(FamilySet{Family::ngrams, Family::lm}).size(), 3u);
}

TEST(Eval, ReportsAreByteIdentical) {
  const auto sites = fixtures::synth_sites(small_config());
  SplitPlan plan;
  plan.repetitions = 2;
  const auto spec = quick_spec(ModelKind::logit, Approach::joint);
  const auto base = fs::temp_directory_path() / "geoloc_eval_test";
  fs::remove_all(base);
  for (const char* d : {"a", "b"}) {
    fs::create_directories(base / d);
    write_eval_report((base / d).string(), run_eval(sites, TypeCatalog::default_catalog(), spec, plan));
  }
  for (const auto& f : fs::directory_iterator(base / "a")) {
    EXPECT_EQ(slurp(f.path()), slurp(base / "b" / f.path().filename())) << f.path();
  }
}

TEST(Ablation, TableShape) {
  auto cfg = small_config(80);
  const auto sites = fixtures::synth_sites(cfg);
  SplitPlan plan;
  plan.repetitions = 1;
  auto spec = quick_spec(ModelKind::logit, Approach::pipeline);
  spec.logit.max_iters = 50;
  const auto t = run_ablation(sites, TypeCatalog::default_catalog(), spec, plan);
  ASSERT_EQ(t.rows.size(), 11u);
  EXPECT_EQ(t.rows[0].name, "all");
  EXPECT_EQ(t.row("without:lm").families, FamilySet::all().without(Family::lm));
}

TEST(Ablation, SingleFamilyRowsMatchAll) {
  const auto sites = fixtures::synth_sites(small_config(80));
  SplitPlan plan;
  plan.repetitions = 1;
  auto spec = quick_spec(ModelKind::logit, Approach::pipeline);
  const auto t = run_ablation(sites, TypeCatalog::default_catalog(), spec, plan, FamilySet{Family::ngrams});
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_EQ(t.row("only:ngrams").accuracy, t.row("all").accuracy);
}

TEST(Ablation, ConstantZeroFamilyDoesNotMatter) {
  auto cfg = small_config(80);
  cfg.pos_tags = false;
  const auto sites = fixtures::synth_sites(cfg);
  SplitPlan plan;
  plan.repetitions = 1;
  auto spec = quick_spec(ModelKind::logit, Approach::pipeline);
  const auto t = run_ablation(sites, TypeCatalog::default_catalog(), spec, plan,
                              FamilySet{Family::ngrams, Family::pos});
  EXPECT_NEAR(t.row("without:pos").accuracy, t.row("all").accuracy, 1e-9);
}

TEST(Analysis, AdjacentMessagesAndMissingTags) {
  SiteRecord r;
  r.id = "s";
  r.truth = 0;
  r.point = {40.75, -73.98};
  for (int i = 0; i < 4; ++i) {
    GeotaggedMessage m;
    m.id = std::to_string(i);
    m.point = destination_point(r.point, 1.0, i);
    m.timestamp = 1388534400 + i * 3600;
    m.text = "high school today";
    r.messages.push_back({m, 1.0});
  }
  const auto a = corpus_analysis(std::vector<SiteRecord>{r}, TypeCatalog::default_catalog());
  EXPECT_DOUBLE_EQ(a.distance_pct[0][0], 100.0);
  EXPECT_DOUBLE_EQ(a.distance_pct.back()[0], 100.0);
  for (double v : a.pos_pct[0]) EXPECT_EQ(v, 0.0);
  bool flagged = false;
  for (const auto& d : a.diagnostics) flagged |= d.find("POS") != std::string::npos;
  EXPECT_TRUE(flagged);
}

TEST(Analysis, SynthDistanceProfileIsRecovered) {
  auto cfg = small_config(1500);
  cfg.messages_mean = {20, 20, 20, 20, 60, 20};
  const auto sites = fixtures::synth_sites(cfg);
  const auto a = corpus_analysis(sites, cfg.catalog, cfg.tz_offset_hours);
  const int museum = cfg.catalog.index_of("museum");
  for (int b = 0; b < 3; ++b) EXPECT_NEAR(a.distance_pct[museum][b], cfg.distance_profile[museum][b], 2.0);
  for (int p = 0; p < 7; ++p) EXPECT_NEAR(a.day_period_pct[museum][p], cfg.day_period_profile[museum][p] * 100.0 /
      std::accumulate(cfg.day_period_profile[museum].begin(), cfg.day_period_profile[museum].end(), 0.0), 2.0);
}
