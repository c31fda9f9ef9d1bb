#include <gtest/gtest.h>

#include "geoloc/pipeline.hpp"

using namespace geoloc;

namespace {

AggregationProfile two_class_profile() {
  AggregationProfile p;
  p.learned = {{0.8, 0.2}, {0.3, 0.7}};
  p.priors = {0.5, 0.5};
  return p;
}

SiteRecord site(const std::string& id, int truth, const std::vector<std::string>& texts) {
  SiteRecord r;
  r.id = id;
  r.point = {40.75, -73.98};
  r.truth = truth;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    GeotaggedMessage m;
    m.id = id + "-" + std::to_string(i);
    m.point = r.point;
    m.timestamp = 1388534400 + static_cast<std::int64_t>(i) * 3600;
    m.text = texts[i];
    r.messages.push_back({m, 0.0});
  }
  return r;
}

}  // namespace

TEST(Aggregate, DiagonalHandCases) {
  const auto p = two_class_profile();
  auto a = aggregate({0.8, 0.2}, p);
  EXPECT_EQ(a.label, 0);
  EXPECT_NEAR(a.scores[0], 0.0, 1e-15);
  EXPECT_NEAR(a.scores[1], -0.5, 1e-15);
  EXPECT_EQ(aggregate({0.3, 0.7}, p).label, 1);
}

TEST(Aggregate, IdentityProfilePicksObservedClass) {
  AggregationProfile p;
  p.learned = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  p.priors = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  for (int k = 0; k < 3; ++k) {
    LabelDistribution e(3, 0.0);
    e[k] = 1.0;
    EXPECT_EQ(aggregate(e, p).label, k);
    EXPECT_EQ(aggregate(e, p, AggregationRule::l1).label, k);
  }
}

TEST(Aggregate, TiesAreDeterministic) {
  AggregationProfile p;
  p.learned = {{0.5, 0.5}, {0.5, 0.5}};
  p.priors = {0.5, 0.5};
  // Equal scores; the higher observed fraction wins.
  EXPECT_EQ(aggregate({0.4, 0.6}, p).label, 1);
  // Fully tied: lowest index.
  EXPECT_EQ(aggregate({0.5, 0.5}, p).label, 0);
  EXPECT_EQ(aggregate({0.5, 0.5}, p, AggregationRule::l1).label, 0);
  EXPECT_THROW(aggregate({1.0}, p), ValidationError);
}

TEST(Aggregate, L1Rule) {
  const auto p = two_class_profile();
  auto r = aggregate({0.6, 0.4}, p, AggregationRule::l1);
  EXPECT_NEAR(r.scores[0], -0.4, 1e-12);
  EXPECT_NEAR(r.scores[1], -0.6, 1e-12);
  EXPECT_EQ(r.label, 0);
}

TEST(FitProfile, PerfectStepOneGivesIdentity) {
  std::vector<LabeledPredictions> s{{0, {0, 0, 0}}, {1, {1}}, {2, {2, 2}}, {1, {1, 1}}};
  auto p = fit_profile(s, 3);
  for (int c = 0; c < 3; ++c) {
    for (int l = 0; l < 3; ++l) EXPECT_EQ(p.learned[c][l], c == l ? 1.0 : 0.0);
  }
  EXPECT_DOUBLE_EQ(p.priors[1], 0.5);
}

TEST(FitProfile, ConstantStepOne) {
  std::vector<LabeledPredictions> s{{0, {0, 0}}, {1, {0}}, {2, {0, 0, 0}}};
  auto p = fit_profile(s, 3);
  for (const auto& row : p.learned) EXPECT_EQ(row, (LabelDistribution{1, 0, 0}));
}

TEST(FitProfile, HandAveragedRows) {
  // Two sites of class 0: fractions (3/4, 1/4) and (1/2, 1/2); one of class 1: (0, 1).
  std::vector<LabeledPredictions> s{{0, {0, 0, 0, 1}}, {0, {0, 1}}, {1, {1, 1}}};
  auto p = fit_profile(s, 2);
  EXPECT_DOUBLE_EQ(p.learned[0][0], 0.625);
  EXPECT_DOUBLE_EQ(p.learned[0][1], 0.375);
  EXPECT_DOUBLE_EQ(p.learned[1][1], 1.0);
  EXPECT_DOUBLE_EQ(p.priors[0], 2.0 / 3);
}

TEST(FitProfile, MissingClassGetsUniformRow) {
  auto p = fit_profile(std::vector<LabeledPredictions>{{0, {0}}}, 2);
  EXPECT_EQ(p.learned[1], (LabelDistribution{0.5, 0.5}));
  EXPECT_EQ(p.diagnostics.size(), 1u);
}

TEST(ClassifyPipeline, EmptyRecordUsesPriors) {
  AggregationProfile p = two_class_profile();
  p.priors = {0.2, 0.8};
  SiteRecord r;
  auto d = classify_pipeline(r, [](const SiteMessage&) { return 0; }, p);
  EXPECT_TRUE(d.empty);
  EXPECT_EQ(d.label, 1);
}

TEST(ClassifyPipeline, MatchingProfileRowWins) {
  // Observed matches row 2; other rows have learned[r][r] above observed[r].
  AggregationProfile p;
  p.learned = {{0.9, 0.05, 0.05}, {0.1, 0.8, 0.1}, {0.25, 0.25, 0.5}};
  p.priors = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  auto r = site("s", 2, {"a", "b", "c", "d"});
  const std::vector<int> step1 = {2, 0, 1, 2};
  std::size_t i = 0;
  auto d = classify_pipeline(r, [&](const SiteMessage&) { return step1[i++]; }, p);
  EXPECT_EQ(d.observed, (LabelDistribution{0.25, 0.25, 0.5}));
  EXPECT_EQ(d.label, 2);
}

TEST(JointVsPipeline, SingleMessageSiteMatchesStepOne) {
  std::vector<SiteRecord> train;
  const std::vector<std::string> a = {"coffee sale today", "coffee shop", "big sale"};
  const std::vector<std::string> b = {"mass pray", "church mass", "pray now"};
  for (int i = 0; i < 12; ++i) {
    train.push_back(site("a" + std::to_string(i), 0, {a[i % 3], a[(i + 1) % 3]}));
    train.push_back(site("b" + std::to_string(i), 1, {b[i % 3], b[(i + 2) % 3]}));
  }
  ModelSpec spec;
  spec.families = {Family::textual, Family::ngrams, Family::lm};
  spec.ngram_threshold = 2;
  const auto units = message_units(train);
  auto reg = fit_message_registry(units, spec, 2);
  auto lin = train_linear(featurize_messages(units, reg, spec.tz_offset_hours), spec.linear_config());

  MessageModel mm;
  mm.num_classes = 2;
  mm.registry = reg;
  mm.linear = lin;
  JointModel jm;
  jm.num_classes = 2;
  jm.registry = FeatureRegistry(FeatureMode::joint, reg.families(), reg.threshold(), reg.ngrams(), reg.lms(), 2);
  jm.linear = lin;
  for (const std::string t : {"coffee mass", "sale sale pray", "church", "nothing here", "coffee shop"}) {
    auto s = site("q", 0, {t});
    EXPECT_EQ(classify_joint(s, jm), mm.predict(s.messages[0].message, s.point)) << t;
  }
}

TEST(ModelSpec, NamesRoundTrip) {
  for (auto k : {ModelKind::logit, ModelKind::nb, ModelKind::cnn, ModelKind::majority, ModelKind::random}) {
    EXPECT_EQ(model_kind_from_name(model_kind_name(k)), k);
  }
  EXPECT_EQ(approach_from_name("pipeline"), Approach::pipeline);
  EXPECT_EQ(aggregation_from_name("l1"), AggregationRule::l1);
  EXPECT_THROW(model_kind_from_name("svm"), ValidationError);
}
