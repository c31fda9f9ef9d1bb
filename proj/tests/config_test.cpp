#include <sstream>

#include <gtest/gtest.h>

#include "geoloc/config.hpp"

using namespace geoloc;

TEST(RunConfig, DefaultsProduceValidViews) {
  RunConfig c;
  EXPECT_EQ(c.seed(), 42u);
  EXPECT_EQ(c.synth().locations, 600);
  EXPECT_EQ(c.ingest().radius_m, 20.0);
  const auto spec = c.model_spec();
  EXPECT_EQ(spec.families, FamilySet{Family::ngrams});
  EXPECT_EQ(spec.cnn.widths, (std::vector<std::size_t>{3, 4, 5}));
  const auto plan = c.split_plan();
  EXPECT_EQ(plan.repetitions, 10);
  EXPECT_EQ(plan.train_pct, 64);
  EXPECT_EQ(c.eval_options().lambda_grid, (std::vector<double>{0.01, 0.1, 1, 10}));
  EXPECT_TRUE(c.eval_options().family_candidates.empty());
}

TEST(RunConfig, ParsesFileWithComments) {
  std::istringstream in("# settings\nseed = 7\n\nfamilies = ngrams+lm  # two\nsplit = 80:10:10\n");
  auto c = RunConfig::parse(in);
  EXPECT_EQ(c.seed(), 7u);
  EXPECT_EQ(c.model_spec().families, (FamilySet{Family::ngrams, Family::lm}));
  EXPECT_EQ(c.split_plan().test_pct, 10);
  EXPECT_EQ(c.synth().seed, 7u);
}

TEST(RunConfig, UnknownKeyReportsLine) {
  std::istringstream in("seed = 1\nbogus = 2\n");
  try {
    RunConfig::parse(in, "x.conf");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("x.conf:2"), std::string::npos);
  }
}

TEST(RunConfig, BadValues) {
  RunConfig c;
  c.set("seed", "abc");
  EXPECT_THROW(c.seed(), ValidationError);
  c = RunConfig{};
  c.set("split", "50:50");
  EXPECT_THROW(c.split_plan(), ValidationError);
  c = RunConfig{};
  c.set("families", "words");
  EXPECT_THROW(c.model_spec(), ValidationError);
  c = RunConfig{};
  c.set("subsample", "maybe");
  EXPECT_THROW(c.ingest(), ValidationError);
  EXPECT_THROW(c.set_assignment("novalue"), ValidationError);
  EXPECT_THROW(c.set("nope", "1"), ValidationError);
}

TEST(RunConfig, FamilySearch) {
  RunConfig c;
  c.set("family_search", "powerset");
  EXPECT_EQ(c.eval_options().family_candidates.size(), 31u);
  c.set_assignment("family_search = ngrams;ngrams+lm");
  const auto o = c.eval_options();
  ASSERT_EQ(o.family_candidates.size(), 2u);
  EXPECT_EQ(o.family_candidates[1], (FamilySet{Family::ngrams, Family::lm}));
}

TEST(RunConfig, DumpRoundTrips) {
  RunConfig c;
  c.set("l2_lambda", "0.5");
  std::istringstream in(c.dump());
  auto back = RunConfig::parse(in);
  EXPECT_EQ(back.to_json(), c.to_json());
}
