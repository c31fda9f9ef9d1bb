#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "geoloc/evaluation.hpp"
#include "test_corpus.hpp"

using namespace geoloc;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Upper tail of the chi-square distribution via the Wilson-Hilferty cube-root
// normal approximation (accurate for the tens of degrees of freedom used here).
double chi_square_p_value(double x, double dof) {
  const double z = (std::cbrt(x / dof) - (1.0 - 2.0 / (9.0 * dof))) / std::sqrt(2.0 / (9.0 * dof));
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

}  // namespace

TEST(Synth, AllNoiseTokensIndependentOfClass) {
  SynthConfig cfg;
  cfg.noise_rate = 1.0;
  cfg.noise_vocab = 60;
  const auto out = generate(cfg);
  // Contingency table token x {school, health}, 5000 tokens from each.
  std::map<std::string, std::array<double, 2>> table;
  std::array<double, 2> taken{0, 0};
  for (std::size_t i = 0; i < out.messages.size(); ++i) {
    const int truth = *out.entities[out.provenance[i].first].truth;
    const int col = truth == 0 ? 0 : truth == 5 ? 1 : -1;
    if (col < 0) continue;
    for (const auto& t : tokenize(out.messages[i].text)) {
      if (taken[col] >= 5000) break;
      table[t][col] += 1.0;
      taken[col] += 1.0;
    }
  }
  ASSERT_EQ(taken[0], 5000.0);
  ASSERT_EQ(taken[1], 5000.0);
  // Pool cells with small expectation into one row.
  std::array<double, 2> other{0, 0};
  std::vector<std::array<double, 2>> rows;
  for (const auto& [tok, r] : table) {
    if (r[0] + r[1] < 10) {
      other[0] += r[0];
      other[1] += r[1];
    } else {
      rows.push_back(r);
    }
  }
  if (other[0] + other[1] > 0) rows.push_back(other);
  double chi = 0;
  for (const auto& r : rows) {
    const double e = (r[0] + r[1]) / 2.0;
    chi += (r[0] - e) * (r[0] - e) / e + (r[1] - e) * (r[1] - e) / e;
  }
  const double dof = static_cast<double>(rows.size() - 1);
  EXPECT_GT(chi_square_p_value(chi, dof), 0.01) << "chi2 " << chi << " dof " << dof;
}

TEST(Synth, PriorsWithinTwoPoints) {
  SynthConfig cfg;
  const auto out = generate(cfg);
  std::vector<double> n(6, 0.0);
  for (const auto& e : out.entities) n[*e.truth] += 1.0;
  for (int k = 0; k < 6; ++k) EXPECT_NEAR(n[k] / cfg.locations, cfg.priors[k], 0.02);
}

TEST(Synth, DistanceLandsInSampledBin) {
  SynthConfig cfg;
  cfg.locations = 200;
  const auto out = generate(cfg);
  for (std::size_t i = 0; i < out.messages.size(); ++i) {
    const auto& [ei, bin] = out.provenance[i];
    const double d = haversine_m(out.messages[i].point, out.entities[ei].point);
    EXPECT_EQ(static_cast<int>(distance_bin(d)), bin) << d;
    EXPECT_LE(d, 20.0);
  }
  // Every message is found again by ingest, at exactly one site.
  IngestConfig ic;
  std::size_t attached = 0;
  for (const auto& r : associate(out.messages, out.entities, ic)) attached += r.messages.size();
  EXPECT_EQ(attached, out.messages.size());
}

TEST(Synth, MessagesAreWellFormed) {
  SynthConfig cfg;
  cfg.locations = 100;
  const auto out = generate(cfg);
  for (const auto& m : out.messages) {
    ASSERT_TRUE(m.pos_tags.has_value());
    EXPECT_EQ(m.pos_tags->size(), tokenize(m.text).size());
    const double h = local_hour(m.timestamp, cfg.tz_offset_hours);
    EXPECT_GE(h, 0.0);
    EXPECT_LT(h, 24.0);
  }
}

TEST(Synth, FilesAreDeterministic) {
  SynthConfig cfg;
  cfg.locations = 60;
  const auto base = fs::temp_directory_path() / "geoloc_synth_test";
  fs::remove_all(base);
  write_synth(cfg, (base / "a").string());
  write_synth(cfg, (base / "b").string());
  for (const char* f : {"entities.jsonl", "messages.jsonl", "embeddings.txt", "manifest.json"}) {
    EXPECT_EQ(slurp(base / "a" / f), slurp(base / "b" / f)) << f;
  }
  cfg.seed = 7;
  write_synth(cfg, (base / "c").string());
  EXPECT_NE(slurp(base / "a" / "messages.jsonl"), slurp(base / "c" / "messages.jsonl"));
  // The written files load back through the regular ingest path.
  EXPECT_EQ(load_messages((base / "a" / "messages.jsonl").string()).errors.size(), 0u);
  EXPECT_EQ(load_entities((base / "a" / "entities.jsonl").string(), cfg.catalog).items.size(), 60u);
}

TEST(Synth, CleanDisjointCorpusIsSeparable) {
  SynthConfig cfg;
  cfg.noise_rate = 0.0;
  const auto sites = fixtures::synth_sites(cfg);
  ModelSpec spec;
  SplitPlan plan;
  plan.repetitions = 3;
  EXPECT_GE(run_eval(sites, cfg.catalog, spec, plan).mean_accuracy, 0.95);
}

TEST(Synth, AccuracyFallsWithNoise) {
  ModelSpec spec;
  spec.kind = ModelKind::nb;
  SplitPlan plan;
  plan.repetitions = 2;
  std::vector<double> mean;
  for (double rho : {0.0, 0.3, 0.6, 0.9}) {
    double acc = 0;
    for (std::uint64_t seed : {1, 2, 3}) {
      SynthConfig cfg;
      cfg.locations = 200;
      cfg.noise_rate = rho;
      cfg.signal_share = 0.3;
      cfg.messages_mean = {4, 5, 6, 6, 6, 4};
      cfg.seed = seed;
      acc += run_eval(fixtures::synth_sites(cfg), cfg.catalog, spec, plan).mean_accuracy / 3;
    }
    mean.push_back(acc);
  }
  for (std::size_t i = 1; i < mean.size(); ++i) EXPECT_LE(mean[i], mean[i - 1] + 0.02) << i;
  EXPECT_LT(mean.back(), mean.front());
}

TEST(Synth, ConfigValidation) {
  SynthConfig cfg;
  cfg.priors = {0.5, 0.5};
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = SynthConfig{};
  cfg.noise_rate = 1.5;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = SynthConfig{};
  cfg.phrase_rate = 0.1;
  cfg.phrase_pool = 7;
  EXPECT_THROW(cfg.validate(), ValidationError);
}
