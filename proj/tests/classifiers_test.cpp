#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "geoloc/classifiers.hpp"
#include "geoloc/random.hpp"

using namespace geoloc;

namespace {

Dataset random_dataset(Rng& rng, std::size_t n, std::size_t width, std::size_t c, bool allow_negative = false) {
  Dataset d;
  d.width = width;
  d.num_classes = c;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(width);
    for (auto& v : row) {
      if (rng.uniform() < 0.4) v = 0.0;
      else v = allow_negative ? rng.uniform(-3, 3) : std::floor(rng.uniform(0, 4));
    }
    d.x.push_back(from_dense(row));
    d.y.push_back(static_cast<int>(i % c));
  }
  return d;
}

// Exhaustive multinomial NB posterior straight from the definition.
std::vector<double> nb_oracle(const std::vector<std::vector<double>>& xs, const std::vector<int>& ys,
                              std::size_t c, const std::vector<double>& q, double alpha) {
  const std::size_t w = q.size();
  std::vector<double> joint(c);
  for (std::size_t k = 0; k < c; ++k) {
    double nk = 0, total = 0;
    std::vector<double> cnt(w, 0.0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (ys[i] != static_cast<int>(k)) continue;
      ++nk;
      for (std::size_t j = 0; j < w; ++j) {
        cnt[j] += xs[i][j];
        total += xs[i][j];
      }
    }
    double p = nk / static_cast<double>(xs.size());
    for (std::size_t j = 0; j < w; ++j) p *= std::pow((cnt[j] + alpha) / (total + alpha * w), q[j]);
    joint[k] = p;
  }
  const double z = std::accumulate(joint.begin(), joint.end(), 0.0);
  for (auto& v : joint) v /= z;
  return joint;
}

}  // namespace

TEST(Softmax, SumsToOneAndShiftInvariant) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> s(6);
    for (auto& v : s) v = rng.uniform(-50, 50);
    const auto p = softmax(s);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    auto shifted = s;
    for (auto& v : shifted) v += 1234.5;
    EXPECT_EQ(argmax(s), argmax(shifted));
    EXPECT_EQ(argmax(p), argmax(softmax(shifted)));
  }
  EXPECT_EQ(argmax(std::vector<double>{1, 3, 3}), 1);
}

TEST(Logit, SeparableOneDimensional) {
  Dataset d;
  d.width = 1;
  d.num_classes = 2;
  d.x = {from_dense(std::vector<double>{1.0}), from_dense(std::vector<double>{-1.0})};
  d.y = {0, 1};
  auto m = train_logit(d, {0.0, 1000, 1e-6});
  EXPECT_EQ(m.predict(d.x[0]), 0);
  EXPECT_EQ(m.predict(d.x[1]), 1);
}

TEST(Logit, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  Dataset d = random_dataset(rng, 5, 4, 3, true);
  const auto scale = column_scale(d);
  const std::size_t n = (d.width + 1) * d.num_classes;
  for (double lambda : {0.0, 0.7}) {
    std::vector<double> w(n);
    for (auto& v : w) v = rng.uniform(-1, 1);
    std::vector<double> g;
    logit_objective(w, d, scale, lambda, &g);
    double worst = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double h = 1e-5;
      auto wp = w, wm = w;
      wp[i] += h;
      wm[i] -= h;
      const double fd = (logit_objective(wp, d, scale, lambda, nullptr) -
                         logit_objective(wm, d, scale, lambda, nullptr)) / (2 * h);
      worst = std::max(worst, std::abs(fd - g[i]) / std::max(1.0, std::abs(fd)));
    }
    EXPECT_LE(worst, 1e-5) << "lambda " << lambda;
  }
}

TEST(Logit, HeavyPenaltyLeavesLogPriorBias) {
  Rng rng(3);
  Dataset d = random_dataset(rng, 60, 5, 3);
  d.y.assign(60, 0);
  for (int i = 0; i < 15; ++i) d.y[i] = 1;
  for (int i = 15; i < 20; ++i) d.y[i] = 2;
  auto m = train_logit(d, {1e9, 1000, 1e-9});
  const auto p = m.predict_proba(FeatureVector{});
  EXPECT_NEAR(p[0], 40.0 / 60, 1e-4);
  EXPECT_NEAR(p[1], 15.0 / 60, 1e-4);
  EXPECT_NEAR(p[2], 5.0 / 60, 1e-4);
  for (std::size_t j = 0; j < d.width * d.num_classes; ++j) EXPECT_NEAR(m.weights[j], 0.0, 1e-6);
  for (const auto& x : d.x) EXPECT_EQ(m.predict(x), 0);
}

TEST(Logit, ZeroWeightsAreUniform) {
  LogitModel m;
  m.width = 2;
  m.num_classes = 4;
  m.weights.assign(12, 0.0);
  m.scale.assign(2, 1.0);
  for (double v : m.predict_proba(from_dense(std::vector<double>{3.0, 1.0}))) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Logit, ConvergesAndIsDeterministic) {
  Rng rng(4);
  Dataset d = random_dataset(rng, 80, 6, 3);
  auto a = train_logit(d, {1.0, 1000, 1e-6});
  auto b = train_logit(d, {1.0, 1000, 1e-6});
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_LT(a.iterations, 1000);
  std::vector<double> g;
  logit_objective(a.weights, d, a.scale, 1.0, &g);
  for (double v : g) EXPECT_LT(std::abs(v), 1e-6);
}

TEST(Logit, JsonRoundTrip) {
  Rng rng(5);
  Dataset d = random_dataset(rng, 30, 4, 2);
  auto m = train_logit(d);
  auto back = LogitModel::from_json(nlohmann::json::parse(m.to_json().dump()));
  for (const auto& x : d.x) EXPECT_EQ(back.scores(x), m.scores(x));
}

TEST(NaiveBayes, MatchesBruteForcePosterior) {
  const std::vector<std::vector<double>> xs{{2, 0}, {1, 1}, {0, 3}};
  const std::vector<int> ys{0, 0, 1};
  Dataset d;
  d.width = 2;
  d.num_classes = 2;
  for (const auto& r : xs) d.x.push_back(from_dense(r));
  d.y = ys;
  auto m = train_nb(d, 1.0);
  for (const std::vector<double> q : {std::vector<double>{1, 0}, {0, 1}, {2, 3}, {0, 0}}) {
    const auto p = m.predict_proba(from_dense(q));
    const auto o = nb_oracle(xs, ys, 2, q, 1.0);
    EXPECT_NEAR(p[0], o[0], 1e-9);
    EXPECT_NEAR(p[1], o[1], 1e-9);
  }
}

TEST(NaiveBayes, SingleClassAndUninformative) {
  Dataset d;
  d.width = 2;
  d.num_classes = 1;
  d.x = {from_dense(std::vector<double>{1, 2})};
  d.y = {0};
  auto m = train_nb(d);
  EXPECT_EQ(m.predict(from_dense(std::vector<double>{0, 5})), 0);
  EXPECT_DOUBLE_EQ(m.predict_proba(from_dense(std::vector<double>{0, 5}))[0], 1.0);

  Dataset u;
  u.width = 2;
  u.num_classes = 2;
  u.x = {from_dense(std::vector<double>{1, 1}), from_dense(std::vector<double>{1, 1}),
         from_dense(std::vector<double>{1, 1})};
  u.y = {0, 0, 1};
  auto mu = train_nb(u);
  const auto p = mu.predict_proba(from_dense(std::vector<double>{4, 4}));
  EXPECT_NEAR(p[0], 2.0 / 3, 1e-12);
}

TEST(NaiveBayes, LogJointAdditiveOverCountSplits) {
  Rng rng(6);
  Dataset d = random_dataset(rng, 40, 5, 3);
  auto m = train_nb(d);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(5), b(5), s(5);
    for (int j = 0; j < 5; ++j) {
      a[j] = std::floor(rng.uniform(0, 3));
      b[j] = std::floor(rng.uniform(0, 3));
      s[j] = a[j] + b[j];
    }
    const auto la = m.log_joint(from_dense(a));
    const auto lb = m.log_joint(from_dense(b));
    const auto ls = m.log_joint(from_dense(s));
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(ls[k], la[k] + lb[k] - m.log_prior[k], 1e-9);
  }
}

TEST(NaiveBayes, NegativeColumnsAreShifted) {
  Rng rng(7);
  Dataset d = random_dataset(rng, 30, 3, 2, true);
  auto m = train_nb(d);
  EXPECT_FALSE(m.shift.empty());
  // Same model as training NB on the explicitly shifted dense data.
  Dataset shifted = d;
  for (auto& x : shifted.x) {
    auto row = x.dense(d.width);
    for (const auto& [j, a] : m.shift) row[j] += a;
    x = from_dense(row);
  }
  auto ref = train_nb(shifted);
  for (const auto& x : d.x) {
    auto row = x.dense(d.width);
    for (const auto& [j, a] : m.shift) row[j] += a;
    const auto p = m.predict_proba(x);
    const auto q = ref.predict_proba(from_dense(row));
    for (int k = 0; k < 2; ++k) EXPECT_NEAR(p[k], q[k], 1e-12);
  }
  auto back = NaiveBayesModel::from_json(nlohmann::json::parse(m.to_json().dump()));
  EXPECT_EQ(back.predict_proba(d.x[0]), m.predict_proba(d.x[0]));
}

TEST(Baselines, MajorityTieGoesToLowestIndex) {
  auto m = train_baseline(BaselineKind::majority, std::vector<int>{2, 1, 2, 1, 0}, 3);
  EXPECT_EQ(m.predict("x"), 1);
}

TEST(Baselines, MajorityAccuracyOnDefaultPriors) {
  const std::vector<double> priors{0.327, 0.08, 0.154, 0.098, 0.065, 0.276};
  std::vector<int> labels;
  for (int k = 0; k < 6; ++k) labels.insert(labels.end(), static_cast<int>(std::lround(priors[k] * 10000)), k);
  auto m = train_baseline(BaselineKind::majority, labels, 6);
  double hit = 0;
  for (int y : labels) hit += m.predict("") == y;
  EXPECT_NEAR(hit / labels.size(), 0.327, 0.005);
}

TEST(Baselines, RandomIsUniformAndReproducible) {
  auto m = train_baseline(BaselineKind::random, std::vector<int>{0, 1}, 6, 99);
  std::vector<int> hist(6, 0);
  const int n = 60000;
  for (int i = 0; i < n; ++i) {
    const auto key = "site" + std::to_string(i);
    const int p = m.predict(key);
    EXPECT_EQ(p, m.predict(key));
    ++hist[p];
  }
  for (int h : hist) EXPECT_NEAR(h / double(n), 1.0 / 6, 0.01);
}

TEST(Baselines, SingleClass) {
  EXPECT_EQ(train_baseline(BaselineKind::majority, std::vector<int>{0}, 1).predict("a"), 0);
  EXPECT_EQ(train_baseline(BaselineKind::random, std::vector<int>{0}, 1).predict("a"), 0);
}
