#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "geoloc/domain.hpp"
#include "geoloc/random.hpp"

using namespace geoloc;

namespace {

// Independent oracle: spherical law of cosines.
double law_of_cosines_m(LatLon a, LatLon b) {
  const double r = std::numbers::pi / 180.0;
  const double c = std::sin(a.lat * r) * std::sin(b.lat * r) +
                   std::cos(a.lat * r) * std::cos(b.lat * r) * std::cos((b.lon - a.lon) * r);
  return 6371000.0 * std::acos(std::clamp(c, -1.0, 1.0));
}

}  // namespace

TEST(Haversine, ZeroForIdenticalPoints) {
  EXPECT_EQ(haversine_m({40.75, -73.98}, {40.75, -73.98}), 0.0);
}

TEST(Haversine, OneDegreeOfLatitude) {
  // 2 * pi * R / 360
  EXPECT_NEAR(haversine_m({0.0, 10.0}, {1.0, 10.0}), 111194.93, 0.1);
  EXPECT_NEAR(haversine_m({45.0, -70.0}, {46.0, -70.0}), 111194.93, 0.1);
}

TEST(Haversine, MatchesLawOfCosinesOnRandomPairs) {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    LatLon a{rng.uniform(-89, 89), rng.uniform(-180, 180)};
    LatLon b{rng.uniform(-89, 89), rng.uniform(-180, 180)};
    const double h = haversine_m(a, b);
    const double o = law_of_cosines_m(a, b);
    EXPECT_NEAR(h, o, 0.005 * o + 1e-6);
  }
}

TEST(Haversine, SymmetricAndNonNegative) {
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    LatLon a{rng.uniform(-90, 90), rng.uniform(-180, 180)};
    LatLon b{rng.uniform(-90, 90), rng.uniform(-180, 180)};
    EXPECT_GE(haversine_m(a, b), 0.0);
    EXPECT_DOUBLE_EQ(haversine_m(a, b), haversine_m(b, a));
  }
}

TEST(Haversine, RejectsOutOfBounds) {
  EXPECT_THROW(haversine_m({91.0, 0.0}, {0.0, 0.0}), ValidationError);
  EXPECT_THROW(haversine_m({0.0, 0.0}, {0.0, -180.5}), ValidationError);
  EXPECT_THROW(haversine_m({std::nan(""), 0.0}, {0.0, 0.0}), ValidationError);
}

TEST(DestinationPoint, RoundTripsDistance) {
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    LatLon o{rng.uniform(-60, 60), rng.uniform(-170, 170)};
    const double d = rng.uniform(0.01, 20.0);
    const auto p = destination_point(o, d, rng.uniform(0, 2 * std::numbers::pi));
    EXPECT_NEAR(haversine_m(o, p), d, 1e-6);
  }
}

TEST(TypeCatalog, DefaultOrder) {
  const auto c = TypeCatalog::default_catalog();
  ASSERT_EQ(c.size(), 6u);
  EXPECT_EQ(c.name(0), "school");
  EXPECT_EQ(c.name(5), "health");
  EXPECT_EQ(c.index_of("museum"), 4);
  EXPECT_FALSE(c.find("bar").has_value());
  EXPECT_THROW(c.index_of("bar"), ValidationError);
}

TEST(TypeCatalog, RejectsDuplicates) {
  EXPECT_THROW(TypeCatalog({"a", "b", "a"}), ValidationError);
  EXPECT_THROW(TypeCatalog(std::vector<std::string>{}), ValidationError);
}

TEST(Messages, SortedByTimestampThenId) {
  SiteRecord r;
  auto msg = [](std::string id, std::int64_t ts) {
    GeotaggedMessage m;
    m.id = std::move(id);
    m.timestamp = ts;
    return SiteMessage{m, 1.0};
  };
  r.messages = {msg("b", 5), msg("a", 5), msg("c", 1)};
  sort_messages(r);
  EXPECT_EQ(r.messages[0].message.id, "c");
  EXPECT_EQ(r.messages[1].message.id, "a");
  EXPECT_EQ(r.messages[2].message.id, "b");
}

TEST(LocalHour, AppliesOffset) {
  // 2014-01-01T00:00:00Z is 19:00 the previous day at UTC-5.
  EXPECT_DOUBLE_EQ(local_hour(1388534400, -5.0), 19.0);
  EXPECT_DOUBLE_EQ(local_hour(1388534400, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(local_hour(1388534400 + 5 * 3600 + 1800, -5.0), 0.5);
}

TEST(Rng, DeterministicAndInRange) {
  Rng a(123), b(123);
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.index(7);
    EXPECT_EQ(x, b.index(7));
    EXPECT_LT(x, 7u);
  }
  Rng c(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Rng, PoissonMean) {
  Rng r(3);
  double s = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) s += r.poisson(9.0);
  EXPECT_NEAR(s / n, 9.0, 0.1);
}
