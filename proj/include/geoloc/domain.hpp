#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

namespace geoloc {

// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

inline constexpr double kEarthRadiusM = 6'371'000.0;

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;

  friend bool operator==(const LatLon&, const LatLon&) = default;
};

inline bool in_bounds(const LatLon& p) {
  return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 &&
         p.lat <= 90.0 && p.lon >= -180.0 && p.lon <= 180.0;
}

inline void require_in_bounds(const LatLon& p) {
  if (!in_bounds(p)) {
    throw ValidationError("coordinate out of bounds: (" + std::to_string(p.lat) +
                          ", " + std::to_string(p.lon) + ")");
  }
}

// Great-circle distance in meters on a sphere of radius kEarthRadiusM.
inline double haversine_m(const LatLon& a, const LatLon& b) {
  require_in_bounds(a);
  require_in_bounds(b);
  constexpr double kRad = std::numbers::pi / 180.0;
  const double phi1 = a.lat * kRad;
  const double phi2 = b.lat * kRad;
  const double dphi = (b.lat - a.lat) * kRad;
  const double dlambda = (b.lon - a.lon) * kRad;
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusM * std::asin(std::sqrt(h));
}

// Point reached by travelling `distance_m` from `origin` on initial bearing
// `bearing_rad` (clockwise from north) along a great circle.
inline LatLon destination_point(const LatLon& origin, double distance_m,
                                double bearing_rad) {
  constexpr double kRad = std::numbers::pi / 180.0;
  const double delta = distance_m / kEarthRadiusM;
  const double phi1 = origin.lat * kRad;
  const double lambda1 = origin.lon * kRad;
  const double phi2 =
      std::asin(std::sin(phi1) * std::cos(delta) +
                std::cos(phi1) * std::sin(delta) * std::cos(bearing_rad));
  const double lambda2 =
      lambda1 + std::atan2(std::sin(bearing_rad) * std::sin(delta) * std::cos(phi1),
                           std::cos(delta) - std::sin(phi1) * std::sin(phi2));
  double lon = lambda2 / kRad;
  if (lon > 180.0) lon -= 360.0;
  if (lon < -180.0) lon += 360.0;
  return {phi2 / kRad, lon};
}

struct LocationType {
  int index = 0;
  std::string name;

  friend bool operator==(const LocationType&, const LocationType&) = default;
};

// Ordered, fixed set of location types. Indices are dense 0..size()-1.
class TypeCatalog {
 public:
  TypeCatalog() = default;

  explicit TypeCatalog(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.empty()) throw ValidationError("type catalog is empty");
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (!index_.emplace(names_[i], static_cast<int>(i)).second) {
        throw ValidationError("duplicate type name in catalog: " + names_[i]);
      }
    }
  }

  static TypeCatalog default_catalog() {
    return TypeCatalog({"school", "university", "church", "shop", "museum", "health"});
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(int index) const { return names_.at(static_cast<std::size_t>(index)); }
  LocationType at(int index) const { return {index, name(index)}; }

  std::optional<int> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  int index_of(const std::string& name) const {
    auto idx = find(name);
    if (!idx) throw ValidationError("unknown location type: " + name);
    return *idx;
  }

  friend bool operator==(const TypeCatalog& a, const TypeCatalog& b) {
    return a.names_ == b.names_;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
};

struct GeotaggedMessage {
  std::string id;
  LatLon point;
  std::int64_t timestamp = 0;  // UTC epoch seconds
  std::string text;
  std::optional<std::vector<std::string>> pos_tags;

  LatLon location() const { return point; }
};

struct SiteMessage {
  GeotaggedMessage message;
  double distance_m = 0.0;
};

struct SiteRecord {
  std::string id;
  LatLon point;
  std::optional<int> truth;  // index into the catalog
  std::vector<SiteMessage> messages;
};

// Canonical message order inside a SiteRecord.
inline bool message_order_less(const GeotaggedMessage& a, const GeotaggedMessage& b) {
  return std::tie(a.timestamp, a.id) < std::tie(b.timestamp, b.id);
}

inline void sort_messages(SiteRecord& record) {
  std::sort(record.messages.begin(), record.messages.end(),
            [](const SiteMessage& a, const SiteMessage& b) {
              return message_order_less(a.message, b.message);
            });
}

// Local hour of day in [0, 24) after applying a fixed UTC offset.
inline double local_hour(std::int64_t utc_epoch_s, double tz_offset_hours) {
  const double shifted = static_cast<double>(utc_epoch_s) + tz_offset_hours * 3600.0;
  double sec_of_day = std::fmod(shifted, 86400.0);
  if (sec_of_day < 0) sec_of_day += 86400.0;
  return sec_of_day / 3600.0;
}

inline constexpr double kDefaultTzOffsetHours = -5.0;

}  // namespace geoloc
