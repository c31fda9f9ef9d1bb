#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoloc/domain.hpp"
#include "geoloc/features.hpp"
#include "geoloc/random.hpp"

namespace geoloc {

struct IngestConfig {
  double radius_m = 20.0;
  int min_messages = 5;
  bool subsample_to_class_mean = true;
  std::uint64_t seed = 42;

  void validate() const {
    if (!(radius_m > 0.0)) throw ValidationError("radius_m must be > 0");
    if (min_messages < 1) throw ValidationError("min_messages must be >= 1");
  }
};

struct LineError {
  std::size_t line = 0;  // 1-based
  std::string reason;
};

template <typename T>
struct LoadResult {
  std::vector<T> items;
  std::vector<LineError> errors;
  std::size_t lines = 0;  // non-blank lines seen
};

namespace detail {

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

inline bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

inline GeotaggedMessage message_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("line is not a JSON object");
  auto require = [&](const char* key) -> const nlohmann::json& {
    auto it = j.find(key);
    if (it == j.end()) throw ParseError(std::string("missing key '") + key + "'");
    return *it;
  };
  GeotaggedMessage m;
  const auto& id = require("id");
  if (!id.is_string()) throw ParseError("'id' must be a string");
  m.id = id.get<std::string>();
  const auto& lat = require("lat");
  const auto& lon = require("lon");
  if (!lat.is_number() || !lon.is_number()) throw ParseError("'lat'/'lon' must be numbers");
  m.point = {lat.get<double>(), lon.get<double>()};
  if (!in_bounds(m.point)) throw ParseError("coordinate out of bounds");
  const auto& ts = require("ts");
  if (!ts.is_number_integer()) throw ParseError("'ts' must be an integer");
  m.timestamp = ts.get<std::int64_t>();
  const auto& text = require("text");
  if (!text.is_string()) throw ParseError("'text' must be a string");
  m.text = text.get<std::string>();
  if (auto it = j.find("pos"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw ParseError("'pos' must be an array of strings");
    std::vector<std::string> tags;
    for (const auto& t : *it) {
      if (!t.is_string()) throw ParseError("'pos' must be an array of strings");
      tags.push_back(t.get<std::string>());
    }
    if (tags.size() != tokenize(m.text).size()) {
      throw ParseError("'pos' length does not match token count");
    }
    m.pos_tags = std::move(tags);
  }
  return m;
}

inline nlohmann::json message_to_json(const GeotaggedMessage& m) {
  nlohmann::json j;
  j["id"] = m.id;
  j["lat"] = m.point.lat;
  j["lon"] = m.point.lon;
  j["ts"] = m.timestamp;
  j["text"] = m.text;
  if (m.pos_tags) j["pos"] = *m.pos_tags;
  return j;
}

template <typename T, typename Parse>
LoadResult<T> load_jsonl(const std::string& path, double max_error_rate, Parse parse) {
  LoadResult<T> result;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (blank(lines[i])) continue;
    ++result.lines;
    try {
      result.items.push_back(parse(nlohmann::json::parse(lines[i])));
    } catch (const nlohmann::json::exception& e) {
      result.errors.push_back({i + 1, std::string("invalid JSON: ") + e.what()});
    } catch (const Error& e) {
      result.errors.push_back({i + 1, e.what()});
    }
  }
  if (result.lines > 0 &&
      static_cast<double>(result.errors.size()) / static_cast<double>(result.lines) >
          max_error_rate) {
    std::ostringstream os;
    os << path << ": " << result.errors.size() << " malformed of " << result.lines
       << " lines exceeds error budget";
    for (std::size_t k = 0; k < std::min<std::size_t>(result.errors.size(), 5); ++k) {
      os << "; line " << result.errors[k].line << ": " << result.errors[k].reason;
    }
    throw ParseError(os.str());
  }
  return result;
}

}  // namespace detail

inline constexpr double kMaxLineErrorRate = 0.01;

// Reads message JSONL. Malformed lines are collected with their line numbers;
// the load aborts if they exceed `max_error_rate` of all non-blank lines.
inline LoadResult<GeotaggedMessage> load_messages(const std::string& path,
                                                  double max_error_rate = kMaxLineErrorRate) {
  return detail::load_jsonl<GeotaggedMessage>(path, max_error_rate,
                                              detail::message_from_json);
}

// Reads entity JSONL into message-less SiteRecords.
inline LoadResult<SiteRecord> load_entities(const std::string& path, const TypeCatalog& catalog,
                                            double max_error_rate = kMaxLineErrorRate) {
  return detail::load_jsonl<SiteRecord>(
      path, max_error_rate, [&](const nlohmann::json& j) {
        if (!j.is_object()) throw ParseError("line is not a JSON object");
        SiteRecord r;
        if (!j.contains("id") || !j["id"].is_string()) throw ParseError("'id' must be a string");
        r.id = j["id"].get<std::string>();
        if (!j.contains("lat") || !j.contains("lon") || !j["lat"].is_number() ||
            !j["lon"].is_number()) {
          throw ParseError("'lat'/'lon' must be numbers");
        }
        r.point = {j["lat"].get<double>(), j["lon"].get<double>()};
        if (!in_bounds(r.point)) throw ParseError("coordinate out of bounds");
        if (auto it = j.find("type"); it != j.end() && !it->is_null()) {
          if (!it->is_string()) throw ParseError("'type' must be a string");
          auto idx = catalog.find(it->get<std::string>());
          if (!idx) throw ParseError("type not in catalog: " + it->get<std::string>());
          r.truth = *idx;
        }
        return r;
      });
}

// Radius join: every message within cfg.radius_m of an entity is attached to
// it; a message near several entities is attached to each. Output follows
// entity id order, messages sorted by (timestamp, id).
inline std::vector<SiteRecord> associate(const std::vector<GeotaggedMessage>& messages,
                                         std::vector<SiteRecord> entities,
                                         const IngestConfig& cfg) {
  cfg.validate();
  std::sort(entities.begin(), entities.end(),
            [](const SiteRecord& a, const SiteRecord& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < entities.size(); ++i) {
    if (entities[i].id == entities[i - 1].id) {
      throw ValidationError("duplicate entity id: " + entities[i].id);
    }
  }
  std::vector<std::size_t> by_lat(messages.size());
  for (std::size_t i = 0; i < by_lat.size(); ++i) by_lat[i] = i;
  std::sort(by_lat.begin(), by_lat.end(), [&](std::size_t a, std::size_t b) {
    return messages[a].point.lat < messages[b].point.lat;
  });
  // Latitude band bound: one degree of latitude is at least ~110.5 km.
  const double band_deg = cfg.radius_m / 110000.0 + 1e-9;
  for (auto& e : entities) {
    require_in_bounds(e.point);
    e.messages.clear();
    auto lo = std::lower_bound(by_lat.begin(), by_lat.end(), e.point.lat - band_deg,
                               [&](std::size_t i, double v) { return messages[i].point.lat < v; });
    for (auto it = lo; it != by_lat.end() && messages[*it].point.lat <= e.point.lat + band_deg;
         ++it) {
      const auto& m = messages[*it];
      const double d = haversine_m(e.point, m.point);
      if (d <= cfg.radius_m) e.messages.push_back({m, d});
    }
    sort_messages(e);
  }
  return entities;
}

struct SubsampleReport {
  std::size_t dropped_below_min = 0;
  std::size_t subsampled = 0;
  std::vector<double> class_mean;  // per catalog index; NaN if class empty
  std::vector<std::string> warnings;
};

// Drops records below cfg.min_messages, then caps each record of type T at
// ceil(mean_T) messages sampled uniformly without replacement. mean_T is
// taken over the surviving records of type T before any subsampling.
inline std::vector<SiteRecord> filter_and_subsample(std::vector<SiteRecord> records,
                                                    const TypeCatalog& catalog,
                                                    const IngestConfig& cfg,
                                                    SubsampleReport* report = nullptr) {
  cfg.validate();
  SubsampleReport local;
  SubsampleReport& rep = report ? *report : local;
  std::vector<SiteRecord> kept;
  for (auto& r : records) {
    if (static_cast<int>(r.messages.size()) < cfg.min_messages) {
      ++rep.dropped_below_min;
      continue;
    }
    if (!r.truth) throw ValidationError("record without ground truth: " + r.id);
    kept.push_back(std::move(r));
  }
  const std::size_t c = catalog.size();
  std::vector<double> sum(c, 0.0);
  std::vector<std::size_t> count(c, 0);
  for (const auto& r : kept) {
    sum[*r.truth] += static_cast<double>(r.messages.size());
    ++count[*r.truth];
  }
  rep.class_mean.assign(c, std::nan(""));
  for (std::size_t k = 0; k < c; ++k) {
    if (count[k] == 0) {
      rep.warnings.push_back("class '" + catalog.name(static_cast<int>(k)) +
                             "' has no records after filtering");
    } else {
      rep.class_mean[k] = sum[k] / static_cast<double>(count[k]);
    }
  }
  if (!cfg.subsample_to_class_mean) return kept;
  Rng rng(cfg.seed);
  for (auto& r : kept) {
    const auto cap = static_cast<std::size_t>(std::ceil(rep.class_mean[*r.truth]));
    if (r.messages.size() <= cap) continue;
    // Partial Fisher-Yates: the first `cap` slots form a uniform sample.
    for (std::size_t i = 0; i < cap; ++i) {
      const std::size_t j = i + rng.index(r.messages.size() - i);
      std::swap(r.messages[i], r.messages[j]);
    }
    r.messages.resize(cap);
    sort_messages(r);
    ++rep.subsampled;
  }
  return kept;
}

// --- SiteRecord archive (one JSON object per site) -------------------------

inline nlohmann::json site_to_json(const SiteRecord& r, const TypeCatalog& catalog) {
  nlohmann::json j;
  j["id"] = r.id;
  j["lat"] = r.point.lat;
  j["lon"] = r.point.lon;
  if (r.truth) j["type"] = catalog.name(*r.truth);
  auto msgs = nlohmann::json::array();
  for (const auto& sm : r.messages) {
    auto mj = detail::message_to_json(sm.message);
    mj["distance_m"] = sm.distance_m;
    msgs.push_back(std::move(mj));
  }
  j["messages"] = std::move(msgs);
  return j;
}

inline SiteRecord site_from_json(const nlohmann::json& j, const TypeCatalog& catalog) {
  SiteRecord r;
  r.id = j.at("id").get<std::string>();
  r.point = {j.at("lat").get<double>(), j.at("lon").get<double>()};
  if (j.contains("type")) r.truth = catalog.index_of(j["type"].get<std::string>());
  for (const auto& mj : j.at("messages")) {
    r.messages.push_back({detail::message_from_json(mj), mj.at("distance_m").get<double>()});
  }
  return r;
}

inline void write_sites(const std::string& path, const std::vector<SiteRecord>& records,
                        const TypeCatalog& catalog) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path);
  for (const auto& r : records) out << site_to_json(r, catalog).dump() << '\n';
}

inline std::vector<SiteRecord> read_sites(const std::string& path, const TypeCatalog& catalog) {
  std::vector<SiteRecord> out;
  const auto lines = detail::read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (detail::blank(lines[i])) continue;
    try {
      out.push_back(site_from_json(nlohmann::json::parse(lines[i]), catalog));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

inline void write_messages(const std::string& path, const std::vector<GeotaggedMessage>& msgs) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path);
  for (const auto& m : msgs) out << detail::message_to_json(m).dump() << '\n';
}

}  // namespace geoloc
