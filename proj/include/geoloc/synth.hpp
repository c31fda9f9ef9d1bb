#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoloc/domain.hpp"
#include "geoloc/features.hpp"
#include "geoloc/ingest.hpp"
#include "geoloc/neural.hpp"
#include "geoloc/random.hpp"

namespace geoloc {

inline constexpr std::int64_t kSynthEpochStart = 1356998400;  // 2013-01-01T00:00:00Z

struct SynthConfig {
  TypeCatalog catalog = TypeCatalog::default_catalog();
  std::vector<double> priors{0.327, 0.08, 0.154, 0.098, 0.065, 0.276};
  int locations = 600;
  // Poisson mean of messages per location, per class.
  std::vector<double> messages_mean{10.9, 22.4, 46.4, 119.2, 132.6, 14.2};
  double noise_rate = 0.6;
  int signal_vocab = 50;
  // Signal words are drawn from a pool shared by all classes; 0 keeps the
  // class vocabularies disjoint.
  int signal_pool = 0;
  int noise_vocab = 500;
  double zipf_exponent = 1.1;
  double signal_share = 0.15; // in a signal message, P(token from class vocabulary)
  // Class-specific word pairs over a shared pool: the pool's unigram
  // frequencies match across classes, only the pairing differs.
  double phrase_rate = 1.0;   // P(a signal message carries one phrase per 4 tokens)
  int phrase_pool = 40;
  double length_mean = 9.0;
  int length_min = 1;
  int length_max = 30;
  // Rows: class; columns adjacent/near/far, or the seven day periods.
  std::vector<std::array<double, 3>> distance_profile{
      {6.59, 27.99, 65.42}, {7.28, 26.48, 66.24}, {31.55, 24.74, 43.72},
      {26.86, 24.30, 48.84}, {49.32, 18.66, 32.02}, {5.44, 28.93, 65.64}};
  std::vector<std::array<double, 7>> day_period_profile{
      // dawn morning noon afternoon evening night late_night
      {2, 38, 32, 16, 6, 4, 2},    // school
      {2, 18, 26, 22, 16, 10, 6},  // university
      {3, 30, 22, 12, 18, 10, 5},  // church
      {1, 9, 22, 30, 26, 9, 3},    // shop
      {1, 12, 34, 33, 14, 4, 2},   // museum
      {6, 22, 22, 18, 14, 10, 8},  // health
  };
  bool pos_tags = true;
  double sprinkle_rate = 0.25;
  double tz_offset_hours = kDefaultTzOffsetHours;
  LatLon origin{40.7500, -73.9850};
  double grid_spacing_m = 100.0;
  int span_days = 400;
  int embedding_dim = 50;
  std::uint64_t seed = 42;

  void validate() const {
    const std::size_t c = catalog.size();
    auto check_dist = [](std::span<const double> d, const std::string& what) {
      double s = 0.0;
      for (double v : d) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError(what + " has a negative or non-finite entry");
        s += v;
      }
      if (s <= 0.0) throw ValidationError(what + " has zero mass");
      return s;
    };
    if (priors.size() != c) throw ValidationError("priors must have one entry per class");
    if (std::abs(check_dist(priors, "priors") - 1.0) > 1e-9) throw ValidationError("priors must sum to 1");
    if (messages_mean.size() != c) throw ValidationError("messages_mean must have one entry per class");
    for (double m : messages_mean) {
      if (!(m > 0.0)) throw ValidationError("messages_mean entries must be positive");
    }
    if (distance_profile.size() != c || day_period_profile.size() != c) {
      throw ValidationError("distance and day-period profiles need one row per class");
    }
    for (const auto& r : distance_profile) check_dist(r, "distance profile");
    for (const auto& r : day_period_profile) check_dist(r, "day-period profile");
    if (locations < 1) throw ValidationError("locations must be >= 1");
    if (noise_rate < 0.0 || noise_rate > 1.0) throw ValidationError("noise_rate must be in [0, 1]");
    if (signal_share < 0.0 || signal_share > 1.0) throw ValidationError("signal_share must be in [0, 1]");
    if (phrase_rate < 0.0 || phrase_rate > 1.0) throw ValidationError("phrase_rate must be in [0, 1]");
    if (phrase_rate > 0.0 && (phrase_pool < 2 || phrase_pool % 2 != 0)) {
      throw ValidationError("phrase_pool must be an even number >= 2");
    }
    if (signal_vocab < 1 || noise_vocab < 1) throw ValidationError("vocabulary sizes must be >= 1");
    if (signal_pool != 0 && signal_pool < signal_vocab) {
      throw ValidationError("signal_pool must be 0 or >= signal_vocab");
    }
    if (length_min < 1 || length_max < length_min) throw ValidationError("bad message length bounds");
    if (span_days < 1) throw ValidationError("span_days must be >= 1");
    if (grid_spacing_m <= 40.0) throw ValidationError("grid_spacing_m must exceed 40");
    if (embedding_dim < 1) throw ValidationError("embedding_dim must be >= 1");
  }

  nlohmann::json to_json() const {
    nlohmann::json dist = nlohmann::json::array(), day = nlohmann::json::array();
    for (const auto& r : distance_profile) dist.push_back(r);
    for (const auto& r : day_period_profile) day.push_back(r);
    return {{"catalog", catalog.names()},
            {"priors", priors},
            {"locations", locations},
            {"messages_mean", messages_mean},
            {"noise_rate", noise_rate},
            {"signal_vocab", signal_vocab},
            {"signal_pool", signal_pool},
            {"noise_vocab", noise_vocab},
            {"zipf_exponent", zipf_exponent},
            {"signal_share", signal_share},
            {"phrase_rate", phrase_rate},
            {"phrase_pool", phrase_pool},
            {"length_mean", length_mean},
            {"length_min", length_min},
            {"length_max", length_max},
            {"distance_profile", dist},
            {"day_period_profile", day},
            {"pos_tags", pos_tags},
            {"sprinkle_rate", sprinkle_rate},
            {"tz_offset_hours", tz_offset_hours},
            {"grid_spacing_m", grid_spacing_m},
            {"span_days", span_days},
            {"embedding_dim", embedding_dim},
            {"seed", seed}};
  }
};

// Per-class POS tag weights over kPosTags. NN/NNP/VB/PRP follow the observed
// prevalence per venue type; the other tags share the remaining mass.
inline std::vector<std::array<double, kPosTags.size()>> synth_pos_profile(std::size_t num_classes) {
  // CD DT FW IN JJ NN NNP NNS PRP RB VB VBG VBP
  const std::array<double, kPosTags.size()> rest{6, 10, 1, 12, 8, 0, 0, 6, 0, 5, 0, 2, 4};
  const std::array<std::array<double, 4>, 6> key{{
      {14.54, 14.38, 4.02, 5.57},
      {14.12, 17.29, 3.64, 5.33},
      {14.07, 17.39, 3.51, 4.96},
      {13.02, 20.34, 2.88, 4.70},
      {12.29, 27.41, 2.08, 3.14},
      {14.27, 15.12, 3.89, 5.54},
  }};
  double rest_total = 0.0;
  for (double v : rest) rest_total += v;
  std::vector<std::array<double, kPosTags.size()>> out(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const auto& k = key[c % key.size()];
    const double left = 100.0 - (k[0] + k[1] + k[2] + k[3]);
    auto& row = out[c];
    for (std::size_t t = 0; t < row.size(); ++t) row[t] = rest[t] / rest_total * left;
    row[5] = k[0];   // NN
    row[6] = k[1];   // NNP
    row[10] = k[2];  // VB
    row[8] = k[3];   // PRP
  }
  return out;
}

struct SynthOutput {
  std::vector<SiteRecord> entities;  // ground truth, no messages
  std::vector<GeotaggedMessage> messages;
  std::vector<std::string> vocabulary;  // every generated word, sorted
  // Sampled (entity index, distance bin) per message, parallel to `messages`.
  std::vector<std::pair<std::size_t, int>> provenance;
};

namespace detail {

inline std::string pseudo_word(Rng& rng) {
  static constexpr std::array<const char*, 20> onset{"b", "d", "f", "g", "k", "l", "m", "n", "p", "r",
                                                     "s", "t", "v", "z", "ch", "sh", "tr", "br", "pl", "st"};
  static constexpr std::array<const char*, 8> nucleus{"a", "e", "i", "o", "u", "ai", "ou", "ee"};
  static constexpr std::array<const char*, 6> coda{"", "", "n", "r", "s", "k"};
  std::string w;
  const std::size_t syllables = 2 + rng.index(2);
  for (std::size_t s = 0; s < syllables; ++s) {
    w += onset[rng.index(onset.size())];
    w += nucleus[rng.index(nucleus.size())];
  }
  w += coda[rng.index(coda.size())];
  return w;
}

inline std::vector<std::string> fresh_words(Rng& rng, std::size_t n, std::set<std::string>& used) {
  std::vector<std::string> out;
  while (out.size() < n) {
    auto w = pseudo_word(rng);
    if (used.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

inline std::vector<double> zipf_weights(std::size_t n, double s) {
  std::vector<double> w(n);
  for (std::size_t r = 0; r < n; ++r) w[r] = 1.0 / std::pow(static_cast<double>(r + 1), s);
  return w;
}

}  // namespace detail

inline SynthOutput generate(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.catalog.size();
  Rng words_rng(derive_seed(cfg.seed, 1));
  Rng rng(derive_seed(cfg.seed, 2));

  std::set<std::string> used;
  const auto noise = detail::fresh_words(words_rng, static_cast<std::size_t>(cfg.noise_vocab), used);
  std::vector<std::vector<std::string>> signal(c);
  if (cfg.signal_pool == 0) {
    for (auto& v : signal) v = detail::fresh_words(words_rng, static_cast<std::size_t>(cfg.signal_vocab), used);
  } else {
    const auto pool = detail::fresh_words(words_rng, static_cast<std::size_t>(cfg.signal_pool), used);
    for (auto& v : signal) {
      auto p = pool;
      words_rng.shuffle(p);
      v.assign(p.begin(), p.begin() + cfg.signal_vocab);
    }
  }
  // Each class pairs the phrase pool into a different perfect matching.
  std::vector<std::vector<std::pair<std::string, std::string>>> phrases(c);
  if (cfg.phrase_rate > 0.0) {
    const auto pool = detail::fresh_words(words_rng, static_cast<std::size_t>(cfg.phrase_pool), used);
    for (auto& ph : phrases) {
      auto p = pool;
      words_rng.shuffle(p);
      for (std::size_t i = 0; i + 1 < p.size(); i += 2) ph.emplace_back(p[i], p[i + 1]);
    }
  }
  const auto signal_w = detail::zipf_weights(static_cast<std::size_t>(cfg.signal_vocab), cfg.zipf_exponent);
  const auto pos_profile = synth_pos_profile(c);

  SynthOutput out;
  out.vocabulary.assign(used.begin(), used.end());

  // Entities on a jittered grid so that no two radii overlap.
  const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.locations))));
  const double m_per_deg = kEarthRadiusM * std::numbers::pi / 180.0;
  const double dlat = cfg.grid_spacing_m / m_per_deg;
  const double dlon = dlat / std::cos(cfg.origin.lat * std::numbers::pi / 180.0);
  const double jitter = (cfg.grid_spacing_m - 40.0) / 4.0;
  // Type counts follow the priors exactly (largest remainder), order shuffled.
  std::vector<int> types;
  {
    double z = 0.0;
    for (double p : cfg.priors) z += p;
    std::vector<std::pair<double, std::size_t>> rem;
    std::vector<int> count(c);
    int assigned = 0;
    for (std::size_t k = 0; k < c; ++k) {
      const double exact = cfg.priors[k] / z * cfg.locations;
      count[k] = static_cast<int>(std::floor(exact));
      assigned += count[k];
      rem.emplace_back(-(exact - count[k]), k);
    }
    std::sort(rem.begin(), rem.end());
    for (int i = 0; i < cfg.locations - assigned; ++i) ++count[rem[static_cast<std::size_t>(i)].second];
    for (std::size_t k = 0; k < c; ++k) types.insert(types.end(), static_cast<std::size_t>(count[k]), static_cast<int>(k));
    rng.shuffle(types);
  }
  char buf[32];
  for (int i = 0; i < cfg.locations; ++i) {
    SiteRecord e;
    std::snprintf(buf, sizeof buf, "e%04d", i + 1);
    e.id = buf;
    e.truth = types[static_cast<std::size_t>(i)];
    const double jy = rng.uniform(-jitter, jitter) / m_per_deg;
    const double jx = rng.uniform(-jitter, jitter) / m_per_deg / std::cos(cfg.origin.lat * std::numbers::pi / 180.0);
    e.point = {cfg.origin.lat + (i / side) * dlat + jy, cfg.origin.lon + (i % side) * dlon + jx};
    out.entities.push_back(std::move(e));
  }

  static constexpr std::array<std::pair<double, double>, 3> kBinRange{
      {{0.01, 4.99}, {5.01, 11.99}, {12.01, 19.99}}};
  static constexpr std::array<const char*, 4> kPunct{"!", "?", ".", ","};
  std::size_t msg_no = 0;
  for (std::size_t ei = 0; ei < out.entities.size(); ++ei) {
    const auto& e = out.entities[ei];
    const auto k = static_cast<std::size_t>(*e.truth);
    const int n = rng.poisson(cfg.messages_mean[k]);
    for (int j = 0; j < n; ++j) {
      GeotaggedMessage m;
      std::snprintf(buf, sizeof buf, "m%06zu", ++msg_no);
      m.id = buf;
      const int bin = static_cast<int>(rng.categorical(cfg.distance_profile[k]));
      const double dist = rng.uniform(kBinRange[bin].first, kBinRange[bin].second);
      m.point = destination_point(e.point, dist, rng.uniform(0.0, 2.0 * std::numbers::pi));
      const auto period = rng.categorical(cfg.day_period_profile[k]);
      const double start = kDayPeriodStart[period], end = kDayPeriodEnd[period];
      const double local_s = rng.uniform(start * 3600.0, end * 3600.0 - 1.0);
      const auto day = static_cast<std::int64_t>(rng.index(static_cast<std::size_t>(cfg.span_days)));
      m.timestamp = kSynthEpochStart + day * 86400 + static_cast<std::int64_t>(std::floor(local_s)) -
                    static_cast<std::int64_t>(std::llround(cfg.tz_offset_hours * 3600.0));

      const bool is_noise = rng.uniform() < cfg.noise_rate;
      int len = rng.poisson(cfg.length_mean);
      len = std::clamp(len, cfg.length_min, cfg.length_max);
      std::vector<std::string> toks;
      for (int t = 0; t < len; ++t) {
        if (!is_noise && rng.uniform() < cfg.signal_share) {
          toks.push_back(signal[k][rng.categorical(signal_w)]);
        } else {
          toks.push_back(noise[rng.index(noise.size())]);
        }
      }
      if (!is_noise && !phrases[k].empty() && rng.uniform() < cfg.phrase_rate) {
        const int count = std::max(1, len / 4);
        for (int p = 0; p < count; ++p) {
          const auto& ph = phrases[k][rng.index(phrases[k].size())];
          const auto at = static_cast<std::ptrdiff_t>(rng.index(toks.size() + 1));
          toks.insert(toks.begin() + at, {ph.first, ph.second});
        }
      }
      if (rng.uniform() < cfg.sprinkle_rate) {
        switch (rng.index(4)) {
          case 0: toks.push_back(kPunct[rng.index(kPunct.size())]); break;
          case 1: toks.insert(toks.begin(), "@u" + std::to_string(rng.index(1000))); break;
          case 2: toks.push_back("#" + noise[rng.index(noise.size())]); break;
          default: toks.push_back("http://t.co/" + std::to_string(rng.index(100000))); break;
        }
      }
      for (std::size_t t = 0; t < toks.size(); ++t) {
        if (t) m.text += ' ';
        m.text += toks[t];
      }
      if (cfg.pos_tags) {
        std::vector<std::string> tags;
        const auto n_tok = tokenize(m.text).size();
        for (std::size_t t = 0; t < n_tok; ++t) tags.emplace_back(kPosTags[rng.categorical(pos_profile[k])]);
        m.pos_tags = std::move(tags);
      }
      out.messages.push_back(std::move(m));
      out.provenance.emplace_back(ei, bin);
    }
  }
  return out;
}

// Random embeddings for every generated word, so the CNN path has inputs.
inline EmbeddingTable synth_embeddings(const SynthOutput& out, const SynthConfig& cfg) {
  EmbeddingTable t(static_cast<std::size_t>(cfg.embedding_dim));
  Rng rng(derive_seed(cfg.seed, 3));
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.embedding_dim));
  for (const auto& w : out.vocabulary) {
    std::vector<double> v(static_cast<std::size_t>(cfg.embedding_dim));
    for (auto& x : v) x = rng.normal() * scale;
    t.set(w, std::move(v));
  }
  return t;
}

inline void write_entities(const std::string& path, const std::vector<SiteRecord>& entities,
                           const TypeCatalog& catalog) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write file: " + path);
  for (const auto& e : entities) {
    nlohmann::json j{{"id", e.id}, {"lat", e.point.lat}, {"lon", e.point.lon}};
    if (e.truth) j["type"] = catalog.name(*e.truth);
    f << j.dump() << '\n';
  }
}

// Writes entities.jsonl, messages.jsonl, embeddings.txt and manifest.json.
inline SynthOutput write_synth(const SynthConfig& cfg, const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto out = generate(cfg);
  write_entities(dir + "/entities.jsonl", out.entities, cfg.catalog);
  write_messages(dir + "/messages.jsonl", out.messages);
  synth_embeddings(out, cfg).save(dir + "/embeddings.txt");
  std::vector<int> counts(cfg.catalog.size(), 0);
  for (const auto& e : out.entities) ++counts[static_cast<std::size_t>(*e.truth)];
  nlohmann::json manifest{{"config", cfg.to_json()},
                          {"entities", out.entities.size()},
                          {"messages", out.messages.size()},
                          {"class_counts", counts},
                          {"files", {"entities.jsonl", "messages.jsonl", "embeddings.txt"}}};
  std::ofstream f(dir + "/manifest.json");
  if (!f) throw Error("cannot write file: " + dir + "/manifest.json");
  f << manifest.dump(2) << '\n';
  return out;
}

}  // namespace geoloc
