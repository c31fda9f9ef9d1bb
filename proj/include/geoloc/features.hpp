#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <optional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "geoloc/domain.hpp"
#include "geoloc/langmodel.hpp"

namespace geoloc {

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

namespace detail {

inline bool ascii_punct(unsigned char c) { return c < 128 && std::ispunct(c); }

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[i])) != prefix[i]) return false;
  }
  return true;
}

// Splits on ASCII whitespace and the common multi-byte UTF-8 space characters
// (U+00A0, U+2000..U+200A, U+202F, U+205F, U+3000).
inline std::vector<std::string_view> split_whitespace(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = std::string_view::npos;
  std::size_t i = 0;
  auto flush = [&](std::size_t end) {
    if (start != std::string_view::npos && end > start) out.push_back(text.substr(start, end - start));
    start = std::string_view::npos;
  };
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t ws_len = 0;
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      ws_len = 1;
    } else if (c == 0xC2 && i + 1 < text.size() && static_cast<unsigned char>(text[i + 1]) == 0xA0) {
      ws_len = 2;
    } else if (c == 0xE2 && i + 2 < text.size()) {
      const auto c1 = static_cast<unsigned char>(text[i + 1]);
      const auto c2 = static_cast<unsigned char>(text[i + 2]);
      if ((c1 == 0x80 && (c2 <= 0x8A || c2 == 0xAF)) || (c1 == 0x81 && c2 == 0x9F)) ws_len = 3;
    } else if (c == 0xE3 && i + 2 < text.size() && static_cast<unsigned char>(text[i + 1]) == 0x80 &&
               static_cast<unsigned char>(text[i + 2]) == 0x80) {
      ws_len = 3;
    }
    if (ws_len > 0) {
      flush(i);
      i += ws_len;
    } else {
      if (start == std::string_view::npos) start = i;
      ++i;
    }
  }
  flush(text.size());
  return out;
}

inline std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 128) ch = static_cast<char>(std::tolower(c));
  }
  return out;
}

}  // namespace detail

// Lowercases, splits on whitespace and peels leading/trailing ASCII
// punctuation into single-character tokens. URLs become "<url>", @-mentions
// "<user>"; hashtags stay whole.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  for (auto word : detail::split_whitespace(text)) {
    std::size_t b = 0;
    std::size_t e = word.size();
    auto core_marker = [&](std::size_t i) {
      // '#' or '@' directly followed by a non-punctuation byte opens the core.
      return (word[i] == '#' || word[i] == '@') && i + 1 < e &&
             !detail::ascii_punct(static_cast<unsigned char>(word[i + 1]));
    };
    while (b < e && detail::ascii_punct(static_cast<unsigned char>(word[b])) && !core_marker(b)) {
      tokens.emplace_back(1, word[b]);
      ++b;
    }
    std::string_view rest = word.substr(b, e - b);
    const bool url = detail::starts_with_ci(rest, "http://") ||
                     detail::starts_with_ci(rest, "https://") ||
                     detail::starts_with_ci(rest, "www.");
    std::vector<std::string> trailing;
    while (e > b && detail::ascii_punct(static_cast<unsigned char>(word[e - 1])) &&
           !(url && word[e - 1] == '/')) {
      trailing.emplace_back(1, word[e - 1]);
      --e;
    }
    if (e > b) {
      std::string_view core = word.substr(b, e - b);
      if (url) {
        tokens.emplace_back("<url>");
      } else if (core[0] == '@' && core.size() > 1) {
        tokens.emplace_back("<user>");
      } else {
        tokens.push_back(detail::lower_ascii(core));
      }
    }
    tokens.insert(tokens.end(), trailing.rbegin(), trailing.rend());
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// Sparse vectors
// ---------------------------------------------------------------------------

struct FeatureEntry {
  std::uint32_t index = 0;
  double value = 0.0;

  friend bool operator==(const FeatureEntry&, const FeatureEntry&) = default;
};

// Sparse vector with strictly increasing indices; zero values are omitted.
struct FeatureVector {
  std::vector<FeatureEntry> entries;

  void push(std::uint32_t index, double value) {
    if (value != 0.0) entries.push_back({index, value});
  }

  double get(std::uint32_t index) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), index,
                               [](const FeatureEntry& e, std::uint32_t i) { return e.index < i; });
    return it != entries.end() && it->index == index ? it->value : 0.0;
  }

  std::vector<double> dense(std::size_t width) const {
    std::vector<double> out(width, 0.0);
    for (const auto& e : entries) out.at(e.index) = e.value;
    return out;
  }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

inline FeatureVector from_dense(std::span<const double> values) {
  FeatureVector v;
  for (std::size_t i = 0; i < values.size(); ++i) v.push(static_cast<std::uint32_t>(i), values[i]);
  return v;
}

// ---------------------------------------------------------------------------
// Families
// ---------------------------------------------------------------------------

enum class Family { textual = 0, ngrams = 1, lm = 2, pos = 3, spatio_temporal = 4 };
inline constexpr std::array<Family, 5> kAllFamilies = {Family::textual, Family::ngrams, Family::lm,
                                                       Family::pos, Family::spatio_temporal};

inline const char* family_name(Family f) {
  switch (f) {
    case Family::textual: return "textual";
    case Family::ngrams: return "ngrams";
    case Family::lm: return "lm";
    case Family::pos: return "pos";
    case Family::spatio_temporal: return "spatio_temporal";
  }
  return "?";
}

inline Family family_from_name(std::string_view name) {
  for (auto f : kAllFamilies) {
    if (name == family_name(f)) return f;
  }
  throw ValidationError("unknown feature family: " + std::string(name));
}

// Bitmask over Family values.
class FamilySet {
 public:
  constexpr FamilySet() = default;
  constexpr explicit FamilySet(unsigned bits) : bits_(bits & 0x1fu) {}
  FamilySet(std::initializer_list<Family> fs) {
    for (auto f : fs) insert(f);
  }
  static constexpr FamilySet all() { return FamilySet(0x1fu); }

  constexpr bool contains(Family f) const { return bits_ & (1u << static_cast<unsigned>(f)); }
  constexpr void insert(Family f) { bits_ |= 1u << static_cast<unsigned>(f); }
  constexpr void erase(Family f) { bits_ &= ~(1u << static_cast<unsigned>(f)); }
  constexpr FamilySet without(Family f) const {
    FamilySet s = *this;
    s.erase(f);
    return s;
  }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr unsigned bits() const { return bits_; }

  std::string to_string() const {
    std::string s;
    for (auto f : kAllFamilies) {
      if (!contains(f)) continue;
      if (!s.empty()) s += '+';
      s += family_name(f);
    }
    return s.empty() ? "none" : s;
  }

  static FamilySet parse(std::string_view text) {
    FamilySet s;
    if (text == "all") return all();
    std::size_t pos = 0;
    while (pos <= text.size()) {
      auto next = text.find_first_of("+,", pos);
      auto part = text.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos);
      if (!part.empty()) s.insert(family_from_name(part));
      if (next == std::string_view::npos) break;
      pos = next + 1;
    }
    return s;
  }

  friend constexpr bool operator==(FamilySet, FamilySet) = default;

 private:
  unsigned bits_ = 0;
};

inline constexpr std::size_t kTextualWidth = 32;
inline constexpr std::size_t kPosWidth = 13;
inline constexpr std::size_t kSpatioTemporalWidth = 12;

// Symbols counted by the textual family, in column order.
inline constexpr std::array<char, 24> kTextualSymbols = {
    '!', '?', '.', ',', ';', ':', '\'', '"', '@', '#', '$', '%',
    '&', '*', '(', ')', '-', '_', '/', '\\', '+', '=', '~', '^'};

inline constexpr std::array<std::string_view, 13> kPosTags = {
    "CD", "DT", "FW", "IN", "JJ", "NN", "NNP", "NNS", "PRP", "RB", "VB", "VBG", "VBP"};

// Inclusive-upper-edge bins [0,10], [11,20], [21,30], [31,inf).
inline std::size_t length_bin(std::size_t n) {
  if (n <= 10) return 0;
  if (n <= 20) return 1;
  if (n <= 30) return 2;
  return 3;
}

inline std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

// 32 columns: word-count bin (4), character-count bin (4), symbol counts (24).
inline std::array<double, kTextualWidth> textual_features(std::string_view text) {
  std::array<double, kTextualWidth> out{};
  out[length_bin(detail::split_whitespace(text).size())] = 1.0;
  out[4 + length_bin(utf8_length(text))] = 1.0;
  for (char ch : text) {
    for (std::size_t k = 0; k < kTextualSymbols.size(); ++k) {
      if (ch == kTextualSymbols[k]) {
        out[8 + k] += 1.0;
        break;
      }
    }
  }
  return out;
}

struct PosDiagnostics {
  std::size_t unknown_tags = 0;
  std::size_t messages_without_tags = 0;
};

inline std::array<double, kPosWidth> pos_features(const GeotaggedMessage& m,
                                                  PosDiagnostics* diag = nullptr) {
  std::array<double, kPosWidth> out{};
  if (!m.pos_tags) {
    if (diag) ++diag->messages_without_tags;
    return out;
  }
  for (const auto& tag : *m.pos_tags) {
    auto it = std::find(kPosTags.begin(), kPosTags.end(), tag);
    if (it == kPosTags.end()) {
      if (diag) ++diag->unknown_tags;
    } else {
      out[static_cast<std::size_t>(it - kPosTags.begin())] += 1.0;
    }
  }
  return out;
}

enum class DistanceBin { adjacent = 0, near = 1, far = 2 };
inline constexpr std::array<std::string_view, 3> kDistanceBinNames = {"adjacent", "near", "far"};

// Half-open [0,5), [5,12), [12, inf).
inline DistanceBin distance_bin(double meters) {
  if (meters < 5.0) return DistanceBin::adjacent;
  if (meters < 12.0) return DistanceBin::near;
  return DistanceBin::far;
}

enum class DayPeriod { dawn = 0, morning, noon, afternoon, evening, night, late_night };
inline constexpr std::array<std::string_view, 7> kDayPeriodNames = {
    "dawn", "morning", "noon", "afternoon", "evening", "night", "late_night"};
// Start hour of each period on the local clock; late_night wraps from 0.
inline constexpr std::array<double, 7> kDayPeriodStart = {4, 7, 11, 15, 18, 21, 0};
inline constexpr std::array<double, 7> kDayPeriodEnd = {7, 11, 15, 18, 21, 24, 4};

inline DayPeriod day_period(double hour) {
  if (hour < 4.0) return DayPeriod::late_night;
  if (hour < 7.0) return DayPeriod::dawn;
  if (hour < 11.0) return DayPeriod::morning;
  if (hour < 15.0) return DayPeriod::noon;
  if (hour < 18.0) return DayPeriod::afternoon;
  if (hour < 21.0) return DayPeriod::evening;
  return DayPeriod::night;
}

// Columns: distance_m, local hour, 3 distance-bin one-hot, 7 day-period one-hot.
inline std::array<double, kSpatioTemporalWidth> spatio_temporal_features(
    double distance_m, double local_hour_of_day) {
  std::array<double, kSpatioTemporalWidth> out{};
  out[0] = distance_m;
  out[1] = local_hour_of_day;
  out[2 + static_cast<std::size_t>(distance_bin(distance_m))] = 1.0;
  out[5 + static_cast<std::size_t>(day_period(local_hour_of_day))] = 1.0;
  return out;
}

inline std::array<double, kSpatioTemporalWidth> spatio_temporal_features(
    const GeotaggedMessage& m, const LatLon& entity_point,
    double tz_offset_hours = kDefaultTzOffsetHours) {
  return spatio_temporal_features(haversine_m(m.point, entity_point),
                                  local_hour(m.timestamp, tz_offset_hours));
}

// ---------------------------------------------------------------------------
// N-grams
// ---------------------------------------------------------------------------

inline constexpr int kDefaultNgramThreshold = 5;

template <typename Fn>
void for_each_ngram(std::span<const std::string> tokens, Fn&& fn) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    fn(tokens[i]);
    if (i + 1 < tokens.size()) fn(tokens[i] + " " + tokens[i + 1]);
  }
}

// N-gram (n = 1, 2) index. Keys are tokens or "w1 w2"; ordered by descending
// training count, ties lexicographic.
class NgramIndex {
 public:
  NgramIndex() = default;
  explicit NgramIndex(std::vector<std::string> ordered) : keys_(std::move(ordered)) {
    for (std::size_t i = 0; i < keys_.size(); ++i) ids_.emplace(keys_[i], i);
  }

  std::size_t size() const { return keys_.size(); }
  const std::vector<std::string>& keys() const { return keys_; }
  std::optional<std::size_t> find(const std::string& key) const {
    auto it = ids_.find(key);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<std::string> keys_;
  std::unordered_map<std::string, std::size_t> ids_;
};

inline NgramIndex fit_ngrams(std::span<const TokenSeq> texts, int threshold) {
  if (threshold < 1) throw ValidationError("n-gram threshold must be >= 1");
  std::unordered_map<std::string, long> counts;
  for (const auto& t : texts) for_each_ngram(t, [&](const std::string& g) { ++counts[g]; });
  std::vector<std::pair<std::string, long>> kept;
  for (auto& [g, c] : counts) {
    if (c >= threshold) kept.emplace_back(g, c);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> keys;
  keys.reserve(kept.size());
  for (auto& [g, c] : kept) keys.push_back(std::move(g));
  return NgramIndex(std::move(keys));
}

// Raw counts of registered n-grams keyed by index position.
inline std::map<std::size_t, double> ngram_features(std::span<const std::string> tokens,
                                                    const NgramIndex& index) {
  std::map<std::size_t, double> out;
  for_each_ngram(tokens, [&](const std::string& g) {
    if (auto id = index.find(g)) out[*id] += 1.0;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Class language models used by the lm family
// ---------------------------------------------------------------------------

// One Dirichlet-smoothed unigram model per class over a shared Laplace
// background trained on all training texts.
struct ClassLanguageModels {
  std::shared_ptr<const UnigramLM> background;
  std::vector<std::shared_ptr<const UnigramLM>> per_class;
  double mu = kDefaultDirichletMu;

  std::size_t num_classes() const { return per_class.size(); }

  static ClassLanguageModels train(std::span<const TokenSeq> texts, std::span<const int> labels,
                                   std::size_t num_classes, double mu = kDefaultDirichletMu) {
    ClassLanguageModels m;
    m.mu = mu;
    m.background = train_unigram_laplace(texts);
    std::vector<std::vector<TokenSeq>> by_class(num_classes);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      by_class.at(static_cast<std::size_t>(labels[i])).push_back(texts[i]);
    }
    for (const auto& group : by_class) {
      m.per_class.push_back(train_unigram_dirichlet(group, m.background, mu));
    }
    return m;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["mu"] = mu;
    j["background"] = unigram_to_json(*background);
    auto pc = nlohmann::json::array();
    for (const auto& lm : per_class) pc.push_back(lm->counts());
    j["class_counts"] = std::move(pc);
    return j;
  }

  static ClassLanguageModels from_json(const nlohmann::json& j) {
    ClassLanguageModels m;
    m.mu = j.at("mu").get<double>();
    m.background = unigram_from_json(j.at("background"));
    for (const auto& counts : j.at("class_counts")) {
      m.per_class.push_back(std::make_shared<const UnigramLM>(
          m.background->vocab_ptr(), counts.get<std::vector<double>>(),
          DirichletSmoothing{m.mu, m.background}));
    }
    return m;
  }
};

// Column c = log QL(tokens, class-c model).
inline std::vector<double> lm_features(std::span<const std::string> tokens,
                                       const ClassLanguageModels& lms) {
  std::vector<double> out(lms.num_classes(), 0.0);
  const auto& vocab = lms.background->vocab();
  for (const auto& t : tokens) {
    const auto id = vocab.id(t);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += lms.per_class[c]->log_prob_id(id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Registry and assembly
// ---------------------------------------------------------------------------

enum class FeatureMode { pipeline, joint };

struct Segment {
  Family family;
  std::size_t offset = 0;
  std::size_t width = 0;
};

// Frozen definition of the column space: n-gram index, class LMs and the
// segment layout for the enabled families. Joint mode never lays out the
// spatio-temporal family.
class FeatureRegistry {
 public:
  static constexpr int kFormatVersion = 1;

  FeatureRegistry() = default;

  FeatureRegistry(FeatureMode mode, FamilySet families, int threshold, NgramIndex ngrams,
                  std::optional<ClassLanguageModels> lms, std::size_t num_classes)
      : mode_(mode),
        families_(families),
        threshold_(threshold),
        ngrams_(std::move(ngrams)),
        lms_(std::move(lms)),
        num_classes_(num_classes) {
    if (mode_ == FeatureMode::joint) families_.erase(Family::spatio_temporal);
    if (families_.contains(Family::lm) && !lms_) {
      throw ValidationError("lm family enabled without class language models");
    }
    std::size_t offset = 0;
    for (auto f : kAllFamilies) {
      if (!families_.contains(f)) continue;
      const std::size_t w = nominal_width(f);
      segments_.push_back({f, offset, w});
      offset += w;
    }
    width_ = offset;
  }

  // Fits the n-gram index and (if needed) the class LMs on training units.
  // Each unit is a token sequence (a message or a concatenated multi-message).
  static FeatureRegistry fit(FeatureMode mode, FamilySet families,
                             std::span<const TokenSeq> training_tokens,
                             std::span<const int> labels, std::size_t num_classes,
                             int threshold = kDefaultNgramThreshold,
                             double mu = kDefaultDirichletMu) {
    NgramIndex idx;
    if (families.contains(Family::ngrams)) idx = fit_ngrams(training_tokens, threshold);
    std::optional<ClassLanguageModels> lms;
    if (families.contains(Family::lm)) {
      lms = ClassLanguageModels::train(training_tokens, labels, num_classes, mu);
    }
    return FeatureRegistry(mode, families, threshold, std::move(idx), std::move(lms), num_classes);
  }

  std::size_t nominal_width(Family f) const {
    switch (f) {
      case Family::textual: return kTextualWidth;
      case Family::ngrams: return ngrams_.size();
      case Family::lm: return num_classes_;
      case Family::pos: return kPosWidth;
      case Family::spatio_temporal: return kSpatioTemporalWidth;
    }
    return 0;
  }

  FeatureMode mode() const { return mode_; }
  FamilySet families() const { return families_; }
  int threshold() const { return threshold_; }
  const NgramIndex& ngrams() const { return ngrams_; }
  const std::optional<ClassLanguageModels>& lms() const { return lms_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t width() const { return width_; }
  const std::vector<Segment>& segments() const { return segments_; }

  std::optional<Segment> segment(Family f) const {
    for (const auto& s : segments_) {
      if (s.family == f) return s;
    }
    return std::nullopt;
  }

  // Same n-gram index and LMs, fewer families.
  FeatureRegistry restricted(FamilySet keep) const {
    FamilySet fs(keep.bits() & families_.bits());
    return FeatureRegistry(mode_, fs, threshold_, ngrams_,
                           fs.contains(Family::lm) ? lms_ : std::nullopt, num_classes_);
  }

  // Maps a vector laid out by `this` onto the layout of `target`, which must
  // be a restriction of this registry.
  FeatureVector project(const FeatureVector& v, const FeatureRegistry& target) const {
    FeatureVector out;
    std::size_t si = 0;
    std::optional<Segment> dst;
    for (const auto& e : v.entries) {
      while (si < segments_.size() && e.index >= segments_[si].offset + segments_[si].width) {
        ++si;
        dst.reset();
      }
      if (si == segments_.size()) break;
      if (!dst) {
        dst = target.segment(segments_[si].family);
        if (!dst) dst = Segment{segments_[si].family, SIZE_MAX, 0};
      }
      if (dst->offset == SIZE_MAX) continue;
      out.entries.push_back(
          {static_cast<std::uint32_t>(dst->offset + (e.index - segments_[si].offset)), e.value});
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["version"] = kFormatVersion;
    j["mode"] = mode_ == FeatureMode::joint ? "joint" : "pipeline";
    j["families"] = families_.to_string();
    j["threshold"] = threshold_;
    j["num_classes"] = num_classes_;
    j["ngrams"] = ngrams_.keys();
    auto layout = nlohmann::json::array();
    for (const auto& s : segments_) {
      layout.push_back({{"family", family_name(s.family)}, {"offset", s.offset}, {"width", s.width}});
    }
    j["layout"] = std::move(layout);
    if (lms_) j["lms"] = lms_->to_json();
    return j;
  }

  static FeatureRegistry from_json(const nlohmann::json& j) {
    if (j.at("version").get<int>() != kFormatVersion) {
      throw ParseError("unsupported registry version");
    }
    std::optional<ClassLanguageModels> lms;
    if (j.contains("lms")) lms = ClassLanguageModels::from_json(j["lms"]);
    const auto mode = j.at("mode") == "joint" ? FeatureMode::joint : FeatureMode::pipeline;
    return FeatureRegistry(mode, FamilySet::parse(j.at("families").get<std::string>()),
                           j.at("threshold").get<int>(),
                           NgramIndex(j.at("ngrams").get<std::vector<std::string>>()),
                           std::move(lms), j.at("num_classes").get<std::size_t>());
  }

 private:
  FeatureMode mode_ = FeatureMode::pipeline;
  FamilySet families_;
  int threshold_ = kDefaultNgramThreshold;
  NgramIndex ngrams_;
  std::optional<ClassLanguageModels> lms_;
  std::size_t num_classes_ = 0;
  std::vector<Segment> segments_;
  std::size_t width_ = 0;
};

// A unit to featurize: one message (pipeline) or a site's multi-message (joint).
struct FeatureInput {
  std::string text;
  TokenSeq tokens;
  std::optional<std::vector<std::string>> pos_tags;
  double distance_m = 0.0;
  double local_hour = 0.0;
};

inline FeatureInput message_input(const GeotaggedMessage& m, const LatLon& entity,
                                  double tz_offset_hours = kDefaultTzOffsetHours) {
  FeatureInput in;
  in.text = m.text;
  in.tokens = tokenize(m.text);
  in.pos_tags = m.pos_tags;
  in.distance_m = haversine_m(m.point, entity);
  in.local_hour = local_hour(m.timestamp, tz_offset_hours);
  return in;
}

// Concatenates a site's messages in record order with single spaces. POS tags
// are concatenated when at least one message carries them.
inline FeatureInput joint_input_text(const SiteRecord& r) {
  FeatureInput in;
  bool any_pos = false;
  std::vector<std::string> tags;
  for (std::size_t i = 0; i < r.messages.size(); ++i) {
    const auto& m = r.messages[i].message;
    if (i > 0) in.text += ' ';
    in.text += m.text;
    if (m.pos_tags) {
      any_pos = true;
      tags.insert(tags.end(), m.pos_tags->begin(), m.pos_tags->end());
    }
  }
  in.tokens = tokenize(in.text);
  if (any_pos) in.pos_tags = std::move(tags);
  return in;
}

inline FeatureVector assemble(const FeatureInput& in, const FeatureRegistry& reg,
                              PosDiagnostics* diag = nullptr) {
  FeatureVector v;
  for (const auto& seg : reg.segments()) {
    const auto base = static_cast<std::uint32_t>(seg.offset);
    switch (seg.family) {
      case Family::textual: {
        const auto t = textual_features(in.text);
        for (std::size_t i = 0; i < t.size(); ++i) v.push(base + static_cast<std::uint32_t>(i), t[i]);
        break;
      }
      case Family::ngrams: {
        for (const auto& [i, c] : ngram_features(in.tokens, reg.ngrams())) {
          v.push(base + static_cast<std::uint32_t>(i), c);
        }
        break;
      }
      case Family::lm: {
        const auto s = lm_features(in.tokens, *reg.lms());
        for (std::size_t i = 0; i < s.size(); ++i) v.push(base + static_cast<std::uint32_t>(i), s[i]);
        break;
      }
      case Family::pos: {
        GeotaggedMessage tmp;
        tmp.pos_tags = in.pos_tags;
        const auto p = pos_features(tmp, diag);
        for (std::size_t i = 0; i < p.size(); ++i) v.push(base + static_cast<std::uint32_t>(i), p[i]);
        break;
      }
      case Family::spatio_temporal: {
        const auto s = spatio_temporal_features(in.distance_m, in.local_hour);
        for (std::size_t i = 0; i < s.size(); ++i) v.push(base + static_cast<std::uint32_t>(i), s[i]);
        break;
      }
    }
  }
  return v;
}

}  // namespace geoloc
