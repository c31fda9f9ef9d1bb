#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoloc/domain.hpp"
#include "geoloc/evaluation.hpp"
#include "geoloc/ingest.hpp"
#include "geoloc/pipeline.hpp"
#include "geoloc/synth.hpp"

namespace geoloc {

// Flat key = value settings shared by every command. Unknown keys are errors.
class RunConfig {
 public:
  RunConfig() : values_(defaults()) {}

  static const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> d{
        {"seed", "42"},
        // synth
        {"synth.locations", "600"},
        {"synth.priors", "0.327,0.08,0.154,0.098,0.065,0.276"},
        {"synth.messages_mean", "10.9,22.4,46.4,119.2,132.6,14.2"},
        {"synth.noise_rate", "0.6"},
        {"synth.signal_vocab", "50"},
        {"synth.signal_pool", "0"},
        {"synth.noise_vocab", "500"},
        {"synth.zipf_exponent", "1.1"},
        {"synth.signal_share", "0.15"},
        {"synth.phrase_rate", "1"},
        {"synth.phrase_pool", "40"},
        {"synth.length_mean", "9"},
        {"synth.pos_tags", "true"},
        {"synth.sprinkle_rate", "0.25"},
        {"synth.embedding_dim", "50"},
        // ingest
        {"radius_m", "20"},
        {"min_messages", "5"},
        {"subsample", "true"},
        // features and models
        {"families", "ngrams"},
        {"ngram_threshold", "5"},
        {"dirichlet_mu", "2000"},
        {"tz_offset_hours", "-5"},
        {"l2_lambda", "1"},
        {"logit_max_iters", "1000"},
        {"logit_tol", "1e-6"},
        {"nb_alpha", "1"},
        {"cnn_filters", "100"},
        {"cnn_widths", "3,4,5"},
        {"cnn_lr", "0.001"},
        {"cnn_batch", "16"},
        {"cnn_epochs", "10"},
        {"cnn_init_range", "0.05"},
        {"ordering", "random"},
        {"aggregation", "diagonal"},
        // evaluation
        {"repetitions", "10"},
        {"split", "64:16:20"},
        {"family_search", "none"},
        {"lambda_grid", "0.01,0.1,1,10"},
        {"ablation_families", "all"},
        {"top_k_bigrams", "10"},
    };
    return d;
  }

  // Lines are `key = value`; `#` starts a comment.
  static RunConfig parse(std::istream& in, const std::string& source = "config") {
    RunConfig c;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      if (trim(line).empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ParseError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
      }
      try {
        c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
      } catch (const ValidationError& e) {
        throw ParseError(source + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    return c;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read config file: " + path);
    return parse(in, path);
  }

  void set(const std::string& key, const std::string& value) {
    if (!defaults().count(key)) throw ValidationError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  // "key=value" form used by --set.
  void set_assignment(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError("expected key=value, got '" + kv + "'");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
    return it->second;
  }

  double num(const std::string& key) const { return to_double(key, str(key)); }

  long long integer(const std::string& key) const {
    const auto& s = str(key);
    long long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) {
      throw ValidationError("config key '" + key + "' expects an integer, got '" + s + "'");
    }
    return v;
  }

  bool boolean(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ValidationError("config key '" + key + "' expects true/false, got '" + s + "'");
  }

  std::vector<double> list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& part : split(str(key), ',')) out.push_back(to_double(key, part));
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
  }

  std::string dump() const {
    std::string s;
    for (const auto& [k, v] : values_) s += k + " = " + v + "\n";
    return s;
  }

  // ---- typed views ---------------------------------------------------------

  std::uint64_t seed() const { return static_cast<std::uint64_t>(integer("seed")); }

  SynthConfig synth() const {
    SynthConfig s;
    s.seed = seed();
    s.locations = static_cast<int>(integer("synth.locations"));
    s.priors = list("synth.priors");
    s.messages_mean = list("synth.messages_mean");
    s.noise_rate = num("synth.noise_rate");
    s.signal_vocab = static_cast<int>(integer("synth.signal_vocab"));
    s.signal_pool = static_cast<int>(integer("synth.signal_pool"));
    s.noise_vocab = static_cast<int>(integer("synth.noise_vocab"));
    s.zipf_exponent = num("synth.zipf_exponent");
    s.signal_share = num("synth.signal_share");
    s.phrase_rate = num("synth.phrase_rate");
    s.phrase_pool = static_cast<int>(integer("synth.phrase_pool"));
    s.length_mean = num("synth.length_mean");
    s.pos_tags = boolean("synth.pos_tags");
    s.sprinkle_rate = num("synth.sprinkle_rate");
    s.embedding_dim = static_cast<int>(integer("synth.embedding_dim"));
    s.tz_offset_hours = num("tz_offset_hours");
    s.validate();
    return s;
  }

  IngestConfig ingest() const {
    IngestConfig c;
    c.radius_m = num("radius_m");
    c.min_messages = static_cast<int>(integer("min_messages"));
    c.subsample_to_class_mean = boolean("subsample");
    c.seed = seed();
    c.validate();
    return c;
  }

  ModelSpec model_spec() const {
    ModelSpec m;
    m.families = FamilySet::parse(str("families"));
    if (m.families.empty()) throw ValidationError("families must name at least one family");
    m.ngram_threshold = static_cast<int>(integer("ngram_threshold"));
    m.dirichlet_mu = num("dirichlet_mu");
    m.tz_offset_hours = num("tz_offset_hours");
    m.logit.l2_lambda = num("l2_lambda");
    m.logit.max_iters = static_cast<int>(integer("logit_max_iters"));
    m.logit.tol = num("logit_tol");
    m.nb_alpha = num("nb_alpha");
    m.cnn.filters_per_width = static_cast<std::size_t>(integer("cnn_filters"));
    m.cnn.widths.clear();
    for (double w : list("cnn_widths")) {
      if (w < 1 || w != std::floor(w)) throw ValidationError("cnn_widths must be positive integers");
      m.cnn.widths.push_back(static_cast<std::size_t>(w));
    }
    m.cnn.learning_rate = num("cnn_lr");
    m.cnn.batch_size = static_cast<std::size_t>(integer("cnn_batch"));
    m.cnn.epochs = static_cast<int>(integer("cnn_epochs"));
    m.cnn.init_range = num("cnn_init_range");
    m.cnn.seed = seed();
    m.ordering = ordering_from_name(str("ordering"));
    m.aggregation = aggregation_from_name(str("aggregation"));
    m.radius_m = num("radius_m");
    m.seed = seed();
    if (m.logit.l2_lambda < 0) throw ValidationError("l2_lambda must be >= 0");
    if (m.nb_alpha <= 0) throw ValidationError("nb_alpha must be > 0");
    if (m.ngram_threshold < 1) throw ValidationError("ngram_threshold must be >= 1");
    return m;
  }

  SplitPlan split_plan() const {
    SplitPlan p;
    p.repetitions = static_cast<int>(integer("repetitions"));
    const auto parts = split(str("split"), ':');
    if (parts.size() != 3) throw ValidationError("split must look like 64:16:20");
    p.train_pct = static_cast<int>(to_double("split", parts[0]));
    p.dev_pct = static_cast<int>(to_double("split", parts[1]));
    p.test_pct = static_cast<int>(to_double("split", parts[2]));
    p.seed = seed();
    p.validate();
    return p;
  }

  // family_search: "none" (fixed families), "powerset" (every non-empty
  // subset), or a ';'-separated list such as "ngrams;ngrams+lm".
  EvalOptions eval_options() const {
    EvalOptions o;
    const auto& fs = str("family_search");
    if (fs == "powerset") {
      o.family_candidates = family_power_set();
    } else if (fs != "none" && !fs.empty()) {
      for (const auto& part : split(fs, ';')) o.family_candidates.push_back(FamilySet::parse(part));
    }
    if (!str("lambda_grid").empty()) o.lambda_grid = list("lambda_grid");
    return o;
  }

  FamilySet ablation_families() const { return FamilySet::parse(str("ablation_families")); }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, sep)) {
      part = trim(part);
      if (!part.empty()) out.push_back(part);
    }
    return out;
  }

  static double to_double(const std::string& key, const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ValidationError("config key '" + key + "' expects a number, got '" + s + "'");
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace geoloc
