#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "geoloc/domain.hpp"

namespace geoloc {

using TokenSeq = std::vector<std::string>;

inline const std::string kUnkToken = "<unk>";

// Closed vocabulary. Id 0 is always <unk>; every other token gets the next
// free id in first-seen order.
class Vocabulary {
 public:
  Vocabulary() { add(kUnkToken); }

  static std::shared_ptr<const Vocabulary> build(std::span<const TokenSeq> texts) {
    auto v = std::make_shared<Vocabulary>();
    for (const auto& t : texts) {
      for (const auto& tok : t) v->add(tok);
    }
    return v;
  }

  std::size_t add(const std::string& token) {
    auto [it, inserted] = ids_.emplace(token, tokens_.size());
    if (inserted) tokens_.push_back(token);
    return it->second;
  }

  // Unknown tokens resolve to <unk>.
  std::size_t id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnkId : it->second;
  }

  bool contains(const std::string& token) const { return ids_.count(token) > 0; }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  static constexpr std::size_t kUnkId = 0;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

struct LaplaceSmoothing {
  double alpha = 1.0;
};

class UnigramLM;

struct DirichletSmoothing {
  double mu = 2000.0;
  std::shared_ptr<const UnigramLM> background;
};

inline constexpr double kDefaultDirichletMu = 2000.0;

class UnigramLM {
 public:
  using Smoothing = std::variant<LaplaceSmoothing, DirichletSmoothing>;

  UnigramLM(std::shared_ptr<const Vocabulary> vocab, std::vector<double> counts,
            Smoothing smoothing)
      : vocab_(std::move(vocab)), counts_(std::move(counts)), smoothing_(std::move(smoothing)) {
    if (counts_.size() != vocab_->size()) throw ValidationError("count/vocab size mismatch");
    for (double c : counts_) total_ += c;
    if (auto* d = std::get_if<DirichletSmoothing>(&smoothing_)) {
      if (!d->background) throw ValidationError("Dirichlet smoothing needs a background model");
      if (d->background->vocab_ != vocab_) {
        throw ValidationError("Dirichlet background must share the vocabulary");
      }
      if (!(d->mu > 0.0)) throw ValidationError("Dirichlet mu must be > 0");
    }
    log_prob_.resize(counts_.size());
    for (std::size_t i = 0; i < counts_.size(); ++i) log_prob_[i] = std::log(prob_id(i));
  }

  double prob_id(std::size_t id) const {
    const double c = counts_.at(id);
    if (auto* l = std::get_if<LaplaceSmoothing>(&smoothing_)) {
      return (c + l->alpha) / (total_ + l->alpha * static_cast<double>(counts_.size()));
    }
    const auto& d = std::get<DirichletSmoothing>(smoothing_);
    return (c + d.mu * d.background->prob_id(id)) / (total_ + d.mu);
  }

  double prob(const std::string& token) const { return prob_id(vocab_->id(token)); }
  double log_prob_id(std::size_t id) const { return log_prob_[id]; }

  const Vocabulary& vocab() const { return *vocab_; }
  const std::shared_ptr<const Vocabulary>& vocab_ptr() const { return vocab_; }
  const std::vector<double>& counts() const { return counts_; }
  double total() const { return total_; }
  const Smoothing& smoothing() const { return smoothing_; }

 private:
  std::shared_ptr<const Vocabulary> vocab_;
  std::vector<double> counts_;
  double total_ = 0.0;
  Smoothing smoothing_;
  std::vector<double> log_prob_;
};

namespace detail {
inline std::vector<double> count_tokens(const Vocabulary& vocab, std::span<const TokenSeq> texts) {
  std::vector<double> counts(vocab.size(), 0.0);
  for (const auto& t : texts) {
    for (const auto& tok : t) counts[vocab.id(tok)] += 1.0;
  }
  // <unk> carries no training mass.
  counts[Vocabulary::kUnkId] = 0.0;
  return counts;
}
}  // namespace detail

// Laplace-smoothed unigram model over the vocabulary of `texts` (or `vocab`).
inline std::shared_ptr<const UnigramLM> train_unigram_laplace(
    std::span<const TokenSeq> texts, std::shared_ptr<const Vocabulary> vocab = nullptr,
    double alpha = 1.0) {
  if (!vocab) vocab = Vocabulary::build(texts);
  auto counts = detail::count_tokens(*vocab, texts);
  return std::make_shared<const UnigramLM>(vocab, std::move(counts), LaplaceSmoothing{alpha});
}

// Dirichlet-smoothed unigram model sharing the background's vocabulary.
inline std::shared_ptr<const UnigramLM> train_unigram_dirichlet(
    std::span<const TokenSeq> texts, std::shared_ptr<const UnigramLM> background,
    double mu = kDefaultDirichletMu) {
  auto counts = detail::count_tokens(background->vocab(), texts);
  auto vocab = background->vocab_ptr();
  return std::make_shared<const UnigramLM>(vocab, std::move(counts),
                                           DirichletSmoothing{mu, std::move(background)});
}

// Sum of log p(t) over the tokens; 0 for an empty sequence.
inline double query_log_likelihood(std::span<const std::string> tokens, const UnigramLM& lm) {
  double s = 0.0;
  for (const auto& t : tokens) s += lm.log_prob_id(lm.vocab().id(t));
  return s;
}

// Laplace bigram model with backoff to the Laplace unigram for contexts never
// seen as the left element of a training bigram.
class BigramLM {
 public:
  BigramLM(std::shared_ptr<const UnigramLM> unigram,
           std::unordered_map<std::uint64_t, double> bigram_counts,
           std::vector<double> context_counts)
      : unigram_(std::move(unigram)),
        bigram_counts_(std::move(bigram_counts)),
        context_counts_(std::move(context_counts)) {}

  static std::uint64_t key(std::size_t w1, std::size_t w2) {
    return (static_cast<std::uint64_t>(w1) << 32) | static_cast<std::uint64_t>(w2);
  }

  double cond_prob_id(std::size_t w2, std::size_t w1) const {
    const double ctx = context_counts_.at(w1);
    if (ctx <= 0.0) return unigram_->prob_id(w2);
    auto it = bigram_counts_.find(key(w1, w2));
    const double c = it == bigram_counts_.end() ? 0.0 : it->second;
    return (c + 1.0) / (ctx + static_cast<double>(vocab().size()));
  }

  // p(w2 | w1)
  double cond_prob(const std::string& w2, const std::string& w1) const {
    return cond_prob_id(vocab().id(w2), vocab().id(w1));
  }

  // p(w1) * p(w2 | w1)
  double joint_prob(const std::string& w1, const std::string& w2) const {
    const auto a = vocab().id(w1);
    return unigram_->prob_id(a) * cond_prob_id(vocab().id(w2), a);
  }

  const Vocabulary& vocab() const { return unigram_->vocab(); }
  const UnigramLM& unigram() const { return *unigram_; }
  const std::unordered_map<std::uint64_t, double>& bigram_counts() const { return bigram_counts_; }
  double context_count(std::size_t w1) const { return context_counts_.at(w1); }

 private:
  std::shared_ptr<const UnigramLM> unigram_;
  std::unordered_map<std::uint64_t, double> bigram_counts_;
  std::vector<double> context_counts_;
};

inline std::shared_ptr<const BigramLM> train_bigram(std::span<const TokenSeq> texts,
                                                    std::shared_ptr<const Vocabulary> vocab =
                                                        nullptr) {
  if (!vocab) vocab = Vocabulary::build(texts);
  auto uni = train_unigram_laplace(texts, vocab);
  std::unordered_map<std::uint64_t, double> bigrams;
  std::vector<double> ctx(vocab->size(), 0.0);
  for (const auto& t : texts) {
    for (std::size_t i = 0; i + 1 < t.size(); ++i) {
      const auto a = vocab->id(t[i]);
      const auto b = vocab->id(t[i + 1]);
      bigrams[BigramLM::key(a, b)] += 1.0;
      ctx[a] += 1.0;
    }
  }
  return std::make_shared<const BigramLM>(std::move(uni), std::move(bigrams), std::move(ctx));
}

// D_KL(p2 || p1) in nats. Both inputs must be strictly positive on the shared
// support and of equal length.
inline double kl_divergence(std::span<const double> p2, std::span<const double> p1) {
  if (p2.size() != p1.size()) throw ValidationError("KL inputs differ in support size");
  double s = 0.0;
  for (std::size_t i = 0; i < p2.size(); ++i) {
    if (p2[i] == 0.0) continue;
    if (!(p1[i] > 0.0)) throw ValidationError("KL reference distribution has zero mass");
    s += p2[i] * std::log(p2[i] / p1[i]);
  }
  return s < 0.0 ? 0.0 : s;
}

struct BigramContribution {
  std::string bigram;  // "w1 w2"
  double contribution = 0.0;
};

// Ranks the bigram types observed in `corpus_lm`'s training data by their
// contribution P_class(s) ln(P_class(s)/P_corpus(s)), each P being the joint
// smoothed bigram probability renormalized over that event space.
inline std::vector<BigramContribution> top_k_distinguishing_bigrams(const BigramLM& class_lm,
                                                                     const BigramLM& corpus_lm,
                                                                     std::size_t k) {
  if (k == 0) return {};
  struct Event {
    std::string w1, w2;
    double pc = 0.0, pk = 0.0;
  };
  std::vector<Event> events;
  events.reserve(corpus_lm.bigram_counts().size());
  const auto& cv = corpus_lm.vocab();
  double zc = 0.0, zk = 0.0;
  for (const auto& [key, count] : corpus_lm.bigram_counts()) {
    (void)count;
    Event e;
    e.w1 = cv.token(static_cast<std::size_t>(key >> 32));
    e.w2 = cv.token(static_cast<std::size_t>(key & 0xffffffffULL));
    e.pc = class_lm.joint_prob(e.w1, e.w2);
    e.pk = corpus_lm.joint_prob(e.w1, e.w2);
    zc += e.pc;
    zk += e.pk;
    events.push_back(std::move(e));
  }
  std::vector<BigramContribution> out;
  out.reserve(events.size());
  for (const auto& e : events) {
    const double pc = e.pc / zc;
    const double pk = e.pk / zk;
    out.push_back({e.w1 + " " + e.w2, pc * std::log(pc / pk)});
  }
  std::sort(out.begin(), out.end(), [](const BigramContribution& a, const BigramContribution& b) {
    if (a.contribution != b.contribution) return a.contribution > b.contribution;
    return a.bigram < b.bigram;
  });
  if (out.size() > k) out.resize(k);
  return out;
}

// --- persistence -------------------------------------------------------------

inline nlohmann::json unigram_to_json(const UnigramLM& lm) {
  nlohmann::json j;
  j["vocab"] = lm.vocab().tokens();
  j["counts"] = lm.counts();
  if (auto* l = std::get_if<LaplaceSmoothing>(&lm.smoothing())) {
    j["smoothing"] = {{"kind", "laplace"}, {"alpha", l->alpha}};
  } else {
    const auto& d = std::get<DirichletSmoothing>(lm.smoothing());
    j["smoothing"] = {{"kind", "dirichlet"}, {"mu", d.mu}};
  }
  return j;
}

inline std::shared_ptr<const Vocabulary> vocab_from_json(const nlohmann::json& tokens) {
  auto v = std::make_shared<Vocabulary>();
  for (const auto& t : tokens) v->add(t.get<std::string>());
  return v;
}

// `background` is required when the document describes a Dirichlet model.
inline std::shared_ptr<const UnigramLM> unigram_from_json(
    const nlohmann::json& j, std::shared_ptr<const UnigramLM> background = nullptr) {
  const auto& s = j.at("smoothing");
  auto counts = j.at("counts").get<std::vector<double>>();
  if (s.at("kind") == "laplace") {
    return std::make_shared<const UnigramLM>(vocab_from_json(j.at("vocab")), std::move(counts),
                                             LaplaceSmoothing{s.at("alpha").get<double>()});
  }
  if (!background) throw ParseError("Dirichlet model requires its background model");
  return std::make_shared<const UnigramLM>(background->vocab_ptr(), std::move(counts),
                                           DirichletSmoothing{s.at("mu").get<double>(), background});
}

}  // namespace geoloc
