#pragma once

// EM training of a unigram-LM piece inventory. Words are scored as marked
// code point strings ("▁word"); the E-step runs forward-backward over each
// word's segmentation lattice and the M-step re-estimates piece probabilities
// by maximum likelihood. Pruning rounds remove the multi-character pieces
// whose loss costs the least likelihood until the vocabulary fits.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "nmt/error.hpp"
#include "nmt/log.hpp"
#include "nmt/subword.hpp"
#include "nmt/unicode.hpp"

namespace nmt {

struct UnigramOptions {
  // Upper bound on the full vocabulary, reserved tokens included.
  size_t target_size = 4000;
  // Seed inventory is capped at seed_multiplier * target_size pieces.
  size_t seed_multiplier = 4;
  std::vector<std::string> languages;
  size_t max_piece_length = 8;
  int em_iterations_per_round = 2;
  double shrink_factor = 0.75;
};

namespace detail {

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

}  // namespace detail

class UnigramTrainer {
 public:
  struct Candidate {
    std::u32string text;
    double logprob = 0.0;
  };

  UnigramTrainer(const std::vector<std::string> &corpus, UnigramOptions options)
      : options_(std::move(options)) {
    std::map<std::u32string, double> counts;
    for (const auto &line : corpus) {
      std::string normalized = unicode::normalize(line);
      if (normalized.empty()) continue;
      std::u32string marked = mark_words(normalized);
      size_t start = 0;
      for (size_t i = 1; i <= marked.size(); ++i) {
        if (i == marked.size() || marked[i] == kWordMarker) {
          counts[marked.substr(start, i - start)] += 1.0;
          start = i;
        }
      }
    }
    if (counts.empty()) throw InputError("unigram training corpus is empty");
    for (auto &[word, count] : counts) words_.push_back({word, count});

    std::map<char32_t, double> chars;
    for (const auto &word : words_) {
      for (char32_t c : word.text) chars[c] += word.count;
    }
    size_t reserved = SubwordModel::kNumSpecials + options_.languages.size();
    size_t floor = chars.size() + reserved;
    if (options_.target_size < floor) {
      throw ConfigError("target vocabulary size " +
                        std::to_string(options_.target_size) +
                        " is below the character coverage floor " +
                        std::to_string(floor));
    }
    target_pieces_ = options_.target_size - reserved;
    seed(chars);
  }

  const std::vector<Candidate> &pieces() const { return pieces_; }
  size_t target_pieces() const { return target_pieces_; }

  // One EM iteration at fixed vocabulary. Returns the corpus log-likelihood
  // under the parameters *before* the update.
  double em_step() {
    std::vector<double> expected(pieces_.size(), 0.0);
    double log_likelihood = expectation(expected);
    maximization(expected);
    return log_likelihood;
  }

  // Removes the cheapest multi-character pieces, keeping at least
  // max(target, shrink_factor * current). Returns false if nothing was pruned.
  bool prune() {
    if (pieces_.size() <= target_pieces_) return false;
    size_t keep = std::max(
        target_pieces_,
        static_cast<size_t>(options_.shrink_factor *
                            static_cast<double>(pieces_.size())));
    PieceTrie trie = build_trie();
    std::vector<double> viterbi_counts(pieces_.size(), 0.0);
    for (const auto &word : words_) {
      for (int32_t piece : viterbi(trie, word.text, -1)) {
        viterbi_counts[static_cast<size_t>(piece)] += word.count;
      }
    }

    struct Scored {
      size_t index;
      double loss;
    };
    std::vector<Scored> removable;
    std::vector<size_t> kept;
    for (size_t i = 0; i < pieces_.size(); ++i) {
      if (pieces_[i].text.size() == 1) {
        kept.push_back(i);
        continue;
      }
      double loss = 0.0;
      if (viterbi_counts[i] > 0.0) {
        double alternative = 0.0;
        for (int32_t alt : viterbi(trie, pieces_[i].text,
                                   static_cast<int32_t>(i))) {
          alternative += pieces_[static_cast<size_t>(alt)].logprob;
        }
        loss = viterbi_counts[i] * (pieces_[i].logprob - alternative);
      }
      removable.push_back({i, loss});
    }
    std::sort(removable.begin(), removable.end(),
              [&](const Scored &a, const Scored &b) {
                if (a.loss != b.loss) return a.loss > b.loss;
                return pieces_[a.index].text < pieces_[b.index].text;
              });
    size_t slots = keep > kept.size() ? keep - kept.size() : 0;
    for (size_t i = 0; i < std::min(slots, removable.size()); ++i) {
      kept.push_back(removable[i].index);
    }
    std::sort(kept.begin(), kept.end());
    std::vector<Candidate> next;
    next.reserve(kept.size());
    for (size_t index : kept) next.push_back(pieces_[index]);
    pieces_ = std::move(next);
    // Characters that only ever appeared inside removed pieces may have zero
    // mass; revive them so every word keeps a finite-probability path.
    double lowest = 0.0;
    for (const auto &piece : pieces_) {
      if (std::isfinite(piece.logprob)) lowest = std::min(lowest, piece.logprob);
    }
    for (auto &piece : pieces_) {
      if (piece.text.size() == 1 && !std::isfinite(piece.logprob)) {
        piece.logprob = lowest;
      }
    }
    renormalize();
    return true;
  }

  // Runs EM rounds interleaved with pruning until the size bound holds.
  SubwordModel train() {
    while (true) {
      for (int i = 0; i < options_.em_iterations_per_round; ++i) em_step();
      if (pieces_.size() <= target_pieces_) break;
      prune();
    }
    return finalize();
  }

  // Freezes the current inventory into a model. Multi-character pieces with
  // zero probability are dropped; characters are floored so coverage holds.
  SubwordModel finalize() {
    std::vector<double> expected(pieces_.size(), 0.0);
    expectation(expected);
    double mass = 0.0;
    for (double c : expected) mass += c;

    std::vector<std::pair<std::string, double>> probs;
    double total = 0.0;
    for (size_t i = 0; i < pieces_.size(); ++i) {
      double p = std::exp(pieces_[i].logprob);
      if (pieces_[i].text.size() > 1 && !(p > 0.0)) continue;
      p = std::max(p, 1e-12);
      probs.push_back({unicode::to_utf8(pieces_[i].text), p});
      total += p;
    }
    std::vector<Piece> out;
    out.reserve(probs.size());
    for (auto &[surface, p] : probs) {
      out.push_back({surface, std::min(0.0, std::log(p / total))});
    }
    std::stable_sort(out.begin(), out.end(), [](const Piece &a, const Piece &b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      return a.surface < b.surface;
    });
    return SubwordModel(options_.languages, std::move(out),
                        mass > 0.0 ? mass : 1.0);
  }

 private:
  struct Word {
    std::u32string text;
    double count = 0.0;
  };

  void seed(const std::map<char32_t, double> &chars) {
    std::unordered_map<std::u32string, double> substrings;
    for (const auto &word : words_) {
      const size_t n = word.text.size();
      for (size_t begin = 0; begin < n; ++begin) {
        size_t max_len = std::min(options_.max_piece_length, n - begin);
        for (size_t len = 2; len <= max_len; ++len) {
          substrings[word.text.substr(begin, len)] += word.count;
        }
      }
    }
    std::vector<std::pair<std::u32string, double>> multi;
    for (auto &[text, count] : substrings) {
      if (count >= 2.0) multi.push_back({text, count});
    }
    std::sort(multi.begin(), multi.end(), [](const auto &a, const auto &b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    size_t cap = options_.seed_multiplier * options_.target_size;
    size_t room = cap > chars.size() ? cap - chars.size() : 0;
    if (multi.size() > room) multi.resize(room);

    for (const auto &[c, count] : chars) {
      pieces_.push_back({std::u32string(1, c), std::log(count)});
    }
    for (const auto &[text, count] : multi) {
      pieces_.push_back({text, std::log(count)});
    }
    renormalize();
    logger().debug("unigram seed: {} characters, {} multi-character pieces",
                   chars.size(), multi.size());
  }

  void renormalize() {
    double total = -std::numeric_limits<double>::infinity();
    for (const auto &piece : pieces_) total = detail::log_add(total, piece.logprob);
    for (auto &piece : pieces_) piece.logprob -= total;
  }

  PieceTrie build_trie() const {
    PieceTrie trie;
    for (size_t i = 0; i < pieces_.size(); ++i) {
      trie.insert(pieces_[i].text, static_cast<int32_t>(i));
    }
    return trie;
  }

  // Forward-backward over every word lattice; accumulates expected counts and
  // returns the corpus log-likelihood.
  double expectation(std::vector<double> &expected) {
    PieceTrie trie = build_trie();
    const double neg_inf = -std::numeric_limits<double>::infinity();
    double log_likelihood = 0.0;
    struct Edge {
      size_t begin;
      size_t end;
      int32_t piece;
    };
    std::vector<Edge> edges;
    std::vector<double> alpha;
    std::vector<double> beta;
    for (const auto &word : words_) {
      const std::u32string &text = word.text;
      const size_t n = text.size();
      edges.clear();
      for (size_t i = 0; i < n; ++i) {
        trie.for_each_prefix(text, i, [&](size_t end, int32_t piece) {
          edges.push_back({i, end, piece});
        });
      }
      // Edges are ordered by begin; a stable sort by end gives forward order.
      std::vector<Edge> by_end = edges;
      std::stable_sort(by_end.begin(), by_end.end(),
                       [](const Edge &a, const Edge &b) { return a.end < b.end; });
      alpha.assign(n + 1, neg_inf);
      alpha[0] = 0.0;
      for (const Edge &e : by_end) {
        double lp = pieces_[static_cast<size_t>(e.piece)].logprob;
        alpha[e.end] = detail::log_add(alpha[e.end], alpha[e.begin] + lp);
      }
      beta.assign(n + 1, neg_inf);
      beta[n] = 0.0;
      for (auto it = edges.rbegin(); it != edges.rend(); ++it) {
        double lp = pieces_[static_cast<size_t>(it->piece)].logprob;
        beta[it->begin] = detail::log_add(beta[it->begin], beta[it->end] + lp);
      }
      double z = alpha[n];
      if (!std::isfinite(z)) continue;
      log_likelihood += word.count * z;
      for (const Edge &e : edges) {
        double lp = pieces_[static_cast<size_t>(e.piece)].logprob;
        double posterior = std::exp(alpha[e.begin] + lp + beta[e.end] - z);
        expected[static_cast<size_t>(e.piece)] += word.count * posterior;
      }
    }
    return log_likelihood;
  }

  void maximization(const std::vector<double> &expected) {
    double total = 0.0;
    for (double c : expected) total += c;
    for (size_t i = 0; i < pieces_.size(); ++i) {
      pieces_[i].logprob = expected[i] > 0.0
                               ? std::log(expected[i] / total)
                               : -std::numeric_limits<double>::infinity();
    }
  }

  // Best segmentation of `text` as piece indices, optionally excluding one
  // piece. Falls back to characters, which are always present.
  std::vector<int32_t> viterbi(const PieceTrie &trie, std::u32string_view text,
                               int32_t excluded) const {
    const size_t n = text.size();
    const double neg_inf = -std::numeric_limits<double>::infinity();
    std::vector<double> score(n + 1, neg_inf);
    std::vector<std::pair<size_t, int32_t>> back(n + 1, {0, -1});
    score[0] = 0.0;
    for (size_t i = 0; i < n; ++i) {
      if (score[i] == neg_inf) continue;
      trie.for_each_prefix(text, i, [&](size_t end, int32_t piece) {
        if (piece == excluded) return;
        double candidate = score[i] + pieces_[static_cast<size_t>(piece)].logprob;
        if (candidate > score[end] || back[end].second < 0) {
          score[end] = candidate;
          back[end] = {i, piece};
        }
      });
    }
    std::vector<int32_t> out;
    for (size_t pos = n; pos > 0 && back[pos].second >= 0; pos = back[pos].first) {
      out.push_back(back[pos].second);
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  UnigramOptions options_;
  std::vector<Word> words_;
  std::vector<Candidate> pieces_;
  size_t target_pieces_ = 0;
};

inline SubwordModel train_unigram(const std::vector<std::string> &corpus,
                                  const UnigramOptions &options) {
  return UnigramTrainer(corpus, options).train();
}

}  // namespace nmt
