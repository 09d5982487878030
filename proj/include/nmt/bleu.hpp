#pragma once

// Corpus BLEU (single reference, unsmoothed) and an add-one smoothed
// sentence BLEU used as the aligner's similarity.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "nmt/error.hpp"
#include "nmt/subword.hpp"
#include "nmt/unicode.hpp"

namespace nmt {

// Whitespace mode: NFC, then split on Unicode whitespace. Subword mode: the
// Viterbi segmentation of a SubwordModel, compared by piece id.
class Tokenization {
 public:
  static Tokenization whitespace() { return Tokenization(nullptr); }
  static Tokenization subword(const SubwordModel &model) { return Tokenization(&model); }

  bool is_subword() const { return model_ != nullptr; }

  std::vector<std::string> tokens(std::string_view line) const {
    if (!model_) return unicode::split_whitespace(unicode::nfc(line));
    std::vector<std::string> out;
    for (TokenId id : model_->encode(line)) out.push_back(std::to_string(id));
    return out;
  }

 private:
  explicit Tokenization(const SubwordModel *model) : model_(model) {}
  const SubwordModel *model_;
};

struct BleuReport {
  double bleu = 0.0;  // 0..100
  std::array<double, 4> precisions{};
  double brevity_penalty = 0.0;
  size_t hyp_len = 0;
  size_t ref_len = 0;
  std::array<size_t, 4> matches{};
  std::array<size_t, 4> totals{};

  bool operator==(const BleuReport &) const = default;
};

namespace detail {

using NgramCounts = std::map<std::vector<std::string_view>, size_t>;

inline NgramCounts count_ngrams(const std::vector<std::string> &tokens, size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (size_t i = 0; i + n <= tokens.size(); ++i) {
    std::vector<std::string_view> gram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                       tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
    ++counts[gram];
  }
  return counts;
}

// Clipped matches and hypothesis n-gram total for order n.
inline std::pair<size_t, size_t> clipped_matches(const std::vector<std::string> &hyp,
                                                 const std::vector<std::string> &ref,
                                                 size_t n) {
  NgramCounts hyp_counts = count_ngrams(hyp, n);
  NgramCounts ref_counts = count_ngrams(ref, n);
  size_t matches = 0;
  for (const auto &[gram, count] : hyp_counts) {
    auto it = ref_counts.find(gram);
    if (it != ref_counts.end()) matches += std::min(count, it->second);
  }
  size_t total = hyp.size() >= n ? hyp.size() - n + 1 : 0;
  return {matches, total};
}

inline double brevity_penalty(size_t hyp_len, size_t ref_len) {
  if (hyp_len >= ref_len) return 1.0;
  if (hyp_len == 0) return 0.0;
  return std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
}

}  // namespace detail

inline BleuReport corpus_bleu(const std::vector<std::string> &hyps,
                              const std::vector<std::string> &refs,
                              const Tokenization &mode = Tokenization::whitespace()) {
  if (hyps.size() != refs.size()) {
    throw InputError("hypothesis count " + std::to_string(hyps.size()) +
                     " does not match reference count " + std::to_string(refs.size()));
  }
  if (hyps.empty()) throw InputError("corpus_bleu needs at least one sentence");
  BleuReport report;
  for (size_t s = 0; s < hyps.size(); ++s) {
    auto hyp = mode.tokens(hyps[s]);
    auto ref = mode.tokens(refs[s]);
    report.hyp_len += hyp.size();
    report.ref_len += ref.size();
    for (size_t n = 1; n <= 4; ++n) {
      auto [matches, total] = detail::clipped_matches(hyp, ref, n);
      report.matches[n - 1] += matches;
      report.totals[n - 1] += total;
    }
  }
  double log_sum = 0.0;
  bool any_zero = false;
  for (size_t n = 0; n < 4; ++n) {
    report.precisions[n] = report.totals[n] == 0
                               ? 0.0
                               : static_cast<double>(report.matches[n]) /
                                     static_cast<double>(report.totals[n]);
    if (report.precisions[n] <= 0.0) {
      any_zero = true;
    } else {
      log_sum += std::log(report.precisions[n]);
    }
  }
  report.brevity_penalty = detail::brevity_penalty(report.hyp_len, report.ref_len);
  report.bleu = any_zero ? 0.0 : 100.0 * report.brevity_penalty * std::exp(log_sum / 4.0);
  return report;
}

// Sentence BLEU on a 0..1 scale. Orders >= 2 use (matches + 1) / (total + 1);
// the unigram precision is left unsmoothed, so sentences without a shared
// token score 0.
inline double sentence_bleu_smoothed(std::string_view hyp_line, std::string_view ref_line,
                                     size_t max_order = 2) {
  if (max_order < 1 || max_order > 4) throw ConfigError("max_order must be in 1..4");
  auto hyp = unicode::split_whitespace(unicode::nfc(hyp_line));
  auto ref = unicode::split_whitespace(unicode::nfc(ref_line));
  if (hyp.empty() || ref.empty()) return 0.0;
  double log_sum = 0.0;
  for (size_t n = 1; n <= max_order; ++n) {
    auto [matches, total] = detail::clipped_matches(hyp, ref, n);
    double precision = n == 1 ? static_cast<double>(matches) / static_cast<double>(total)
                              : static_cast<double>(matches + 1) /
                                    static_cast<double>(total + 1);
    if (precision <= 0.0) return 0.0;
    log_sum += std::log(precision);
  }
  return detail::brevity_penalty(hyp.size(), ref.size()) *
         std::exp(log_sum / static_cast<double>(max_order));
}

// Two decimals on the 0..100 scale.
inline std::string format_score(double bleu) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.2f", bleu);
  return buffer;
}

}  // namespace nmt
