#pragma once

// Synthetic parallel data from monolingual text: lines in a low-resource
// language are translated into a pivot, and the pair is stored pivot -> lang.

#include <string>
#include <vector>

#include "nmt/checkpoint.hpp"
#include "nmt/corpus.hpp"
#include "nmt/log.hpp"
#include "nmt/transformer.hpp"
#include "nmt/unicode.hpp"

namespace nmt {

struct BacktranslateOptions {
  // Pivots other than en and hi need this set.
  bool allow_any_pivot = false;
  size_t max_out = 128;
  double min_length_ratio = 0.3;
  double max_length_ratio = 3.0;
  size_t chunk_size = 64;
};

struct BacktranslateResult {
  std::vector<ParallelExample> examples;
  size_t skipped_empty = 0;
  size_t filtered_ratio = 0;
};

inline BacktranslateResult backtranslate(const Checkpoint &ckpt, const SubwordModel &vocab,
                                         const std::vector<std::string> &mono,
                                         const LangCode &lang, const LangCode &pivot,
                                         const BacktranslateOptions &options = {}) {
  if (!options.allow_any_pivot && pivot.str() != "en" && pivot.str() != "hi") {
    throw ConfigError("backtranslation pivot '" + pivot.str() +
                      "' is not allowed: only {hi, en} -> xx samples are added unless "
                      "the pivot restriction is overridden");
  }
  if (lang == pivot) throw ConfigError("backtranslation needs lang != pivot");
  if (ckpt.vocab_hash != vocab.hash()) {
    throw ConfigError("checkpoint vocabulary does not match the subword model");
  }
  ckpt.config.check_vocabulary(vocab);
  vocab.control_id(pivot.str());
  vocab.control_id(lang.str());

  BacktranslateResult result;
  std::vector<std::string> lines;
  for (const auto &line : mono) {
    std::string normalized = unicode::normalize(line);
    if (!normalized.empty()) lines.push_back(std::move(normalized));
  }
  ModelConfig config = ckpt.config;
  config.dropout = 0.0;
  Transformer<float> model(config, ckpt.params);
  for (size_t begin = 0; begin < lines.size(); begin += options.chunk_size) {
    size_t end = std::min(lines.size(), begin + options.chunk_size);
    std::vector<std::string> chunk(lines.begin() + begin, lines.begin() + end);
    auto decoded = greedy_decode_batch(model, vocab, chunk, pivot.str(), options.max_out);
    for (size_t i = 0; i < chunk.size(); ++i) {
      if (decoded[i].empty()) {
        ++result.skipped_empty;
        continue;
      }
      ParallelExample ex = make_example(vocab, {pivot, lang}, decoded[i], chunk[i],
                                        Provenance::kBacktranslated);
      double src_len = static_cast<double>(ex.src_ids.size() - 2);
      double tgt_len = static_cast<double>(ex.tgt_ids.size() - 2);
      double ratio = src_len / tgt_len;
      if (ratio < options.min_length_ratio || ratio > options.max_length_ratio) {
        ++result.filtered_ratio;
        continue;
      }
      result.examples.push_back(std::move(ex));
    }
  }
  if (result.skipped_empty || result.filtered_ratio) {
    logger().info("backtranslation kept {} pair(s); {} empty decode(s), {} outside the length "
                  "ratio window",
                  result.examples.size(), result.skipped_empty, result.filtered_ratio);
  }
  return result;
}

}  // namespace nmt
