#pragma once

// BLEU for every ordered language pair of a multiway test set.

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nmt/align.hpp"
#include "nmt/bleu.hpp"
#include "nmt/checkpoint.hpp"
#include "nmt/transformer.hpp"

namespace nmt {

struct EvalGrid {
  std::vector<std::string> langs;
  // cells[i][j] scores langs[i] -> langs[j]; nullopt when no tuple has both.
  std::vector<std::vector<std::optional<BleuReport>>> cells;

  std::string to_tsv() const {
    std::string out = "src\\tgt";
    for (const auto &lang : langs) out += "\t" + lang;
    out += "\n";
    for (size_t i = 0; i < langs.size(); ++i) {
      out += langs[i];
      for (size_t j = 0; j < langs.size(); ++j) {
        out += "\t";
        out += cells[i][j] ? format_score(cells[i][j]->bleu) : std::string(kAbsentCell);
      }
      out += "\n";
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json records = nlohmann::json::array();
    for (size_t i = 0; i < langs.size(); ++i) {
      for (size_t j = 0; j < langs.size(); ++j) {
        nlohmann::json record{{"src", langs[i]}, {"tgt", langs[j]}};
        if (const auto &cell = cells[i][j]) {
          record["bleu"] = cell->bleu;
          record["precisions"] = cell->precisions;
          record["brevity_penalty"] = cell->brevity_penalty;
          record["hyp_len"] = cell->hyp_len;
          record["ref_len"] = cell->ref_len;
        } else {
          record["bleu"] = nullptr;
        }
        records.push_back(std::move(record));
      }
    }
    return records;
  }
};

// Source lines and references for src -> tgt over the tuples holding both.
struct DirectionData {
  std::vector<std::string> sources;
  std::vector<std::string> references;
};

inline DirectionData direction_data(const std::vector<MultiwayTuple> &tuples,
                                    const std::string &src, const std::string &tgt) {
  DirectionData data;
  for (const auto &tuple : tuples) {
    auto s = tuple.sentences.find(src);
    auto t = tuple.sentences.find(tgt);
    if (s == tuple.sentences.end() || t == tuple.sentences.end()) continue;
    data.sources.push_back(s->second);
    data.references.push_back(t->second);
  }
  return data;
}

struct GridOptions {
  size_t max_out = 128;
  size_t chunk_size = 64;
};

// Greedy translations of `lines` into `tgt`, decoded in fixed-size chunks.
inline std::vector<std::string> translate_lines(const Transformer<float> &model,
                                                const SubwordModel &vocab,
                                                const std::vector<std::string> &lines,
                                                const std::string &tgt,
                                                const GridOptions &options = {}) {
  std::vector<std::string> out;
  out.reserve(lines.size());
  for (size_t begin = 0; begin < lines.size(); begin += options.chunk_size) {
    size_t end = std::min(lines.size(), begin + options.chunk_size);
    std::vector<std::string> chunk(lines.begin() + static_cast<std::ptrdiff_t>(begin),
                                   lines.begin() + static_cast<std::ptrdiff_t>(end));
    for (auto &line : greedy_decode_batch(model, vocab, chunk, tgt, options.max_out)) {
      out.push_back(std::move(line));
    }
  }
  return out;
}

inline EvalGrid eval_grid(const Checkpoint &ckpt, const SubwordModel &vocab,
                          const std::vector<MultiwayTuple> &tuples, const Tokenization &mode,
                          const GridOptions &options = {}) {
  if (tuples.empty()) throw InputError("evaluation set is empty");
  if (ckpt.vocab_hash != vocab.hash()) {
    throw ConfigError("checkpoint vocabulary does not match the subword model");
  }
  ModelConfig config = ckpt.config;
  config.dropout = 0.0;
  Transformer<float> model(config, ckpt.params);
  EvalGrid grid;
  grid.langs = multiway_languages(tuples);
  for (const auto &lang : grid.langs) {
    if (!vocab.has_language(lang)) {
      throw ConfigError("language '" + lang + "' is not registered in the vocabulary");
    }
  }
  const size_t n = grid.langs.size();
  grid.cells.assign(n, std::vector<std::optional<BleuReport>>(n));
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < n; ++j) {
      DirectionData data = direction_data(tuples, grid.langs[i], grid.langs[j]);
      if (data.sources.empty()) continue;
      auto hyps = translate_lines(model, vocab, data.sources, grid.langs[j], options);
      grid.cells[i][j] = corpus_bleu(hyps, data.references, mode);
    }
  }
  return grid;
}

}  // namespace nmt
