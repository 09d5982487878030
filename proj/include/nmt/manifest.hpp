#pragma once

// Run manifests: `key = value` lines, `#` comments, and repeated `[corpus]` /
// `[heldout]` sections describing the training data. Relative paths resolve
// against the manifest's directory.
//
//   vocab = vocab.spm
//   output_dir = runs/base
//   seed = 7
//   d_model = 64
//   max_steps = 2000
//
//   [corpus]
//   direction = hi-en
//   path = train.hi-en.tsv
//   weight = 1.0

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nmt/batching.hpp"
#include "nmt/corpus.hpp"
#include "nmt/error.hpp"
#include "nmt/io.hpp"
#include "nmt/trainer.hpp"
#include "nmt/transformer.hpp"

namespace nmt {

struct CorpusEntry {
  Direction direction;
  // Either a TSV (`path`), a line-aligned file pair (`src` + `tgt`), or, for
  // copy provenance, a monolingual file in `path`.
  std::filesystem::path path;
  std::filesystem::path src;
  std::filesystem::path tgt;
  double weight = 1.0;
  Provenance provenance = Provenance::kAuthentic;
};

struct RunManifest {
  std::filesystem::path source;
  std::filesystem::path vocab;
  std::filesystem::path output_dir;
  std::optional<std::filesystem::path> init;
  uint64_t seed = 1;
  ModelConfig model;
  TrainConfig training;
  BatchingOptions batching;
  double temperature = 1.7;
  std::vector<CorpusEntry> corpora;
  std::vector<CorpusEntry> heldout;
};

namespace detail {

inline std::string trim(std::string_view text) {
  size_t begin = text.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  size_t end = text.find_last_not_of(" \t\r");
  return std::string(text.substr(begin, end - begin + 1));
}

template <typename N>
N parse_number(const std::string &value, const std::string &where) {
  try {
    size_t used = 0;
    N out{};
    if constexpr (std::is_floating_point_v<N>) {
      out = static_cast<N>(std::stod(value, &used));
    } else {
      if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
      out = static_cast<N>(std::stoull(value, &used));
    }
    if (used != value.size()) throw std::invalid_argument("trailing text");
    return out;
  } catch (const std::logic_error &) {
    throw ConfigError(where + ": '" + value + "' is not a valid number");
  }
}

}  // namespace detail

inline RunManifest parse_manifest(const std::string &text, const std::filesystem::path &source) {
  RunManifest manifest;
  manifest.source = source;
  const std::filesystem::path base = source.parent_path();
  auto resolve = [&](const std::string &value) {
    std::filesystem::path p(value);
    return p.is_absolute() ? p : base / p;
  };

  std::map<std::string, std::string> top;
  std::vector<std::pair<std::string, std::map<std::string, std::string>>> sections;
  std::map<std::string, std::string> *current = &top;
  auto lines = io::split_lines(text, source.string());
  for (size_t i = 0; i < lines.size(); ++i) {
    std::string where = source.string() + ":" + std::to_string(i + 1);
    std::string line = detail::trim(lines[i]);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line != "[corpus]" && line != "[heldout]") {
        throw ConfigError(where + ": unknown section " + line);
      }
      sections.push_back({line.substr(1, line.size() - 2), {}});
      current = &sections.back().second;
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError(where + ": empty key or value");
    if (!current->emplace(key, value).second) {
      throw ConfigError(where + ": duplicate key '" + key + "'");
    }
  }

  const std::string origin = source.string();
  for (const auto &[key, value] : top) {
    std::string where = origin + ": " + key;
    auto size = [&] { return detail::parse_number<size_t>(value, where); };
    auto real = [&] { return detail::parse_number<double>(value, where); };
    if (key == "vocab") manifest.vocab = resolve(value);
    else if (key == "output_dir") manifest.output_dir = resolve(value);
    else if (key == "init") manifest.init = resolve(value);
    else if (key == "seed") manifest.seed = detail::parse_number<uint64_t>(value, where);
    else if (key == "d_model") manifest.model.d_model = size();
    else if (key == "n_heads") manifest.model.n_heads = size();
    else if (key == "n_enc_layers") manifest.model.n_enc_layers = size();
    else if (key == "n_dec_layers") manifest.model.n_dec_layers = size();
    else if (key == "d_ff") manifest.model.d_ff = size();
    else if (key == "dropout") manifest.model.dropout = real();
    else if (key == "max_len") manifest.model.max_len = size();
    else if (key == "label_smoothing") manifest.model.label_smoothing = real();
    else if (key == "peak_lr") manifest.training.peak_lr = real();
    else if (key == "warmup_steps") manifest.training.warmup_steps = size();
    else if (key == "max_steps") manifest.training.max_steps = size();
    else if (key == "max_epochs") manifest.training.max_epochs = size();
    else if (key == "grad_clip_norm") manifest.training.grad_clip_norm = real();
    else if (key == "checkpoint_every") manifest.training.checkpoint_every = size();
    else if (key == "token_budget") manifest.batching.token_budget = size();
    else if (key == "bucket_width") manifest.batching.bucket_width = size();
    else if (key == "temperature") manifest.temperature = real();
    else throw ConfigError(where + ": unknown key");
  }
  manifest.training.seed = manifest.seed;
  if (manifest.vocab.empty()) throw ConfigError(origin + ": 'vocab' is required");

  for (const auto &[name, keys] : sections) {
    CorpusEntry entry;
    bool has_direction = false;
    for (const auto &[key, value] : keys) {
      std::string where = origin + ": [" + name + "] " + key;
      if (key == "direction") {
        try {
          entry.direction = Direction::parse(value);
        } catch (const Error &e) {
          throw ConfigError(where + ": " + e.what());
        }
        has_direction = true;
      } else if (key == "path") {
        entry.path = resolve(value);
      } else if (key == "src") {
        entry.src = resolve(value);
      } else if (key == "tgt") {
        entry.tgt = resolve(value);
      } else if (key == "weight") {
        entry.weight = detail::parse_number<double>(value, where);
      } else if (key == "provenance") {
        try {
          entry.provenance = parse_provenance(value);
        } catch (const Error &e) {
          throw ConfigError(where + ": " + e.what());
        }
      } else {
        throw ConfigError(where + ": unknown key");
      }
    }
    if (!has_direction) throw ConfigError(origin + ": [" + name + "] needs a direction");
    bool pair = !entry.src.empty() || !entry.tgt.empty();
    if (pair == !entry.path.empty() || (pair && (entry.src.empty() || entry.tgt.empty()))) {
      throw ConfigError(origin + ": [" + name + "] needs either path or both src and tgt");
    }
    bool copy = entry.provenance == Provenance::kCopy;
    if (copy != (entry.direction.src == entry.direction.tgt) || (copy && pair)) {
      throw ConfigError(origin + ": [" + name +
                        "] copy corpora are monolingual files with a same-language direction");
    }
    (name == "corpus" ? manifest.corpora : manifest.heldout).push_back(std::move(entry));
  }
  return manifest;
}

inline RunManifest load_manifest(const std::filesystem::path &path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw ConfigError("manifest not found: " + path.string());
  }
  return parse_manifest(io::read_file(path.string()), path);
}

// Every referenced input must exist before any work starts.
inline void check_manifest_paths(const RunManifest &manifest) {
  auto require = [&](const std::filesystem::path &p) {
    if (!p.empty() && !std::filesystem::is_regular_file(p)) {
      throw ConfigError(manifest.source.string() + ": missing file " + p.string());
    }
  };
  require(manifest.vocab);
  if (manifest.init) require(*manifest.init);
  for (const auto *list : {&manifest.corpora, &manifest.heldout}) {
    for (const auto &entry : *list) {
      require(entry.path);
      require(entry.src);
      require(entry.tgt);
    }
  }
}

inline std::vector<ParallelExample> load_corpus(const CorpusEntry &entry,
                                                const SubwordModel &vocab,
                                                const IngestOptions &options) {
  if (entry.provenance == Provenance::kCopy) {
    return copy_augment(entry.path.string(), entry.direction.src, vocab, options);
  }
  if (!entry.path.empty()) {
    return ingest_tsv(entry.path.string(), entry.direction, vocab, entry.provenance, options);
  }
  auto examples = ingest_parallel(entry.src.string(), entry.tgt.string(), entry.direction,
                                  vocab, options);
  for (auto &example : examples) example.provenance = entry.provenance;
  return examples;
}

// The mixture stream and held-out batches a manifest describes.
struct TrainingData {
  std::shared_ptr<MixtureSampler> sampler;
  std::vector<Batch> heldout;
};

inline TrainingData load_training_data(const RunManifest &manifest, const SubwordModel &vocab,
                                       size_t max_len) {
  if (manifest.corpora.empty()) {
    throw ConfigError(manifest.source.string() + ": no [corpus] sections");
  }
  IngestOptions ingest{.max_len = max_len};
  std::vector<WeightedCorpus> corpora;
  for (const auto &entry : manifest.corpora) {
    corpora.push_back({load_corpus(entry, vocab, ingest), entry.weight});
  }
  TrainingData data;
  data.sampler = std::make_shared<MixtureSampler>(std::move(corpora), manifest.temperature,
                                                  manifest.seed);
  std::vector<ParallelExample> heldout;
  for (const auto &entry : manifest.heldout) {
    auto more = load_corpus(entry, vocab, ingest);
    heldout.insert(heldout.end(), more.begin(), more.end());
  }
  if (!heldout.empty()) {
    data.heldout = make_batches(heldout, manifest.batching, manifest.seed).batches;
  }
  return data;
}

}  // namespace nmt
