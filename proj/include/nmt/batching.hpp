#pragma once

// Temperature-controlled corpus mixing and token-budgeted batching.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "nmt/corpus.hpp"
#include "nmt/error.hpp"
#include "nmt/log.hpp"

namespace nmt {

struct WeightedCorpus {
  std::vector<ParallelExample> examples;
  double weight = 1.0;
};

// Draws examples from several corpora. Corpus i is picked with probability
// proportional to (weight_i * size_i)^(1 / temperature); inside a corpus,
// examples are visited in a fresh seeded permutation per corpus epoch.
class MixtureSampler {
 public:
  MixtureSampler(std::vector<WeightedCorpus> corpora, double temperature,
                 uint64_t seed)
      : corpora_(std::move(corpora)), rng_(seed) {
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    std::vector<double> logits;
    double max_logit = -std::numeric_limits<double>::infinity();
    for (const auto &corpus : corpora_) {
      if (!(corpus.weight > 0.0)) throw ConfigError("corpus weight must be positive");
      double logit = corpus.examples.empty()
                         ? -std::numeric_limits<double>::infinity()
                         : std::log(corpus.weight *
                                    static_cast<double>(corpus.examples.size())) /
                               temperature;
      logits.push_back(logit);
      max_logit = std::max(max_logit, logit);
      total_ += corpus.examples.size();
    }
    if (total_ == 0) throw InputError("all corpora are empty");
    double mass = 0.0;
    for (double logit : logits) {
      probabilities_.push_back(std::exp(logit - max_logit));
      mass += probabilities_.back();
    }
    for (double &p : probabilities_) p /= mass;

    for (size_t i = 0; i < corpora_.size(); ++i) {
      cursors_.push_back({std::mt19937_64(seed ^ (0x9E3779B97F4A7C15ULL * (i + 1))),
                          {}, 0});
    }
  }

  const std::vector<double> &probabilities() const { return probabilities_; }
  const std::vector<WeightedCorpus> &corpora() const { return corpora_; }

  // Size of the union of all corpora; one epoch draws this many examples.
  size_t epoch_size() const { return total_; }

  size_t next_corpus() {
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
    double cumulative = 0.0;
    size_t last_nonempty = 0;
    for (size_t i = 0; i < probabilities_.size(); ++i) {
      if (probabilities_[i] <= 0.0) continue;
      last_nonempty = i;
      cumulative += probabilities_[i];
      if (u < cumulative) return i;
    }
    return last_nonempty;
  }

  const ParallelExample &next() {
    size_t index = next_corpus();
    Cursor &cursor = cursors_[index];
    const auto &examples = corpora_[index].examples;
    if (cursor.position == cursor.order.size()) {
      cursor.order.resize(examples.size());
      for (size_t i = 0; i < examples.size(); ++i) cursor.order[i] = i;
      std::shuffle(cursor.order.begin(), cursor.order.end(), cursor.rng);
      cursor.position = 0;
    }
    return examples[cursor.order[cursor.position++]];
  }

  std::vector<const ParallelExample *> next_epoch() {
    std::vector<const ParallelExample *> draws;
    draws.reserve(total_);
    for (size_t i = 0; i < total_; ++i) draws.push_back(&next());
    return draws;
  }

 private:
  struct Cursor {
    std::mt19937_64 rng;
    std::vector<size_t> order;
    size_t position = 0;
  };

  std::vector<WeightedCorpus> corpora_;
  std::vector<double> probabilities_;
  std::vector<Cursor> cursors_;
  std::mt19937_64 rng_;
  size_t total_ = 0;
};

// Padded B x S source and B x T target matrices (row-major).
struct Batch {
  size_t rows = 0;
  size_t src_len = 0;
  size_t tgt_len = 0;
  std::vector<TokenId> src;
  std::vector<TokenId> tgt;
  std::vector<uint8_t> src_mask;  // 1 on non-pad positions
  std::vector<uint8_t> tgt_mask;
  std::vector<Direction> directions;
  // Non-pad target tokens, bos and eos included.
  size_t token_count = 0;

  TokenId src_at(size_t row, size_t col) const { return src[row * src_len + col]; }
  TokenId tgt_at(size_t row, size_t col) const { return tgt[row * tgt_len + col]; }
  bool operator==(const Batch &) const = default;
};

inline Batch make_batch(std::span<const ParallelExample *const> examples) {
  Batch batch;
  batch.rows = examples.size();
  for (const auto *example : examples) {
    batch.src_len = std::max(batch.src_len, example->src_ids.size());
    batch.tgt_len = std::max(batch.tgt_len, example->tgt_ids.size());
  }
  batch.src.assign(batch.rows * batch.src_len, SubwordModel::kPad);
  batch.tgt.assign(batch.rows * batch.tgt_len, SubwordModel::kPad);
  batch.src_mask.assign(batch.src.size(), 0);
  batch.tgt_mask.assign(batch.tgt.size(), 0);
  for (size_t r = 0; r < batch.rows; ++r) {
    const ParallelExample &example = *examples[r];
    for (size_t c = 0; c < example.src_ids.size(); ++c) {
      batch.src[r * batch.src_len + c] = example.src_ids[c];
      batch.src_mask[r * batch.src_len + c] = 1;
    }
    for (size_t c = 0; c < example.tgt_ids.size(); ++c) {
      batch.tgt[r * batch.tgt_len + c] = example.tgt_ids[c];
      batch.tgt_mask[r * batch.tgt_len + c] = 1;
    }
    batch.token_count += example.tgt_ids.size();
    batch.directions.push_back(example.direction);
  }
  return batch;
}

inline Batch make_batch(std::span<const ParallelExample> examples) {
  std::vector<const ParallelExample *> pointers;
  for (const auto &example : examples) pointers.push_back(&example);
  return make_batch(std::span<const ParallelExample *const>(pointers));
}

struct BatchingOptions {
  // Bound on padded rows x length, checked on each side.
  size_t token_budget = 4096;
  size_t bucket_width = 4;
};

struct BatchPlan {
  std::vector<Batch> batches;
  size_t dropped = 0;
};

// Groups examples into length buckets and fills batches greedily until one
// more example would push either padded side over the budget. Examples that
// cannot fit alone are dropped and counted. Batch order is shuffled by seed.
inline BatchPlan make_batches(std::span<const ParallelExample *const> examples,
                              const BatchingOptions &options, uint64_t seed) {
  if (options.token_budget == 0 || options.bucket_width == 0) {
    throw ConfigError("token budget and bucket width must be positive");
  }
  BatchPlan plan;
  std::map<size_t, std::vector<const ParallelExample *>> buckets;
  for (const auto *example : examples) {
    size_t src = example->src_ids.size();
    size_t tgt = example->tgt_ids.size();
    if (src > options.token_budget || tgt > options.token_budget) {
      ++plan.dropped;
      continue;
    }
    buckets[std::max(src, tgt) / options.bucket_width].push_back(example);
  }
  if (plan.dropped > 0) {
    logger().warn("dropped {} example(s) longer than the token budget {}",
                  plan.dropped, options.token_budget);
  }
  for (auto &[key, members] : buckets) {
    std::vector<const ParallelExample *> current;
    size_t src_len = 0;
    size_t tgt_len = 0;
    for (const auto *example : members) {
      size_t next_src = std::max(src_len, example->src_ids.size());
      size_t next_tgt = std::max(tgt_len, example->tgt_ids.size());
      size_t rows = current.size() + 1;
      if (!current.empty() && (rows * next_src > options.token_budget ||
                               rows * next_tgt > options.token_budget)) {
        plan.batches.push_back(make_batch(current));
        current.clear();
        next_src = example->src_ids.size();
        next_tgt = example->tgt_ids.size();
      }
      current.push_back(example);
      src_len = next_src;
      tgt_len = next_tgt;
    }
    if (!current.empty()) plan.batches.push_back(make_batch(current));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(plan.batches.begin(), plan.batches.end(), rng);
  return plan;
}

inline BatchPlan make_batches(const std::vector<ParallelExample> &examples,
                              const BatchingOptions &options, uint64_t seed) {
  std::vector<const ParallelExample *> pointers;
  for (const auto &example : examples) pointers.push_back(&example);
  return make_batches(std::span<const ParallelExample *const>(pointers), options,
                      seed);
}

// Endless batch source organised in epochs. `produce(epoch)` returns the
// batches for one epoch; the stream walks through them and asks for more.
class BatchStream {
 public:
  using Producer = std::function<std::vector<Batch>(size_t epoch)>;

  explicit BatchStream(Producer produce) : produce_(std::move(produce)) {}

  // Mixture-driven stream: each epoch draws epoch_size() examples and batches
  // them with seed + epoch.
  static BatchStream from_mixture(std::shared_ptr<MixtureSampler> sampler,
                                  BatchingOptions options, uint64_t seed) {
    return BatchStream([sampler, options, seed](size_t epoch) {
      auto draws = sampler->next_epoch();
      return make_batches(std::span<const ParallelExample *const>(draws), options,
                          seed + epoch)
          .batches;
    });
  }

  // The same batches every epoch.
  static BatchStream repeating(std::vector<Batch> batches) {
    return BatchStream([batches = std::move(batches)](size_t) { return batches; });
  }

  const Batch &next() {
    if (position_ == current_.size()) {
      current_ = produce_(epoch_);
      position_ = 0;
      ++epoch_;
      if (current_.empty()) throw InputError("batch stream produced no batches");
    }
    return current_[position_++];
  }

  // Number of epochs started so far.
  size_t epoch() const { return epoch_; }
  // True when the batch last returned by next() closed its epoch.
  bool at_epoch_end() const { return position_ == current_.size(); }

 private:
  Producer produce_;
  std::vector<Batch> current_;
  size_t position_ = 0;
  size_t epoch_ = 0;
};

}  // namespace nmt
