#include <map>
#include <set>

#include <gtest/gtest.h>

#include "nmt/batching.hpp"

namespace nmt {
namespace {

// Hand-built example with `length` tokens on each side and a recognisable id.
ParallelExample example_of(size_t length, TokenId marker, const char *tgt = "xr") {
  ParallelExample ex;
  ex.direction = {LangCode("en"), LangCode(tgt)};
  ex.src_ids.push_back(4);
  for (size_t i = 2; i < length; ++i) ex.src_ids.push_back(marker);
  ex.src_ids.push_back(SubwordModel::kEos);
  ex.tgt_ids.push_back(SubwordModel::kBos);
  for (size_t i = 2; i < length; ++i) ex.tgt_ids.push_back(marker);
  ex.tgt_ids.push_back(SubwordModel::kEos);
  return ex;
}

TEST(MakeBatches, EqualLengthPartition) {
  std::vector<ParallelExample> examples;
  for (int i = 0; i < 10; ++i) examples.push_back(example_of(6, 100 + i));
  BatchPlan plan = make_batches(examples, {.token_budget = 30, .bucket_width = 4}, 1);
  EXPECT_EQ(plan.dropped, 0u);
  std::multiset<TokenId> seen;
  for (const auto &batch : plan.batches) {
    EXPECT_LE(batch.rows, 5u);
    for (size_t r = 0; r < batch.rows; ++r) seen.insert(batch.tgt_at(r, 1));
  }
  std::multiset<TokenId> expected;
  for (int i = 0; i < 10; ++i) expected.insert(100 + i);
  EXPECT_EQ(seen, expected);
}

TEST(MakeBatches, OverBudgetExampleIsDroppedAndCounted) {
  std::vector<ParallelExample> examples = {example_of(4, 100), example_of(12, 101),
                                           example_of(5, 102)};
  BatchPlan plan = make_batches(examples, {.token_budget = 8, .bucket_width = 2}, 3);
  EXPECT_EQ(plan.dropped, 1u);
  size_t rows = 0;
  for (const auto &batch : plan.batches) rows += batch.rows;
  EXPECT_EQ(rows, 2u);
}

TEST(MakeBatches, MasksAndTokenCountMatchRawExamples) {
  std::vector<ParallelExample> examples;
  for (size_t i = 0; i < 40; ++i) examples.push_back(example_of(3 + i % 9, 200 + static_cast<TokenId>(i)));
  BatchPlan plan = make_batches(examples, {.token_budget = 64, .bucket_width = 3}, 5);
  size_t expected_tokens = 0;
  for (const auto &ex : examples) expected_tokens += ex.tgt_ids.size();
  size_t total = 0;
  for (const auto &batch : plan.batches) {
    size_t non_pad = 0;
    for (size_t i = 0; i < batch.tgt.size(); ++i) {
      EXPECT_EQ(batch.tgt_mask[i] != 0, batch.tgt[i] != SubwordModel::kPad);
      non_pad += batch.tgt_mask[i];
    }
    for (size_t i = 0; i < batch.src.size(); ++i) {
      EXPECT_EQ(batch.src_mask[i] != 0, batch.src[i] != SubwordModel::kPad);
    }
    EXPECT_EQ(batch.token_count, non_pad);
    EXPECT_LE(batch.token_count, 64u);
    EXPECT_LE(batch.rows * batch.tgt_len, 64u);
    EXPECT_LE(batch.rows * batch.src_len, 64u);
    total += batch.token_count;
  }
  EXPECT_EQ(total, expected_tokens);
}

TEST(MakeBatches, ControlTokenLawAndReproducibility) {
  std::vector<ParallelExample> examples;
  for (size_t i = 0; i < 30; ++i) {
    auto ex = example_of(4 + i % 5, 300, i % 2 ? "xr" : "xv");
    ex.src_ids[0] = i % 2 ? 5 : 6;
    examples.push_back(ex);
  }
  auto a = make_batches(examples, {.token_budget = 40, .bucket_width = 2}, 9);
  auto b = make_batches(examples, {.token_budget = 40, .bucket_width = 2}, 9);
  ASSERT_EQ(a.batches.size(), b.batches.size());
  for (size_t i = 0; i < a.batches.size(); ++i) EXPECT_EQ(a.batches[i], b.batches[i]);
  for (const auto &batch : a.batches) {
    for (size_t r = 0; r < batch.rows; ++r) {
      TokenId expected = batch.directions[r].tgt.str() == "xr" ? 5 : 6;
      EXPECT_EQ(batch.src_at(r, 0), expected);
    }
  }
}

TEST(MixtureSampler, SingleCorpusIsAPermutationPerEpoch) {
  WeightedCorpus corpus;
  for (int i = 0; i < 50; ++i) corpus.examples.push_back(example_of(4, i));
  MixtureSampler sampler({corpus}, 1.0, 17);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::set<TokenId> seen;
    for (const auto *ex : sampler.next_epoch()) seen.insert(ex->tgt_ids[1]);
    EXPECT_EQ(seen.size(), 50u);
  }
}

TEST(MixtureSampler, DrawFractionsFollowClosedForm) {
  WeightedCorpus big;
  WeightedCorpus small;
  for (int i = 0; i < 900; ++i) big.examples.push_back(example_of(4, 1));
  for (int i = 0; i < 100; ++i) small.examples.push_back(example_of(4, 2));

  auto fraction_big = [&](double temperature) {
    MixtureSampler sampler({big, small}, temperature, 23);
    size_t hits = 0;
    const size_t draws = 100000;
    for (size_t i = 0; i < draws; ++i) hits += sampler.next_corpus() == 0;
    return static_cast<double>(hits) / static_cast<double>(draws);
  };
  EXPECT_NEAR(fraction_big(1.0), 0.9, 0.02);
  EXPECT_NEAR(fraction_big(1e9), 0.5, 0.02);
  // Closed form at the default temperature.
  double p = std::pow(900.0, 1 / 1.7) / (std::pow(900.0, 1 / 1.7) + std::pow(100.0, 1 / 1.7));
  EXPECT_NEAR(fraction_big(1.7), p, 0.02);
}

TEST(MixtureSampler, ReproducibleAndRejectsEmpty) {
  WeightedCorpus a;
  WeightedCorpus b;
  for (int i = 0; i < 20; ++i) a.examples.push_back(example_of(4, i));
  for (int i = 0; i < 7; ++i) b.examples.push_back(example_of(5, 100 + i));
  MixtureSampler first({a, b}, 1.7, 4);
  MixtureSampler second({a, b}, 1.7, 4);
  for (int i = 0; i < 200; ++i) EXPECT_EQ(first.next(), second.next());
  EXPECT_THROW(MixtureSampler({WeightedCorpus{}}, 1.0, 1), InputError);
  EXPECT_THROW(MixtureSampler({a}, 0.0, 1), ConfigError);
}

TEST(BatchStream, WalksEpochs) {
  std::vector<ParallelExample> examples;
  for (int i = 0; i < 6; ++i) examples.push_back(example_of(4, i));
  auto plan = make_batches(examples, {.token_budget = 8, .bucket_width = 4}, 1);
  ASSERT_EQ(plan.batches.size(), 3u);
  BatchStream stream = BatchStream::repeating(plan.batches);
  stream.next();
  EXPECT_EQ(stream.epoch(), 1u);
  EXPECT_FALSE(stream.at_epoch_end());
  stream.next();
  stream.next();
  EXPECT_TRUE(stream.at_epoch_end());
  stream.next();
  EXPECT_EQ(stream.epoch(), 2u);
}

}  // namespace
}  // namespace nmt
