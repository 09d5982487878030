#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "nmt/unigram_trainer.hpp"

namespace nmt {
namespace {

// Text built from a small syllable inventory so that multi-character pieces
// are worth keeping.
std::vector<std::string> syllable_corpus(size_t lines, uint32_t seed) {
  static const char *kSyllables[] = {"ka", "ri", "mo", "tu", "sen", "la",
                                     "pe", "dor", "vi", "nu", "gha", "sho"};
  std::mt19937 rng(seed);
  std::vector<std::string> corpus;
  for (size_t l = 0; l < lines; ++l) {
    std::string line;
    int words = 3 + static_cast<int>(rng() % 6);
    for (int w = 0; w < words; ++w) {
      if (w) line += ' ';
      int syllables = 1 + static_cast<int>(rng() % 3);
      for (int s = 0; s < syllables; ++s) line += kSyllables[rng() % 12];
    }
    corpus.push_back(line);
  }
  return corpus;
}

TEST(TrainUnigram, MinimalVocabularyForcesCharacters) {
  std::vector<std::string> corpus(100, "ab");
  UnigramOptions options;
  options.languages = {"en", "hi"};
  options.target_size = 2 + 4 + 2;  // characters + specials + controls
  SubwordModel model = train_unigram(corpus, options);
  EXPECT_EQ(model.size(), 8u);
  EXPECT_EQ(model.encode("ab").size(), 2u);
}

TEST(TrainUnigram, RespectsSizeBoundAndCoverage) {
  auto corpus = syllable_corpus(400, 3);
  UnigramOptions options;
  options.languages = {"en", "hi", "te"};
  options.target_size = 60;
  SubwordModel model = train_unigram(corpus, options);
  EXPECT_LE(model.size(), 60u);

  double mass = 0.0;
  for (const auto &piece : model.pieces()) mass += std::exp(piece.logprob);
  EXPECT_NEAR(mass, 1.0, 1e-6);

  std::set<char32_t> alphabet;
  for (const auto &line : corpus) {
    for (char32_t c : mark_words(line)) alphabet.insert(c);
  }
  for (char32_t c : alphabet) {
    EXPECT_TRUE(model.id_of(unicode::to_utf8(std::u32string(1, c))).has_value());
  }
  for (const auto &line : corpus) {
    for (TokenId id : model.encode(line)) ASSERT_NE(id, SubwordModel::kUnk);
  }
  // Some multi-character pieces must survive pruning.
  size_t multi = 0;
  for (const auto &piece : model.pieces()) {
    multi += unicode::to_u32(piece.surface).size() > 1;
  }
  EXPECT_GT(multi, 10u);
}

TEST(TrainUnigram, EmLikelihoodIsNonDecreasing) {
  auto corpus = syllable_corpus(1000, 5);
  UnigramOptions options;
  options.languages = {"en"};
  options.target_size = 200;
  UnigramTrainer trainer(corpus, options);
  double previous = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < 12; ++i) {
    double ll = trainer.em_step();
    EXPECT_GE(ll, previous - 1e-9 * std::abs(previous)) << "iteration " << i;
    previous = ll;
  }
}

TEST(TrainUnigram, IsDeterministic) {
  auto corpus = syllable_corpus(200, 9);
  UnigramOptions options;
  options.languages = {"en", "hi"};
  options.target_size = 50;
  EXPECT_EQ(train_unigram(corpus, options).serialize(),
            train_unigram(corpus, options).serialize());
}

TEST(TrainUnigram, Errors) {
  UnigramOptions options;
  options.languages = {"en"};
  options.target_size = 100;
  EXPECT_THROW(train_unigram({}, options), InputError);
  EXPECT_THROW(train_unigram({"  ", ""}, options), InputError);
  options.target_size = 6;  // 3 characters + 5 reserved needed
  EXPECT_THROW(train_unigram({"abc"}, options), ConfigError);
}

TEST(TrainUnigram, FourThousandPiecesIsAValidTarget) {
  // Per-language vocabularies of 4000 pieces; a small corpus simply yields
  // fewer pieces than the bound.
  UnigramOptions options;
  options.languages = {"en", "hi", "bn", "ml", "ta", "te", "ur"};
  options.target_size = 4000;
  SubwordModel model = train_unigram(syllable_corpus(100, 1), options);
  EXPECT_LE(model.size(), 4000u);
}

}  // namespace
}  // namespace nmt
