#include <random>

#include <gtest/gtest.h>

#include "nmt/align.hpp"
#include "oracles.hpp"

namespace nmt {
namespace {

std::vector<std::string> numbered_sentences(size_t count) {
  std::vector<std::string> out;
  const char *words[] = {"river", "stone", "cloud", "lamp", "field", "song", "bread", "wind"};
  for (size_t i = 0; i < count; ++i) {
    out.push_back(std::string(words[i % 8]) + " " + words[(i * 3 + 1) % 8] + " w" +
                  std::to_string(i) + " " + words[(i * 5 + 2) % 8] + " x" + std::to_string(i));
  }
  return out;
}

TEST(Bleualign, PerfectTranslationGivesTheDiagonal) {
  auto sents = numbered_sentences(6);
  DocumentPair doc{sents, sents, sents};
  auto links = bleualign(doc, 0.1);
  ASSERT_EQ(links.size(), 6u);
  for (size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(links[i], (AlignmentLink{i, i, 1.0}));
  }
}

TEST(Bleualign, DeletedTargetSentenceShiftsLaterLinks) {
  auto sents = numbered_sentences(7);
  for (size_t k = 0; k < sents.size(); ++k) {
    auto tgt = sents;
    tgt.erase(tgt.begin() + static_cast<std::ptrdiff_t>(k));
    DocumentPair doc{sents, tgt, sents};
    auto links = bleualign(doc, 0.1);
    ASSERT_EQ(links.size(), 6u);
    size_t at = 0;
    for (size_t i = 0; i < sents.size(); ++i) {
      if (i == k) continue;
      EXPECT_EQ(links[at].src_idx, i);
      EXPECT_EQ(links[at].tgt_idx, i < k ? i : i - 1);
      ++at;
    }
    auto brute = testing::brute_force_matching(similarity_matrix(doc));
    auto full = best_monotone_matching(similarity_matrix(doc));
    ASSERT_EQ(full.size(), brute.pairs.size());
    for (size_t i = 0; i < full.size(); ++i) {
      EXPECT_EQ(full[i].src_idx, brute.pairs[i].first);
      EXPECT_EQ(full[i].tgt_idx, brute.pairs[i].second);
    }
    auto gaps = unaligned(links, sents.size(), tgt.size());
    EXPECT_EQ(gaps.src, std::vector<size_t>{k});
    EXPECT_TRUE(gaps.tgt.empty());
  }
}

TEST(Bleualign, DynamicProgramMatchesBruteForceOnSmallDocuments) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::uniform_int_distribution<int> coarse(0, 3);
  for (size_t n = 1; n <= 8; ++n) {
    for (size_t m = 1; m <= 8; ++m) {
      for (int trial = 0; trial < 4; ++trial) {
        std::vector<std::vector<double>> s(n, std::vector<double>(m));
        for (auto &row : s) {
          for (double &v : row) {
            // Coarse values on odd trials force ties through the tie-break.
            v = trial % 2 ? coarse(rng) / 4.0 : uniform(rng);
          }
        }
        auto links = best_monotone_matching(s);
        auto brute = testing::brute_force_matching(s);
        double total = 0.0;
        for (const auto &link : links) total += link.score;
        ASSERT_EQ(total, brute.score) << n << "x" << m;
        ASSERT_EQ(links.size(), brute.links) << n << "x" << m;
        size_t index_sum = 0;
        for (const auto &link : links) index_sum += link.src_idx + link.tgt_idx;
        ASSERT_EQ(index_sum, brute.index_sum);
        for (size_t i = 0; i < links.size(); ++i) {
          // Only a unique optimum pins the exact pairs.
          if (brute.ties == 1) {
            ASSERT_EQ(links[i].src_idx, brute.pairs[i].first);
            ASSERT_EQ(links[i].tgt_idx, brute.pairs[i].second);
          }
          if (i > 0) {
            ASSERT_GT(links[i].src_idx, links[i - 1].src_idx);
            ASSERT_GT(links[i].tgt_idx, links[i - 1].tgt_idx);
          }
        }
      }
    }
  }
}

TEST(Bleualign, ThresholdsOnlyRemoveLinks) {
  auto sents = numbered_sentences(8);
  auto mt = sents;
  mt[2] = "river cloud w2 lamp";
  mt[5] = "completely different words here";
  DocumentPair doc{sents, sents, mt};
  auto exact = bleualign(doc, 1.0);
  for (const auto &link : exact) EXPECT_DOUBLE_EQ(link.score, 1.0);
  EXPECT_EQ(exact.size(), 6u);
  std::vector<AlignmentLink> previous = bleualign(doc, 0.0);
  for (double threshold : {0.05, 0.1, 0.3, 0.6, 0.9, 1.0}) {
    auto current = bleualign(doc, threshold);
    for (const auto &link : current) {
      EXPECT_NE(std::find(previous.begin(), previous.end(), link), previous.end());
    }
    previous = current;
  }
  EXPECT_THROW(bleualign({{}, {"a"}, {}}, 0.1), InputError);
  EXPECT_THROW(bleualign({{"a"}, {"a"}, {}}, 0.1), InputError);
  EXPECT_NE(links_to_tsv(exact).find("0\t0\t1.000000"), std::string::npos);
}

TEST(Multiway, SingleLanguageKeepsItsPairs) {
  PairLists pairs{{"hi", {{"Hello there.", "namaste"}, {"Good day", "shubh din"}}}};
  auto tuples = build_multiway(pairs);
  ASSERT_EQ(tuples.size(), 2u);
  for (const auto &t : tuples) EXPECT_EQ(t.sentences.size(), 2u);
}

TEST(Multiway, SharedAndPrivateLines) {
  PairLists pairs;
  for (const std::string lang : {"hi", "ta", "te"}) {
    pairs[lang] = {{"shared one", lang + "-1"},
                   {"shared two", lang + "-2"},
                   {"private " + lang, lang + "-p"}};
  }
  auto tuples = build_multiway(pairs);
  size_t four = 0;
  size_t two = 0;
  for (const auto &t : tuples) {
    if (t.sentences.size() == 4) ++four;
    if (t.sentences.size() == 2) ++two;
  }
  EXPECT_EQ(four, 2u);
  EXPECT_EQ(two, 3u);
  EXPECT_EQ(tuples.size(), 5u);
}

TEST(Multiway, NormalizationUnifiesVariants) {
  EXPECT_EQ(pivot_key("  The  Cat sat.  "), "the cat sat");
  EXPECT_EQ(pivot_key("THE CAT SAT!"), "the cat sat");
  PairLists pairs{{"hi", {{"The cat sat.", "h1"}, {"the cat sat", "h-dup"}}},
                  {"ta", {{"THE CAT  SAT", "t1"}}}};
  auto tuples = build_multiway(pairs);
  ASSERT_EQ(tuples.size(), 1u);
  EXPECT_EQ(tuples[0].sentences.at("hi"), "h1");
  EXPECT_EQ(tuples[0].sentences.at("ta"), "t1");
}

TEST(Multiway, JoinIsIdempotentAndRoundTripsThroughTsv) {
  PairLists pairs;
  pairs["hi"] = {{"One.", "a1"}, {"Two", "a2"}, {"three", "a3"}};
  pairs["ur"] = {{"one", "b1"}, {"Four", "b4"}};
  pairs["bn"] = {{"TWO", "c2"}, {"four.", "c4"}};
  auto tuples = build_multiway(pairs);
  EXPECT_EQ(build_multiway(to_pair_lists(tuples)), tuples);
  std::string tsv = multiway_to_tsv(tuples);
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "en\tbn\thi\tur");
  EXPECT_NE(tsv.find("\xE2\x80\x94"), std::string::npos);
  EXPECT_EQ(multiway_from_tsv(tsv, "test"), tuples);
  EXPECT_THROW(multiway_from_tsv("en\thi\nonly-one\n", "bad"), InputError);
}

}  // namespace
}  // namespace nmt
