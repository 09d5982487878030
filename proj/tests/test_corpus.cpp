#include <gtest/gtest.h>

#include "nmt/corpus.hpp"
#include "nmt/synthetic.hpp"
#include "test_support.hpp"

namespace nmt {
namespace {

class CorpusTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    auto lexicon = synthetic::make_lexicon(30, 1);
    base_ = new std::vector<std::string>(synthetic::make_sentences(lexicon, 200, 2, 6, 2));
    vocab_ = new SubwordModel(testing::synthetic_vocab(*base_));
  }
  static void TearDownTestSuite() {
    delete vocab_;
    delete base_;
  }
  static std::vector<std::string> *base_;
  static SubwordModel *vocab_;
};
std::vector<std::string> *CorpusTest::base_ = nullptr;
SubwordModel *CorpusTest::vocab_ = nullptr;

TEST_F(CorpusTest, IngestPrependsControlTokenAndFramesTarget) {
  testing::TempDir dir("ingest");
  std::vector<std::string> en(base_->begin(), base_->begin() + 3);
  auto xr = synthetic::transform_all(synthetic::Transform::kReverse, en);
  auto src = dir.write("train.en", en);
  auto tgt = dir.write("train.xr", xr);
  Direction direction{LangCode("en"), LangCode("xr")};
  auto examples = ingest_parallel(src, tgt, direction, *vocab_);
  ASSERT_EQ(examples.size(), 3u);
  for (size_t i = 0; i < examples.size(); ++i) {
    const auto &ex = examples[i];
    EXPECT_EQ(ex.src_ids.front(), *vocab_->id_of("__t2xr__"));
    EXPECT_EQ(ex.src_ids.back(), SubwordModel::kEos);
    EXPECT_EQ(ex.tgt_ids.front(), SubwordModel::kBos);
    EXPECT_EQ(ex.tgt_ids.back(), SubwordModel::kEos);
    EXPECT_EQ(ex.provenance, Provenance::kAuthentic);
    EXPECT_EQ(ex.direction, direction);
    for (TokenId id : ex.src_ids) EXPECT_NE(id, SubwordModel::kPad);
    EXPECT_EQ(vocab_->decode(target_content(ex)), xr[i]);
  }
}

TEST_F(CorpusTest, TargetRoundTripOverGeneratedCorpus) {
  testing::TempDir dir("roundtrip");
  auto xv = synthetic::transform_all(synthetic::Transform::kVowelRotate, *base_);
  std::vector<std::string> noisy;
  for (const auto &line : xv) noisy.push_back("  " + line + " \t");
  auto examples = ingest_parallel(dir.write("a.en", *base_), dir.write("a.xv", noisy),
                                  {LangCode("en"), LangCode("xv")}, *vocab_);
  ASSERT_EQ(examples.size(), xv.size());
  for (size_t i = 0; i < xv.size(); ++i) {
    ASSERT_EQ(vocab_->decode(target_content(examples[i])), unicode::normalize(noisy[i]));
  }
}

TEST_F(CorpusTest, LineCountMismatchNamesBothCounts) {
  testing::TempDir dir("mismatch");
  std::vector<std::string> five(base_->begin(), base_->begin() + 5);
  std::vector<std::string> four(base_->begin(), base_->begin() + 4);
  auto src = dir.write("m.en", five);
  auto tgt = dir.write("m.xr", four);
  try {
    ingest_parallel(src, tgt, {LangCode("en"), LangCode("xr")}, *vocab_);
    FAIL() << "expected InputError";
  } catch (const InputError &error) {
    std::string message = error.what();
    EXPECT_NE(message.find("5 lines"), std::string::npos) << message;
    EXPECT_NE(message.find("4"), std::string::npos) << message;
  }
}

TEST_F(CorpusTest, UndecodableBytesReportLineNumber) {
  testing::TempDir dir("utf8");
  auto src = dir.write("u.en", {"abc", "de\xFF", "fg"});
  auto tgt = dir.write("u.xr", {"cba", "ed", "gf"});
  try {
    ingest_parallel(src, tgt, {LangCode("en"), LangCode("xr")}, *vocab_);
    FAIL() << "expected InputError";
  } catch (const InputError &error) {
    EXPECT_NE(std::string(error.what()).find(":2:"), std::string::npos);
  }
}

TEST_F(CorpusTest, EmptyLinesDropThePair) {
  testing::TempDir dir("empty");
  auto src = dir.write("e.en", {(*base_)[0], "", (*base_)[2]});
  auto tgt = dir.write("e.xr", {"x", "y", "  "});
  auto examples = ingest_parallel(src, tgt, {LangCode("en"), LangCode("xr")}, *vocab_);
  EXPECT_EQ(examples.size(), 1u);
}

TEST_F(CorpusTest, TsvIngestAndMalformedRows) {
  testing::TempDir dir("tsv");
  auto good = dir.write("g.tsv", {(*base_)[0] + "\t" + (*base_)[1], "", (*base_)[2] + "\tx"});
  auto examples = ingest_tsv(good, {LangCode("en"), LangCode("xr")}, *vocab_);
  EXPECT_EQ(examples.size(), 2u);
  auto bad = dir.write("b.tsv", {"only one column"});
  EXPECT_THROW(ingest_tsv(bad, {LangCode("en"), LangCode("xr")}, *vocab_), InputError);
}

TEST_F(CorpusTest, CopyAugment) {
  testing::TempDir dir("copy");
  auto examples = copy_augment(dir.write("m.en", {(*base_)[0]}), LangCode("en"), *vocab_);
  ASSERT_EQ(examples.size(), 1u);
  EXPECT_EQ(examples[0].provenance, Provenance::kCopy);
  EXPECT_EQ(examples[0].direction.src, examples[0].direction.tgt);
  EXPECT_EQ(vocab_->decode(target_content(examples[0])), (*base_)[0]);
  EXPECT_EQ(examples[0].src_ids.front(), vocab_->control_id("en"));

  EXPECT_TRUE(copy_augment(dir.write("empty.en", {}), LangCode("en"), *vocab_).empty());
}

TEST_F(CorpusTest, SameLanguageOnlyForCopy) {
  EXPECT_THROW(make_example(*vocab_, {LangCode("en"), LangCode("en")}, "ab", "ab",
                            Provenance::kAuthentic),
               ConfigError);
  EXPECT_THROW(make_example(*vocab_, {LangCode("en"), LangCode("hi")}, "ab", "ab",
                            Provenance::kAuthentic),
               ConfigError);
}

TEST(LangCode, ValidationAndDirectionParsing) {
  EXPECT_THROW(LangCode("E"), ConfigError);
  EXPECT_THROW(LangCode("e n"), ConfigError);
  Direction d = Direction::parse("en-hi");
  EXPECT_EQ(d.src.str(), "en");
  EXPECT_EQ(d.tgt.str(), "hi");
  EXPECT_EQ(d.str(), "en-hi");
  EXPECT_THROW(Direction::parse("enhi"), ConfigError);
  EXPECT_EQ(parse_provenance("copy"), Provenance::kCopy);
  EXPECT_THROW(parse_provenance("made-up"), ConfigError);
}

}  // namespace
}  // namespace nmt
