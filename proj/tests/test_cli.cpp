#include <future>
#include <sstream>

#include <gtest/gtest.h>

#include "nmt/cli.hpp"
#include "test_support.hpp"

namespace nmt {
namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args, const std::string &input = "") {
  args.insert(args.begin(), "nmt");
  std::vector<const char *> argv;
  for (const auto &arg : args) argv.push_back(arg.c_str());
  std::istringstream in(input);
  std::ostringstream out;
  std::ostringstream err;
  int code = run_cli(static_cast<int>(argv.size()), argv.data(), in, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir("cli");
    auto lexicon = synthetic::make_lexicon(16, 21);
    base_ = new std::vector<std::string>(synthetic::make_sentences(lexicon, 60, 2, 4, 22));
    SubwordModel vocab = testing::synthetic_vocab(*base_, 80);
    vocab.save(dir_->file("vocab.spm"));
    std::vector<std::string> xr;
    std::vector<std::string> tsv;
    for (const auto &line : *base_) {
      xr.push_back(synthetic::transform_text(synthetic::Transform::kReverse, line));
      tsv.push_back(line + "\t" + xr.back());
    }
    dir_->write("mono.xr", xr);
    dir_->write("en-xr.tsv", tsv);
    // A copy-trained toy model shared by the decoding tests.
    write_manifest("copy.manifest", "runs/copy", 600,
                   "[corpus]\ndirection = xr-xr\npath = mono.xr\nprovenance = copy\n");
    auto trained = run({"train", "--manifest", dir_->file("copy.manifest")});
    ASSERT_EQ(trained.code, 0) << trained.err;
    copy_ckpt_ = new std::string(dir_->file("runs/copy/best.ckpt"));
  }
  static void TearDownTestSuite() {
    delete copy_ckpt_;
    delete base_;
    delete dir_;
  }

  static std::string write_manifest(const std::string &name, const std::string &output_dir,
                                    size_t steps, const std::string &sections,
                                    const std::string &extra = "") {
    std::string text = "vocab = vocab.spm\noutput_dir = " + output_dir +
                       "\nseed = 5\nd_model = 32\nn_heads = 4\nn_enc_layers = 1\n"
                       "n_dec_layers = 1\nd_ff = 64\ndropout = 0\nlabel_smoothing = 0\n"
                       "max_len = 40\npeak_lr = 0.003\nwarmup_steps = 50\nmax_steps = " +
                       std::to_string(steps) + "\ntoken_budget = 256\n" + extra + "\n" + sections;
    io::write_file(dir_->file(name), text);
    return dir_->file(name);
  }

  static std::string sample_input(size_t n) {
    std::string input;
    for (size_t i = 0; i < n; ++i) {
      input += synthetic::transform_text(synthetic::Transform::kReverse, (*base_)[i]) + "\n";
    }
    return input;
  }

  static testing::TempDir *dir_;
  static std::vector<std::string> *base_;
  static std::string *copy_ckpt_;
};
testing::TempDir *CliTest::dir_ = nullptr;
std::vector<std::string> *CliTest::base_ = nullptr;
std::string *CliTest::copy_ckpt_ = nullptr;

TEST(Cli, UnknownCommandsAndFlagsPrintUsage) {
  auto bogus = run({"frobnicate"});
  EXPECT_EQ(bogus.code, 1);
  EXPECT_NE(bogus.err.find("Usage"), std::string::npos);
  EXPECT_TRUE(bogus.out.empty());
  auto flag = run({"score", "--hyp", "a", "--ref", "b", "--bogus"});
  EXPECT_EQ(flag.code, 1);
  EXPECT_NE(flag.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(CliTest, ScoringAFileAgainstItselfGives100) {
  auto result = run({"score", "--hyp", dir_->file("mono.xr"), "--ref", dir_->file("mono.xr")});
  ASSERT_EQ(result.code, 0) << result.err;
  EXPECT_EQ(result.out.rfind("BLEU = 100.00 ", 0), 0u) << result.out;
  auto json = run({"score", "--hyp", dir_->file("mono.xr"), "--ref", dir_->file("mono.xr"),
                   "--tokenize", "subword", "--vocab", dir_->file("vocab.spm"), "--json"});
  ASSERT_EQ(json.code, 0) << json.err;
  EXPECT_DOUBLE_EQ(nlohmann::json::parse(json.out)["bleu"].get<double>(), 100.0);
  auto missing = run({"score", "--hyp", dir_->file("nope"), "--ref", dir_->file("mono.xr")});
  EXPECT_EQ(missing.code, 1);
  dir_->write("short.txt", {"a"});
  EXPECT_EQ(run({"score", "--hyp", dir_->file("short.txt"), "--ref", dir_->file("mono.xr")}).code,
            1);
}

TEST_F(CliTest, SubwordCommands) {
  dir_->write("text.en", *base_);
  auto trained = run({"spm-train", "--input", dir_->file("text.en"), "--languages", "en,xr,xv",
                      "--size", "60", "--output", dir_->file("en.spm")});
  ASSERT_EQ(trained.code, 0) << trained.err;
  auto merged = run({"spm-merge", dir_->file("en.spm"), dir_->file("en.spm"), "--output",
                     dir_->file("merged.spm")});
  ASSERT_EQ(merged.code, 0) << merged.err;
  SubwordModel model = SubwordModel::load(dir_->file("en.spm"));
  auto encoded = run({"spm-encode", "--model", dir_->file("en.spm")}, (*base_)[0] + "\n");
  ASSERT_EQ(encoded.code, 0);
  std::string expected;
  for (TokenId id : model.encode((*base_)[0])) {
    expected += (expected.empty() ? "" : " ") + std::to_string(id);
  }
  EXPECT_EQ(encoded.out, expected + "\n");
  // Too small for the reserved tokens plus the alphabet.
  EXPECT_EQ(run({"spm-train", "--input", dir_->file("text.en"), "--languages", "en", "--size",
                 "5", "--output", dir_->file("bad.spm")})
                .code,
            2);
}

TEST_F(CliTest, TrainTwiceGivesIdenticalCheckpoints) {
  std::string sections = "[corpus]\ndirection = en-xr\npath = en-xr.tsv\n";
  auto first = run({"train", "--manifest", write_manifest("a.manifest", "runs/a", 30, sections)});
  auto second = run({"train", "--manifest", write_manifest("b.manifest", "runs/b", 30, sections)});
  ASSERT_EQ(first.code, 0) << first.err;
  ASSERT_EQ(second.code, 0) << second.err;
  auto digest = [](const std::string &line) { return line.substr(line.find('\t') + 1); };
  EXPECT_EQ(digest(first.out), digest(second.out));
  EXPECT_EQ(io::read_file(dir_->file("runs/a/step-30.ckpt")),
            io::read_file(dir_->file("runs/b/step-30.ckpt")));
  EXPECT_NE(io::read_file(dir_->file("runs/a/manifest.txt")).find("seed = 5"),
            std::string::npos);
  // The finished run directory still holds no lock, and a live lock blocks.
  io::write_file(dir_->file("runs/a/run.lock"), "");
  EXPECT_EQ(run({"train", "--manifest", dir_->file("a.manifest")}).code, 2);
}

TEST_F(CliTest, ManifestProblemsAreConfigurationErrors) {
  std::string sections = "[corpus]\ndirection = en-xr\npath = en-xr.tsv\n";
  EXPECT_EQ(run({"train", "--manifest", dir_->file("absent.manifest")}).code, 2);
  EXPECT_EQ(run({"train", "--manifest",
                 write_manifest("m1", "runs/m1", 5, sections, "colour = blue")})
                .code,
            2);
  EXPECT_EQ(run({"train", "--manifest",
                 write_manifest("m2", "runs/m2", 5,
                                "[corpus]\ndirection = en-xr\npath = missing.tsv\n")})
                .code,
            2);
  EXPECT_EQ(run({"train", "--manifest",
                 write_manifest("m3", "runs/m3", 5, sections, "max_epochs = 1")})
                .code,
            2);
  EXPECT_EQ(run({"train", "--manifest",
                 write_manifest("m4", "runs/m4", 5, sections, "d_model = 64")})
                .code,
            2);  // duplicate key
  std::string odd = write_manifest("m5", "runs/m5", 5, sections);
  std::string text = io::read_file(odd);
  text.replace(text.find("d_model = 32"), 12, "d_model = 30");
  io::write_file(odd, text);
  EXPECT_EQ(run({"train", "--manifest", odd}).code, 2);  // heads do not divide d_model
  EXPECT_FALSE(std::filesystem::exists(dir_->file("runs/m2")));
}

TEST_F(CliTest, DivergentTrainingExitsWithNumericalCode) {
  std::string sections = "[corpus]\ndirection = en-xr\npath = en-xr.tsv\n";
  std::string manifest = write_manifest("nan.manifest", "runs/nan", 50, sections);
  std::string text = io::read_file(manifest);
  text.replace(text.find("peak_lr = 0.003"), 15, "peak_lr = 1e300");
  text.replace(text.find("warmup_steps = 50"), 17, "warmup_steps = 1");
  io::write_file(manifest, text);
  auto result = run({"train", "--manifest", manifest});
  EXPECT_EQ(result.code, 3) << result.err;
}

TEST_F(CliTest, CopyTrainedCheckpointEchoesInput) {
  std::string input = sample_input(10);
  auto result = run({"translate", "--checkpoint", *copy_ckpt_, "--vocab",
                     dir_->file("vocab.spm"), "--src", "xr", "--tgt", "xr"},
                    input);
  ASSERT_EQ(result.code, 0) << result.err;
  EXPECT_EQ(result.out, input);
  EXPECT_EQ(run({"translate", "--checkpoint", *copy_ckpt_, "--vocab", dir_->file("vocab.spm"),
                 "--src", "xr", "--tgt", "ta"},
                input)
                .code,
            2);
  std::string too_long;
  for (int i = 0; i < 60; ++i) too_long += "ab ";
  EXPECT_EQ(run({"translate", "--checkpoint", *copy_ckpt_, "--vocab", dir_->file("vocab.spm"),
                 "--src", "xr", "--tgt", "xr"},
                too_long + "\n")
                .code,
            1);
}

TEST_F(CliTest, GridAlignJoinAndBacktranslate) {
  std::vector<std::string> tsv{"en\txr"};
  for (size_t i = 0; i < 8; ++i) {
    tsv.push_back((*base_)[i] + "\t" +
                  synthetic::transform_text(synthetic::Transform::kReverse, (*base_)[i]));
  }
  dir_->write("test.multi", tsv);
  auto grid = run({"grid", "--checkpoint", *copy_ckpt_, "--vocab", dir_->file("vocab.spm"),
                   "--test", dir_->file("test.multi")});
  ASSERT_EQ(grid.code, 0) << grid.err;
  auto expected = eval_grid(load_checkpoint(*copy_ckpt_), SubwordModel::load(dir_->file("vocab.spm")),
                            multiway_from_tsv(io::join_lines(tsv), "t"),
                            Tokenization::whitespace());
  EXPECT_EQ(grid.out, expected.to_tsv());
  EXPECT_NE(grid.out.find("xr\t"), std::string::npos);

  auto doc = std::vector<std::string>(base_->begin(), base_->begin() + 6);
  auto tgt = doc;
  tgt.erase(tgt.begin() + 2);
  dir_->write("doc.src", doc);
  dir_->write("doc.tgt", tgt);
  auto aligned = run({"align", "--src", dir_->file("doc.src"), "--tgt", dir_->file("doc.tgt"),
                      "--mt", dir_->file("doc.src")});
  ASSERT_EQ(aligned.code, 0) << aligned.err;
  EXPECT_EQ(aligned.out, links_to_tsv(bleualign({doc, tgt, doc})));
  EXPECT_EQ(run({"align", "--src", dir_->file("doc.src"), "--tgt", dir_->file("doc.tgt")}).code,
            2);

  dir_->write("hi.tsv", {"Hello.\tnamaste", "Thanks\tdhanyavad"});
  dir_->write("ta.tsv", {"hello\tvanakkam"});
  auto joined = run({"multiway-join", "--pairs", "hi=" + dir_->file("hi.tsv"), "--pairs",
                     "ta=" + dir_->file("ta.tsv")});
  ASSERT_EQ(joined.code, 0) << joined.err;
  EXPECT_EQ(joined.out,
            "en\thi\tta\nHello.\tnamaste\tvanakkam\nThanks\tdhanyavad\t\xE2\x80\x94\n");

  // The copy model answers "into en" requests with xr text unchanged.
  dir_->write("mono.small", {"ab ba", "", "cd"});
  auto bt = run({"backtranslate", "--checkpoint", *copy_ckpt_, "--vocab",
                 dir_->file("vocab.spm"), "--input", dir_->file("mono.small"), "--lang", "xr"});
  ASSERT_EQ(bt.code, 0) << bt.err;
  size_t rows = 0;
  for (char c : bt.out) rows += c == '\n';
  EXPECT_LE(rows, 2u);
  EXPECT_EQ(run({"backtranslate", "--checkpoint", *copy_ckpt_, "--vocab",
                 dir_->file("vocab.spm"), "--input", dir_->file("mono.small"), "--lang", "xr",
                 "--pivot", "xv"})
                .code,
            2);
}

TEST_F(CliTest, ServiceMatchesTranslateAndHandlesConcurrentRequests) {
  TranslationService service;
  EXPECT_FALSE(service.ready());
  EXPECT_EQ(service.health().status, 503);
  EXPECT_EQ(service.translate(R"({"text":"ab","src":"xr","tgt":"xr"})").status, 503);

  HttpFrontend frontend(service, 4);
  int port = frontend.bind("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  std::thread server([&] { frontend.run(); });
  frontend.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  auto early = client.Get("/health");
  ASSERT_TRUE(early);
  EXPECT_EQ(early->status, 503);

  service.load(*copy_ckpt_, dir_->file("vocab.spm"));
  auto health = client.Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);

  std::string line = synthetic::transform_text(synthetic::Transform::kReverse, (*base_)[3]);
  auto cli = run({"translate", "--checkpoint", *copy_ckpt_, "--vocab", dir_->file("vocab.spm"),
                  "--src", "xr", "--tgt", "xr"},
                 line + "\n");
  nlohmann::json request{{"text", line}, {"src", "xr"}, {"tgt", "xr"}};
  std::vector<std::future<std::string>> replies;
  for (int i = 0; i < 32; ++i) {
    replies.push_back(std::async(std::launch::async, [&] {
      httplib::Client c("127.0.0.1", port);
      auto res = c.Post("/translate", request.dump(), "application/json");
      if (!res) return "transport error: " + httplib::to_string(res.error());
      return res->status == 200 ? res->body : "status " + std::to_string(res->status);
    }));
  }
  std::vector<std::string> bodies;
  for (auto &reply : replies) bodies.push_back(reply.get());
  for (const auto &body : bodies) EXPECT_EQ(body, bodies.front());
  auto first = nlohmann::json::parse(bodies.front());
  EXPECT_EQ(first["translation"], line);
  EXPECT_EQ(first["translation"].get<std::string>() + "\n", cli.out);
  EXPECT_EQ(first["direction"], "xr-xr");
  EXPECT_EQ(first["model_step"], 600);

  auto unknown = client.Post("/translate", R"({"text":"ab","src":"xr","tgt":"ta"})",
                             "application/json");
  ASSERT_TRUE(unknown);
  EXPECT_EQ(unknown->status, 400);
  std::string long_text;
  for (int i = 0; i < 60; ++i) long_text += "ab ";
  auto too_long = client.Post("/translate", nlohmann::json{{"text", long_text}, {"src", "xr"},
                                                           {"tgt", "xr"}}.dump(),
                              "application/json");
  ASSERT_TRUE(too_long);
  EXPECT_EQ(too_long->status, 413);
  auto garbage = client.Post("/translate", "not json", "application/json");
  ASSERT_TRUE(garbage);
  EXPECT_EQ(garbage->status, 400);

  frontend.stop();
  server.join();
}

}  // namespace
}  // namespace nmt
