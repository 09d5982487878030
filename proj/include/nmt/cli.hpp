#pragma once

// The `nmt` command line. run_cli takes its streams as arguments so the
// whole surface can be exercised in-process.

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "nmt/align.hpp"
#include "nmt/backtranslate.hpp"
#include "nmt/bleu.hpp"
#include "nmt/checkpoint.hpp"
#include "nmt/digest.hpp"
#include "nmt/eval_grid.hpp"
#include "nmt/manifest.hpp"
#include "nmt/server.hpp"
#include "nmt/trainer.hpp"
#include "nmt/unigram_trainer.hpp"

namespace nmt {

namespace cli {

inline std::vector<std::string> read_stream_lines(std::istream &in, const std::string &origin) {
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return io::split_lines(buffer.str(), origin);
}

inline std::vector<std::string> split_list(const std::string &text) {
  std::vector<std::string> out;
  std::stringstream stream(text);
  std::string item;
  while (std::getline(stream, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline Tokenization tokenization(const std::string &mode, const SubwordModel *vocab) {
  if (mode == "whitespace") return Tokenization::whitespace();
  if (!vocab) throw ConfigError("--tokenize subword needs --vocab");
  return Tokenization::subword(*vocab);
}

inline void require_language(const SubwordModel &vocab, const std::string &lang) {
  if (!vocab.has_language(lang)) {
    throw ConfigError("language '" + lang + "' is not registered in the vocabulary");
  }
}

inline std::string describe(const BleuReport &report) {
  char line[256];
  std::snprintf(line, sizeof line,
                "BLEU = %s %.1f/%.1f/%.1f/%.1f (BP = %.3f hyp_len = %zu ref_len = %zu)",
                format_score(report.bleu).c_str(), 100 * report.precisions[0],
                100 * report.precisions[1], 100 * report.precisions[2],
                100 * report.precisions[3], report.brevity_penalty, report.hyp_len,
                report.ref_len);
  return line;
}

inline nlohmann::json to_json(const BleuReport &report) {
  return {{"bleu", report.bleu},
          {"precisions", report.precisions},
          {"brevity_penalty", report.brevity_penalty},
          {"hyp_len", report.hyp_len},
          {"ref_len", report.ref_len},
          {"matches", report.matches},
          {"totals", report.totals}};
}

inline void emit(std::ostream &out, const std::string &output, const std::string &text) {
  if (output.empty() || output == "-") {
    out << text;
  } else {
    io::write_file(output, text);
  }
}

// Trains (or warm-starts) from a manifest; returns the best checkpoint path.
inline std::filesystem::path run_training(const RunManifest &manifest, bool finetuning,
                                          const std::optional<std::filesystem::path> &init,
                                          double lr_scale) {
  check_manifest_paths(manifest);
  if (manifest.output_dir.empty()) throw ConfigError("manifest needs an output_dir");
  SubwordModel vocab = SubwordModel::load(manifest.vocab.string());
  std::optional<Checkpoint> start;
  if (init) start = load_checkpoint(*init);
  if (finetuning && !start) throw ConfigError("finetune needs an initial checkpoint");

  ModelConfig mconfig = start && finetuning ? start->config : manifest.model;
  if (!finetuning || !start) mconfig.vocab_size = vocab.size();
  mconfig.validate();
  mconfig.check_vocabulary(vocab);
  TrainConfig tconfig = manifest.training;
  if (finetuning) tconfig.peak_lr *= lr_scale;

  TrainingData data = load_training_data(manifest, vocab, mconfig.max_len);
  BatchStream stream = BatchStream::from_mixture(data.sampler, manifest.batching, manifest.seed);
  TrainOptions options;
  options.run_dir = manifest.output_dir;
  options.heldout = std::move(data.heldout);
  options.on_step = [](size_t step, double loss) {
    if (step % 100 == 0) logger().info("step {} loss {:.4f}", step, loss);
  };
  train(mconfig, tconfig, stream, start, vocab.hash(), options);
  io::write_file((manifest.output_dir / "manifest.txt").string(),
                 io::read_file(manifest.source.string()));
  return manifest.output_dir / "best.ckpt";
}

}  // namespace cli

inline int run_cli(int argc, const char *const *argv, std::istream &in, std::ostream &out,
                   std::ostream &err) {
  CLI::App app{"Multilingual neural machine translation toolkit", "nmt"};
  app.require_subcommand(1);
  app.fallthrough();

  // spm-train
  auto *spm_train = app.add_subcommand("spm-train", "Train a unigram subword vocabulary");
  std::vector<std::string> spm_inputs;
  std::string spm_languages;
  std::string spm_output;
  size_t spm_size = 4000;
  spm_train->add_option("--input", spm_inputs, "Training text, one sentence per line")
      ->required();
  spm_train->add_option("--languages", spm_languages, "Comma-separated language codes")
      ->required();
  spm_train->add_option("--size", spm_size, "Vocabulary size including reserved tokens");
  spm_train->add_option("--output", spm_output, "Where to write the model")->required();

  // spm-encode
  auto *spm_encode = app.add_subcommand("spm-encode", "Encode stdin lines into token ids");
  std::string encode_model;
  bool encode_pieces = false;
  spm_encode->add_option("--model", encode_model)->required();
  spm_encode->add_flag("--pieces", encode_pieces, "Print pieces instead of ids");

  // spm-merge
  auto *spm_merge = app.add_subcommand("spm-merge", "Merge per-language vocabularies");
  std::vector<std::string> merge_inputs;
  std::string merge_output;
  spm_merge->add_option("models", merge_inputs)->required();
  spm_merge->add_option("--output", merge_output)->required();

  // train / finetune
  auto *train_cmd = app.add_subcommand("train", "Train a model from a run manifest");
  std::string manifest_path;
  train_cmd->add_option("--manifest", manifest_path)->required();
  auto *finetune_cmd = app.add_subcommand("finetune", "Continue training on domain data");
  std::string finetune_init;
  double lr_scale = 0.2;
  finetune_cmd->add_option("--manifest", manifest_path)->required();
  finetune_cmd->add_option("--init", finetune_init, "Checkpoint to start from");
  finetune_cmd->add_option("--lr-scale", lr_scale, "Multiplier on the manifest peak_lr");

  // backtranslate
  auto *bt_cmd = app.add_subcommand("backtranslate", "Synthesize pivot-side sources");
  std::string checkpoint_path;
  std::string vocab_path;
  std::string bt_input;
  std::string bt_lang;
  std::string bt_pivot = "en";
  std::string output_path;
  BacktranslateOptions bt_options;
  bt_cmd->add_option("--checkpoint", checkpoint_path)->required();
  bt_cmd->add_option("--vocab", vocab_path)->required();
  bt_cmd->add_option("--input", bt_input, "Monolingual text")->required();
  bt_cmd->add_option("--lang", bt_lang, "Language of the monolingual text")->required();
  bt_cmd->add_option("--pivot", bt_pivot);
  bt_cmd->add_flag("--allow-any-pivot", bt_options.allow_any_pivot);
  bt_cmd->add_option("--max-out", bt_options.max_out);
  bt_cmd->add_option("--output", output_path, "pivot<TAB>lang TSV (default stdout)");

  // translate
  auto *translate_cmd = app.add_subcommand("translate", "Translate stdin lines to stdout");
  std::string src_lang;
  std::string tgt_lang;
  GridOptions decode_options;
  translate_cmd->add_option("--checkpoint", checkpoint_path)->required();
  translate_cmd->add_option("--vocab", vocab_path)->required();
  translate_cmd->add_option("--src", src_lang)->required();
  translate_cmd->add_option("--tgt", tgt_lang)->required();
  translate_cmd->add_option("--max-out", decode_options.max_out);

  // score
  auto *score_cmd = app.add_subcommand("score", "Corpus BLEU of a hypothesis file");
  std::string hyp_path;
  std::string ref_path;
  std::string tokenize = "whitespace";
  bool as_json = false;
  score_cmd->add_option("--hyp", hyp_path)->required();
  score_cmd->add_option("--ref", ref_path)->required();
  score_cmd->add_option("--tokenize", tokenize)
      ->check(CLI::IsMember({"whitespace", "subword"}));
  score_cmd->add_option("--vocab", vocab_path);
  score_cmd->add_flag("--json", as_json);

  // grid
  auto *grid_cmd = app.add_subcommand("grid", "BLEU for every direction of a multiway set");
  std::string test_path;
  grid_cmd->add_option("--checkpoint", checkpoint_path)->required();
  grid_cmd->add_option("--vocab", vocab_path)->required();
  grid_cmd->add_option("--test", test_path, "Multiway TSV")->required();
  grid_cmd->add_option("--tokenize", tokenize)->check(CLI::IsMember({"whitespace", "subword"}));
  grid_cmd->add_option("--max-out", decode_options.max_out);
  grid_cmd->add_flag("--json", as_json);

  // align
  auto *align_cmd = app.add_subcommand("align", "Sentence-align a document pair");
  std::string doc_src;
  std::string doc_tgt;
  std::string doc_mt;
  double threshold = 0.1;
  align_cmd->add_option("--src", doc_src, "Source document, one sentence per line")
      ->required();
  align_cmd->add_option("--tgt", doc_tgt, "Target document")->required();
  align_cmd->add_option("--mt", doc_mt, "Source translated into the target language");
  align_cmd->add_option("--checkpoint", checkpoint_path, "Translate the source when --mt is absent");
  align_cmd->add_option("--vocab", vocab_path);
  align_cmd->add_option("--tgt-lang", tgt_lang);
  align_cmd->add_option("--threshold", threshold);

  // multiway-join
  auto *join_cmd = app.add_subcommand("multiway-join", "Join en-xx pair lists on English");
  std::vector<std::string> join_pairs;
  join_cmd->add_option("--pairs", join_pairs, "lang=path to an en<TAB>lang TSV")->required();
  join_cmd->add_option("--output", output_path);

  // serve
  auto *serve_cmd = app.add_subcommand("serve", "HTTP translation service");
  std::string host = "127.0.0.1";
  int port = 8080;
  size_t threads = 4;
  serve_cmd->add_option("--checkpoint", checkpoint_path)->required();
  serve_cmd->add_option("--vocab", vocab_path)->required();
  serve_cmd->add_option("--host", host);
  serve_cmd->add_option("--port", port);
  serve_cmd->add_option("--threads", threads)->check(CLI::PositiveNumber);
  serve_cmd->add_option("--max-out", decode_options.max_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success &e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError &e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return static_cast<int>(ExitCode::kInputError);
  }

  try {
    if (spm_train->parsed()) {
      std::vector<std::string> corpus;
      for (const auto &path : spm_inputs) {
        auto lines = io::read_lines(path);
        corpus.insert(corpus.end(), lines.begin(), lines.end());
      }
      UnigramOptions options;
      options.languages = cli::split_list(spm_languages);
      options.target_size = spm_size;
      train_unigram(corpus, options).save(spm_output);
    } else if (spm_encode->parsed()) {
      SubwordModel model = SubwordModel::load(encode_model);
      for (const auto &line : cli::read_stream_lines(in, "<stdin>")) {
        TokenSequence ids = model.encode(line);
        if (encode_pieces) {
          auto pieces = model.pieces_of(ids);
          for (size_t i = 0; i < pieces.size(); ++i) out << (i ? " " : "") << pieces[i];
        } else {
          for (size_t i = 0; i < ids.size(); ++i) out << (i ? " " : "") << ids[i];
        }
        out << '\n';
      }
    } else if (spm_merge->parsed()) {
      std::vector<SubwordModel> models;
      for (const auto &path : merge_inputs) models.push_back(SubwordModel::load(path));
      merge_vocabularies(models).save(merge_output);
    } else if (train_cmd->parsed() || finetune_cmd->parsed()) {
      RunManifest manifest = load_manifest(manifest_path);
      bool finetuning = finetune_cmd->parsed();
      std::optional<std::filesystem::path> init = manifest.init;
      if (!finetune_init.empty()) init = finetune_init;
      auto best = cli::run_training(manifest, finetuning, init, lr_scale);
      out << best.string() << '\t' << sha256_hex(io::read_file(best.string())) << '\n';
    } else if (bt_cmd->parsed()) {
      Checkpoint ckpt = load_checkpoint(checkpoint_path);
      SubwordModel vocab = SubwordModel::load(vocab_path);
      auto result = backtranslate(ckpt, vocab, io::read_lines(bt_input), LangCode(bt_lang),
                                  LangCode(bt_pivot), bt_options);
      std::string tsv;
      for (const auto &example : result.examples) {
        TokenSequence src(example.src_ids.begin() + 1, example.src_ids.end() - 1);
        tsv += vocab.decode(src) + "\t" + vocab.decode(target_content(example)) + "\n";
      }
      cli::emit(out, output_path, tsv);
      logger().info("backtranslated {} line(s); {} empty, {} outside the length ratio",
                    result.examples.size(), result.skipped_empty, result.filtered_ratio);
    } else if (translate_cmd->parsed()) {
      Checkpoint ckpt = load_checkpoint(checkpoint_path);
      SubwordModel vocab = SubwordModel::load(vocab_path);
      if (ckpt.vocab_hash != vocab.hash()) {
        throw ConfigError("checkpoint vocabulary does not match the subword model");
      }
      cli::require_language(vocab, src_lang);
      cli::require_language(vocab, tgt_lang);
      ModelConfig config = ckpt.config;
      config.dropout = 0.0;
      Transformer<float> model(config, ckpt.params);
      auto lines = cli::read_stream_lines(in, "<stdin>");
      for (const auto &line : translate_lines(model, vocab, lines, tgt_lang, decode_options)) {
        out << line << '\n';
      }
    } else if (score_cmd->parsed()) {
      std::optional<SubwordModel> vocab;
      if (!vocab_path.empty()) vocab = SubwordModel::load(vocab_path);
      auto report = corpus_bleu(io::read_lines(hyp_path), io::read_lines(ref_path),
                                cli::tokenization(tokenize, vocab ? &*vocab : nullptr));
      out << (as_json ? cli::to_json(report).dump(2) : cli::describe(report)) << '\n';
    } else if (grid_cmd->parsed()) {
      Checkpoint ckpt = load_checkpoint(checkpoint_path);
      SubwordModel vocab = SubwordModel::load(vocab_path);
      auto tuples = multiway_from_tsv(io::read_file(test_path), test_path);
      EvalGrid grid = eval_grid(ckpt, vocab, tuples, cli::tokenization(tokenize, &vocab),
                                decode_options);
      out << (as_json ? grid.to_json().dump(2) + "\n" : grid.to_tsv());
    } else if (align_cmd->parsed()) {
      DocumentPair doc{io::read_lines(doc_src), io::read_lines(doc_tgt), {}};
      if (!doc_mt.empty()) {
        doc.mt_src = io::read_lines(doc_mt);
      } else {
        if (checkpoint_path.empty() || vocab_path.empty() || tgt_lang.empty()) {
          throw ConfigError("align needs --mt, or --checkpoint, --vocab and --tgt-lang");
        }
        Checkpoint ckpt = load_checkpoint(checkpoint_path);
        SubwordModel vocab = SubwordModel::load(vocab_path);
        cli::require_language(vocab, tgt_lang);
        ModelConfig config = ckpt.config;
        config.dropout = 0.0;
        Transformer<float> model(config, ckpt.params);
        doc.mt_src = translate_lines(model, vocab, doc.src_sents, tgt_lang, decode_options);
      }
      out << links_to_tsv(bleualign(doc, threshold));
    } else if (join_cmd->parsed()) {
      PairLists pairs;
      for (const auto &spec : join_pairs) {
        size_t eq = spec.find('=');
        if (eq == std::string::npos) throw ConfigError("--pairs expects lang=path: " + spec);
        std::string lang = LangCode(spec.substr(0, eq)).str();
        std::string path = spec.substr(eq + 1);
        auto &list = pairs[lang];
        auto lines = io::read_lines(path);
        for (size_t i = 0; i < lines.size(); ++i) {
          if (lines[i].empty()) continue;
          size_t tab = lines[i].find('\t');
          if (tab == std::string::npos) {
            throw InputError(path + ":" + std::to_string(i + 1) + ": expected en<TAB>" + lang);
          }
          list.push_back({lines[i].substr(0, tab), lines[i].substr(tab + 1)});
        }
      }
      cli::emit(out, output_path, multiway_to_tsv(build_multiway(pairs)));
    } else if (serve_cmd->parsed()) {
      TranslationService service(decode_options.max_out);
      HttpFrontend frontend(service, threads);
      int bound = frontend.bind(host, port);
      if (bound < 0) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
      logger().info("listening on {}:{}", host, bound);
      std::exception_ptr load_error;
      std::thread loader([&] {
        try {
          service.load(checkpoint_path, vocab_path);
          logger().info("model ready");
        } catch (...) {
          load_error = std::current_exception();
          frontend.stop();
        }
      });
      frontend.run();
      loader.join();
      if (load_error) std::rethrow_exception(load_error);
    }
  } catch (const NumericalError &e) {
    logger().error("{} (tensor {})", e.what(), e.tensor());
    return static_cast<int>(e.code());
  } catch (const Error &e) {
    logger().error("{}", e.what());
    return static_cast<int>(e.code());
  } catch (const std::exception &e) {
    logger().error("{}", e.what());
    return static_cast<int>(ExitCode::kInputError);
  }
  return static_cast<int>(ExitCode::kOk);
}

}  // namespace nmt
