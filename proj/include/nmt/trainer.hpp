#pragma once

// The training step loop, warm starts and fine-tuning.

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nmt/batching.hpp"
#include "nmt/checkpoint.hpp"
#include "nmt/error.hpp"
#include "nmt/log.hpp"
#include "nmt/optimizer.hpp"
#include "nmt/transformer.hpp"

namespace nmt {

struct TrainConfig {
  double peak_lr = 1e-3;
  size_t warmup_steps = 4000;
  std::optional<size_t> max_epochs;
  std::optional<size_t> max_steps;
  double grad_clip_norm = 1.0;
  uint64_t seed = 1;
  size_t checkpoint_every = 1000;

  void validate() const {
    if (!(peak_lr > 0.0)) throw ConfigError("peak_lr must be positive");
    if (warmup_steps == 0) throw ConfigError("warmup_steps must be positive");
    if (!(grad_clip_norm > 0.0)) throw ConfigError("grad_clip_norm must be positive");
    if (checkpoint_every == 0) throw ConfigError("checkpoint_every must be positive");
    if (max_epochs.has_value() == max_steps.has_value()) {
      throw ConfigError("exactly one of max_epochs and max_steps must be set");
    }
  }

  std::string canonical() const {
    std::ostringstream out;
    out.precision(17);
    out << "peak_lr=" << peak_lr << "\nwarmup_steps=" << warmup_steps;
    if (max_epochs) out << "\nmax_epochs=" << *max_epochs;
    if (max_steps) out << "\nmax_steps=" << *max_steps;
    out << "\ngrad_clip_norm=" << grad_clip_norm << "\nseed=" << seed
        << "\ncheckpoint_every=" << checkpoint_every << "\n";
    return out.str();
  }

  // Fine-tuning defaults: same budget shape, one fifth of the peak rate.
  TrainConfig for_finetuning() const {
    TrainConfig out = *this;
    out.peak_lr = peak_lr * 0.2;
    return out;
  }
};

struct TrainOptions {
  // Empty: no files are written.
  std::filesystem::path run_dir;
  // Held-out batches; the checkpoint with the lowest loss on them becomes
  // best.ckpt. Without them best.ckpt is the final state.
  std::vector<Batch> heldout;
  std::function<void(size_t step, double loss)> on_step;
};

namespace detail {

// Exclusive marker file; a second trainer on the same directory fails fast.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path &dir) {
    if (dir.empty()) return;
    std::filesystem::create_directories(dir);
    path_ = dir / "run.lock";
    int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      throw ConfigError("run directory " + dir.string() + " is locked by another run");
    }
    ::close(fd);
  }
  ~RunLock() {
    if (!path_.empty()) {
      std::error_code ignored;
      std::filesystem::remove(path_, ignored);
    }
  }
  RunLock(const RunLock &) = delete;
  RunLock &operator=(const RunLock &) = delete;

 private:
  std::filesystem::path path_;
};

inline double heldout_loss(const Transformer<float> &model, const std::vector<Batch> &batches) {
  double total = 0.0;
  double tokens = 0.0;
  for (const auto &batch : batches) {
    double scored = static_cast<double>(batch.token_count - batch.rows);
    total += static_cast<double>(model.loss(batch)) * scored;
    tokens += scored;
  }
  return tokens > 0.0 ? total / tokens : 0.0;
}

}  // namespace detail

// Mean loss over held-out batches, weighted by scored target tokens.
inline double evaluate_loss(const Checkpoint &ckpt, const std::vector<Batch> &batches) {
  ModelConfig config = ckpt.config;
  Transformer<float> model(config, ckpt.params);
  return detail::heldout_loss(model, batches);
}

// Runs the step loop. With `init`, training continues from it: parameters,
// optimizer moments and counters carry over; the learning-rate schedule
// restarts from step 1 of this run.
inline Checkpoint train(const ModelConfig &mconfig, const TrainConfig &tconfig,
                        BatchStream &stream, const std::optional<Checkpoint> &init,
                        const std::string &vocab_hash, const TrainOptions &options = {}) {
  mconfig.validate();
  tconfig.validate();
  Checkpoint state;
  if (init) {
    if (init->vocab_hash != vocab_hash) {
      throw ConfigError("checkpoint vocabulary hash " + init->vocab_hash.substr(0, 12) +
                        " does not match the frozen vocabulary " +
                        vocab_hash.substr(0, 12) + "; warm starts require the same vocabulary");
    }
    if (!init->config.shape_compatible(mconfig)) {
      throw ConfigError("model config is not shape-compatible with the checkpoint");
    }
    state = *init;
    state.config.dropout = mconfig.dropout;
    state.config.label_smoothing = mconfig.label_smoothing;
  } else {
    state = Checkpoint::fresh(mconfig, vocab_hash, tconfig.seed);
  }

  detail::RunLock lock(options.run_dir);
  std::ofstream loss_log;
  if (!options.run_dir.empty()) {
    io::write_file(options.run_dir / "config.txt",
                   "[model]\n" + state.config.canonical() + "[train]\n" + tconfig.canonical() +
                       "vocab_hash=" + vocab_hash + "\n");
    loss_log.open(options.run_dir / "loss.log", std::ios::out | std::ios::trunc);
  }

  double best_loss = std::numeric_limits<double>::infinity();
  auto consider_best = [&](const Checkpoint &ckpt) {
    if (options.run_dir.empty() || options.heldout.empty()) return;
    double loss = evaluate_loss(ckpt, options.heldout);
    logger().info("step {} held-out loss {:.4f}", ckpt.step, loss);
    if (loss < best_loss) {
      best_loss = loss;
      save_checkpoint(ckpt, options.run_dir / "best.ckpt");
    }
  };

  Parameters<float> grads = state.params.zeros_like();
  const uint64_t first_epoch = state.epoch;
  size_t local_step = 0;
  uint64_t last_saved = state.step;
  while (true) {
    if (tconfig.max_steps && local_step >= *tconfig.max_steps) break;
    if (tconfig.max_epochs && stream.at_epoch_end() &&
        stream.epoch() >= *tconfig.max_epochs) {
      break;
    }
    const Batch &batch = stream.next();
    ++local_step;
    std::seed_seq seq{tconfig.seed, static_cast<uint64_t>(state.step + 1)};
    std::mt19937_64 rng(seq);
    grads.zero();
    Transformer<float> model(state.config, state.params);
    double loss = 0.0;
    try {
      loss = model.loss_and_gradients(batch, grads, &rng);
    } catch (const NumericalError &error) {
      if (!options.run_dir.empty()) {
        save_checkpoint(state, options.run_dir / ("step-" + std::to_string(state.step) + ".ckpt"));
      }
      logger().error("step {}: {} in {}; last good state is step {}", state.step + 1,
                     error.what(), error.tensor(), state.step);
      throw;
    }
    clip_global_norm(grads, tconfig.grad_clip_norm);
    double lr = learning_rate(tconfig.peak_lr, tconfig.warmup_steps, local_step);
    Checkpoint snapshot;
    const bool keep_snapshot = !options.run_dir.empty();
    if (keep_snapshot) snapshot = state;
    adam_step(state.params, grads, state.optimizer, lr);
    state.step += 1;
    if (stream.at_epoch_end()) state.epoch = first_epoch + stream.epoch();
    std::string culprit = state.params.first_non_finite();
    if (!culprit.empty()) {
      if (keep_snapshot) {
        save_checkpoint(snapshot,
                        options.run_dir / ("step-" + std::to_string(snapshot.step) + ".ckpt"));
      }
      throw NumericalError("non-finite parameter after update", culprit);
    }

    if (loss_log.is_open()) {
      char line[64];
      std::snprintf(line, sizeof line, "%llu\t%.9g\n",
                    static_cast<unsigned long long>(state.step), loss);
      loss_log << line;
    }
    if (options.on_step) options.on_step(state.step, loss);
    if (!options.run_dir.empty() && local_step % tconfig.checkpoint_every == 0) {
      save_checkpoint(state, options.run_dir / ("step-" + std::to_string(state.step) + ".ckpt"));
      last_saved = state.step;
      consider_best(state);
    }
  }

  if (!options.run_dir.empty()) {
    if (last_saved != state.step || local_step == 0) {
      save_checkpoint(state, options.run_dir / ("step-" + std::to_string(state.step) + ".ckpt"));
      consider_best(state);
    }
    if (options.heldout.empty()) save_checkpoint(state, options.run_dir / "best.ckpt");
  }
  return state;
}

// Continues training `ckpt` on a narrow-domain stream.
inline Checkpoint finetune(const Checkpoint &ckpt, BatchStream &domain_stream,
                           const TrainConfig &tconfig, const std::string &vocab_hash,
                           const TrainOptions &options = {}) {
  return train(ckpt.config, tconfig, domain_stream, ckpt, vocab_hash, options);
}

}  // namespace nmt
