#pragma once

// Post-norm transformer encoder-decoder with a tied token embedding shared by
// the encoder input, decoder input and output projection.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nmt/autograd.hpp"
#include "nmt/batching.hpp"
#include "nmt/error.hpp"
#include "nmt/subword.hpp"
#include "nmt/tensor.hpp"

namespace nmt {

struct ModelConfig {
  size_t d_model = 128;
  size_t n_heads = 4;
  size_t n_enc_layers = 2;
  size_t n_dec_layers = 2;
  size_t d_ff = 512;
  double dropout = 0.1;
  size_t max_len = 256;
  size_t vocab_size = 0;
  double label_smoothing = 0.1;

  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
      throw ConfigError("d_model must be a positive multiple of n_heads");
    }
    if (n_enc_layers == 0 || n_dec_layers == 0 || d_ff == 0) {
      throw ConfigError("layer counts and d_ff must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
      throw ConfigError("label_smoothing must be in [0, 1)");
    }
    if (max_len < 2) throw ConfigError("max_len must be at least 2");
    if (vocab_size <= static_cast<size_t>(SubwordModel::kUnk)) {
      throw ConfigError("vocab_size is too small");
    }
  }

  void check_vocabulary(const SubwordModel &model) const {
    if (model.size() != vocab_size) {
      throw ConfigError("vocab_size " + std::to_string(vocab_size) +
                        " does not match the subword model (" +
                        std::to_string(model.size()) + ")");
    }
  }

  // Stable textual form; hashed into checkpoints.
  std::string canonical() const {
    std::ostringstream out;
    out.precision(17);
    out << "d_model=" << d_model << "\nn_heads=" << n_heads
        << "\nn_enc_layers=" << n_enc_layers << "\nn_dec_layers=" << n_dec_layers
        << "\nd_ff=" << d_ff << "\ndropout=" << dropout << "\nmax_len=" << max_len
        << "\nvocab_size=" << vocab_size << "\nlabel_smoothing=" << label_smoothing
        << "\n";
    return out.str();
  }

  // Everything except the regularization knobs, which may change between a
  // checkpoint and a warm start.
  bool shape_compatible(const ModelConfig &other) const {
    return d_model == other.d_model && n_heads == other.n_heads &&
           n_enc_layers == other.n_enc_layers && n_dec_layers == other.n_dec_layers &&
           d_ff == other.d_ff && max_len == other.max_len &&
           vocab_size == other.vocab_size;
  }

  bool operator==(const ModelConfig &) const = default;
};

// Named tensors in a fixed insertion order. Non-trainable entries (the
// positional table) still receive gradients but are never updated.
template <typename T>
class Parameters {
 public:
  struct Entry {
    std::string name;
    Matrix<T> value;
    bool trainable = true;
  };

  Matrix<T> &add(std::string name, Matrix<T> value, bool trainable = true) {
    if (index_.count(name)) throw ConfigError("duplicate parameter " + name);
    index_[name] = entries_.size();
    entries_.push_back({std::move(name), std::move(value), trainable});
    return entries_.back().value;
  }

  bool contains(const std::string &name) const { return index_.count(name) > 0; }
  Matrix<T> &at(const std::string &name) { return entries_[position(name)].value; }
  const Matrix<T> &at(const std::string &name) const {
    return entries_[position(name)].value;
  }
  size_t position(const std::string &name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
  }

  std::vector<Entry> &entries() { return entries_; }
  const std::vector<Entry> &entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

  size_t scalar_count() const {
    size_t total = 0;
    for (const auto &entry : entries_) total += entry.value.size();
    return total;
  }

  Parameters zeros_like() const {
    Parameters out;
    for (const auto &entry : entries_) {
      out.add(entry.name, Matrix<T>(entry.value.rows(), entry.value.cols()),
              entry.trainable);
    }
    return out;
  }

  void zero() {
    for (auto &entry : entries_) entry.value.fill(T(0));
  }

  template <typename U>
  Parameters<U> cast() const {
    Parameters<U> out;
    for (const auto &entry : entries_) {
      out.add(entry.name, entry.value.template cast<U>(), entry.trainable);
    }
    return out;
  }

  // Name of the first tensor holding a NaN or infinity, or empty.
  std::string first_non_finite() const {
    for (const auto &entry : entries_) {
      for (T v : entry.value.values()) {
        if (!std::isfinite(v)) return entry.name;
      }
    }
    return {};
  }

  bool operator==(const Parameters &other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name != other.entries_[i].name ||
          entries_[i].trainable != other.entries_[i].trainable ||
          !(entries_[i].value == other.entries_[i].value)) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, size_t> index_;
};

template <typename T>
Matrix<T> sinusoidal_table(size_t length, size_t d_model) {
  Matrix<T> table(length, d_model);
  for (size_t pos = 0; pos < length; ++pos) {
    for (size_t i = 0; i < d_model; i += 2) {
      double angle = static_cast<double>(pos) /
                     std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
      table(pos, i) = static_cast<T>(std::sin(angle));
      if (i + 1 < d_model) table(pos, i + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return table;
}

namespace detail {

template <typename T>
void add_attention_params(Parameters<T> &p, const std::string &prefix, size_t d) {
  for (const char *name : {"wq", "wk", "wv", "wo"}) {
    p.add(prefix + "." + name, Matrix<T>(d, d));
  }
  for (const char *name : {"bq", "bk", "bv", "bo"}) {
    p.add(prefix + "." + name, Matrix<T>(1, d));
  }
}

template <typename T>
void add_norm_params(Parameters<T> &p, const std::string &prefix, size_t d) {
  p.add(prefix + ".g", Matrix<T>(1, d, T(1)));
  p.add(prefix + ".b", Matrix<T>(1, d));
}

template <typename T>
void add_ffn_params(Parameters<T> &p, const std::string &prefix, size_t d, size_t ff) {
  p.add(prefix + ".w1", Matrix<T>(d, ff));
  p.add(prefix + ".b1", Matrix<T>(1, ff));
  p.add(prefix + ".w2", Matrix<T>(ff, d));
  p.add(prefix + ".b2", Matrix<T>(1, d));
}

inline bool is_weight_matrix(const std::string &name) {
  auto dot = name.rfind('.');
  std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  return leaf.size() == 2 && leaf[0] == 'w';
}

}  // namespace detail

// Parameter layout with all weights zero, gains one and the sinusoidal table.
template <typename T>
Parameters<T> zero_parameters(const ModelConfig &config) {
  config.validate();
  const size_t d = config.d_model;
  Parameters<T> p;
  p.add("embed", Matrix<T>(config.vocab_size, d));
  p.add("out_bias", Matrix<T>(1, config.vocab_size));
  p.add("pos", sinusoidal_table<T>(config.max_len, d), false);
  for (size_t l = 0; l < config.n_enc_layers; ++l) {
    std::string prefix = "enc." + std::to_string(l);
    detail::add_attention_params(p, prefix + ".self", d);
    detail::add_norm_params(p, prefix + ".ln1", d);
    detail::add_ffn_params(p, prefix + ".ffn", d, config.d_ff);
    detail::add_norm_params(p, prefix + ".ln2", d);
  }
  for (size_t l = 0; l < config.n_dec_layers; ++l) {
    std::string prefix = "dec." + std::to_string(l);
    detail::add_attention_params(p, prefix + ".self", d);
    detail::add_norm_params(p, prefix + ".ln1", d);
    detail::add_attention_params(p, prefix + ".cross", d);
    detail::add_norm_params(p, prefix + ".ln2", d);
    detail::add_ffn_params(p, prefix + ".ffn", d, config.d_ff);
    detail::add_norm_params(p, prefix + ".ln3", d);
  }
  return p;
}

// Xavier-uniform weight matrices, N(0, 1/d_model) embeddings, zero biases.
template <typename T>
Parameters<T> init_parameters(const ModelConfig &config, uint64_t seed) {
  Parameters<T> p = zero_parameters<T>(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(config.d_model)));
  for (T &v : p.at("embed").values()) v = static_cast<T>(normal(rng));
  for (auto &entry : p.entries()) {
    if (!detail::is_weight_matrix(entry.name)) continue;
    double limit = std::sqrt(6.0 / static_cast<double>(entry.value.rows() + entry.value.cols()));
    std::uniform_real_distribution<double> uniform(-limit, limit);
    for (T &v : entry.value.values()) v = static_cast<T>(uniform(rng));
  }
  return p;
}

template <typename T>
struct EncoderState {
  Matrix<T> c;  // rows x len by d_model, row-major per sequence
  std::vector<uint8_t> src_mask;
  size_t rows = 0;
  size_t len = 0;
};

template <typename T>
class Transformer {
 public:
  Transformer(const ModelConfig &config, const Parameters<T> &params)
      : config_(config), params_(params) {
    config_.validate();
  }

  const ModelConfig &config() const { return config_; }
  const Parameters<T> &params() const { return params_; }

  // Single-sequence encoding; output is |src| x d_model.
  EncoderState<T> encode(const TokenSequence &src) const {
    std::vector<uint8_t> mask(src.size(), 1);
    return encode_batch(src, mask, 1, src.size());
  }

  // Padded row-major batch of sources.
  EncoderState<T> encode_batch(std::span<const TokenId> src, std::span<const uint8_t> mask,
                               size_t rows, size_t len) const {
    check_ids(src, len);
    Graph<T> g(false);
    Binder bind(g, params_, nullptr);
    Id c = encoder(g, bind, src, mask, rows, len, nullptr);
    return {g.value(c), std::vector<uint8_t>(mask.begin(), mask.end()), rows, len};
  }

  // Log-distribution over the next token after `prefix` (which starts with bos).
  std::vector<T> decoder_logprobs(const EncoderState<T> &state,
                                  const TokenSequence &prefix) const {
    if (prefix.empty()) throw InputError("decoder prefix must start with bos");
    std::vector<uint8_t> mask(prefix.size(), 1);
    auto rows = step_logprobs(state, prefix, mask, prefix.size());
    return rows.front();
  }

  // Next-token log-distributions for every row of a padded prefix batch; the
  // distribution is read at each row's last non-pad position.
  std::vector<std::vector<T>> step_logprobs(const EncoderState<T> &state,
                                            std::span<const TokenId> prefix,
                                            std::span<const uint8_t> mask,
                                            size_t len) const {
    Matrix<T> hidden = decoder_hidden(state, prefix, mask, len);
    std::vector<std::vector<T>> out(state.rows);
    for (size_t r = 0; r < state.rows; ++r) {
      size_t last = 0;
      for (size_t i = 0; i < len; ++i) {
        if (mask[r * len + i]) last = i;
      }
      out[r] = logprobs_of(hidden.row(r * len + last));
    }
    return out;
  }

  // Log-distributions after every position of a single prefix.
  std::vector<std::vector<T>> prefix_logprobs(const EncoderState<T> &state,
                                              const TokenSequence &prefix) const {
    std::vector<uint8_t> mask(prefix.size(), 1);
    Matrix<T> hidden = decoder_hidden(state, prefix, mask, prefix.size());
    std::vector<std::vector<T>> out;
    for (size_t i = 0; i < prefix.size(); ++i) out.push_back(logprobs_of(hidden.row(i)));
    return out;
  }

  // Mean label-smoothed negative log-likelihood over non-pad target tokens,
  // without dropout.
  T loss(const Batch &batch) const {
    Graph<T> g(false);
    return forward_loss(g, batch, nullptr, nullptr);
  }

  // Loss plus gradients added into `grads` (same layout as the parameters),
  // scaled by `scale`. `dropout_rng` enables dropout when non-null.
  T loss_and_gradients(const Batch &batch, Parameters<T> &grads,
                       std::mt19937_64 *dropout_rng = nullptr, T scale = T(1)) const {
    Graph<T> g(true);
    T value = forward_loss(g, batch, &grads, dropout_rng);
    if (!std::isfinite(value)) {
      std::string culprit = params_.first_non_finite();
      throw NumericalError("non-finite loss", culprit.empty() ? "loss" : culprit);
    }
    g.backward(last_loss_id_, scale);
    std::string culprit = grads.first_non_finite();
    if (!culprit.empty()) throw NumericalError("non-finite gradient", culprit);
    return value;
  }

  // Greedy decoding of a batch of source id sequences (control token already
  // prepended). Each row's output equals what decoding it alone produces.
  std::vector<TokenSequence> greedy(const std::vector<TokenSequence> &sources,
                                    size_t max_out) const {
    std::vector<TokenSequence> outputs(sources.size());
    if (sources.empty() || max_out == 0) return outputs;
    size_t len = 0;
    for (const auto &src : sources) {
      if (src.size() > config_.max_len) {
        throw InputError("source of length " + std::to_string(src.size()) +
                         " exceeds max_len " + std::to_string(config_.max_len));
      }
      len = std::max(len, src.size());
    }
    const size_t rows = sources.size();
    std::vector<TokenId> src(rows * len, SubwordModel::kPad);
    std::vector<uint8_t> src_mask(rows * len, 0);
    for (size_t r = 0; r < rows; ++r) {
      for (size_t i = 0; i < sources[r].size(); ++i) {
        src[r * len + i] = sources[r][i];
        src_mask[r * len + i] = 1;
      }
    }
    EncoderState<T> state = encode_batch(src, src_mask, rows, len);
    const size_t steps = std::min(max_out, config_.max_len - 1);
    IncrementalDecoder decoder(*this, state);
    std::vector<TokenId> last(rows, SubwordModel::kBos);
    std::vector<bool> done(rows, false);
    for (size_t step = 0; step < steps; ++step) {
      auto dists = decoder.step(last);
      bool all_done = true;
      for (size_t r = 0; r < rows; ++r) {
        TokenId best = argmax(dists[r]);
        last[r] = best;
        if (done[r]) continue;
        if (best == SubwordModel::kEos) {
          done[r] = true;
        } else {
          outputs[r].push_back(best);
        }
        all_done = all_done && done[r];
      }
      if (all_done) break;
    }
    return outputs;
  }

  // Feeds one token per row at a time, caching every layer's self-attention
  // keys and values. Each step reproduces the full-prefix computation for the
  // newest position exactly.
  class IncrementalDecoder {
   public:
    IncrementalDecoder(const Transformer &model, const EncoderState<T> &state)
        : model_(model), state_(state), layers_(model.config_.n_dec_layers) {
      Graph<T> g(false);
      Binder bind(g, model_.params_, nullptr);
      Id memory = g.constant(state_.c);
      for (size_t l = 0; l < layers_.size(); ++l) {
        std::string p = "dec." + std::to_string(l) + ".cross";
        layers_[l].cross_k = g.value(g.linear(memory, bind(p + ".wk"), bind(p + ".bk")));
        layers_[l].cross_v = g.value(g.linear(memory, bind(p + ".wv"), bind(p + ".bv")));
      }
    }

    size_t length() const { return length_; }

    // Appends `tokens` (one per row) and returns the next-token
    // log-distributions.
    std::vector<std::vector<T>> step(std::span<const TokenId> tokens) {
      const size_t rows = state_.rows;
      if (tokens.size() != rows) throw InputError("one token per row expected");
      if (length_ >= model_.config_.max_len) {
        throw InputError("decoder prefix exceeds max_len " +
                         std::to_string(model_.config_.max_len));
      }
      model_.check_ids(tokens, 1);
      const size_t d = model_.config_.d_model;
      const size_t t = length_ + 1;
      Graph<T> g(false);
      Binder bind(g, model_.params_, nullptr);
      Id tok = g.gather(bind("embed"), tokens,
                        static_cast<T>(std::sqrt(static_cast<double>(d))));
      std::vector<int32_t> positions(rows, static_cast<int32_t>(length_));
      Id x = g.add(tok, g.gather(bind("pos"), positions, T(1)));
      std::vector<uint8_t> self_mask(rows * t, 1);
      for (size_t l = 0; l < layers_.size(); ++l) {
        Layer &layer = layers_[l];
        std::string p = "dec." + std::to_string(l);
        const std::string sp = p + ".self";
        Id q = g.linear(x, bind(sp + ".wq"), bind(sp + ".bq"));
        const Matrix<T> &k_new = g.value(g.linear(x, bind(sp + ".wk"), bind(sp + ".bk")));
        const Matrix<T> &v_new = g.value(g.linear(x, bind(sp + ".wv"), bind(sp + ".bv")));
        layer.self_k = append_rows(layer.self_k, k_new, rows, length_);
        layer.self_v = append_rows(layer.self_v, v_new, rows, length_);
        AttentionShape self_shape{rows, 1, t, model_.config_.n_heads, self_mask, false};
        Id a = g.attention(q, g.constant(layer.self_k), g.constant(layer.self_v), self_shape);
        a = g.linear(a, bind(sp + ".wo"), bind(sp + ".bo"));
        x = g.layer_norm(g.add(x, a), bind(p + ".ln1.g"), bind(p + ".ln1.b"));

        const std::string cp = p + ".cross";
        Id cq = g.linear(x, bind(cp + ".wq"), bind(cp + ".bq"));
        AttentionShape cross_shape{rows, 1, state_.len, model_.config_.n_heads,
                                   state_.src_mask, false};
        Id c = g.attention(cq, g.constant(layer.cross_k), g.constant(layer.cross_v),
                           cross_shape);
        c = g.linear(c, bind(cp + ".wo"), bind(cp + ".bo"));
        x = g.layer_norm(g.add(x, c), bind(p + ".ln2.g"), bind(p + ".ln2.b"));

        Id f = g.relu(g.linear(x, bind(p + ".ffn.w1"), bind(p + ".ffn.b1")));
        f = g.linear(f, bind(p + ".ffn.w2"), bind(p + ".ffn.b2"));
        x = g.layer_norm(g.add(x, f), bind(p + ".ln3.g"), bind(p + ".ln3.b"));
      }
      length_ = t;
      const Matrix<T> &hidden = g.value(x);
      std::vector<std::vector<T>> out(rows);
      for (size_t r = 0; r < rows; ++r) out[r] = model_.logprobs_of(hidden.row(r));
      return out;
    }

   private:
    struct Layer {
      Matrix<T> self_k, self_v, cross_k, cross_v;
    };

    // (rows * len) x d cache plus one new row per sequence.
    static Matrix<T> append_rows(const Matrix<T> &cache, const Matrix<T> &fresh, size_t rows,
                                 size_t len) {
      const size_t d = fresh.cols();
      Matrix<T> out(rows * (len + 1), d);
      for (size_t r = 0; r < rows; ++r) {
        if (len > 0) {
          std::copy(cache.row(r * len), cache.row(r * len) + len * d,
                    out.row(r * (len + 1)));
        }
        std::copy(fresh.row(r), fresh.row(r) + d, out.row(r * (len + 1) + len));
      }
      return out;
    }

    const Transformer &model_;
    const EncoderState<T> &state_;
    std::vector<Layer> layers_;
    size_t length_ = 0;
  };

  // Lowest index among the maxima.
  static TokenId argmax(const std::vector<T> &values) {
    size_t best = 0;
    for (size_t i = 1; i < values.size(); ++i) {
      if (values[i] > values[best]) best = i;
    }
    return static_cast<TokenId>(best);
  }

 private:
  using Id = typename Graph<T>::Id;

  // Binds parameters to graph leaves on first use.
  class Binder {
   public:
    Binder(Graph<T> &g, const Parameters<T> &params, Parameters<T> *grads)
        : g_(g), params_(params), grads_(grads) {}
    Id operator()(const std::string &name) {
      auto it = ids_.find(name);
      if (it != ids_.end()) return it->second;
      Matrix<T> *sink = grads_ ? &grads_->at(name) : nullptr;
      Id id = g_.parameter(params_.at(name), sink);
      ids_.emplace(name, id);
      return id;
    }

   private:
    Graph<T> &g_;
    const Parameters<T> &params_;
    Parameters<T> *grads_;
    std::map<std::string, Id> ids_;
  };

  Matrix<T> decoder_hidden(const EncoderState<T> &state, std::span<const TokenId> prefix,
                           std::span<const uint8_t> mask, size_t len) const {
    check_ids(prefix, len);
    Graph<T> g(false);
    Binder bind(g, params_, nullptr);
    Id memory = g.constant(state.c);
    Id h = decoder(g, bind, memory, state.src_mask, state.rows, state.len, prefix, mask,
                   len, nullptr);
    return g.value(h);
  }

  std::vector<T> logprobs_of(const T *hrow) const {
    const Matrix<T> &embed = params_.at("embed");
    const Matrix<T> &bias = params_.at("out_bias");
    const size_t d = config_.d_model;
    std::vector<T> logits(config_.vocab_size);
    for (size_t v = 0; v < config_.vocab_size; ++v) {
      const T *erow = embed.row(v);
      T s = bias[v];
      for (size_t c = 0; c < d; ++c) s += hrow[c] * erow[c];
      logits[v] = s;
    }
    T max_logit = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (T v : logits) sum += std::exp(static_cast<double>(v - max_logit));
    T log_z = max_logit + static_cast<T>(std::log(sum));
    for (T &v : logits) v -= log_z;
    return logits;
  }

  void check_ids(std::span<const TokenId> ids, size_t len) const {
    if (len > config_.max_len) {
      throw InputError("sequence of length " + std::to_string(len) +
                       " exceeds max_len " + std::to_string(config_.max_len));
    }
    for (TokenId id : ids) {
      if (id < 0 || static_cast<size_t>(id) >= config_.vocab_size) {
        throw InputError("token id " + std::to_string(id) + " outside the vocabulary");
      }
    }
  }

  Id drop(Graph<T> &g, Id x, std::mt19937_64 *rng) const {
    if (!rng || config_.dropout <= 0.0) return x;
    return g.dropout(x, static_cast<T>(config_.dropout), *rng);
  }

  Id embed(Graph<T> &g, Binder &bind, std::span<const TokenId> ids, size_t rows,
           size_t len, std::mt19937_64 *rng) const {
    Id tok = g.gather(bind("embed"), ids,
                      static_cast<T>(std::sqrt(static_cast<double>(config_.d_model))));
    std::vector<int32_t> positions(rows * len);
    for (size_t r = 0; r < rows; ++r) {
      for (size_t i = 0; i < len; ++i) positions[r * len + i] = static_cast<int32_t>(i);
    }
    Id pos = g.gather(bind("pos"), positions, T(1));
    return drop(g, g.add(tok, pos), rng);
  }

  Id attention_block(Graph<T> &g, Binder &bind, const std::string &prefix, Id xq, Id xkv,
                     const AttentionShape &shape) const {
    Id q = g.linear(xq, bind(prefix + ".wq"), bind(prefix + ".bq"));
    Id k = g.linear(xkv, bind(prefix + ".wk"), bind(prefix + ".bk"));
    Id v = g.linear(xkv, bind(prefix + ".wv"), bind(prefix + ".bv"));
    Id a = g.attention(q, k, v, shape);
    return g.linear(a, bind(prefix + ".wo"), bind(prefix + ".bo"));
  }

  Id ffn_block(Graph<T> &g, Binder &bind, const std::string &prefix, Id x,
               std::mt19937_64 *rng) const {
    Id h = g.relu(g.linear(x, bind(prefix + ".w1"), bind(prefix + ".b1")));
    h = drop(g, h, rng);
    return g.linear(h, bind(prefix + ".w2"), bind(prefix + ".b2"));
  }

  Id residual_norm(Graph<T> &g, Binder &bind, const std::string &prefix, Id x, Id sub,
                   std::mt19937_64 *rng) const {
    Id sum = g.add(x, drop(g, sub, rng));
    return g.layer_norm(sum, bind(prefix + ".g"), bind(prefix + ".b"));
  }

  Id encoder(Graph<T> &g, Binder &bind, std::span<const TokenId> src,
             std::span<const uint8_t> mask, size_t rows, size_t len,
             std::mt19937_64 *rng) const {
    Id x = embed(g, bind, src, rows, len, rng);
    AttentionShape shape{rows, len, len, config_.n_heads, mask, false};
    for (size_t l = 0; l < config_.n_enc_layers; ++l) {
      std::string p = "enc." + std::to_string(l);
      Id a = attention_block(g, bind, p + ".self", x, x, shape);
      x = residual_norm(g, bind, p + ".ln1", x, a, rng);
      Id f = ffn_block(g, bind, p + ".ffn", x, rng);
      x = residual_norm(g, bind, p + ".ln2", x, f, rng);
    }
    return x;
  }

  Id decoder(Graph<T> &g, Binder &bind, Id memory, std::span<const uint8_t> src_mask,
             size_t rows, size_t src_len, std::span<const TokenId> tgt,
             std::span<const uint8_t> tgt_mask, size_t tgt_len,
             std::mt19937_64 *rng) const {
    Id x = embed(g, bind, tgt, rows, tgt_len, rng);
    AttentionShape self_shape{rows, tgt_len, tgt_len, config_.n_heads, tgt_mask, true};
    AttentionShape cross_shape{rows, tgt_len, src_len, config_.n_heads, src_mask, false};
    for (size_t l = 0; l < config_.n_dec_layers; ++l) {
      std::string p = "dec." + std::to_string(l);
      Id a = attention_block(g, bind, p + ".self", x, x, self_shape);
      x = residual_norm(g, bind, p + ".ln1", x, a, rng);
      Id c = attention_block(g, bind, p + ".cross", x, memory, cross_shape);
      x = residual_norm(g, bind, p + ".ln2", x, c, rng);
      Id f = ffn_block(g, bind, p + ".ffn", x, rng);
      x = residual_norm(g, bind, p + ".ln3", x, f, rng);
    }
    return x;
  }

  T forward_loss(Graph<T> &g, const Batch &batch, Parameters<T> *grads,
                 std::mt19937_64 *rng) const {
    if (batch.rows == 0 || batch.tgt_len < 2) throw InputError("empty batch");
    check_ids(batch.src, batch.src_len);
    check_ids(batch.tgt, batch.tgt_len);
    const size_t rows = batch.rows;
    const size_t in_len = batch.tgt_len - 1;
    std::vector<TokenId> tgt_in(rows * in_len);
    std::vector<uint8_t> in_mask(rows * in_len);
    std::vector<int32_t> targets(rows * in_len);
    std::vector<uint8_t> active(rows * in_len);
    for (size_t r = 0; r < rows; ++r) {
      for (size_t i = 0; i < in_len; ++i) {
        tgt_in[r * in_len + i] = batch.tgt_at(r, i);
        in_mask[r * in_len + i] = batch.tgt_mask[r * batch.tgt_len + i];
        targets[r * in_len + i] = batch.tgt_at(r, i + 1);
        active[r * in_len + i] = batch.tgt_mask[r * batch.tgt_len + i + 1];
      }
    }
    Binder bind(g, params_, grads);
    Id memory = encoder(g, bind, batch.src, batch.src_mask, rows, batch.src_len, rng);
    Id h = decoder(g, bind, memory, batch.src_mask, rows, batch.src_len, tgt_in, in_mask,
                   in_len, rng);
    Id logits = g.linear_transposed(h, bind("embed"), bind("out_bias"));
    last_loss_id_ = g.cross_entropy(logits, targets, active,
                                    static_cast<T>(config_.label_smoothing));
    return g.value(last_loss_id_)[0];
  }

  ModelConfig config_;
  const Parameters<T> &params_;
  mutable Id last_loss_id_ = 0;
};

// Encodes `src_text` behind the control token for `tgt`, decodes greedily and
// detokenizes.
template <typename T>
std::vector<std::string> greedy_decode_batch(const Transformer<T> &model,
                                             const SubwordModel &vocab,
                                             const std::vector<std::string> &src_texts,
                                             const std::string &tgt, size_t max_out) {
  TokenId control = vocab.control_id(tgt);
  std::vector<TokenSequence> sources;
  sources.reserve(src_texts.size());
  for (const auto &text : src_texts) {
    TokenSequence ids{control};
    for (TokenId id : vocab.encode(text)) ids.push_back(id);
    ids.push_back(SubwordModel::kEos);
    sources.push_back(std::move(ids));
  }
  std::vector<std::string> out;
  out.reserve(src_texts.size());
  for (const auto &ids : model.greedy(sources, max_out)) out.push_back(vocab.decode(ids));
  return out;
}

template <typename T>
std::string greedy_decode(const Transformer<T> &model, const SubwordModel &vocab,
                          const std::string &src_text, const std::string &tgt,
                          size_t max_out) {
  return greedy_decode_batch(model, vocab, {src_text}, tgt, max_out).front();
}

}  // namespace nmt
