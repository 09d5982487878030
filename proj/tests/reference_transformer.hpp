#pragma once

// Straight-line double-precision forward pass, one sequence at a time, written
// without the autograd tape. Used to cross-check the production loss.

#include <cmath>
#include <string>
#include <vector>

#include "nmt/transformer.hpp"

namespace nmt::testing {

using Mat = std::vector<std::vector<double>>;

class ReferenceTransformer {
 public:
  ReferenceTransformer(const ModelConfig &config, const Parameters<double> &params)
      : config_(config), p_(params) {}

  // Sum of per-token label-smoothed NLL and the number of scored tokens.
  std::pair<double, size_t> sequence_loss(const TokenSequence &src,
                                          const TokenSequence &tgt) const {
    Mat memory = encode(src);
    TokenSequence input(tgt.begin(), tgt.end() - 1);
    Mat h = decode(memory, input);
    double total = 0.0;
    const double eps = config_.label_smoothing;
    const size_t vocab = config_.vocab_size;
    for (size_t t = 0; t < input.size(); ++t) {
      std::vector<double> logits(vocab);
      for (size_t v = 0; v < vocab; ++v) {
        double s = get("out_bias", 0, v);
        for (size_t c = 0; c < config_.d_model; ++c) s += h[t][c] * get("embed", v, c);
        logits[v] = s;
      }
      double max_logit = logits[0];
      for (double l : logits) max_logit = std::max(max_logit, l);
      double z = 0.0;
      for (double l : logits) z += std::exp(l - max_logit);
      double log_z = max_logit + std::log(z);
      double nll = log_z - logits[static_cast<size_t>(tgt[t + 1])];
      double smooth = 0.0;
      for (double l : logits) smooth += (log_z - l) / static_cast<double>(vocab);
      total += (1.0 - eps) * nll + eps * smooth;
    }
    return {total, input.size()};
  }

  double batch_loss(const std::vector<ParallelExample> &examples) const {
    double total = 0.0;
    size_t count = 0;
    for (const auto &ex : examples) {
      auto [sum, n] = sequence_loss(ex.src_ids, ex.tgt_ids);
      total += sum;
      count += n;
    }
    return total / static_cast<double>(count);
  }

 private:
  double get(const std::string &name, size_t r, size_t c) const { return p_.at(name)(r, c); }

  Mat embed(const TokenSequence &ids) const {
    Mat x(ids.size(), std::vector<double>(config_.d_model));
    double scale = std::sqrt(static_cast<double>(config_.d_model));
    for (size_t i = 0; i < ids.size(); ++i) {
      for (size_t c = 0; c < config_.d_model; ++c) {
        x[i][c] = scale * get("embed", static_cast<size_t>(ids[i]), c) + get("pos", i, c);
      }
    }
    return x;
  }

  Mat affine(const Mat &x, const std::string &w, const std::string &b) const {
    const auto &wm = p_.at(w);
    Mat y(x.size(), std::vector<double>(wm.cols()));
    for (size_t i = 0; i < x.size(); ++i) {
      for (size_t j = 0; j < wm.cols(); ++j) {
        double s = get(b, 0, j);
        for (size_t k = 0; k < wm.rows(); ++k) s += x[i][k] * wm(k, j);
        y[i][j] = s;
      }
    }
    return y;
  }

  Mat attend(const Mat &xq, const Mat &xkv, const std::string &prefix, bool causal) const {
    Mat q = affine(xq, prefix + ".wq", prefix + ".bq");
    Mat k = affine(xkv, prefix + ".wk", prefix + ".bk");
    Mat v = affine(xkv, prefix + ".wv", prefix + ".bv");
    const size_t heads = config_.n_heads;
    const size_t dh = config_.d_model / heads;
    Mat out(xq.size(), std::vector<double>(config_.d_model, 0.0));
    for (size_t h = 0; h < heads; ++h) {
      for (size_t i = 0; i < xq.size(); ++i) {
        size_t limit = causal ? i + 1 : xkv.size();
        std::vector<double> score(limit);
        double max_score = -1e300;
        for (size_t j = 0; j < limit; ++j) {
          double s = 0.0;
          for (size_t c = 0; c < dh; ++c) s += q[i][h * dh + c] * k[j][h * dh + c];
          score[j] = s / std::sqrt(static_cast<double>(dh));
          max_score = std::max(max_score, score[j]);
        }
        double z = 0.0;
        for (double &s : score) z += (s = std::exp(s - max_score));
        for (size_t j = 0; j < limit; ++j) {
          for (size_t c = 0; c < dh; ++c) out[i][h * dh + c] += score[j] / z * v[j][h * dh + c];
        }
      }
    }
    return affine(out, prefix + ".wo", prefix + ".bo");
  }

  Mat add_norm(const Mat &x, const Mat &sub, const std::string &prefix) const {
    Mat y = x;
    for (size_t i = 0; i < y.size(); ++i) {
      double mean = 0.0;
      for (size_t c = 0; c < y[i].size(); ++c) mean += (y[i][c] += sub[i][c]);
      mean /= static_cast<double>(y[i].size());
      double var = 0.0;
      for (double v : y[i]) var += (v - mean) * (v - mean);
      var /= static_cast<double>(y[i].size());
      for (size_t c = 0; c < y[i].size(); ++c) {
        y[i][c] = get(prefix + ".g", 0, c) * (y[i][c] - mean) / std::sqrt(var + 1e-5) +
                  get(prefix + ".b", 0, c);
      }
    }
    return y;
  }

  Mat feed_forward(const Mat &x, const std::string &prefix) const {
    Mat h = affine(x, prefix + ".w1", prefix + ".b1");
    for (auto &row : h) {
      for (double &v : row) v = std::max(v, 0.0);
    }
    return affine(h, prefix + ".w2", prefix + ".b2");
  }

  Mat encode(const TokenSequence &src) const {
    Mat x = embed(src);
    for (size_t l = 0; l < config_.n_enc_layers; ++l) {
      std::string p = "enc." + std::to_string(l);
      x = add_norm(x, attend(x, x, p + ".self", false), p + ".ln1");
      x = add_norm(x, feed_forward(x, p + ".ffn"), p + ".ln2");
    }
    return x;
  }

  Mat decode(const Mat &memory, const TokenSequence &input) const {
    Mat x = embed(input);
    for (size_t l = 0; l < config_.n_dec_layers; ++l) {
      std::string p = "dec." + std::to_string(l);
      x = add_norm(x, attend(x, x, p + ".self", true), p + ".ln1");
      x = add_norm(x, attend(x, memory, p + ".cross", false), p + ".ln2");
      x = add_norm(x, feed_forward(x, p + ".ffn"), p + ".ln3");
    }
    return x;
  }

  ModelConfig config_;
  const Parameters<double> &p_;
};

}  // namespace nmt::testing
