#pragma once

// Tape-based reverse-mode differentiation over matrix-valued nodes. A Graph
// records one forward pass; backward() walks the tape in reverse and
// accumulates gradients into the sinks attached to parameter leaves.

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "nmt/tensor.hpp"

namespace nmt {

// Geometry of a batched multi-head attention call. Queries are laid out as
// (batch * q_len) rows, keys and values as (batch * k_len) rows.
struct AttentionShape {
  size_t batch = 0;
  size_t q_len = 0;
  size_t k_len = 0;
  size_t heads = 1;
  std::span<const uint8_t> key_mask;  // batch x k_len, 1 = attendable
  bool causal = false;
};

template <typename T>
class Graph {
 public:
  using Id = uint32_t;

  // With record = false no backward closures or caches are kept.
  explicit Graph(bool record = true) : record_(record) {}

  const Matrix<T> &value(Id id) const {
    const Node &node = nodes_[id];
    return node.view ? *node.view : node.own;
  }
  const Matrix<T> &grad(Id id) const { return nodes_[id].grad; }
  size_t size() const { return nodes_.size(); }

  Id constant(Matrix<T> value) { return push(std::move(value), false); }

  // Leaf bound to external storage; gradients are added into `sink`.
  Id parameter(const Matrix<T> &value, Matrix<T> *sink) {
    Node node;
    node.view = &value;
    node.needs_grad = record_ && sink != nullptr;
    node.sink = sink;
    nodes_.push_back(std::move(node));
    return static_cast<Id>(nodes_.size() - 1);
  }

  // x[n x k] * w[k x m] + bias[1 x m]
  Id linear(Id x, Id w, Id bias) {
    const Matrix<T> &xv = value(x);
    const Matrix<T> &wv = value(w);
    const Matrix<T> &bv = value(bias);
    Matrix<T> out(xv.rows(), wv.cols());
    for (size_t r = 0; r < out.rows(); ++r) {
      std::copy(bv.data(), bv.data() + bv.cols(), out.row(r));
    }
    kernels::matmul_acc(xv.data(), wv.data(), out.data(), xv.rows(), xv.cols(),
                        wv.cols());
    Id id = push(std::move(out), needs(x) || needs(w) || needs(bias));
    if (recording(id)) {
      backward_[id] = [x, w, bias](Graph &g, Id self) {
        const Matrix<T> &dy = g.nodes_[self].grad;
        if (g.needs(x)) {
          Matrix<T> &dx = g.grad_of(x);
          kernels::matmul_nt_acc(dy, g.value(w), dx);
        }
        if (g.needs(w)) {
          const Matrix<T> &xv = g.value(x);
          kernels::matmul_tn_acc(xv.data(), dy.data(), g.grad_of(w).data(),
                                 xv.rows(), xv.cols(), dy.cols());
        }
        if (g.needs(bias)) {
          Matrix<T> &db = g.grad_of(bias);
          for (size_t r = 0; r < dy.rows(); ++r) {
            const T *row = dy.row(r);
            for (size_t c = 0; c < dy.cols(); ++c) db[c] += row[c];
          }
        }
      };
    }
    return id;
  }

  // a[n x k] * b[m x k]^T + bias[1 x m]; used for the tied output projection.
  Id linear_transposed(Id a, Id b, Id bias) {
    const Matrix<T> &av = value(a);
    const Matrix<T> &bv = value(b);
    const Matrix<T> &biasv = value(bias);
    Matrix<T> out(av.rows(), bv.rows());
    for (size_t r = 0; r < out.rows(); ++r) {
      std::copy(biasv.data(), biasv.data() + biasv.cols(), out.row(r));
    }
    kernels::matmul_nt_acc(av, bv, out);
    Id id = push(std::move(out), needs(a) || needs(b) || needs(bias));
    if (recording(id)) {
      backward_[id] = [a, b, bias](Graph &g, Id self) {
        const Matrix<T> &dy = g.nodes_[self].grad;
        if (g.needs(a)) {
          const Matrix<T> &bv = g.value(b);
          kernels::matmul_acc(dy.data(), bv.data(), g.grad_of(a).data(), dy.rows(),
                              dy.cols(), bv.cols());
        }
        if (g.needs(b)) {
          const Matrix<T> &av = g.value(a);
          kernels::matmul_tn_acc(dy.data(), av.data(), g.grad_of(b).data(),
                                 dy.rows(), dy.cols(), av.cols());
        }
        if (g.needs(bias)) {
          Matrix<T> &db = g.grad_of(bias);
          for (size_t r = 0; r < dy.rows(); ++r) {
            const T *row = dy.row(r);
            for (size_t c = 0; c < dy.cols(); ++c) db[c] += row[c];
          }
        }
      };
    }
    return id;
  }

  Id add(Id a, Id b) {
    Matrix<T> out = value(a);
    kernels::add_inplace<T>(out.values(), value(b).values());
    Id id = push(std::move(out), needs(a) || needs(b));
    if (recording(id)) {
      backward_[id] = [a, b](Graph &g, Id self) {
        const Matrix<T> &dy = g.nodes_[self].grad;
        if (g.needs(a)) kernels::add_inplace<T>(g.grad_of(a).values(), dy.values());
        if (g.needs(b)) kernels::add_inplace<T>(g.grad_of(b).values(), dy.values());
      };
    }
    return id;
  }

  Id relu(Id a) {
    Matrix<T> out = value(a);
    for (T &v : out.values()) v = v > T(0) ? v : T(0);
    Id id = push(std::move(out), needs(a));
    if (recording(id)) {
      backward_[id] = [a](Graph &g, Id self) {
        const Matrix<T> &dy = g.nodes_[self].grad;
        const Matrix<T> &y = g.value(self);
        Matrix<T> &dx = g.grad_of(a);
        for (size_t i = 0; i < dy.size(); ++i) {
          if (y[i] > T(0)) dx[i] += dy[i];
        }
      };
    }
    return id;
  }

  // Row-wise layer normalization with gain and bias rows.
  Id layer_norm(Id x, Id gain, Id bias, T eps = T(1e-5)) {
    const Matrix<T> &xv = value(x);
    const Matrix<T> &gv = value(gain);
    const Matrix<T> &bv = value(bias);
    const size_t n = xv.rows();
    const size_t d = xv.cols();
    Matrix<T> out(n, d);
    Matrix<T> normalized(n, d);
    std::vector<T> inv_std(n);
    for (size_t r = 0; r < n; ++r) {
      const T *row = xv.row(r);
      T mean = 0;
      for (size_t c = 0; c < d; ++c) mean += row[c];
      mean /= static_cast<T>(d);
      T var = 0;
      for (size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
      var /= static_cast<T>(d);
      T inv = T(1) / std::sqrt(var + eps);
      inv_std[r] = inv;
      for (size_t c = 0; c < d; ++c) {
        T xhat = (row[c] - mean) * inv;
        normalized(r, c) = xhat;
        out(r, c) = gv[c] * xhat + bv[c];
      }
    }
    Id id = push(std::move(out), needs(x) || needs(gain) || needs(bias));
    if (recording(id)) {
      backward_[id] = [x, gain, bias, normalized = std::move(normalized),
                       inv_std = std::move(inv_std)](Graph &g, Id self) {
        const Matrix<T> &dy = g.nodes_[self].grad;
        const Matrix<T> &gv = g.value(gain);
        const size_t n = dy.rows();
        const size_t d = dy.cols();
        if (g.needs(gain) || g.needs(bias)) {
          Matrix<T> *dg = g.needs(gain) ? &g.grad_of(gain) : nullptr;
          Matrix<T> *db = g.needs(bias) ? &g.grad_of(bias) : nullptr;
          for (size_t r = 0; r < n; ++r) {
            for (size_t c = 0; c < d; ++c) {
              if (dg) (*dg)[c] += dy(r, c) * normalized(r, c);
              if (db) (*db)[c] += dy(r, c);
            }
          }
        }
        if (g.needs(x)) {
          Matrix<T> &dx = g.grad_of(x);
          std::vector<T> dxhat(d);
          for (size_t r = 0; r < n; ++r) {
            T mean_dxhat = 0;
            T mean_dxhat_xhat = 0;
            for (size_t c = 0; c < d; ++c) {
              dxhat[c] = dy(r, c) * gv[c];
              mean_dxhat += dxhat[c];
              mean_dxhat_xhat += dxhat[c] * normalized(r, c);
            }
            mean_dxhat /= static_cast<T>(d);
            mean_dxhat_xhat /= static_cast<T>(d);
            for (size_t c = 0; c < d; ++c) {
              dx(r, c) += inv_std[r] *
                          (dxhat[c] - mean_dxhat - normalized(r, c) * mean_dxhat_xhat);
            }
          }
        }
      };
    }
    return id;
  }

  // Gathers rows of `table` for `ids`, multiplied by `scale`.
  Id gather(Id table, std::span<const int32_t> ids, T scale) {
    const Matrix<T> &tv = value(table);
    Matrix<T> out(ids.size(), tv.cols());
    for (size_t r = 0; r < ids.size(); ++r) {
      const T *src = tv.row(static_cast<size_t>(ids[r]));
      T *dst = out.row(r);
      for (size_t c = 0; c < tv.cols(); ++c) dst[c] = scale * src[c];
    }
    Id id = push(std::move(out), needs(table));
    if (recording(id)) {
      backward_[id] = [table, rows = std::vector<int32_t>(ids.begin(), ids.end()),
                       scale](Graph &g, Id self) {
        const Matrix<T> &dy = g.nodes_[self].grad;
        Matrix<T> &dt = g.grad_of(table);
        for (size_t r = 0; r < rows.size(); ++r) {
          T *dst = dt.row(static_cast<size_t>(rows[r]));
          const T *src = dy.row(r);
          for (size_t c = 0; c < dy.cols(); ++c) dst[c] += scale * src[c];
        }
      };
    }
    return id;
  }

  // Inverted dropout; identity when rate == 0.
  Id dropout(Id a, T rate, std::mt19937_64 &rng) {
    if (rate <= T(0)) return a;
    const T keep_scale = T(1) / (T(1) - rate);
    Matrix<T> mask(value(a).rows(), value(a).cols());
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (T &m : mask.values()) {
      m = uniform(rng) < static_cast<double>(rate) ? T(0) : keep_scale;
    }
    Matrix<T> out = value(a);
    for (size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    Id id = push(std::move(out), needs(a));
    if (recording(id)) {
      backward_[id] = [a, mask = std::move(mask)](Graph &g, Id self) {
        const Matrix<T> &dy = g.nodes_[self].grad;
        Matrix<T> &dx = g.grad_of(a);
        for (size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * mask[i];
      };
    }
    return id;
  }

  // Scaled dot-product attention over `heads` slices of the model dimension.
  // Only attendable keys enter each softmax, so masked content never
  // influences the result.
  Id attention(Id q, Id k, Id v, const AttentionShape &shape) {
    const Matrix<T> &qv = value(q);
    const Matrix<T> &kv = value(k);
    const Matrix<T> &vv = value(v);
    const size_t d = qv.cols();
    const size_t dh = d / shape.heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const size_t sq = shape.q_len;
    const size_t sk = shape.k_len;
    Matrix<T> out(qv.rows(), d);
    // probs[b][h][i][j]
    std::vector<T> probs(shape.batch * shape.heads * sq * sk, T(0));
    std::vector<T> scores(sk);
    for (size_t b = 0; b < shape.batch; ++b) {
      const uint8_t *mask = shape.key_mask.data() + b * sk;
      for (size_t h = 0; h < shape.heads; ++h) {
        const size_t off = h * dh;
        for (size_t i = 0; i < sq; ++i) {
          const T *qrow = qv.row(b * sq + i) + off;
          size_t limit = shape.causal ? std::min(sk, i + 1) : sk;
          T max_score = -std::numeric_limits<T>::infinity();
          bool any = false;
          for (size_t j = 0; j < limit; ++j) {
            if (!mask[j]) continue;
            const T *krow = kv.row(b * sk + j) + off;
            T s = 0;
            for (size_t c = 0; c < dh; ++c) s += qrow[c] * krow[c];
            s *= scale;
            scores[j] = s;
            max_score = std::max(max_score, s);
            any = true;
          }
          if (!any) continue;
          T sum = 0;
          T *p = probs.data() + ((b * shape.heads + h) * sq + i) * sk;
          for (size_t j = 0; j < limit; ++j) {
            if (!mask[j]) continue;
            p[j] = std::exp(scores[j] - max_score);
            sum += p[j];
          }
          T *orow = out.row(b * sq + i) + off;
          for (size_t j = 0; j < limit; ++j) {
            if (!mask[j]) continue;
            p[j] /= sum;
            const T *vrow = vv.row(b * sk + j) + off;
            for (size_t c = 0; c < dh; ++c) orow[c] += p[j] * vrow[c];
          }
        }
      }
    }
    Id id = push(std::move(out), needs(q) || needs(k) || needs(v));
    if (recording(id)) {
      std::vector<uint8_t> mask_copy(shape.key_mask.begin(), shape.key_mask.end());
      AttentionShape saved = shape;
      backward_[id] = [q, k, v, saved, mask_copy = std::move(mask_copy),
                       probs = std::move(probs)](Graph &g, Id self) {
        const Matrix<T> &dy = g.nodes_[self].grad;
        const Matrix<T> &qv = g.value(q);
        const Matrix<T> &kv = g.value(k);
        const Matrix<T> &vv = g.value(v);
        const size_t d = qv.cols();
        const size_t dh = d / saved.heads;
        const T scale = T(1) / std::sqrt(static_cast<T>(dh));
        const size_t sq = saved.q_len;
        const size_t sk = saved.k_len;
        Matrix<T> &dq = g.grad_of(q);
        Matrix<T> &dk = g.grad_of(k);
        Matrix<T> &dv = g.grad_of(v);
        std::vector<T> dp(sk);
        for (size_t b = 0; b < saved.batch; ++b) {
          const uint8_t *mask = mask_copy.data() + b * sk;
          for (size_t h = 0; h < saved.heads; ++h) {
            const size_t off = h * dh;
            for (size_t i = 0; i < sq; ++i) {
              const T *p = probs.data() + ((b * saved.heads + h) * sq + i) * sk;
              const T *dyrow = dy.row(b * sq + i) + off;
              size_t limit = saved.causal ? std::min(sk, i + 1) : sk;
              T dot = 0;
              for (size_t j = 0; j < limit; ++j) {
                if (!mask[j]) continue;
                const T *vrow = vv.row(b * sk + j) + off;
                T s = 0;
                for (size_t c = 0; c < dh; ++c) s += dyrow[c] * vrow[c];
                dp[j] = s;
                dot += p[j] * s;
                T *dvrow = dv.row(b * sk + j) + off;
                for (size_t c = 0; c < dh; ++c) dvrow[c] += p[j] * dyrow[c];
              }
              const T *qrow = qv.row(b * sq + i) + off;
              T *dqrow = dq.row(b * sq + i) + off;
              for (size_t j = 0; j < limit; ++j) {
                if (!mask[j]) continue;
                T ds = p[j] * (dp[j] - dot) * scale;
                const T *krow = kv.row(b * sk + j) + off;
                T *dkrow = dk.row(b * sk + j) + off;
                for (size_t c = 0; c < dh; ++c) {
                  dqrow[c] += ds * krow[c];
                  dkrow[c] += ds * qrow[c];
                }
              }
            }
          }
        }
      };
    }
    return id;
  }

  // Mean label-smoothed cross-entropy over rows with weight 1; rows with
  // weight 0 are ignored. Returns a 1 x 1 node.
  Id cross_entropy(Id logits, std::span<const int32_t> targets,
                   std::span<const uint8_t> active, T smoothing) {
    const Matrix<T> &lv = value(logits);
    const size_t n = lv.rows();
    const size_t vocab = lv.cols();
    Matrix<T> probs(n, vocab);
    double total = 0.0;
    size_t count = 0;
    const T uniform = smoothing / static_cast<T>(vocab);
    for (size_t r = 0; r < n; ++r) {
      if (!active[r]) continue;
      ++count;
      const T *row = lv.row(r);
      T max_logit = *std::max_element(row, row + vocab);
      T sum = 0;
      T mean_logit = 0;
      for (size_t c = 0; c < vocab; ++c) {
        T e = std::exp(row[c] - max_logit);
        probs(r, c) = e;
        sum += e;
        mean_logit += row[c];
      }
      mean_logit /= static_cast<T>(vocab);
      T log_z = max_logit + std::log(sum);
      for (size_t c = 0; c < vocab; ++c) probs(r, c) /= sum;
      T nll = log_z - row[static_cast<size_t>(targets[r])];
      T smooth = log_z - mean_logit;
      total += static_cast<double>((T(1) - smoothing) * nll + smoothing * smooth);
    }
    Matrix<T> out(1, 1, count ? static_cast<T>(total / static_cast<double>(count)) : T(0));
    Id id = push(std::move(out), needs(logits));
    if (recording(id)) {
      backward_[id] = [logits, probs = std::move(probs),
                       rows = std::vector<int32_t>(targets.begin(), targets.end()),
                       act = std::vector<uint8_t>(active.begin(), active.end()),
                       count, smoothing, uniform](Graph &g, Id self) {
        if (count == 0) return;
        const T seed = g.nodes_[self].grad[0] / static_cast<T>(count);
        Matrix<T> &dl = g.grad_of(logits);
        for (size_t r = 0; r < rows.size(); ++r) {
          if (!act[r]) continue;
          T *drow = dl.row(r);
          const T *prow = probs.row(r);
          for (size_t c = 0; c < probs.cols(); ++c) {
            drow[c] += seed * (prow[c] - uniform);
          }
          drow[static_cast<size_t>(rows[r])] -= seed * (T(1) - smoothing);
        }
      };
    }
    return id;
  }

  // Back-propagates from a 1 x 1 node seeded with `seed`, then flushes leaf
  // gradients into their sinks.
  void backward(Id root, T seed = T(1)) {
    if (!record_) return;
    grad_of(root)[0] += seed;
    for (size_t i = nodes_.size(); i-- > 0;) {
      Id id = static_cast<Id>(i);
      if (!nodes_[i].needs_grad || nodes_[i].grad.empty()) continue;
      auto it = backward_.find(id);
      if (it != backward_.end()) it->second(*this, id);
    }
    for (Node &node : nodes_) {
      if (node.sink && !node.grad.empty()) {
        kernels::add_inplace<T>(node.sink->values(), node.grad.values());
      }
    }
  }

 private:
  struct Node {
    Matrix<T> own;
    const Matrix<T> *view = nullptr;
    Matrix<T> grad;
    Matrix<T> *sink = nullptr;
    bool needs_grad = false;
  };

  Id push(Matrix<T> value, bool needs_grad) {
    Node node;
    node.own = std::move(value);
    node.needs_grad = record_ && needs_grad;
    nodes_.push_back(std::move(node));
    return static_cast<Id>(nodes_.size() - 1);
  }

  bool needs(Id id) const { return nodes_[id].needs_grad; }
  bool recording(Id id) const { return record_ && nodes_[id].needs_grad; }

  Matrix<T> &grad_of(Id id) {
    Node &node = nodes_[id];
    if (node.grad.empty()) {
      const Matrix<T> &v = node.view ? *node.view : node.own;
      node.grad = Matrix<T>(v.rows(), v.cols());
    }
    return node.grad;
  }

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<Id, std::function<void(Graph &, Id)>> backward_;
};

}  // namespace nmt
