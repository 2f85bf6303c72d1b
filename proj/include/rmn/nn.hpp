#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "param_store.hpp"
#include "tensor.hpp"

namespace rmn {

// Parameter names follow "block/<name>/<weight>" via the prefix argument.

struct Linear {
  Tensor w;  // [d_in x d_out]
  Tensor b;  // [d_out], absent when bias = false
  bool has_bias;

  Linear(ParameterStore& ps, const std::string& prefix, std::size_t d_in, std::size_t d_out,
         bool bias = true)
      : w(ps.create(prefix + "/w", {d_in, d_out}, d_in)),
        has_bias(bias) {
    if (bias) b = ps.create(prefix + "/b", {d_out}, 0);
  }

  Tensor operator()(const Tensor& x) const {
    Tensor y = vecmat(x, w);
    return has_bias ? y + b : y;
  }

  // Batched application over the rows of X.
  Tensor rows(const Tensor& X) const {
    Tensor y = matmul(X, w);
    return has_bias ? y + b : y;
  }
};

// Fused-gate LSTM; gate order (input, forget, candidate, output) along the
// 4*d_h axis. Forget-gate bias starts at +1.
struct LstmCell {
  std::size_t d_in, d_h;
  Tensor wx;  // [d_in x 4d_h]
  Tensor wh;  // [d_h x 4d_h]
  Tensor b;   // [4d_h]

  LstmCell(ParameterStore& ps, const std::string& prefix, std::size_t d_in_, std::size_t d_h_)
      : d_in(d_in_),
        d_h(d_h_),
        wx(ps.create(prefix + "/wx", {d_in_, 4 * d_h_}, d_in_)),
        wh(ps.create(prefix + "/wh", {d_h_, 4 * d_h_}, d_h_)),
        b(ps.create(prefix + "/b", {4 * d_h_}, 0)) {
    for (std::size_t i = d_h; i < 2 * d_h; ++i) b.data()[i] = 1.0;
  }

  struct State {
    Tensor h, c;
  };

  State zero_state() const { return {Tensor({d_h}), Tensor({d_h})}; }

  State step(const Tensor& x, const State& prev) const {
    if (x.shape() != Shape{d_in})
      throw ShapeError("lstm_step: input " + shape_str(x.shape()) + ", cell expects [" +
                       std::to_string(d_in) + "]");
    if (prev.h.shape() != Shape{d_h} || prev.c.shape() != Shape{d_h})
      throw ShapeError("lstm_step: state width mismatch");
    Tensor gates = vecmat(x, wx) + vecmat(prev.h, wh) + b;
    Tensor i = sigmoid(slice(gates, 0, 0, d_h));
    Tensor f = sigmoid(slice(gates, 0, d_h, d_h));
    Tensor g = tanh(slice(gates, 0, 2 * d_h, d_h));
    Tensor o = sigmoid(slice(gates, 0, 3 * d_h, d_h));
    Tensor c = f * prev.c + i * g;
    Tensor h = o * tanh(c);
    return {h, c};
  }
};

// Forward and reverse passes with hidden size d_h/2 each; per-step outputs
// concatenated, so the encoded sequence keeps width d_h.
struct BiLstmEncoder {
  std::size_t d_h;
  LstmCell fwd, bwd;

  BiLstmEncoder(ParameterStore& ps, const std::string& prefix, std::size_t d_in, std::size_t d_h_)
      : d_h((require_even(d_h_), d_h_)),
        fwd(ps, prefix + "/fwd", d_in, d_h_ / 2),
        bwd(ps, prefix + "/bwd", d_in, d_h_ / 2) {}

  Tensor encode(const Tensor& seq) const {
    if (seq.rank() != 2 || seq.shape()[0] == 0)
      throw ShapeError("bilstm_encode: expected non-empty [N x d] sequence, got " +
                       shape_str(seq.shape()));
    const std::size_t n = seq.shape()[0];
    std::vector<Tensor> hf(n), hb(n);
    LstmCell::State s = fwd.zero_state();
    for (std::size_t t = 0; t < n; ++t) {
      s = fwd.step(reshape(slice(seq, 0, t, 1), {seq.shape()[1]}), s);
      hf[t] = s.h;
    }
    s = bwd.zero_state();
    for (std::size_t t = n; t-- > 0;) {
      s = bwd.step(reshape(slice(seq, 0, t, 1), {seq.shape()[1]}), s);
      hb[t] = s.h;
    }
    std::vector<Tensor> rows(n);
    for (std::size_t t = 0; t < n; ++t) rows[t] = concat(hf[t], hb[t], 0);
    return stack_rows(rows);
  }

 private:
  static void require_even(std::size_t d_h) {
    if (d_h == 0 || d_h % 2 != 0)
      throw ValueError("bilstm: hidden size must be positive and even, got " + std::to_string(d_h));
  }
};

// score_k = w1 . tanh(V_k W2 + q W3); weights = softmax(scores); out = weights . V.
// The query term is one projection broadcast across all K rows.
struct AdditiveAttention {
  Tensor w1;  // [d_a]
  Tensor w2;  // [d_v x d_a]
  Tensor w3;  // [d_q x d_a]

  AdditiveAttention(ParameterStore& ps, const std::string& prefix, std::size_t d_v, std::size_t d_q,
                    std::size_t d_a)
      : w1(ps.create(prefix + "/w1", {d_a}, d_a)),
        w2(ps.create(prefix + "/w2", {d_v, d_a}, d_v)),
        w3(ps.create(prefix + "/w3", {d_q, d_a}, d_q)) {}

  struct Result {
    Tensor out;      // [d_v]
    Tensor weights;  // [K], sums to 1
  };

  Result attend(const Tensor& V, const Tensor& q) const {
    if (V.rank() != 2 || V.shape()[0] == 0)
      throw ShapeError("attend: expected non-empty [K x d_v] values, got " + shape_str(V.shape()));
    if (V.shape()[1] != w2.shape()[0])
      throw ShapeError("attend: value width " + std::to_string(V.shape()[1]) +
                       " does not match W2 " + shape_str(w2.shape()));
    if (q.shape() != Shape{w3.shape()[0]})
      throw ShapeError("attend: query " + shape_str(q.shape()) + " does not match W3 " +
                       shape_str(w3.shape()));
    Tensor pre = matmul(V, w2) + vecmat(q, w3);       // [K x d_a], query broadcast
    Tensor scores = reduce_sum(tanh(pre) * w1, 1);    // [K]
    Tensor weights = softmax(scores, 0);
    Tensor out = reshape(matmul(reshape(weights, {1, weights.size()}), V), {V.shape()[1]});
    return {out, weights};
  }
};

inline Tensor attend_over_time(const AdditiveAttention& att, const Tensor& V, const Tensor& q) {
  return att.attend(V, q).out;
}

// Per-frame attention over regions: [N x R x d] -> [N x d], one independent
// softmax per frame, shared parameters.
inline Tensor attend_over_space(const AdditiveAttention& att, const Tensor& Vo, const Tensor& q) {
  if (Vo.rank() != 3)
    throw ShapeError("attend_over_space: expected [N x R x d], got " + shape_str(Vo.shape()));
  const std::size_t n = Vo.shape()[0], r = Vo.shape()[1], d = Vo.shape()[2];
  std::vector<Tensor> rows(n);
  for (std::size_t f = 0; f < n; ++f)
    rows[f] = att.attend(reshape(slice(Vo, 0, f, 1), {r, d}), q).out;
  return stack_rows(rows);
}

struct Embedding {
  std::size_t vocab, dim;
  Tensor table;  // [vocab x dim]

  Embedding(ParameterStore& ps, const std::string& prefix, std::size_t vocab_, std::size_t dim_)
      : vocab(vocab_), dim(dim_), table(ps.create(prefix + "/table", {vocab_, dim_}, dim_)) {}

  Tensor lookup(std::size_t id) const {
    if (id >= vocab)
      throw ShapeError("embedding: id " + std::to_string(id) + " out of range for vocabulary of " +
                       std::to_string(vocab));
    return reshape(slice(table, 0, id, 1), {dim});
  }
};

// Vocabulary head: Linear -> tanh -> Linear on the concatenated step context.
// Softmax/log-softmax stays with the caller.
struct MlpHead {
  Linear l1, l2;

  MlpHead(ParameterStore& ps, const std::string& prefix, std::size_t d_in, std::size_t d_hidden,
          std::size_t vocab)
      : l1(ps, prefix + "/l1", d_in, d_hidden), l2(ps, prefix + "/l2", d_hidden, vocab) {}

  Tensor logits(const Tensor& v, const Tensor& h_en, const Tensor& h_de) const {
    return l2(tanh(l1(concat(concat(v, h_en, 0), h_de, 0))));
  }
};

}  // namespace rmn
