#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nn.hpp"
#include "param_store.hpp"
#include "tensor.hpp"

namespace rmn {

// Already-encoded per-video features as the reasoning modules consume them:
// appearance and motion at model width, raw object regions at their native
// width (projection to model width happens after candidate construction).
struct EncodedFeatures {
  Tensor va;     // [N x d_h]
  Tensor vo;     // [N x R x d_o]
  Tensor vm;     // [N x d_h]
  Tensor v_bar;  // [d_h]

  std::size_t frames() const { return va.shape()[0]; }
  std::size_t regions() const { return vo.shape()[1]; }
};

// Decoder cell states seen so far, seeded with one zero vector so the recall
// module is well-defined at the first step.
struct CellHistory {
  std::vector<Tensor> states;

  static CellHistory seeded(std::size_t d_h) {
    CellHistory h;
    h.states.push_back(Tensor({d_h}));
    return h;
  }

  void push(const Tensor& c) { states.push_back(c); }
  std::size_t size() const { return states.size(); }

  Tensor as_matrix() const {
    if (states.empty()) throw ValueError("cell history is empty; seed it before use");
    return stack_rows(states);
  }
};

// Every ordered pair of rows, diagonal included: row (i*N + j) = A_i concat B_j.
inline Tensor pairwise(const Tensor& A, const Tensor& B) {
  if (A.rank() != 2 || B.rank() != 2 || A.shape()[0] != B.shape()[0])
    throw ShapeError("pairwise: expected [N x a] and [N x b] with equal N, got " +
                     shape_str(A.shape()) + " and " + shape_str(B.shape()));
  const std::size_t n = A.shape()[0];
  return concat(repeat_rows(A, n), tile_rows(B, n), 1);
}

// A candidate vector plus the temporal attention distribution that built it,
// kept for per-word traces.
struct ModuleOutput {
  Tensor v;
  Tensor time_weights;
};

// The three per-step context builders. Each owns its attention and projection
// parameters; nothing is shared between them.
struct ReasoningModules {
  std::size_t d_h, d_o;
  AdditiveAttention locate_space, locate_time;
  AdditiveAttention relate_space, relate_time;
  AdditiveAttention func_time;
  Linear proj_l, proj_r, proj_f;  // to common width d_h, no bias

  ReasoningModules(ParameterStore& ps, const std::string& prefix, std::size_t d_h_,
                   std::size_t d_o_, std::size_t d_a)
      : d_h(d_h_),
        d_o(d_o_),
        locate_space(ps, prefix + "/locate/aos", d_o_, d_h_, d_a),
        locate_time(ps, prefix + "/locate/aot", d_o_ + d_h_, d_h_, d_a),
        relate_space(ps, prefix + "/relate/aos", d_o_, d_h_, d_a),
        relate_time(ps, prefix + "/relate/aot", 2 * (d_o_ + d_h_), d_h_, d_a),
        func_time(ps, prefix + "/func/aot", d_h_, d_h_, d_a),
        proj_l(ps, prefix + "/locate/proj", d_o_ + d_h_, d_h_, /*bias=*/false),
        proj_r(ps, prefix + "/relate/proj", 2 * (d_o_ + d_h_), d_h_, /*bias=*/false),
        proj_f(ps, prefix + "/func/proj", d_h_, d_h_, /*bias=*/false) {}

  // Pick one region per frame, then one frame: width d_o + d_h.
  ModuleOutput locate(const EncodedFeatures& f, const Tensor& h_en) const {
    Tensor pooled = attend_over_space(locate_space, f.vo, h_en);  // [N x d_o]
    auto r = locate_time.attend(concat(pooled, f.va, 1), h_en);
    return {r.out, r.weights};
  }

  // Pairwise interactions between frame contexts: width 2(d_o + d_h).
  ModuleOutput relate(const EncodedFeatures& f, const Tensor& h_en) const {
    Tensor pooled = attend_over_space(relate_space, f.vo, h_en);  // [N x d_o]
    Tensor m = concat(pooled, f.vm, 1);                           // [N x (d_o+d_h)]
    auto r = relate_time.attend(pairwise(m, m), h_en);
    return {r.out, r.weights};
  }

  // Recall over past decoder cell states: width d_h.
  ModuleOutput func(const CellHistory& history, const Tensor& h_en) const {
    auto r = func_time.attend(history.as_matrix(), h_en);
    return {r.out, r.weights};
  }

  struct Candidates {
    Tensor v_l, v_r, v_f;  // all [d_h]
  };

  Candidates project(const Tensor& v_l, const Tensor& v_r, const Tensor& v_f) const {
    return {proj_l(v_l), proj_r(v_r), proj_f(v_f)};
  }
};

}  // namespace rmn
