#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>

#include "nn.hpp"
#include "param_store.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace rmn {

// Index order is frozen: checkpoints, traces, and POS label files all rely on it.
enum class ModuleKind : int { Locate = 0, Relate = 1, Func = 2 };

inline const char* module_name(ModuleKind k) {
  switch (k) {
    case ModuleKind::Locate: return "locate";
    case ModuleKind::Relate: return "relate";
    default: return "func";
  }
}

inline ModuleKind module_from_index(std::size_t i) {
  if (i > 2) throw ValueError("module index " + std::to_string(i) + " out of range");
  return static_cast<ModuleKind>(static_cast<int>(i));
}

// One per-step choice. scores and z_backward stay on the tape; z_forward and
// the noise are constants of the realization.
struct ModuleDecision {
  Tensor scores;                      // [3], strictly positive
  std::array<real, 3> gumbel_noise;   // G, zero in eval mode
  Tensor z_forward;                   // [3] one-hot, off-tape
  Tensor relaxed_logits;              // (log s + G)/tau, on tape
  Tensor z_backward;                  // [3] = softmax(relaxed_logits)
  real tau = 1.0;
  std::size_t chosen = 0;

  ModuleKind kind() const { return module_from_index(chosen); }
};

// Per-module scorer fc(tanh(fc(h) + fc(v))); three independent parameter sets.
struct ScoreNets {
  struct Net {
    Linear fh, fv, out;
    Net(ParameterStore& ps, const std::string& prefix, std::size_t d_h, std::size_t d_s)
        : fh(ps, prefix + "/fh", d_h, d_s), fv(ps, prefix + "/fv", d_h, d_s),
          out(ps, prefix + "/out", d_s, 1) {}
    Tensor score(const Tensor& h, const Tensor& v) const { return out(tanh(fh(h) + fv(v))); }
  };

  Net locate, relate, func;

  ScoreNets(ParameterStore& ps, const std::string& prefix, std::size_t d_h, std::size_t d_s)
      : locate(ps, prefix + "/locate", d_h, d_s),
        relate(ps, prefix + "/relate", d_h, d_s),
        func(ps, prefix + "/func", d_h, d_s) {}

  // Raw scalar scores stacked to [3], made strictly positive with softplus.
  Tensor positive_scores(const Tensor& h_en, const Tensor& v_l, const Tensor& v_r,
                         const Tensor& v_f) const {
    Tensor raw = concat(concat(locate.score(h_en, v_l), relate.score(h_en, v_r), 0),
                        func.score(h_en, v_f), 0);
    return softplus(raw);
  }
};

enum class SelectMode { train, eval };

// Forward: one-hot at argmax(log s + G); ties resolve to the lowest index.
// Backward surrogate: softmax((log s + G)/tau) on the same noise realization.
inline ModuleDecision select(const Tensor& scores, real tau, Rng* rng, SelectMode mode) {
  if (scores.shape() != Shape{3})
    throw ShapeError("select: expected three scores, got " + shape_str(scores.shape()));
  if (!(tau > 0.0)) throw ValueError("select: temperature must be positive");
  for (real s : scores.data())
    if (!(s > 0.0)) throw ValueError("select: scores must be strictly positive");

  ModuleDecision d;
  d.scores = scores;
  d.tau = tau;
  if (mode == SelectMode::train) {
    if (!rng) throw ValueError("select: train mode needs an rng");
    for (auto& g : d.gumbel_noise) g = rng->gumbel();
  } else {
    d.gumbel_noise = {0.0, 0.0, 0.0};
  }

  Tensor noise({3}, {d.gumbel_noise[0], d.gumbel_noise[1], d.gumbel_noise[2]});
  Tensor noisy = log(scores) + noise;
  d.chosen = argmax_index(noisy.data());
  d.z_forward = Tensor({3});
  d.z_forward.data()[d.chosen] = 1.0;
  d.relaxed_logits = scale(noisy, 1.0 / tau);
  d.z_backward = softmax(d.relaxed_logits, 0);
  return d;
}

// Straight-through combination: the forward value is a bitwise copy of the
// chosen candidate; the backward pass pretends the tempered soft mixture
// sum_i z_backward[i] * v_i had been used, so every candidate receives
// z_backward[i]-weighted gradient and z_backward receives <v_i, g>.
inline Tensor combine(const ModuleDecision& d, const Tensor& v_l, const Tensor& v_r,
                      const Tensor& v_f) {
  const std::array<Tensor, 3> cand{v_l, v_r, v_f};
  const Shape& shape = cand[0].shape();
  for (const auto& c : cand)
    if (c.shape() != shape)
      throw ShapeError("combine: candidate widths differ: " + shape_str(c.shape()) + " vs " +
                       shape_str(shape));

  bool rg = d.z_backward.requires_grad();
  for (const auto& c : cand) rg = rg || c.requires_grad();
  Tensor out(shape, 0.0, rg && active_tape() != nullptr);
  out.data() = cand[d.chosen].data();

  if (active_tape() && rg) {
    active_tape()->record(
        out.ptr(), [c0 = v_l.ptr(), c1 = v_r.ptr(), c2 = v_f.ptr(), zb = d.z_backward.ptr(),
                    po = out.ptr()](Tape& tape) {
          const std::vector<real>* g = tape.grad_of(po.get());
          if (!g) return;
          const std::array<TensorImpl*, 3> cs{c0.get(), c1.get(), c2.get()};
          for (std::size_t i = 0; i < 3; ++i) {
            if (cs[i]->requires_grad) {
              auto& gc = tape.grad_buf(cs[i]);
              const real w = zb->data[i];
              for (std::size_t j = 0; j < g->size(); ++j) gc[j] += w * (*g)[j];
            }
            if (zb->requires_grad) {
              real acc = 0.0;
              for (std::size_t j = 0; j < g->size(); ++j) acc += cs[i]->data[j] * (*g)[j];
              tape.grad_buf(zb.get())[i] += acc;
            }
          }
        });
  }
  return out;
}

}  // namespace rmn
