#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gradcheck.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace rmn {

struct NamedCheck {
  std::string name;
  real tol;
  GradCheckResult result;
  bool pass() const { return result.pass(tol); }
};

namespace detail {

inline Tensor seeded(Shape shape, std::uint64_t seed, real lo = -1.0, real hi = 1.0) {
  Rng r(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = r.uniform(lo, hi);
  return t;
}

// Weights every output element differently before summing, so transposed or
// permuted gradients cannot cancel out.
inline Tensor probed(const Tensor& out, std::uint64_t seed) {
  Rng r(seed);
  Tensor w(out.shape());
  for (auto& v : w.data()) v = r.uniform(0.25, 1.75);
  return sum_all(out * w);
}

}  // namespace detail

// Negative control for the checker itself: the forward doubles the input but
// the recorded backward claims a factor of three, so any finite-difference
// comparison must flag it.
inline Tensor scale_with_wrong_backward(const Tensor& a) {
  Tensor out = detail::make_output(a.shape(), {&a});
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = 2.0 * a.data()[i];
  if (detail::should_record({&a})) {
    active_tape()->record(out.ptr(), [pa = a.ptr(), po = out.ptr()](Tape& tape) {
      const std::vector<real>* g = tape.grad_of(po.get());
      if (!g || !pa->requires_grad) return;
      auto& ga = tape.grad_buf(pa.get());
      for (std::size_t i = 0; i < g->size(); ++i) ga[i] += 3.0 * (*g)[i];
    });
  }
  return out;
}

// Finite-difference verification of every differentiable operation, each
// network block, the three reasoning modules with their selector, and one
// unrolled end-to-end loss. Blocks are held to 1e-4; the deep end-to-end
// composition to 1e-3.
inline std::vector<NamedCheck> grad_check_suite(bool with_negative_control = false) {
  std::vector<NamedCheck> checks;
  auto run = [&](std::string name, real tol, std::vector<Tensor> params, auto&& forward) {
    NamedCheck c{std::move(name), tol, {}};
    c.result = finite_diff_check(params, forward);
    checks.push_back(std::move(c));
  };
  using detail::probed;
  using detail::seeded;
  constexpr real kOpTol = 1e-4;

  // elementwise arithmetic, broadcasting included
  {
    Tensor a = seeded({2, 3}, 101), b = seeded({2, 3}, 102);
    run("op/add", kOpTol, {a, b}, [=] { return probed(a + b, 901); });
    run("op/sub", kOpTol, {a, b}, [=] { return probed(a - b, 902); });
    run("op/mul", kOpTol, {a, b}, [=] { return probed(a * b, 903); });
    run("op/scale", kOpTol, {a}, [=] { return probed(scale(a, 1.7), 904); });
  }
  {
    Tensor a = seeded({2, 3}, 103), row = seeded({3}, 104);
    run("op/add_broadcast", kOpTol, {a, row}, [=] { return probed(a + row, 905); });
    run("op/mul_broadcast", kOpTol, {a, row}, [=] { return probed(a * row, 906); });
  }

  // contractions and reductions
  {
    Tensor a = seeded({2, 3}, 105), b = seeded({3, 4}, 106), x = seeded({2}, 107);
    Tensor u = seeded({6}, 144), v = seeded({6}, 145);
    run("op/matmul", kOpTol, {a, b}, [=] { return probed(matmul(a, b), 907); });
    run("op/vecmat", kOpTol, {x, a}, [=] { return probed(vecmat(x, a), 908); });
    run("op/dot", kOpTol, {u, v}, [=] { return dot(u, v); });
  }
  {
    Tensor a = seeded({3, 4}, 108);
    run("op/reduce_sum", kOpTol, {a}, [=] { return probed(reduce_sum(a, 1), 909); });
    run("op/reduce_mean", kOpTol, {a}, [=] { return probed(reduce_mean(a, 0), 910); });
    run("op/sum_all", kOpTol, {a}, [=] { return sum_all(a); });
    run("op/mean_all", kOpTol, {a}, [=] { return mean_all(a); });
  }

  // pointwise nonlinearities
  {
    Tensor a = seeded({2, 3}, 109);
    run("op/tanh", kOpTol, {a}, [=] { return probed(tanh(a), 911); });
    run("op/sigmoid", kOpTol, {a}, [=] { return probed(sigmoid(a), 912); });
    run("op/exp", kOpTol, {a}, [=] { return probed(exp(a), 913); });
    run("op/softplus", kOpTol, {a}, [=] { return probed(softplus(a), 914); });
  }
  {
    Tensor pos = seeded({2, 3}, 110, 0.5, 1.5);  // keep log's domain under the probe
    run("op/log", kOpTol, {pos}, [=] { return probed(log(pos), 915); });
  }
  {
    Tensor a = seeded({2, 5}, 111), v = seeded({5}, 112);
    run("op/softmax", kOpTol, {a}, [=] { return probed(softmax(a, 1), 916); });
    run("op/log_softmax", kOpTol, {v}, [=] { return probed(log_softmax(v, 0), 917); });
  }

  // shape plumbing
  {
    Tensor a = seeded({2, 6}, 113), b = seeded({3, 4}, 114), v = seeded({4}, 115);
    run("op/reshape", kOpTol, {a}, [=] { return probed(reshape(a, {4, 3}), 918); });
    run("op/concat_rows", kOpTol, {a}, [=] { return probed(concat(a, a, 0), 919); });
    run("op/concat_cols", kOpTol, {b, a}, [=] { return probed(concat(b, reshape(a, {3, 4}), 1), 920); });
    run("op/slice", kOpTol, {b}, [=] { return probed(slice(b, 1, 1, 2), 921); });
    run("op/pick", kOpTol, {v}, [=] { return probed(pick(v, 2), 922); });
    run("op/repeat_rows", kOpTol, {b}, [=] { return probed(repeat_rows(b, 2), 923); });
    run("op/tile_rows", kOpTol, {b}, [=] { return probed(tile_rows(b, 2), 924); });
    Tensor r0 = seeded({4}, 146), r1 = seeded({4}, 147), r2 = seeded({4}, 148);
    run("op/stack_rows", kOpTol, {r0, r1, r2},
        [=] { return probed(stack_rows({r0, r1, r2}), 925); });
  }

  // network blocks
  {
    ParameterStore ps(401);
    Linear lin(ps, "lin", 4, 3);
    Tensor x = seeded({4}, 116);
    auto params = ps.tensors();
    params.push_back(x);
    run("block/linear", kOpTol, params, [=] { return probed(lin(x), 926); });
  }
  {
    ParameterStore ps(402);
    LstmCell cell(ps, "cell", 3, 4);
    Tensor x = seeded({3}, 117), h0 = seeded({4}, 118, -0.5, 0.5), c0 = seeded({4}, 119, -0.5, 0.5);
    auto params = ps.tensors();
    params.push_back(x);
    params.push_back(h0);
    params.push_back(c0);
    run("block/lstm_cell", kOpTol, params, [=] {
      auto s = cell.step(x, {h0, c0});
      return probed(s.h, 927) + probed(s.c, 928);
    });
  }
  {
    ParameterStore ps(403);
    BiLstmEncoder enc(ps, "enc", 3, 4);
    Tensor seq = seeded({4, 3}, 120);
    auto params = ps.tensors();
    params.push_back(seq);
    run("block/bilstm", kOpTol, params, [=] { return probed(enc.encode(seq), 929); });
  }
  {
    ParameterStore ps(404);
    AdditiveAttention att(ps, "att", 5, 6, 4);
    Tensor V = seeded({4, 5}, 121), q = seeded({6}, 122);
    auto params = ps.tensors();
    params.push_back(V);
    params.push_back(q);
    run("block/attention", kOpTol, params, [=] {
      auto r = att.attend(V, q);
      return probed(r.out, 930) + probed(r.weights, 931);
    });
  }
  {
    ParameterStore ps(405);
    Embedding emb(ps, "emb", 6, 4);
    run("block/embedding", kOpTol, ps.tensors(),
        [=] { return probed(emb.lookup(2), 932) + probed(emb.lookup(5), 933); });
  }
  {
    ParameterStore ps(406);
    MlpHead head(ps, "head", 9, 5, 7);
    Tensor v = seeded({3}, 123), he = seeded({3}, 124), hd = seeded({3}, 125);
    auto params = ps.tensors();
    params.push_back(v);
    params.push_back(he);
    params.push_back(hd);
    run("block/mlp_head", kOpTol, params,
        [=] { return probed(log_softmax(head.logits(v, he, hd), 0), 934); });
  }

  // reasoning modules and the selector
  {
    Tensor A = seeded({3, 2}, 126), B = seeded({3, 2}, 127);
    run("module/pairwise", kOpTol, {A, B}, [=] { return probed(pairwise(A, B), 935); });
  }
  {
    ParameterStore ps(407);
    const std::size_t d_h = 4, d_o = 3;
    ReasoningModules mods(ps, "mods", d_h, d_o, d_h);
    EncodedFeatures f;
    f.va = seeded({3, d_h}, 128);
    f.vo = seeded({3, 2, d_o}, 129);
    f.vm = seeded({3, d_h}, 130);
    f.v_bar = seeded({d_h}, 131);
    Tensor h_en = seeded({d_h}, 132);
    CellHistory hist = CellHistory::seeded(d_h);
    hist.push(seeded({d_h}, 133, -0.5, 0.5));
    auto params = ps.tensors();
    params.push_back(h_en);
    run("module/locate", kOpTol, params, [=] {
      auto r = mods.locate(f, h_en);
      return probed(mods.proj_l(r.v), 936) + probed(r.time_weights, 937);
    });
    run("module/relate", kOpTol, params, [=] {
      auto r = mods.relate(f, h_en);
      return probed(mods.proj_r(r.v), 938) + probed(r.time_weights, 939);
    });
    run("module/func", kOpTol, params, [=] {
      auto r = mods.func(hist, h_en);
      return probed(mods.proj_f(r.v), 940) + probed(r.time_weights, 941);
    });
  }
  {
    ParameterStore ps(408);
    ScoreNets nets(ps, "sel", 4, 4);
    Tensor h = seeded({4}, 134), vl = seeded({4}, 135), vr = seeded({4}, 136), vf = seeded({4}, 137);
    auto params = ps.tensors();
    params.push_back(h);
    params.push_back(vl);
    params.push_back(vr);
    params.push_back(vf);
    run("module/score_nets", kOpTol, params,
        [=] { return probed(nets.positive_scores(h, vl, vr, vf), 942); });
    // the tempered softmax surrogate under one fixed noise draw, and the soft
    // mixture it weights; this is the differentiable path the hard selector
    // borrows for its backward pass
    run("module/select_mixture", kOpTol, params, [=] {
      Rng noise(55);
      ModuleDecision d = select(nets.positive_scores(h, vl, vr, vf), 0.7, &noise, SelectMode::train);
      Tensor mix = pick(d.z_backward, 0) * vl + pick(d.z_backward, 1) * vr + pick(d.z_backward, 2) * vf;
      return probed(mix, 943) + probed(d.z_backward, 944);
    });
  }

  // the full decoder: four labeled words plus the end token, fixed noise, the
  // tempered mixture standing in for the one-hot path
  {
    ModelConfig cfg;
    cfg.vocab = 12;
    cfg.d_h = 8;
    cfg.d_va_raw = 5;
    cfg.d_vm_raw = 5;
    cfg.d_o = 4;
    RmnModel model(cfg, 24);
    Tensor va = seeded({3, 5}, 138), vo = seeded({3, 2, 4}, 139), vm = seeded({3, 5}, 140);
    std::vector<std::size_t> tokens{tok::bos, 4, 6, 8, 10, tok::eos};
    std::vector<ModuleKind> labels{ModuleKind::Func, ModuleKind::Locate, ModuleKind::Relate,
                                   ModuleKind::Locate};
    run("e2e/unrolled_loss", 1e-3, model.params().tensors(), [&model, va, vo, vm, tokens, labels] {
      Rng noise(31);  // identical Gumbel noise for every evaluation
      RmnModel::UnrollOptions opt;
      opt.fusion = Fusion::relaxed;
      opt.sample_noise = true;
      opt.lambda = 1.0;
      opt.linguistic = true;
      opt.rng = &noise;
      EncodedFeatures f = model.encode_features(va, vo, vm);
      return model.unroll_teacher_forced(f, tokens, labels, opt).loss.total;
    });
  }

  if (with_negative_control) {
    Tensor a = seeded({2, 3}, 141);
    run("negative-control/wrong_backward", kOpTol, {a},
        [=] { return probed(scale_with_wrong_backward(a), 945); });
  }
  return checks;
}

}  // namespace rmn
