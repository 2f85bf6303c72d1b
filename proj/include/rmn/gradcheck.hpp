#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace rmn {

struct GradCheckResult {
  real max_rel_err = 0.0;
  real max_abs_err = 0.0;
  std::string worst;  // "<param-index>[<element>]" of the largest relative error
  bool pass(real tol) const { return max_rel_err < tol; }
};

// Central finite differences against reverse-mode gradients for a scalar-valued
// forward() that reads `params` by reference. The relative-error denominator is
// floored so near-zero gradients are judged on absolute disagreement.
template <class Fwd>
GradCheckResult finite_diff_check(std::vector<Tensor>& params, Fwd&& forward, real h = 1e-5,
                                  real denom_floor = 1e-3) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.clear_grad();
  }
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = forward();
    tape.backward(loss);
  }
  std::vector<std::vector<real>> ad;
  ad.reserve(params.size());
  for (auto& p : params)
    ad.push_back(p.has_grad() ? p.grad() : std::vector<real>(p.size(), 0.0));

  auto eval = [&]() -> real {
    NoGradScope ng;
    return forward().item();
  };

  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].data();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const real orig = vals[i];
      vals[i] = orig + h;
      const real lp = eval();
      vals[i] = orig - h;
      const real lm = eval();
      vals[i] = orig;
      const real fd = (lp - lm) / (2.0 * h);
      const real abs_err = std::abs(ad[pi][i] - fd);
      const real rel_err = abs_err / std::max({std::abs(ad[pi][i]), std::abs(fd), denom_floor});
      res.max_abs_err = std::max(res.max_abs_err, abs_err);
      if (rel_err > res.max_rel_err) {
        res.max_rel_err = rel_err;
        res.worst = std::to_string(pi) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

}  // namespace rmn
