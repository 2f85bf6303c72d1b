#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "rmn/optim.hpp"
#include "rmn/tensor.hpp"

using namespace rmn;

TEST_CASE("adam first step moves by roughly the learning rate") {
  Tensor w({3}, {1.0, 2.0, 3.0});
  w.set_requires_grad(true);
  w.grad_mut().assign(3, 1.0);  // constant gradient
  Adam adam({w});
  adam.step(0.1);
  // bias-corrected m-hat/(sqrt(v-hat)+eps) == 1/(1+eps) on the first step
  for (std::size_t i = 0; i < 3; ++i) {
    real expect = (i + 1.0) - 0.1 / (1.0 + 1e-8);
    CHECK(w.data()[i] == Catch::Approx(expect).epsilon(1e-12));
  }
  CHECK(adam.steps() == 1);
  // gradients are consumed by the step
  for (real g : w.grad()) CHECK(g == 0.0);
}

TEST_CASE("zero gradient leaves parameters untouched") {
  Tensor w({2}, {0.5, -0.5});
  w.set_requires_grad(true);
  w.grad_mut().assign(2, 0.0);
  Adam adam({w});
  adam.step(0.1);
  CHECK(w.data()[0] == 0.5);
  CHECK(w.data()[1] == -0.5);
}

TEST_CASE("adam minimizes a quadratic bowl") {
  Tensor w({1}, {10.0});
  w.set_requires_grad(true);
  Adam adam({w});
  for (int i = 0; i < 400; ++i) {
    Tape tape;
    TapeScope scope(tape);
    Tensor d = add(w, Tensor({1}, {-3.0}));
    Tensor loss = sum_all(mul(d, d));
    tape.backward(loss);
    adam.step(0.1);
  }
  CHECK(std::abs(w.data()[0] - 3.0) < 1e-2);
}

TEST_CASE("stepping without a backward pass is an error") {
  Tensor w({2}, {1.0, 1.0});
  w.set_requires_grad(true);
  Adam adam({w});
  CHECK_THROWS_AS(adam.step(0.1), ValueError);
}

TEST_CASE("learning-rate schedule steps down at fixed intervals") {
  CHECK(lr_schedule(0, 1e-4, 10.0, 10) == Catch::Approx(1e-4));
  CHECK(lr_schedule(9, 1e-4, 10.0, 10) == Catch::Approx(1e-4));
  CHECK(lr_schedule(10, 1e-4, 10.0, 10) == Catch::Approx(1e-5));
  CHECK(lr_schedule(20, 1e-4, 10.0, 10) == Catch::Approx(1e-6));
  CHECK(lr_schedule(4, 1e-4, 3.0, 5) == Catch::Approx(1e-4));
  CHECK(lr_schedule(5, 1e-4, 3.0, 5) == Catch::Approx(1e-4 / 3.0));
  CHECK(lr_schedule(14, 1e-4, 3.0, 5) == Catch::Approx(1e-4 / 9.0));
  CHECK_THROWS_AS(lr_schedule(0, 1e-4, 0.5, 10), ValueError);
  CHECK_THROWS_AS(lr_schedule(0, 1e-4, 10.0, 0), ValueError);
}

TEST_CASE("global-norm clipping rescales only oversized gradients") {
  Tensor a({2}, {0.0, 0.0});
  Tensor b({2}, {0.0, 0.0});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  a.grad_mut() = {3.0, 0.0};
  b.grad_mut() = {0.0, 4.0};  // global norm 5

  SECTION("above the threshold") {
    real norm = clip_global_norm({a, b}, 1.0);
    CHECK(norm == Catch::Approx(5.0));
    CHECK(a.grad()[0] == Catch::Approx(0.6));
    CHECK(b.grad()[1] == Catch::Approx(0.8));
  }
  SECTION("below the threshold") {
    real norm = clip_global_norm({a, b}, 10.0);
    CHECK(norm == Catch::Approx(5.0));
    CHECK(a.grad()[0] == 3.0);
    CHECK(b.grad()[1] == 4.0);
  }
}

TEST_CASE("gradient scaling divides accumulated sums into means") {
  Tensor a({2}, {0.0, 0.0});
  a.set_requires_grad(true);
  a.grad_mut() = {4.0, 8.0};
  scale_grads({a}, 0.25);
  CHECK(a.grad()[0] == 1.0);
  CHECK(a.grad()[1] == 2.0);
}
