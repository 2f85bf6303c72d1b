#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rmn/gradcheck.hpp"
#include "rmn/nn.hpp"
#include "rmn/param_store.hpp"
#include "rmn/rng.hpp"

using namespace rmn;

namespace {

Tensor rand_tensor(Rng& rng, Shape shape, real lo = -1.0, real hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

void zero_all(ParameterStore& ps) {
  for (auto& t : ps.tensors()) std::fill(t.data().begin(), t.data().end(), 0.0);
}

}  // namespace

TEST_CASE("linear applies affine map to vectors and rows") {
  ParameterStore ps(3);
  Linear lin(ps, "lin", 2, 3);
  lin.w.data() = {1, 2, 3, 4, 5, 6};
  lin.b.data() = {10, 20, 30};
  Tensor x({2}, {1, 1});
  CHECK(lin(x).data() == std::vector<real>{15, 27, 39});
  Tensor X({2, 2}, {1, 1, 0, 0});
  CHECK(lin.rows(X).data() == std::vector<real>{15, 27, 39, 10, 20, 30});
}

TEST_CASE("lstm with all-zero weights and state maps any input to zero") {
  ParameterStore ps(1);
  LstmCell cell(ps, "cell", 3, 2);
  zero_all(ps);  // including the +1 forget bias
  auto out = cell.step(Tensor({3}, {5, -7, 100}), cell.zero_state());
  CHECK(out.h.data() == std::vector<real>{0, 0});
  CHECK(out.c.data() == std::vector<real>{0, 0});
}

TEST_CASE("lstm forget bias starts at one, other biases at zero") {
  ParameterStore ps(1);
  LstmCell cell(ps, "cell", 3, 2);
  CHECK(cell.b.data() == std::vector<real>{0, 0, 1, 1, 0, 0, 0, 0});
}

TEST_CASE("lstm saturates instead of overflowing on huge inputs") {
  ParameterStore ps(2);
  LstmCell cell(ps, "cell", 4, 3);
  Rng rng(5);
  LstmCell::State s = cell.zero_state();
  for (int t = 0; t < 10; ++t) {
    s = cell.step(rand_tensor(rng, {4}, -100.0, 100.0), s);
    for (real v : s.h.data()) {
      CHECK(std::isfinite(v));
      CHECK(std::abs(v) <= 1.0);
    }
    for (real v : s.c.data()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("lstm rejects mis-sized inputs") {
  ParameterStore ps(1);
  LstmCell cell(ps, "cell", 3, 2);
  CHECK_THROWS_AS(cell.step(Tensor({4}, 1.0), cell.zero_state()), ShapeError);
}

TEST_CASE("lstm gradients match finite differences") {
  ParameterStore ps(11);
  LstmCell cell(ps, "cell", 3, 2);
  auto params = ps.tensors();
  Rng rng(17);
  Tensor x = rand_tensor(rng, {3});
  Tensor h0 = rand_tensor(rng, {2});
  Tensor c0 = rand_tensor(rng, {2});
  Tensor wh = rand_tensor(rng, {2});
  Tensor wc = rand_tensor(rng, {2});
  auto res = finite_diff_check(params, [&] {
    auto out = cell.step(x, {h0, c0});
    return dot(out.h, wh) + dot(out.c, wc);
  });
  INFO("worst " << res.worst << " rel " << res.max_rel_err);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("bilstm on a single frame is one forward plus one backward step") {
  ParameterStore ps(23);
  BiLstmEncoder enc(ps, "enc", 3, 4);
  Rng rng(29);
  Tensor x = rand_tensor(rng, {3});
  Tensor seq = reshape(x, {1, 3});
  Tensor out = enc.encode(seq);
  REQUIRE(out.shape() == Shape{1, 4});
  auto f = enc.fwd.step(x, enc.fwd.zero_state());
  auto b = enc.bwd.step(x, enc.bwd.zero_state());
  Tensor expect = concat(f.h, b.h, 0);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out.data()[i] == expect.data()[i]);
}

TEST_CASE("bilstm output keeps sequence length and requested width") {
  ParameterStore ps(31);
  BiLstmEncoder enc(ps, "enc", 16, 512);
  Rng rng(37);
  Tensor seq = rand_tensor(rng, {26, 16});
  CHECK(enc.encode(seq).shape() == Shape{26, 512});
}

TEST_CASE("bilstm direction swap mirrors sequence reversal exactly") {
  ParameterStore ps1(41), ps2(43);
  BiLstmEncoder enc1(ps1, "enc", 3, 4);
  BiLstmEncoder enc2(ps2, "enc", 3, 4);
  for (const char* leaf : {"wx", "wh", "b"}) {
    ps2.get(std::string("enc/fwd/") + leaf).data() = ps1.get(std::string("enc/bwd/") + leaf).data();
    ps2.get(std::string("enc/bwd/") + leaf).data() = ps1.get(std::string("enc/fwd/") + leaf).data();
  }
  Rng rng(47);
  const std::size_t n = 5;
  Tensor seq = rand_tensor(rng, {n, 3});
  Tensor rev({n, 3});
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < 3; ++j) rev.data()[t * 3 + j] = seq.data()[(n - 1 - t) * 3 + j];

  Tensor out1 = enc1.encode(seq);
  Tensor out2 = enc2.encode(rev);
  // out1[t] = [f(seq..t), b(seq t..)]; row-reverse of out2 swapped halves gives the same
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(out1.data()[t * 4 + j] == out2.data()[(n - 1 - t) * 4 + 2 + j]);
      CHECK(out1.data()[t * 4 + 2 + j] == out2.data()[(n - 1 - t) * 4 + j]);
    }
}

TEST_CASE("bilstm rejects odd widths and empty sequences") {
  ParameterStore ps(1);
  CHECK_THROWS_AS(BiLstmEncoder(ps, "bad", 3, 5), ValueError);
  BiLstmEncoder enc(ps, "enc", 3, 4);
  CHECK_THROWS_AS(enc.encode(Tensor({3}, 1.0)), ShapeError);
}

TEST_CASE("attention over one row is the identity with weight one") {
  ParameterStore ps(53);
  AdditiveAttention att(ps, "att", 3, 2, 4);
  Tensor V({1, 3}, {7, 8, 9});
  Tensor q({2}, {1, -1});
  auto r = att.attend(V, q);
  CHECK(r.weights.data() == std::vector<real>{1.0});
  CHECK(r.out.data() == std::vector<real>{7, 8, 9});
}

TEST_CASE("zero scoring vector gives uniform weights and the column mean") {
  ParameterStore ps(59);
  AdditiveAttention att(ps, "att", 2, 2, 3);
  std::fill(att.w1.data().begin(), att.w1.data().end(), 0.0);
  Tensor V({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor q({2}, {0.5, -0.5});
  auto r = att.attend(V, q);
  for (real w : r.weights.data()) CHECK(w == Catch::Approx(0.25));
  CHECK(r.out.data()[0] == Catch::Approx(4.0));
  CHECK(r.out.data()[1] == Catch::Approx(5.0));
}

TEST_CASE("attention matches the hand-computed two-by-two case") {
  ParameterStore ps(61);
  AdditiveAttention att(ps, "att", 2, 2, 2);
  att.w1.data() = {1, 0};
  att.w2.data() = {1, 0, 0, 1};  // identity
  att.w3.data() = {0, 0, 0, 0};
  Tensor V({2, 2}, {1, 0, 0, 1});
  Tensor q({2}, {0.3, -0.9});
  auto r = att.attend(V, q);
  const real s0 = std::tanh(1.0);
  const real e0 = std::exp(s0), e1 = 1.0;
  const real w0 = e0 / (e0 + e1);
  CHECK(r.weights.data()[0] == Catch::Approx(w0).epsilon(1e-9));
  CHECK(r.weights.data()[1] == Catch::Approx(1.0 - w0).epsilon(1e-9));
  CHECK(w0 == Catch::Approx(0.6817).margin(5e-5));
  CHECK(r.out.data()[0] == Catch::Approx(w0).epsilon(1e-9));
  CHECK(r.out.data()[1] == Catch::Approx(1.0 - w0).epsilon(1e-9));
}

TEST_CASE("attention is permutation-equivariant and stays in the convex hull") {
  ParameterStore ps(67);
  AdditiveAttention att(ps, "att", 3, 2, 4);
  Rng rng(71);
  Tensor V = rand_tensor(rng, {5, 3});
  Tensor q = rand_tensor(rng, {2});
  auto r = att.attend(V, q);

  real wsum = 0.0;
  for (real w : r.weights.data()) {
    CHECK(w >= 0.0);
    wsum += w;
  }
  CHECK(wsum == Catch::Approx(1.0).margin(1e-6));

  for (std::size_t j = 0; j < 3; ++j) {
    real lo = V.data()[j], hi = V.data()[j];
    for (std::size_t k = 0; k < 5; ++k) {
      lo = std::min(lo, V.data()[k * 3 + j]);
      hi = std::max(hi, V.data()[k * 3 + j]);
    }
    CHECK(r.out.data()[j] >= lo - 1e-12);
    CHECK(r.out.data()[j] <= hi + 1e-12);
  }

  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Tensor Vp({5, 3});
  for (std::size_t k = 0; k < 5; ++k)
    for (std::size_t j = 0; j < 3; ++j) Vp.data()[k * 3 + j] = V.data()[perm[k] * 3 + j];
  auto rp = att.attend(Vp, q);
  for (std::size_t k = 0; k < 5; ++k)
    CHECK(rp.weights.data()[k] == Catch::Approx(r.weights.data()[perm[k]]).epsilon(1e-12));
  for (std::size_t j = 0; j < 3; ++j)
    CHECK(rp.out.data()[j] == Catch::Approx(r.out.data()[j]).epsilon(1e-12));
}

TEST_CASE("attention gradients match finite differences") {
  ParameterStore ps(73);
  AdditiveAttention att(ps, "att", 3, 2, 4);
  auto params = ps.tensors();
  Rng rng(79);
  Tensor V = rand_tensor(rng, {4, 3});
  Tensor q = rand_tensor(rng, {2});
  Tensor w = rand_tensor(rng, {3});
  auto res = finite_diff_check(params, [&] { return dot(att.attend(V, q).out, w); });
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("spatial attention treats single regions as identity per frame") {
  ParameterStore ps(83);
  AdditiveAttention att(ps, "att", 3, 2, 4);
  Rng rng(89);
  Tensor Vo = rand_tensor(rng, {2, 1, 3});
  Tensor q = rand_tensor(rng, {2});
  Tensor out = attend_over_space(att, Vo, q);
  REQUIRE(out.shape() == Shape{2, 3});
  for (std::size_t i = 0; i < 6; ++i) CHECK(out.data()[i] == Vo.data()[i]);
  CHECK_THROWS_AS(attend_over_space(att, Tensor({2, 3}, 1.0), q), ShapeError);
}

TEST_CASE("temporal attention over one timestep is the identity") {
  ParameterStore ps(97);
  AdditiveAttention att(ps, "att", 3, 2, 4);
  Rng rng(101);
  Tensor V = rand_tensor(rng, {1, 3});
  Tensor q = rand_tensor(rng, {2});
  Tensor out = attend_over_time(att, V, q);
  for (std::size_t i = 0; i < 3; ++i) CHECK(out.data()[i] == V.data()[i]);
}

TEST_CASE("spatial-then-temporal composition equals two direct attend calls") {
  ParameterStore ps(103);
  AdditiveAttention space(ps, "aos", 2, 2, 2);
  AdditiveAttention time(ps, "aot", 2, 2, 2);
  Rng rng(107);
  Tensor Vo = rand_tensor(rng, {2, 2, 2});
  Tensor q = rand_tensor(rng, {2});

  Tensor pooled = attend_over_space(space, Vo, q);  // 2 x 2
  Tensor final_vec = attend_over_time(time, pooled, q);

  Tensor f0 = space.attend(reshape(slice(Vo, 0, 0, 1), {2, 2}), q).out;
  Tensor f1 = space.attend(reshape(slice(Vo, 0, 1, 1), {2, 2}), q).out;
  Tensor expect = time.attend(stack_rows({f0, f1}), q).out;
  for (std::size_t i = 0; i < 2; ++i)
    CHECK(final_vec.data()[i] == Catch::Approx(expect.data()[i]).epsilon(1e-12));
}

TEST_CASE("embedding looks up rows and rejects out-of-range ids") {
  ParameterStore ps(109);
  Embedding emb(ps, "emb", 5, 3);
  for (std::size_t id = 0; id < 5; ++id) {
    Tensor e = emb.lookup(id);
    for (std::size_t j = 0; j < 3; ++j) CHECK(e.data()[j] == emb.table.data()[id * 3 + j]);
  }
  CHECK_THROWS_AS(emb.lookup(5), ShapeError);
}

TEST_CASE("embedding gradient lands only on the looked-up row") {
  ParameterStore ps(113);
  Embedding emb(ps, "emb", 4, 2);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum_all(emb.lookup(2)));
  }
  const auto& g = emb.table.grad();
  CHECK(g == std::vector<real>{0, 0, 0, 0, 1, 1, 0, 0});
}

TEST_CASE("mlp head with zero weights yields a uniform distribution") {
  ParameterStore ps(127);
  MlpHead head(ps, "head", 6, 4, 5);
  zero_all(ps);
  Tensor logits = head.logits(Tensor({2}, 1.0), Tensor({2}, -1.0), Tensor({2}, 0.5));
  REQUIRE(logits.shape() == Shape{5});
  for (real v : logits.data()) CHECK(v == 0.0);
  Tensor probs = softmax(logits, 0);
  for (real p : probs.data()) CHECK(p == Catch::Approx(0.2));
}

TEST_CASE("mlp head emits one logit per vocabulary entry at full scale") {
  ParameterStore ps(131);
  MlpHead head(ps, "head", 12, 4, 7351);
  Tensor logits = head.logits(Tensor({4}, 0.1), Tensor({4}, 0.2), Tensor({4}, 0.3));
  CHECK(logits.shape() == Shape{7351});
}

TEST_CASE("mlp head gradients match finite differences") {
  ParameterStore ps(137);
  MlpHead head(ps, "head", 6, 3, 5);
  auto params = ps.tensors();
  Rng rng(139);
  Tensor v = rand_tensor(rng, {2});
  Tensor he = rand_tensor(rng, {2});
  Tensor hd = rand_tensor(rng, {2});
  auto res = finite_diff_check(params, [&] {
    return pick(log_softmax(head.logits(v, he, hd), 0), 3) * Tensor({1}, {-1.0});
  });
  CHECK(res.max_rel_err < 1e-4);
}
