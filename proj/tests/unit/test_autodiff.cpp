#include "doctest.h"

#include <cmath>
#include <numeric>

#include "layerpool/autodiff.hpp"
#include "layerpool/gradcheck.hpp"
#include "oracles.hpp"

using namespace layerpool;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, Real sd = 1.0) {
  Tensor t(std::move(shape));
  for (Real& v : t.values()) v = rng.normal(0.0, sd);
  return t;
}

Var weighted(Tape& t, const Var& x, const Tensor& w) { return sum(mul(x, t.constant(w))); }

}  // namespace

TEST_CASE("softmax examples") {
  Tape t;
  const Tensor u = softmax(t.constant(Tensor::matrix({{0, 0, 0}}))).value();
  for (std::size_t i = 0; i < 3; ++i) CHECK(u[i] == doctest::Approx(1.0 / 3).epsilon(1e-15));

  const Tensor p = softmax(t.constant(Tensor::matrix({{0, std::log(3.0)}}))).value();
  CHECK(std::abs(p[0] - 0.25) < 1e-15);
  CHECK(std::abs(p[1] - 0.75) < 1e-15);

  const Tensor a = softmax(t.constant(Tensor::matrix({{0.0, 0.7, 1.4}}))).value();
  const Tensor b = softmax(t.constant(Tensor::matrix({{-3.0, -2.3, -1.6}}))).value();
  CHECK(max_abs_diff(a, b) < 1e-15);

  const Tensor big = softmax(t.constant(Tensor::matrix({{1000.0, 0.0}}))).value();
  CHECK(big.all_finite());
  CHECK(big[0] == 1.0);
}

TEST_CASE("softmax rows are distributions") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tape t;
    const Tensor x = random_tensor({4, 1 + rng.below(9)}, rng, 5.0);
    const Tensor y = softmax(t.constant(x)).value();
    const oracle::Vec ref = oracle::softmax(oracle::Vec(x.row_span(0).begin(), x.row_span(0).end()));
    for (std::size_t r = 0; r < y.rows(); ++r) {
      Real s = 0.0;
      for (Real v : y.row_span(r)) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
        s += v;
      }
      REQUIRE(std::abs(s - 1.0) < 1e-12);
    }
    for (std::size_t c = 0; c < y.cols(); ++c) REQUIRE(std::abs(y.at(0, c) - ref[c]) < 1e-14);
  }
}

TEST_CASE("masked softmax gives masked keys exactly zero") {
  Tape t;
  const std::vector<std::uint8_t> mask{1, 0, 1};
  const Tensor y = softmax(t.constant(Tensor::matrix({{1, 50, 1}, {0, 0, 2}})), mask).value();
  CHECK(y.at(0, 1) == 0.0);
  CHECK(y.at(1, 1) == 0.0);
  CHECK(y.at(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("cross entropy examples") {
  Tape t;
  const std::vector<std::int32_t> one{1};
  CHECK(cross_entropy(t.constant(Tensor::matrix({{0, 1, 0}})), one).value().item() == 0.0);
  CHECK(cross_entropy(t.constant(Tensor::matrix({{1.0 / 3, 1.0 / 3, 1.0 / 3}})), one).value().item() ==
        doctest::Approx(std::log(3.0)).epsilon(1e-14));
  CHECK(cross_entropy(t.constant(Tensor::matrix({{0.25, 0.75}})), one).value().item() ==
        doctest::Approx(-std::log(0.75)).epsilon(1e-14));
  CHECK(cross_entropy(t.constant(Tensor::matrix({{1.0, 0.0}})), one).value().item() ==
        doctest::Approx(-std::log(kLogClamp)));
  const std::vector<std::int32_t> bad{2};
  CHECK_THROWS_AS(cross_entropy(t.constant(Tensor::matrix({{0.5, 0.5}})), bad), IndexError);
}

TEST_CASE("backward examples") {
  Parameter x("x", Tensor({2, 3}, 0.7));
  {
    Tape t;
    t.backward(sum(t.parameter(x)));
  }
  CHECK(x.grad == Tensor({2, 3}, 1.0));

  Parameter s("s", Tensor::scalar(3.0));
  {
    Tape t;
    const Var v = t.parameter(s);
    t.backward(mul(v, v));
  }
  CHECK(s.grad.item() == 6.0);

  Tape t;
  CHECK_THROWS_AS(t.backward(t.parameter(x)), ContractError);
}

TEST_CASE("tape is cleared after backward") {
  Parameter x("x", Tensor({1, 2}, 1.0));
  Tape t;
  const Var loss = sum(t.parameter(x));
  t.backward(loss);
  CHECK(t.size() == 0);
  CHECK_THROWS_AS(loss.value(), ContractError);
}

TEST_CASE("operations reject mismatched shapes") {
  Tape t;
  const Var a = t.constant(Tensor({2, 3})), b = t.constant(Tensor({3, 2}));
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(mul(a, b), ShapeError);
  CHECK_THROWS_AS(add_bias(a, t.constant(Tensor({2}))), ShapeError);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  const std::vector<std::int32_t> ids{0, 4};
  CHECK_THROWS_AS(embedding(t.constant(Tensor({4, 2})), ids), IndexError);
  Rng rng(1);
  CHECK_THROWS_AS(dropout(a, 1.0, rng), ContractError);
  Tape other;
  CHECK_THROWS_AS(add(a, other.constant(Tensor({2, 3}))), ContractError);
}

TEST_CASE("every differentiable op passes central differences on 20 seeds") {
  using Builder = std::function<Var(Tape&, std::vector<Var>&, Rng&)>;
  struct Case {
    const char* name;
    std::vector<Shape> shapes;
    Builder build;
    Shape out;
  };
  const std::vector<std::uint8_t> mask{1, 0, 1, 1};
  const std::vector<std::int32_t> ids{2, 0, 2, 1};
  const std::vector<std::int32_t> labels{1, 0, 2};
  const std::vector<Case> cases{
      {"matmul", {{3, 4}, {4, 2}}, [](Tape&, auto& v, Rng&) { return matmul(v[0], v[1]); }, {3, 2}},
      {"transpose", {{3, 4}}, [](Tape&, auto& v, Rng&) { return transpose(v[0]); }, {4, 3}},
      {"add_sub_mul", {{2, 3}, {2, 3}},
       [](Tape&, auto& v, Rng&) { return mul(add(v[0], v[1]), sub(v[0], scale(v[1], 0.5))); }, {2, 3}},
      {"add_bias", {{3, 4}, {4}}, [](Tape&, auto& v, Rng&) { return add_bias(v[0], v[1]); }, {3, 4}},
      {"sigmoid_tanh", {{2, 5}}, [](Tape&, auto& v, Rng&) { return mul(sigmoid(v[0]), tanh(v[0])); }, {2, 5}},
      {"gelu", {{3, 4}}, [](Tape&, auto& v, Rng&) { return gelu(v[0]); }, {3, 4}},
      {"softmax_masked", {{3, 4}}, [&](Tape&, auto& v, Rng&) { return softmax(v[0], mask); }, {3, 4}},
      {"dropout", {{3, 4}}, [](Tape&, auto& v, Rng& r) { return dropout(v[0], 0.3, r); }, {3, 4}},
      {"layer_norm", {{3, 5}, {5}, {5}}, [](Tape&, auto& v, Rng&) { return layer_norm(v[0], v[1], v[2]); }, {3, 5}},
      {"embedding", {{3, 4}}, [&](Tape&, auto& v, Rng&) { return embedding(v[0], ids); }, {4, 4}},
      {"slice_concat", {{2, 6}, {2, 3}},
       [](Tape&, auto& v, Rng&) {
         const std::vector<Var> parts{slice_cols(v[0], 1, 4), v[1], slice_cols(v[0], 0, 2)};
         return concat_cols(parts);
       },
       {2, 8}},
      {"select_stack", {{3, 4}},
       [](Tape&, auto& v, Rng&) {
         const std::vector<Var> rows{select_row(v[0], 2), select_row(v[0], 0), select_row(v[0], 2)};
         return stack_rows(rows);
       },
       {3, 4}},
      {"sum_squares", {{3, 3}}, [](Tape& t, auto& v, Rng&) { return mul(sum_squares(v[0]), t.constant(Tensor::scalar(0.1))); },
       {}},
      {"cross_entropy", {{3, 3}}, [&](Tape&, auto& v, Rng&) { return cross_entropy(softmax(v[0]), labels); }, {}},
  };
  for (const Case& c : cases) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(1000 + seed);
      std::vector<Parameter> params;
      for (const Shape& s : c.shapes) params.emplace_back("p", random_tensor(s, rng));
      const Tensor w = random_tensor(c.out, rng, 0.3);
      const std::uint64_t drop_seed = rng();
      std::vector<Parameter*> ptrs;
      for (Parameter& p : params) ptrs.push_back(&p);
      const GradCheckResult r = check_gradients(c.name, ptrs, [&](Tape& t) {
        std::vector<Var> vars;
        for (Parameter& p : params) vars.push_back(t.parameter(p));
        Rng drop(drop_seed);
        const Var out = c.build(t, vars, drop);
        return c.out.empty() ? out : weighted(t, out, w);
      });
      INFO(c.name << " seed " << seed << " rel " << r.max_rel_error);
      REQUIRE(r.passed);
    }
  }
}

TEST_CASE("gradient sink receives the same gradients as the parameters") {
  Rng rng(21);
  Parameter a("a", random_tensor({3, 4}, rng)), b("b", random_tensor({4}, rng));
  a.slot = 1;
  b.slot = 0;
  auto loss = [&](Tape& t) { return sum_squares(tanh(add_bias(t.parameter(a), t.parameter(b)))); };
  a.zero_grad();
  b.zero_grad();
  {
    Tape t;
    t.backward(loss(t));
  }
  std::vector<Tensor> sink{Tensor(b.value.shape()), Tensor(a.value.shape())};
  {
    Tape t(&sink);
    t.backward(loss(t));
  }
  CHECK(sink[1] == a.grad);
  CHECK(sink[0] == b.grad);
}

TEST_CASE("repeated backward passes are bit-identical") {
  Rng rng(22);
  Parameter w("w", random_tensor({5, 5}, rng)), x("x", random_tensor({3, 5}, rng));
  const std::uint64_t drop_seed = rng();
  auto run = [&] {
    w.zero_grad();
    x.zero_grad();
    Tape t;
    Rng drop(drop_seed);
    const Var h = dropout(gelu(matmul(t.parameter(x), t.parameter(w))), 0.2, drop);
    t.backward(sum(softmax(h)));
    return std::pair{w.grad, x.grad};
  };
  const auto first = run();
  const auto second = run();
  CHECK(first.first == second.first);
  CHECK(first.second == second.second);
}

TEST_CASE("parameter leaves are shared within a tape") {
  Parameter p("p", Tensor({1, 2}, 1.0));
  Tape t;
  const Var a = t.parameter(p), b = t.parameter(p);
  CHECK(a.id() == b.id());
  t.backward(sum(add(a, b)));
  CHECK(p.grad == Tensor({1, 2}, 2.0));
}
