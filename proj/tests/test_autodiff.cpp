#include <cmath>
#include <stdexcept>
#include <vector>

#include <doctest.h>

#include "pmim/autodiff.hpp"

#include "helpers.hpp"

using namespace pmim;
using testutil::max_gradient_error;
using testutil::random_matrix;

namespace {
constexpr double kTol = 1e-6;
}

TEST_CASE("linear forward: y = x w^T + b") {
  ParamStore<double> ps;
  auto* x = ps.add("x", 1, 2);
  auto* w = ps.add("w", 2, 2);
  auto* b = ps.add("b", 1, 2);
  x->value << 1, 2;
  w->value << 3, 4, 5, 6;
  b->value << 0.5, -1;
  Graph<double> g;
  auto* y = g.linear(g.leaf(*x), g.leaf(*w), g.leaf(*b));
  CHECK(y->value()(0, 0) == doctest::Approx(11.5).epsilon(1e-12));
  CHECK(y->value()(0, 1) == doctest::Approx(16.0).epsilon(1e-12));
}

TEST_CASE("linear gradients match finite differences") {
  ParamStore<double> ps;
  Rng rng(1);
  auto* x = ps.add("x", 3, 4);
  auto* w = ps.add("w", 5, 4);
  auto* b = ps.add("b", 1, 5);
  x->value = random_matrix<double>(3, 4, rng);
  w->value = random_matrix<double>(5, 4, rng);
  b->value = random_matrix<double>(1, 5, rng);
  const Matd target = random_matrix<double>(3, 5, rng);
  const double err = max_gradient_error(ps, [&](Graph<double>& g) {
    return g.sq_mean(g.linear(g.leaf(*x), g.leaf(*w), g.leaf(*b)), target);
  });
  CHECK(err < kTol);
}

TEST_CASE("layernorm forward normalizes each row") {
  ParamStore<double> ps;
  auto* x = ps.add("x", 1, 4);
  auto* gm = ps.add("g", 1, 4);
  auto* bt = ps.add("b", 1, 4);
  x->value << 1, 2, 3, 4;
  gm->value.setOnes();
  Graph<double> g;
  auto* y = g.layernorm(g.leaf(*x), g.leaf(*gm), g.leaf(*bt), 1e-12);
  CHECK(y->value().row(0).mean() == doctest::Approx(0.0).epsilon(1e-10));
  const double want = 1.5 / std::sqrt(1.25);
  CHECK(y->value()(0, 3) == doctest::Approx(want).epsilon(1e-9));
  CHECK(y->value()(0, 0) == doctest::Approx(-want).epsilon(1e-9));
}

TEST_CASE("layernorm gradients match finite differences") {
  ParamStore<double> ps;
  Rng rng(2);
  auto* x = ps.add("x", 4, 6);
  auto* gm = ps.add("g", 1, 6);
  auto* bt = ps.add("b", 1, 6);
  x->value = random_matrix<double>(4, 6, rng);
  gm->value = random_matrix<double>(1, 6, rng, 0.5);
  gm->value.array() += 1.0;
  bt->value = random_matrix<double>(1, 6, rng);
  const Matd target = random_matrix<double>(4, 6, rng);
  const double err = max_gradient_error(ps, [&](Graph<double>& g) {
    return g.sq_mean(g.layernorm(g.leaf(*x), g.leaf(*gm), g.leaf(*bt), 1e-5),
                     target);
  });
  CHECK(err < kTol);
}

TEST_CASE("gelu forward hand values (erf form)") {
  ParamStore<double> ps;
  auto* x = ps.add("x", 1, 3);
  x->value << 0.0, 1.0, -1.0;
  Graph<double> g;
  auto* y = g.gelu(g.leaf(*x));
  CHECK(y->value()(0, 0) == 0.0);
  CHECK(y->value()(0, 1) == doctest::Approx(0.8413447460685429).epsilon(1e-14));
  CHECK(y->value()(0, 2) == doctest::Approx(-0.15865525393145707).epsilon(1e-14));
}

TEST_CASE("gelu gradients match finite differences") {
  ParamStore<double> ps;
  Rng rng(3);
  auto* x = ps.add("x", 3, 5);
  x->value = random_matrix<double>(3, 5, rng, 2.0);
  const Matd target = random_matrix<double>(3, 5, rng);
  const double err = max_gradient_error(ps, [&](Graph<double>& g) {
    return g.sq_mean(g.gelu(g.leaf(*x)), target);
  });
  CHECK(err < kTol);
}

TEST_CASE("add gradients flow to both operands") {
  ParamStore<double> ps;
  Rng rng(4);
  auto* a = ps.add("a", 2, 3);
  auto* b = ps.add("b", 2, 3);
  a->value = random_matrix<double>(2, 3, rng);
  b->value = random_matrix<double>(2, 3, rng);
  const Matd target = random_matrix<double>(2, 3, rng);
  const double err = max_gradient_error(ps, [&](Graph<double>& g) {
    return g.sq_mean(g.add(g.leaf(*a), g.leaf(*b)), target);
  });
  CHECK(err < kTol);
}

TEST_CASE("reusing one node doubles its gradient") {
  ParamStore<double> ps;
  auto* x = ps.add("x", 1, 1);
  x->value << 3.0;
  Graph<double> g;
  auto* leaf = g.leaf(*x);
  auto* y = g.add(leaf, leaf);  // y = 2x, loss = (2x)^2, d/dx = 8x
  auto* loss = g.sq_mean(y, Matd::Zero(1, 1));
  g.backward(loss);
  CHECK(x->grad(0, 0) == doctest::Approx(24.0).epsilon(1e-12));
}

TEST_CASE("gather_rows picks rows and accumulates repeated indices") {
  ParamStore<double> ps;
  Rng rng(5);
  auto* table = ps.add("t", 6, 4);
  table->value = random_matrix<double>(6, 4, rng);
  {
    Graph<double> g;
    auto* y = g.gather_rows(g.leaf(*table), {3, 0, 3, 5});
    REQUIRE(y->rows() == 4);
    CHECK(y->value().row(0).isApprox(table->value.row(3)));
    CHECK(y->value().row(2).isApprox(table->value.row(3)));
    CHECK(y->value().row(3).isApprox(table->value.row(5)));
  }
  const Matd target = random_matrix<double>(4, 4, rng);
  const double err = max_gradient_error(ps, [&](Graph<double>& g) {
    return g.sq_mean(g.gather_rows(g.leaf(*table), {3, 0, 3, 5}), target);
  });
  CHECK(err < kTol);
}

TEST_CASE("concat_tokens interleaves per image and slice_tokens inverts it") {
  ParamStore<double> ps;
  Rng rng(6);
  auto* a = ps.add("a", 4, 3);  // batch 2, 2 tokens each
  auto* b = ps.add("b", 2, 3);  // batch 2, 1 token each
  a->value = random_matrix<double>(4, 3, rng);
  b->value = random_matrix<double>(2, 3, rng);
  {
    Graph<double> g;
    auto* cat = g.concat_tokens(g.leaf(*a), g.leaf(*b), 2, 2, 1);
    REQUIRE(cat->rows() == 6);
    CHECK(cat->value().row(0).isApprox(a->value.row(0)));
    CHECK(cat->value().row(1).isApprox(a->value.row(1)));
    CHECK(cat->value().row(2).isApprox(b->value.row(0)));
    CHECK(cat->value().row(3).isApprox(a->value.row(2)));
    CHECK(cat->value().row(5).isApprox(b->value.row(1)));
    auto* back_a = g.slice_tokens(cat, 2, 3, 0, 2);
    auto* back_b = g.slice_tokens(cat, 2, 3, 2, 1);
    CHECK(back_a->value().isApprox(a->value));
    CHECK(back_b->value().isApprox(b->value));
  }
  const Matd target = random_matrix<double>(2, 3, rng);
  const double err = max_gradient_error(ps, [&](Graph<double>& g) {
    auto* cat = g.concat_tokens(g.leaf(*a), g.leaf(*b), 2, 2, 1);
    return g.sq_mean(g.slice_tokens(cat, 2, 3, 1, 1), target);
  });
  CHECK(err < kTol);
}

TEST_CASE("attention probabilities are row-stochastic") {
  ParamStore<double> ps;
  Rng rng(7);
  auto* q = ps.add("q", 6, 8);  // batch 2, 3 queries
  auto* k = ps.add("k", 8, 8);  // batch 2, 4 keys
  auto* v = ps.add("v", 8, 8);
  q->value = random_matrix<double>(6, 8, rng, 2.0);
  k->value = random_matrix<double>(8, 8, rng, 2.0);
  v->value = random_matrix<double>(8, 8, rng);
  Graph<double> g;
  std::vector<std::vector<Matd>> probs;
  g.attention(g.leaf(*q), g.leaf(*k), g.leaf(*v), 2, 2, &probs);
  REQUIRE(probs.size() == 2);
  for (const auto& per_image : probs) {
    REQUIRE(per_image.size() == 2);
    for (const auto& a : per_image) {
      REQUIRE(a.rows() == 3);
      REQUIRE(a.cols() == 4);
      for (int r = 0; r < a.rows(); ++r) {
        CHECK(a.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(a.row(r).minCoeff() > 0.0);
      }
    }
  }
}

TEST_CASE("attention with identical keys averages the values") {
  ParamStore<double> ps;
  Rng rng(8);
  auto* q = ps.add("q", 1, 4);
  auto* k = ps.add("k", 3, 4);
  auto* v = ps.add("v", 3, 4);
  q->value = random_matrix<double>(1, 4, rng);
  k->value.rowwise() = Eigen::RowVector4d(0.3, -0.2, 0.9, 0.1);
  v->value = random_matrix<double>(3, 4, rng);
  Graph<double> g;
  auto* y = g.attention(g.leaf(*q), g.leaf(*k), g.leaf(*v), 1, 1);
  CHECK(y->value().row(0).isApprox(v->value.colwise().mean(), 1e-12));
}

TEST_CASE("attention gradients match finite differences") {
  ParamStore<double> ps;
  Rng rng(9);
  auto* q = ps.add("q", 6, 8);
  auto* k = ps.add("k", 8, 8);
  auto* v = ps.add("v", 8, 8);
  q->value = random_matrix<double>(6, 8, rng);
  k->value = random_matrix<double>(8, 8, rng);
  v->value = random_matrix<double>(8, 8, rng);
  const Matd target = random_matrix<double>(6, 8, rng);
  const double err = max_gradient_error(ps, [&](Graph<double>& g) {
    return g.sq_mean(g.attention(g.leaf(*q), g.leaf(*k), g.leaf(*v), 2, 2),
                     target);
  });
  CHECK(err < kTol);
}

TEST_CASE("self-attention (shared q/k/v source) gradients are correct") {
  ParamStore<double> ps;
  Rng rng(10);
  auto* x = ps.add("x", 6, 8);
  auto* w = ps.add("w", 8, 8);
  auto* b = ps.add("b", 1, 8);
  x->value = random_matrix<double>(6, 8, rng);
  w->value = random_matrix<double>(8, 8, rng, 0.5);
  b->value = random_matrix<double>(1, 8, rng, 0.1);
  const Matd target = random_matrix<double>(6, 8, rng);
  const double err = max_gradient_error(ps, [&](Graph<double>& g) {
    auto* h = g.linear(g.leaf(*x), g.leaf(*w), g.leaf(*b));
    return g.sq_mean(g.attention(h, h, h, 2, 2), target);
  });
  CHECK(err < kTol);
}

TEST_CASE("scale_tokens scales per-image row blocks") {
  ParamStore<double> ps;
  Rng rng(11);
  auto* x = ps.add("x", 6, 4);  // batch 2, 3 tokens
  x->value = random_matrix<double>(6, 4, rng);
  {
    Graph<double> g;
    auto* y = g.scale_tokens(g.leaf(*x), 2, {0.5, 2.0});
    CHECK(y->value().topRows(3).isApprox(0.5 * x->value.topRows(3)));
    CHECK(y->value().bottomRows(3).isApprox(2.0 * x->value.bottomRows(3)));
  }
  const Matd target = random_matrix<double>(6, 4, rng);
  const double err = max_gradient_error(ps, [&](Graph<double>& g) {
    return g.sq_mean(g.scale_tokens(g.leaf(*x), 2, {0.5, 2.0}), target);
  });
  CHECK(err < kTol);
}

TEST_CASE("l1_mean forward and gradient away from the kink") {
  ParamStore<double> ps;
  auto* x = ps.add("x", 2, 2);
  x->value << 1, 2, 3, 4;
  Matd target(2, 2);
  target << 0, 2.5, 5, 3;
  {
    Graph<double> g;
    auto* loss = g.l1_mean(g.leaf(*x), target);
    CHECK(loss->value()(0, 0) == doctest::Approx((1 + 0.5 + 2 + 1) / 4.0).epsilon(1e-12));
  }
  const double err = max_gradient_error(ps, [&](Graph<double>& g) {
    return g.l1_mean(g.leaf(*x), target);
  });
  CHECK(err < kTol);
}

TEST_CASE("sq_mean forward and gradient") {
  ParamStore<double> ps;
  auto* x = ps.add("x", 1, 2);
  x->value << 3, -1;
  Matd target(1, 2);
  target << 1, 1;
  {
    Graph<double> g;
    CHECK(g.sq_mean(g.leaf(*x), target)->value()(0, 0) ==
          doctest::Approx(4.0).epsilon(1e-12));  // (4 + 4) / 2
  }
  const double err = max_gradient_error(ps, [&](Graph<double>& g) {
    return g.sq_mean(g.leaf(*x), target);
  });
  CHECK(err < kTol);
}

TEST_CASE("softmax cross-entropy forward and gradient") {
  ParamStore<double> ps;
  auto* x = ps.add("x", 1, 2);
  x->value << 0, 0;
  {
    Graph<double> g;
    CHECK(g.softmax_ce_mean(g.leaf(*x), {0})->value()(0, 0) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  Rng rng(12);
  auto* z = ps.add("z", 4, 3);
  z->value = random_matrix<double>(4, 3, rng, 2.0);
  const double err = max_gradient_error(ps, [&](Graph<double>& g) {
    auto* a = g.softmax_ce_mean(g.leaf(*x), {0});
    auto* b = g.softmax_ce_mean(g.leaf(*z), {0, 2, 1, 1});
    return g.add(a, b);
  });
  CHECK(err < kTol);
}

TEST_CASE("softmax cross-entropy rejects out-of-range labels") {
  ParamStore<double> ps;
  auto* x = ps.add("x", 1, 2);
  Graph<double> g;
  CHECK_THROWS_AS(g.softmax_ce_mean(g.leaf(*x), {2}), data_error);
  CHECK_THROWS_AS(g.softmax_ce_mean(g.leaf(*x), {-1}), data_error);
}

TEST_CASE("constants receive no gradient and do not block backward") {
  ParamStore<double> ps;
  auto* x = ps.add("x", 2, 2);
  x->value << 1, 2, 3, 4;
  Graph<double> g;
  auto* c = g.constant(Matd::Ones(2, 2));
  auto* y = g.add(g.leaf(*x), c);
  auto* loss = g.sq_mean(y, Matd::Zero(2, 2));
  g.backward(loss);
  CHECK(c->grad.size() == 0);
  CHECK(x->grad(0, 0) == doctest::Approx(2.0 * 2.0 / 4.0).epsilon(1e-12));
}

TEST_CASE("graphs built only from constants leave params untouched") {
  ParamStore<double> ps;
  auto* x = ps.add("x", 1, 1);
  x->value << 5;
  ps.zero_grads();
  Graph<double> g;
  auto* loss = g.sq_mean(g.constant(Matd::Ones(1, 3)), Matd::Zero(1, 3));
  g.backward(loss);
  CHECK(x->grad(0, 0) == 0.0);
}

TEST_CASE("backward requires a scalar root") {
  ParamStore<double> ps;
  auto* x = ps.add("x", 2, 2);
  Graph<double> g;
  auto* leaf = g.leaf(*x);
  CHECK_THROWS_AS(g.backward(leaf), std::logic_error);
}

TEST_CASE("deep composite graph gradients match finite differences") {
  ParamStore<double> ps;
  Rng rng(13);
  auto* x = ps.add("x", 4, 6);
  auto* w1 = ps.add("w1", 6, 6);
  auto* b1 = ps.add("b1", 1, 6);
  auto* gm = ps.add("gm", 1, 6);
  auto* bt = ps.add("bt", 1, 6);
  auto* w2 = ps.add("w2", 3, 6);
  auto* b2 = ps.add("b2", 1, 3);
  x->value = random_matrix<double>(4, 6, rng);
  w1->value = random_matrix<double>(6, 6, rng, 0.5);
  b1->value = random_matrix<double>(1, 6, rng, 0.1);
  gm->value.setOnes();
  bt->value = random_matrix<double>(1, 6, rng, 0.1);
  w2->value = random_matrix<double>(3, 6, rng, 0.5);
  b2->value = random_matrix<double>(1, 3, rng, 0.1);
  const double err = max_gradient_error(ps, [&](Graph<double>& g) {
    auto* xx = g.leaf(*x);
    auto* h = g.linear(xx, g.leaf(*w1), g.leaf(*b1));
    h = g.gelu(h);
    h = g.add(h, xx);  // residual
    h = g.layernorm(h, g.leaf(*gm), g.leaf(*bt), 1e-5);
    h = g.attention(h, h, h, 2, 2);
    auto* logits = g.linear(h, g.leaf(*w2), g.leaf(*b2));
    return g.softmax_ce_mean(logits, {0, 2, 1, 0});
  });
  CHECK(err < kTol);
}

TEST_CASE("node_count reflects allocations") {
  ParamStore<double> ps;
  auto* x = ps.add("x", 1, 1);
  Graph<double> g;
  CHECK(g.node_count() == 0);
  auto* leaf = g.leaf(*x);
  g.add(leaf, leaf);
  CHECK(g.node_count() == 2);
}
