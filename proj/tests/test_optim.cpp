#include <cmath>
#include <vector>

#include <doctest.h>

#include "pmim/optim.hpp"

#include "helpers.hpp"

using namespace pmim;

TEST_CASE("lr schedule: warmup is linear from zero") {
  CHECK(lr_schedule(0, 100, 10, 1.0, 0.01) == 0.0);
  CHECK(lr_schedule(5, 100, 10, 1.0, 0.01) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(lr_schedule(10, 100, 10, 1.0, 0.01) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("lr schedule: cosine tail hits min_lr exactly at the last step") {
  CHECK(lr_schedule(99, 100, 10, 1.0, 0.01) == doctest::Approx(0.01).epsilon(1e-15));
  // midpoint of the cosine span sits halfway between peak and min
  const double mid = (10 + 99) / 2.0;
  CHECK(lr_schedule(mid, 100, 10, 1.0, 0.01) ==
        doctest::Approx(0.5 * (1.0 + 0.01)).epsilon(1e-12));
}

TEST_CASE("lr schedule: continuous at the warmup boundary and monotone after") {
  const double before = lr_schedule(9.999999, 100, 10, 1.0, 0.01);
  const double at = lr_schedule(10, 100, 10, 1.0, 0.01);
  CHECK(std::abs(before - at) < 1e-5);
  double prev = at;
  for (int s = 11; s < 100; ++s) {
    const double cur = lr_schedule(s, 100, 10, 1.0, 0.01);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("lr schedule: degenerate spans") {
  // no warmup
  CHECK(lr_schedule(0, 50, 0, 1.0, 0.1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(lr_schedule(49, 50, 0, 1.0, 0.1) == doctest::Approx(0.1).epsilon(1e-12));
  // single step total
  CHECK(lr_schedule(0, 1, 0, 1.0, 0.1) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("gradient_norm is the global l2 norm") {
  ParamStore<double> ps;
  auto* a = ps.add("a", 1, 2);
  auto* b = ps.add("b", 2, 1);
  a->grad << 3, 0;
  b->grad << 0, 4;
  CHECK(gradient_norm(ps) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("clip_gradients is a bitwise no-op within bounds") {
  ParamStore<double> ps;
  auto* a = ps.add("a", 1, 3);
  a->grad << 0.1, -0.2, 0.2;
  const Matd before = a->grad;
  const double norm = clip_gradients(ps, 10.0);
  CHECK(norm == doctest::Approx(0.3).epsilon(1e-12));
  CHECK((a->grad - before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("clip_gradients rescales to the bound and reports pre-clip norm") {
  ParamStore<double> ps;
  auto* a = ps.add("a", 1, 2);
  a->grad << 3, 4;
  const double norm = clip_gradients(ps, 1.0);
  CHECK(norm == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(gradient_norm(ps) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a->grad(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(a->grad(0, 1) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("adamw first step matches the closed form") {
  // with zero moments, one step moves by -lr * g/|g| regardless of scale
  // (bias correction cancels), up to eps
  ParamStore<double> ps;
  auto* p = ps.add("x", 1, 2);
  p->value << 1.0, -2.0;
  p->grad << 0.3, -0.7;
  AdamW<double> opt(ps, 0.9, 0.999, 1e-8, 0.0);
  opt.step(ps, 0.01);
  const double want0 = 1.0 - 0.01 * 0.3 / (std::abs(0.3) + 1e-8);
  const double want1 = -2.0 + 0.01 * 0.7 / (std::abs(0.7) + 1e-8);
  CHECK(p->value(0, 0) == doctest::Approx(want0).epsilon(1e-12));
  CHECK(p->value(0, 1) == doctest::Approx(want1).epsilon(1e-12));
}

TEST_CASE("adamw two-step hand computation") {
  ParamStore<double> ps;
  auto* p = ps.add("x", 1, 1);
  p->value << 2.0;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.1;
  AdamW<double> opt(ps, b1, b2, eps, 0.0);
  double m = 0, v = 0, x = 2.0;
  const double grads[2] = {0.5, -0.25};
  for (int t = 1; t <= 2; ++t) {
    const double g = grads[t - 1];
    p->grad << g;
    opt.step(ps, lr);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
    CHECK(p->value(0, 0) == doctest::Approx(x).epsilon(1e-12));
  }
  CHECK(opt.steps_taken() == 2);
}

TEST_CASE("weight decay applies to .w tensors only, before the moment update") {
  ParamStore<double> ps;
  auto* w = ps.add("layers.0.attn.q.w", 1, 1);
  auto* b = ps.add("layers.0.attn.q.b", 1, 1);
  auto* g = ps.add("layers.0.ln1.g", 1, 1);
  auto* tok = ps.add("embed.mask_token", 1, 1);
  w->value << 1.0;
  b->value << 1.0;
  g->value << 1.0;
  tok->value << 1.0;
  // zero gradients: any movement is pure decay
  const double lr = 0.1, wd = 0.5;
  AdamW<double> opt(ps, 0.9, 0.999, 1e-8, wd);
  opt.step(ps, lr);
  CHECK(w->value(0, 0) == doctest::Approx(1.0 - lr * wd).epsilon(1e-12));
  CHECK(b->value(0, 0) == 1.0);
  CHECK(g->value(0, 0) == 1.0);
  CHECK(tok->value(0, 0) == 1.0);
}

TEST_CASE("decay scope predicate") {
  CHECK(AdamW<double>::decays("head.w"));
  CHECK(AdamW<double>::decays("layers.3.mlp1.fc1.w"));
  CHECK(!AdamW<double>::decays("head.b"));
  CHECK(!AdamW<double>::decays("final_norm.g"));
  CHECK(!AdamW<double>::decays("embed.pos"));
  CHECK(!AdamW<double>::decays("embed.mask_token"));
  CHECK(!AdamW<double>::decays("w"));  // needs the ".w" suffix
}

TEST_CASE("decay multiplies the value seen by the gradient step") {
  // decayed value first, then the adam move on top of it
  ParamStore<double> ps;
  auto* w = ps.add("x.w", 1, 1);
  w->value << 2.0;
  w->grad << 1.0;
  const double lr = 0.1, wd = 0.5, eps = 1e-8;
  AdamW<double> opt(ps, 0.9, 0.999, eps, wd);
  opt.step(ps, lr);
  const double want = 2.0 * (1 - lr * wd) - lr * 1.0 / (1.0 + eps);
  CHECK(w->value(0, 0) == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("moment accessors expose state for checkpointing") {
  ParamStore<double> ps;
  auto* p = ps.add("x", 2, 2);
  p->grad.setConstant(0.5);
  AdamW<double> opt(ps, 0.9, 0.999, 1e-8, 0.0);
  opt.step(ps, 0.01);
  REQUIRE(opt.size() == 1);
  CHECK(opt.first_moment(0)(0, 0) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(opt.second_moment(0)(0, 0) == doctest::Approx(0.00025).epsilon(1e-12));
  opt.set_steps_taken(7);
  CHECK(opt.steps_taken() == 7);
}

TEST_CASE("optimizer converges on a quadratic") {
  ParamStore<double> ps;
  auto* p = ps.add("x.w", 1, 1);
  p->value << 4.0;
  AdamW<double> opt(ps, 0.9, 0.999, 1e-8, 0.0);
  for (int i = 0; i < 2000; ++i) {
    p->grad << 2.0 * (p->value(0, 0) - 1.5);
    opt.step(ps, 0.01);
  }
  CHECK(p->value(0, 0) == doctest::Approx(1.5).epsilon(1e-3));
}
