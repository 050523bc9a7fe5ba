#include <doctest.h>

#include <cmath>

#include "nodebench/ops.hpp"
#include "nodebench/optim.hpp"
#include "nodebench/tape.hpp"
#include "support.hpp"

using namespace nodebench;
using nodebench::testing::fd_check;
using nodebench::testing::random_tensor;

TEST_CASE("tensor shape invariants") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  CHECK_THROWS_AS(Tensor({0, 3}), ShapeError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK_FALSE(t.has_grad());
  CHECK(t.grad().size() == 6);
  Tensor c = t.clone();
  c.mutable_data()[0] = 9.0;
  CHECK(t[0] == 1.5);
}

TEST_CASE("backward on a quadratic") {
  Tensor x = Tensor::from({1.0, 2.0, 3.0});
  x.set_requires_grad(true);
  backward(sum(mul(x, x)));
  const auto g = x.grad();
  CHECK(g[0] == 2.0);
  CHECK(g[1] == 4.0);
  CHECK(g[2] == 6.0);
  CHECK(Tape::active().size() == 0);
}

TEST_CASE("backward accumulates across calls") {
  Tensor x = Tensor::from({1.0, -2.0});
  x.set_requires_grad(true);
  backward(sum(scale(x, 3.0)));
  backward(sum(scale(x, 3.0)));
  CHECK(x.grad()[0] == 6.0);
  CHECK(x.grad()[1] == 6.0);
}

TEST_CASE("relu gradient at and below the kink") {
  Tensor x = Tensor::from({-1.0, 0.0, 2.0});
  x.set_requires_grad(true);
  backward(sum(relu(x)));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 1.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
  Tensor x = Tensor::from({1.0, 2.0});
  x.set_requires_grad(true);
  Tensor y = scale(x, 2.0);
  CHECK_THROWS_AS(backward(y), UsageError);
  Tape::active().clear();
}

TEST_CASE("tape replay visits each node once and clear releases intermediates") {
  Tensor x = Tensor::from({0.5, 1.5});
  x.set_requires_grad(true);
  Tensor a = mul(x, x);
  Tensor b = relu(a);
  Tensor loss = sum(b);
  CHECK(Tape::active().size() == 3);
  loss.grad_buffer()[0] = 1.0;
  CHECK(Tape::active().replay() == 3);
  Tape::active().clear();
  CHECK(Tape::active().size() == 0);
  CHECK(x.grad()[0] == doctest::Approx(1.0));
}

TEST_CASE("no-grad guard records nothing") {
  Tensor x = Tensor::from({1.0});
  x.set_requires_grad(true);
  {
    NoGradGuard g;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(Tape::active().size() == 0);
}

TEST_CASE("non-finite forward values raise") {
  Tensor x = Tensor::from({1e308});
  CHECK_THROWS_AS(scale(x, 10.0), NumericError);
}

TEST_CASE("ops do not mutate their inputs") {
  Tensor x = random_tensor({2, 3, 5, 5}, 1);
  Tensor w = random_tensor({4, 3, 3, 3}, 2);
  Tensor b = random_tensor({4}, 3);
  const Tensor x0 = x.clone(), w0 = w.clone();
  (void)conv2d(x, w, b, 1, 1);
  (void)group_norm(x, 3, 1e-5, Tensor({3}, 1.0), Tensor({3}, 0.0));
  (void)relu(x);
  CHECK(bitwise_equal(x, x0));
  CHECK(bitwise_equal(w, w0));
}

// -- conv2d -------------------------------------------------------------------

TEST_CASE("conv2d of ones") {
  Tensor out = conv2d(Tensor({1, 1, 3, 3}, 1.0), Tensor({1, 1, 3, 3}, 1.0), Tensor({1}, 0.0), 1, 0);
  CHECK(out.shape() == Shape{1, 1, 1, 1});
  CHECK(out[0] == 9.0);
}

TEST_CASE("conv2d with a centred delta kernel is the identity") {
  Tensor x = random_tensor({2, 1, 6, 6}, 5);
  Tensor w({1, 1, 3, 3}, 0.0);
  w.mutable_data()[4] = 1.0;
  CHECK(bitwise_equal(conv2d(x, w, Tensor({1}, 0.0), 1, 1), x));
}

TEST_CASE("conv2d matches the nested-loop reference") {
  Tensor x = random_tensor({2, 3, 8, 8}, 11);
  Tensor w = random_tensor({4, 3, 3, 3}, 12);
  Tensor b = random_tensor({4}, 13);
  Tensor out = conv2d(x, w, b, 2, 1);
  const auto ref = nodebench::testing::conv2d_reference(x, w, b, 2, 1);
  CHECK(out.shape() == Shape{2, 4, 4, 4});
  double worst = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(out[i] - ref[i]));
  CHECK(worst <= 1e-12);
}

TEST_CASE("conv2d shape errors") {
  CHECK_THROWS_AS(conv2d(Tensor({1, 2, 4, 4}), Tensor({1, 3, 3, 3}), Tensor({1}), 1, 0), ShapeError);
  CHECK_THROWS_AS(conv2d(Tensor({1, 1, 2, 2}), Tensor({1, 1, 3, 3}), Tensor({1}), 1, 0), ShapeError);
}

// -- group norm -----------------------------------------------------------------

TEST_CASE("group_norm of a constant input is zero") {
  Tensor out = group_norm(Tensor({1, 4, 3, 3}, 7.0), 2, 1e-5, Tensor({4}, 1.0), Tensor({4}, 0.0));
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("group_norm with zero scale returns the shift") {
  Tensor out = group_norm(random_tensor({2, 4, 3, 3}, 3), 2, 1e-5, Tensor({4}, 0.0), Tensor({4}, 2.5));
  for (double v : out.data()) CHECK(v == 2.5);
}

TEST_CASE("group_norm standardizes each group") {
  Tensor x = random_tensor({2, 4, 2, 2}, 21, -3.0, 5.0);
  Tensor out = group_norm(x, 2, 1e-12, Tensor({4}, 1.0), Tensor({4}, 0.0));
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t g = 0; g < 2; ++g) {
      double m = 0.0, v = 0.0;
      const std::size_t base = n * 16 + g * 8;
      for (std::size_t i = 0; i < 8; ++i) m += out[base + i];
      m /= 8.0;
      for (std::size_t i = 0; i < 8; ++i) v += (out[base + i] - m) * (out[base + i] - m);
      v /= 8.0;
      CHECK(std::abs(m) <= 1e-10);
      CHECK(std::abs(v - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("group_norm rejects indivisible channel counts") {
  CHECK_THROWS_AS(group_norm(Tensor({1, 6, 2, 2}), 4, 1e-5, Tensor({6}, 1.0), Tensor({6}, 0.0)),
                  ConfigError);
}

// -- cross entropy ------------------------------------------------------------

TEST_CASE("cross entropy closed forms") {
  const std::vector<int> label{3};
  CHECK(softmax_cross_entropy(Tensor({1, 10}, 0.0), label).item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  Tensor saturated({1, 10}, 0.0);
  saturated.mutable_data()[3] = 50.0;
  CHECK(softmax_cross_entropy(saturated, label).item() < 1e-9);
}

TEST_CASE("cross entropy matches a log-sum-exp reference") {
  Tensor logits = random_tensor({3, 5}, 31, -4.0, 4.0);
  const std::vector<int> labels{0, 4, 2};
  const double ref = nodebench::testing::cross_entropy_reference(logits, labels);
  CHECK(std::abs(softmax_cross_entropy(logits, labels).item() - ref) <= 1e-12);
  CHECK(std::abs(softmax_cross_entropy(logits, labels, Reduction::kSum).item() - 3.0 * ref) <= 1e-12);
}

TEST_CASE("cross entropy rejects out-of-range labels") {
  const std::vector<int> bad{5};
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor({1, 5}), bad), InputError);
  const std::vector<int> negative{-1};
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor({1, 5}), negative), InputError);
}

// -- pooling, linear, concat --------------------------------------------------------

TEST_CASE("pooling and concat shapes and values") {
  Tensor x({1, 1, 4, 4}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
  Tensor mp = max_pool2d(x, 2, 2);
  CHECK(mp.shape() == Shape{1, 1, 2, 2});
  CHECK(mp[0] == 6.0);
  CHECK(mp[3] == 16.0);
  Tensor ap = adaptive_avg_pool2d(x);
  CHECK(ap.shape() == Shape{1, 1, 1, 1});
  CHECK(ap[0] == 8.5);
  Tensor cc = channel_concat(x, Tensor({1, 1, 4, 4}, 0.3));
  CHECK(cc.shape() == Shape{1, 2, 4, 4});
  CHECK(cc[16] == 0.3);
  CHECK_THROWS_AS(channel_concat(x, Tensor({1, 1, 3, 4})), ShapeError);
}

TEST_CASE("linear output of a sample does not depend on the rest of the batch") {
  Tensor w = random_tensor({10, 64}, 41), b = random_tensor({10}, 42);
  Tensor batch = random_tensor({37, 64}, 43);
  Tensor all = linear(batch, w, b);
  const std::vector<std::size_t> one{17};
  Tensor single = linear(gather_batch(batch, one), w, b);
  for (std::size_t j = 0; j < 10; ++j) CHECK(single[j] == all[17 * 10 + j]);
}

// -- finite-difference sweeps ---------------------------------------------------

TEST_CASE("every primitive agrees with central differences") {
  Tensor x = random_tensor({2, 3, 5, 5}, 51, -1.0, 1.0, true);
  Tensor w = random_tensor({4, 3, 3, 3}, 52, -0.5, 0.5, true);
  Tensor b = random_tensor({4}, 53, -0.5, 0.5, true);
  Tensor gs = random_tensor({4}, 54, 0.5, 1.5, true);
  Tensor gb = random_tensor({4}, 55, -0.5, 0.5, true);
  Tensor lw = random_tensor({3, 8}, 56, -0.5, 0.5, true);
  Tensor lb = random_tensor({3}, 57, -0.5, 0.5, true);
  const std::vector<int> labels{2, 0};

  SUBCASE("conv, group norm, relu, pooling, linear, cross entropy") {
    auto loss = [&] {
      Tensor h = conv2d(x, w, b, 1, 1);
      h = relu(group_norm(h, 2, 1e-5, gs, gb));
      Tensor pooled = max_pool2d(h, 2, 2);  // [2,4,2,2]
      Tensor feat = channel_concat(adaptive_avg_pool2d(h), adaptive_avg_pool2d(pooled));
      return softmax_cross_entropy(linear(flatten(feat), lw, lb), labels);
    };
    auto r = fd_check(loss, {{"x", x}, {"w", w}, {"b", b}, {"gs", gs}, {"gb", gb}, {"lw", lw}, {"lb", lb}}, 120, 7);
    INFO(r.worst);
    CHECK(r.failures == 0);
  }

  SUBCASE("max pool, strided conv, abs, sample norm") {
    auto loss = [&] {
      Tensor h = conv2d(x, w, b, 2, 1);
      Tensor p = max_pool2d(relu(h), 2, 1);
      return add(sum(sample_l2_norm(p)), mean(abs(sub(h, scale(h, 0.25)))));
    };
    auto r = fd_check(loss, {{"x", x}, {"w", w}, {"b", b}}, 80, 8);
    INFO(r.worst);
    CHECK(r.failures == 0);
  }

  SUBCASE("summed cross entropy through linear") {
    Tensor in = random_tensor({2, 8}, 58, -1.0, 1.0, true);
    auto loss = [&] { return softmax_cross_entropy(linear(in, lw, lb), labels, Reduction::kSum); };
    auto r = fd_check(loss, {{"in", in}, {"lw", lw}, {"lb", lb}}, 40, 9);
    INFO(r.worst);
    CHECK(r.failures == 0);
  }
}

TEST_CASE("forward is bitwise deterministic") {
  Tensor x = random_tensor({2, 3, 6, 6}, 61);
  Tensor w = random_tensor({4, 3, 3, 3}, 62);
  Tensor b = random_tensor({4}, 63);
  auto run = [&] { return group_norm(conv2d(x, w, b, 1, 1), 2, 1e-5, Tensor({4}, 1.0), Tensor({4}, 0.0)); };
  CHECK(bitwise_equal(run(), run()));
}

// -- optimizer ----------------------------------------------------------------------

TEST_CASE("sgd with zero gradient applies exact decoupled decay") {
  Tensor p = random_tensor({5}, 71, -1.0, 1.0, true);
  const Tensor before = p.clone();
  Sgd opt({p}, SgdOptions{0.1, 0.9, 0.0005});
  p.grad_buffer();
  opt.step();
  for (std::size_t i = 0; i < 5; ++i) CHECK(p[i] == before[i] * (1.0 - 0.1 * 0.0005));
}

TEST_CASE("sgd momentum recurrence") {
  Tensor p = Tensor::from({1.0});
  p.set_requires_grad(true);
  Sgd opt({p}, SgdOptions{0.5, 0.9, 0.0});
  p.grad_buffer()[0] = 1.0;
  opt.step();  // v = 1, w = 1 - 0.5
  CHECK(p[0] == 0.5);
  opt.step();  // v = 1.9, w = 0.5 - 0.95
  CHECK(p[0] == doctest::Approx(-0.45).epsilon(1e-15));
}
