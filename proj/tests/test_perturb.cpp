#include <doctest.h>

#include <cmath>

#include "nodebench/models.hpp"
#include "nodebench/ops.hpp"
#include "nodebench/perturb.hpp"
#include "support.hpp"

using namespace nodebench;
using nodebench::testing::random_tensor;

namespace {

const Normalization kUnit{0.0, 255.0};  // raw pixels -> [0, 1]

/// Two-class linear-softmax model on 1x2x2 images: the input gradient of the
/// loss keeps its sign along any straight path, so sign steps are optimal.
LinearClassifier binary_linear() {
  return LinearClassifier(Tensor({2, 4}, std::vector<double>{1.0, -2.0, 0.5, 3.0, -1.0, 1.0, 2.0, -0.5}),
                          Tensor({2}, std::vector<double>{0.1, -0.1}));
}

double summed_loss(const Classifier& m, const Tensor& x, const std::vector<int>& labels) {
  NoGradGuard g;
  return softmax_cross_entropy(m.forward(x), labels, Reduction::kSum).item();
}

double linf(const Tensor& a, const Tensor& b) { return max_abs_diff(a, b); }

}  // namespace

TEST_CASE("input gradient of a linear-softmax model has the closed form") {
  LinearClassifier m(random_tensor({5, 6}, 1, -1.0, 1.0, true), random_tensor({5}, 2, -1.0, 1.0, true));
  Tensor x = random_tensor({3, 6}, 3);
  const std::vector<int> labels{4, 0, 2};
  const Tensor g = input_gradient(m, x, labels);
  for (std::size_t s = 0; s < 3; ++s) {
    std::vector<double> logits(5), p(5);
    double mx = -1e300;
    for (std::size_t k = 0; k < 5; ++k) {
      logits[k] = m.bias()[k];
      for (std::size_t j = 0; j < 6; ++j) logits[k] += m.weight()[k * 6 + j] * x[s * 6 + j];
      mx = std::max(mx, logits[k]);
    }
    double z = 0.0;
    for (std::size_t k = 0; k < 5; ++k) z += std::exp(logits[k] - mx);
    for (std::size_t k = 0; k < 5; ++k) p[k] = std::exp(logits[k] - mx) / z - (static_cast<int>(k) == labels[s]);
    for (std::size_t j = 0; j < 6; ++j) {
      double expected = 0.0;
      for (std::size_t k = 0; k < 5; ++k) expected += m.weight()[k * 6 + j] * p[k];
      CHECK(std::abs(g[s * 6 + j] - expected) <= 1e-10);
    }
  }
  for (const auto& p : m.parameters()) {
    CHECK(p.requires_grad());
    CHECK_FALSE(p.has_grad());
  }
}

TEST_CASE("input gradient of a constant model is zero") {
  LinearClassifier m(Tensor({3, 4}, 0.0), Tensor({3}, 0.0));
  const std::vector<int> labels{1};
  const Tensor g = input_gradient(m, random_tensor({1, 4}, 5), labels);
  for (double v : g.data()) CHECK(v == 0.0);
}

TEST_CASE("input gradient of a conv model matches finite differences") {
  Model m(RmKind::kNode, model_config_for("synthetic"), 7);
  Tensor x = random_tensor({2, 1, 8, 8}, 8, -2.0, 2.0);
  const std::vector<int> labels{1, 6};
  const Tensor g = input_gradient(m, x, labels);
  std::mt19937_64 rng(9);
  std::size_t bad = 0;
  for (int c = 0; c < 50; ++c) {
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, x.numel() - 1)(rng);
    Tensor up = x.clone(), down = x.clone();
    up.mutable_data()[i] += 1e-5;
    down.mutable_data()[i] -= 1e-5;
    const double numeric = (summed_loss(m, up, labels) - summed_loss(m, down, labels)) / 2e-5;
    bad += !nodebench::testing::fd_agrees(g[i], numeric);
  }
  CHECK(bad == 0);
  for (const auto& p : m.parameters()) CHECK_FALSE(p.has_grad());
}

// -- gaussian ----------------------------------------------------------------------

TEST_CASE("gaussian noise statistics and determinism") {
  Tensor raw({1000000}, 128.0);
  const Tensor noisy = gaussian_perturb(raw, 100.0, 42);
  double mean = 0.0;
  for (std::size_t i = 0; i < raw.numel(); ++i) mean += noisy[i] - raw[i];
  mean /= static_cast<double>(raw.numel());
  double var = 0.0;
  for (std::size_t i = 0; i < raw.numel(); ++i) var += std::pow(noisy[i] - raw[i] - mean, 2);
  const double sd = std::sqrt(var / static_cast<double>(raw.numel()));
  CHECK(std::abs(mean) <= 0.5);
  CHECK(std::abs(sd - 100.0) <= 1.0);
  CHECK(bitwise_equal(noisy, gaussian_perturb(raw, 100.0, 42)));
  CHECK_FALSE(bitwise_equal(noisy, gaussian_perturb(raw, 100.0, 43)));
}

TEST_CASE("gaussian noise edge cases") {
  Tensor raw = random_tensor({4, 1, 3, 3}, 10, 0.0, 255.0);
  CHECK(bitwise_equal(gaussian_perturb(raw, 0.0, 1), raw));
  const Tensor clipped = gaussian_perturb(raw, 500.0, 1, true);
  for (double v : clipped.data()) CHECK((v >= 0.0 && v <= 255.0));
  const Tensor unclipped = gaussian_perturb(raw, 500.0, 1, false);
  CHECK(std::any_of(unclipped.data().begin(), unclipped.data().end(), [](double v) { return v < 0.0 || v > 255.0; }));
  CHECK_THROWS_AS(gaussian_perturb(raw, -1.0, 1), ConfigError);
}

// -- fgsm ------------------------------------------------------------------------------

TEST_CASE("fgsm with zero budget is the identity") {
  Model m(RmKind::kResidual, model_config_for("synthetic"), 3);
  const Normalization norm{127.5, 12.75};
  Tensor x = norm.apply(random_tensor({3, 1, 8, 8}, 11, 0.0, 255.0));
  const std::vector<int> labels{0, 1, 2};
  CHECK(bitwise_equal(fgsm(m, x, labels, 0.0, norm), x));
}

TEST_CASE("fgsm moves every coordinate with a nonzero gradient by exactly the budget") {
  LinearClassifier m = binary_linear();
  Tensor x = kUnit.apply(random_tensor({6, 1, 2, 2}, 12, 100.0, 155.0));
  const std::vector<int> labels{0, 1, 0, 1, 1, 0};
  const Tensor g = input_gradient(m, x, labels);
  const Tensor adv = fgsm(m, x, labels, 0.1, kUnit);
  CHECK(linf(adv, x) <= 0.1 + 1e-15);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (g[i] != 0.0) CHECK(std::abs(std::abs(adv[i] - x[i]) - 0.1) <= 1e-15);
  }
  CHECK(summed_loss(m, adv, labels) >= summed_loss(m, x, labels));
}

TEST_CASE("fgsm clips to the valid range") {
  LinearClassifier m = binary_linear();
  Tensor x = kUnit.apply(random_tensor({6, 1, 2, 2}, 13, 0.0, 255.0));
  const std::vector<int> labels{0, 1, 0, 1, 1, 0};
  const Tensor adv = fgsm(m, x, labels, 0.5, kUnit);
  for (double v : adv.data()) CHECK((v >= 0.0 && v <= 1.0));
  CHECK(linf(adv, x) <= 0.5 + 1e-15);
}

// -- pgd -------------------------------------------------------------------------------

TEST_CASE("single-step pgd without random start is fgsm") {
  Model m(RmKind::kTisode, model_config_for("synthetic"), 4);
  const Normalization norm{127.5, 12.75};
  Tensor x = norm.apply(random_tensor({4, 1, 8, 8}, 14, 0.0, 255.0));
  const std::vector<int> labels{0, 3, 5, 9};
  const double eps = 0.3;
  CHECK(bitwise_equal(pgd(m, x, labels, eps, 1, eps, false, 0, norm), fgsm(m, x, labels, eps, norm)));
}

TEST_CASE("pgd stays inside the budget and the valid range") {
  Model m(RmKind::kNode, model_config_for("synthetic"), 5);
  const Normalization norm{127.5, 12.75};
  const double range = norm.upper() - norm.lower();
  Tensor x = norm.apply(random_tensor({3, 1, 8, 8}, 15, 0.0, 255.0));
  const std::vector<int> labels{2, 4, 8};
  for (std::size_t steps : {1, 3, 7}) {
    for (bool rand : {false, true}) {
      const Tensor adv = pgd(m, x, labels, 0.05, steps, 0.02, rand, 17, norm);
      CHECK(linf(adv, x) <= 0.05 * range * (1.0 + 1e-12));
      for (double v : adv.data()) CHECK((v >= norm.lower() && v <= norm.upper()));
    }
  }
  CHECK(bitwise_equal(pgd(m, x, labels, 0.05, 3, 0.02, true, 17, norm),
                      pgd(m, x, labels, 0.05, 3, 0.02, true, 17, norm)));
  for (const auto& p : m.parameters()) CHECK_FALSE(p.has_grad());
}

TEST_CASE("pgd is at least as strong as fgsm on the linear oracle") {
  LinearClassifier m = binary_linear();
  Tensor x = kUnit.apply(random_tensor({8, 1, 2, 2}, 16, 60.0, 195.0));
  const std::vector<int> labels{0, 1, 1, 0, 0, 1, 0, 1};
  for (double eps : {0.05, 0.15, 0.3}) {
    const double l_fgsm = summed_loss(m, fgsm(m, x, labels, eps, kUnit), labels);
    const double l_pgd = summed_loss(m, pgd(m, x, labels, eps, 10, eps / 10.0, false, 0, kUnit), labels);
    CHECK(l_pgd >= l_fgsm - 1e-12);
  }
}

// -- spec ----------------------------------------------------------------------------------

TEST_CASE("perturbation spec text round trip") {
  for (const std::string text : {"gaussian(100)", "gaussian(75,clip)", "fgsm(0.3)", "pgd(0.2,40,0.02,rand)",
                                 "pgd(0.3,10,0.05,norand)"}) {
    CHECK(PerturbationSpec::parse(text).to_string() == text);
  }
  const auto p = PerturbationSpec::parse("pgd(0.2)");
  CHECK(p.steps == 40);
  CHECK(p.effective_step_size() == doctest::Approx(0.02));
  CHECK(p.random_start);
  CHECK(PerturbationSpec::parse("fgsm(8/255)").magnitude == 8.0 / 255.0);
  CHECK(PerturbationSpec::parse("fgsm(0.3)").label() == "FGSM-0.3");
  CHECK(PerturbationSpec::parse("gaussian(50)").label() == "sigma=50");
  CHECK_THROWS_AS(PerturbationSpec::parse("fgsm(-0.1)"), ConfigError);
  CHECK_THROWS_AS(PerturbationSpec::parse("pgd(0.1,0)"), ConfigError);
  CHECK_THROWS_AS(PerturbationSpec::parse("cw(0.1)"), ConfigError);
  CHECK_THROWS_AS(PerturbationSpec::parse("fgsm 0.1"), ConfigError);
}
