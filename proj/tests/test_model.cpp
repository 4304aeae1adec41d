#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "gquant/error.hpp"
#include "gquant/kernels.hpp"
#include "gquant/model.hpp"

using namespace gquant;

namespace {

Tensor random_input(std::mt19937_64& rng, std::size_t batch, const ModelShape& s) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor x(Shape{batch, s.num_axes, s.window_len});
  for (auto& v : x.data()) v = u(rng);
  return x;
}

std::vector<std::span<double>> param_spans(ClassifierModel& m) {
  std::vector<std::span<double>> out;
  for (auto& p : m.params()) out.push_back(p.value.data());
  return out;
}

std::vector<std::size_t> param_sizes(const ClassifierModel& m) {
  std::vector<std::size_t> out;
  for (const auto& p : m.params()) out.push_back(p.value.size());
  return out;
}

// One full-batch step; returns the loss before the update.
double train_step(ClassifierModel& model, Adam& adam, const Tensor& x, const std::vector<int>& y,
                  const std::vector<double>& w, double lr) {
  Tape tape;
  const auto bound = model.bind(tape, true);
  Var l = loss(model.forward(tape.input(x), bound), y, w);
  tape.backward(l);
  std::vector<std::span<const double>> grads;
  for (const auto& v : bound) grads.push_back(v.grad());
  auto params = param_spans(model);
  adam.step(params, grads, lr);
  return l.value().item();
}

double loss_of(const ClassifierModel& model, const Tensor& x, const std::vector<int>& y,
               const std::vector<double>& w) {
  Tape tape;
  return loss(model.forward(tape.input(x), model.bind(tape, false)), y, w).value().item();
}

}  // namespace

TEST_CASE("forward shapes and zero model") {
  const ModelShape shape;
  const auto zero = ClassifierModel::zeros(shape);
  const Tensor z = zero.logits(Tensor(Shape{2, 3, 50}));
  CHECK(z.shape() == Shape{2, 4});
  for (double v : z.data()) CHECK(v == 0.0);

  std::mt19937_64 rng(1);
  const ClassifierModel model(shape, 7);
  CHECK(model.logits(random_input(rng, 1, shape)).shape() == Shape{1, 4});
  const Tensor big = model.logits(random_input(rng, 100, shape));
  CHECK(big.shape() == Shape{100, 4});
  for (double v : big.data()) CHECK(std::isfinite(v));

  CHECK_THROWS_AS(model.logits(Tensor(Shape{2, 2, 50})), ShapeError);
  ModelShape tiny = shape;
  tiny.window_len = 10;
  CHECK_THROWS_AS(ClassifierModel(tiny, 1), ConfigError);
}

TEST_CASE("cross entropy values") {
  Tape tape;
  const std::vector<double> ones(5, 1.0);
  const std::vector<int> y{0, 3, 4};
  Var uniform = tape.input(Tensor(Shape{3, 5}, 0.7));
  CHECK(loss(uniform, y, ones).value().item() == doctest::Approx(std::log(5.0)).epsilon(1e-14));

  Tensor perfect(Shape{3, 5}, -500.0);
  perfect[0 * 5 + 0] = 500.0;
  perfect[1 * 5 + 3] = 500.0;
  perfect[2 * 5 + 4] = 500.0;
  CHECK(loss(tape.input(perfect), y, ones).value().item() == doctest::Approx(0.0));

  // Scalar oracle on a random case.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3, 3);
  Tensor z(Shape{4, 3});
  for (auto& v : z.data()) v = u(rng);
  const std::vector<int> labels{2, 0, 1, 2};
  const std::vector<double> w{0.5, 1.5, 2.0};
  double num = 0.0, den = 0.0;
  for (int r = 0; r < 4; ++r) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) s += std::exp(z[r * 3 + c]);
    num += w[labels[r]] * -std::log(std::exp(z[r * 3 + labels[r]]) / s);
    den += w[labels[r]];
  }
  CHECK(loss(tape.input(z), labels, w).value().item() == doctest::Approx(num / den).epsilon(1e-12));

  const std::vector<int> bad{0, 5, 1};
  CHECK_THROWS_AS(loss(uniform, bad, ones), DataError);
}

TEST_CASE("loss gradient rows sum to zero under uniform weights") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor z(Shape{6, 4});
    for (auto& v : z.data()) v = u(rng);
    Tape tape;
    Var logits = tape.param(z);
    const std::vector<int> y{0, 1, 2, 3, 0, 1};
    const std::vector<double> w(4, 1.0);
    Var l = loss(logits, y, w);
    CHECK(l.value().item() >= 0.0);
    tape.backward(l);
    for (std::size_t r = 0; r < 6; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s += logits.grad()[r * 4 + c];
      CHECK(std::abs(s) < 1e-15);
    }
  }
}

TEST_CASE("inverse frequency class weights") {
  const std::vector<int> balanced{0, 1, 2, 0, 1, 2};
  for (double w : inverse_frequency_weights(balanced, 3)) CHECK(w == doctest::Approx(1.0));
  const std::vector<int> skewed{0, 0, 0, 1};
  const auto w = inverse_frequency_weights(skewed, 2);
  CHECK(w[1] / w[0] == doctest::Approx(3.0));
  CHECK((w[0] + w[1]) / 2 == doctest::Approx(1.0));
  const auto absent = inverse_frequency_weights(skewed, 3);
  for (double v : absent) CHECK(v > 0.0);
}

TEST_CASE("Adam") {
  SUBCASE("zero gradient without decay leaves parameters unchanged") {
    std::vector<double> p{0.3, -1.2};
    const std::vector<double> g{0.0, 0.0};
    const std::size_t sizes[] = {2};
    Adam adam({1e-3, 0.9, 0.999, 1e-8, 0.0}, sizes);
    const std::span<double> ps[] = {p};
    const std::span<const double> gs[] = {g};
    for (int t = 0; t < 10; ++t) adam.step(ps, gs, 1e-3);
    CHECK(p == std::vector<double>{0.3, -1.2});
  }
  SUBCASE("constant gradient follows the closed-form trajectory") {
    // With a constant gradient the bias-corrected moments are exactly g and g^2,
    // so every step moves by lr * g / (|g| + eps).
    for (double g0 : {0.5, -2.0, 1e-3}) {
      std::vector<double> p{1.0};
      const std::vector<double> g{g0};
      const std::size_t sizes[] = {1};
      const double lr = 1e-2, eps = 1e-8;
      Adam adam({lr, 0.9, 0.999, eps, 0.0}, sizes);
      const std::span<double> ps[] = {p};
      const std::span<const double> gs[] = {g};
      for (int t = 1; t <= 25; ++t) {
        adam.step(ps, gs, lr);
        const double expected = 1.0 - t * lr * g0 / (std::abs(g0) + eps);
        CHECK(p[0] == doctest::Approx(expected).epsilon(1e-10));
      }
      CHECK(adam.steps() == 25);
    }
  }
  SUBCASE("weight decay acts as an L2 gradient") {
    std::vector<double> a{2.0}, b{2.0};
    const std::vector<double> zero{0.0}, l2{2.0 * 0.1};
    const std::size_t sizes[] = {1};
    Adam with_wd({1e-2, 0.9, 0.999, 1e-8, 0.1}, sizes);
    Adam explicit_l2({1e-2, 0.9, 0.999, 1e-8, 0.0}, sizes);
    const std::span<double> pa[] = {a};
    const std::span<double> pb[] = {b};
    const std::span<const double> ga[] = {zero};
    const std::span<const double> gb[] = {l2};
    with_wd.step(pa, ga, 1e-2);
    explicit_l2.step(pb, gb, 1e-2);
    CHECK(a[0] == b[0]);
  }
  SUBCASE("step schedule") {
    CHECK(step_schedule(1e-4, 0) == 1e-4);
    CHECK(step_schedule(1e-4, 9) == 1e-4);
    CHECK(step_schedule(1e-4, 10) == doctest::Approx(0.9e-4).epsilon(1e-15));
    CHECK(step_schedule(1e-4, 19) == doctest::Approx(0.9e-4).epsilon(1e-15));
    CHECK(step_schedule(1e-4, 20) == doctest::Approx(0.81e-4).epsilon(1e-15));
    CHECK(step_schedule(1e-4, 29) == doctest::Approx(0.81e-4).epsilon(1e-15));
  }
}

TEST_CASE("overfits 20 samples in 200 steps") {
  const ModelShape shape;
  std::mt19937_64 rng(21);
  const Tensor x = random_input(rng, 20, shape);
  std::vector<int> y(20);
  for (int i = 0; i < 20; ++i) y[i] = i % 4;
  const std::vector<double> w(4, 1.0);
  ClassifierModel model(shape, 3);
  const auto sizes = param_sizes(model);
  Adam adam({1e-3, 0.9, 0.999, 1e-8, 0.0}, sizes);
  for (int step = 0; step < 200; ++step) train_step(model, adam, x, y, w, 1e-3);
  const auto pred = model.predict(x);
  int correct = 0;
  for (int i = 0; i < 20; ++i) correct += pred[i] == y[i];
  CHECK(correct == 20);
}

TEST_CASE("one step decreases loss for almost every initialization") {
  const ModelShape shape{3, 24, 3, 8, 8, 5, 2};
  std::mt19937_64 rng(5);
  const Tensor x = random_input(rng, 8, shape);
  const std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1};
  const std::vector<double> w(3, 1.0);
  int decreased = 0;
  for (int init = 0; init < 100; ++init) {
    ClassifierModel model(shape, 1000 + init);
    Adam adam({1e-3, 0.9, 0.999, 1e-8, 0.0}, param_sizes(model));
    const double before = train_step(model, adam, x, y, w, 1e-3);
    decreased += loss_of(model, x, y, w) < before;
  }
  CHECK(decreased >= 95);
}

TEST_CASE("training is deterministic and checkpoints round-trip") {
  const ModelShape shape{3, 30, 3, 8, 8, 5, 2};
  std::mt19937_64 rng(8);
  const Tensor x = random_input(rng, 10, shape);
  const std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
  const std::vector<double> w = inverse_frequency_weights(y, 3);
  auto run = [&] {
    ClassifierModel model(shape, 99);
    Adam adam({1e-3, 0.9, 0.999, 1e-8, 1e-6}, param_sizes(model));
    for (int i = 0; i < 5; ++i) train_step(model, adam, x, y, w, 1e-3);
    return model;
  };
  const auto a = run();
  const auto b = run();
  for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(a.params()[i].value == b.params()[i].value);

  const auto restored = ClassifierModel::from_json(nlohmann::json::parse(a.to_json().dump()));
  CHECK(restored.shape() == a.shape());
  for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(restored.params()[i].value == a.params()[i].value);

  auto broken = a.to_json();
  broken["params"][0]["shape"] = {1, 2, 3};
  CHECK_THROWS_AS(ClassifierModel::from_json(broken), DataError);
}

TEST_CASE("forward pass is identical under both kernel variants") {
  if (kernels::avx2_table() == nullptr) {
    MESSAGE("AVX2 variant unavailable on this machine; equivalence test skipped");
    return;
  }
  const ModelShape shape;
  std::mt19937_64 rng(30);
  const Tensor x = random_input(rng, 17, shape);
  const ClassifierModel model(shape, 4);
  const std::vector<int> y(17, 1);
  const std::vector<double> w(4, 1.0);
  auto grads = [&] {
    Tape tape;
    const auto bound = model.bind(tape, true);
    Var l = loss(model.forward(tape.input(x), bound), y, w);
    tape.backward(l);
    std::vector<double> out;
    for (const auto& v : bound) out.insert(out.end(), v.grad().begin(), v.grad().end());
    return out;
  };
  kernels::select(kernels::Isa::Scalar);
  const Tensor ref = model.logits(x);
  const auto g_ref = grads();
  kernels::select(kernels::Isa::Avx2);
  const Tensor simd = model.logits(x);
  const auto g_simd = grads();
  CHECK(ref == simd);
  REQUIRE(g_ref.size() == g_simd.size());
  for (std::size_t i = 0; i < g_ref.size(); ++i) {
    CHECK(std::abs(g_ref[i] - g_simd[i]) <= 1e-12 * std::max(1.0, std::abs(g_ref[i])));
  }
}
