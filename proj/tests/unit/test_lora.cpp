#include <cstring>
#include <random>

#include "doctest.h"
#include "medrag/error.hpp"
#include "medrag/lora.hpp"
#include "support/tempdir.hpp"

using namespace medrag;
using namespace medrag::lora;
using Md = Matrix<double>;
using Vd = Vector<double>;

namespace {

Md random_matrix(std::mt19937_64& rng, Index rows, Index cols, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Md m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = g(rng);
  return m;
}

LoraAdapter<double> random_adapter(std::mt19937_64& rng, Index d_out, Index d_in, Index r, double alpha) {
  return {random_matrix(rng, r, d_in), random_matrix(rng, d_out, r), alpha};
}

// Forward pass written out as loops.
Vd loop_forward(const Md& W, const LoraAdapter<double>& ad, const Vd& x) {
  const Index r = ad.A.rows();
  std::vector<double> ax(static_cast<std::size_t>(r), 0.0);
  for (Index k = 0; k < r; ++k)
    for (Index j = 0; j < x.size(); ++j) ax[k] += ad.A(k, j) * x[j];
  Vd y(W.rows());
  for (Index i = 0; i < W.rows(); ++i) {
    double base = 0.0, delta = 0.0;
    for (Index j = 0; j < x.size(); ++j) base += W(i, j) * x[j];
    for (Index k = 0; k < r; ++k) delta += ad.B(i, k) * ax[k];
    y[i] = base + ad.alpha / static_cast<double>(r) * delta;
  }
  return y;
}

}  // namespace

TEST_CASE("worked 2x2 example") {
  const Md W = Md::Identity(2, 2);
  LoraAdapter<double> ad;
  ad.A = Md{{1.0, 0.0}};
  ad.B = Md{{1.0}, {0.0}};
  ad.alpha = 2.0;
  const Vd x{{1.0, 0.0}};
  const Md y = adapted_forward(W, ad, x);
  CHECK(y(0, 0) == 3.0);
  CHECK(y(1, 0) == 0.0);
  const Md merged = merge_weights(W, ad);
  CHECK(merged == Md{{3.0, 0.0}, {0.0, 1.0}});
}

TEST_CASE("adapted forward matches an explicit loop") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Md W = random_matrix(rng, 8, 8);
    const auto ad = random_adapter(rng, 8, 8, 3, 6.0);
    const Vd x = random_matrix(rng, 8, 1);
    const Vd y = adapted_forward(W, ad, x);
    CHECK((y - loop_forward(W, ad, x)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("initialization") {
  const auto a = init_adapter<double>(12, 10, 4, 32.0, 99);
  const auto b = init_adapter<double>(12, 10, 4, 32.0, 99);
  CHECK(a.A == b.A);
  CHECK(a.B == Md::Zero(12, 4));
  CHECK(a.scaling() == 8.0);
  CHECK(init_adapter<double>(12, 10, 4, 32.0, 100).A != a.A);

  SUBCASE("fresh adapter changes no output") {
    std::mt19937_64 rng(1);
    const Md W = random_matrix(rng, 12, 10);
    const Md X = random_matrix(rng, 10, 20);
    CHECK(adapted_forward(W, a, X) == W * X);
    CHECK(merge_weights(W, a) == W);
  }

  SUBCASE("A entries follow N(0, 0.02)") {
    const auto big = init_adapter<double>(200, 500, 100, 1.0, 7);
    const double mean = big.A.mean();
    const double sd = std::sqrt((big.A.array() - mean).square().mean());
    CHECK(std::abs(mean) < 1e-3);
    CHECK(sd == doctest::Approx(0.02).epsilon(0.02));
  }

  SUBCASE("rank constraints") {
    CHECK_THROWS_AS(init_adapter<double>(4, 6, 5, 1.0, 1), Error);
    CHECK_THROWS_AS(init_adapter<double>(4, 6, 0, 1.0, 1), Error);
    CHECK_NOTHROW(init_adapter<double>(4, 6, 4, 1.0, 1));
  }

  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(merge_weights(Md(Md::Zero(12, 11)), a), Error);
    CHECK_THROWS_AS(adapted_forward(Md(Md::Zero(12, 10)), a, Vd::Zero(9)), Error);
  }
}

TEST_CASE("merged weights reproduce the adapted forward pass") {
  std::mt19937_64 rng(16);
  double worst = 0.0;
  for (int c = 0; c < 10; ++c) {
    const Md W = random_matrix(rng, 16, 16);
    const auto ad = random_adapter(rng, 16, 16, 4, 32.0);
    const Md merged = merge_weights(W, ad);
    CHECK((merged - (W + 8.0 * ad.B * ad.A)).cwiseAbs().maxCoeff() < 1e-12);
    for (int i = 0; i < 100; ++i) {
      const Vd x = random_matrix(rng, 16, 1);
      const Vd y = adapted_forward(W, ad, x);
      const Vd ym = merged * x;
      worst = std::max(worst, (ym - y).norm() / (1.0 + y.norm()));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("analytic gradients match central finite differences") {
  std::mt19937_64 rng(64);
  const Index d = 64, r = 4, n = 32;
  const Md W = random_matrix(rng, d, d, 0.125);
  const Md X = random_matrix(rng, d, n);
  const Md Y = random_matrix(rng, d, n);
  auto ad = random_adapter(rng, d, d, r, 8.0);
  ad.A *= 0.1;
  ad.B *= 0.1;

  const auto lg = mse_loss_and_grad(W, ad, X, Y);
  CHECK(lg.loss == doctest::Approx(mse_loss(W, ad, X, Y)).epsilon(1e-12));

  const double h = 1e-5;
  std::uniform_int_distribution<Index> row_a(0, r - 1), col(0, d - 1), row_b(0, d - 1), col_b(0, r - 1);
  auto fd = [&](Md& target, Index i, Index j) {
    const double keep = target(i, j);
    target(i, j) = keep + h;
    const double up = mse_loss(W, ad, X, Y);
    target(i, j) = keep - h;
    const double down = mse_loss(W, ad, X, Y);
    target(i, j) = keep;
    return (up - down) / (2 * h);
  };
  for (int k = 0; k < 5; ++k) {
    const Index i = row_a(rng), j = col(rng);
    const double num = fd(ad.A, i, j);
    CHECK(std::abs(num - lg.grad_A(i, j)) / std::max(std::abs(num), 1e-12) < 1e-4);
  }
  for (int k = 0; k < 5; ++k) {
    const Index i = row_b(rng), j = col_b(rng);
    const double num = fd(ad.B, i, j);
    CHECK(std::abs(num - lg.grad_B(i, j)) / std::max(std::abs(num), 1e-12) < 1e-4);
  }
}

TEST_CASE("AdamW step") {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.0;

  SUBCASE("scalar worked example") {
    Md p{{1.0}};
    AdamState<double> st;
    adamw_step(p, Md{{1.0}}, st, 1, cfg, 1000);
    // m_hat = 1, v_hat = 1 at t = 1.
    CHECK(p(0, 0) == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-14));
    CHECK(p(0, 0) == doctest::Approx(0.9).epsilon(1e-7));
  }

  SUBCASE("zero gradient and zero decay leave parameters unchanged") {
    std::mt19937_64 rng(2);
    const Md p0 = random_matrix(rng, 3, 4);
    Md p = p0;
    AdamState<double> st;
    for (int t = 1; t <= 5; ++t) adamw_step(p, Md(Md::Zero(3, 4)), st, t, cfg, 100);
    CHECK(p == p0);
  }

  SUBCASE("weight decay is decoupled from the gradient") {
    cfg.weight_decay = 0.1;
    Md p{{2.0}};
    AdamState<double> st;
    adamw_step(p, Md{{0.0}}, st, 1, cfg, 100);
    CHECK(p(0, 0) == doctest::Approx(2.0 * (1.0 - 0.1 * 0.1)).epsilon(1e-15));
    CHECK(st.m(0, 0) == 0.0);
  }

  SUBCASE("learning rate follows the cosine schedule at t") {
    Md p{{0.0}};
    AdamState<double> st;
    // Final step of 2: lr = cosine(0.1, 1, 2) = 0.05 and |update| ~= lr.
    adamw_step(p, Md{{1.0}}, st, 1, cfg, 2);
    const double after_first = p(0, 0);
    adamw_step(p, Md{{1.0}}, st, 2, cfg, 2);
    CHECK(after_first == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(p(0, 0) - after_first == doctest::Approx(-0.05).epsilon(1e-6));
  }

  SUBCASE("invalid input") {
    Md p{{1.0}};
    AdamState<double> st;
    try {
      adamw_step(p, Md{{std::nan("")}}, st, 1, cfg, 10);
      FAIL("expected numeric error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::numeric);
    }
    CHECK_THROWS_AS(adamw_step(p, Md{{1.0}}, st, 0, cfg, 10), Error);
    CHECK_THROWS_AS(adamw_step(p, Md(Md::Zero(2, 1)), st, 1, cfg, 10), Error);
  }
}

TEST_CASE("cosine schedule") {
  const double base = 2e-4;
  const std::int64_t T = 1998;
  CHECK(cosine_lr(base, 0, T) == base);
  CHECK(cosine_lr(base, T / 2, T) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(std::abs(cosine_lr(base, T, T)) < 1e-20);
  for (std::int64_t t = 1; t <= T; ++t) CHECK(cosine_lr(base, t, T) <= cosine_lr(base, t - 1, T));
  CHECK(TrainConfig{}.learning_rate == 2e-4);
  CHECK(TrainConfig{}.epochs == 3);
}

TEST_CASE("trainable fraction") {
  SUBCASE("single 100x100 matrix at r=1") {
    ModelShape s;
    s.matrices.push_back({"w", 100, 100, true});
    CHECK(trainable_fraction(s, 1) == doctest::Approx(0.02).epsilon(1e-15));
  }

  SUBCASE("linear in r") {
    const auto s = llama2_13b_like_shape();
    for (std::int64_t r : {1, 4, 16, 64}) CHECK(trainable_fraction(s, 2 * r) == 2.0 * trainable_fraction(s, r));
  }

  SUBCASE("13B-like shape stays below half a percent") {
    const std::int64_t L = 40, h = 5120, m = 13824, v = 32000;
    const std::int64_t total = L * (4 * h * h + 3 * m * h) + 2 * v * h + L * 2 * h + h;
    const std::int64_t adapter = L * 4 * 16 * (h + h);
    const auto s = llama2_13b_like_shape();
    CHECK(s.total_params() == total);
    CHECK(s.adapter_params(16) == adapter);
    CHECK(std::abs(static_cast<double>(total) - 13.0e9) < 0.1e9);
    const double f = trainable_fraction(s, 16);
    MESSAGE("13B-like trainable fraction at r=16: " << f);
    CHECK(f == doctest::Approx(static_cast<double>(adapter) / static_cast<double>(total)).epsilon(1e-15));
    CHECK(f == doctest::Approx(0.00202).epsilon(0.01));
    CHECK(f < 0.005);
  }

  SUBCASE("errors") {
    ModelShape s;
    s.matrices.push_back({"w", 10, 10, false});
    CHECK_THROWS_AS(trainable_fraction(s, 1), Error);
    s.matrices[0].targeted = true;
    CHECK_THROWS_AS(trainable_fraction(s, 0), Error);
  }
}

TEST_CASE("toy training recovers a rank-1 perturbation") {
  const auto res = train_toy<double>(ToyTask{}, TrainConfig{}, 42);
  MESSAGE("toy loss ratio after " << res.steps << " steps: " << res.loss_ratio());
  CHECK(res.steps <= 2000);
  CHECK(res.steps == 666 * 3);
  CHECK(res.loss_ratio() < 1e-3);
  CHECK(res.losses.size() == static_cast<std::size_t>(res.steps) + 1);
  REQUIRE(res.base.size() == res.base_before.size());
  CHECK(std::memcmp(res.base.data(), res.base_before.data(), sizeof(double) * res.base.size()) == 0);

  const auto again = train_toy<double>(ToyTask{}, TrainConfig{}, 42);
  CHECK(again.losses == res.losses);
  CHECK(again.adapter.A == res.adapter.A);

  ToyTask bad;
  bad.rank = 0;
  CHECK_THROWS_AS(train_toy<double>(bad, TrainConfig{}, 1), Error);
  TrainConfig no_lr;
  no_lr.learning_rate = 0.0;
  CHECK_THROWS_AS(train_toy<double>(ToyTask{}, no_lr, 1), Error);
}

TEST_CASE("divergent training is reported") {
  TrainConfig huge;
  huge.learning_rate = 1e300;
  ToyTask t;
  t.steps_per_epoch = 20;
  try {
    train_toy<double>(t, huge, 1);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::numeric);
  }
}

TEST_CASE("adapter file round trip") {
  testing::TempDir dir;
  auto ad = init_adapter<float>(6, 5, 2, 32.0f, 3);
  ad.B.setConstant(0.25f);
  save_adapter(ad, dir / "a.lora");
  const auto back = load_adapter<float>(dir / "a.lora");
  CHECK(back.A == ad.A);
  CHECK(back.B == ad.B);
  CHECK(back.alpha == 32.0f);

  const auto bytes = testing::read_file(dir / "a.lora");
  CHECK(bytes.size() == 24 + 4 * (2 * 5 + 6 * 2));
  testing::write_file(dir / "short.lora", bytes.substr(0, bytes.size() - 3));
  try {
    load_adapter<float>(dir / "short.lora");
    FAIL("expected truncation");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::truncated);
  }
  testing::write_file(dir / "bad.lora", "NOPE" + bytes.substr(4));
  CHECK_THROWS_AS(load_adapter<float>(dir / "bad.lora"), Error);
  CHECK_THROWS_AS(load_adapter<float>(dir / "missing.lora"), Error);
}
