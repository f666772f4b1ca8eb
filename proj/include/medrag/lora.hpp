#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "medrag/error.hpp"

namespace medrag::lora {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Index = Eigen::Index;

/// Low-rank update (alpha / r) * B * A on top of a frozen d_out x d_in weight.
template <typename Scalar>
struct LoraAdapter {
  Matrix<Scalar> A;  // r x d_in
  Matrix<Scalar> B;  // d_out x r
  Scalar alpha = Scalar(1);

  Index rank() const noexcept { return A.rows(); }
  Index d_in() const noexcept { return A.cols(); }
  Index d_out() const noexcept { return B.rows(); }
  Scalar scaling() const noexcept { return alpha / static_cast<Scalar>(rank()); }
  Matrix<Scalar> delta() const { return scaling() * (B * A); }
};

inline void check_adapter_shape(Index d_out, Index d_in, Index r) {
  if (d_out < 1 || d_in < 1) throw Error(Errc::invalid_argument, "adapter dimensions must be positive");
  if (r < 1) throw Error(Errc::invalid_argument, "adapter rank must be >= 1");
  if (r > std::min(d_out, d_in)) {
    throw Error(Errc::invalid_argument, "adapter rank " + std::to_string(r) + " exceeds min(d_out, d_in) = " +
                                            std::to_string(std::min(d_out, d_in)));
  }
}

/// A ~ N(0, 0.02^2) from a seeded mt19937_64, B = 0, so the delta starts at zero.
template <typename Scalar>
LoraAdapter<Scalar> init_adapter(Index d_out, Index d_in, Index r, Scalar alpha, std::uint64_t seed) {
  check_adapter_shape(d_out, d_in, r);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 0.02);
  LoraAdapter<Scalar> ad;
  ad.alpha = alpha;
  ad.A.resize(r, d_in);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < d_in; ++j) ad.A(i, j) = static_cast<Scalar>(gauss(rng));
  ad.B = Matrix<Scalar>::Zero(d_out, r);
  return ad;
}

template <typename Scalar>
void check_compatible(const Matrix<Scalar>& W, const LoraAdapter<Scalar>& ad) {
  if (ad.B.cols() != ad.A.rows()) throw Error(Errc::dimension_mismatch, "adapter A/B ranks disagree");
  if (W.rows() != ad.d_out() || W.cols() != ad.d_in()) {
    throw Error(Errc::dimension_mismatch, "weight is " + std::to_string(W.rows()) + "x" + std::to_string(W.cols()) +
                                              ", adapter is " + std::to_string(ad.d_out()) + "x" +
                                              std::to_string(ad.d_in()));
  }
}

/// y = W x + (alpha / r) B (A x). `X` may hold one input per column.
template <typename Scalar, typename Derived>
Matrix<Scalar> adapted_forward(const Matrix<Scalar>& W, const LoraAdapter<Scalar>& ad,
                               const Eigen::MatrixBase<Derived>& X) {
  check_compatible(W, ad);
  if (X.rows() != W.cols()) throw Error(Errc::dimension_mismatch, "input length does not match d_in");
  return W * X + ad.scaling() * (ad.B * (ad.A * X));
}

/// W' = W + (alpha / r) B A.
template <typename Scalar>
Matrix<Scalar> merge_weights(const Matrix<Scalar>& W, const LoraAdapter<Scalar>& ad) {
  check_compatible(W, ad);
  return W + ad.delta();
}

// ---------------------------------------------------------------------------
// Optimisation

struct TrainConfig {
  double learning_rate = 2e-4;
  int epochs = 3;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error(Errc::invalid_argument, "learning_rate must be > 0");
    if (epochs < 1) throw Error(Errc::invalid_argument, "epochs must be >= 1");
  }
};

/// base * (1 + cos(pi * step / total)) / 2, clamped to [0, total].
inline double cosine_lr(double base, std::int64_t step, std::int64_t total) {
  if (total <= 0) return base;
  const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

template <typename Scalar>
struct AdamState {
  Matrix<Scalar> m;
  Matrix<Scalar> v;
};

/// One AdamW update at 1-based step t of `total_steps`. The learning rate is
/// cosine_lr(cfg.learning_rate, t - 1, total_steps); weight decay is applied
/// to the parameters directly, not folded into the gradient.
template <typename Scalar>
void adamw_step(Matrix<Scalar>& params, const Matrix<Scalar>& grads, AdamState<Scalar>& state, std::int64_t t,
                const TrainConfig& cfg, std::int64_t total_steps) {
  if (t < 1) throw Error(Errc::invalid_argument, "adam step t must be >= 1");
  if (params.rows() != grads.rows() || params.cols() != grads.cols()) {
    throw Error(Errc::dimension_mismatch, "gradient shape does not match parameters");
  }
  if (!grads.allFinite()) throw Error(Errc::numeric, "gradient contains NaN/Inf");
  if (state.m.size() == 0) {
    state.m = Matrix<Scalar>::Zero(params.rows(), params.cols());
    state.v = Matrix<Scalar>::Zero(params.rows(), params.cols());
  }
  const auto b1 = static_cast<Scalar>(cfg.adam_beta1);
  const auto b2 = static_cast<Scalar>(cfg.adam_beta2);
  const auto eps = static_cast<Scalar>(cfg.adam_eps);
  const auto lr = static_cast<Scalar>(cosine_lr(cfg.learning_rate, t - 1, total_steps));

  state.m = b1 * state.m + (Scalar(1) - b1) * grads;
  state.v = b2 * state.v + (Scalar(1) - b2) * grads.cwiseProduct(grads);
  const Scalar c1 = Scalar(1) - std::pow(b1, static_cast<Scalar>(t));
  const Scalar c2 = Scalar(1) - std::pow(b2, static_cast<Scalar>(t));

  params *= Scalar(1) - lr * static_cast<Scalar>(cfg.weight_decay);
  params.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + eps);
}

template <typename Scalar>
struct LossAndGrad {
  Scalar loss;
  Matrix<Scalar> grad_A;
  Matrix<Scalar> grad_B;
};

/// Mean squared error of adapted_forward(W, ad, X) against Y over all
/// entries, and its gradient with respect to A and B.
template <typename Scalar>
LossAndGrad<Scalar> mse_loss_and_grad(const Matrix<Scalar>& W, const LoraAdapter<Scalar>& ad, const Matrix<Scalar>& X,
                                      const Matrix<Scalar>& Y) {
  const Matrix<Scalar> AX = ad.A * X;
  const Matrix<Scalar> R = W * X + ad.scaling() * (ad.B * AX) - Y;
  const auto count = static_cast<Scalar>(R.size());
  // dL/d(delta W) = 2/N R X^T; chain through delta W = s B A.
  const Matrix<Scalar> RXt = (Scalar(2) / count) * (R * X.transpose());
  return {R.squaredNorm() / count, ad.scaling() * (ad.B.transpose() * RXt), ad.scaling() * (RXt * ad.A.transpose())};
}

template <typename Scalar>
Scalar mse_loss(const Matrix<Scalar>& W, const LoraAdapter<Scalar>& ad, const Matrix<Scalar>& X,
                const Matrix<Scalar>& Y) {
  return (W * X + ad.scaling() * (ad.B * (ad.A * X)) - Y).squaredNorm() / static_cast<Scalar>(Y.size());
}

/// Synthetic regression: a frozen random square W and a target
/// W + U V^T of rank `perturbation_rank`, observed on random inputs.
/// W, U and V have N(0, 1/dim) entries.
struct ToyTask {
  Index dim = 32;
  Index samples = 256;
  Index perturbation_rank = 1;
  Index rank = 1;
  double alpha = 32.0;
  std::int64_t steps_per_epoch = 666;
};

template <typename Scalar>
struct ToyResult {
  std::vector<Scalar> losses;  // loss before each step, then the final loss
  LoraAdapter<Scalar> adapter;
  Matrix<Scalar> base;         // W after training
  Matrix<Scalar> base_before;  // W before training
  std::int64_t steps = 0;

  Scalar loss_ratio() const { return losses.back() / losses.front(); }
};

template <typename Scalar>
ToyResult<Scalar> train_toy(const ToyTask& task, const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (task.perturbation_rank < 1 || task.perturbation_rank > task.rank) {
    throw Error(Errc::invalid_argument, "perturbation rank must lie in [1, adapter rank]");
  }
  if (task.samples < 1 || task.steps_per_epoch < 1) throw Error(Errc::invalid_argument, "toy task sizes must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto random = [&](Index rows, Index cols, double scale) {
    Matrix<Scalar> m(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(scale * gauss(rng));
    return m;
  };
  const Index d = task.dim;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  ToyResult<Scalar> out;
  out.base = random(d, d, inv_sqrt_d);
  const Matrix<Scalar> U = random(d, task.perturbation_rank, inv_sqrt_d);
  const Matrix<Scalar> V = random(d, task.perturbation_rank, inv_sqrt_d);
  const Matrix<Scalar> X = random(d, task.samples, 1.0);
  const Matrix<Scalar> Y = (out.base + U * V.transpose()) * X;
  out.base_before = out.base;

  out.adapter = init_adapter<Scalar>(d, d, task.rank, static_cast<Scalar>(task.alpha), rng());
  AdamState<Scalar> sa, sb;
  const std::int64_t total = task.steps_per_epoch * cfg.epochs;
  for (std::int64_t t = 1; t <= total; ++t) {
    auto lg = mse_loss_and_grad(out.base, out.adapter, X, Y);
    if (!std::isfinite(lg.loss)) throw Error(Errc::numeric, "training diverged at step " + std::to_string(t));
    out.losses.push_back(lg.loss);
    adamw_step(out.adapter.A, lg.grad_A, sa, t, cfg, total);
    adamw_step(out.adapter.B, lg.grad_B, sb, t, cfg, total);
  }
  const Scalar final_loss = mse_loss(out.base, out.adapter, X, Y);
  if (!std::isfinite(final_loss)) throw Error(Errc::numeric, "training diverged");
  out.losses.push_back(final_loss);
  out.steps = total;
  return out;
}

// ---------------------------------------------------------------------------
// Parameter accounting

struct WeightMatrix {
  std::string name;
  std::int64_t d_out;
  std::int64_t d_in;
  bool targeted;
  std::int64_t count = 1;  // identical copies (e.g. one per layer)
};

struct ModelShape {
  std::vector<WeightMatrix> matrices;
  std::int64_t extra_params = 0;  // biases, norms and other non-matrix weights

  std::int64_t total_params() const;
  std::int64_t adapter_params(std::int64_t r) const;
};

/// Sum over targeted matrices of r * (d_out + d_in), over total_params().
/// Errc::invalid_argument when nothing is targeted.
double trainable_fraction(const ModelShape& shape, std::int64_t r);

/// 40 decoder layers, hidden 5120, MLP 13824, vocabulary 32000; the four
/// attention projections of each layer are targeted. About 13.0e9 weights.
ModelShape llama2_13b_like_shape();

// ---------------------------------------------------------------------------
// Adapter files: "LORA", u32 version, u32 d_out, u32 d_in, u32 r, f32 alpha,
// then A and B row-major as little-endian float32.

inline constexpr std::uint32_t kAdapterVersion = 1;

template <typename Scalar>
void save_adapter(const LoraAdapter<Scalar>& ad, const std::filesystem::path& path) {
  std::string buf = "LORA";
  auto put = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  };
  put(kAdapterVersion);
  put(static_cast<std::uint32_t>(ad.d_out()));
  put(static_cast<std::uint32_t>(ad.d_in()));
  put(static_cast<std::uint32_t>(ad.rank()));
  put(std::bit_cast<std::uint32_t>(static_cast<float>(ad.alpha)));
  for (Index i = 0; i < ad.A.rows(); ++i)
    for (Index j = 0; j < ad.A.cols(); ++j) put(std::bit_cast<std::uint32_t>(static_cast<float>(ad.A(i, j))));
  for (Index i = 0; i < ad.B.rows(); ++i)
    for (Index j = 0; j < ad.B.cols(); ++j) put(std::bit_cast<std::uint32_t>(static_cast<float>(ad.B(i, j))));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write adapter file " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

template <typename Scalar>
LoraAdapter<Scalar> load_adapter(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open adapter file " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  std::size_t pos = 0;
  auto get = [&]() {
    if (pos + 4 > bytes.size()) throw Error(Errc::truncated, "adapter file is truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  };
  if (bytes.compare(0, 4, "LORA") != 0) throw Error(Errc::parse, "not an adapter file (bad magic)");
  pos = 4;
  if (get() != kAdapterVersion) throw Error(Errc::version, "unsupported adapter file version");
  const Index d_out = get(), d_in = get(), r = get();
  check_adapter_shape(d_out, d_in, r);
  LoraAdapter<Scalar> ad;
  ad.alpha = static_cast<Scalar>(std::bit_cast<float>(get()));
  ad.A.resize(r, d_in);
  ad.B.resize(d_out, r);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < d_in; ++j) ad.A(i, j) = static_cast<Scalar>(std::bit_cast<float>(get()));
  for (Index i = 0; i < d_out; ++i)
    for (Index j = 0; j < r; ++j) ad.B(i, j) = static_cast<Scalar>(std::bit_cast<float>(get()));
  if (pos != bytes.size()) throw Error(Errc::parse, "trailing bytes in adapter file");
  return ad;
}

}  // namespace medrag::lora
