#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "memo/attn_store.hpp"

namespace memo {

/// One point of the hyperparameter grid. Variable fields: pooling, conv_features, kernel.
struct CnnConfig {
  Pooling pooling = Pooling::max;
  std::size_t conv_features = 10;
  std::size_t kernel = 6;
  std::size_t pool_size = 2;
  std::size_t fc_features = 64;
  double dropout = 0.5;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double weight_decay = 0.1;
  std::size_t epochs = 3;
  std::size_t num_classes = 3;
  std::size_t in_channels = 8;
  std::uint64_t seed = 0;

  /// Short tag such as "max-f10-k6".
  std::string id() const;

  bool operator==(const CnnConfig&) const = default;
};

/// {max, mean} x {10, 16} x {6, 8}, fixed fields at their table values.
std::vector<CnnConfig> config_grid(std::size_t in_channels, std::size_t num_classes,
                                   std::uint64_t seed = 0);

/// Shape of the network. Convolutions are stride 1 with zero "same" padding
/// (low side (K-1)/2), pools are non-overlapping, so spatial size goes S -> S/P -> S/P^2.
struct CnnArch {
  std::size_t in_channels = 1;
  std::size_t input_size = kSeqLen;
  std::size_t conv_features = 10;
  std::size_t kernel = 6;
  std::size_t pool_size = 2;
  std::size_t fc_features = 64;
  std::size_t num_classes = 3;
  double dropout = 0.5;
  /// false builds the linear test variant with every ReLU removed.
  bool relu = true;

  static CnnArch from_config(const CnnConfig& config, std::size_t input_size = kSeqLen);

  std::size_t pool1_size() const { return input_size / pool_size; }
  std::size_t pool2_size() const { return pool1_size() / pool_size; }
  std::size_t flatten_dim() const { return conv_features * pool2_size() * pool2_size(); }
  std::size_t input_count() const { return in_channels * input_size * input_size; }
  std::size_t param_count() const;
  /// Throws ConfigError when a dimension is zero or the spatial size vanishes.
  void check() const;
};

/// Closed-form trainable parameter count of a grid config on 64x64 input.
std::size_t param_count(const CnnConfig& config, std::size_t input_size = kSeqLen);

enum class ParamTensor {
  conv1_weight,  // F x L x K x K
  conv1_bias,    // F
  conv2_weight,  // F x F x K x K
  conv2_bias,    // F
  fc1_weight,    // flatten x fc
  fc1_bias,      // fc
  fc2_weight,    // fc x N
  fc2_bias,      // N
};
inline constexpr std::size_t kParamTensorCount = 8;

/// How a ReLU passes gradient back: `standard` where its input is positive, `guided`
/// additionally only where the incoming gradient is positive.
enum class ReluGate { standard, guided };

template <typename Real>
class Cnn {
 public:
  /// Inverted-dropout multipliers (0 or 1/(1-p)) for the three dropout sites.
  struct DropoutMasks {
    std::vector<Real> conv1;
    std::vector<Real> conv2;
    std::vector<Real> fc1;
  };

  /// Per-sample intermediates of one forward pass, consumed by backward().
  struct Cache {
    bool training = false;
    DropoutMasks masks;
    std::vector<Real> input;
    std::vector<Real> conv1_pre, conv1_out, pool1;
    std::vector<std::uint32_t> pool1_arg;
    std::vector<Real> conv2_pre, conv2_out, pool2;
    std::vector<std::uint32_t> pool2_arg;
    std::vector<Real> fc1_pre, fc1_out;
    std::vector<Real> logits;
  };

  /// Fan-in uniform weights U(-sqrt(6/fan_in), +sqrt(6/fan_in)), zero biases.
  Cnn(const CnnArch& arch, std::uint64_t seed);

  const CnnArch& arch() const noexcept { return arch_; }
  std::size_t param_count() const noexcept { return params_.size(); }
  std::span<Real> params() noexcept { return params_; }
  std::span<const Real> params() const noexcept { return params_; }
  std::span<Real> tensor(ParamTensor t) noexcept;
  std::span<const Real> tensor(ParamTensor t) const noexcept;
  /// Slice of a flat gradient buffer laid out like params().
  std::span<Real> tensor_of(std::span<Real> flat, ParamTensor t) const noexcept;
  std::size_t tensor_offset(ParamTensor t) const noexcept { return offsets_[static_cast<int>(t)]; }
  std::size_t tensor_size(ParamTensor t) const noexcept { return sizes_[static_cast<int>(t)]; }

  /// Dropout RNG; only training consumes it.
  std::mt19937_64& rng() noexcept { return rng_; }

  DropoutMasks sample_masks(std::uint64_t seed) const;

  /// masks == nullptr runs in inference mode (dropout is the identity).
  void forward(std::span<const Real> input, const DropoutMasks* masks, Cache& cache) const;
  std::vector<Real> logits(std::span<const Real> input) const;

  /// Back-propagates dlogits through the cached pass. Accumulates into param_grad and
  /// overwrites input_grad; either may be empty to skip it.
  void backward(const Cache& cache, std::span<const Real> dlogits, std::span<Real> param_grad,
                std::span<Real> input_grad, ReluGate gate = ReluGate::standard) const;

 private:
  CnnArch arch_;
  std::vector<Real> params_;
  std::array<std::size_t, kParamTensorCount> offsets_{};
  std::array<std::size_t, kParamTensorCount> sizes_{};
  std::mt19937_64 rng_;
};

extern template class Cnn<float>;
extern template class Cnn<double>;

template <typename Real>
using Batch = std::vector<std::span<const Real>>;

/// Batched inference or training-mode forward (training draws masks from model.rng()).
template <typename Real>
std::vector<std::vector<Real>> forward(Cnn<Real>& model, const Batch<Real>& batch, bool training,
                                       unsigned threads = 1);

template <typename Real>
struct LossAndGrad {
  double loss = 0.0;
  std::vector<Real> grad;
};

/// Mean softmax cross-entropy and its exact gradient. `masks` holds one mask set per
/// sample (training) or is empty (inference). The result does not depend on `threads`.
template <typename Real>
LossAndGrad<Real> loss_and_backward(const Cnn<Real>& model, const Batch<Real>& batch,
                                    std::span<const std::size_t> labels,
                                    const std::vector<typename Cnn<Real>::DropoutMasks>& masks,
                                    unsigned threads = 1);

/// Numerically stable softmax cross-entropy of one logit row.
template <typename Real>
double cross_entropy(std::span<const Real> logits, std::size_t label);

template <typename Real>
std::vector<double> softmax(std::span<const Real> logits);

/// Lowest index among the maxima.
template <typename Real>
std::size_t argmax(std::span<const Real> values);

/// Adaptive moments with decoupled weight decay: p <- p(1 - lr*wd) - lr*m_hat/(sqrt(v_hat)+eps).
class AdamW {
 public:
  AdamW(double learning_rate, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8)
      : lr_(learning_rate), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  template <typename Real>
  void step(std::span<Real> params, std::span<const Real> grads);

  std::uint64_t steps() const noexcept { return t_; }

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

template <typename Real>
struct TrainExample {
  std::span<const Real> input;
  std::size_t label = 0;
};

struct EpochSnapshot {
  std::size_t epoch = 0;
  double mean_train_loss = 0.0;
  std::vector<float> params;
};

struct TrainOptions {
  unsigned threads = 1;
  /// Overrides config.epochs when non-zero.
  std::size_t epochs = 0;
  /// Keep a parameter snapshot after every epoch.
  bool keep_snapshots = true;
  std::function<void(std::size_t epoch, double mean_loss)> on_epoch;
};

/// Shuffled mini-batches, AdamW, one snapshot per epoch. Reproducible from config.seed.
template <typename Real>
std::vector<EpochSnapshot> train(Cnn<Real>& model, std::span<const TrainExample<Real>> data,
                                 const CnnConfig& config, const TrainOptions& options = {});

}  // namespace memo
