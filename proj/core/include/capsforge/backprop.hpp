#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "capsforge/capsule.hpp"

namespace capsforge {

/// sse = 1/2 sum (Y - T)^2; cross_entropy = -sum T log Y.
enum class LossFn { sse, cross_entropy };

std::string_view to_string(LossFn fn);
std::optional<LossFn> parse_loss(std::string_view text);

/// Throws ShapeMismatch, or DomainError when cross_entropy sees a
/// prediction that is not a strictly positive probability vector.
double loss(const Tensor& prediction, const Tensor& target, LossFn fn);
Tensor loss_grad(const Tensor& prediction, const Tensor& target, LossFn fn);

/// upstream^T * d cap / dU at U = `total`. `argmax` is the routing table
/// recorded by forward() for maxpool and ignored otherwise.
Tensor capsule_vjp(const CapsuleFn& fn, const Tensor& total, const Tensor& upstream,
                   std::span<const std::size_t> argmax = {});

struct ConnectionGrad {
  Tensor weight;  // dL/dW; empty for weight-free operations
  Tensor tail;    // contribution to dL/dY_tail
};

/// Gradients of one weighting connection given the head's sensitivity.
ConnectionGrad connection_vjp(const ConnectionSpec& conn, const Tensor& tail_output,
                              const Tensor& head_delta);

/// Parameter gradients, indexed like the network: one entry per
/// connection (empty for weight-free ones) and per vertex (empty for
/// inputs).
struct GradientSet {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  static GradientSet zeros_like(const CapsuleNetwork& net);
  void accumulate(const GradientSet& other);
};

struct BackwardResult {
  TensorMap sensitivities;  // delta_H = dL/dU_H per non-input capsule
  GradientSet gradients;
  double loss = 0.0;
};

/// Reverse-mode sweep over the cache of a forward() call on the same
/// parameters. Throws MissingTarget or StaleCache.
BackwardResult backward(const CapsuleNetwork& net, const ForwardCache& cache,
                        const TensorMap& targets, LossFn fn);

struct TrainingPair {
  TensorMap inputs;
  TensorMap targets;
};

struct TrainConfig {
  double learning_rate = 0.01;
  int max_iter = 1;
  LossFn loss = LossFn::sse;
  std::uint64_t seed = 0;
  /// Progress callback stride.
  int log_every = 1;
  /// Re-initialize parameters from `seed` before the first iteration;
  /// false resumes from the network's current parameters.
  bool initialize = true;

  /// Throws InvalidConfig. A zero learning rate is accepted (it leaves the
  /// parameters fixed); negative or non-finite rates are not.
  void validate() const;
};

/// Summed per-pair gradients (in pair order) and the summed loss.
struct BatchGradient {
  GradientSet gradients;
  double loss = 0.0;
};

BatchGradient batch_gradient(const CapsuleNetwork& net, std::span<const TrainingPair> pairs,
                             LossFn fn);

/// One full-batch descent step W <- W - eta dW, B <- B - eta dB. Returns
/// the batch loss before the step.
double train_iteration(CapsuleNetwork& net, std::span<const TrainingPair> pairs,
                       const TrainConfig& config);

struct TrainResult {
  CapsuleNetwork network;
  /// Batch loss at the start of each iteration.
  std::vector<double> loss_history;
};

using ProgressFn = std::function<void(int iteration, double loss)>;

TrainResult train(CapsuleNetwork net, std::span<const TrainingPair> pairs,
                  const TrainConfig& config, const ProgressFn& progress = {});

struct EvalMetrics {
  double mean_loss = 0.0;
  std::size_t total = 0;
  /// Argmax hits; set only when every output is a vector of length > 1.
  std::optional<std::size_t> correct;
};

EvalMetrics evaluate(const CapsuleNetwork& net, std::span<const TrainingPair> pairs, LossFn fn);

struct GradCheckOptions {
  double epsilon = 1e-6;
  /// Denominator floor of the relative error, so that gradients near zero
  /// are judged on absolute error (floor * tolerance).
  double scale_floor = 1e-4;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t parameters_checked = 0;
  /// "w:tail->head[k]" or "b:id[k]" of the worst parameter.
  std::string worst_parameter;
};

/// Central differences (L(p + eps) - L(p - eps)) / 2 eps over every scalar
/// parameter, compared with backward().
GradCheckReport finite_diff_check(const CapsuleNetwork& net, const TrainingPair& pair, LossFn fn,
                                  const GradCheckOptions& options = {});

/// Smallest distance of the forward pass from a non-differentiable point:
/// |U| over relu capsules and the gap between the two largest entries of
/// every maxpool block. Infinity when there are none.
double kink_margin(const CapsuleNetwork& net, const ForwardCache& cache);

}  // namespace capsforge
