#include "capsforge/backprop.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace capsforge {

std::string_view to_string(LossFn fn) { return fn == LossFn::sse ? "sse" : "cross_entropy"; }

std::optional<LossFn> parse_loss(std::string_view text) {
  if (text == "sse") return LossFn::sse;
  if (text == "cross_entropy" || text == "cross-entropy" || text == "ce") return LossFn::cross_entropy;
  return std::nullopt;
}

namespace {

void require_matching(const Tensor& y, const Tensor& t) {
  if (y.shape() != t.shape()) {
    throw Error(Errc::shape_mismatch,
                "prediction " + to_string(y.shape()) + " vs target " + to_string(t.shape()));
  }
}

void require_distribution(const Tensor& y) {
  double total = 0.0;
  for (double p : y.data()) {
    if (!(p > 0.0)) throw Error(Errc::domain_error, "cross_entropy needs strictly positive predictions");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw Error(Errc::domain_error, "cross_entropy needs predictions summing to 1");
  }
}

}  // namespace

double loss(const Tensor& prediction, const Tensor& target, LossFn fn) {
  require_matching(prediction, target);
  double acc = 0.0;
  if (fn == LossFn::sse) {
    for (std::size_t i = 0; i < prediction.size(); ++i) {
      const double d = prediction[i] - target[i];
      acc += d * d;
    }
    return 0.5 * acc;
  }
  require_distribution(prediction);
  for (std::size_t i = 0; i < prediction.size(); ++i) acc -= target[i] * std::log(prediction[i]);
  return acc;
}

Tensor loss_grad(const Tensor& prediction, const Tensor& target, LossFn fn) {
  require_matching(prediction, target);
  Tensor g(prediction.shape(), prediction.dtype());
  if (fn == LossFn::sse) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = prediction[i] - target[i];
  } else {
    require_distribution(prediction);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = -target[i] / prediction[i];
  }
  g.round_to_dtype();
  return g;
}

Tensor capsule_vjp(const CapsuleFn& fn, const Tensor& total, const Tensor& upstream,
                   std::span<const std::size_t> argmax) {
  const Shape out_shape = capsule_output_shape(fn, total.shape());
  if (upstream.shape() != out_shape) {
    throw Error(Errc::shape_mismatch, fn.name() + " upstream " + to_string(upstream.shape()) +
                                          " vs output " + to_string(out_shape));
  }
  Tensor grad(total.shape(), total.dtype());
  if (auto e = fn.as_elementwise()) {
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = upstream[i] * derivative_scalar(*e, total[i]);
    grad.round_to_dtype();
    return grad;
  }
  switch (fn.kind) {
    case CapsuleFnKind::softmax: {
      // J = diag(y) - y y^T, so g^T J = y * (g - <g, y>).
      const Tensor y = softmax(total);
      double dot = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) dot += upstream[i] * y[i];
      for (std::size_t i = 0; i < y.size(); ++i) grad[i] = y[i] * (upstream[i] - dot);
      break;
    }
    case CapsuleFnKind::squash: {
      // v = a(n) s with a(n) = n / (1 + n^2); J = a I + (a'(n) / n) s s^T.
      double norm_sq = 0.0;
      for (double x : total.data()) norm_sq += x * x;
      if (norm_sq == 0.0) break;  // J vanishes at the origin
      const double n = std::sqrt(norm_sq);
      const double a = n / (1.0 + norm_sq);
      const double da = (1.0 - norm_sq) / ((1.0 + norm_sq) * (1.0 + norm_sq));
      double dot = 0.0;
      for (std::size_t i = 0; i < total.size(); ++i) dot += upstream[i] * total[i];
      for (std::size_t i = 0; i < total.size(); ++i) {
        grad[i] = a * upstream[i] + (da / n) * dot * total[i];
      }
      break;
    }
    case CapsuleFnKind::maxpool: {
      if (argmax.size() != upstream.size()) {
        throw Error(Errc::stale_cache, "maxpool routing table does not match the upstream gradient");
      }
      for (std::size_t o = 0; o < upstream.size(); ++o) grad[argmax[o]] += upstream[o];
      break;
    }
    default:
      break;
  }
  grad.round_to_dtype();
  return grad;
}

ConnectionGrad connection_vjp(const ConnectionSpec& conn, const Tensor& tail_output,
                              const Tensor& head_delta) {
  const Shape expected = weighting_result_shape(conn.op, conn.weight.shape(), tail_output.shape());
  if (head_delta.shape() != expected) {
    throw Error(Errc::shape_mismatch, "delta " + to_string(head_delta.shape()) + " vs result " +
                                          to_string(expected),
                conn.tail + "->" + conn.head);
  }
  ConnectionGrad out;
  const auto dtype = tail_output.dtype();
  switch (conn.op.kind) {
    case WeightingKind::matmul: {
      const std::size_t m = conn.weight.shape()[0], n = conn.weight.shape()[1];
      out.weight = Tensor({m, n}, dtype);
      out.tail = Tensor({n}, dtype);
      for (std::size_t i = 0; i < m; ++i) {
        const double d = head_delta[i];
        for (std::size_t j = 0; j < n; ++j) {
          out.weight.at(i, j) = d * tail_output[j];
          out.tail[j] += conn.weight.at(i, j) * d;
        }
      }
      break;
    }
    case WeightingKind::conv: {
      const auto& ws = conn.weight.shape();
      const std::size_t k = ws[0], d = ws[1], m = ws[2], n = ws[3];
      const std::size_t rows = tail_output.shape()[1], cols = tail_output.shape()[2];
      const std::size_t out_h = head_delta.shape()[1], out_w = head_delta.shape()[2];
      const std::size_t s = conn.op.stride;
      out.weight = Tensor(ws, dtype);
      out.tail = Tensor(tail_output.shape(), dtype);
      const double* x = tail_output.data().data();
      const double* w = conn.weight.data().data();
      const double* delta = head_delta.data().data();
      double* dw = out.weight.data().data();
      double* dx = out.tail.data().data();
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          const double* xj = x + j * rows * cols;
          double* dxj = dx + j * rows * cols;
          const double* wij = w + (i * d + j) * m * n;
          double* dwij = dw + (i * d + j) * m * n;
          for (std::size_t p = 0; p < out_h; ++p) {
            for (std::size_t q = 0; q < out_w; ++q) {
              const double g = delta[(i * out_h + p) * out_w + q];
              if (g == 0.0) continue;
              for (std::size_t u = 0; u < m; ++u) {
                const std::size_t row = (p * s + u) * cols + q * s;
                for (std::size_t v = 0; v < n; ++v) {
                  dwij[u * n + v] += g * xj[row + v];
                  dxj[row + v] += g * wij[u * n + v];
                }
              }
            }
          }
        }
      }
      break;
    }
    case WeightingKind::transfer:
      out.tail = head_delta;
      break;
    case WeightingKind::reshape_flatten:
      out.tail = head_delta.reshaped(tail_output.shape());
      break;
    case WeightingKind::scalar_mult: {
      double acc = 0.0;
      for (std::size_t i = 0; i < head_delta.size(); ++i) acc += head_delta[i] * tail_output[i];
      out.weight = Tensor(conn.weight.shape(), std::vector<double>{acc}, dtype);
      out.tail = head_delta;
      const double w = conn.weight[0];
      for (auto& g : out.tail.data()) g *= w;
      break;
    }
  }
  out.weight.round_to_dtype();
  out.tail.round_to_dtype();
  return out;
}

GradientSet GradientSet::zeros_like(const CapsuleNetwork& net) {
  GradientSet g;
  g.weights.resize(net.connection_count());
  g.biases.resize(net.vertex_count());
  for (std::size_t e = 0; e < net.connection_count(); ++e) {
    if (!net.weight(e).empty()) g.weights[e] = Tensor(net.weight(e).shape(), net.weight(e).dtype());
  }
  for (std::size_t v = 0; v < net.vertex_count(); ++v) {
    if (!net.is_input(v)) g.biases[v] = Tensor(net.bias(v).shape(), net.bias(v).dtype());
  }
  return g;
}

void GradientSet::accumulate(const GradientSet& other) {
  for (std::size_t e = 0; e < weights.size(); ++e) {
    if (!weights[e].empty()) add_inplace(weights[e], other.weights[e]);
  }
  for (std::size_t v = 0; v < biases.size(); ++v) {
    if (!biases[v].empty()) add_inplace(biases[v], other.biases[v]);
  }
}

BackwardResult backward(const CapsuleNetwork& net, const ForwardCache& cache,
                        const TensorMap& targets, LossFn fn) {
  const auto& g = net.dag();
  if (cache.ids != g.vertices() || cache.fingerprint != net.parameter_fingerprint()) {
    throw Error(Errc::stale_cache, "forward cache was produced by different parameters");
  }
  const std::size_t n = g.vertex_count();
  BackwardResult result;
  result.gradients = GradientSet::zeros_like(net);
  std::vector<Tensor> grad_output(n);

  // Total loss over outputs in declaration order.
  for (const auto& id : net.roles().outputs) {
    auto it = targets.find(id);
    if (it == targets.end()) throw Error(Errc::missing_target, "no target for output", id);
    result.loss += loss(cache.output(id), it->second, fn);
  }

  const auto order = g.topo_indices();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto v = *it;
    if (net.is_input(v)) continue;
    const auto& id = g.vertices()[v];
    const auto& fn_v = net.fn(v);
    Tensor delta;
    if (g.out_of(v).empty()) {
      const auto& target = targets.at(id);
      const auto& y = cache.outputs[v];
      if (fn == LossFn::cross_entropy && fn_v.kind == CapsuleFnKind::softmax) {
        // Softmax followed by cross-entropy: delta = (sum T) Y - T.
        (void)loss_grad(y, target, fn);  // domain checks
        double mass = 0.0;
        for (double t : target.data()) mass += t;
        delta = Tensor(y.shape(), y.dtype());
        for (std::size_t i = 0; i < y.size(); ++i) delta[i] = mass * y[i] - target[i];
        delta.round_to_dtype();
      } else {
        delta = capsule_vjp(fn_v, cache.totals[v], loss_grad(y, target, fn), cache.argmax[v]);
      }
    } else {
      delta = capsule_vjp(fn_v, cache.totals[v], grad_output[v], cache.argmax[v]);
    }

    for (auto e : g.in_edges_of(v)) {
      const auto& conn = net.connection(e);
      const auto tail = g.index_of(conn.tail);
      auto grads = connection_vjp(conn, cache.outputs[tail], delta);
      if (!grads.weight.empty()) result.gradients.weights[e] = std::move(grads.weight);
      if (net.is_input(tail)) continue;
      if (grad_output[tail].empty()) {
        grad_output[tail] = std::move(grads.tail);
      } else {
        add_inplace(grad_output[tail], grads.tail);
      }
    }
    result.gradients.biases[v] = delta;
    result.sensitivities[id] = std::move(delta);
  }
  return result;
}

void TrainConfig::validate() const {
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
    throw Error(Errc::invalid_config, "learning rate must be a finite non-negative number");
  }
  if (max_iter < 1) throw Error(Errc::invalid_config, "max_iter must be >= 1");
  if (log_every < 1) throw Error(Errc::invalid_config, "log_every must be >= 1");
}

BatchGradient batch_gradient(const CapsuleNetwork& net, std::span<const TrainingPair> pairs,
                             LossFn fn) {
  BatchGradient batch{GradientSet::zeros_like(net), 0.0};
  for (const auto& pair : pairs) {
    const auto cache = forward(net, pair.inputs);
    const auto result = backward(net, cache, pair.targets, fn);
    batch.gradients.accumulate(result.gradients);
    batch.loss += result.loss;
  }
  return batch;
}

double train_iteration(CapsuleNetwork& net, std::span<const TrainingPair> pairs,
                       const TrainConfig& config) {
  config.validate();
  if (pairs.empty()) throw Error(Errc::invalid_config, "training needs at least one pair");
  const auto batch = batch_gradient(net, pairs, config.loss);
  const double eta = config.learning_rate;
  for (std::size_t e = 0; e < net.connection_count(); ++e) {
    if (net.weight(e).empty()) continue;
    Tensor w = net.weight(e);
    subtract_scaled(w, eta, batch.gradients.weights[e]);
    net.set_weight(e, std::move(w));
  }
  for (std::size_t v = 0; v < net.vertex_count(); ++v) {
    if (net.is_input(v)) continue;
    Tensor b = net.bias(v);
    subtract_scaled(b, eta, batch.gradients.biases[v]);
    net.set_bias(v, std::move(b));
  }
  return batch.loss;
}

TrainResult train(CapsuleNetwork net, std::span<const TrainingPair> pairs, const TrainConfig& config,
                  const ProgressFn& progress) {
  config.validate();
  if (pairs.empty()) throw Error(Errc::invalid_config, "training needs at least one pair");
  if (config.initialize) initialize_parameters(net, config.seed);
  std::vector<double> history;
  history.reserve(static_cast<std::size_t>(config.max_iter));
  for (int iter = 1; iter <= config.max_iter; ++iter) {
    const double l = train_iteration(net, pairs, config);
    history.push_back(l);
    if (progress && (iter == 1 || iter % config.log_every == 0 || iter == config.max_iter)) {
      progress(iter, l);
    }
  }
  return {std::move(net), std::move(history)};
}

namespace {

std::size_t argmax_of(const Tensor& t) {
  const auto d = t.data();
  return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

}  // namespace

EvalMetrics evaluate(const CapsuleNetwork& net, std::span<const TrainingPair> pairs, LossFn fn) {
  EvalMetrics m;
  m.total = pairs.size();
  bool classify = true;
  std::size_t correct = 0;
  double total_loss = 0.0;
  for (const auto& pair : pairs) {
    const auto cache = forward(net, pair.inputs);
    for (const auto& id : net.roles().outputs) {
      auto it = pair.targets.find(id);
      if (it == pair.targets.end()) throw Error(Errc::missing_target, "no target for output", id);
      const auto& y = cache.output(id);
      total_loss += loss(y, it->second, fn);
      if (y.rank() != 1 || y.size() < 2) {
        classify = false;
        continue;
      }
      if (argmax_of(y) == argmax_of(it->second)) ++correct;
    }
  }
  m.mean_loss = pairs.empty() ? 0.0 : total_loss / static_cast<double>(pairs.size());
  if (classify && net.roles().outputs.size() == 1) m.correct = correct;
  return m;
}

GradCheckReport finite_diff_check(const CapsuleNetwork& net, const TrainingPair& pair, LossFn fn,
                                  const GradCheckOptions& options) {
  GradCheckReport report;
  const auto analytic = backward(net, forward(net, pair.inputs), pair.targets, fn).gradients;
  CapsuleNetwork probe = net;
  const double eps = options.epsilon;

  auto loss_at = [&]() {
    const auto cache = forward(probe, pair.inputs);
    double total = 0.0;
    for (const auto& id : probe.roles().outputs) total += loss(cache.output(id), pair.targets.at(id), fn);
    return total;
  };
  auto check = [&](std::span<double> values, const Tensor& grad, const std::string& label) {
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double saved = values[k];
      values[k] = saved + eps;
      const double plus = loss_at();
      values[k] = saved - eps;
      const double minus = loss_at();
      values[k] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = grad[k];
      const double scale = std::max({std::abs(a), std::abs(numeric), options.scale_floor});
      const double err = std::abs(a - numeric) / scale;
      ++report.parameters_checked;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_parameter = label + "[" + std::to_string(k) + "]";
      }
    }
  };
  for (std::size_t e = 0; e < probe.connection_count(); ++e) {
    if (probe.weight(e).empty()) continue;
    const auto& c = probe.connection(e);
    check(probe.weight_data(e), analytic.weights[e], "w:" + c.tail + "->" + c.head);
  }
  for (std::size_t v = 0; v < probe.vertex_count(); ++v) {
    if (probe.is_input(v)) continue;
    check(probe.bias_data(v), analytic.biases[v], "b:" + probe.dag().vertices()[v]);
  }
  return report;
}

double kink_margin(const CapsuleNetwork& net, const ForwardCache& cache) {
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < net.vertex_count(); ++v) {
    if (net.is_input(v)) continue;
    const auto& fn = net.fn(v);
    const auto& u = cache.totals[v];
    if (fn.kind == CapsuleFnKind::relu) {
      for (double x : u.data()) margin = std::min(margin, std::abs(x));
    } else if (fn.kind == CapsuleFnKind::maxpool) {
      const std::size_t d = u.shape()[0], rows = u.shape()[1], cols = u.shape()[2];
      for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t i = 0; i < rows; i += fn.window_h) {
          for (std::size_t j = 0; j < cols; j += fn.window_w) {
            double top = -std::numeric_limits<double>::infinity(), second = top;
            for (std::size_t a = 0; a < fn.window_h; ++a) {
              for (std::size_t b = 0; b < fn.window_w; ++b) {
                const double x = u.at(c, i + a, j + b);
                if (x > top) {
                  second = top;
                  top = x;
                } else if (x > second) {
                  second = x;
                }
              }
            }
            if (fn.window_h * fn.window_w > 1) margin = std::min(margin, top - second);
          }
        }
      }
    }
  }
  return margin;
}

}  // namespace capsforge
