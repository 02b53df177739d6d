#include "capsforge/capsule.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <unordered_set>

namespace capsforge {

bool CapsuleFn::is_elementwise() const { return as_elementwise().has_value(); }

std::optional<Elementwise> CapsuleFn::as_elementwise() const {
  switch (kind) {
    case CapsuleFnKind::relu: return Elementwise::relu;
    case CapsuleFnKind::sigmoid: return Elementwise::sigmoid;
    case CapsuleFnKind::identity: return Elementwise::identity;
    case CapsuleFnKind::tanh: return Elementwise::tanh;
    default: return std::nullopt;
  }
}

std::string CapsuleFn::name() const {
  switch (kind) {
    case CapsuleFnKind::relu: return "relu";
    case CapsuleFnKind::sigmoid: return "sigmoid";
    case CapsuleFnKind::identity: return "identity";
    case CapsuleFnKind::tanh: return "tanh";
    case CapsuleFnKind::softmax: return "softmax";
    case CapsuleFnKind::squash: return "squash";
    case CapsuleFnKind::maxpool:
      return "maxpool(" + std::to_string(window_h) + "x" + std::to_string(window_w) + ")";
  }
  return "identity";
}

std::string WeightingOp::name() const {
  switch (kind) {
    case WeightingKind::matmul: return "matmul";
    case WeightingKind::conv: return "conv(s=" + std::to_string(stride) + ")";
    case WeightingKind::transfer: return "transfer";
    case WeightingKind::reshape_flatten: return "reshape";
    case WeightingKind::scalar_mult: return "scalar";
  }
  return "transfer";
}

Shape weighting_result_shape(const WeightingOp& op, const Shape& weight_shape,
                             const Shape& tail_shape) {
  auto mismatch = [&](const std::string& what) {
    return Error(Errc::shape_mismatch, op.name() + ": " + what + " (weight " +
                                           to_string(weight_shape) + ", input " +
                                           to_string(tail_shape) + ")");
  };
  if (op.has_weight() && weight_shape.empty()) throw mismatch("missing weight");
  if (!op.has_weight() && !weight_shape.empty()) throw mismatch("operation takes no weight");

  switch (op.kind) {
    case WeightingKind::matmul:
      if (weight_shape.size() != 2 || tail_shape.size() != 1) throw mismatch("needs matrix x vector");
      if (weight_shape[1] != tail_shape[0]) throw mismatch("inner dimensions differ");
      return {weight_shape[0]};
    case WeightingKind::conv: {
      if (weight_shape.size() != 4 || tail_shape.size() != 3) {
        throw mismatch("needs k x d x m x n kernels over a d x M x N input");
      }
      if (weight_shape[1] != tail_shape[0]) throw mismatch("channel counts differ");
      const auto h = conv_output_extent(tail_shape[1], weight_shape[2], op.stride, "height");
      const auto w = conv_output_extent(tail_shape[2], weight_shape[3], op.stride, "width");
      return {weight_shape[0], h, w};
    }
    case WeightingKind::transfer:
      return tail_shape;
    case WeightingKind::reshape_flatten:
      return {element_count(tail_shape)};
    case WeightingKind::scalar_mult:
      if (element_count(weight_shape) != 1) throw mismatch("scalar weight must have one element");
      return tail_shape;
  }
  return tail_shape;
}

Shape capsule_output_shape(const CapsuleFn& fn, const Shape& total_shape) {
  switch (fn.kind) {
    case CapsuleFnKind::softmax:
    case CapsuleFnKind::squash:
      if (total_shape.size() != 1) {
        throw Error(Errc::shape_mismatch, fn.name() + " needs a vector input, got " +
                                              to_string(total_shape));
      }
      return total_shape;
    case CapsuleFnKind::maxpool:
      if (total_shape.size() != 3) {
        throw Error(Errc::shape_mismatch, fn.name() + " needs a d x M x N input, got " +
                                              to_string(total_shape));
      }
      if (fn.window_h == 0 || fn.window_w == 0 || total_shape[1] % fn.window_h != 0 ||
          total_shape[2] % fn.window_w != 0) {
        throw Error(Errc::window_mismatch,
                    fn.name() + " does not divide " + to_string(total_shape));
      }
      return {total_shape[0], total_shape[1] / fn.window_h, total_shape[2] / fn.window_w};
    default:
      return total_shape;
  }
}

Tensor apply_weighting(const WeightingOp& op, const Tensor& weight, const Tensor& tail_output) {
  switch (op.kind) {
    case WeightingKind::matmul: return matmul(weight, tail_output);
    case WeightingKind::conv: return conv_connection_apply(weight, tail_output, op.stride);
    case WeightingKind::transfer: return tail_output;
    case WeightingKind::reshape_flatten: return reshape_flatten(tail_output);
    case WeightingKind::scalar_mult: {
      Tensor out = tail_output;
      const double w = weight[0];
      for (auto& x : out.data()) x *= w;
      out.round_to_dtype();
      return out;
    }
  }
  return tail_output;
}

Tensor apply_capsule_fn(const CapsuleFn& fn, const Tensor& total, std::vector<std::size_t>* argmax) {
  if (auto e = fn.as_elementwise()) return elementwise_apply(total, *e);
  switch (fn.kind) {
    case CapsuleFnKind::softmax: return softmax(total);
    case CapsuleFnKind::squash: return squash(total);
    case CapsuleFnKind::maxpool: {
      auto pooled = max_downsample(total, fn.window_h, fn.window_w);
      if (argmax) *argmax = std::move(pooled.argmax);
      return std::move(pooled.values);
    }
    default: return total;
  }
}

namespace {

std::string edge_name(const ConnectionSpec& c) { return c.tail + "->" + c.head; }

ShapeReport infer_shapes(const CapsuleNetwork& net) {
  ShapeReport report;
  const auto& g = net.dag();
  std::vector<std::optional<Shape>> out(g.vertex_count());
  for (auto v : g.topo_indices()) {
    const auto& id = g.vertices()[v];
    if (net.is_input(v)) {
      out[v] = net.input_shape(v);
      report.output_shape[id] = net.input_shape(v);
      continue;
    }
    std::optional<Shape> total;
    bool edge_failed = false;
    bool upstream_unknown = false;
    std::vector<std::pair<std::string, Shape>> results;
    for (auto e : g.in_edges_of(v)) {
      const auto& c = net.connection(e);
      const auto tail = g.index_of(c.tail);
      if (!out[tail]) {
        upstream_unknown = true;
        continue;
      }
      if (!c.weight.empty() && c.weight.dtype() != net.dtype()) {
        report.errors.push_back({Errc::data_type_mismatch, edge_name(c),
                                 "weight is " + std::string(to_string(c.weight.dtype()))});
        edge_failed = true;
        continue;
      }
      try {
        results.emplace_back(edge_name(c), weighting_result_shape(c.op, c.weight.shape(), *out[tail]));
      } catch (const Error& err) {
        report.errors.push_back({err.code(), edge_name(c), err.message()});
        edge_failed = true;
      }
    }
    const auto& bias = net.bias(v);
    bool agree = true;
    for (const auto& r : results) agree = agree && r.second == results.front().second;
    if (!agree) {
      std::string detail;
      for (const auto& r : results) detail += " " + r.first + "=" + to_string(r.second);
      report.errors.push_back({Errc::shape_mismatch, id, "incoming results disagree:" + detail});
    } else if (!results.empty()) {
      total = results.front().second;
      if (bias.shape() != *total) {
        report.errors.push_back({Errc::bias_mismatch, id,
                                 "bias " + to_string(bias.shape()) + " vs total input " +
                                     to_string(*total)});
      }
    }
    if (!bias.empty() && bias.dtype() != net.dtype()) {
      report.errors.push_back({Errc::data_type_mismatch, id,
                               "bias is " + std::string(to_string(bias.dtype()))});
    }
    // Fall back on the declared bias shape so that downstream checks still run.
    if (!total && (edge_failed || !agree) && !upstream_unknown && !bias.empty()) total = bias.shape();
    if (!total) continue;
    report.total_shape[id] = *total;
    try {
      out[v] = capsule_output_shape(net.fn(v), *total);
      report.output_shape[id] = *out[v];
    } catch (const Error& err) {
      report.errors.push_back({err.code(), id, err.message()});
    }
  }
  return report;
}

}  // namespace

CapsuleNetwork CapsuleNetwork::create(std::vector<VertexSpec> vertices,
                                      std::vector<ConnectionSpec> connections) {
  std::vector<VertexId> ids;
  for (const auto& spec : vertices) {
    ids.push_back(std::visit([](const auto& s) { return s.id; }, spec));
  }
  std::vector<Edge> edges;
  for (const auto& c : connections) edges.push_back({c.tail, c.head});

  CapsuleNetwork net;
  net.dag_ = Dag::build(ids, std::move(edges));
  if (net.dag_.vertex_count() == 0) throw Error(Errc::not_connected, "network has no vertices");
  if (!net.dag_.is_connected()) throw Error(Errc::not_connected, "capsule graph is not connected");
  net.roles_ = net.dag_.roles();

  const std::size_t n = ids.size();
  net.is_input_.assign(n, false);
  net.input_shapes_.resize(n);
  net.fns_.resize(n);
  net.biases_.resize(n);
  bool dtype_set = false;
  for (std::size_t v = 0; v < n; ++v) {
    const bool has_in = !net.dag_.in_of(v).empty();
    if (const auto* in = std::get_if<InputSpec>(&vertices[v])) {
      if (has_in) throw Error(Errc::precondition, "input capsule has incoming connections", in->id);
      net.is_input_[v] = true;
      net.input_shapes_[v] = in->shape;
      if (!dtype_set) {
        net.dtype_ = in->dtype;
        dtype_set = true;
      } else if (in->dtype != net.dtype_) {
        throw Error(Errc::data_type_mismatch, "inputs mix data types", in->id);
      }
    } else {
      auto& cap = std::get<CapsuleSpec>(vertices[v]);
      if (!has_in) throw Error(Errc::precondition, "capsule has no incoming connection", cap.id);
      net.fns_[v] = cap.fn;
      net.biases_[v] = std::move(cap.bias);
    }
  }
  net.connections_ = std::move(connections);
  net.report_ = infer_shapes(net);
  return net;
}

void CapsuleNetwork::set_bias(std::size_t v, Tensor bias) {
  if (bias.shape() != biases_[v].shape()) {
    throw Error(Errc::bias_mismatch, "bias shape " + to_string(bias.shape()) + " vs " +
                                         to_string(biases_[v].shape()),
                dag_.vertices()[v]);
  }
  if (bias.dtype() != biases_[v].dtype()) {
    throw Error(Errc::data_type_mismatch, "bias dtype " + std::string(to_string(bias.dtype())),
                dag_.vertices()[v]);
  }
  biases_[v] = std::move(bias);
}

void CapsuleNetwork::set_weight(std::size_t e, Tensor weight) {
  if (weight.shape() != connections_[e].weight.shape()) {
    throw Error(Errc::shape_mismatch, "weight shape " + to_string(weight.shape()) + " vs " +
                                          to_string(connections_[e].weight.shape()),
                edge_name(connections_[e]));
  }
  if (weight.dtype() != connections_[e].weight.dtype()) {
    throw Error(Errc::data_type_mismatch, "weight dtype " + std::string(to_string(weight.dtype())),
                edge_name(connections_[e]));
  }
  connections_[e].weight = std::move(weight);
}

std::size_t CapsuleNetwork::parameter_count() const {
  std::size_t total = 0;
  for (std::size_t v = 0; v < biases_.size(); ++v) total += biases_[v].size();
  for (const auto& c : connections_) total += c.weight.size();
  return total;
}

std::uint64_t CapsuleNetwork::parameter_fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](std::span<const double> values) {
    for (double x : values) {
      std::uint64_t bits;
      std::memcpy(&bits, &x, sizeof bits);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xffU;
        h *= 1099511628211ULL;
      }
    }
  };
  for (const auto& b : biases_) mix(b.data());
  for (const auto& c : connections_) mix(c.weight.data());
  return h;
}

std::vector<VertexSpec> CapsuleNetwork::vertex_specs() const {
  std::vector<VertexSpec> out;
  for (std::size_t v = 0; v < vertex_count(); ++v) {
    const auto& id = dag_.vertices()[v];
    if (is_input_[v]) {
      out.emplace_back(InputSpec{id, input_shapes_[v], dtype_});
    } else {
      out.emplace_back(CapsuleSpec{id, fns_[v], biases_[v]});
    }
  }
  return out;
}

VertexId CapsuleNetwork::single_input() const {
  if (roles_.inputs.size() != 1) {
    throw Error(Errc::precondition, "expected one input capsule, found " +
                                        std::to_string(roles_.inputs.size()));
  }
  return roles_.inputs.front();
}

VertexId CapsuleNetwork::single_output() const {
  if (roles_.outputs.size() != 1) {
    throw Error(Errc::precondition, "expected one output capsule, found " +
                                        std::to_string(roles_.outputs.size()));
  }
  return roles_.outputs.front();
}

ShapeReport validate_shapes(const CapsuleNetwork& net) { return net.shape_report(); }

const Tensor& ForwardCache::output(const VertexId& id) const {
  auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) throw Error(Errc::unknown_node, "no such vertex", id);
  return outputs[static_cast<std::size_t>(it - ids.begin())];
}

const Tensor& ForwardCache::total(const VertexId& id) const {
  auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) throw Error(Errc::unknown_node, "no such vertex", id);
  return totals[static_cast<std::size_t>(it - ids.begin())];
}

ForwardCache forward(const CapsuleNetwork& net, const TensorMap& inputs) {
  const auto& report = net.shape_report();
  if (!report.ok()) throw Error(Errc::shape_errors, "network failed shape validation", report.errors);

  const auto& g = net.dag();
  const std::size_t n = g.vertex_count();
  ForwardCache cache;
  cache.ids = g.vertices();
  cache.outputs.resize(n);
  cache.totals.resize(n);
  cache.argmax.resize(n);
  cache.fingerprint = net.parameter_fingerprint();

  for (auto v : g.topo_indices()) {
    const auto& id = g.vertices()[v];
    if (net.is_input(v)) {
      auto it = inputs.find(id);
      if (it == inputs.end()) throw Error(Errc::missing_input, "no tensor for input", id);
      if (it->second.shape() != net.input_shape(v)) {
        throw Error(Errc::input_shape_mismatch, "expected " + to_string(net.input_shape(v)) +
                                                    ", got " + to_string(it->second.shape()),
                    id);
      }
      cache.outputs[v] = it->second.dtype() == net.dtype() ? it->second
                                                           : it->second.with_dtype(net.dtype());
      continue;
    }
    Tensor total;
    for (auto e : g.in_edges_of(v)) {
      const auto& c = net.connection(e);
      Tensor term = apply_weighting(c.op, c.weight, cache.outputs[g.index_of(c.tail)]);
      if (total.empty()) {
        total = std::move(term);
      } else {
        add_inplace(total, term);
      }
    }
    add_inplace(total, net.bias(v));
    cache.outputs[v] = apply_capsule_fn(net.fn(v), total, &cache.argmax[v]);
    cache.totals[v] = std::move(total);
  }
  return cache;
}

namespace {

class UniformSource {
 public:
  explicit UniformSource(std::uint64_t seed) : engine_(seed) {}
  // Uniform in [-r, r] from the top 53 bits, independent of the standard
  // library's distribution implementation.
  double symmetric(double r) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return (2.0 * u - 1.0) * r;
  }

 private:
  std::mt19937_64 engine_;
};

std::size_t fan_in(const ConnectionSpec& c) {
  const auto& s = c.weight.shape();
  switch (c.op.kind) {
    case WeightingKind::matmul: return s[1];
    case WeightingKind::conv: return s[1] * s[2] * s[3];
    default: return 1;
  }
}

}  // namespace

void initialize_parameters(CapsuleNetwork& net, std::uint64_t seed) {
  UniformSource source(seed);
  for (std::size_t e = 0; e < net.connection_count(); ++e) {
    const auto& c = net.connection(e);
    if (!c.op.has_weight()) continue;
    const double r = 1.0 / std::sqrt(static_cast<double>(fan_in(c)));
    Tensor w(c.weight.shape(), c.weight.dtype());
    for (auto& x : w.data()) x = source.symmetric(r);
    w.round_to_dtype();
    net.set_weight(e, std::move(w));
  }
  for (std::size_t v = 0; v < net.vertex_count(); ++v) {
    if (net.is_input(v)) continue;
    net.set_bias(v, Tensor(net.bias(v).shape(), net.bias(v).dtype()));
  }
}

CapsuleNetwork build_mlp_path(const std::vector<std::size_t>& dims,
                              const std::vector<CapsuleFn>& fns, std::uint64_t seed) {
  if (dims.size() < 2) throw Error(Errc::degenerate, "an MLP path needs at least two layers");
  if (fns.size() != dims.size() - 1) {
    throw Error(Errc::precondition, "need one capsule function per non-input layer");
  }
  std::vector<VertexId> ids{"x"};
  for (std::size_t i = 1; i + 1 < dims.size(); ++i) ids.push_back("h" + std::to_string(i));
  ids.push_back("o");

  std::vector<VertexSpec> vertices{InputSpec{ids[0], {dims[0]}}};
  std::vector<ConnectionSpec> connections;
  for (std::size_t i = 1; i < dims.size(); ++i) {
    vertices.emplace_back(CapsuleSpec{ids[i], fns[i - 1], Tensor({dims[i]})});
    connections.push_back({ids[i - 1], ids[i], WeightingOp::matmul(), Tensor({dims[i], dims[i - 1]})});
  }
  auto net = CapsuleNetwork::create(std::move(vertices), std::move(connections));
  initialize_parameters(net, seed);
  return net;
}

CapsuleNetwork build_lenet_path(const LenetConfig& cfg, std::uint64_t seed) {
  Shape conv1, pool1, conv2, pool2;
  try {
    if (cfg.input.size() != 3) throw Error(Errc::shape_mismatch, "input must be d x M x N");
    const auto& in = cfg.input;
    conv1 = {cfg.conv1.kernels,
             conv_output_extent(in[1], cfg.conv1.height, cfg.conv1.stride, "height"),
             conv_output_extent(in[2], cfg.conv1.width, cfg.conv1.stride, "width")};
    pool1 = capsule_output_shape(CapsuleFn::maxpool(cfg.pool1.height, cfg.pool1.width), conv1);
    conv2 = {cfg.conv2.kernels,
             conv_output_extent(pool1[1], cfg.conv2.height, cfg.conv2.stride, "height"),
             conv_output_extent(pool1[2], cfg.conv2.width, cfg.conv2.stride, "width")};
    pool2 = capsule_output_shape(CapsuleFn::maxpool(cfg.pool2.height, cfg.pool2.width), conv2);
  } catch (const Error& err) {
    throw Error(Errc::shape_errors, "LeNet configuration is inconsistent",
                std::vector<Diagnostic>{{err.code(), "config", err.message()}});
  }
  const std::size_t flat = element_count(pool2);

  std::vector<VertexSpec> vertices{
      InputSpec{"x", cfg.input},
      CapsuleSpec{"conv1", CapsuleFn::relu(), Tensor(conv1)},
      CapsuleSpec{"pool1", CapsuleFn::maxpool(cfg.pool1.height, cfg.pool1.width), Tensor(conv1)},
      CapsuleSpec{"conv2", CapsuleFn::relu(), Tensor(conv2)},
      CapsuleSpec{"pool2", CapsuleFn::maxpool(cfg.pool2.height, cfg.pool2.width), Tensor(conv2)},
      CapsuleSpec{"flatten", CapsuleFn::identity(), Tensor({flat})},
      CapsuleSpec{"fc", CapsuleFn::relu(), Tensor({cfg.hidden})},
      CapsuleSpec{"out", CapsuleFn::softmax(), Tensor({cfg.classes})},
  };
  std::vector<ConnectionSpec> connections{
      {"x", "conv1", WeightingOp::conv(cfg.conv1.stride),
       Tensor({cfg.conv1.kernels, cfg.input[0], cfg.conv1.height, cfg.conv1.width})},
      {"conv1", "pool1", WeightingOp::transfer(), {}},
      {"pool1", "conv2", WeightingOp::conv(cfg.conv2.stride),
       Tensor({cfg.conv2.kernels, cfg.conv1.kernels, cfg.conv2.height, cfg.conv2.width})},
      {"conv2", "pool2", WeightingOp::transfer(), {}},
      {"pool2", "flatten", WeightingOp::reshape_flatten(), {}},
      {"flatten", "fc", WeightingOp::matmul(), Tensor({cfg.hidden, flat})},
      {"fc", "out", WeightingOp::matmul(), Tensor({cfg.classes, cfg.hidden})},
  };
  auto net = CapsuleNetwork::create(std::move(vertices), std::move(connections));
  if (!net.shape_report().ok()) {
    throw Error(Errc::shape_errors, "LeNet configuration is inconsistent", net.shape_report().errors);
  }
  initialize_parameters(net, seed);
  return net;
}

std::string element_id(const VertexId& capsule, std::size_t k) {
  return capsule + "[" + std::to_string(k) + "]";
}

PlainNetwork expand_to_plain(const CapsuleNetwork& net) {
  const auto& report = net.shape_report();
  if (!report.ok()) throw Error(Errc::shape_errors, "network failed shape validation", report.errors);
  const auto& g = net.dag();
  PlainNetwork plain;
  for (std::size_t v = 0; v < g.vertex_count(); ++v) {
    const auto& id = g.vertices()[v];
    if (net.is_input(v)) continue;
    if (!net.fn(v).is_elementwise()) {
      throw Error(Errc::unsupported, net.fn(v).name() + " capsule has no scalar expansion", id);
    }
    for (auto e : g.in_edges_of(v)) {
      const auto kind = net.connection(e).op.kind;
      if (kind == WeightingKind::conv) {
        throw Error(Errc::unsupported, "convolution has no scalar expansion",
                    net.connection(e).tail + "->" + id);
      }
    }
  }

  for (auto v : g.topo_indices()) {
    const auto& id = g.vertices()[v];
    if (net.is_input(v)) {
      for (std::size_t k = 0; k < element_count(net.input_shape(v)); ++k) {
        plain.inputs.push_back(element_id(id, k));
      }
      continue;
    }
    const auto activation = *net.fn(v).as_elementwise();
    const auto& bias = net.bias(v);
    for (std::size_t i = 0; i < bias.size(); ++i) {
      const auto head = element_id(id, i);
      plain.neurons.push_back({head, activation, bias[i]});
      for (auto e : g.in_edges_of(v)) {
        const auto& c = net.connection(e);
        switch (c.op.kind) {
          case WeightingKind::matmul: {
            const std::size_t cols = c.weight.shape()[1];
            for (std::size_t j = 0; j < cols; ++j) {
              plain.connections.push_back({element_id(c.tail, j), head, c.weight.at(i, j)});
            }
            break;
          }
          case WeightingKind::scalar_mult:
            plain.connections.push_back({element_id(c.tail, i), head, c.weight[0]});
            break;
          case WeightingKind::transfer:
          case WeightingKind::reshape_flatten:
            plain.connections.push_back({element_id(c.tail, i), head, 1.0});
            break;
          case WeightingKind::conv:
            break;
        }
      }
    }
  }
  return plain;
}

}  // namespace capsforge
