#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "capsforge/error.hpp"
#include "capsforge/generation.hpp"
#include "capsforge/graph.hpp"
#include "capsforge/tensor.hpp"

namespace capsforge {

enum class CapsuleFnKind { relu, sigmoid, identity, tanh, softmax, squash, maxpool };

/// Capsule function cap(U).
struct CapsuleFn {
  CapsuleFnKind kind = CapsuleFnKind::identity;
  std::size_t window_h = 0;
  std::size_t window_w = 0;

  static CapsuleFn relu() { return {CapsuleFnKind::relu}; }
  static CapsuleFn sigmoid() { return {CapsuleFnKind::sigmoid}; }
  static CapsuleFn identity() { return {CapsuleFnKind::identity}; }
  static CapsuleFn tanh() { return {CapsuleFnKind::tanh}; }
  static CapsuleFn softmax() { return {CapsuleFnKind::softmax}; }
  static CapsuleFn squash() { return {CapsuleFnKind::squash}; }
  static CapsuleFn maxpool(std::size_t h, std::size_t w) { return {CapsuleFnKind::maxpool, h, w}; }

  bool is_elementwise() const;
  std::optional<Elementwise> as_elementwise() const;
  std::string name() const;

  friend bool operator==(const CapsuleFn&, const CapsuleFn&) = default;
};

enum class WeightingKind { matmul, conv, transfer, reshape_flatten, scalar_mult };

/// Weighting operation of a connection.
struct WeightingOp {
  WeightingKind kind = WeightingKind::transfer;
  std::size_t stride = 1;  // conv only

  static WeightingOp matmul() { return {WeightingKind::matmul}; }
  static WeightingOp conv(std::size_t stride) { return {WeightingKind::conv, stride}; }
  static WeightingOp transfer() { return {WeightingKind::transfer}; }
  static WeightingOp reshape_flatten() { return {WeightingKind::reshape_flatten}; }
  static WeightingOp scalar_mult() { return {WeightingKind::scalar_mult}; }

  bool has_weight() const {
    return kind == WeightingKind::matmul || kind == WeightingKind::conv ||
           kind == WeightingKind::scalar_mult;
  }
  std::string name() const;

  friend bool operator==(const WeightingOp&, const WeightingOp&) = default;
};

struct InputSpec {
  VertexId id;
  Shape shape;
  DType dtype = DType::f64;
};

/// A non-input capsule. The bias shape declares the capsule's total-input
/// shape U.
struct CapsuleSpec {
  VertexId id;
  CapsuleFn fn;
  Tensor bias;
};

struct ConnectionSpec {
  VertexId tail;
  VertexId head;
  WeightingOp op;
  Tensor weight;  // empty for transfer and reshape_flatten
};

using VertexSpec = std::variant<InputSpec, CapsuleSpec>;

/// Output of shape inference. Shapes are keyed by vertex id; `total_shape`
/// is U for non-input capsules and `output_shape` is Y for every vertex.
struct ShapeReport {
  std::map<VertexId, Shape> total_shape;
  std::map<VertexId, Shape> output_shape;
  std::vector<Diagnostic> errors;
  bool ok() const { return errors.empty(); }
};

/// Result shape of W (x) Y for one connection, given the tail's output
/// shape. Throws ShapeMismatch or StrideMismatch.
Shape weighting_result_shape(const WeightingOp& op, const Shape& weight_shape,
                             const Shape& tail_shape);
/// Output shape of cap(U). Throws ShapeMismatch or WindowMismatch.
Shape capsule_output_shape(const CapsuleFn& fn, const Shape& total_shape);

/// Computes W (x) Y.
Tensor apply_weighting(const WeightingOp& op, const Tensor& weight, const Tensor& tail_output);

/// Capsule network over a connected DAG. Topology is fixed at creation;
/// parameters can be replaced as long as their shapes are kept.
class CapsuleNetwork {
 public:
  /// Vertices are declared in the given order; connection i becomes DAG
  /// edge i. Throws on graph errors, on InputSpec vertices with incoming
  /// connections, on capsules without incoming connections, or NotConnected.
  /// Shape errors do not throw; see shape_report().
  static CapsuleNetwork create(std::vector<VertexSpec> vertices,
                               std::vector<ConnectionSpec> connections);

  const Dag& dag() const noexcept { return dag_; }
  const RolePartition& roles() const noexcept { return roles_; }
  const ShapeReport& shape_report() const noexcept { return report_; }
  DType dtype() const noexcept { return dtype_; }

  std::size_t vertex_count() const noexcept { return dag_.vertex_count(); }
  std::size_t connection_count() const noexcept { return connections_.size(); }
  bool is_input(std::size_t v) const { return is_input_[v]; }
  const Shape& input_shape(std::size_t v) const { return input_shapes_[v]; }
  const CapsuleFn& fn(std::size_t v) const { return fns_[v]; }
  const Tensor& bias(std::size_t v) const { return biases_[v]; }
  const ConnectionSpec& connection(std::size_t e) const { return connections_[e]; }
  const Tensor& weight(std::size_t e) const { return connections_[e].weight; }

  /// Replace a parameter; the new tensor must keep the old shape.
  void set_bias(std::size_t v, Tensor bias);
  void set_weight(std::size_t e, Tensor weight);
  /// In-place access to parameter values (shape cannot change).
  std::span<double> bias_data(std::size_t v) { return biases_[v].data(); }
  std::span<double> weight_data(std::size_t e) { return connections_[e].weight.data(); }

  /// Number of scalar parameters over all weights and biases.
  std::size_t parameter_count() const;
  /// FNV-1a hash over every parameter value; detects stale forward caches.
  std::uint64_t parameter_fingerprint() const;

  /// The vertex spec list this network was created from (current
  /// parameters included).
  std::vector<VertexSpec> vertex_specs() const;

  /// The unique input / output vertex; throws PreconditionViolation when
  /// there is not exactly one.
  VertexId single_input() const;
  VertexId single_output() const;

 private:
  Dag dag_;
  RolePartition roles_;
  ShapeReport report_;
  DType dtype_ = DType::f64;
  std::vector<bool> is_input_;
  std::vector<Shape> input_shapes_;
  std::vector<CapsuleFn> fns_;
  std::vector<Tensor> biases_;
  std::vector<ConnectionSpec> connections_;
};

/// Shape inference in topological order, collecting every violation.
ShapeReport validate_shapes(const CapsuleNetwork& net);

/// Values computed by forward() and consumed by backward().
struct ForwardCache {
  std::vector<VertexId> ids;
  std::vector<Tensor> outputs;  // Y per vertex index
  std::vector<Tensor> totals;   // U per vertex index; empty for inputs
  std::vector<std::vector<std::size_t>> argmax;  // maxpool capsules only
  std::uint64_t fingerprint = 0;

  const Tensor& output(const VertexId& id) const;
  const Tensor& total(const VertexId& id) const;
};

using TensorMap = std::map<VertexId, Tensor>;

/// Evaluates Y_H = cap_H(sum_Z W (x) Y_Z + B_H) in topological order.
/// Throws ShapeErrors when the network fails validation, MissingInput, or
/// InputShapeMismatch.
ForwardCache forward(const CapsuleNetwork& net, const TensorMap& inputs);

/// Applies cap(U); fills `argmax` for maxpool.
Tensor apply_capsule_fn(const CapsuleFn& fn, const Tensor& total,
                        std::vector<std::size_t>* argmax = nullptr);

/// Uniform weights in [-r, r], r = 1/sqrt(fan-in), and zero biases,
/// drawn from a 64-bit Mersenne Twister in connection order.
void initialize_parameters(CapsuleNetwork& net, std::uint64_t seed);

/// Path x -> h1 -> ... -> o with matmul connections of shape
/// dims[i+1] x dims[i], zero biases and seeded weights.
CapsuleNetwork build_mlp_path(const std::vector<std::size_t>& dims,
                              const std::vector<CapsuleFn>& fns, std::uint64_t seed = 0);

struct ConvStage {
  std::size_t kernels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t stride = 1;
};

struct PoolWindow {
  std::size_t height = 1;
  std::size_t width = 1;
};

struct LenetConfig {
  Shape input{1, 28, 28};  // channels x height x width
  ConvStage conv1{32, 5, 5, 1};
  PoolWindow pool1{2, 2};
  ConvStage conv2{64, 5, 5, 1};
  PoolWindow pool2{2, 2};
  std::size_t hidden = 128;
  std::size_t classes = 10;
};

/// x -conv-> relu -transfer-> maxpool -conv-> relu -transfer-> maxpool
///   -reshape-> identity -matmul-> relu -matmul-> softmax.
/// Throws ShapeErrors when the configuration's shape arithmetic fails.
CapsuleNetwork build_lenet_path(const LenetConfig& config, std::uint64_t seed = 0);

/// One scalar neuron per tensor element ("id[k]" for flat index k) with one
/// amplifying connection per weight entry. Supports matmul, scalar_mult,
/// transfer and reshape_flatten connections into relu, sigmoid, tanh or
/// identity capsules; anything else throws Unsupported.
PlainNetwork expand_to_plain(const CapsuleNetwork& net);

/// Name of the plain neuron for element k of a capsule.
std::string element_id(const VertexId& capsule, std::size_t k);

}  // namespace capsforge
