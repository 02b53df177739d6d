#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "capsforge/graph.hpp"
#include "capsforge/tensor.hpp"

namespace capsforge {

using ActivationFn = Elementwise;

struct Neuron {
  VertexId id;
  ActivationFn activation = ActivationFn::identity;
  double bias = 0.0;
  friend bool operator==(const Neuron&, const Neuron&) = default;
};

struct WeightedConnection {
  VertexId tail;
  VertexId head;
  double strength = 1.0;
  friend bool operator==(const WeightedConnection&, const WeightedConnection&) = default;
};

/// A scalar network (S, H, W, Y): input variables, non-input neurons in
/// creation order, and weighting connections. Outputs are derived, see
/// eval_plain() and symbolic_outputs().
struct PlainNetwork {
  std::vector<VertexId> inputs;
  std::vector<Neuron> neurons;
  std::vector<WeightedConnection> connections;

  /// Inputs followed by neurons, i.e. creation order within one network.
  std::vector<VertexId> nodes() const;
  std::size_t node_count() const { return inputs.size() + neurons.size(); }
  bool contains(const VertexId& id) const;

  /// Directed graph representation (V = S u H, one edge per connection).
  Dag graph() const;

  /// Throws when H overlaps S, a connection endpoint is unknown, a
  /// connection head is an input, a neuron has no incoming connection, or
  /// the graph has a cycle.
  void check_invariants() const;

  /// y_z = z for inputs, y_h = f(sum w*y + b) spelled out per node.
  std::map<VertexId, std::string> symbolic_outputs() const;

  friend bool operator==(const PlainNetwork&, const PlainNetwork&) = default;
};

/// Rule of variable: a trivial network holding one input.
struct VariableRule {
  VertexId variable;
};
/// Rule of neuron: a fresh neuron fed by a nonempty set of fresh inputs.
struct NeuronRule {
  std::vector<VertexId> inputs;
};
/// Rule of growth: a fresh neuron fed by nodes of one existing network.
struct GrowthRule {
  std::vector<VertexId> sources;
};
/// Rule of convergence: a fresh neuron fed by one nonempty group per
/// pairwise-disjoint network; the networks merge into one.
struct ConvergenceRule {
  std::vector<std::vector<VertexId>> groups;
};

struct GenerationStep {
  std::variant<VariableRule, NeuronRule, GrowthRule, ConvergenceRule> rule;
  /// Id of the created neuron; empty means "h<k>" with k the next free
  /// creation index in the state.
  VertexId new_id;
  ActivationFn activation = ActivationFn::identity;
  double bias = 0.0;
  /// One strength per source in rule order; empty means all 1.
  std::vector<double> weights;

  static GenerationStep variable(VertexId x);
  static GenerationStep neuron(std::vector<VertexId> inputs, VertexId new_id = {});
  static GenerationStep growth(std::vector<VertexId> sources, VertexId new_id = {});
  static GenerationStep convergence(std::vector<std::vector<VertexId>> groups,
                                    VertexId new_id = {});

  std::string describe() const;
};

using GenerationState = std::vector<PlainNetwork>;

/// Applies one rule to a state of pairwise node-disjoint networks. Throws
/// EmptySubset, OverlappingNetworks or UnknownNode.
GenerationState apply_step(const GenerationState& state, const GenerationStep& step);

/// Replays a step sequence from the empty state and returns the single
/// network left. Throws MultipleComponentsRemain otherwise.
PlainNetwork replay(const std::vector<GenerationStep>& steps);

PlainNetwork trivial_network(const VertexId& x);
/// The n-1 network: inputs x1..xn all feeding neuron h1.
PlainNetwork single_neuron_network(std::size_t n_inputs);

/// One child per nonempty subset of nodes() (bit i selects node i), in
/// ascending bitmask order, each adding a fresh neuron with unit weights.
std::vector<PlainNetwork> grow_children(const PlainNetwork& net,
                                        ActivationFn activation = ActivationFn::identity,
                                        double bias = 0.0);

/// Leaves of the growth tree after `generations` rounds, counted as
/// creation-order-labeled networks.
std::uint64_t count_growth_descendants(const PlainNetwork& base, int generations);

struct GenerationCount {
  int generation = 0;
  std::uint64_t labeled = 0;
  /// Number of distinct networks up to graph isomorphism.
  std::uint64_t distinct = 0;
};

/// Labeled (and optionally isomorphism-deduplicated) counts for each
/// generation 1..generations. When `dedup` is false, `distinct` is 0.
std::vector<GenerationCount> enumerate_growth(const PlainNetwork& base, int generations,
                                              bool dedup);

/// Isomorphism-invariant key of a small DAG (intended for <= 8 nodes).
std::string canonical_form(const Dag& g);

/// Constructive Generation Theorem: a step sequence whose replay has
/// exactly the vertices and edges of g. Inputs keep their ids and every
/// non-input vertex becomes a neuron with its own id. Throws NotConnected.
std::vector<GenerationStep> derive_generation_sequence(const Dag& g);

/// Same vertex set and edge set, ignoring declaration order.
bool same_graph(const Dag& a, const Dag& b);

/// Node outputs in topological order. Throws MissingInput.
std::map<VertexId, double> eval_plain(const PlainNetwork& net,
                                      const std::map<VertexId, double>& assignment);

}  // namespace capsforge
