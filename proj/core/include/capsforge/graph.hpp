#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace capsforge {

using VertexId = std::string;

struct Edge {
  VertexId tail;
  VertexId head;
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Input, hidden and output vertices of a DAG, each in declaration order.
struct RolePartition {
  std::vector<VertexId> inputs;
  std::vector<VertexId> hiddens;
  std::vector<VertexId> outputs;
};

/// Layers M_0 .. M_{k+1}: M_0 holds the inputs and the last layer the
/// outputs. Vertices within a layer are in declaration order.
struct Layering {
  std::vector<std::vector<VertexId>> layers;
};

/// Validated directed acyclic graph. Vertices and edges keep their
/// declaration order, which breaks every tie in the queries below.
class Dag {
 public:
  /// Throws SelfLoop, DuplicateEdge, DanglingEdge or CycleDetected.
  static Dag build(std::vector<VertexId> vertices, std::vector<Edge> edges);

  const std::vector<VertexId>& vertices() const noexcept { return vertices_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  std::size_t vertex_count() const noexcept { return vertices_.size(); }

  bool contains(const VertexId& id) const { return index_.contains(id); }
  /// Declaration index of a vertex; throws UnknownNode.
  std::size_t index_of(const VertexId& id) const;

  /// Predecessor / successor indices in edge declaration order.
  const std::vector<std::size_t>& in_of(std::size_t v) const { return in_[v]; }
  const std::vector<std::size_t>& out_of(std::size_t v) const { return out_[v]; }
  /// Edge indices (into edges()) entering / leaving a vertex.
  const std::vector<std::size_t>& in_edges_of(std::size_t v) const { return in_edges_[v]; }
  const std::vector<std::size_t>& out_edges_of(std::size_t v) const { return out_edges_[v]; }

  /// Index of the edge tail->head, if present.
  std::optional<std::size_t> find_edge(const VertexId& tail, const VertexId& head) const;

  RolePartition roles() const;
  bool is_connected() const;
  /// Kahn's algorithm, always taking the ready vertex declared first.
  std::vector<VertexId> topo_order() const;
  std::vector<std::size_t> topo_indices() const;

  /// Weakly connected components as vertex-index lists, ordered by their
  /// first declared vertex.
  std::vector<std::vector<std::size_t>> components() const;

  /// The graph induced on a subset of vertices (declaration order kept).
  Dag induced(const std::vector<std::size_t>& vertex_indices) const;

 private:
  std::vector<VertexId> vertices_;
  std::vector<Edge> edges_;
  std::unordered_map<VertexId, std::size_t> index_;
  std::vector<std::vector<std::size_t>> in_, out_, in_edges_, out_edges_;
};

struct LayeringResult {
  /// Empty when the network is a skip network.
  std::optional<Layering> layering;
  bool layered() const noexcept { return layering.has_value(); }
};

/// Classifies a connected DAG with at least one output as layered or skip.
/// A valid layering must put every vertex at its longest-path distance from
/// the inputs, so that labeling is built and then verified. Throws
/// PreconditionViolation for disconnected graphs or graphs without outputs.
LayeringResult classify_layering(const Dag& g);

/// Checks the three layering conditions for an arbitrary candidate
/// partition: M_0 is exactly the inputs, the last layer exactly the outputs,
/// the layers partition V, and every edge joins consecutive layers.
bool verify_layering(const Dag& g, const Layering& layering);

}  // namespace capsforge
