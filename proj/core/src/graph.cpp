#include "capsforge/graph.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <queue>
#include <set>

#include "capsforge/error.hpp"

namespace capsforge {

namespace {

std::string edge_name(const Edge& e) { return e.tail + "->" + e.head; }

}  // namespace

Dag Dag::build(std::vector<VertexId> vertices, std::vector<Edge> edges) {
  Dag g;
  g.vertices_ = std::move(vertices);
  for (std::size_t i = 0; i < g.vertices_.size(); ++i) {
    if (!g.index_.emplace(g.vertices_[i], i).second) {
      throw Error(Errc::precondition, "duplicate vertex id", g.vertices_[i]);
    }
  }
  const std::size_t n = g.vertices_.size();
  g.in_.resize(n);
  g.out_.resize(n);
  g.in_edges_.resize(n);
  g.out_edges_.resize(n);

  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto& edge = edges[e];
    if (edge.tail == edge.head) throw Error(Errc::self_loop, "self-loop", edge_name(edge));
    auto t = g.index_.find(edge.tail);
    auto h = g.index_.find(edge.head);
    if (t == g.index_.end() || h == g.index_.end()) {
      throw Error(Errc::dangling_edge,
                  "endpoint '" + (t == g.index_.end() ? edge.tail : edge.head) + "' is undeclared",
                  edge_name(edge));
    }
    if (!seen.emplace(t->second, h->second).second) {
      throw Error(Errc::duplicate_edge, "edge declared twice", edge_name(edge));
    }
    g.out_[t->second].push_back(h->second);
    g.in_[h->second].push_back(t->second);
    g.out_edges_[t->second].push_back(e);
    g.in_edges_[h->second].push_back(e);
  }
  g.edges_ = std::move(edges);

  if (g.topo_indices().size() != n) {
    // Name one vertex on a cycle: any vertex left with unresolved in-degree.
    std::vector<std::size_t> indegree(n);
    for (std::size_t v = 0; v < n; ++v) indegree[v] = g.in_[v].size();
    std::vector<std::size_t> stack;
    for (std::size_t v = 0; v < n; ++v)
      if (indegree[v] == 0) stack.push_back(v);
    while (!stack.empty()) {
      auto v = stack.back();
      stack.pop_back();
      for (auto w : g.out_[v])
        if (--indegree[w] == 0) stack.push_back(w);
    }
    std::size_t culprit = 0;
    while (indegree[culprit] == 0) ++culprit;
    throw Error(Errc::cycle_detected, "graph contains a directed cycle", g.vertices_[culprit]);
  }
  return g;
}

std::size_t Dag::index_of(const VertexId& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw Error(Errc::unknown_node, "no such vertex", id);
  return it->second;
}

std::optional<std::size_t> Dag::find_edge(const VertexId& tail, const VertexId& head) const {
  auto t = index_.find(tail);
  auto h = index_.find(head);
  if (t == index_.end() || h == index_.end()) return std::nullopt;
  for (auto e : out_edges_[t->second]) {
    if (edges_[e].head == head) return e;
  }
  return std::nullopt;
}

RolePartition Dag::roles() const {
  RolePartition p;
  for (std::size_t v = 0; v < vertices_.size(); ++v) {
    if (in_[v].empty()) {
      p.inputs.push_back(vertices_[v]);
    } else if (out_[v].empty()) {
      p.outputs.push_back(vertices_[v]);
    } else {
      p.hiddens.push_back(vertices_[v]);
    }
  }
  return p;
}

std::vector<std::vector<std::size_t>> Dag::components() const {
  const std::size_t n = vertices_.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  std::function<std::size_t(std::size_t)> find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (std::size_t v = 0; v < n; ++v) {
    for (auto w : out_[v]) {
      auto a = find(v), b = find(w);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
  }
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::size_t> slot(n, n);
  for (std::size_t v = 0; v < n; ++v) {
    auto root = find(v);
    if (slot[root] == n) {
      slot[root] = groups.size();
      groups.emplace_back();
    }
    groups[slot[root]].push_back(v);
  }
  return groups;
}

bool Dag::is_connected() const { return components().size() <= 1; }

std::vector<std::size_t> Dag::topo_indices() const {
  const std::size_t n = vertices_.size();
  std::vector<std::size_t> indegree(n);
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t v = 0; v < n; ++v) {
    indegree[v] = in_[v].size();
    if (indegree[v] == 0) ready.push(v);
  }
  std::vector<std::size_t> order;
  order.reserve(n);
  while (!ready.empty()) {
    auto v = ready.top();
    ready.pop();
    order.push_back(v);
    for (auto w : out_[v])
      if (--indegree[w] == 0) ready.push(w);
  }
  return order;
}

std::vector<VertexId> Dag::topo_order() const {
  std::vector<VertexId> out;
  for (auto v : topo_indices()) out.push_back(vertices_[v]);
  return out;
}

Dag Dag::induced(const std::vector<std::size_t>& vertex_indices) const {
  std::vector<std::size_t> sorted = vertex_indices;
  std::sort(sorted.begin(), sorted.end());
  std::vector<bool> keep(vertices_.size(), false);
  std::vector<VertexId> vs;
  for (auto v : sorted) {
    keep[v] = true;
    vs.push_back(vertices_[v]);
  }
  std::vector<Edge> es;
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    if (keep[index_.at(edges_[e].tail)] && keep[index_.at(edges_[e].head)]) es.push_back(edges_[e]);
  }
  return build(std::move(vs), std::move(es));
}

LayeringResult classify_layering(const Dag& g) {
  if (!g.is_connected()) throw Error(Errc::precondition, "layering requires a connected graph");
  const auto roles = g.roles();
  if (roles.outputs.empty()) throw Error(Errc::precondition, "layering requires an output vertex");

  const std::size_t n = g.vertex_count();
  std::vector<std::size_t> level(n, 0);
  for (auto v : g.topo_indices()) {
    for (auto p : g.in_of(v)) level[v] = std::max(level[v], level[p] + 1);
  }
  const std::size_t top = *std::max_element(level.begin(), level.end());

  Layering layering;
  layering.layers.resize(top + 1);
  for (std::size_t v = 0; v < n; ++v) layering.layers[level[v]].push_back(g.vertices()[v]);

  if (!verify_layering(g, layering)) return {};
  return {std::move(layering)};
}

bool verify_layering(const Dag& g, const Layering& layering) {
  const auto& layers = layering.layers;
  if (layers.size() < 2) return false;
  const auto roles = g.roles();
  const std::size_t n = g.vertex_count();

  std::vector<std::size_t> layer_of(n, layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (const auto& id : layers[i]) {
      if (!g.contains(id)) return false;
      auto v = g.index_of(id);
      if (layer_of[v] != layers.size()) return false;
      layer_of[v] = i;
    }
  }
  if (std::any_of(layer_of.begin(), layer_of.end(), [&](auto l) { return l == layers.size(); }))
    return false;

  auto same_set = [](std::vector<VertexId> a, std::vector<VertexId> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    return a == b;
  };
  if (!same_set(layers.front(), roles.inputs)) return false;
  if (!same_set(layers.back(), roles.outputs)) return false;

  for (const auto& e : g.edges()) {
    if (layer_of[g.index_of(e.head)] != layer_of[g.index_of(e.tail)] + 1) return false;
  }
  return true;
}

}  // namespace capsforge
