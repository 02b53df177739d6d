#include "capsforge/generation.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "capsforge/error.hpp"

namespace capsforge {

std::vector<VertexId> PlainNetwork::nodes() const {
  std::vector<VertexId> out = inputs;
  for (const auto& n : neurons) out.push_back(n.id);
  return out;
}

bool PlainNetwork::contains(const VertexId& id) const {
  return std::find(inputs.begin(), inputs.end(), id) != inputs.end() ||
         std::any_of(neurons.begin(), neurons.end(), [&](const Neuron& n) { return n.id == id; });
}

Dag PlainNetwork::graph() const {
  std::vector<Edge> edges;
  edges.reserve(connections.size());
  for (const auto& c : connections) edges.push_back({c.tail, c.head});
  return Dag::build(nodes(), std::move(edges));
}

void PlainNetwork::check_invariants() const {
  std::unordered_set<VertexId> in_set(inputs.begin(), inputs.end());
  std::unordered_set<VertexId> fed;
  for (const auto& n : neurons) {
    if (in_set.contains(n.id)) throw Error(Errc::overlapping_networks, "neuron is also an input", n.id);
  }
  for (const auto& c : connections) {
    if (!contains(c.tail)) throw Error(Errc::unknown_node, "connection tail", c.tail);
    if (!contains(c.head)) throw Error(Errc::unknown_node, "connection head", c.head);
    if (in_set.contains(c.head)) {
      throw Error(Errc::precondition, "connection into an input variable", c.tail + "->" + c.head);
    }
    fed.insert(c.head);
  }
  for (const auto& n : neurons) {
    if (!fed.contains(n.id)) throw Error(Errc::precondition, "neuron has no incoming connection", n.id);
  }
  (void)graph();  // rejects cycles and duplicate edges
}

namespace {

std::string format_number(double x) {
  std::ostringstream os;
  os << x;
  return os.str();
}

}  // namespace

std::map<VertexId, std::string> PlainNetwork::symbolic_outputs() const {
  std::map<VertexId, std::string> out;
  for (const auto& x : inputs) out[x] = x;
  for (const auto& n : neurons) {
    std::string sum;
    for (const auto& c : connections) {
      if (c.head != n.id) continue;
      if (!sum.empty()) sum += " + ";
      sum += format_number(c.strength) + "*y_" + c.tail;
    }
    out[n.id] = std::string(to_string(n.activation)) + "(" + sum + " + " + format_number(n.bias) + ")";
  }
  return out;
}

GenerationStep GenerationStep::variable(VertexId x) {
  GenerationStep step;
  step.rule = VariableRule{std::move(x)};
  return step;
}

GenerationStep GenerationStep::neuron(std::vector<VertexId> inputs, VertexId new_id) {
  GenerationStep step;
  step.rule = NeuronRule{std::move(inputs)};
  step.new_id = std::move(new_id);
  return step;
}

GenerationStep GenerationStep::growth(std::vector<VertexId> sources, VertexId new_id) {
  GenerationStep step;
  step.rule = GrowthRule{std::move(sources)};
  step.new_id = std::move(new_id);
  return step;
}

GenerationStep GenerationStep::convergence(std::vector<std::vector<VertexId>> groups,
                                           VertexId new_id) {
  GenerationStep step;
  step.rule = ConvergenceRule{std::move(groups)};
  step.new_id = std::move(new_id);
  return step;
}

namespace {

std::string join(const std::vector<VertexId>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ",";
    out += ids[i];
  }
  return out;
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

std::string GenerationStep::describe() const {
  return std::visit(
      overloaded{
          [](const VariableRule& r) { return "Variable(" + r.variable + ")"; },
          [&](const NeuronRule& r) { return "Neuron({" + join(r.inputs) + "}) -> " + new_id; },
          [&](const GrowthRule& r) { return "Growth({" + join(r.sources) + "}) -> " + new_id; },
          [&](const ConvergenceRule& r) {
            std::string out = "Convergence(";
            for (std::size_t i = 0; i < r.groups.size(); ++i) {
              if (i) out += ", ";
              out += "{" + join(r.groups[i]) + "}";
            }
            return out + ") -> " + new_id;
          },
      },
      rule);
}

namespace {

std::ptrdiff_t owner_of(const GenerationState& state, const VertexId& id) {
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (state[i].contains(id)) return static_cast<std::ptrdiff_t>(i);
  }
  return -1;
}

VertexId fresh_id(const GenerationState& state, const GenerationStep& step) {
  if (!step.new_id.empty()) {
    if (owner_of(state, step.new_id) >= 0) {
      throw Error(Errc::precondition, "neuron id already in use", step.new_id);
    }
    return step.new_id;
  }
  std::size_t k = 1;
  for (const auto& net : state) k += net.neurons.size();
  while (owner_of(state, "h" + std::to_string(k)) >= 0) ++k;
  return "h" + std::to_string(k);
}

void add_neuron(PlainNetwork& net, const VertexId& id, const std::vector<VertexId>& sources,
                const GenerationStep& step) {
  if (!step.weights.empty() && step.weights.size() != sources.size()) {
    throw Error(Errc::precondition, "expected " + std::to_string(sources.size()) +
                                        " weights, got " + std::to_string(step.weights.size()),
                id);
  }
  std::set<VertexId> distinct(sources.begin(), sources.end());
  if (distinct.size() != sources.size()) {
    throw Error(Errc::precondition, "source listed twice", id);
  }
  net.neurons.push_back({id, step.activation, step.bias});
  for (std::size_t i = 0; i < sources.size(); ++i) {
    net.connections.push_back({sources[i], id, step.weights.empty() ? 1.0 : step.weights[i]});
  }
}

}  // namespace

GenerationState apply_step(const GenerationState& state, const GenerationStep& step) {
  GenerationState next = state;
  std::visit(
      overloaded{
          [&](const VariableRule& r) {
            if (r.variable.empty()) throw Error(Errc::empty_subset, "variable id is empty");
            if (owner_of(state, r.variable) >= 0) {
              throw Error(Errc::overlapping_networks, "variable already present", r.variable);
            }
            next.push_back(trivial_network(r.variable));
          },
          [&](const NeuronRule& r) {
            if (r.inputs.empty()) throw Error(Errc::empty_subset, "rule of neuron needs inputs");
            PlainNetwork net;
            for (const auto& x : r.inputs) {
              if (owner_of(state, x) >= 0) {
                throw Error(Errc::overlapping_networks, "input already present", x);
              }
              net.inputs.push_back(x);
            }
            const auto id = fresh_id(state, step);
            if (std::find(r.inputs.begin(), r.inputs.end(), id) != r.inputs.end()) {
              throw Error(Errc::precondition, "neuron id collides with an input", id);
            }
            add_neuron(net, id, r.inputs, step);
            next.push_back(std::move(net));
          },
          [&](const GrowthRule& r) {
            if (r.sources.empty()) throw Error(Errc::empty_subset, "rule of growth needs sources");
            auto owner = owner_of(state, r.sources.front());
            for (const auto& z : r.sources) {
              auto o = owner_of(state, z);
              if (o < 0) throw Error(Errc::unknown_node, "growth source not in any network", z);
              if (o != owner) {
                throw Error(Errc::precondition,
                            "growth sources span several networks; use convergence", z);
              }
            }
            const auto id = fresh_id(state, step);
            add_neuron(next[owner], id, r.sources, step);
          },
          [&](const ConvergenceRule& r) {
            if (r.groups.empty()) throw Error(Errc::empty_subset, "rule of convergence needs groups");
            std::vector<std::size_t> owners;
            std::vector<VertexId> sources;
            for (std::size_t k = 0; k < r.groups.size(); ++k) {
              const auto& group = r.groups[k];
              if (group.empty()) {
                throw Error(Errc::empty_subset, "group " + std::to_string(k + 1) + " is empty");
              }
              auto owner = owner_of(state, group.front());
              for (const auto& z : group) {
                auto o = owner_of(state, z);
                if (o < 0) throw Error(Errc::unknown_node, "convergence source not in any network", z);
                if (o != owner) {
                  throw Error(Errc::precondition, "a group must lie inside one network", z);
                }
              }
              if (std::find(owners.begin(), owners.end(), owner) != owners.end()) {
                throw Error(Errc::overlapping_networks,
                            "two groups draw from the same network", group.front());
              }
              owners.push_back(static_cast<std::size_t>(owner));
              sources.insert(sources.end(), group.begin(), group.end());
            }
            const auto id = fresh_id(state, step);
            PlainNetwork merged;
            for (auto o : owners) {
              const auto& part = state[o];
              merged.inputs.insert(merged.inputs.end(), part.inputs.begin(), part.inputs.end());
              merged.neurons.insert(merged.neurons.end(), part.neurons.begin(), part.neurons.end());
              merged.connections.insert(merged.connections.end(), part.connections.begin(),
                                        part.connections.end());
            }
            add_neuron(merged, id, sources, step);
            const auto first = *std::min_element(owners.begin(), owners.end());
            next.clear();
            for (std::size_t i = 0; i < state.size(); ++i) {
              if (i == first) {
                next.push_back(std::move(merged));
              } else if (std::find(owners.begin(), owners.end(), i) == owners.end()) {
                next.push_back(state[i]);
              }
            }
          },
      },
      step.rule);
  return next;
}

PlainNetwork replay(const std::vector<GenerationStep>& steps) {
  GenerationState state;
  for (const auto& step : steps) state = apply_step(state, step);
  if (state.size() != 1) {
    throw Error(Errc::multiple_components_remain,
                std::to_string(state.size()) + " networks remain after replay");
  }
  return std::move(state.front());
}

PlainNetwork trivial_network(const VertexId& x) { return PlainNetwork{{x}, {}, {}}; }

PlainNetwork single_neuron_network(std::size_t n_inputs) {
  if (n_inputs == 0) throw Error(Errc::empty_subset, "the n-1 network needs at least one input");
  std::vector<VertexId> xs;
  for (std::size_t i = 1; i <= n_inputs; ++i) xs.push_back("x" + std::to_string(i));
  return replay({GenerationStep::neuron(xs, "h1")});
}

std::vector<PlainNetwork> grow_children(const PlainNetwork& net, ActivationFn activation,
                                        double bias) {
  const auto nodes = net.nodes();
  if (nodes.size() >= 31) throw Error(Errc::precondition, "network too large to enumerate");
  const std::uint32_t limit = std::uint32_t{1} << nodes.size();

  GenerationStep step = GenerationStep::growth({});
  step.activation = activation;
  step.bias = bias;
  step.new_id = fresh_id({net}, step);

  std::vector<PlainNetwork> children;
  children.reserve(limit - 1);
  for (std::uint32_t mask = 1; mask < limit; ++mask) {
    std::vector<VertexId> sources;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (mask & (std::uint32_t{1} << i)) sources.push_back(nodes[i]);
    }
    PlainNetwork child = net;
    add_neuron(child, step.new_id, sources, step);
    children.push_back(std::move(child));
  }
  return children;
}

std::uint64_t count_growth_descendants(const PlainNetwork& base, int generations) {
  if (generations < 1) throw Error(Errc::precondition, "generations must be >= 1");
  std::uint64_t total = 0;
  for (const auto& child : grow_children(base)) {
    total += generations == 1 ? 1 : count_growth_descendants(child, generations - 1);
  }
  return total;
}

std::string canonical_form(const Dag& g) {
  const std::size_t n = g.vertex_count();
  // Refine vertices into classes by (in-degree, out-degree); only
  // permutations inside a class can be isomorphisms.
  std::vector<std::pair<std::size_t, std::size_t>> key(n);
  for (std::size_t v = 0; v < n; ++v) key[v] = {g.in_of(v).size(), g.out_of(v).size()};
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return key[a] < key[b]; });

  std::vector<std::pair<std::size_t, std::size_t>> blocks;  // [begin, end) in order
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && key[order[j]] == key[order[i]]) ++j;
    blocks.emplace_back(i, j);
    i = j;
  }

  std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, false));
  for (const auto& e : g.edges()) adj[g.index_of(e.tail)][g.index_of(e.head)] = true;

  std::string best;
  std::string header;
  for (std::size_t i = 0; i < n; ++i) {
    header += std::to_string(key[order[i]].first) + "/" + std::to_string(key[order[i]].second) + ";";
  }

  std::vector<std::size_t> perm = order;
  auto encode = [&] {
    std::string bits(n * n, '0');
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (adj[perm[i]][perm[j]]) bits[i * n + j] = '1';
    return bits;
  };
  // Enumerate the product of per-block permutations.
  std::function<void(std::size_t)> walk = [&](std::size_t b) {
    if (b == blocks.size()) {
      auto bits = encode();
      if (best.empty() || bits < best) best = std::move(bits);
      return;
    }
    auto [lo, hi] = blocks[b];
    std::sort(perm.begin() + lo, perm.begin() + hi);
    do {
      walk(b + 1);
    } while (std::next_permutation(perm.begin() + lo, perm.begin() + hi));
  };
  walk(0);
  return header + best;
}

std::vector<GenerationCount> enumerate_growth(const PlainNetwork& base, int generations,
                                              bool dedup) {
  if (generations < 1) throw Error(Errc::precondition, "generations must be >= 1");
  std::vector<GenerationCount> counts;
  std::vector<PlainNetwork> frontier{base};
  for (int g = 1; g <= generations; ++g) {
    std::vector<PlainNetwork> next;
    for (const auto& net : frontier) {
      auto children = grow_children(net);
      next.insert(next.end(), std::make_move_iterator(children.begin()),
                  std::make_move_iterator(children.end()));
    }
    GenerationCount c{g, next.size(), 0};
    if (dedup) {
      std::set<std::string> seen;
      for (const auto& net : next) seen.insert(canonical_form(net.graph()));
      c.distinct = seen.size();
    }
    counts.push_back(c);
    frontier = std::move(next);
  }
  return counts;
}

namespace {

void derive_into(const Dag& g, std::vector<GenerationStep>& steps) {
  const std::size_t n = g.vertex_count();
  if (n == 1) {
    steps.push_back(GenerationStep::variable(g.vertices().front()));
    return;
  }
  if (n == 2) {
    const auto& e = g.edges().front();
    steps.push_back(GenerationStep::variable(e.tail));
    steps.push_back(GenerationStep::growth({e.tail}, e.head));
    return;
  }
  // Remove the output vertex that comes last topologically.
  const auto topo = g.topo_indices();
  std::size_t h = n;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    if (g.out_of(*it).empty() && !g.in_of(*it).empty()) {
      h = *it;
      break;
    }
  }
  std::vector<std::size_t> rest;
  for (std::size_t v = 0; v < n; ++v)
    if (v != h) rest.push_back(v);
  const Dag remainder = g.induced(rest);

  std::vector<VertexId> preds;
  for (auto p : g.in_of(h)) preds.push_back(g.vertices()[p]);
  const auto& h_id = g.vertices()[h];

  const auto parts = remainder.components();
  if (parts.size() == 1) {
    derive_into(remainder, steps);
    steps.push_back(GenerationStep::growth(preds, h_id));
    return;
  }
  std::vector<std::vector<VertexId>> groups;
  for (const auto& part : parts) {
    const Dag sub = remainder.induced(part);
    derive_into(sub, steps);
    std::vector<VertexId> group;
    for (const auto& p : preds)
      if (sub.contains(p)) group.push_back(p);
    groups.push_back(std::move(group));
  }
  steps.push_back(GenerationStep::convergence(std::move(groups), h_id));
}

}  // namespace

std::vector<GenerationStep> derive_generation_sequence(const Dag& g) {
  if (g.vertex_count() == 0) throw Error(Errc::not_connected, "graph has no vertices");
  if (!g.is_connected()) throw Error(Errc::not_connected, "graph is not connected");
  std::vector<GenerationStep> steps;
  derive_into(g, steps);
  return steps;
}

bool same_graph(const Dag& a, const Dag& b) {
  std::set<VertexId> va(a.vertices().begin(), a.vertices().end());
  std::set<VertexId> vb(b.vertices().begin(), b.vertices().end());
  std::set<Edge> ea(a.edges().begin(), a.edges().end());
  std::set<Edge> eb(b.edges().begin(), b.edges().end());
  return va == vb && ea == eb;
}

std::map<VertexId, double> eval_plain(const PlainNetwork& net,
                                      const std::map<VertexId, double>& assignment) {
  const Dag g = net.graph();
  std::map<VertexId, double> values;
  for (const auto& x : net.inputs) {
    auto it = assignment.find(x);
    if (it == assignment.end()) throw Error(Errc::missing_input, "no value for input", x);
    values[x] = it->second;
  }
  std::unordered_map<VertexId, const Neuron*> by_id;
  for (const auto& n : net.neurons) by_id[n.id] = &n;
  for (auto v : g.topo_indices()) {
    const auto& id = g.vertices()[v];
    auto it = by_id.find(id);
    if (it == by_id.end()) continue;
    double acc = 0.0;
    for (auto e : g.in_edges_of(v)) acc += net.connections[e].strength * values[net.connections[e].tail];
    values[id] = apply_scalar(it->second->activation, acc + it->second->bias);
  }
  return values;
}

}  // namespace capsforge
