#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>

#include "capsforge/generation.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace capsforge;
using testutil::error_code;

TEST(ApplyStep, VariableCreatesTrivialNetwork) {
  const auto state = apply_step({}, GenerationStep::variable("x1"));
  ASSERT_EQ(state.size(), 1u);
  EXPECT_EQ(state[0], trivial_network("x1"));
  EXPECT_EQ(state[0].symbolic_outputs().at("x1"), "x1");
}

TEST(ApplyStep, GrowthOnSingleNeuronNetwork) {
  const auto state = apply_step({single_neuron_network(1)}, GenerationStep::growth({"x1"}));
  ASSERT_EQ(state.size(), 1u);
  const auto g = state[0].graph();
  EXPECT_EQ(g.edges(), (std::vector<Edge>{{"x1", "h1"}, {"x1", "h2"}}));
}

TEST(ApplyStep, ConvergenceMergesDisjointNetworks) {
  const auto net = replay({GenerationStep::neuron({"x1"}, "h1"), GenerationStep::neuron({"x2"}, "h2"),
                           GenerationStep::convergence({{"h1"}, {"h2"}}, "h3")});
  const auto g = net.graph();
  EXPECT_EQ(g.roles().inputs, (std::vector<VertexId>{"x1", "x2"}));
  EXPECT_EQ(g.roles().outputs, std::vector<VertexId>{"h3"});
  EXPECT_EQ(g.edges().size(), 4u);
}

TEST(ApplyStep, Errors) {
  const GenerationState two{single_neuron_network(1), trivial_network("y")};
  EXPECT_EQ(error_code([&] { apply_step(two, GenerationStep::growth({})); }), Errc::empty_subset);
  EXPECT_EQ(error_code([&] { apply_step(two, GenerationStep::growth({"nope"})); }), Errc::unknown_node);
  EXPECT_EQ(error_code([&] { apply_step(two, GenerationStep::variable("x1")); }), Errc::overlapping_networks);
  EXPECT_EQ(error_code([&] { apply_step(two, GenerationStep::convergence({{"x1"}, {"h1"}})); }),
            Errc::overlapping_networks);
  EXPECT_EQ(error_code([&] { apply_step(two, GenerationStep::convergence({{"x1"}, {}})); }), Errc::empty_subset);
  EXPECT_EQ(error_code([&] { apply_step(two, GenerationStep::neuron({})); }), Errc::empty_subset);
}

TEST(ApplyStep, FreshNeuronsAreNamedByCreationOrder) {
  auto state = apply_step({}, GenerationStep::neuron({"x1"}));
  state = apply_step(state, GenerationStep::growth({"h1"}));
  EXPECT_EQ(state[0].neurons[0].id, "h1");
  EXPECT_EQ(state[0].neurons[1].id, "h2");
}

TEST(ApplyStep, NeuronRuleEqualsVariablesPlusConvergence) {
  for (std::size_t n = 1; n <= 4; ++n) {
    std::vector<VertexId> xs;
    for (std::size_t i = 1; i <= n; ++i) xs.push_back("x" + std::to_string(i));
    for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
      std::vector<VertexId> subset;
      std::vector<std::vector<VertexId>> groups;
      std::vector<GenerationStep> steps;
      for (std::size_t i = 0; i < n; ++i) {
        if (!(mask >> i & 1)) continue;
        subset.push_back(xs[i]);
        groups.push_back({xs[i]});
        steps.push_back(GenerationStep::variable(xs[i]));
      }
      steps.push_back(GenerationStep::convergence(groups, "h1"));
      const auto direct = replay({GenerationStep::neuron(subset, "h1")});
      const auto composed = replay(steps);
      EXPECT_TRUE(same_graph(direct.graph(), composed.graph()));
      EXPECT_EQ(direct.neurons, composed.neurons);
    }
  }
}

TEST(Replay, Examples) {
  EXPECT_EQ(replay({GenerationStep::variable("x1")}), trivial_network("x1"));
  EXPECT_EQ(error_code([] { replay({GenerationStep::variable("x1"), GenerationStep::variable("x2")}); }),
            Errc::multiple_components_remain);
}

TEST(GrowChildren, CountsAndOrder) {
  EXPECT_EQ(grow_children(single_neuron_network(1)).size(), 3u);
  EXPECT_EQ(grow_children(single_neuron_network(2)).size(), 7u);
  for (const auto& child : grow_children(single_neuron_network(2))) {
    EXPECT_EQ(grow_children(child).size(), 15u);
  }
  const auto children = grow_children(single_neuron_network(1));
  EXPECT_EQ(children[0].connections.back().tail, "x1");
  EXPECT_EQ(children[1].connections.back().tail, "h1");
  EXPECT_EQ(children[2].connections.size(), 3u);
}

TEST(GrowChildren, EveryChildSatisfiesInvariants) {
  for (const auto& child : grow_children(single_neuron_network(2))) {
    for (const auto& grandchild : grow_children(child)) EXPECT_NO_THROW(grandchild.check_invariants());
  }
}

TEST(Enumeration, GrowthCounts) {
  EXPECT_EQ(count_growth_descendants(single_neuron_network(1), 1), 3u);
  EXPECT_EQ(count_growth_descendants(single_neuron_network(1), 2), 21u);
  EXPECT_EQ(count_growth_descendants(single_neuron_network(2), 1), 7u);
  EXPECT_EQ(count_growth_descendants(single_neuron_network(2), 2), 105u);
}

TEST(Enumeration, LabeledCountsMatchChildProducts) {
  const auto counts = enumerate_growth(single_neuron_network(1), 3, true);
  ASSERT_EQ(counts.size(), 3u);
  EXPECT_EQ(counts[0].labeled, 3u);
  EXPECT_EQ(counts[1].labeled, 3u * 7u);
  EXPECT_EQ(counts[2].labeled, 3u * 7u * 15u);
  EXPECT_LE(counts[1].distinct, counts[1].labeled);
  EXPECT_EQ(enumerate_growth(single_neuron_network(1), 2, false)[1].distinct, 0u);
}

TEST(Enumeration, RejectsZeroGenerations) {
  EXPECT_EQ(error_code([] { count_growth_descendants(single_neuron_network(1), 0); }), Errc::precondition);
}

TEST(CanonicalForm, InvariantUnderRelabeling) {
  const auto a = Dag::build({"a", "b", "c"}, {{"a", "b"}, {"a", "c"}});
  const auto b = Dag::build({"q", "p", "r"}, {{"p", "r"}, {"p", "q"}});
  const auto c = Dag::build({"a", "b", "c"}, {{"a", "b"}, {"b", "c"}});
  EXPECT_EQ(canonical_form(a), canonical_form(b));
  EXPECT_NE(canonical_form(a), canonical_form(c));
}

TEST(DeriveSequence, BaseCases) {
  const auto single = derive_generation_sequence(Dag::build({"x1"}, {}));
  ASSERT_EQ(single.size(), 1u);
  EXPECT_TRUE(std::holds_alternative<VariableRule>(single[0].rule));

  const auto two = derive_generation_sequence(Dag::build({"x1", "h1"}, {{"x1", "h1"}}));
  ASSERT_EQ(two.size(), 2u);
  EXPECT_TRUE(std::holds_alternative<VariableRule>(two[0].rule));
  EXPECT_TRUE(std::holds_alternative<GrowthRule>(two[1].rule));
}

TEST(DeriveSequence, ConvergenceShapeEndsInConvergence) {
  const auto g = Dag::build({"x1", "x2", "h1", "h2", "h3"},
                            {{"x1", "h1"}, {"x2", "h2"}, {"h1", "h3"}, {"h2", "h3"}});
  const auto steps = derive_generation_sequence(g);
  EXPECT_TRUE(std::holds_alternative<ConvergenceRule>(steps.back().rule));
  EXPECT_TRUE(same_graph(replay(steps).graph(), g));
}

TEST(DeriveSequence, RejectsDisconnectedGraphs) {
  EXPECT_EQ(error_code([] { derive_generation_sequence(Dag::build({"a", "b"}, {})); }), Errc::not_connected);
}

TEST(DeriveSequence, ReplaysEveryConnectedDagUpToFiveVertices) {
  std::size_t checked = 0;
  for (std::size_t n = 1; n <= 5; ++n) {
    for (const auto& g : oracle::connected_dags(n)) {
      const auto dag = oracle::to_dag(g);
      EXPECT_TRUE(same_graph(replay(derive_generation_sequence(dag)).graph(), dag));
      ++checked;
    }
  }
  EXPECT_GT(checked, 700u);
}

TEST(EvalPlain, Examples) {
  EXPECT_EQ(eval_plain(trivial_network("x1"), {{"x1", 5.0}}).at("x1"), 5.0);

  auto step = GenerationStep::neuron({"x1"}, "h");
  step.weights = {2.0};
  step.bias = 1.0;
  EXPECT_EQ(eval_plain(replay({step}), {{"x1", 3.0}}).at("h"), 7.0);

  auto sig = GenerationStep::neuron({"x1"}, "h");
  sig.activation = ActivationFn::sigmoid;
  sig.weights = {0.0};
  EXPECT_EQ(eval_plain(replay({sig}), {{"x1", -12.0}}).at("h"), 0.5);

  EXPECT_EQ(error_code([&] { eval_plain(replay({sig}), {}); }), Errc::missing_input);
}

TEST(PlainNetwork, InvariantViolations) {
  PlainNetwork bad{{"x"}, {{"h", ActivationFn::identity, 0.0}}, {}};
  EXPECT_EQ(error_code([&] { bad.check_invariants(); }), Errc::precondition);
  PlainNetwork into_input{{"x", "y"}, {{"h", ActivationFn::identity, 0.0}}, {{"x", "h", 1}, {"h", "y", 1}}};
  EXPECT_EQ(error_code([&] { into_input.check_invariants(); }), Errc::precondition);
}
