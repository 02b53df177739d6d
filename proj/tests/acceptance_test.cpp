#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "capsforge/backprop.hpp"
#include "capsforge/capsule.hpp"
#include "capsforge/error.hpp"
#include "capsforge/generation.hpp"
#include "capsforge/graph.hpp"
#include "capsforge/model_io.hpp"
#include "capsforge/symbols.hpp"
#include "oracles.hpp"

using namespace capsforge;

namespace {

constexpr double kEnumerationSeconds = 1.0;
constexpr double kGenerationSeconds = 120.0;
constexpr std::size_t kGenerationMaxVertices = 6;
constexpr std::size_t kGradientNets = 200;
constexpr std::size_t kGradientMaxCapsules = 8;
constexpr double kGradientEpsilon = 1e-6;
constexpr double kGradientRelTol = 1e-4;
constexpr double kGradientScaleFloor = 1e-4;
constexpr double kKinkThreshold = 1e-5;
constexpr double kGradientSeconds = 300.0;
constexpr double kPlainTol = 1e-12;
constexpr int kPlainTrials = 100;
constexpr double kXorLearningRate = 0.5;
constexpr int kXorIterations = 2000;
constexpr double kXorSeconds = 10.0;
constexpr std::size_t kLayeringExhaustiveVertices = 6;
constexpr std::size_t kLayeringMaxVertices = 8;
constexpr int kLayeringSamplesPerSize = 3000;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string data_path(const std::string& name) { return std::string(CAPSFORGE_TEST_DATA_DIR) + "/" + name; }

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome enumeration() {
  const auto start = Clock::now();
  const auto one = enumerate_growth(single_neuron_network(1), 2, false);
  const auto two = enumerate_growth(single_neuron_network(2), 2, false);
  const double t = seconds_since(start);
  std::ostringstream d;
  d << "1 input: " << one[0].labeled << ", " << one[1].labeled << "; 2 inputs: " << two[0].labeled << ", "
    << two[1].labeled << "; " << t << " s";
  const bool ok = one.size() == 2 && two.size() == 2 && one[0].labeled == 3 && one[1].labeled == 21 &&
                  two[0].labeled == 7 && two[1].labeled == 105 && t < kEnumerationSeconds;
  return {ok, d.str()};
}

Outcome generation_theorem() {
  const auto start = Clock::now();
  std::size_t checked = 0, failed = 0;
  for (std::size_t n = 1; n <= kGenerationMaxVertices; ++n) {
    for (const auto& g : oracle::connected_dags(n)) {
      const auto dag = oracle::to_dag(g);
      bool ok = false;
      try {
        ok = same_graph(replay(derive_generation_sequence(dag)).graph(), dag);
      } catch (const Error&) {
      }
      failed += !ok;
      ++checked;
    }
  }
  const double t = seconds_since(start);
  std::ostringstream d;
  d << checked << " connected DAGs with at most " << kGenerationMaxVertices << " vertices, " << failed
    << " failures; " << t << " s";
  return {failed == 0 && t < kGenerationSeconds, d.str()};
}

std::string op_name(WeightingKind k) {
  switch (k) {
    case WeightingKind::matmul: return "matmul";
    case WeightingKind::conv: return "conv";
    case WeightingKind::transfer: return "transfer";
    case WeightingKind::reshape_flatten: return "reshape";
    case WeightingKind::scalar_mult: return "scalar_mult";
  }
  return "?";
}

Outcome gradient_oracle() {
  const std::set<std::string> required{"matmul",  "conv",    "transfer", "reshape",       "scalar_mult",
                                       "relu",    "sigmoid", "identity", "softmax",       "squash",
                                       "maxpool", "sse",     "cross_entropy"};
  const auto start = Clock::now();
  std::mt19937_64 rng(20240601);
  std::set<std::string> covered;
  std::size_t nets = 0, parameters = 0, redraws = 0;
  double worst = 0.0;
  const std::size_t cap = kGradientNets * 10;
  auto complete = [&] { return std::includes(covered.begin(), covered.end(), required.begin(), required.end()); };
  for (std::size_t draws = 0; draws < cap && (nets < kGradientNets || !complete()); ++draws) {
    auto c = oracle::random_network(rng, kGradientMaxCapsules);
    bool smooth = false;
    for (int attempt = 0; attempt < 20; ++attempt) {
      if (oracle::kink_distance(c.net, forward(c.net, c.pair.inputs)) >= kKinkThreshold) {
        smooth = true;
        break;
      }
      oracle::redraw(c, rng);
      ++redraws;
    }
    if (!smooth) continue;
    const auto cache = forward(c.net, c.pair.inputs);
    const auto analytic = backward(c.net, cache, c.pair.targets, c.loss).gradients;
    const auto numeric = oracle::numeric_gradient(c.net, c.pair, c.loss, kGradientEpsilon);
    auto compare = [&](const std::vector<Tensor>& a, const std::vector<Tensor>& n) {
      for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t k = 0; k < a[i].size(); ++k) {
          worst = std::max(worst, oracle::relative_error(a[i][k], n[i][k], kGradientScaleFloor));
          ++parameters;
        }
      }
    };
    compare(analytic.weights, numeric.weights);
    compare(analytic.biases, numeric.biases);
    for (std::size_t e = 0; e < c.net.connection_count(); ++e) covered.insert(op_name(c.net.connection(e).op.kind));
    for (std::size_t v = 0; v < c.net.vertex_count(); ++v) {
      if (c.net.is_input(v)) continue;
      const auto& fn = c.net.fn(v);
      covered.insert(fn.kind == CapsuleFnKind::maxpool ? std::string("maxpool") : fn.name());
    }
    covered.insert(std::string(to_string(c.loss)));
    ++nets;
  }
  const double t = seconds_since(start);
  std::string missing;
  for (const auto& r : required) {
    if (!covered.count(r)) missing += " " + r;
  }
  std::ostringstream d;
  d << nets << " nets, " << parameters << " parameters, max rel err " << worst << ", " << redraws
    << " kink redraws";
  if (!missing.empty()) d << ", uncovered:" << missing;
  d << "; " << t << " s";
  return {nets >= kGradientNets && missing.empty() && worst <= kGradientRelTol && t < kGradientSeconds, d.str()};
}

Outcome shape_arithmetic() {
  const auto lenet = build_lenet_path({});
  const auto conv1 = lenet.shape_report().total_shape.at("conv1");
  const auto mlp = build_mlp_path({5, 7, 7, 7, 4}, {CapsuleFn::relu(), CapsuleFn::relu(), CapsuleFn::relu(),
                                                    CapsuleFn::identity()});
  const std::vector<Shape> expected{{7, 5}, {7, 7}, {7, 7}, {4, 7}};
  bool ok = conv1 == Shape{32, 24, 24} && mlp.connection_count() == expected.size();
  std::ostringstream d;
  d << "conv1 " << to_string(conv1) << "; mlp weights";
  for (std::size_t e = 0; e < mlp.connection_count(); ++e) {
    d << " " << to_string(mlp.weight(e).shape());
    ok = ok && e < expected.size() && mlp.weight(e).shape() == expected[e];
  }
  return {ok, d.str()};
}

Outcome plain_expansion() {
  std::mt19937_64 rng(99);
  auto net = build_mlp_path({2, 6, 4, 2}, {CapsuleFn::relu(), CapsuleFn::relu(), CapsuleFn::identity()});
  double worst = 0.0;
  for (int trial = 0; trial < kPlainTrials; ++trial) {
    for (std::size_t e = 0; e < net.connection_count(); ++e) {
      net.set_weight(e, oracle::random_tensor(net.weight(e).shape(), rng));
    }
    for (std::size_t v = 0; v < net.vertex_count(); ++v) {
      if (!net.is_input(v)) net.set_bias(v, oracle::random_tensor(net.bias(v).shape(), rng));
    }
    const auto x = oracle::random_tensor({2}, rng);
    const auto y = forward(net, {{"x", x}}).output("o");
    const auto plain = eval_plain(expand_to_plain(net), {{element_id("x", 0), x[0]}, {element_id("x", 1), x[1]}});
    for (std::size_t k = 0; k < 2; ++k) worst = std::max(worst, std::abs(plain.at(element_id("o", k)) - y[k]));
  }
  std::ostringstream d;
  d << kPlainTrials << " parameterizations, max abs diff " << worst;
  return {worst <= kPlainTol, d.str()};
}

Outcome xor_training() {
  const auto doc = parse_document(read_text_file(data_path("fig20_mlp.json")));
  const auto net = lower_symbols(doc.graph);
  const auto pairs = parse_csv_dataset(read_text_file(data_path("xor.csv")), dataset_spec_for(net));
  TrainConfig cfg;
  cfg.learning_rate = kXorLearningRate;
  cfg.max_iter = kXorIterations;
  cfg.loss = LossFn::sse;
  cfg.initialize = false;
  const auto start = Clock::now();
  const auto a = train(net, pairs, cfg);
  const double t = seconds_since(start);
  const auto b = train(net, pairs, cfg);
  const auto metrics = evaluate(a.network, pairs, LossFn::sse);
  const std::size_t correct = metrics.correct.value_or(0);
  const double first = a.loss_history.front(), last = a.loss_history.back();
  std::ostringstream d;
  d << "seed " << doc.graph.seed << ", loss " << first << " -> " << last << ", accuracy " << correct << "/"
    << metrics.total << ", deterministic " << (a.loss_history == b.loss_history ? "yes" : "no") << "; " << t
    << " s";
  const bool ok = last < first && correct == 4 && metrics.total == 4 && a.loss_history == b.loss_history &&
                  t < kXorSeconds;
  return {ok, d.str()};
}

Outcome layering() {
  std::size_t checked = 0, disagreements = 0;
  auto check = [&](const Dag& dag) {
    const auto result = classify_layering(dag);
    const auto oracle_layering = oracle::search_layering(dag);
    bool ok = result.layered() == oracle_layering.has_value();
    if (result.layered()) ok = ok && verify_layering(dag, *result.layering);
    disagreements += !ok;
    ++checked;
  };
  for (std::size_t n = 2; n <= kLayeringExhaustiveVertices; ++n) {
    for (const auto& g : oracle::connected_dags(n)) check(oracle::to_dag(g));
  }
  std::mt19937_64 rng(8);
  for (std::size_t n = kLayeringExhaustiveVertices + 1; n <= kLayeringMaxVertices; ++n) {
    for (int i = 0; i < kLayeringSamplesPerSize; ++i) {
      const double p = std::uniform_real_distribution<double>(0.15, 0.6)(rng);
      check(oracle::to_dag(oracle::random_connected_dag(n, p, rng)));
    }
  }
  bool paths = true;
  for (std::size_t n = 2; n <= kLayeringMaxVertices; ++n) {
    oracle::EdgeList path{n, {}};
    for (std::size_t i = 0; i + 1 < n; ++i) path.edges.push_back({i, i + 1});
    paths = paths && classify_layering(oracle::to_dag(path)).layered();
  }
  const auto skip_doc = parse_document(read_text_file(data_path("skip_mlp.json")));
  const bool skip = !classify_layering(lower_symbols(skip_doc.graph).dag()).layered();
  const auto fig20 = parse_document(read_text_file(data_path("fig20_mlp.json")));
  const bool layered = classify_layering(lower_symbols(fig20.graph).dag()).layered();
  std::ostringstream d;
  d << checked << " DAGs against exhaustive search, " << disagreements << " disagreements; paths "
    << (paths ? "layered" : "NOT layered") << "; bundled skip example " << (skip ? "skip" : "layered")
    << "; bundled MLP " << (layered ? "layered" : "skip");
  return {disagreements == 0 && paths && skip && layered, d.str()};
}

Outcome round_trip() {
  std::ostringstream d;
  bool ok = true;
  for (const std::string name : {"fig20_mlp.json", "fig21_lenet.json"}) {
    const auto text = read_text_file(data_path(name));
    const bool same = serialize(parse_document(text)) == text;
    ok = ok && same;
    d << name << (same ? " identical" : " DIFFERS") << "; ";
  }
  return {ok, d.str()};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"enumeration counts", enumeration},
      {"generation theorem", generation_theorem},
      {"gradient oracle", gradient_oracle},
      {"shape arithmetic", shape_arithmetic},
      {"plain expansion", plain_expansion},
      {"xor training", xor_training},
      {"layering", layering},
      {"format round-trip", round_trip},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
