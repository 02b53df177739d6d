#include <benchmark/benchmark.h>

#include <random>

#include "capsforge/backprop.hpp"
#include "capsforge/capsule.hpp"

using namespace capsforge;

namespace {

std::vector<TrainingPair> xor_pairs() {
  std::vector<TrainingPair> pairs;
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      Tensor x({2}), t({2});
      x[0] = a;
      x[1] = b;
      t[a ^ b] = 1.0;
      pairs.push_back({{{"x", x}}, {{"o", t}}});
    }
  }
  return pairs;
}

void BM_MlpTrainIteration(benchmark::State& state) {
  auto net = build_mlp_path({2, 6, 4, 2}, {CapsuleFn::relu(), CapsuleFn::relu(), CapsuleFn::identity()}, 7);
  const auto pairs = xor_pairs();
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  for (auto _ : state) benchmark::DoNotOptimize(train_iteration(net, pairs, cfg));
}
BENCHMARK(BM_MlpTrainIteration);

void BM_SmallLenetBackward(benchmark::State& state) {
  LenetConfig cfg;
  cfg.input = {1, 14, 14};
  cfg.conv1 = {4, 3, 3, 1};
  cfg.conv2 = {8, 3, 3, 1};
  cfg.hidden = 16;
  const auto net = build_lenet_path(cfg, 1);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor x(cfg.input), t({cfg.classes});
  for (double& v : x.data()) v = u(rng);
  t[3] = 1.0;
  for (auto _ : state) {
    const auto cache = forward(net, {{"x", x}});
    benchmark::DoNotOptimize(backward(net, cache, {{"out", t}}, LossFn::cross_entropy));
  }
}
BENCHMARK(BM_SmallLenetBackward);

}  // namespace
