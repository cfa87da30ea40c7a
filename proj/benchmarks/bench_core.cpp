#include <benchmark/benchmark.h>

#include <random>

#include "sddr/basis.hpp"
#include "sddr/graph.hpp"
#include "sddr/orthogonalization.hpp"
#include "sddr/trainer.hpp"

using namespace sddr;

namespace {

std::vector<double> uniform(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

Eigen::MatrixXd gaussian(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = z(rng);
  return m;
}

void BM_BsplineBasis(benchmark::State& state) {
  const auto x = uniform(static_cast<std::size_t>(state.range(0)), 1);
  const auto knots = quantile_knots(x, 20);
  for (auto _ : state) benchmark::DoNotOptimize(bspline_basis(x, knots));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BsplineBasis)->Arg(1000)->Arg(100000);

void BM_DfToLambda(benchmark::State& state) {
  const auto x = uniform(2000, 2);
  SmoothConfig cfg;
  cfg.k = static_cast<int>(state.range(0));
  const DesignBlock block = build_smooth(x, cfg, "x");
  for (auto _ : state) benchmark::DoNotOptimize(df_to_lambda(block, 6.0, false));
}
BENCHMARK(BM_DfToLambda)->Arg(10)->Arg(40);

void BM_Projection(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  const Eigen::MatrixXd Xoz = gaussian(n, 10, 3), U = gaussian(n, 50, 4);
  for (auto _ : state) benchmark::DoNotOptimize(project_orthogonal(U, Xoz));
}
BENCHMARK(BM_Projection)->Arg(32)->Arg(1024);

void BM_ForwardBackward(benchmark::State& state) {
  NetworkSpec spec;
  spec.name = "net";
  spec.inputs = {"a", "b", "c", "d"};
  spec.layers = {LayerSpec::dense(100, Activation::Relu), LayerSpec::dropout(0.2),
                 LayerSpec::dense(50, Activation::Relu), LayerSpec::dense(1)};
  ParamStore store;
  Network net(spec, store, "net", 1);
  const Eigen::MatrixXd X = gaussian(state.range(0), 4, 5);
  const Eigen::MatrixXd G = Eigen::MatrixXd::Ones(X.rows(), 1);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(net.forward(store, X, true, ++seed, &tape));
    store.zero_grad();
    net.backward(tape, G, store);
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(512);

void BM_FitEpoch(benchmark::State& state) {
  const std::size_t n = 2000;
  const auto x = uniform(n, 6), w = uniform(n, 7);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = std::sin(x[i]) + 0.5 * w[i];
  DataFrame data;
  data.add_numeric("x", x);
  data.add_numeric("w", w);
  ModelSpec spec;
  spec.formulas = FormulaSet::from_strings({{"loc", "~ 1 + s(x, df=6) + net(x, w)"}, {"scale", "~ 1"}});
  spec.networks["net"].layers = {LayerSpec::dense(32, Activation::Relu), LayerSpec::dense(1)};
  const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(n));
  Model m = Model::build(yv, data, spec, 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 32;
  for (auto _ : state) fit(m, cfg);
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_FitEpoch)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
