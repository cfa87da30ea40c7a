#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "sddr/inference.hpp"

using namespace sddr;

namespace {

struct Fixture {
  DataFrame data;
  Eigen::VectorXd y;
};

// Heteroscedastic normal data with a factor column.
Fixture hetero(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> x(n), lat(n), lon(n), yy(n);
  std::vector<std::string> g(n);
  static const char* levels[] = {"b", "a", "c"};
  for (int i = 0; i < n; ++i) {
    x[i] = u(rng);
    lat[i] = u(rng);
    lon[i] = u(rng);
    g[i] = levels[i % 3];
    const double shift = g[i] == "a" ? 0.0 : g[i] == "b" ? 0.5 : -0.5;
    yy[i] = 1.0 + std::sin(x[i]) + 0.3 * lat[i] * lon[i] + shift + std::exp(0.3 * x[i]) * 0.4 * z(rng);
  }
  auto df = oracle::frame({{"x", x}, {"lat", lat}, {"lon", lon}});
  df.add_factor("g", g);
  return {df, oracle::to_eigen(yy)};
}

ModelSpec spec_of(const std::string& loc, const std::string& scale) {
  ModelSpec spec;
  spec.formulas = FormulaSet::from_strings({{"loc", loc}, {"scale", scale}});
  return spec;
}

NetworkSpec net(std::vector<LayerSpec> layers) {
  NetworkSpec n;
  n.layers = std::move(layers);
  return n;
}

TrainConfig quick(int epochs = 30) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 50;
  c.optimizer.lr = 0.02;
  return c;
}

}  // namespace

TEST_CASE("build: tensor smooth with df 5 and two predictors") {
  auto [data, y] = hetero(300, 1);
  auto m = Model::build(y, data, spec_of("~ 1 + te(lat, lon, df=5)", "~ 1"));
  CHECK(m.parts().size() == 2);
  const auto& te = m.parts()[0].structured[1];
  CHECK(te.kind == StructuredKind::Smooth);
  CHECK(std::abs(effective_df(te.block, te.block.lambda, false) - 5.0) <= 1e-6);
  CHECK(m.predictors(m.training_design()).cols() == 2);
}

TEST_CASE("build: a shared network mapped to both parameters") {
  auto [data, y] = hetero(100, 2);
  ModelSpec spec;
  spec.formulas = FormulaSet::from_strings({{"loc", "~ 1"}, {"scale", "~ 1"}, {"both", "~ 0 + net(x, lat)"}},
                                           {{0}, {1}, {0, 1}});
  spec.networks["net"] = net({LayerSpec::dense(4, Activation::Tanh), LayerSpec::dense(2)});
  auto m = Model::build(y, data, spec, 3);
  const Eigen::MatrixXd before = m.predictors(m.training_design());
  m.params()[m.parts()[2].networks[0].net.slots().back()->kernel].value.array() += 0.3;
  const Eigen::MatrixXd after = m.predictors(m.training_design());
  CHECK((after.col(0) - before.col(0)).cwiseAbs().maxCoeff() > 1e-6);
  CHECK((after.col(1) - before.col(1)).cwiseAbs().maxCoeff() > 1e-6);

  spec.networks["net"] = net({LayerSpec::dense(4, Activation::Tanh), LayerSpec::dense(1)});
  CHECK_THROWS_AS(Model::build(y, data, spec, 3), ModelError);
}

TEST_CASE("mapping consistency: separate copies change independently") {
  auto [data, y] = hetero(100, 3);
  auto spec = spec_of("~ 1 + a(x)", "~ 1 + b(x)");
  spec.networks["a"] = net({LayerSpec::dense(3, Activation::Tanh), LayerSpec::dense(1)});
  spec.networks["b"] = spec.networks["a"];
  spec.orthog.orthogonalize = false;
  auto m = Model::build(y, data, spec, 4);
  const Eigen::MatrixXd before = m.predictors(m.training_design());
  m.params()[m.parts()[0].networks[0].net.slots().front()->kernel].value.array() += 0.5;
  const Eigen::MatrixXd after = m.predictors(m.training_design());
  CHECK((after.col(0) - before.col(0)).cwiseAbs().maxCoeff() > 1e-6);
  CHECK((after.col(1) - before.col(1)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("build errors") {
  auto [data, y] = hetero(60, 4);
  CHECK_THROWS_AS(Model::build(y, data, spec_of("~ 1 + x", "~ 0")), ModelError);
  CHECK_THROWS_AS(Model::build(y, data, spec_of("~ 1 + nothere", "~ 1")), DataError);
  CHECK_THROWS_AS(Model::build(y, data, spec_of("~ 1 + dnn(x)", "~ 1")), ModelError);
  CHECK_THROWS_AS(Model::build(y.head(10), data, spec_of("~ 1", "~ 1")), ModelError);
  auto bad = spec_of("~ 1", "~ 1");
  bad.formulas = FormulaSet::from_strings({{"loc", "~ 1"}});
  CHECK_THROWS_AS(Model::build(y, data, bad), ModelError);
}

TEST_CASE("coef: fresh model, names, factor coding") {
  auto [data, y] = hetero(90, 5);
  auto m = Model::build(y, data, spec_of("~ 1 + x + g + s(lat, df=4)", "~ 1"));
  const auto lin = coef(m, CoefType::Linear, 0);
  REQUIRE(lin.size() == 3);
  CHECK(lin[0].names == std::vector<std::string>{"(Intercept)"});
  CHECK(lin[1].names == std::vector<std::string>{"x"});
  CHECK(lin[2].names == std::vector<std::string>{"gb", "gc"});
  for (const auto& c : lin) CHECK(c.values.cwiseAbs().maxCoeff() == 0.0);
  const auto sm = coef(m, CoefType::Smooth, 0);
  REQUIRE(sm.size() == 1);
  CHECK(sm[0].values.size() == 9);
  const auto scale = coef(m, CoefType::Linear, 1);
  REQUIRE(scale.size() == 1);
  CHECK(scale[0].names == std::vector<std::string>{"(Intercept)"});
  CHECK_THROWS_AS(coef(m, CoefType::Linear, 2), ModelError);

  auto full = Model::build(y, data, spec_of("~ 0 + g + x", "~ 1"));
  CHECK(coef(full, CoefType::Linear, 0)[0].names == std::vector<std::string>{"ga", "gb", "gc"});
}

TEST_CASE("unseen factor levels are reported with the training levels") {
  auto [data, y] = hetero(60, 6);
  auto m = Model::build(y, data, spec_of("~ 1 + g", "~ 1"));
  DataFrame fresh;
  fresh.add_factor("g", {"a", "z"});
  try {
    m.design(fresh);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("'z'") != std::string::npos);
    CHECK(msg.find("a, b, c") != std::string::npos);
  }
}

TEST_CASE("partial effects") {
  auto [data, y] = hetero(200, 7);
  auto m = Model::build(y, data, spec_of("~ 1 + s(x, df=5) + te(lat, lon, df=6)", "~ 1"));
  auto pe = partial_effects(m, 0);
  REQUIRE(pe.size() == 2);
  CHECK(pe[0].effect.grid[0].size() == 200);
  CHECK(pe[0].effect.effect.cwiseAbs().maxCoeff() == 0.0);
  const auto xs = data.numeric("x");
  CHECK(pe[0].effect.grid[0](0) == *std::min_element(xs.begin(), xs.end()));
  CHECK(pe[0].effect.grid[0](199) == *std::max_element(xs.begin(), xs.end()));
  CHECK(pe[1].effect.grid.size() == 2);
  CHECK(pe[1].effect.effect.size() == 1600);
  CHECK(partial_effects(m, 0, 1).size() == 1);
  CHECK_THROWS_AS(partial_effects(m, 0, 2), ModelError);

  fit(m, quick(150));
  const auto fitted = partial_effects(m, 0, 0)[0];
  const Eigen::ArrayXd truth = fitted.effect.grid[0].array().sin();
  const Eigen::ArrayXd centered = truth - truth.mean();
  const Eigen::ArrayXd got = fitted.effect.effect.array() - fitted.effect.effect.mean();
  CHECK(std::sqrt((got - centered).square().mean()) < 0.4);
}

TEST_CASE("predictions on training data and quantile ordering") {
  auto [data, y] = hetero(150, 8);
  auto spec = spec_of("~ 1 + s(x, df=4) + dnn(lat)", "~ 1 + x");
  spec.networks["dnn"] = net({LayerSpec::dense(6, Activation::Relu), LayerSpec::dropout(0.2), LayerSpec::dense(1)});
  auto m = Model::build(y, data, spec, 9);
  fit(m, quick(20));
  const auto mean_tab = predict_stats(m, data, Statistic::Mean);
  const Eigen::VectorXd fitted = m.predictors(m.training_design()).col(0);
  CHECK((mean_tab.values.col(0) - fitted).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(predict_stats(m, data, Statistic::Mean).values == mean_tab.values);
  const auto q = predict_stats(m, data, Statistic::Quantile, {0.05, 0.5, 0.95});
  CHECK(q.columns == std::vector<std::string>{"q0.05", "q0.5", "q0.95"});
  CHECK((q.values.col(1) - fitted).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((q.values.col(0).array() < fitted.array()).all());
  CHECK((fitted.array() < q.values.col(2).array()).all());
  const auto sd = predict_stats(m, data, Statistic::Stddev);
  CHECK((sd.values.array() > 0.0).all());
  CHECK_THROWS_AS(parse_statistic("median"), std::invalid_argument);
}

TEST_CASE("log score") {
  auto [data, y] = hetero(100, 10);
  auto m = Model::build(y, data, spec_of("~ 1 + x", "~ 1 + x"), 1);
  fit(m, quick(20));
  const auto ls = log_score(m);
  const auto dist = m.distribution(data);
  CHECK(ls.sum == log_prob(dist, y).sum());
  // Direct normal density with the fitted parameters.
  double direct = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double mu = dist.theta(i, 0), s = dist.theta(i, 1);
    direct += -0.5 * std::log(2.0 * M_PI) - std::log(s) - 0.5 * std::pow((y(i) - mu) / s, 2);
  }
  CHECK(std::abs(ls.sum - direct) <= 1e-10 * std::abs(direct));

  // Location equal to y with a tiny scale concentrates the density.
  DataFrame with_y = data;
  with_y.add_numeric("yy", std::vector<double>(y.data(), y.data() + y.size()));
  auto perfect = Model::build(y, with_y, spec_of("~ 0 + offset(yy)", "~ 1"));
  perfect.params()[perfect.parts()[1].structured[0].coef].value(0, 0) = -6.0;
  CHECK(log_score(perfect).sum > 100.0 * 4.0);
}

TEST_CASE("ensembles") {
  auto [data, y] = hetero(240, 11);
  auto spec = spec_of("~ 1 + s(x, df=4) + dnn(x, lat)", "~ 1 + x");
  spec.networks["dnn"] = net({LayerSpec::dense(8, Activation::Tanh), LayerSpec::dense(1)});
  std::vector<std::size_t> train_rows, test_rows;
  for (std::size_t i = 0; i < 240; ++i) (i < 180 ? train_rows : test_rows).push_back(i);
  const DataFrame train = data.subset(train_rows), test = data.subset(test_rows);
  const Eigen::VectorXd ytr = y.head(180), yte = y.tail(60);
  auto cfg = quick(25);
  cfg.validation_split = 0.2;
  cfg.early_stopping = true;

  const auto ens = ensemble(spec, train, ytr, 5, cfg);
  REQUIRE(ens.members.size() == 5);
  const auto mix = get_ensemble_distribution(ens.members, test);
  const Eigen::VectorXd mix_lp = mixture_log_prob(mix, yte);
  Eigen::VectorXd avg = Eigen::VectorXd::Zero(60);
  for (const auto& m : ens.members) avg += log_prob(m.distribution(test), yte) / 5.0;
  CHECK((mix_lp.array() >= avg.array() - 1e-12).all());

  const auto same = ensemble(spec, train, ytr, 3, cfg, false);
  const auto single = get_ensemble_distribution(same.members, test);
  const Eigen::VectorXd one = log_prob(same.members[0].distribution(test), yte);
  CHECK((mixture_log_prob(single, yte) - one).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(same.members[1].predictors(same.members[1].design(test)) ==
        same.members[0].predictors(same.members[0].design(test)));
  CHECK_THROWS_AS(ensemble(spec, train, ytr, 1, cfg), TrainConfigError);
}

TEST_CASE("last-layer refit") {
  auto [data, y] = hetero(200, 12);
  SUBCASE("structured-only model equals the penalized least-squares oracle") {
    auto m = Model::build(y, data, spec_of("~ 1 + x + ridge(lat, la=2) + s(lon, df=5)", "~ 1"));
    const auto r = last_layer_refit(m);
    CHECK(r.latent_columns == 0);
    const auto& d = m.training_design();
    const auto& st = m.parts()[0].structured;
    Eigen::MatrixXd X(200, 1 + 1 + 1 + st[3].block.p());
    X << d.X[0][0], d.X[0][1], d.X[0][2], d.X[0][3];
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(X.cols(), X.cols());
    S(2, 2) = 2.0;
    S.bottomRightCorner(st[3].block.p(), st[3].block.p()) = st[3].block.lambda * st[3].block.P;
    const Eigen::VectorXd beta = oracle::penalized_ls(X, y, S);
    CHECK((r.coefficients - beta).cwiseAbs().maxCoeff() <= 1e-8);
    const Eigen::MatrixXd Ainv = (X.transpose() * X + S).inverse();
    const double edf = (Ainv * X.transpose() * X).trace();
    const double s2 = (y - X * beta).squaredNorm() / (200.0 - edf);
    CHECK((r.covariance - s2 * Ainv).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(r.covariance).eigenvalues().minCoeff() >= -1e-12);
    REQUIRE(r.bands.size() == 1);
    CHECK(((r.bands[0].upper - r.bands[0].fit).array() >= 0.0).all());
    CHECK(((r.bands[0].fit - r.bands[0].lower).array() >= 0.0).all());
  }
  SUBCASE("intercept-only model: var = sigma^2 / n") {
    auto m = Model::build(y, data, spec_of("~ 1", "~ 1"));
    const auto r = last_layer_refit(m);
    CHECK(r.coefficients(0) == doctest::Approx(y.mean()).epsilon(1e-12));
    CHECK(r.covariance(0, 0) == doctest::Approx(r.sigma2 / 200.0).epsilon(1e-12));
  }
  SUBCASE("a 3-unit penultimate layer adds 3 latent columns") {
    auto spec = spec_of("~ 1 + x + dnn(lat, lon)", "~ 1");
    spec.networks["dnn"] = net({LayerSpec::dense(8, Activation::Relu), LayerSpec::dense(3, Activation::Tanh),
                                LayerSpec::dense(1)});
    auto m = Model::build(y, data, spec, 2);
    fit(m, quick(10));
    const auto r = last_layer_refit(m);
    CHECK(r.structured_columns == 2);
    CHECK(r.latent_columns == 3);
    CHECK(r.design.cols() == 5);
  }
  SUBCASE("non-normal families are rejected") {
    ModelSpec spec;
    spec.family = make_family("poisson");
    spec.formulas = FormulaSet::from_strings({{"rate", "~ 1"}});
    Eigen::VectorXd counts = Eigen::VectorXd::Ones(200);
    auto m = Model::build(counts, data, spec);
    CHECK_THROWS_AS(last_layer_refit(m), ModelError);
  }
}

TEST_CASE("orthogonalization identifies the structured effect") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> z;
  std::vector<double> x(400), yy(400);
  for (int i = 0; i < 400; ++i) {
    x[i] = z(rng);
    yy[i] = 2.0 * x[i] + z(rng);
  }
  auto data = oracle::frame({{"x", x}});
  auto spec = spec_of("~ -1 + x + deep_model(x)", "~ 1");
  spec.networks["deep_model"] = net({LayerSpec::dense(16, Activation::Relu), LayerSpec::dense(1)});
  auto m = Model::build(oracle::to_eigen(yy), data, spec, 1);
  auto cfg = quick(60);
  cfg.batch_size = 32;
  fit(m, cfg);
  const double b = coef(m, CoefType::Linear, 0)[0].values(0);
  CHECK(b == doctest::Approx(2.0).epsilon(0.05));
}
