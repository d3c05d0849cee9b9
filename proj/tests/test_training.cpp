#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "pitot/baseline.hpp"
#include "pitot/synthetic.hpp"
#include "pitot/training.hpp"

using namespace pitot;

#include "support/fd_harness.hpp"

using pitot::testsupport::GradFixture;
using pitot::testsupport::gradcheck_fixture;
using pitot::testsupport::max_fd_rel_error;

namespace {

NetworkConfig grad_config(int r, std::vector<int> hidden, int s, int q, int heads,
                          bool mean_mode, InterferenceActivation act) {
  NetworkConfig cfg;
  cfg.embed_dim = r;
  cfg.hidden_sizes = std::move(hidden);
  cfg.interference_types = s;
  cfg.learned_dim = q;
  cfg.mean_mode = mean_mode;
  cfg.activation = act;
  if (heads == 1)
    cfg.quantile_targets = {0.9};
  else
    cfg.quantile_targets = {0.5, 0.9};
  return cfg;
}

}  // namespace

TEST_CASE("loss values", "[training]") {
  CHECK(squared_log_loss(1.0, 1.0) == 0.0);
  CHECK(squared_log_loss(2.0, 1.0) == 1.0);
  CHECK(squared_log_loss(0.0, 3.0) == 9.0);

  CHECK(pinball_loss(1.0, 1.0, 0.9) == 0.0);
  CHECK_THAT(pinball_loss(0.0, 1.0, 0.9), Catch::Matchers::WithinAbs(0.9, 1e-15));
  CHECK_THAT(pinball_loss(1.0, 0.0, 0.9), Catch::Matchers::WithinAbs(0.1, 1e-15));
  CHECK(pinball_loss(0.5, 17.0, 0.25) >= 0.0);
  // subgradient at the kink is pinned to 0
  CHECK(detail::head_loss_grad(LossKind::pinball, 1.0, 1.0, 0.9) == 0.0);
  CHECK_THROWS_AS(pinball_loss(0.0, 0.0, 1.0), ValidationError);
  CHECK_THROWS_AS(pinball_loss(0.0, 0.0, 0.0), ValidationError);
}

TEST_CASE("minimizing mean pinball recovers the empirical quantile", "[training]") {
  std::vector<double> ys(100);
  std::iota(ys.begin(), ys.end(), 1.0);
  double best = 0.0, best_loss = 1e300;
  for (double c = 1.0; c <= 100.0; c += 1.0) {
    double loss = 0.0;
    for (double y : ys) loss += pinball_loss(c, y, 0.95);
    if (loss < best_loss) {
      best_loss = loss;
      best = c;
    }
  }
  CHECK(std::abs(best - 95.0) <= 1.0);
}

TEST_CASE("total_loss mode-weight arithmetic", "[training]") {
  // one observation per mode, engineered to have identical loss
  Dataset ds;
  ds.n_workloads = 4;
  ds.n_platforms = 1;
  ds.features.workload_features = Matrix(4, 1);
  ds.features.platform_features = Matrix(1, 1);
  ds.observations = {
      {0, 0, {}, std::exp(0.5)},
      {0, 0, {1}, std::exp(0.5)},
      {0, 0, {1, 2}, std::exp(0.5)},
      {0, 0, {1, 2, 3}, std::exp(0.5)},
  };
  NetworkConfig cfg;
  cfg.hidden_sizes = {4};
  cfg.embed_dim = 2;
  cfg.mean_mode = true;
  PitotModel m = init_model(cfg, 1, 1, 4, 1, BaselineModel::zeros(4, 1), 0);
  m.workload_net.fill(0.0);
  m.platform_net.fill(0.0);
  std::vector<double> targets = residual_targets(m.baseline, ds.observations);
  Batches batches;
  for (int o = 0; o < 4; ++o)
    batches.by_mode[static_cast<std::size_t>(ds.observations[o].mode())].push_back(o);

  const double unit = 0.25;  // y = 0.5 everywhere, loss per obs = 0.25
  LossConfig lc{0.5};
  CHECK_THAT(total_loss(m, ds.features, ds.observations, targets, batches, lc,
                        LossKind::squared),
             Catch::Matchers::WithinAbs(1.5 * unit, 1e-14));

  // predictions equal targets -> zero loss
  std::vector<double> zeros(targets.size(), 0.0);
  Dataset exact = ds;
  for (auto& o : exact.observations) o.runtime_s = 1.0;  // y = 0 with zero model
  auto t2 = residual_targets(m.baseline, exact.observations);
  CHECK(total_loss(m, exact.features, exact.observations, t2, batches, lc,
                   LossKind::squared) == 0.0);

  // doubling beta exactly doubles the interference contribution
  Batches interf_only = batches;
  interf_only.by_mode[0].clear();
  const double l1 = total_loss(m, ds.features, ds.observations, targets, interf_only,
                               LossConfig{0.5}, LossKind::squared);
  const double l2 = total_loss(m, ds.features, ds.observations, targets, interf_only,
                               LossConfig{1.0}, LossKind::squared);
  CHECK(std::abs(l2 - 2.0 * l1) <= 1e-12);

  // a mode-0-only batch ignores beta entirely
  Batches clean_only;
  clean_only.by_mode[0] = batches.by_mode[0];
  CHECK(total_loss(m, ds.features, ds.observations, targets, clean_only, LossConfig{0.5},
                   LossKind::squared) ==
        total_loss(m, ds.features, ds.observations, targets, clean_only, LossConfig{9.0},
                   LossKind::squared));
}

TEST_CASE("gradients match central finite differences", "[training]") {
  struct Case {
    NetworkConfig cfg;
    LossKind kind;
  };
  std::vector<Case> cases = {
      {grad_config(4, {8}, 2, 1, 1, true, InterferenceActivation::leaky_relu),
       LossKind::squared},
      {grad_config(2, {16, 16}, 1, 0, 1, true, InterferenceActivation::leaky_relu),
       LossKind::squared},
      {grad_config(4, {8}, 0, 1, 1, true, InterferenceActivation::leaky_relu),
       LossKind::squared},
      {grad_config(4, {8}, 2, 1, 2, false, InterferenceActivation::leaky_relu),
       LossKind::pinball},
      {grad_config(2, {8}, 1, 1, 2, false, InterferenceActivation::identity),
       LossKind::pinball},
      {grad_config(4, {8}, 2, 1, 1, true, InterferenceActivation::identity),
       LossKind::proportional},
      {grad_config(8, {}, 2, 1, 1, true, InterferenceActivation::leaky_relu),
       LossKind::squared},
  };
  LossConfig lc;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    GradFixture f = gradcheck_fixture(cases[c].cfg, cases[c].kind, c + 1);
    const double err = max_fd_rel_error(f, lc, cases[c].kind, 60, c + 100);
    INFO("case " << c);
    CHECK(err <= 1e-5);
  }
}

TEST_CASE("gradient is zero at an exact fit", "[training]") {
  // zero model, targets zero -> gradient identically zero for squared loss
  Dataset ds;
  ds.n_workloads = 2;
  ds.n_platforms = 1;
  ds.features.workload_features = Matrix(2, 1);
  ds.features.platform_features = Matrix(1, 1);
  ds.observations = {{0, 0, {}, 1.0}, {1, 0, {1}, 1.0}};
  NetworkConfig cfg;
  cfg.hidden_sizes = {4};
  cfg.embed_dim = 2;
  cfg.mean_mode = true;
  PitotModel m = init_model(cfg, 1, 1, 2, 1, BaselineModel::zeros(2, 1), 1);
  m.workload_net.fill(0.0);
  m.platform_net.fill(0.0);
  auto targets = residual_targets(m.baseline, ds.observations);
  Batches batches;
  batches.by_mode[0] = {0};
  batches.by_mode[1] = {1};
  ModelGrad g = backward(m, ds.features, ds.observations, targets, batches, LossConfig{},
                         LossKind::squared);
  CHECK(total_loss(m, ds.features, ds.observations, targets, batches, LossConfig{},
                   LossKind::squared) == 0.0);
  for (auto arr : detail::param_arrays(g))
    for (double v : arr) CHECK(v == 0.0);
}

TEST_CASE("adamax hand-computed first step", "[training]") {
  TrainConfig cfg;
  double p = 0.0, m = 0.0, u = 0.0;
  adamax_update(p, 1.0, m, u, 1, cfg);
  CHECK_THAT(m, Catch::Matchers::WithinAbs(0.1, 1e-15));
  CHECK(u == 1.0);
  // (lr / (1 - beta1^1)) * m / (u + 1e-8)
  const double expected = -(0.001 / 0.1) * 0.1 / (1.0 + 1e-8);
  CHECK_THAT(p, Catch::Matchers::WithinAbs(expected, 1e-18));

  // zero gradient leaves parameters unchanged
  double p2 = 1.25, m2 = 0.0, u2 = 0.0;
  adamax_update(p2, 0.0, m2, u2, 1, cfg);
  CHECK(p2 == 1.25);
}

TEST_CASE("adamax step size is bounded", "[training]") {
  TrainConfig cfg;
  Rng rng(123);
  double p = 0.0, m = 0.0, u = 0.0;
  for (long long t = 1; t <= 2000; ++t) {
    const double before = p;
    adamax_update(p, draw_gaussian(rng, 3.0), m, u, t, cfg);
    const double cap = cfg.learning_rate / (1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
    CHECK(std::abs(p - before) <= cap * 1.01);
  }
}

TEST_CASE("train: steps=0 returns the initial model", "[training]") {
  SyntheticConfig scfg;
  scfg.n_workloads = 8;
  scfg.n_platforms = 4;
  scfg.n_obs_per_mode = 30;
  auto [ds, oracle] = generate_synthetic(scfg, 2);
  Split split = make_split(ds, 0.5, 3);
  BaselineModel base = fit_baseline(ds, split.train_ids);
  NetworkConfig cfg;
  cfg.hidden_sizes = {8};
  cfg.embed_dim = 4;
  cfg.mean_mode = true;
  PitotModel m = init_model(cfg, scfg.d_w, scfg.d_p, 8, 4, base, 5);
  TrainConfig tcfg;
  tcfg.steps = 0;
  TrainResult r = train(ds, split, m, tcfg, LossConfig{}, LossKind::squared);
  CHECK(model_to_json(r.best_model) == model_to_json(m));
  CHECK(r.log.empty());
}

TEST_CASE("train is deterministic", "[training]") {
  SyntheticConfig scfg;
  scfg.n_workloads = 8;
  scfg.n_platforms = 4;
  scfg.n_obs_per_mode = 40;
  scfg.noise_sigma = 0.05;
  auto [ds, oracle] = generate_synthetic(scfg, 7);
  Split split = make_split(ds, 0.6, 9);
  BaselineModel base = fit_baseline(ds, split.train_ids);
  NetworkConfig cfg;
  cfg.hidden_sizes = {8};
  cfg.embed_dim = 4;
  cfg.interference_types = 1;
  cfg.mean_mode = true;
  PitotModel m = init_model(cfg, scfg.d_w, scfg.d_p, 8, 4, base, 11);
  TrainConfig tcfg;
  tcfg.steps = 60;
  tcfg.batch_per_mode = 16;
  tcfg.eval_every = 20;
  tcfg.seed = 13;
  TrainResult a = train(ds, split, m, tcfg, LossConfig{}, LossKind::squared);
  TrainResult b = train(ds, split, m, tcfg, LossConfig{}, LossKind::squared);
  REQUIRE(a.log.size() == b.log.size());
  REQUIRE(a.log.size() == 3);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].train_loss == b.log[i].train_loss);
    CHECK(a.log[i].calval_loss == b.log[i].calval_loss);
  }
  CHECK(model_to_json(a.best_model) == model_to_json(b.best_model));
  CHECK(a.best_model.workload_net.all_finite());

  // mode mismatch guards
  CHECK_THROWS_AS(train(ds, split, m, tcfg, LossConfig{}, LossKind::pinball),
                  ValidationError);
}

TEST_CASE("train recovers a noiseless planted model", "[training]") {
  SyntheticConfig scfg;
  scfg.n_workloads = 12;
  scfg.n_platforms = 6;
  scfg.true_rank = 2;
  scfg.true_types = 1;
  scfg.noise_sigma = 0.0;
  scfg.n_obs_per_mode = 150;
  auto [ds, oracle] = generate_synthetic(scfg, 17);
  Split split = make_split(ds, 0.7, 19);
  BaselineModel base = fit_baseline(ds, split.train_ids);
  NetworkConfig cfg;
  cfg.hidden_sizes = {16};
  cfg.embed_dim = 4;
  cfg.interference_types = 1;
  cfg.mean_mode = true;
  PitotModel m = init_model(cfg, scfg.d_w, scfg.d_p, scfg.n_workloads, scfg.n_platforms,
                            base, 23);
  TrainConfig tcfg;
  tcfg.steps = 3000;
  tcfg.batch_per_mode = 64;
  tcfg.eval_every = 100;
  tcfg.seed = 29;

  const std::vector<double> targets = residual_targets(base, ds.observations);
  Batches calval_pools;
  for (int id : split.calval_ids)
    calval_pools.by_mode[static_cast<std::size_t>(
        ds.observations[static_cast<std::size_t>(id)].mode())].push_back(id);
  const double loss0 = total_loss(m, ds.features, ds.observations, targets, calval_pools,
                                  LossConfig{}, LossKind::squared);
  TrainResult r = train(ds, split, m, tcfg, LossConfig{}, LossKind::squared);
  CHECK(r.best_calval_loss * 100.0 <= loss0);
}

TEST_CASE("training log csv shape", "[training]") {
  std::vector<TrainLogRow> rows = {{200, 0.5, 0.75, true}, {400, 0.25, 0.125, false}};
  const std::string csv = training_log_to_csv(rows);
  CHECK(csv.rfind("step,train_loss,calval_loss,is_best\n", 0) == 0);
  CHECK(csv.find("200,0.5,0.75,1\n") != std::string::npos);
  CHECK(csv.find("400,0.25,0.125,0\n") != std::string::npos);
}
