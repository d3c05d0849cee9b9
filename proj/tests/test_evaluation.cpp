#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <set>

#include "pitot/evaluation.hpp"
#include "pitot/synthetic.hpp"

using namespace pitot;

namespace {

std::string temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("pitot_eval_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

ExperimentSpec quick_spec() {
  ExperimentSpec spec;
  spec.train_fractions = {0.5};
  spec.replicates = 1;
  spec.net.hidden_sizes = {8};
  spec.net.embed_dim = 4;
  spec.net.interference_types = 1;
  spec.net.quantile_targets = {0.5, 0.9};
  spec.train_cfg.steps = 60;
  spec.train_cfg.batch_per_mode = 32;
  spec.train_cfg.eval_every = 30;
  spec.epsilons = {0.2, 0.1};
  return spec;
}

Dataset quick_dataset(std::uint64_t seed = 5) {
  SyntheticConfig scfg;
  scfg.n_workloads = 10;
  scfg.n_platforms = 5;
  scfg.noise_sigma = 0.1;
  scfg.n_obs_per_mode = 200;
  auto [ds, oracle] = generate_synthetic(scfg, seed);
  return ds;
}

}  // namespace

TEST_CASE("mape arithmetic and validation", "[evaluation]") {
  std::vector<double> p = {1.0, 2.0};
  CHECK(mape(p, p) == 0.0);
  CHECK_THAT(mape(std::vector<double>{1.1}, std::vector<double>{1.0}),
             Catch::Matchers::WithinAbs(0.1, 1e-12));
  CHECK_THAT(mape(std::vector<double>{2.0, 0.5}, std::vector<double>{1.0, 1.0}),
             Catch::Matchers::WithinAbs(0.75, 1e-15));
  CHECK_THROWS_AS(mape(p, std::vector<double>{1.0}), ValidationError);
  CHECK_THROWS_AS(mape(std::vector<double>{1.0}, std::vector<double>{-1.0}),
                  ValidationError);
}

TEST_CASE("spectral norm of a rank-1 matrix is |u||v|", "[evaluation]") {
  Rng rng(2);
  const std::size_t r = 6;
  std::vector<double> u(r), v(r);
  for (auto& x : u) x = draw_gaussian(rng, 1.0);
  for (auto& x : v) x = draw_gaussian(rng, 1.0);
  Matrix f(r, r);
  for (std::size_t a = 0; a < r; ++a)
    for (std::size_t b = 0; b < r; ++b) f.at(a, b) = u[a] * v[b];
  const double expected = std::sqrt(dot(std::span<const double>(u), std::span<const double>(u))) *
                          std::sqrt(dot(std::span<const double>(v), std::span<const double>(v)));
  CHECK_THAT(spectral_norm(f), Catch::Matchers::WithinRel(expected, 1e-10));

  Matrix zero(4, 4);
  CHECK(spectral_norm(zero) == 0.0);
}

TEST_CASE("export_embeddings writes the expected shapes", "[evaluation]") {
  Dataset ds = quick_dataset();
  BaselineModel base = BaselineModel::zeros(ds.n_workloads, ds.n_platforms);
  NetworkConfig cfg;
  cfg.hidden_sizes = {8};
  cfg.embed_dim = 4;
  cfg.interference_types = 2;
  cfg.quantile_targets = {0.5, 0.9};
  PitotModel m = init_model(cfg, static_cast<int>(ds.features.workload_features.cols),
                            static_cast<int>(ds.features.platform_features.cols),
                            ds.n_workloads, ds.n_platforms, base, 3);
  const auto dir = temp_dir("emb");
  export_embeddings(m, ds.features, dir);

  const auto w_lines = split_string(read_text_file(dir + "/workload_embeddings.csv"), '\n');
  REQUIRE(w_lines.size() >= 2);
  CHECK(w_lines.size() == static_cast<std::size_t>(ds.n_workloads) + 2);  // header + rows + trailing
  CHECK(split_string(w_lines[1], ',').size() == 1 + 2 * 4);  // id + Q*r

  const auto p_lines = split_string(read_text_file(dir + "/platform_embeddings.csv"), '\n');
  CHECK(p_lines.size() == static_cast<std::size_t>(ds.n_platforms) + 2);
  CHECK(split_string(p_lines[1], ',').size() == 1 + 4 * (1 + 2 * 2) + 1);

  // s = 0 has zero spectral norms
  NetworkConfig cfg0 = cfg;
  cfg0.interference_types = 0;
  PitotModel m0 = init_model(cfg0, static_cast<int>(ds.features.workload_features.cols),
                             static_cast<int>(ds.features.platform_features.cols),
                             ds.n_workloads, ds.n_platforms, base, 3);
  const auto dir0 = temp_dir("emb0");
  export_embeddings(m0, ds.features, dir0);
  const auto p0 = split_string(read_text_file(dir0 + "/platform_embeddings.csv"), '\n');
  for (std::size_t l = 1; l + 1 < p0.size(); ++l) {
    const auto cells = split_string(p0[l], ',');
    CHECK(cells.back() == "0");
  }
}

TEST_CASE("run_experiment produces metrics and keeps test data quarantined",
          "[evaluation]") {
  Dataset ds = quick_dataset();
  ExperimentSpec spec = quick_spec();

  std::set<int> test_ids;
  std::vector<std::pair<std::string, std::set<int>>> staged;
  StageObserver observer = [&](const std::string& stage, std::span<const int> ids) {
    std::set<int> s(ids.begin(), ids.end());
    if (stage == "test")
      test_ids = s;
    else
      staged.emplace_back(stage, std::move(s));
  };
  ExperimentResult result = run_experiment(ds, spec, observer);
  REQUIRE(result.reports.size() == 1);
  const MetricsReport& rep = result.reports[0];
  INFO(rep.status);
  REQUIRE(rep.status == "ok");
  CHECK(std::isfinite(rep.mape_no_interference));
  CHECK(std::isfinite(rep.mape_interference));
  CHECK(rep.margin.count(0.1) == 1);
  CHECK(rep.coverage.count(0.1) == 1);
  CHECK(rep.margin.at(0.1) >= 0.0);
  CHECK(rep.coverage.at(0.1) >= 0.0);
  CHECK(rep.coverage.at(0.1) <= 1.0);

  // split hygiene: no stage other than "test" ever receives a test id
  REQUIRE_FALSE(test_ids.empty());
  for (const auto& [stage, ids] : staged)
    for (int id : ids) {
      INFO(stage);
      CHECK(test_ids.count(id) == 0);
    }

  // raw rows cover the whole test set
  CHECK(result.raw.size() == test_ids.size());
  for (const auto& row : result.raw) CHECK(std::isfinite(row.predicted_s));
}

TEST_CASE("ablation policies run and reduce as expected", "[evaluation]") {
  Dataset ds = quick_dataset(9);

  SECTION("discard trains on clean data only") {
    ExperimentSpec spec = quick_spec();
    spec.interference = InterferencePolicy::discard;
    spec.with_bounds = false;
    StageObserver observer = [&](const std::string& stage, std::span<const int> ids) {
      if (stage == "fit_baseline" || stage == "train") return;
    };
    ExperimentResult r = run_experiment(ds, spec, observer);
    REQUIRE(r.reports[0].status == "ok");
    // interference error still reported (and typically poor)
    CHECK(std::isfinite(r.reports[0].mape_interference));
  }

  SECTION("ignore empties interference sets at train time") {
    ExperimentSpec spec = quick_spec();
    spec.interference = InterferencePolicy::ignore;
    spec.with_bounds = false;
    ExperimentResult r = run_experiment(ds, spec);
    REQUIRE(r.reports[0].status == "ok");
  }

  SECTION("pure matrix factorization reduction: log objective, no features") {
    ExperimentSpec spec = quick_spec();
    spec.objective = ObjectiveKind::log;
    spec.use_workload_features = false;
    spec.use_platform_features = false;
    spec.interference = InterferencePolicy::ignore;
    spec.with_bounds = false;
    spec.net.learned_dim = 2;  // phi is the only input left
    ExperimentResult r = run_experiment(ds, spec);
    INFO(r.reports[0].status);
    REQUIRE(r.reports[0].status == "ok");
  }

  SECTION("proportional objective trains") {
    ExperimentSpec spec = quick_spec();
    spec.objective = ObjectiveKind::proportional;
    spec.with_bounds = false;
    ExperimentResult r = run_experiment(ds, spec);
    REQUIRE(r.reports[0].status == "ok");
  }

  SECTION("identity activation trains") {
    ExperimentSpec spec = quick_spec();
    spec.net.activation = InterferenceActivation::identity;
    spec.with_bounds = false;
    ExperimentResult r = run_experiment(ds, spec);
    REQUIRE(r.reports[0].status == "ok");
  }
}

TEST_CASE("failed replicates are recorded, not dropped", "[evaluation]") {
  Dataset ds = quick_dataset();
  ExperimentSpec spec = quick_spec();
  spec.train_fractions = {0.002};  // split will fail: empty train set
  ExperimentResult r = run_experiment(ds, spec);
  REQUIRE(r.reports.size() == 1);
  CHECK(r.reports[0].status != "ok");
}

TEST_CASE("summarize aggregates replicates with standard errors", "[evaluation]") {
  std::vector<MetricsReport> reports;
  for (int rep = 0; rep < 5; ++rep) {
    MetricsReport r;
    r.fraction = 0.5;
    r.replicate = rep;
    r.mape_no_interference = 0.10 + 0.01 * rep;
    r.mape_interference = 0.25;
    r.margin[0.1] = 0.25;
    r.coverage[0.1] = 0.875;
    reports.push_back(r);
  }
  const auto dir = temp_dir("summarize");
  summarize(reports, dir);
  const std::string err = read_text_file(dir + "/error_vs_fraction.csv");
  CHECK(err.find("fraction,mode,mean_mape,stderr,replicates") == 0);
  // identical replicates have stderr 0
  CHECK(err.find("0.5,interference,0.25,0,5") != std::string::npos);
  // stderr = stddev/sqrt(5) for the no-interference series
  std::vector<double> vals = {0.10, 0.11, 0.12, 0.13, 0.14};
  const double expected_se = sample_stddev(vals) / std::sqrt(5.0);
  CHECK(err.find("0.5,no_interference,0.12") != std::string::npos);
  CHECK(err.find(format_g17(expected_se)) != std::string::npos);

  const std::string margin = read_text_file(dir + "/margin_vs_epsilon.csv");
  CHECK(margin.find("0.5,0.1,0.25,0,5") != std::string::npos);
  const std::string cov = read_text_file(dir + "/coverage_vs_epsilon.csv");
  CHECK(cov.find("0.5,0.1,0.875,0,5") != std::string::npos);
}

TEST_CASE("metrics report json round-trip", "[evaluation]") {
  MetricsReport r;
  r.fraction = 0.3;
  r.replicate = 2;
  r.seed = 42;
  r.mape_no_interference = 0.05;
  r.margin[0.1] = 0.25;
  r.coverage[0.1] = 0.91;
  r.pool_mape[0] = 0.05;
  r.pool_margin[2][0.1] = 0.5;
  r.pool_coverage[2][0.1] = 0.875;
  MetricsReport back = report_from_json(report_to_json(r));
  CHECK(back.fraction == r.fraction);
  CHECK(back.replicate == r.replicate);
  CHECK(back.mape_no_interference == r.mape_no_interference);
  CHECK(std::isnan(back.mape_interference));
  CHECK(back.margin.at(0.1) == r.margin.at(0.1));
  CHECK(back.coverage.at(0.1) == r.coverage.at(0.1));
  CHECK(back.pool_margin.at(2).at(0.1) == 0.5);
  CHECK(back.pool_coverage.at(2).at(0.1) == 0.875);
  CHECK(back.status == "ok");
}

TEST_CASE("replicate seeds are deterministic and distinct", "[evaluation]") {
  CHECK(replicate_seed(1, 0, 0) == replicate_seed(1, 0, 0));
  CHECK(replicate_seed(1, 0, 0) != replicate_seed(1, 0, 1));
  CHECK(replicate_seed(1, 0, 0) != replicate_seed(1, 1, 0));
  CHECK(replicate_seed(1, 0, 0) != replicate_seed(2, 0, 0));
}
