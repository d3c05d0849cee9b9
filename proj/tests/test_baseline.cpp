#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "pitot/baseline.hpp"
#include "pitot/dataset.hpp"

using namespace pitot;

namespace {

Dataset grid_dataset(int n_w, int n_p, const std::vector<double>& a,
                     const std::vector<double>& b) {
  Dataset ds;
  ds.n_workloads = n_w;
  ds.n_platforms = n_p;
  ds.features.workload_features = Matrix(static_cast<std::size_t>(n_w), 1);
  ds.features.platform_features = Matrix(static_cast<std::size_t>(n_p), 1);
  for (int i = 0; i < n_w; ++i)
    for (int j = 0; j < n_p; ++j)
      ds.observations.push_back({i, j, {}, std::exp(a[i] + b[j])});
  return ds;
}

std::vector<int> all_ids(const Dataset& ds) {
  std::vector<int> ids(ds.observations.size());
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

}  // namespace

TEST_CASE("single observation pins the one-equation system", "[baseline]") {
  Dataset ds;
  ds.n_workloads = 1;
  ds.n_platforms = 1;
  ds.features.workload_features = Matrix(1, 1);
  ds.features.platform_features = Matrix(1, 1);
  ds.observations = {{0, 0, {}, std::exp(1.0)}};
  BaselineModel m = fit_baseline(ds, all_ids(ds));
  CHECK_THAT(m.w_bar[0] + m.p_bar[0], Catch::Matchers::WithinAbs(1.0, 1e-14));
  CHECK_THAT(m.p_bar[0], Catch::Matchers::WithinAbs(0.0, 1e-14));
  CHECK_THAT(m.w_bar[0], Catch::Matchers::WithinAbs(1.0, 1e-14));
}

TEST_CASE("exact recovery on noiseless separable data", "[baseline]") {
  Rng rng(5);
  std::vector<double> a(20), b(20);
  for (auto& v : a) v = draw_uniform(rng, -2.0, 2.0);
  for (auto& v : b) v = draw_uniform(rng, -2.0, 2.0);
  Dataset ds = grid_dataset(20, 20, a, b);
  std::vector<double> losses;
  BaselineModel m = fit_baseline(ds, all_ids(ds), 1000, 1e-10, &losses);
  CHECK(losses.size() <= 50);
  for (std::size_t s = 1; s < losses.size(); ++s) CHECK(losses[s] <= losses[s - 1]);
  for (const auto& o : ds.observations) {
    const double resid =
        std::log(o.runtime_s) - baseline_log(m, o.workload_id, o.platform_id);
    CHECK(std::abs(resid) <= 1e-9);
  }
}

TEST_CASE("per-sweep loss is monotone on noisy partial data", "[baseline]") {
  Rng rng(7);
  Dataset ds;
  ds.n_workloads = 15;
  ds.n_platforms = 9;
  ds.features.workload_features = Matrix(15, 1);
  ds.features.platform_features = Matrix(9, 1);
  for (int n = 0; n < 120; ++n) {
    const int i = static_cast<int>(draw_index(rng, 15));
    const int j = static_cast<int>(draw_index(rng, 9));
    ds.observations.push_back({i, j, {}, std::exp(draw_uniform(rng, -3.0, 3.0))});
  }
  std::vector<double> losses;
  fit_baseline(ds, all_ids(ds), 1000, 1e-10, &losses);
  REQUIRE(losses.size() >= 2);
  for (std::size_t s = 1; s < losses.size(); ++s) CHECK(losses[s] <= losses[s - 1]);
}

TEST_CASE("baseline_log adds the two parameters and checks bounds", "[baseline]") {
  BaselineModel m;
  m.w_bar = {1.5};
  m.p_bar = {-0.5};
  CHECK(baseline_log(m, 0, 0) == 1.0);
  CHECK_THROWS_AS(baseline_log(m, 1, 0), IndexError);
  CHECK_THROWS_AS(baseline_log(m, 0, -1), IndexError);
}

TEST_CASE("gauge invariance of the sum", "[baseline]") {
  BaselineModel m;
  m.w_bar = {1.0, 2.0};
  m.p_bar = {0.25, -0.25};
  BaselineModel shifted = m;
  for (auto& v : shifted.w_bar) v += 3.5;
  for (auto& v : shifted.p_bar) v -= 3.5;
  // normalize the shifted model back to the mean(p_bar)=0 gauge
  double c = (shifted.p_bar[0] + shifted.p_bar[1]) / 2.0;
  for (auto& v : shifted.p_bar) v -= c;
  for (auto& v : shifted.w_bar) v += c;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) CHECK(baseline_log(m, i, j) == baseline_log(shifted, i, j));
}

TEST_CASE("residual targets", "[baseline]") {
  BaselineModel m;
  m.w_bar = {0.7};
  m.p_bar = {0.2};
  std::vector<Observation> obs = {
      {0, 0, {}, std::exp(0.9)},
      {0, 0, {0}, std::exp(0.9 + 0.3)},
  };
  auto ys = residual_targets(m, obs);
  REQUIRE(ys.size() == 2);
  CHECK_THAT(ys[0], Catch::Matchers::WithinAbs(0.0, 1e-12));
  CHECK_THAT(ys[1], Catch::Matchers::WithinAbs(0.3, 1e-12));
}

TEST_CASE("scaling one workload's runtimes shifts only its w_bar", "[baseline]") {
  Rng rng(21);
  std::vector<double> a(8), b(6);
  for (auto& v : a) v = draw_uniform(rng, -1.0, 1.0);
  for (auto& v : b) v = draw_uniform(rng, -1.0, 1.0);
  Dataset ds = grid_dataset(8, 6, a, b);
  // add noise so the fit is not trivially exact
  for (auto& o : ds.observations) o.runtime_s *= std::exp(draw_gaussian(rng, 0.05));

  const double gamma = 7.3;
  Dataset scaled = ds;
  for (auto& o : scaled.observations)
    if (o.workload_id == 2) o.runtime_s *= gamma;

  BaselineModel m0 = fit_baseline(ds, all_ids(ds));
  BaselineModel m1 = fit_baseline(scaled, all_ids(scaled));
  CHECK_THAT(m1.w_bar[2] - m0.w_bar[2], Catch::Matchers::WithinAbs(std::log(gamma), 1e-10));

  auto y0 = residual_targets(m0, ds.observations);
  auto y1 = residual_targets(m1, scaled.observations);
  for (std::size_t n = 0; n < ds.observations.size(); ++n)
    if (ds.observations[n].workload_id == 2)
      CHECK(std::abs(y1[n] - y0[n]) <= 1e-12);
}

TEST_CASE("fallback entries for entities never observed interference-free", "[baseline]") {
  Dataset ds;
  ds.n_workloads = 3;
  ds.n_platforms = 2;
  ds.features.workload_features = Matrix(3, 1);
  ds.features.platform_features = Matrix(2, 1);
  ds.observations = {
      {0, 0, {}, 2.0},
      {1, 0, {}, 4.0},
      {2, 0, {1}, 8.0},  // workload 2 only seen with interference
  };
  BaselineModel m = fit_baseline(ds, all_ids(ds));
  CHECK(m.fallback_workloads == std::vector<int>{2});
  CHECK(m.fallback_platforms == std::vector<int>{1});
  // mean(p_bar) == 0 gauge
  CHECK_THAT(m.p_bar[0] + m.p_bar[1], Catch::Matchers::WithinAbs(0.0, 1e-14));
}

TEST_CASE("no interference-free observation is an error", "[baseline]") {
  Dataset ds;
  ds.n_workloads = 1;
  ds.n_platforms = 1;
  ds.features.workload_features = Matrix(1, 1);
  ds.features.platform_features = Matrix(1, 1);
  ds.observations = {{0, 0, {0}, 1.0}};
  CHECK_THROWS_AS(fit_baseline(ds, all_ids(ds)), ValidationError);
}

TEST_CASE("baseline json round-trip", "[baseline]") {
  BaselineModel m;
  m.w_bar = {1.0, -2.25, 0.1};
  m.p_bar = {0.5, -0.5};
  m.fallback_workloads = {2};
  BaselineModel r = baseline_from_json(baseline_to_json(m));
  CHECK(r.w_bar == m.w_bar);
  CHECK(r.p_bar == m.p_bar);
  CHECK(r.fallback_workloads == m.fallback_workloads);
}
