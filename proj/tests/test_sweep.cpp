#include <doctest.h>

#include <nlohmann/json.hpp>

#include "hallab/error.hpp"
#include "hallab/kernels.hpp"
#include "hallab/sweep.hpp"

using namespace hallab;
using namespace hallab::detect;

namespace {

SweepConfig tiny() {
  SweepConfig c;
  c.dim = 3;
  c.n_train = 300;
  c.n_seen = 60;
  c.n_unseen = 60;
  c.rhos = {0.2, 0.8};
  c.seeds = {0, 1};
  c.root_seed = 5;
  auto krr = default_family(Family::Krr);
  auto mlp = default_family(Family::MlpFull);
  mlp.hidden_widths = {16, 16};
  mlp.steps = 50;
  c.families = {default_family(Family::Ridgeless), krr, mlp};
  return c;
}

}  // namespace

TEST_CASE("sweep rows are ordered and independent of the worker count") {
  auto c = tiny();
  c.jobs = 1;
  const auto a = sweep_rho(c);
  c.jobs = 4;
  const auto b = sweep_rho(c);
  REQUIRE(a.rows.size() == 2 * 2 * 3);
  CHECK(rows_to_csv(a.rows) == rows_to_csv(b.rows));
  CHECK(summarize(a, c).dump() == summarize(b, c).dump());
  CHECK(a.rows[0].rho == 0.2);
  CHECK(a.rows[0].method == "ridgeless");
  CHECK(a.rows[1].method == "krr");
  CHECK(a.rows[3].seed == 1);
  for (const auto& r : a.rows) {
    CHECK(r.n_neg == 60);
    CHECK(r.n_pos == 60);
    CHECK(r.auroc >= 0.0);
    CHECK(r.auroc <= 1.0);
  }
  CHECK(a.rows[0].train_residual_max <= 1e-6);
  const std::string csv = rows_to_csv(a.rows);
  CHECK(csv.substr(0, csv.find('\n')).starts_with("rho,seed,method,auroc,tpr_at_fpr05,n_pos,n_neg"));
}

TEST_CASE("a single cell matches its row in the sweep") {
  const auto c = tiny();
  const auto all = sweep_rho(c);
  const auto row = run_cell(c, 0.8, 1, c.families[1]);
  CHECK(row.auroc == all.rows[10].auroc);
  CHECK(row.mean_abs_seen == all.rows[10].mean_abs_seen);
}

TEST_CASE("sweep config JSON round trip and field errors") {
  const auto c = tiny();
  const auto back = sweep_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  auto j = to_json(c);
  j["families"][0]["lamda"] = 1.0;
  try {
    sweep_config_from_json(j);
    FAIL("accepted an unknown key");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("families[0].lamda") != std::string::npos);
  }
  j = to_json(c);
  j["rhos"] = {1.5};
  CHECK_THROWS_AS(sweep_config_from_json(j), InvalidArgument);
}

TEST_CASE("Spearman correlation") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  // ranks (1, 2.5, 2.5, 4) vs (1, 2, 3, 4): Pearson on ranks
  CHECK(spearman({1, 2, 2, 3}, {1, 2, 3, 4}) == doctest::Approx(0.9486832980505138));
}

TEST_CASE("summary carries per-rho means and the end-to-end gap") {
  const auto c = tiny();
  const auto res = sweep_rho(c);
  const auto s = summarize(res, c);
  REQUIRE(s["methods"].size() == 3);
  const auto& m = s["methods"][0];
  CHECK(m["method"] == "ridgeless");
  CHECK(m["per_rho"][1]["auroc"]["n"] == 2);
  const double a0 = (res.rows[0].auroc + res.rows[3].auroc) / 2;
  const double a1 = (res.rows[6].auroc + res.rows[9].auroc) / 2;
  CHECK(m["auroc_gap_first_last"].get<double>() == doctest::Approx(a0 - a1));
}

TEST_CASE("spiked ridgeless fit: confident in the cores, near zero in the noisy region") {
  SweepConfig c;
  c.dim = 1;
  c.n_train = 4000;
  c.n_seen = 500;
  c.n_unseen = 2000;
  c.rhos = {0.5, 0.9};
  c.seeds = {0};
  auto f = default_family(Family::Spiked);
  f.kernel = kernels::KernelSpec::spiked(kernels::KernelSpec::gaussian(0.1), 10.0, 1e-5);
  c.families = {f};
  const auto noisy = run_cell(c, 0.5, 0, f);
  REQUIRE(noisy.mean_abs_unseen_noisy.has_value());
  CHECK(*noisy.mean_abs_unseen_noisy <= 0.1);
  const auto core = run_cell(c, 0.9, 0, f);
  REQUIRE(core.mean_abs_unseen_core.has_value());
  CHECK(*core.mean_abs_unseen_core >= 0.8);
}
