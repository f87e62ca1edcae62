#include "hallab/sweep.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "hallab/error.hpp"
#include "hallab/io.hpp"
#include "hallab/metrics.hpp"
#include "hallab/parallel.hpp"
#include "hallab/rng.hpp"
#include "hallab/sphere.hpp"

namespace hallab::detect {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

std::vector<double> confidence_scores(const VectorXd& predictions) {
  std::vector<double> s(predictions.size());
  for (Eigen::Index i = 0; i < predictions.size(); ++i) s[i] = -std::abs(predictions(i));
  return s;
}

std::vector<double> confidence_scores(const regressor::FitModel& model, const MatrixXd& points) {
  return confidence_scores(regressor::predict_batch(model, points));
}

std::vector<double> confidence_scores(const regressor::GdModel& model, const MatrixXd& points) {
  return confidence_scores(regressor::predict_batch(model, points));
}

std::vector<double> confidence_scores(const mlp::MlpModel& model, const MatrixXd& points) {
  return confidence_scores(mlp::forward_batch(model, points));
}

namespace {

const std::vector<std::pair<Family, std::string>>& family_names() {
  static const std::vector<std::pair<Family, std::string>> names = {
      {Family::Krr, "krr"},           {Family::Ridgeless, "ridgeless"}, {Family::Bump, "bump"},
      {Family::Spiked, "spiked"},     {Family::KernelGd, "kernel-gd"},  {Family::MlpFull, "mlp-full"},
      {Family::MlpLast, "mlp-last"}};
  return names;
}

bool uses_kernel(Family f) { return f != Family::MlpFull && f != Family::MlpLast; }

}  // namespace

std::string to_string(Family f) {
  for (const auto& [fam, name] : family_names())
    if (fam == f) return name;
  throw InvalidArgument("unknown family");
}

Family family_from_string(const std::string& s) {
  for (const auto& [fam, name] : family_names())
    if (name == s) return fam;
  throw InvalidArgument("unknown model family '" + s + "'");
}

FamilySpec default_family(Family f) {
  FamilySpec s;
  s.family = f;
  s.name = to_string(f);
  switch (f) {
    case Family::Krr:
      s.kernel = kernels::KernelSpec::gaussian(1.0);
      s.lambda = 1e-3;
      break;
    case Family::Ridgeless:
      s.kernel = kernels::KernelSpec::laplace(1.0);
      break;
    case Family::Bump:
      s.kernel = kernels::KernelSpec::bump(0.5);
      break;
    case Family::Spiked:
      s.kernel = kernels::KernelSpec::spiked(kernels::KernelSpec::gaussian(1.0), 10.0, 1e-5);
      break;
    case Family::KernelGd:
      s.kernel = kernels::KernelSpec::arccos_ntk(3);
      s.t = 1e4;
      s.eta = 1.0;
      break;
    case Family::MlpFull:
      s.hidden_widths = {64, 64, 64, 64};
      s.learning_rate = 0.25;
      s.steps = 2500;
      s.single_precision = true;
      break;
    case Family::MlpLast:
      s.hidden_widths = {16384};
      s.learning_rate = 2e-5;
      s.steps = 2000000000;
      break;
  }
  return s;
}

json to_json(const FamilySpec& f) {
  json j = {{"name", f.name}, {"family", to_string(f.family)}};
  if (uses_kernel(f.family)) {
    if (f.kernel) j["kernel"] = kernels::to_json(*f.kernel);
    if (f.family == Family::Krr || f.family == Family::Bump) j["lambda"] = f.lambda;
    if (f.family == Family::KernelGd) {
      j["t"] = std::isinf(f.t) ? json("inf") : json(f.t);
      j["eta"] = f.eta;
    }
  } else {
    j["hidden_widths"] = f.hidden_widths;
    j["init_scale"] = f.init_scale;
    j["learning_rate"] = f.learning_rate;
    j["steps"] = f.steps;
    j["single_precision"] = f.single_precision;
  }
  return j;
}

namespace {

[[noreturn]] void field_error(const std::string& path, const std::string& what) {
  throw InvalidArgument("config field '" + path + "': " + what);
}

template <typename T>
T field(const json& j, const std::string& key, const std::string& path) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    field_error(path + "." + key, e.what());
  }
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& path) {
  if (!j.is_object()) field_error(path, "expected an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) field_error(path + "." + k, "unknown field");
}

FamilySpec family_from_json_at(const json& j, const std::string& path) {
  if (j.is_string()) return default_family(family_from_string(j.get<std::string>()));
  check_keys(j,
             {"name", "family", "kernel", "lambda", "t", "eta", "hidden_widths", "init_scale", "learning_rate",
              "steps", "single_precision"},
             path);
  Family fam;
  try {
    fam = family_from_string(field<std::string>(j, "family", path));
  } catch (const InvalidArgument& e) {
    field_error(path + ".family", e.what());
  }
  FamilySpec f = default_family(fam);
  if (j.contains("name")) f.name = field<std::string>(j, "name", path);
  if (j.contains("kernel")) {
    try {
      f.kernel = kernels::from_json(j.at("kernel"));
    } catch (const std::exception& e) {
      field_error(path + ".kernel", e.what());
    }
  }
  if (j.contains("lambda")) f.lambda = field<double>(j, "lambda", path);
  if (j.contains("t")) {
    if (j.at("t").is_string() && j.at("t").get<std::string>() == "inf")
      f.t = regressor::kInfiniteTime;
    else
      f.t = field<double>(j, "t", path);
  }
  if (j.contains("eta")) f.eta = field<double>(j, "eta", path);
  if (j.contains("hidden_widths")) f.hidden_widths = field<std::vector<int>>(j, "hidden_widths", path);
  if (j.contains("init_scale")) f.init_scale = field<double>(j, "init_scale", path);
  if (j.contains("learning_rate")) f.learning_rate = field<double>(j, "learning_rate", path);
  if (j.contains("steps")) f.steps = field<int>(j, "steps", path);
  if (j.contains("single_precision")) f.single_precision = field<bool>(j, "single_precision", path);

  if (uses_kernel(fam) && !f.kernel) field_error(path + ".kernel", "required for this family");
  if (f.lambda < 0) field_error(path + ".lambda", "must be >= 0");
  if (!(f.t > 0)) field_error(path + ".t", "must be positive");
  if (!(f.eta > 0)) field_error(path + ".eta", "must be positive");
  if (f.hidden_widths.empty()) field_error(path + ".hidden_widths", "needs at least one hidden layer");
  for (int w : f.hidden_widths)
    if (w < 1) field_error(path + ".hidden_widths", "widths must be positive");
  if (!(f.learning_rate > 0)) field_error(path + ".learning_rate", "must be positive");
  if (f.steps < 1) field_error(path + ".steps", "must be positive");
  return f;
}

}  // namespace

FamilySpec family_from_json(const json& j) { return family_from_json_at(j, "family"); }

json to_json(const SweepConfig& c) {
  json fams = json::array();
  for (const auto& f : c.families) fams.push_back(to_json(f));
  return {{"dim", c.dim},         {"n_train", c.n_train}, {"n_seen", c.n_seen},         {"n_unseen", c.n_unseen},
          {"epsilon", c.epsilon}, {"rhos", c.rhos},       {"seeds", c.seeds},           {"root_seed", c.root_seed},
          {"families", fams}};
}

SweepConfig sweep_config_from_json(const json& j) {
  const std::string path = "sweep";
  check_keys(j, {"dim", "n_train", "n_seen", "n_unseen", "epsilon", "rhos", "seeds", "root_seed", "families"}, path);
  SweepConfig c;
  if (j.contains("dim")) c.dim = field<int>(j, "dim", path);
  if (j.contains("n_train")) c.n_train = field<std::size_t>(j, "n_train", path);
  if (j.contains("n_seen")) c.n_seen = field<std::size_t>(j, "n_seen", path);
  if (j.contains("n_unseen")) c.n_unseen = field<std::size_t>(j, "n_unseen", path);
  if (j.contains("epsilon")) c.epsilon = field<double>(j, "epsilon", path);
  if (j.contains("rhos")) c.rhos = field<std::vector<double>>(j, "rhos", path);
  if (j.contains("seeds")) c.seeds = field<std::vector<std::uint64_t>>(j, "seeds", path);
  if (j.contains("root_seed")) c.root_seed = field<std::uint64_t>(j, "root_seed", path);
  if (j.contains("families")) {
    const auto& fams = j.at("families");
    if (!fams.is_array()) field_error(path + ".families", "expected an array");
    for (std::size_t i = 0; i < fams.size(); ++i)
      c.families.push_back(family_from_json_at(fams[i], path + ".families[" + std::to_string(i) + "]"));
  } else {
    for (const auto& [fam, name] : family_names()) c.families.push_back(default_family(fam));
  }

  if (c.dim < 1) field_error(path + ".dim", "must be >= 1");
  if (c.n_train < 2) field_error(path + ".n_train", "must be >= 2");
  if (c.n_seen < 1 || c.n_seen > c.n_train) field_error(path + ".n_seen", "must be in [1, n_train]");
  if (c.n_unseen < 1) field_error(path + ".n_unseen", "must be >= 1");
  if (c.rhos.empty()) field_error(path + ".rhos", "must not be empty");
  for (double r : c.rhos)
    if (!(r > 0 && r < 1)) field_error(path + ".rhos", "every rho must lie in (0, 1)");
  if (c.seeds.empty()) field_error(path + ".seeds", "must not be empty");
  if (c.families.empty()) field_error(path + ".families", "must not be empty");
  std::set<std::string> names;
  for (const auto& f : c.families)
    if (!names.insert(f.name).second) field_error(path + ".families", "duplicate method name '" + f.name + "'");
  try {
    for (double r : c.rhos) sphere::make_region_spec(c.dim, r, c.epsilon);
  } catch (const std::exception& e) {
    field_error(path + ".epsilon", e.what());
  }
  return c;
}

namespace {

std::uint64_t rho_tag(double rho) { return std::bit_cast<std::uint64_t>(rho); }

std::optional<double> mean_abs(const std::vector<double>& scores, const std::vector<char>& mask) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (mask[i]) {
      s -= scores[i];
      ++n;
    }
  if (!n) return std::nullopt;
  return s / static_cast<double>(n);
}

// AUROC of seen negatives vs the unseen positives selected by mask.
std::optional<double> sub_auroc(const std::vector<double>& seen, const std::vector<double>& unseen,
                                const std::vector<char>& mask) {
  std::vector<double> sc(seen);
  std::vector<char> lab(seen.size(), 0);
  for (std::size_t i = 0; i < unseen.size(); ++i)
    if (mask[i]) {
      sc.push_back(unseen[i]);
      lab.push_back(1);
    }
  if (lab.size() == seen.size()) return std::nullopt;
  return auroc(sc, lab);
}

struct Predictions {
  VectorXd train, seen, unseen;
};

Predictions fit_and_predict(const FamilySpec& f, const MatrixXd& X, const VectorXd& Y, const MatrixXd& seen,
                            const MatrixXd& unseen, std::uint64_t init_seed) {
  Predictions p;
  const double n = static_cast<double>(X.rows());
  switch (f.family) {
    case Family::Krr:
    case Family::Ridgeless:
    case Family::Bump:
    case Family::Spiked: {
      double lambda = 0.0;
      if (f.family == Family::Krr) lambda = f.lambda;
      if (f.family == Family::Bump) lambda = f.lambda > 0 ? f.lambda : 1.0 / n;
      const auto model = regressor::fit_krr(X, Y, *f.kernel, lambda);
      p.train = regressor::predict_batch(model, X);
      p.seen = regressor::predict_batch(model, seen);
      p.unseen = regressor::predict_batch(model, unseen);
      break;
    }
    case Family::KernelGd: {
      const auto model = regressor::fit_kernel_gd(X, Y, *f.kernel, f.t, f.eta);
      p.train = regressor::predict_batch(model, X);
      p.seen = regressor::predict_batch(model, seen);
      p.unseen = regressor::predict_batch(model, unseen);
      break;
    }
    case Family::MlpFull:
    case Family::MlpLast: {
      mlp::MlpConfig mc;
      mc.layer_widths.assign(1, static_cast<int>(X.cols()));
      mc.layer_widths.insert(mc.layer_widths.end(), f.hidden_widths.begin(), f.hidden_widths.end());
      mc.layer_widths.push_back(1);
      mc.init_scale = f.init_scale;
      mc.seed = init_seed;
      mlp::TrainConfig tc;
      tc.mode = f.family == Family::MlpFull ? mlp::TrainMode::Full : mlp::TrainMode::LastLayer;
      tc.learning_rate = f.learning_rate;
      tc.steps = f.steps;
      tc.single_precision = f.single_precision;
      const auto res = mlp::train(mlp::init(mc), X, Y, tc);
      p.train = mlp::forward_batch(res.model, X);
      p.seen = mlp::forward_batch(res.model, seen);
      p.unseen = mlp::forward_batch(res.model, unseen);
      break;
    }
  }
  return p;
}

}  // namespace

SweepRow run_cell(const SweepConfig& config, double rho, std::uint64_t seed, const FamilySpec& family) {
  const auto spec = sphere::make_region_spec(config.dim, rho, config.epsilon);
  const auto train = sphere::make_dataset(spec, config.n_train, derive_seed(config.root_seed, {seed, rho_tag(rho), 1}));
  const auto fresh = sphere::make_dataset(spec, config.n_unseen, derive_seed(config.root_seed, {seed, rho_tag(rho), 2}));
  const MatrixXd X = train.inputs();
  const VectorXd Y = train.labels();
  const MatrixXd seen = X.topRows(static_cast<Eigen::Index>(config.n_seen));
  const MatrixXd unseen = fresh.inputs();

  const auto p = fit_and_predict(family, X, Y, seen, unseen, derive_seed(config.root_seed, {seed, rho_tag(rho), 3}));

  const auto s_seen = confidence_scores(p.seen);
  const auto s_unseen = confidence_scores(p.unseen);
  std::vector<double> sc(s_seen);
  sc.insert(sc.end(), s_unseen.begin(), s_unseen.end());
  std::vector<char> lab(s_seen.size(), 0);
  lab.resize(sc.size(), 1);

  SweepRow r;
  r.rho = rho;
  r.seed = seed;
  r.method = family.name;
  r.auroc = auroc(sc, lab);
  r.tpr_at_fpr05 = tpr_at_fpr(sc, lab, 0.05);
  r.n_pos = s_unseen.size();
  r.n_neg = s_seen.size();

  std::vector<char> core(fresh.size()), noisy(fresh.size()), all_seen(s_seen.size(), 1);
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    const auto reg = fresh.points[i].region;
    core[i] = reg == sphere::Region::CPlus || reg == sphere::Region::CMinus;
    noisy[i] = reg == sphere::Region::Noisy;
  }
  r.auroc_core = sub_auroc(s_seen, s_unseen, core);
  r.auroc_noisy = sub_auroc(s_seen, s_unseen, noisy);
  r.mean_abs_seen = *mean_abs(s_seen, all_seen);
  r.mean_abs_unseen_core = mean_abs(s_unseen, core);
  r.mean_abs_unseen_noisy = mean_abs(s_unseen, noisy);
  r.train_residual_max = (p.train - Y).cwiseAbs().maxCoeff();
  return r;
}

SweepResult sweep_rho(const SweepConfig& config) {
  struct Cell {
    double rho;
    std::uint64_t seed;
    const FamilySpec* family;
  };
  std::vector<Cell> cells;
  for (double rho : config.rhos)
    for (auto seed : config.seeds)
      for (const auto& f : config.families) cells.push_back({rho, seed, &f});
  SweepResult out;
  out.rows.resize(cells.size());
  parallel_for(cells.size(), config.jobs, [&](std::size_t i) {
    out.rows[i] = run_cell(config, cells[i].rho, cells[i].seed, *cells[i].family);
  });
  return out;
}

std::string rows_to_csv(const std::vector<SweepRow>& rows) {
  std::string s = io::csv_row({"rho", "seed", "method", "auroc", "tpr_at_fpr05", "n_pos", "n_neg"});
  for (const auto& r : rows)
    s += io::csv_row({io::format_double(r.rho), std::to_string(r.seed), r.method, io::format_double(r.auroc),
                      io::format_double(r.tpr_at_fpr05), std::to_string(r.n_pos), std::to_string(r.n_neg)});
  return s;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw InvalidArgument("spearman needs two equal-length samples of size >= 2");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = mid;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

json summarize(const SweepResult& result, const SweepConfig& config) {
  auto stats = [](const std::vector<double>& v) -> json {
    if (v.empty()) return {{"mean", nullptr}, {"stderr", nullptr}, {"n", 0}};
    const double n = static_cast<double>(v.size());
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    const double se = v.size() > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0;
    return {{"mean", m}, {"stderr", se}, {"n", v.size()}};
  };
  json methods = json::array();
  for (const auto& f : config.families) {
    json per_rho = json::array();
    std::vector<double> rho_axis, auroc_means;
    for (double rho : config.rhos) {
      std::vector<double> au, tpr, core, noisy, seen, ucore, unoisy, resid;
      for (const auto& r : result.rows) {
        if (r.method != f.name || r.rho != rho) continue;
        au.push_back(r.auroc);
        tpr.push_back(r.tpr_at_fpr05);
        if (r.auroc_core) core.push_back(*r.auroc_core);
        if (r.auroc_noisy) noisy.push_back(*r.auroc_noisy);
        seen.push_back(r.mean_abs_seen);
        if (r.mean_abs_unseen_core) ucore.push_back(*r.mean_abs_unseen_core);
        if (r.mean_abs_unseen_noisy) unoisy.push_back(*r.mean_abs_unseen_noisy);
        resid.push_back(r.train_residual_max);
      }
      if (au.empty()) continue;
      rho_axis.push_back(rho);
      auroc_means.push_back(stats(au)["mean"].get<double>());
      per_rho.push_back({{"rho", rho},
                         {"auroc", stats(au)},
                         {"tpr_at_fpr05", stats(tpr)},
                         {"auroc_core", stats(core)},
                         {"auroc_noisy", stats(noisy)},
                         {"mean_abs_seen", stats(seen)},
                         {"mean_abs_unseen_core", stats(ucore)},
                         {"mean_abs_unseen_noisy", stats(unoisy)},
                         {"train_residual_max", stats(resid)}});
    }
    json m = {{"method", f.name}, {"family", to_string(f.family)}, {"per_rho", per_rho}};
    if (auroc_means.size() >= 2) {
      m["spearman_auroc_rho"] = spearman(rho_axis, auroc_means);
      m["auroc_gap_first_last"] = auroc_means.front() - auroc_means.back();
    } else {
      m["spearman_auroc_rho"] = nullptr;
      m["auroc_gap_first_last"] = nullptr;
    }
    methods.push_back(m);
  }
  return {{"kind", "sweep_summary"}, {"version", 1}, {"methods", methods}};
}

}  // namespace hallab::detect
