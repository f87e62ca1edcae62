#include "hallab/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <unordered_set>

#include "hallab/cooccur.hpp"
#include "hallab/error.hpp"
#include "hallab/io.hpp"
#include "hallab/parallel.hpp"
#include "hallab/rng.hpp"
#include "hallab/sweep.hpp"

namespace hallab::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const std::set<std::string> kSubcommands = {"sweep", "biosgen", "trace-eval", "cooccur", "report"};

std::string section_key(std::string sub) {
  std::replace(sub.begin(), sub.end(), '-', '_');
  return sub;
}

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

template <typename T>
void maybe(const json& j, const std::string& key, const std::string& path, T& out) {
  if (j.contains(key)) out = field<T>(j, key, path);
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& path) {
  if (!j.is_object()) field_error(path, "expected an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) field_error(path + "." + k, "unknown field");
}

fs::path resolve(const RunContext& ctx, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : ctx.base_dir / path;
}

json with_schema(json body, const std::string& schema) {
  json out = {{"schema", schema}};
  for (auto& [k, v] : body.items()) out[k] = v;
  return out;
}

json resolved_config(const std::string& sub, std::uint64_t seed, json section) {
  return {{"schema", kConfigSchema}, {"subcommand", sub}, {"seed", seed}, {section_key(sub), std::move(section)}};
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// Temp file renamed into place on commit, removed otherwise.
class AtomicFile {
 public:
  explicit AtomicFile(fs::path path) : path_(std::move(path)), tmp_(path_) {
    tmp_ += ".tmp";
    os_.open(tmp_, std::ios::binary | std::ios::trunc);
    if (!os_) throw Error("cannot open " + tmp_.string() + " for writing");
  }
  AtomicFile(const AtomicFile&) = delete;
  AtomicFile& operator=(const AtomicFile&) = delete;
  ~AtomicFile() {
    if (!committed_) {
      os_.close();
      std::error_code ec;
      fs::remove(tmp_, ec);
    }
  }
  std::ostream& stream() { return os_; }
  void commit() {
    os_.flush();
    if (!os_) throw Error("failed writing " + tmp_.string());
    os_.close();
    fs::rename(tmp_, path_);
    committed_ = true;
  }

 private:
  fs::path path_, tmp_;
  std::ofstream os_;
  bool committed_ = false;
};

void check(RunOutcome& o, const std::string& name, std::optional<std::string> err) {
  if (err) o.failures.push_back(name + ": " + *err);
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

RunContext make_context(const std::string& subcommand, const GlobalOptions& options) {
  if (!kSubcommands.count(subcommand)) throw InvalidArgument("unknown subcommand '" + subcommand + "'");
  RunContext ctx;
  json doc = json::object();
  if (options.config) {
    const std::string text = io::read_file(*options.config);
    try {
      doc = json::parse(text);
    } catch (const json::exception& e) {
      throw FormatError("config " + options.config->string() + ": " + e.what());
    }
    check_keys(doc, {"seed", "jobs", "out", "sweep", "biosgen", "trace_eval", "cooccur", "report"}, "config");
    ctx.base_dir = options.config->has_parent_path() ? options.config->parent_path() : fs::path(".");
  }
  const std::string key = section_key(subcommand);
  if (doc.contains(key)) {
    ctx.section = doc.at(key);
    if (!ctx.section.is_object()) field_error(key, "expected an object");
  }
  if (options.seed) {
    ctx.seed = *options.seed;
    ctx.seed_from_flag = ctx.seed_given = true;
  } else if (doc.contains("seed")) {
    ctx.seed = field<std::uint64_t>(doc, "seed", "config");
    ctx.seed_given = true;
  }
  if (options.jobs)
    ctx.jobs = *options.jobs;
  else if (doc.contains("jobs"))
    ctx.jobs = field<int>(doc, "jobs", "config");
  if (ctx.jobs < 0) field_error("jobs", "must be >= 0 (0 uses every hardware thread)");

  ctx.out = fs::path("hallab-out") / subcommand;
  if (doc.contains("out")) ctx.out = ctx.base_dir / field<std::string>(doc, "out", "config");
  if (options.out) ctx.out = *options.out;
  if (const char* env = std::getenv("HALLAB_OUT"); env && *env) ctx.out = env;
  return ctx;
}

std::optional<std::string> validate_jsonl(const fs::path& p, const std::vector<std::string>& fields,
                                          std::optional<std::size_t> expected_lines) {
  std::ifstream is(p, std::ios::binary);
  if (!is) return "missing";
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      return "line " + std::to_string(n) + " is not JSON: " + e.what();
    }
    if (!j.is_object()) return "line " + std::to_string(n) + " is not an object";
    for (const auto& f : fields)
      if (!j.contains(f)) return "line " + std::to_string(n) + " lacks field '" + f + "'";
  }
  if (expected_lines && n != *expected_lines)
    return "expected " + std::to_string(*expected_lines) + " lines, found " + std::to_string(n);
  return std::nullopt;
}

std::optional<std::string> validate_csv(const fs::path& p, const std::vector<std::string>& header,
                                        std::optional<std::size_t> expected_rows) {
  if (!fs::exists(p)) return "missing";
  const auto lines = split_lines(io::read_file(p));
  if (lines.empty()) return "empty file";
  if (io::parse_csv_row(lines[0]) != header) return "unexpected header";
  std::size_t rows = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (io::parse_csv_row(lines[i]).size() != header.size())
      return "row " + std::to_string(i) + " has the wrong number of fields";
    ++rows;
  }
  if (expected_rows && rows != *expected_rows)
    return "expected " + std::to_string(*expected_rows) + " rows, found " + std::to_string(rows);
  return std::nullopt;
}

std::optional<std::string> validate_json(const fs::path& p) {
  if (!fs::exists(p)) return "missing";
  try {
    const json j = json::parse(io::read_file(p));
    if (!j.is_object() || !j.contains("schema") || !j.at("schema").is_string()) return "no schema tag";
  } catch (const json::exception& e) {
    return std::string("not JSON: ") + e.what();
  }
  return std::nullopt;
}

// ---------------------------------------------------------------- sweep

RunOutcome run_sweep(const RunContext& ctx) {
  auto cfg = detect::sweep_config_from_json(ctx.section);
  if (ctx.seed_from_flag || (ctx.seed_given && !ctx.section.contains("root_seed"))) cfg.root_seed = ctx.seed;
  cfg.jobs = ctx.jobs;
  const auto result = detect::sweep_rho(cfg);

  RunOutcome o{ctx.out, {}, {}};
  io::write_file_atomic(ctx.out / "results.csv", detect::rows_to_csv(result.rows));
  io::write_file_atomic(ctx.out / "summary.json", dump(with_schema(detect::summarize(result, cfg), "hallab.sweep_summary/1")));
  io::write_file_atomic(ctx.out / "config.json", dump(resolved_config("sweep", cfg.root_seed, detect::to_json(cfg))));
  o.files = {"results.csv", "summary.json", "config.json"};

  check(o, "results.csv",
        validate_csv(ctx.out / "results.csv", {"rho", "seed", "method", "auroc", "tpr_at_fpr05", "n_pos", "n_neg"},
                     cfg.rhos.size() * cfg.seeds.size() * cfg.families.size()));
  check(o, "summary.json", validate_json(ctx.out / "summary.json"));
  check(o, "config.json", validate_json(ctx.out / "config.json"));
  return o;
}

// ---------------------------------------------------------------- biosgen

BiosgenConfig biosgen_config_from_json(const json& j) {
  const std::string path = "biosgen";
  check_keys(j,
             {"n_people", "n_pretrain", "n_sft", "rho", "correlated", "map_seed", "pretrain_per_person",
              "sft_per_person", "style_rho", "style_attribute", "style_template", "n_refusal", "refusal_per_person",
              "eval_per_person", "n_eval_unknown", "n_halluc_pairs", "data_dir"},
             path);
  BiosgenConfig c;
  maybe(j, "n_people", path, c.universe.n_people);
  maybe(j, "n_pretrain", path, c.universe.n_pretrain);
  maybe(j, "n_sft", path, c.universe.n_sft);
  maybe(j, "rho", path, c.universe.corr.rho);
  if (j.contains("correlated")) {
    c.universe.corr.correlated.clear();
    for (const auto& name : field<std::vector<std::string>>(j, "correlated", path)) {
      try {
        c.universe.corr.correlated.push_back(bios::attribute_from_string(name));
      } catch (const InvalidArgument& e) {
        field_error(path + ".correlated", e.what());
      }
    }
  }
  if (j.contains("map_seed")) {
    c.universe.corr.map_seed = field<std::uint64_t>(j, "map_seed", path);
    c.map_seed_given = true;
  }
  maybe(j, "pretrain_per_person", path, c.pretrain_per_person);
  maybe(j, "sft_per_person", path, c.sft_per_person);
  maybe(j, "style_rho", path, c.style_rho);
  if (j.contains("style_attribute")) {
    try {
      c.style_attribute = bios::attribute_from_string(field<std::string>(j, "style_attribute", path));
    } catch (const InvalidArgument& e) {
      field_error(path + ".style_attribute", e.what());
    }
  }
  maybe(j, "style_template", path, c.style_template);
  maybe(j, "n_refusal", path, c.n_refusal);
  maybe(j, "refusal_per_person", path, c.refusal_per_person);
  maybe(j, "eval_per_person", path, c.eval_per_person);
  maybe(j, "n_eval_unknown", path, c.n_eval_unknown);
  maybe(j, "n_halluc_pairs", path, c.n_halluc_pairs);
  if (j.contains("data_dir")) c.data_dir = field<std::string>(j, "data_dir", path);

  const auto& u = c.universe;
  if (u.n_people < 1) field_error(path + ".n_people", "must be >= 1");
  if (u.n_pretrain > u.n_people) field_error(path + ".n_pretrain", "must be <= n_people");
  if (u.n_sft > u.n_pretrain) field_error(path + ".n_sft", "must be <= n_pretrain");
  if (!(u.corr.rho >= 0 && u.corr.rho <= 1)) field_error(path + ".rho", "must lie in [0, 1]");
  if (!(c.style_rho >= 0 && c.style_rho <= 1)) field_error(path + ".style_rho", "must lie in [0, 1]");
  if (c.n_halluc_pairs > u.n_pretrain) field_error(path + ".n_halluc_pairs", "must be <= n_pretrain");
  return c;
}

json to_json(const BiosgenConfig& c) {
  json corr = json::array();
  for (auto a : c.universe.corr.correlated) corr.push_back(std::string(bios::to_string(a)));
  json j = {{"n_people", c.universe.n_people},
            {"n_pretrain", c.universe.n_pretrain},
            {"n_sft", c.universe.n_sft},
            {"rho", c.universe.corr.rho},
            {"correlated", corr},
            {"map_seed", c.universe.corr.map_seed},
            {"pretrain_per_person", c.pretrain_per_person},
            {"sft_per_person", c.sft_per_person},
            {"style_rho", c.style_rho},
            {"style_attribute", std::string(bios::to_string(c.style_attribute))},
            {"style_template", c.style_template},
            {"n_refusal", c.n_refusal},
            {"refusal_per_person", c.refusal_per_person},
            {"eval_per_person", c.eval_per_person},
            {"n_eval_unknown", c.n_eval_unknown},
            {"n_halluc_pairs", c.n_halluc_pairs}};
  if (c.data_dir) j["data_dir"] = c.data_dir->string();
  return j;
}

namespace {

enum : std::uint64_t {
  kSeedUniverse = 1,
  kSeedPretrain,
  kSeedSft,
  kSeedRefusal,
  kSeedEvalKnown,
  kSeedEvalUnknown,
  kSeedHalluc,
  kSeedMap
};

BiosgenConfig resolve_map_seed(BiosgenConfig c, std::uint64_t seed) {
  if (!c.map_seed_given) {
    c.universe.corr.map_seed = derive_seed(seed, {kSeedMap});
    c.map_seed_given = true;
  }
  return c;
}

}  // namespace

BiosgenCounts generate_bios(const BiosgenConfig& config, std::uint64_t seed, int jobs, std::ostream* profiles_out,
                            std::ostream* pretrain_out, std::ostream* sft_out, std::ostream* refusal_out,
                            std::ostream* eval_known_out, std::ostream* eval_unknown_out, std::ostream* halluc_out) {
  const BiosgenConfig c = resolve_map_seed(config, seed);
  const bios::Pools pools = c.data_dir ? bios::load_pools(*c.data_dir) : bios::default_pools();
  bios::TemplateSet templates = c.data_dir ? bios::load_templates(*c.data_dir) : bios::default_templates();
  templates.style_rho = c.style_rho;
  templates.style_attribute = c.style_attribute;
  templates.style_template = c.style_template;

  bios::UniverseConfig ucfg = c.universe;
  ucfg.seed = derive_seed(seed, {kSeedUniverse});
  const auto universe = bios::generate_universe(ucfg, pools);

  BiosgenCounts counts;
  counts.people = universe.size();
  if (profiles_out)
    for (const auto& p : universe) *profiles_out << bios::to_json(p).dump() << '\n';

  // pretraining corpus: blocks of people rendered in parallel, written in order
  {
    std::vector<bios::Profile> pre;
    for (const auto& p : universe)
      if (p.in_pretraining()) pre.push_back(p);
    const std::uint64_t pseed = derive_seed(seed, {kSeedPretrain});
    constexpr std::size_t kBlock = 256;
    const std::size_t n_blocks = (pre.size() + kBlock - 1) / kBlock;
    const std::size_t batch = 64;
    for (std::size_t b0 = 0; b0 < n_blocks; b0 += batch) {
      const std::size_t nb = std::min(batch, n_blocks - b0);
      std::vector<std::string> text(nb);
      std::vector<std::size_t> lines(nb, 0);
      parallel_for(nb, jobs, [&](std::size_t k) {
        const std::size_t lo = (b0 + k) * kBlock, hi = std::min(pre.size(), lo + kBlock);
        std::vector<bios::Profile> block(pre.begin() + std::ptrdiff_t(lo), pre.begin() + std::ptrdiff_t(hi));
        bios::render_pretraining(block, templates, c.pretrain_per_person, pseed, [&](const bios::PretrainRecord& r) {
          if (pretrain_out) text[k] += bios::to_json(r).dump() + "\n";
          ++lines[k];
        });
      });
      for (std::size_t k = 0; k < nb; ++k) {
        if (pretrain_out) *pretrain_out << text[k];
        counts.pretrain_lines += lines[k];
      }
    }
  }

  auto qa_writer = [](std::ostream* os, std::size_t& n) {
    return [os, &n](const bios::QaRecord& r) {
      if (os) *os << bios::to_json(r).dump() << '\n';
      ++n;
    };
  };

  std::vector<bios::Profile> sft, known_eval, known;
  for (const auto& p : universe) {
    if (p.split == bios::Split::Sft) sft.push_back(p);
    if (p.split == bios::Split::Pretrain) known_eval.push_back(p);
    if (p.in_pretraining()) known.push_back(p);
  }
  bios::render_qa(sft, templates, c.sft_per_person, derive_seed(seed, {kSeedSft}), qa_writer(sft_out, counts.sft_pairs));
  bios::render_qa(known_eval, templates, c.eval_per_person, derive_seed(seed, {kSeedEvalKnown}),
                  qa_writer(eval_known_out, counts.eval_known_pairs));

  // perturbed-name test set first so its invented names stay out of every
  // other output
  const auto halluc = bios::make_halluc_testset(universe, pools.names, templates, c.n_halluc_pairs,
                                                derive_seed(seed, {kSeedHalluc}));
  counts.halluc_items = halluc.size();
  if (halluc_out)
    for (const auto& r : halluc) *halluc_out << bios::to_json(r).dump() << '\n';

  std::unordered_set<std::string> taken;
  for (const auto& p : universe) taken.insert(p.full_name());
  for (const auto& r : halluc)
    if (r.hallucinated) taken.insert(r.full_name);

  const auto refusal = bios::render_refusal(known, templates, c.n_refusal, c.refusal_per_person,
                                            derive_seed(seed, {kSeedRefusal}), universe.size(), taken);
  for (const auto& r : refusal.records) qa_writer(refusal_out, counts.refusal_pairs)(r);
  for (const auto& u : refusal.unknown) taken.insert(u.full_name());

  const auto unknown = bios::render_refusal(known, templates, c.n_eval_unknown, c.eval_per_person,
                                            derive_seed(seed, {kSeedEvalUnknown}), universe.size() + c.n_refusal,
                                            taken);
  for (const auto& r : unknown.records) qa_writer(eval_unknown_out, counts.eval_unknown_pairs)(r);
  return counts;
}

RunOutcome run_biosgen(const RunContext& ctx) {
  BiosgenConfig c = biosgen_config_from_json(ctx.section);
  if (c.data_dir && c.data_dir->is_relative()) c.data_dir = ctx.base_dir / *c.data_dir;
  const BiosgenConfig resolved = resolve_map_seed(c, ctx.seed);
  json resolved_json = to_json(resolved);
  if (ctx.section.contains("data_dir")) resolved_json["data_dir"] = ctx.section.at("data_dir");

  fs::create_directories(ctx.out);
  const std::vector<std::string> names = {"profiles.jsonl",   "pretrain.jsonl",     "sft.jsonl",
                                          "refusal.jsonl",    "eval_known.jsonl",   "eval_unknown.jsonl",
                                          "halluc_test.jsonl"};
  std::vector<std::unique_ptr<AtomicFile>> files;
  for (const auto& n : names) files.push_back(std::make_unique<AtomicFile>(ctx.out / n));
  const auto counts = generate_bios(resolved, ctx.seed, ctx.jobs, &files[0]->stream(), &files[1]->stream(),
                                    &files[2]->stream(), &files[3]->stream(), &files[4]->stream(),
                                    &files[5]->stream(), &files[6]->stream());
  for (auto& f : files) f->commit();

  const std::vector<std::size_t> lines = {counts.people,           counts.pretrain_lines,     counts.sft_pairs,
                                          counts.refusal_pairs,    counts.eval_known_pairs,   counts.eval_unknown_pairs,
                                          counts.halluc_items};
  json file_counts = json::object();
  for (std::size_t i = 0; i < names.size(); ++i) file_counts[names[i]] = lines[i];
  json seeds = {{"universe", derive_seed(ctx.seed, {kSeedUniverse})}, {"pretrain", derive_seed(ctx.seed, {kSeedPretrain})},
                {"sft", derive_seed(ctx.seed, {kSeedSft})},           {"refusal", derive_seed(ctx.seed, {kSeedRefusal})},
                {"eval_known", derive_seed(ctx.seed, {kSeedEvalKnown})},
                {"eval_unknown", derive_seed(ctx.seed, {kSeedEvalUnknown})},
                {"halluc_test", derive_seed(ctx.seed, {kSeedHalluc})}};
  const json manifest = {{"schema", "hallab.bios_manifest/1"},
                         {"seed", ctx.seed},
                         {"config", resolved_json},
                         {"derived_seeds", seeds},
                         {"counts",
                          {{"people", counts.people},
                           {"pretrain_people", resolved.universe.n_pretrain},
                           {"sft_people", resolved.universe.n_sft},
                           {"pretrain_lines", counts.pretrain_lines},
                           {"sft_pairs", counts.sft_pairs},
                           {"refusal_pairs", counts.refusal_pairs},
                           {"eval_known_pairs", counts.eval_known_pairs},
                           {"eval_unknown_pairs", counts.eval_unknown_pairs},
                           {"halluc_pairs", counts.halluc_items / 2}}},
                         {"files", file_counts}};
  io::write_file_atomic(ctx.out / "manifest.json", dump(manifest));
  io::write_file_atomic(ctx.out / "config.json", dump(resolved_config("biosgen", ctx.seed, resolved_json)));

  RunOutcome o{ctx.out, names, {}};
  o.files.push_back("manifest.json");
  o.files.push_back("config.json");
  const std::vector<std::string> qa = {"person_id", "attribute", "question", "answer", "is_refusal"};
  check(o, names[0], validate_jsonl(ctx.out / names[0], {"person_id", "first", "middle", "surname", "attributes", "split"}, lines[0]));
  check(o, names[1], validate_jsonl(ctx.out / names[1], {"person_id", "text"}, lines[1]));
  for (std::size_t i = 2; i <= 5; ++i) check(o, names[i], validate_jsonl(ctx.out / names[i], qa, lines[i]));
  check(o, names[6], validate_jsonl(ctx.out / names[6], {"pair_id", "kind", "question", "gold"}, lines[6]));
  check(o, "manifest.json", validate_json(ctx.out / "manifest.json"));
  check(o, "config.json", validate_json(ctx.out / "config.json"));
  return o;
}

// ---------------------------------------------------------------- trace-eval

RunOutcome run_trace_eval(const RunContext& ctx) {
  const std::string path = "trace_eval";
  check_keys(ctx.section, {"traces", "test_fraction", "window", "probe"}, path);
  if (!ctx.section.contains("traces")) field_error(path + ".traces", "required");
  const std::string traces = field<std::string>(ctx.section, "traces", path);
  trace::EvalConfig ec;
  ec.seed = ctx.seed;
  ec.probe.seed = ctx.seed;
  maybe(ctx.section, "test_fraction", path, ec.test_fraction);
  maybe(ctx.section, "window", path, ec.window);
  if (ctx.section.contains("probe")) {
    const auto& p = ctx.section.at("probe");
    check_keys(p, {"epochs", "lr", "l2"}, path + ".probe");
    maybe(p, "epochs", path + ".probe", ec.probe.epochs);
    maybe(p, "lr", path + ".probe", ec.probe.lr);
    maybe(p, "l2", path + ".probe", ec.probe.l2);
  }
  if (!(ec.test_fraction > 0 && ec.test_fraction < 1)) field_error(path + ".test_fraction", "must lie in (0, 1)");
  if (ec.window < 1) field_error(path + ".window", "must be >= 1");

  std::ifstream is(resolve(ctx, traces), std::ios::binary);
  if (!is) throw InvalidArgument("cannot open trace file " + resolve(ctx, traces).string());
  const auto records = trace::read_traces(is);
  if (records.empty()) throw FormatError("trace file holds no records");
  const auto res = trace::evaluate_detectors(records, ec);

  const json section = {{"traces", traces},
                        {"test_fraction", ec.test_fraction},
                        {"window", ec.window},
                        {"probe", {{"epochs", ec.probe.epochs}, {"lr", ec.probe.lr}, {"l2", ec.probe.l2}}}};
  io::write_file_atomic(ctx.out / "detectors.csv", trace::reports_to_csv(res.reports));
  json report = with_schema(trace::to_json(res), "hallab.detector_report/1");
  report["n_records"] = records.size();
  io::write_file_atomic(ctx.out / "detectors.json", dump(report));
  io::write_file_atomic(ctx.out / "config.json", dump(resolved_config("trace-eval", ctx.seed, section)));

  RunOutcome o{ctx.out, {"detectors.csv", "detectors.json", "config.json"}, {}};
  check(o, "detectors.csv",
        validate_csv(ctx.out / "detectors.csv", {"method", "auroc", "tpr_at_fpr05", "accuracy"}, res.reports.size()));
  check(o, "detectors.json", validate_json(ctx.out / "detectors.json"));
  check(o, "config.json", validate_json(ctx.out / "config.json"));
  return o;
}

// ---------------------------------------------------------------- cooccur

RunOutcome run_cooccur(const RunContext& ctx) {
  const std::string path = "cooccur";
  check_keys(ctx.section, {"index", "samples", "buckets"}, path);
  if (!ctx.section.contains("index")) field_error(path + ".index", "required");
  if (!ctx.section.contains("samples")) field_error(path + ".samples", "required");
  const std::string index_path = field<std::string>(ctx.section, "index", path);
  const std::string samples_path = field<std::string>(ctx.section, "samples", path);
  int k = 5;
  maybe(ctx.section, "buckets", path, k);
  if (k < 1) field_error(path + ".buckets", "must be >= 1");

  RunOutcome o{ctx.out, {}, {}};
  cooccur::ArticleIndex index;
  json ingest = {{"source", "binary"}};
  {
    const fs::path p = resolve(ctx, index_path);
    std::ifstream is(p, std::ios::binary);
    if (!is) throw InvalidArgument("cannot open index " + p.string());
    char magic[8] = {};
    is.read(magic, 8);
    const bool binary = is.gcount() == 8 && std::string_view(magic, 8) == "HLIDX001";
    is.clear();
    is.seekg(0);
    if (binary) {
      index = cooccur::ArticleIndex::load(is);
    } else {
      auto built = cooccur::build_index(is);
      index = std::move(built.index);
      ingest = {{"source", "tsv"}, {"lines", built.lines}, {"malformed", built.malformed}};
      io::write_file_atomic(ctx.out / "index.hlidx", [&](std::ostream& os) { index.save(os); });
      o.files.push_back("index.hlidx");
    }
    ingest["entities"] = index.num_entities();
  }

  std::vector<cooccur::SampleStats> stats;
  {
    const fs::path p = resolve(ctx, samples_path);
    std::ifstream is(p, std::ios::binary);
    if (!is) throw InvalidArgument("cannot open samples " + p.string());
    std::string line;
    std::size_t n = 0;
    std::unordered_set<std::string> ids;
    while (std::getline(is, line)) {
      ++n;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        auto s = cooccur::sample_from_json(json::parse(line));
        if (!ids.insert(s.id).second) throw FormatError("duplicate sample id '" + s.id + "'");
        stats.push_back(cooccur::analyze_sample(index, s));
      } catch (const json::exception& e) {
        throw FormatError("samples line " + std::to_string(n) + ": " + e.what());
      } catch (const Error& e) {
        throw FormatError("samples line " + std::to_string(n) + ": " + e.what());
      }
    }
  }
  // canonical order so the report does not depend on input order
  std::sort(stats.begin(), stats.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  const auto buckets = cooccur::bucketize(stats, k);
  const auto report = cooccur::bucket_report(buckets);

  std::ostringstream bcsv;
  cooccur::write_bucket_csv(bcsv, report);
  io::write_file_atomic(ctx.out / "buckets.csv", bcsv.str());
  json rj = with_schema(cooccur::to_json(report), "hallab.cooccur_report/1");
  rj["ingest"] = ingest;
  rj["n_samples"] = stats.size();
  io::write_file_atomic(ctx.out / "buckets.json", dump(rj));

  std::string scsv = io::csv_row({"id", "bucket", "jaccard", "consensus", "self_consistency", "self_confidence",
                                  "is_hallucination"});
  std::string pcsv = io::csv_row({"id", "question_entity", "answer_entity", "jaccard"});
  for (std::size_t b = 0; b < buckets.size(); ++b)
    for (const auto& s : buckets[b]) {
      scsv += io::csv_row({s.id, "T" + std::to_string(b + 1), io::format_double(s.jaccard), s.consensus,
                           io::format_double(s.self_consistency), io::format_optional(s.self_confidence),
                           s.is_hallucination ? "1" : "0"});
      for (const auto& p : s.pairs)
        pcsv += io::csv_row({s.id, p.question_entity, p.answer_entity, io::format_double(p.jaccard)});
    }
  io::write_file_atomic(ctx.out / "samples.csv", scsv);
  io::write_file_atomic(ctx.out / "pairs.csv", pcsv);
  const json section = {{"index", index_path}, {"samples", samples_path}, {"buckets", k}};
  io::write_file_atomic(ctx.out / "config.json", dump(resolved_config("cooccur", ctx.seed, section)));

  for (const char* f : {"buckets.csv", "buckets.json", "samples.csv", "pairs.csv", "config.json"}) o.files.push_back(f);
  check(o, "buckets.csv",
        validate_csv(ctx.out / "buckets.csv",
                     {"bucket", "n", "jaccard_min", "jaccard_max", "mean_self_confidence", "mean_self_consistency",
                      "hallucination_rate", "auroc_self_consistency", "auroc_self_confidence"},
                     std::size_t(k)));
  check(o, "samples.csv",
        validate_csv(ctx.out / "samples.csv",
                     {"id", "bucket", "jaccard", "consensus", "self_consistency", "self_confidence", "is_hallucination"},
                     stats.size()));
  check(o, "pairs.csv", validate_csv(ctx.out / "pairs.csv", {"id", "question_entity", "answer_entity", "jaccard"}));
  check(o, "buckets.json", validate_json(ctx.out / "buckets.json"));
  check(o, "config.json", validate_json(ctx.out / "config.json"));
  if (o.files.front() == "index.hlidx") {
    try {
      std::ifstream is(ctx.out / "index.hlidx", std::ios::binary);
      if (!(cooccur::ArticleIndex::load(is) == index)) o.failures.push_back("index.hlidx: reload differs");
    } catch (const Error& e) {
      o.failures.push_back(std::string("index.hlidx: ") + e.what());
    }
  }
  return o;
}

// ---------------------------------------------------------------- report

namespace {

using Row = std::vector<std::string>;

void report_sweep(const fs::path& dir, const std::string& run, std::vector<Row>& rows) {
  const json s = json::parse(io::read_file(dir / "summary.json"));
  for (const auto& m : s.at("methods")) {
    const std::string method = m.at("method");
    auto num = [](const json& v) { return v.is_null() ? std::string() : io::format_double(v.get<double>()); };
    rows.push_back({run, "sweep", method, "spearman_auroc_rho", num(m.at("spearman_auroc_rho"))});
    rows.push_back({run, "sweep", method, "auroc_gap_first_last", num(m.at("auroc_gap_first_last"))});
    for (const auto& r : m.at("per_rho"))
      rows.push_back({run, "sweep", method, "auroc@rho=" + io::format_double(r.at("rho").get<double>()),
                      num(r.at("auroc").at("mean"))});
  }
}

void report_biosgen(const fs::path& dir, const std::string& run, std::vector<Row>& rows) {
  const json m = json::parse(io::read_file(dir / "manifest.json"));
  for (const auto& [k, v] : m.at("counts").items()) rows.push_back({run, "biosgen", "counts", k, v.dump()});
}

void report_trace(const fs::path& dir, const std::string& run, std::vector<Row>& rows) {
  const json d = json::parse(io::read_file(dir / "detectors.json"));
  for (const auto& m : d.at("methods")) {
    const std::string method = m.at("method");
    if (!m.at("available").get<bool>()) {
      rows.push_back({run, "trace-eval", method, "available", "0"});
      continue;
    }
    rows.push_back({run, "trace-eval", method, "auroc", io::format_double(m.at("auroc").get<double>())});
    rows.push_back({run, "trace-eval", method, "tpr_at_fpr05", io::format_double(m.at("tpr_at_fpr05").get<double>())});
  }
}

void report_cooccur(const fs::path& dir, const std::string& run, std::vector<Row>& rows) {
  const json b = json::parse(io::read_file(dir / "buckets.json"));
  for (const auto& bk : b.at("buckets"))
    for (const char* key : {"mean_self_confidence", "mean_self_consistency", "hallucination_rate"}) {
      const auto& v = bk.at(key);
      rows.push_back({run, "cooccur", bk.at("bucket").get<std::string>(), key,
                      v.is_null() ? std::string() : io::format_double(v.get<double>())});
    }
  rows.push_back({run, "cooccur", "all", "confidence_rises", b.at("confidence_rises").get<bool>() ? "1" : "0"});
}

}  // namespace

RunOutcome run_report(const RunContext& ctx) {
  const std::string path = "report";
  check_keys(ctx.section, {"runs"}, path);
  if (!ctx.section.contains("runs")) field_error(path + ".runs", "required");
  const auto runs = field<std::vector<std::string>>(ctx.section, "runs", path);

  std::vector<Row> rows;
  for (const auto& run : runs) {
    const fs::path dir = resolve(ctx, run);
    json cfg;
    try {
      cfg = json::parse(io::read_file(dir / "config.json"));
    } catch (const std::exception& e) {
      throw FormatError("run " + run + ": unreadable config.json (" + e.what() + ")");
    }
    if (cfg.value("schema", "") != kConfigSchema) throw FormatError("run " + run + ": config schema mismatch");
    const std::string sub = cfg.at("subcommand");
    try {
      if (sub == "sweep")
        report_sweep(dir, run, rows);
      else if (sub == "biosgen")
        report_biosgen(dir, run, rows);
      else if (sub == "trace-eval")
        report_trace(dir, run, rows);
      else if (sub == "cooccur")
        report_cooccur(dir, run, rows);
      else
        throw FormatError("cannot summarize a '" + sub + "' run");
    } catch (const json::exception& e) {
      throw FormatError("run " + run + ": " + e.what());
    }
  }

  const Row header = {"run", "subcommand", "item", "metric", "value"};
  std::string csv = io::csv_row(header);
  json entries = json::array();
  for (const auto& r : rows) {
    csv += io::csv_row(r);
    entries.push_back({{"run", r[0]}, {"subcommand", r[1]}, {"item", r[2]}, {"metric", r[3]}, {"value", r[4]}});
  }
  io::write_file_atomic(ctx.out / "report.csv", csv);
  io::write_file_atomic(ctx.out / "report.json", dump({{"schema", "hallab.report/1"}, {"entries", entries}}));
  io::write_file_atomic(ctx.out / "config.json", dump(resolved_config("report", ctx.seed, {{"runs", runs}})));

  RunOutcome o{ctx.out, {"report.csv", "report.json", "config.json"}, {}};
  check(o, "report.csv", validate_csv(ctx.out / "report.csv", header, rows.size()));
  check(o, "report.json", validate_json(ctx.out / "report.json"));
  check(o, "config.json", validate_json(ctx.out / "config.json"));
  return o;
}

RunOutcome run(const std::string& subcommand, const GlobalOptions& options) {
  const RunContext ctx = make_context(subcommand, options);
  fs::create_directories(ctx.out);
  if (subcommand == "sweep") return run_sweep(ctx);
  if (subcommand == "biosgen") return run_biosgen(ctx);
  if (subcommand == "trace-eval") return run_trace_eval(ctx);
  if (subcommand == "cooccur") return run_cooccur(ctx);
  return run_report(ctx);
}

}  // namespace hallab::cli
