#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hallab/cli.hpp"
#include "hallab/error.hpp"
#include "hallab/io.hpp"
#include "hallab/trace.hpp"

namespace fs = std::filesystem;
using namespace hallab;
using namespace hallab::cli;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("hallab_cli_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  os << s;
}

fs::path write_config(const fs::path& dir, const json& j) {
  const fs::path p = dir / "config.json";
  write(p, j.dump(2));
  return p;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) out[e.path().filename().string()] = io::read_file(e.path());
  return out;
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string l; std::getline(is, l);) {
    if (!l.empty() && l.back() == '\r') l.pop_back();
    out.push_back(l);
  }
  return out;
}

json tiny_sweep() {
  return {{"dim", 3},
          {"n_train", 200},
          {"n_seen", 40},
          {"n_unseen", 40},
          {"rhos", {0.5}},
          {"seeds", {3}},
          {"families", {{{"family", "ridgeless"}}}}};
}

json small_biosgen() {
  return {{"n_people", 6},     {"n_pretrain", 4},         {"n_sft", 2},           {"pretrain_per_person", 3},
          {"sft_per_person", 4}, {"n_refusal", 3},        {"refusal_per_person", 2}, {"eval_per_person", 6},
          {"n_eval_unknown", 2}, {"n_halluc_pairs", 3}};
}

// Hallucinations have the lower logprobs; no hidden states.
std::string trace_fixture(std::size_t n) {
  std::vector<trace::TraceRecord> recs;
  for (std::size_t i = 0; i < n; ++i) {
    trace::TraceRecord r;
    r.id = "t" + std::to_string(i);
    r.is_hallucination = i % 2;
    const double lp = r.is_hallucination ? -2.0 - 0.01 * double(i) : -0.5 + 0.001 * double(i);
    r.answer_token_logprobs = {lp, lp};
    r.per_position_entropy = std::vector<double>{0.1 * double(i % 7), 0.2};
    recs.push_back(r);
  }
  std::ostringstream os;
  trace::write_traces(os, recs);
  return os.str();
}

// Ten samples whose question/answer entity overlaps are 0.9, 0.8, ..., 0.0.
void cooccur_fixture(const fs::path& dir) {
  std::string tsv, samples;
  for (int i = 0; i < 10; ++i) {
    const std::string q = "q" + std::to_string(i), a = "a" + std::to_string(i);
    const int shared = 9 - i;
    for (int k = 0; k < shared; ++k) {
      tsv += q + "\t" + std::to_string(100 * i + k) + "\n";
      tsv += a + "\t" + std::to_string(100 * i + k) + "\n";
    }
    for (int k = shared; k < 10; ++k) tsv += q + "\t" + std::to_string(100 * i + 50 + k) + "\n";
    for (int k = shared; k < 10; ++k) tsv += a + "\t" + std::to_string(100 * i + 80 + k) + "\n";
    json s = {{"id", "s" + std::to_string(i)},
              {"question_entities", {q}},
              {"answer_entities", {a}},
              {"generations", i < 4 ? json{"x", "x", "x", "x"} : json{"x", "y", "x", "z"}},
              {"confidence", 5 - i / 2},
              {"gold", i % 2 ? "x" : "nope"}};
    samples += s.dump() + "\n";
  }
  write(dir / "pairs.tsv", tsv);
  write(dir / "samples.jsonl", samples);
}

}  // namespace

TEST_CASE("sweep run writes one row per cell and is independent of jobs") {
  TempDir t("sweep");
  const auto cfg = write_config(t.path, {{"seed", 11}, {"sweep", tiny_sweep()}});
  GlobalOptions o;
  o.config = cfg;
  o.out = t.path / "a";
  o.jobs = 1;
  const auto r1 = run("sweep", o);
  CHECK(r1.ok());
  const auto a = snapshot(t.path / "a");
  REQUIRE(a.count("results.csv"));
  CHECK(lines_of(a.at("results.csv")).size() == 2);
  CHECK(json::parse(a.at("summary.json"))["schema"] == "hallab.sweep_summary/1");
  const auto resolved = json::parse(a.at("config.json"));
  CHECK(resolved["schema"] == "hallab.config/1");
  CHECK(resolved["subcommand"] == "sweep");
  o.out = t.path / "b";
  o.jobs = 4;
  CHECK(run("sweep", o).ok());
  CHECK(snapshot(t.path / "b") == a);

  o.seed = 12;  // flag beats the file
  o.out = t.path / "c";
  run("sweep", o);
  CHECK(snapshot(t.path / "c").at("results.csv") != a.at("results.csv"));
}

TEST_CASE("biosgen smoke run") {
  TempDir t("bios");
  GlobalOptions o;
  o.config = write_config(t.path, {{"biosgen", small_biosgen()}});
  o.seed = 5;
  o.out = t.path / "run";
  const auto r = run("biosgen", o);
  CHECK(r.ok());
  for (const char* f : {"profiles.jsonl", "pretrain.jsonl", "sft.jsonl", "refusal.jsonl", "eval_known.jsonl",
                        "eval_unknown.jsonl", "halluc_test.jsonl", "manifest.json", "config.json"})
    CHECK(fs::exists(t.path / "run" / f));
  const auto m = json::parse(io::read_file(t.path / "run" / "manifest.json"));
  CHECK(m["schema"] == "hallab.bios_manifest/1");
  CHECK(lines_of(io::read_file(t.path / "run" / "pretrain.jsonl")).size() == 4 * 3);
  CHECK(lines_of(io::read_file(t.path / "run" / "sft.jsonl")).size() == 2 * 4);
  CHECK(lines_of(io::read_file(t.path / "run" / "halluc_test.jsonl")).size() == 6);
  for (const auto& l : lines_of(io::read_file(t.path / "run" / "refusal.jsonl"))) {
    const auto j = json::parse(l);
    CHECK(j["answer"] == "I don't know.");
    CHECK(j["is_refusal"] == true);
  }
  const auto first = snapshot(t.path / "run");
  o.jobs = 3;
  o.out = t.path / "again";
  run("biosgen", o);
  CHECK(snapshot(t.path / "again") == first);
}

TEST_CASE("default biosgen counts") {
  const BiosgenConfig c;
  const auto n = generate_bios(c, 0, 2, nullptr, nullptr, nullptr, nullptr, nullptr, nullptr, nullptr);
  CHECK(n.people == 20000);
  CHECK(n.pretrain_lines == 500000);
  CHECK(n.sft_pairs == 150000);
  CHECK(n.halluc_items == 4000);
}

TEST_CASE("trace-eval on a separable fixture without hidden states") {
  TempDir t("trace");
  write(t.path / "traces.jsonl", trace_fixture(40));
  GlobalOptions o;
  o.config = write_config(t.path, {{"seed", 2}, {"trace_eval", {{"traces", "traces.jsonl"}}}});
  o.out = t.path / "run";
  const auto r = run("trace-eval", o);
  CHECK(r.ok());
  const auto csv = lines_of(io::read_file(t.path / "run" / "detectors.csv"));
  REQUIRE(csv.size() == 10);
  CHECK(csv[0] == "method,auroc,tpr_at_fpr05,accuracy");
  CHECK(csv[1].starts_with("perplexity,1,1,1"));
  CHECK(csv[6] == "probe_avg_in,,,");
  const auto j = json::parse(io::read_file(t.path / "run" / "detectors.json"));
  CHECK(j["schema"] == "hallab.detector_report/1");

  write(t.path / "bad.jsonl", R"({"version":"trace_v0","id":"x","is_hallucination":false,"answer_token_logprobs":[-1]})"
                              "\n");
  o.config = write_config(t.path, {{"trace_eval", {{"traces", "bad.jsonl"}}}});
  o.out = t.path / "bad";
  CHECK_THROWS_AS(run("trace-eval", o), FormatError);
}

TEST_CASE("cooccur run buckets a ten-sample fixture in pairs") {
  TempDir t("cooc");
  cooccur_fixture(t.path);
  GlobalOptions o;
  o.config = write_config(t.path, {{"cooccur", {{"index", "pairs.tsv"}, {"samples", "samples.jsonl"}}}});
  o.out = t.path / "run";
  CHECK(run("cooccur", o).ok());
  const auto j = json::parse(io::read_file(t.path / "run" / "buckets.json"));
  REQUIRE(j["buckets"].size() == 5);
  for (const auto& b : j["buckets"]) CHECK(b["n"] == 2);
  // T1 holds s0, s1: confidence 5, 5; consistency 1, 1; T5 holds s8, s9
  CHECK(j["buckets"][0]["mean_self_confidence"] == 5.0);
  CHECK(j["buckets"][0]["mean_self_consistency"] == 1.0);
  CHECK(j["buckets"][2]["mean_self_confidence"] == 3.0);
  CHECK(j["buckets"][4]["mean_self_confidence"] == 1.0);
  CHECK(j["buckets"][4]["mean_self_consistency"] == 0.5);
  CHECK(j["confidence_rises"] == true);
  const auto first = snapshot(t.path / "run");
  o.out = t.path / "again";
  run("cooccur", o);
  CHECK(snapshot(t.path / "again") == first);

  // the saved binary index is accepted in place of the pairs file
  o.config = write_config(t.path, {{"cooccur", {{"index", "run/index.hlidx"}, {"samples", "samples.jsonl"}}}});
  o.out = t.path / "from_binary";
  run("cooccur", o);
  CHECK(io::read_file(t.path / "from_binary" / "buckets.csv") == first.at("buckets.csv"));
}

TEST_CASE("report collects earlier runs") {
  TempDir t("report");
  cooccur_fixture(t.path);
  GlobalOptions o;
  o.config = write_config(t.path, {{"sweep", tiny_sweep()},
                                   {"cooccur", {{"index", "pairs.tsv"}, {"samples", "samples.jsonl"}}},
                                   {"report", {{"runs", {"sw", "co"}}}}});
  o.out = t.path / "sw";
  run("sweep", o);
  o.out = t.path / "co";
  run("cooccur", o);
  o.out = t.path / "rep";
  CHECK(run("report", o).ok());
  const auto rows = lines_of(io::read_file(t.path / "rep" / "report.csv"));
  CHECK(rows[0] == "run,subcommand,item,metric,value");
  bool saw_sweep = false, saw_cooc = false;
  for (const auto& r : rows) {
    saw_sweep |= r.starts_with("sw,sweep,");
    saw_cooc |= r.starts_with("co,cooccur,");
  }
  CHECK(saw_sweep);
  CHECK(saw_cooc);
}

TEST_CASE("config validation and output precedence") {
  TempDir t("cfg");
  GlobalOptions o;
  o.config = write_config(t.path, {{"sweep", {{"rhos", {0.5}}, {"bogus", 1}}}});
  try {
    run("sweep", o);
    FAIL("accepted an unknown key");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("sweep.bogus") != std::string::npos);
  }
  o.config = write_config(t.path, {{"colour", 1}});
  CHECK_THROWS_AS(run("sweep", o), InvalidArgument);
  CHECK_THROWS_AS(run("nope", GlobalOptions{}), InvalidArgument);

  o.config = write_config(t.path, {{"out", "from_file"}, {"sweep", tiny_sweep()}});
  o.out.reset();
  CHECK(make_context("sweep", o).out == t.path / "from_file");
  o.out = t.path / "from_flag";
  CHECK(make_context("sweep", o).out == t.path / "from_flag");
  ::setenv("HALLAB_OUT", (t.path / "from_env").c_str(), 1);
  CHECK(make_context("sweep", o).out == t.path / "from_env");
  ::unsetenv("HALLAB_OUT");
}

TEST_CASE("output validators") {
  TempDir t("val");
  write(t.path / "ok.jsonl", "{\"a\":1,\"b\":2}\n{\"a\":3,\"b\":4}\n");
  CHECK_FALSE(validate_jsonl(t.path / "ok.jsonl", {"a", "b"}, 2).has_value());
  CHECK(validate_jsonl(t.path / "ok.jsonl", {"a", "c"}).has_value());
  CHECK(validate_jsonl(t.path / "ok.jsonl", {"a"}, 3).has_value());
  write(t.path / "bad.jsonl", "{\"a\":1}\nnot json\n");
  CHECK(validate_jsonl(t.path / "bad.jsonl", {"a"}).has_value());
  write(t.path / "ok.csv", "x,y\n1,\"a,b\"\n");
  CHECK_FALSE(validate_csv(t.path / "ok.csv", {"x", "y"}, 1).has_value());
  write(t.path / "ragged.csv", "x,y\n1,2,3\n");
  CHECK(validate_csv(t.path / "ragged.csv", {"x", "y"}).has_value());
  write(t.path / "plain.json", "{\"a\":1}");
  CHECK(validate_json(t.path / "plain.json").has_value());
}

TEST_CASE("tool exit codes") {
  TempDir t("exit");
  const std::string tool = HALLAB_TOOL;
  const auto status = [](const std::string& cmd) {
    const int rc = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  };
  write_config(t.path, {{"sweep", tiny_sweep()}});
  CHECK(status(tool + " sweep --config " + (t.path / "config.json").string() + " --out " +
               (t.path / "run").string()) == 0);
  write_config(t.path, {{"sweep", {{"bogus", 1}}}});
  CHECK(status(tool + " sweep --config " + (t.path / "config.json").string() + " --out " +
               (t.path / "run2").string()) == 2);
  CHECK(status(tool + " sweep --jobs -3") != 0);
  CHECK(status(tool + " nosuch") != 0);
}
