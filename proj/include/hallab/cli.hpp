#pragma once

// Subcommand drivers behind the hallab tool. Each run_* resolves its section
// of the config document, writes outputs atomically into the run directory
// together with the resolved config, then re-reads and validates them.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hallab/bios.hpp"
#include "hallab/trace.hpp"

namespace hallab::cli {

inline constexpr std::string_view kConfigSchema = "hallab.config/1";

struct GlobalOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::filesystem::path> out;
};

struct RunContext {
  nlohmann::json section = nlohmann::json::object();  // the subcommand's part of the config file
  std::uint64_t seed = 0;
  bool seed_from_flag = false;
  bool seed_given = false;  // flag or file
  int jobs = 1;
  std::filesystem::path out = "hallab-out";
  std::filesystem::path base_dir = ".";  // relative input paths resolve against the config file's directory
};

// Config file (optional) plus flag overrides; HALLAB_OUT in the environment
// beats --out. Unknown top-level keys are rejected.
RunContext make_context(const std::string& subcommand, const GlobalOptions& options);

struct RunOutcome {
  std::filesystem::path out_dir;
  std::vector<std::string> files;     // written, relative to out_dir
  std::vector<std::string> failures;  // validation messages
  bool ok() const { return failures.empty(); }
};

struct BiosgenConfig {
  bios::UniverseConfig universe;  // corr.map_seed defaults to one derived from the seed
  bool map_seed_given = false;
  std::size_t pretrain_per_person = 50;
  std::size_t sft_per_person = 30;
  double style_rho = 0.0;
  bios::Attribute style_attribute = bios::Attribute::Employer;
  std::size_t style_template = 0;
  std::size_t n_refusal = 5000;  // unknown people in the refusal fine-tuning set
  std::size_t refusal_per_person = 30;
  std::size_t eval_per_person = 6;  // known (pretrain, not SFT) and unknown evaluation QA
  std::size_t n_eval_unknown = 5000;
  std::size_t n_halluc_pairs = 2000;
  std::optional<std::filesystem::path> data_dir;  // vocabularies and templates; embedded when absent
};

BiosgenConfig biosgen_config_from_json(const nlohmann::json& section);
nlohmann::json to_json(const BiosgenConfig& c);

struct BiosgenCounts {
  std::size_t people = 0, pretrain_lines = 0, sft_pairs = 0, refusal_pairs = 0;
  std::size_t eval_known_pairs = 0, eval_unknown_pairs = 0, halluc_items = 0;
};

// Streams every dataset to the given sinks (nullptr sinks are skipped);
// pretraining text is rendered in parallel blocks and emitted in id order.
BiosgenCounts generate_bios(const BiosgenConfig& c, std::uint64_t seed, int jobs,
                            std::ostream* profiles, std::ostream* pretrain, std::ostream* sft, std::ostream* refusal,
                            std::ostream* eval_known, std::ostream* eval_unknown, std::ostream* halluc);

RunOutcome run_sweep(const RunContext& ctx);
RunOutcome run_biosgen(const RunContext& ctx);
RunOutcome run_trace_eval(const RunContext& ctx);
RunOutcome run_cooccur(const RunContext& ctx);
RunOutcome run_report(const RunContext& ctx);

RunOutcome run(const std::string& subcommand, const GlobalOptions& options);

// Output checks used by the drivers: JSONL lines are objects holding
// `fields` (and exactly `expected_lines` of them when given); CSV rows match
// the header width; JSON documents carry a "schema" tag.
std::optional<std::string> validate_jsonl(const std::filesystem::path& p, const std::vector<std::string>& fields,
                                          std::optional<std::size_t> expected_lines = {});
std::optional<std::string> validate_csv(const std::filesystem::path& p, const std::vector<std::string>& header,
                                        std::optional<std::size_t> expected_rows = {});
std::optional<std::string> validate_json(const std::filesystem::path& p);

}  // namespace hallab::cli
