#pragma once

// Synthetic biography universe: people with six attributes, a surname ->
// attribute correlation of strength rho, and the pretraining / QA / refusal /
// perturbed-name test sets rendered from text templates.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace hallab::bios {

enum class Attribute { BirthDate, BirthCity, University, Major, Employer, EmployerCity };

inline constexpr std::array<Attribute, 6> kAttributes = {Attribute::BirthDate,  Attribute::BirthCity,
                                                         Attribute::University, Attribute::Major,
                                                         Attribute::Employer,   Attribute::EmployerCity};

std::string_view to_string(Attribute a);  // "birth_date", "birth_city", ...
Attribute attribute_from_string(std::string_view s);
inline int attribute_number(Attribute a) { return static_cast<int>(a) + 1; }  // 1..6

inline constexpr std::string_view kRefusal = "I don't know.";

struct NamePools {
  std::vector<std::string> first, middle, surname;
};

// Finite vocabularies per attribute. Birth dates are the calendar days of
// [date_first_year, date_last_year] rendered as "April 15, 2081".
struct Schema {
  std::vector<std::string> birth_city, university, major, employer, employer_city;
  int date_first_year = 1950;
  int date_last_year = 2099;

  std::size_t vocab_size(Attribute a) const;
  std::string value(Attribute a, std::size_t index) const;
};

std::string format_date(int days_since_first_jan, int first_year);

struct Pools {
  NamePools names;
  Schema schema;
};

// Vocabularies compiled into the library from data/bios.
Pools default_pools();
// Same files read from a directory (first_names.txt, middle_names.txt,
// surnames.txt, birth_cities.txt, universities.txt, majors.txt,
// employers.txt, employer_cities.txt).
Pools load_pools(const std::filesystem::path& dir);
// Throws if name pools overlap, a list has duplicates or is empty.
void validate(const Pools& pools);

struct TemplateSet {
  std::vector<std::string> pretrain;           // slots: {name} {first} {middle} {surname} + attributes
  std::array<std::vector<std::string>, 6> qa;  // per attribute, slot {name} (plus name parts)
  std::string refusal_answer{kRefusal};
  Attribute style_attribute = Attribute::Employer;
  std::size_t style_template = 0;  // index into qa[style_attribute]
  double style_rho = 0.0;
};

TemplateSet default_templates();
TemplateSet load_templates(const std::filesystem::path& dir);  // pretrain_templates.txt, qa_templates.tsv

struct CorrelationConfig {
  double rho = 0.0;
  std::vector<Attribute> correlated{Attribute::BirthCity};
  std::uint64_t map_seed = 0;
};

// Deterministic surname -> value index for a correlated attribute.
std::size_t surname_map(const CorrelationConfig& corr, const Schema& schema, Attribute a,
                        std::size_t surname_index);

enum class Split { Pretrain, Sft, Test };
std::string_view to_string(Split s);

struct Profile {
  std::uint64_t id = 0;
  std::string first, middle, surname;
  std::size_t surname_index = 0;
  std::array<std::size_t, 6> value_index{};
  std::array<std::string, 6> values;
  Split split = Split::Test;

  std::string full_name() const { return first + " " + middle + " " + surname; }
  const std::string& value(Attribute a) const { return values[static_cast<std::size_t>(a)]; }
  bool in_pretraining() const { return split != Split::Test; }
};

struct UniverseConfig {
  std::size_t n_people = 20000;
  std::size_t n_pretrain = 10000;  // first n_pretrain people
  std::size_t n_sft = 5000;        // first n_sft of those
  CorrelationConfig corr;
  std::uint64_t seed = 0;
};

std::vector<Profile> generate_universe(const UniverseConfig& config, const Pools& pools);

struct PretrainRecord {
  std::uint64_t person_id = 0;
  std::size_t template_index = 0;
  std::string text;
};

struct QaRecord {
  std::uint64_t person_id = 0;
  Attribute attribute = Attribute::BirthCity;
  std::size_t template_index = 0;
  std::string question;
  std::string answer;
  bool is_refusal = false;
};

struct TestRecord {
  std::uint64_t pair_id = 0;
  bool hallucinated = false;
  std::uint64_t person_id = 0;
  std::string full_name;
  std::string question;
  std::string gold;
};

// Fills {slot} placeholders; throws FormatError on an unknown or unclosed slot.
std::string render_template(std::string_view tmpl, const Profile& p);

// per_person distinct templates (without replacement) for every profile in
// the pretraining split.
void render_pretraining(const std::vector<Profile>& profiles, const TemplateSet& templates, std::size_t per_person,
                        std::uint64_t seed, const std::function<void(const PretrainRecord&)>& emit);
std::vector<PretrainRecord> render_pretraining(const std::vector<Profile>& profiles, const TemplateSet& templates,
                                               std::size_t per_person, std::uint64_t seed);

// per_person QA pairs per profile, attributes taken in turn. The question
// template is uniform over the attribute's templates, except for the
// style-bound attribute where the bound template is used with probability
// style_rho.
void render_qa(const std::vector<Profile>& profiles, const TemplateSet& templates, std::size_t per_person,
               std::uint64_t seed, const std::function<void(const QaRecord&)>& emit);
// render_qa over the SFT split.
std::vector<QaRecord> render_sft(const std::vector<Profile>& profiles, const TemplateSet& templates,
                                 std::size_t per_person, std::uint64_t seed);

struct RefusalSet {
  std::vector<Profile> unknown;  // names only; attribute values unset
  std::vector<QaRecord> records;
};

// Unknown people whose name components are drawn from the empirical
// marginals of `known`, rejecting any full name in `known` or `exclude` and
// repeats. Every answer is the refusal string.
RefusalSet render_refusal(const std::vector<Profile>& known, const TemplateSet& templates, std::size_t n_unknown,
                          std::size_t per_person, std::uint64_t seed, std::uint64_t first_id,
                          const std::unordered_set<std::string>& exclude = {});

// Factual birthplace questions about n pretraining people and the same
// questions with the middle name swapped for one never paired with that
// (first, surname) in `universe`. Hallucinated gold is the refusal string.
std::vector<TestRecord> make_halluc_testset(const std::vector<Profile>& universe, const NamePools& names,
                                            const TemplateSet& templates, std::size_t n, std::uint64_t seed);

nlohmann::json to_json(const Profile& p);
nlohmann::json to_json(const PretrainRecord& r);
nlohmann::json to_json(const QaRecord& r);
nlohmann::json to_json(const TestRecord& r);

}  // namespace hallab::bios
