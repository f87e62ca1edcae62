#include "hallab/bios.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "bios_data.hpp"
#include "hallab/error.hpp"
#include "hallab/rng.hpp"

namespace hallab::bios {

using ojson = nlohmann::ordered_json;

namespace {

constexpr std::array<std::string_view, 6> kAttributeNames = {"birth_date", "birth_city", "university",
                                                             "major",      "employer",   "employer_city"};

constexpr std::array<std::string_view, 12> kMonths = {"January", "February", "March",     "April",
                                                      "May",     "June",     "July",      "August",
                                                      "September", "October", "November", "December"};

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) out.emplace_back(line);
    pos = end + 1;
  }
  return out;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw Error("cannot open " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Pools pools_from(const std::function<std::string(std::string_view)>& file) {
  Pools p;
  p.names.first = split_lines(file("first_names.txt"));
  p.names.middle = split_lines(file("middle_names.txt"));
  p.names.surname = split_lines(file("surnames.txt"));
  p.schema.birth_city = split_lines(file("birth_cities.txt"));
  p.schema.university = split_lines(file("universities.txt"));
  p.schema.major = split_lines(file("majors.txt"));
  p.schema.employer = split_lines(file("employers.txt"));
  p.schema.employer_city = split_lines(file("employer_cities.txt"));
  validate(p);
  return p;
}

TemplateSet templates_from(const std::string& pretrain, const std::string& qa) {
  TemplateSet t;
  t.pretrain = split_lines(pretrain);
  for (const auto& line : split_lines(qa)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("QA template line without a tab: " + line);
    t.qa[static_cast<std::size_t>(attribute_from_string(line.substr(0, tab)))].push_back(line.substr(tab + 1));
  }
  if (t.pretrain.empty()) throw FormatError("no pretraining templates");
  for (auto a : kAttributes)
    if (t.qa[static_cast<std::size_t>(a)].empty())
      throw FormatError("no QA templates for " + std::string(to_string(a)));
  return t;
}

void check_list(const std::vector<std::string>& v, const std::string& what) {
  if (v.empty()) throw InvalidArgument(what + " list is empty");
  std::unordered_set<std::string> seen;
  for (const auto& s : v)
    if (!seen.insert(s).second) throw InvalidArgument(what + " list has duplicate '" + s + "'");
}

// Fisher-Yates prefix: k distinct indices from [0, n).
std::vector<std::size_t> sample_distinct(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  idx.resize(k);
  return idx;
}

}  // namespace

std::string_view to_string(Attribute a) { return kAttributeNames[static_cast<std::size_t>(a)]; }

Attribute attribute_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kAttributeNames.size(); ++i)
    if (kAttributeNames[i] == s) return kAttributes[i];
  throw InvalidArgument("unknown attribute '" + std::string(s) + "'");
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Pretrain: return "pretrain";
    case Split::Sft: return "sft";
    case Split::Test: return "test";
  }
  return "test";
}

std::string format_date(int days_since_first_jan, int first_year) {
  using namespace std::chrono;
  const year_month_day d{sys_days{year{first_year} / January / 1} + days{days_since_first_jan}};
  return std::string(kMonths[unsigned(d.month()) - 1]) + " " + std::to_string(unsigned(d.day())) + ", " +
         std::to_string(int(d.year()));
}

std::size_t Schema::vocab_size(Attribute a) const {
  switch (a) {
    case Attribute::BirthDate: {
      using namespace std::chrono;
      const auto begin = sys_days{year{date_first_year} / January / 1};
      const auto end = sys_days{year{date_last_year + 1} / January / 1};
      return static_cast<std::size_t>((end - begin).count());
    }
    case Attribute::BirthCity: return birth_city.size();
    case Attribute::University: return university.size();
    case Attribute::Major: return major.size();
    case Attribute::Employer: return employer.size();
    case Attribute::EmployerCity: return employer_city.size();
  }
  return 0;
}

std::string Schema::value(Attribute a, std::size_t i) const {
  if (i >= vocab_size(a)) throw InvalidArgument("attribute value index out of range");
  switch (a) {
    case Attribute::BirthDate: return format_date(static_cast<int>(i), date_first_year);
    case Attribute::BirthCity: return birth_city[i];
    case Attribute::University: return university[i];
    case Attribute::Major: return major[i];
    case Attribute::Employer: return employer[i];
    case Attribute::EmployerCity: return employer_city[i];
  }
  return {};
}

Pools default_pools() {
  return pools_from([](std::string_view name) { return std::string(detail::bios_data(name)); });
}

Pools load_pools(const std::filesystem::path& dir) {
  return pools_from([&](std::string_view name) { return read_text(dir / std::string(name)); });
}

void validate(const Pools& p) {
  check_list(p.names.first, "first name");
  check_list(p.names.middle, "middle name");
  check_list(p.names.surname, "surname");
  for (const auto* v : {&p.schema.birth_city, &p.schema.university, &p.schema.major, &p.schema.employer,
                        &p.schema.employer_city})
    check_list(*v, "attribute value");
  std::unordered_set<std::string> all;
  for (const auto* v : {&p.names.first, &p.names.middle, &p.names.surname})
    for (const auto& s : *v)
      if (!all.insert(s).second) throw InvalidArgument("name pools are not disjoint ('" + s + "')");
  if (p.schema.date_last_year < p.schema.date_first_year) throw InvalidArgument("empty birth-date range");
}

TemplateSet default_templates() {
  return templates_from(std::string(detail::bios_data("pretrain_templates.txt")),
                        std::string(detail::bios_data("qa_templates.tsv")));
}

TemplateSet load_templates(const std::filesystem::path& dir) {
  return templates_from(read_text(dir / "pretrain_templates.txt"), read_text(dir / "qa_templates.tsv"));
}

std::size_t surname_map(const CorrelationConfig& corr, const Schema& schema, Attribute a, std::size_t surname_index) {
  return derive_seed(corr.map_seed, {0x5a3e, static_cast<std::uint64_t>(a), surname_index}) % schema.vocab_size(a);
}

std::vector<Profile> generate_universe(const UniverseConfig& c, const Pools& pools) {
  if (c.n_pretrain > c.n_people || c.n_sft > c.n_pretrain)
    throw InvalidArgument("split sizes must satisfy n_sft <= n_pretrain <= n_people");
  if (!(c.corr.rho >= 0 && c.corr.rho <= 1)) throw InvalidArgument("rho must lie in [0, 1]");
  const auto& names = pools.names;
  std::array<bool, 6> correlated{};
  for (auto a : c.corr.correlated) correlated[static_cast<std::size_t>(a)] = true;

  std::unordered_set<std::string> used;
  used.reserve(c.n_people * 2);
  std::vector<Profile> out;
  out.reserve(c.n_people);
  constexpr int kMaxAttempts = 1000;
  for (std::size_t id = 0; id < c.n_people; ++id) {
    Profile p;
    p.id = id;
    bool ok = false;
    for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
      Rng rng = make_rng(c.seed, {0xb105, id, static_cast<std::uint64_t>(attempt)});
      p.first = names.first[uniform_index(rng, names.first.size())];
      p.middle = names.middle[uniform_index(rng, names.middle.size())];
      p.surname_index = uniform_index(rng, names.surname.size());
      p.surname = names.surname[p.surname_index];
      ok = used.insert(p.full_name()).second;
    }
    if (!ok) throw InvalidArgument("name pools exhausted: no unique full name for person " + std::to_string(id));

    Rng rng = make_rng(c.seed, {0xa77, id});
    for (auto a : kAttributes) {
      const auto k = static_cast<std::size_t>(a);
      const std::size_t K = pools.schema.vocab_size(a);
      const double u = uniform01(rng);
      const std::size_t uniform = uniform_index(rng, K);
      std::size_t v = uniform;
      if (correlated[k] && u < c.corr.rho) v = surname_map(c.corr, pools.schema, a, p.surname_index);
      p.value_index[k] = v;
      p.values[k] = pools.schema.value(a, v);
    }
    p.split = id < c.n_sft ? Split::Sft : id < c.n_pretrain ? Split::Pretrain : Split::Test;
    out.push_back(std::move(p));
  }
  return out;
}

std::string render_template(std::string_view tmpl, const Profile& p) {
  std::string out;
  out.reserve(tmpl.size() + 64);
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    out.append(tmpl.substr(pos, open - pos));
    const auto close = tmpl.find('}', open);
    if (close == std::string_view::npos) throw FormatError("unclosed slot in template: " + std::string(tmpl));
    const std::string_view slot = tmpl.substr(open + 1, close - open - 1);
    if (slot == "name")
      out += p.full_name();
    else if (slot == "first")
      out += p.first;
    else if (slot == "middle")
      out += p.middle;
    else if (slot == "surname")
      out += p.surname;
    else {
      const Attribute a = [&] {
        try {
          return attribute_from_string(slot);
        } catch (const InvalidArgument&) {
          throw FormatError("unresolved slot {" + std::string(slot) + "}");
        }
      }();
      const auto& v = p.value(a);
      if (v.empty()) throw FormatError("slot {" + std::string(slot) + "} has no value for this person");
      out += v;
    }
    pos = close + 1;
  }
  return out;
}

void render_pretraining(const std::vector<Profile>& profiles, const TemplateSet& templates, std::size_t per_person,
                        std::uint64_t seed, const std::function<void(const PretrainRecord&)>& emit) {
  if (per_person > templates.pretrain.size())
    throw InvalidArgument("per_person exceeds the number of pretraining templates");
  for (const auto& p : profiles) {
    if (!p.in_pretraining()) continue;
    Rng rng = make_rng(seed, {0x9e7, p.id});
    for (auto t : sample_distinct(templates.pretrain.size(), per_person, rng))
      emit({p.id, t, render_template(templates.pretrain[t], p)});
  }
}

std::vector<PretrainRecord> render_pretraining(const std::vector<Profile>& profiles, const TemplateSet& templates,
                                               std::size_t per_person, std::uint64_t seed) {
  std::vector<PretrainRecord> out;
  render_pretraining(profiles, templates, per_person, seed, [&](const PretrainRecord& r) { out.push_back(r); });
  return out;
}

void render_qa(const std::vector<Profile>& profiles, const TemplateSet& templates, std::size_t per_person,
               std::uint64_t seed, const std::function<void(const QaRecord&)>& emit) {
  if (!(templates.style_rho >= 0 && templates.style_rho <= 1)) throw InvalidArgument("style_rho must lie in [0, 1]");
  const auto style = static_cast<std::size_t>(templates.style_attribute);
  if (templates.style_template >= templates.qa[style].size()) throw InvalidArgument("style template out of range");
  for (const auto& p : profiles) {
    Rng rng = make_rng(seed, {0x5f7, p.id});
    for (std::size_t j = 0; j < per_person; ++j) {
      const Attribute a = kAttributes[j % kAttributes.size()];
      const auto k = static_cast<std::size_t>(a);
      const auto& qs = templates.qa[k];
      const double u = uniform01(rng);
      std::size_t t = uniform_index(rng, qs.size());
      if (k == style && u < templates.style_rho) t = templates.style_template;
      emit({p.id, a, t, render_template(qs[t], p), p.value(a), false});
    }
  }
}

std::vector<QaRecord> render_sft(const std::vector<Profile>& profiles, const TemplateSet& templates,
                                 std::size_t per_person, std::uint64_t seed) {
  std::vector<Profile> sft;
  for (const auto& p : profiles)
    if (p.split == Split::Sft) sft.push_back(p);
  std::vector<QaRecord> out;
  render_qa(sft, templates, per_person, seed, [&](const QaRecord& r) { out.push_back(r); });
  return out;
}

RefusalSet render_refusal(const std::vector<Profile>& known, const TemplateSet& templates, std::size_t n_unknown,
                          std::size_t per_person, std::uint64_t seed, std::uint64_t first_id,
                          const std::unordered_set<std::string>& exclude) {
  if (known.empty() && n_unknown > 0) throw InvalidArgument("refusal set needs known people to match names against");
  std::unordered_set<std::string> taken(exclude);
  for (const auto& p : known) taken.insert(p.full_name());

  RefusalSet out;
  Rng rng = make_rng(seed, {0x1d4});
  constexpr int kRetries = 10000;
  for (std::size_t i = 0; i < n_unknown; ++i) {
    Profile u;
    u.id = first_id + i;
    u.split = Split::Test;
    bool ok = false;
    for (int r = 0; r < kRetries && !ok; ++r) {
      const auto& a = known[uniform_index(rng, known.size())];
      const auto& b = known[uniform_index(rng, known.size())];
      const auto& c = known[uniform_index(rng, known.size())];
      u.first = a.first;
      u.middle = b.middle;
      u.surname = c.surname;
      u.surname_index = c.surname_index;
      ok = taken.insert(u.full_name()).second;
    }
    if (!ok) throw InvalidArgument("could not draw a non-colliding unknown name within the retry budget");
    out.unknown.push_back(u);
  }

  for (const auto& u : out.unknown) {
    Rng prng = make_rng(seed, {0x1d5, u.id});
    for (std::size_t j = 0; j < per_person; ++j) {
      const Attribute a = kAttributes[j % kAttributes.size()];
      const auto& qs = templates.qa[static_cast<std::size_t>(a)];
      const std::size_t t = uniform_index(prng, qs.size());
      out.records.push_back({u.id, a, t, render_template(qs[t], u), templates.refusal_answer, true});
    }
  }
  return out;
}

std::vector<TestRecord> make_halluc_testset(const std::vector<Profile>& universe, const NamePools& names,
                                            const TemplateSet& templates, std::size_t n, std::uint64_t seed) {
  std::vector<const Profile*> pool;
  for (const auto& p : universe)
    if (p.in_pretraining()) pool.push_back(&p);
  if (n > pool.size()) throw InvalidArgument("halluc test set larger than the pretraining population");

  // middle names already used with each (first, surname)
  std::unordered_map<std::string, std::unordered_set<std::string>> used;
  for (const auto& p : universe) used[p.first + "\t" + p.surname].insert(p.middle);

  Rng rng = make_rng(seed, {0x4a1});
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < n; ++i) std::swap(order[i], order[i + uniform_index(rng, pool.size() - i)]);

  const auto& qs = templates.qa[static_cast<std::size_t>(Attribute::BirthCity)];
  std::vector<TestRecord> out;
  out.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const Profile& p = *pool[order[i]];
    const auto& taken = used[p.first + "\t" + p.surname];
    std::vector<std::size_t> free;
    for (std::size_t m = 0; m < names.middle.size(); ++m)
      if (!taken.count(names.middle[m])) free.push_back(m);
    if (free.empty())
      throw InvalidArgument("no unused middle name left for " + p.first + " " + p.surname);
    Profile fake = p;
    fake.middle = names.middle[free[uniform_index(rng, free.size())]];
    const std::size_t t = uniform_index(rng, qs.size());
    out.push_back({i, false, p.id, p.full_name(), render_template(qs[t], p), p.value(Attribute::BirthCity)});
    out.push_back({i, true, p.id, fake.full_name(), render_template(qs[t], fake), templates.refusal_answer});
  }
  return out;
}

nlohmann::json to_json(const Profile& p) {
  ojson attrs = ojson::object();
  for (auto a : kAttributes) attrs[std::string(to_string(a))] = p.value(a);
  ojson j = {{"person_id", p.id},   {"first", p.first},  {"middle", p.middle}, {"surname", p.surname},
             {"attributes", attrs}, {"split", std::string(to_string(p.split))}};
  return nlohmann::json::parse(j.dump());
}

nlohmann::json to_json(const PretrainRecord& r) { return {{"person_id", r.person_id}, {"text", r.text}}; }

nlohmann::json to_json(const QaRecord& r) {
  return {{"person_id", r.person_id},
          {"attribute", std::string(to_string(r.attribute))},
          {"question", r.question},
          {"answer", r.answer},
          {"is_refusal", r.is_refusal}};
}

nlohmann::json to_json(const TestRecord& r) {
  return {{"pair_id", r.pair_id},
          {"kind", r.hallucinated ? "hallucinated" : "factual"},
          {"question", r.question},
          {"gold", r.gold}};
}

}  // namespace hallab::bios
