#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <unordered_set>

#include <boost/math/distributions/chi_squared.hpp>
#include <nlohmann/json.hpp>

#include "hallab/bios.hpp"
#include "hallab/error.hpp"

using namespace hallab;
using namespace hallab::bios;

namespace {

const Pools& pools() {
  static const Pools p = default_pools();
  return p;
}

Profile gracie() {
  Profile p;
  p.first = "Gracie";
  p.middle = "Tessa";
  p.surname = "Howell";
  p.values = {"April 15, 2081", "Camden, NJ", "Rutgers University", "Biomedical Engineering", "Acme Corp",
              "Newark, NJ"};
  p.split = Split::Sft;
  return p;
}

UniverseConfig universe_config(double rho, Attribute a, std::uint64_t seed) {
  UniverseConfig c;
  c.corr.rho = rho;
  c.corr.correlated = {a};
  c.corr.map_seed = 77;
  c.seed = seed;
  return c;
}

// Goodness of fit of `sample` counts against proportions from `reference`.
double chi_square_p(const std::map<std::string, double>& reference, const std::map<std::string, double>& sample) {
  double nr = 0, ns = 0;
  for (auto& [k, v] : reference) nr += v;
  for (auto& [k, v] : sample) ns += v;
  double stat = 0;
  for (auto& [k, v] : reference) {
    const double expected = ns * v / nr;
    const auto it = sample.find(k);
    const double observed = it == sample.end() ? 0.0 : it->second;
    stat += (observed - expected) * (observed - expected) / expected;
  }
  for (auto& [k, v] : sample) REQUIRE(reference.count(k) == 1);
  const boost::math::chi_squared dist(double(reference.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace

TEST_CASE("shipped vocabularies") {
  const auto& p = pools();
  CHECK_NOTHROW(validate(p));
  CHECK(p.names.first.size() == 400);
  CHECK(p.names.middle.size() == 400);
  CHECK(p.names.surname.size() == 1000);
  CHECK(p.schema.vocab_size(Attribute::BirthCity) == 200);
  CHECK(p.schema.vocab_size(Attribute::University) == 300);
  CHECK(p.schema.vocab_size(Attribute::Major) == 100);
  CHECK(p.schema.vocab_size(Attribute::Employer) == 263);
  CHECK(p.schema.vocab_size(Attribute::EmployerCity) == 200);
  const auto t = default_templates();
  CHECK(t.pretrain.size() == 50);
  for (const auto& q : t.qa) CHECK(q.size() == 5);
  CHECK(t.refusal_answer == "I don't know.");

  Pools bad = p;
  bad.names.middle.push_back(bad.names.first.front());
  CHECK_THROWS_AS(validate(bad), InvalidArgument);
}

TEST_CASE("birth dates") {
  CHECK(format_date(0, 1950) == "January 1, 1950");
  CHECK(format_date(31 + 28 + 31 + 14, 2081) == "April 15, 2081");
  CHECK(format_date(59, 2000) == "February 29, 2000");
  Schema s;
  CHECK(s.vocab_size(Attribute::BirthDate) == 54787);  // 1950-01-01 .. 2099-12-31
  CHECK(s.value(Attribute::BirthDate, 54786) == "December 31, 2099");
}

TEST_CASE("universe splits, uniqueness and determinism") {
  const auto c = universe_config(0.3, Attribute::BirthCity, 1);
  const auto u = generate_universe(c, pools());
  REQUIRE(u.size() == 20000);
  std::unordered_set<std::string> names;
  std::size_t n_sft = 0, n_pre = 0, n_test = 0;
  for (const auto& p : u) {
    CHECK(names.insert(p.full_name()).second);
    (p.split == Split::Sft ? n_sft : p.split == Split::Pretrain ? n_pre : n_test)++;
    if (p.id < 5000) CHECK(p.split == Split::Sft);
    for (Attribute a : kAttributes) CHECK(p.value(a) == pools().schema.value(a, p.value_index[std::size_t(a)]));
  }
  CHECK(names.size() == 20000);
  CHECK(n_sft == 5000);
  CHECK(n_pre == 5000);
  CHECK(n_test == 10000);
  const auto again = generate_universe(c, pools());
  CHECK(to_json(again[123]) == to_json(u[123]));
  CHECK(to_json(again.back()) == to_json(u.back()));
}

TEST_CASE("surname correlation law") {
  for (double rho : {0.0, 0.6, 1.0}) {
    const auto c = universe_config(rho, Attribute::Major, 2);
    const auto u = generate_universe(c, pools());
    const double K = double(pools().schema.vocab_size(Attribute::Major));
    std::size_t match = 0;
    for (const auto& p : u)
      match += p.value_index[std::size_t(Attribute::Major)] ==
               surname_map(c.corr, pools().schema, Attribute::Major, p.surname_index);
    const double n = double(u.size());
    const double expect = rho + (1 - rho) / K;
    const double sigma = std::sqrt(expect * (1 - expect) / n);
    CAPTURE(rho);
    CHECK(std::abs(match / n - expect) <= 3 * sigma + 1e-12);
    if (rho == 1.0) CHECK(match == u.size());
  }
}

TEST_CASE("template rendering") {
  const Profile p = gracie();
  CHECK(render_template("{name} is born in {birth_city}.", p) == "Gracie Tessa Howell is born in Camden, NJ.");
  CHECK(render_template("{first} {surname} studies {major}", p) == "Gracie Howell studies Biomedical Engineering");
  CHECK_THROWS_AS(render_template("{name} likes {color}", p), FormatError);
  CHECK_THROWS_AS(render_template("{name is here", p), FormatError);
  Profile nameless = p;
  nameless.values[0].clear();
  CHECK_THROWS_AS(render_template("{birth_date}", nameless), FormatError);
}

TEST_CASE("pretraining corpus") {
  const auto t = default_templates();
  TemplateSet one = t;
  one.pretrain = {t.pretrain[0]};
  const auto r = render_pretraining({gracie()}, one, 1, 0);
  REQUIRE(r.size() == 1);
  CHECK(r[0].text.starts_with("Gracie Tessa Howell is born in Camden, NJ. "));
  CHECK(render_pretraining({gracie()}, t, 0, 0).empty());
  CHECK_THROWS_AS(render_pretraining({gracie()}, one, 2, 0), InvalidArgument);

  const auto u = generate_universe(universe_config(0.5, Attribute::BirthCity, 3), pools());
  const std::vector<Profile> some(u.begin(), u.begin() + 20);
  const auto corpus = render_pretraining(some, t, 50, 4);
  CHECK(corpus.size() == 20 * 50);
  for (const auto& p : some) {
    std::set<std::size_t> used;
    std::array<bool, 6> seen{};
    for (const auto& rec : corpus) {
      if (rec.person_id != p.id) continue;
      CHECK(used.insert(rec.template_index).second);
      CHECK(rec.text.find(p.full_name()) != std::string::npos);
      for (Attribute a : kAttributes) seen[std::size_t(a)] |= rec.text.find(p.value(a)) != std::string::npos;
    }
    CHECK(used.size() == 50);
    for (bool s : seen) CHECK(s);
  }
  // test-split people are not rendered
  const std::vector<Profile> test_only(u.end() - 5, u.end());
  CHECK(render_pretraining(test_only, t, 50, 4).empty());
}

TEST_CASE("QA pairs") {
  TemplateSet t = default_templates();
  t.qa[std::size_t(Attribute::Major)] = {"What area of study did {name} focus on?"};
  const auto sft = render_sft({gracie()}, t, 6, 0);
  REQUIRE(sft.size() == 6);
  const auto& q = sft[std::size_t(Attribute::Major)];
  CHECK(q.attribute == Attribute::Major);
  CHECK(q.question == "What area of study did Gracie Tessa Howell focus on?");
  CHECK(q.answer == "Biomedical Engineering");
  CHECK_FALSE(q.is_refusal);
  for (const auto& r : sft) CHECK(r.answer == gracie().value(r.attribute));

  const auto u = generate_universe(universe_config(0.0, Attribute::BirthCity, 5), pools());
  CHECK(render_sft(u, default_templates(), 30, 6).size() == 5000 * 30);
}

TEST_CASE("style-bound template frequency") {
  const auto u = generate_universe(universe_config(0.0, Attribute::BirthCity, 7), pools());
  TemplateSet t = default_templates();
  t.style_attribute = Attribute::Employer;
  t.style_template = 2;
  const double T = double(t.qa[std::size_t(Attribute::Employer)].size());
  for (double s : {0.0, 0.5, 1.0}) {
    t.style_rho = s;
    std::size_t n = 0, bound = 0;
    render_qa(u, t, 30, 8, [&](const QaRecord& r) {
      if (r.attribute != Attribute::Employer) return;
      ++n;
      bound += r.template_index == 2;
    });
    const double p = s + (1 - s) / T;
    const double sigma = std::sqrt(p * (1 - p) / double(n));
    CAPTURE(s);
    CHECK(n == 20000 * 5);
    CHECK(std::abs(double(bound) / double(n) - p) <= 3 * sigma + 1e-12);
  }
}

TEST_CASE("refusal set fidelity") {
  const auto u = generate_universe(universe_config(0.0, Attribute::BirthCity, 9), pools());
  const std::vector<Profile> known(u.begin(), u.begin() + 10000);
  std::unordered_set<std::string> universe_names;
  for (const auto& p : u) universe_names.insert(p.full_name());
  const auto r = render_refusal(known, default_templates(), 5000, 30, 10, 100000, universe_names);
  REQUIRE(r.unknown.size() == 5000);
  CHECK(r.records.size() == 5000 * 30);
  std::unordered_set<std::string> seen;
  for (const auto& p : r.unknown) {
    CHECK(universe_names.count(p.full_name()) == 0);
    CHECK(seen.insert(p.full_name()).second);
    CHECK(p.id >= 100000);
  }
  for (const auto& rec : r.records) {
    CHECK(rec.answer == "I don't know.");
    CHECK(rec.is_refusal);
  }
  for (auto part : {&Profile::first, &Profile::middle, &Profile::surname}) {
    std::map<std::string, double> ref, smp;
    for (const auto& p : known) ref[p.*part] += 1;
    for (const auto& p : r.unknown) smp[p.*part] += 1;
    CHECK(chi_square_p(ref, smp) >= 0.01);
  }
}

TEST_CASE("perturbed-name test set") {
  const auto u = generate_universe(universe_config(0.2, Attribute::BirthCity, 11), pools());
  const auto t = default_templates();
  const auto items = make_halluc_testset(u, pools().names, t, 2000, 12);
  REQUIRE(items.size() == 4000);
  std::set<std::tuple<std::string, std::string, std::string>> triples;
  std::unordered_set<std::string> universe_names;
  for (const auto& p : u) {
    triples.insert({p.first, p.middle, p.surname});
    universe_names.insert(p.full_name());
  }
  std::multiset<std::string> fact_outer, fake_outer;
  std::size_t n_fact = 0, n_fake = 0;
  for (std::size_t i = 0; i < items.size(); i += 2) {
    const auto& f = items[i];
    const auto& h = items[i + 1];
    CHECK(f.pair_id == h.pair_id);
    CHECK_FALSE(f.hallucinated);
    CHECK(h.hallucinated);
    n_fact += !f.hallucinated;
    n_fake += h.hallucinated;
    const Profile& p = u[f.person_id];
    CHECK(p.in_pretraining());
    CHECK(f.full_name == p.full_name());
    CHECK(f.gold == p.value(Attribute::BirthCity));
    CHECK(h.gold == "I don't know.");
    CHECK(universe_names.count(h.full_name) == 0);
    CHECK(f.question.find(f.full_name) != std::string::npos);
    CHECK(h.question.find(h.full_name) != std::string::npos);
    // the fake keeps first and surname, and nobody in the universe pairs them with its middle name
    const auto first = h.full_name.substr(0, h.full_name.find(' '));
    const auto surname = h.full_name.substr(h.full_name.rfind(' ') + 1);
    const auto middle = h.full_name.substr(first.size() + 1, h.full_name.size() - first.size() - surname.size() - 2);
    CHECK(first == p.first);
    CHECK(surname == p.surname);
    CHECK(triples.count({first, middle, surname}) == 0);
    fact_outer.insert(p.first + "|" + p.surname);
    fake_outer.insert(first + "|" + surname);
  }
  CHECK(n_fact == 2000);
  CHECK(n_fake == 2000);
  CHECK(fact_outer == fake_outer);
  CHECK_THROWS_AS(make_halluc_testset(u, pools().names, t, 10001, 12), InvalidArgument);
}

TEST_CASE("record JSON shapes") {
  const auto pj = to_json(gracie());
  CHECK(pj["attributes"]["birth_city"] == "Camden, NJ");
  CHECK(pj["split"] == "sft");
  const auto qj = to_json(QaRecord{7, Attribute::Major, 0, "Q?", "A", false});
  CHECK(qj["attribute"] == "major");
  CHECK(qj["is_refusal"] == false);
  const auto tj = to_json(TestRecord{3, true, 1, "X Y Z", "Q?", "I don't know."});
  CHECK(tj["kind"] == "hallucinated");
  CHECK(tj["pair_id"] == 3);
}
