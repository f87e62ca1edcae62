#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "hallab/error.hpp"
#include "hallab/metrics.hpp"
#include "hallab/sweep.hpp"

using namespace hallab;
using namespace hallab::detect;

namespace {

double pair_count_auroc(const std::vector<double>& s, const std::vector<char>& pos) {
  double wins = 0;
  double pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (pos[i] && !pos[j]) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

double scan_tpr(const std::vector<double>& s, const std::vector<char>& pos, double cap) {
  const double np = double(std::count(pos.begin(), pos.end(), 1));
  const double nn = double(s.size()) - np;
  double best = 0.0;
  for (double t : s) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= t) (pos[i] ? tp : fp) += 1;
    if (fp / nn <= cap) best = std::max(best, tp / np);
  }
  return best;
}

struct Fixture {
  std::vector<double> s;
  std::vector<char> pos;
};

Fixture random_fixture(std::mt19937_64& g, std::size_t n) {
  Fixture f;
  std::uniform_int_distribution<int> level(0, 7);  // coarse values force ties
  std::bernoulli_distribution coin(0.4);
  for (std::size_t i = 0; i < n; ++i) {
    f.s.push_back(level(g) * 0.25);
    f.pos.push_back(coin(g) ? 1 : 0);
  }
  f.pos[0] = 1;
  f.pos[1] = 0;
  return f;
}

}  // namespace

TEST_CASE("confidence score is minus the absolute prediction") {
  Eigen::VectorXd p(4);
  p << 0.98, 0.0, -0.5, 0.2;
  const auto s = confidence_scores(p);
  CHECK(s[0] == -0.98);
  CHECK(s[1] == 0.0);
  CHECK(s[2] == -0.5);
  std::vector<std::size_t> order(4), oracle{1, 3, 2, 0};
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return s[a] > s[b]; });
  CHECK(order == oracle);
}

TEST_CASE("AUROC basics") {
  const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
  const std::vector<char> sep{0, 0, 1, 1};
  CHECK(auroc(s, sep) == 1.0);
  CHECK(tpr_at_fpr(s, sep) == 1.0);
  const std::vector<char> one{1, 1, 1, 1};
  CHECK_THROWS_AS(auroc(s, one), InvalidArgument);
  CHECK_THROWS_AS(tpr_at_fpr(s, one), InvalidArgument);
  // identical scores: admitting any positive admits every negative
  const std::vector<double> same(4, 0.3);
  CHECK(tpr_at_fpr(same, sep) == 0.0);
  CHECK(auroc(same, sep) == 0.5);
}

TEST_CASE("six-example AUROC against pair counting") {
  const std::vector<double> s{0.3, 0.7, 0.3, 0.1, 0.9, 0.7};
  const std::vector<char> pos{1, 0, 0, 0, 1, 1};
  // pairs: 0.3 vs {0.7,0.3,0.1} = 0+.5+1, 0.9 vs all = 3, 0.7 vs all = .5+1+1
  CHECK(auroc(s, pos) == 7.0 / 9.0);
  CHECK(auroc(s, pos) == pair_count_auroc(s, pos));
}

TEST_CASE("randomized fixtures agree with brute force") {
  std::mt19937_64 g(2024);
  for (int rep = 0; rep < 200; ++rep) {
    const auto f = random_fixture(g, 2 + rep % 40);
    CHECK(auroc(f.s, f.pos) == doctest::Approx(pair_count_auroc(f.s, f.pos)).epsilon(1e-15));
    CHECK(tpr_at_fpr(f.s, f.pos) == scan_tpr(f.s, f.pos, 0.05));
    CHECK(tpr_at_fpr(f.s, f.pos, 0.3) == scan_tpr(f.s, f.pos, 0.3));
  }
}

TEST_CASE("twenty-example TPR against an exhaustive scan") {
  std::mt19937_64 g(7);
  std::normal_distribution<double> z;
  std::vector<double> s;
  std::vector<char> pos;
  for (int i = 0; i < 20; ++i) {
    pos.push_back(i % 2);
    s.push_back(z(g) + pos.back());
  }
  for (double cap : {0.0, 0.05, 0.1, 0.25, 0.5, 1.0}) CHECK(tpr_at_fpr(s, pos, cap) == scan_tpr(s, pos, cap));
}

TEST_CASE("AUROC symmetry, monotone invariance and the null baseline") {
  std::mt19937_64 g(99);
  std::normal_distribution<double> z;
  std::bernoulli_distribution coin(0.5);
  std::vector<double> s, neg, warped;
  std::vector<char> pos;
  for (int i = 0; i < 20000; ++i) {
    s.push_back(std::round(z(g) * 4) / 4);
    pos.push_back(coin(g));
    neg.push_back(-s.back());
    warped.push_back(std::exp(3 * s.back()) + 1);
  }
  CHECK(auroc(s, pos) + auroc(neg, pos) == 1.0);
  CHECK(auroc(warped, pos) == auroc(s, pos));
  CHECK(std::abs(auroc(s, pos) - 0.5) <= 0.03);
  double prev = -1;
  for (double cap : {0.0, 0.01, 0.05, 0.2, 0.6, 1.0}) {
    const double t = tpr_at_fpr(s, pos, cap);
    CHECK(t >= prev);
    prev = t;
  }
}

TEST_CASE("reports and thresholded accuracy") {
  std::vector<ScoredExample> ex{{"a", 0.9, true, ""}, {"b", 0.8, true, ""}, {"c", 0.2, false, ""},
                                {"d", 0.85, false, ""}, {"e", 0.1, false, ""}};
  const auto r = make_report("m", ex);
  CHECK(r.available);
  CHECK(r.n_pos == 2);
  CHECK(r.n_neg == 3);
  CHECK(r.auroc == doctest::Approx(5.0 / 6.0));
  const double t = best_balanced_threshold(ex);
  CHECK(t == 0.8);
  CHECK(accuracy_at(ex, t) == doctest::Approx(0.8));
  ex.resize(2);
  CHECK_FALSE(make_report("m", ex).available);
}

TEST_CASE("macro-averaged Q&A accuracy") {
  std::vector<std::pair<int, bool>> r;
  for (int a = 1; a <= 6; ++a)
    for (int k = 0; k < 10; ++k) r.emplace_back(a, true);
  CHECK(qa_accuracy(r) == 1.0);
  for (auto& [a, ok] : r)
    if (a == 1) ok = false;
  CHECK(qa_accuracy(r) == doctest::Approx(5.0 / 6.0));

  // uneven table: attribute a has a+1 responses, a of them correct
  std::vector<std::pair<int, bool>> t;
  double oracle = 0;
  for (int a = 1; a <= 6; ++a) {
    for (int k = 0; k <= a; ++k) t.emplace_back(a, k < a);
    oracle += double(a) / (a + 1) / 6;
  }
  CHECK(qa_accuracy(t) == doctest::Approx(oracle).epsilon(1e-14));
  std::reverse(t.begin(), t.end());
  CHECK(qa_accuracy(t) == doctest::Approx(oracle).epsilon(1e-14));

  t.erase(std::remove_if(t.begin(), t.end(), [](auto& p) { return p.first == 4; }), t.end());
  CHECK_THROWS_AS(qa_accuracy(t), InvalidArgument);
  CHECK_THROWS_AS(qa_accuracy(std::vector<std::pair<int, bool>>{{7, true}}), InvalidArgument);
}

TEST_CASE("refusal rate on response strings") {
  CHECK(is_refusal("I don't know."));
  CHECK(is_refusal("  I don't   know. \n"));
  CHECK_FALSE(is_refusal("I don't know"));
  CHECK_FALSE(is_refusal("i don't know."));
  std::vector<std::pair<int, std::string>> r;
  for (int a = 1; a <= 6; ++a) r.emplace_back(a, "I don't know.");
  CHECK(refusal_rate(r) == 1.0);
  for (auto& [a, s] : r) s = "Paris";
  CHECK(refusal_rate(r) == 0.0);
  // attribute 2 half refused, attribute 5 fully refused
  r.emplace_back(2, "I  don't know.");
  r.emplace_back(5, "Boston");
  r[4].second = "I don't know.";
  CHECK(refusal_rate(r) == doctest::Approx((0.5 + 0.5) / 6));
}
