#include <doctest.h>

#include <map>

#include "helpers.hpp"
#include "rar/pl_sampler.hpp"

using namespace rar;

namespace {

// Every ordered k-subset of {0..n-1}.
void ordered_subsets(std::size_t n, std::size_t k, std::vector<std::size_t>& cur, std::vector<bool>& used,
                     std::vector<std::vector<std::size_t>>& out) {
  if (cur.size() == k) {
    out.push_back(cur);
    return;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (used[i]) continue;
    used[i] = true;
    cur.push_back(i);
    ordered_subsets(n, k, cur, used, out);
    cur.pop_back();
    used[i] = false;
  }
}

CandidateSet make_set(const ScoredPool& pool, const std::vector<std::size_t>& idx) {
  CandidateSet s;
  for (std::size_t i : idx) {
    s.items.push_back(pool.ids[i]);
    s.scores.push_back(pool.scores[i]);
  }
  s.pool_tag = pool.tag;
  return s;
}

// Sequential-softmax probability written out directly.
double brute_prob(const ScoredPool& pool, const std::vector<std::size_t>& idx, double T) {
  std::vector<bool> gone(pool.size(), false);
  double p = 1.0;
  for (std::size_t i : idx) {
    double z = 0;
    for (std::size_t j = 0; j < pool.size(); ++j)
      if (!gone[j]) z += std::exp(pool.scores[j] / T);
    p *= std::exp(pool.scores[i] / T) / z;
    gone[i] = true;
  }
  return p;
}

}  // namespace

TEST_CASE("set probabilities form a distribution and match the sequential softmax") {
  const auto pool = testing::random_pool(6, 2, 1.5);
  for (double T : {0.5, 1.0, 2.0}) {
    std::vector<std::vector<std::size_t>> all;
    std::vector<std::size_t> cur;
    std::vector<bool> used(6, false);
    ordered_subsets(6, 3, cur, used, all);
    CHECK(all.size() == 120);
    double total = 0;
    for (const auto& idx : all) {
      const double lp = pl::set_log_prob(pool, make_set(pool, idx), T);
      CHECK(std::exp(lp) == doctest::Approx(brute_prob(pool, idx, T)).epsilon(1e-12));
      total += std::exp(lp);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("gumbel-top-k sampling matches the exact distribution") {
  const auto pool = testing::random_pool(5, 7, 1.0);
  const double T = 0.8;
  std::map<std::vector<std::string>, int> counts;
  const int n = 200000;
  for (int i = 0; i < n; ++i) ++counts[pl::sample_set(pool, 2, 1000 + i, T).items];

  std::vector<std::vector<std::size_t>> all;
  std::vector<std::size_t> cur;
  std::vector<bool> used(5, false);
  ordered_subsets(5, 2, cur, used, all);
  double tv = 0;
  for (const auto& idx : all) {
    const auto s = make_set(pool, idx);
    const double p = std::exp(pl::set_log_prob(pool, s, T));
    tv += std::abs(p - double(counts[s.items]) / n);
  }
  CHECK(0.5 * tv < 0.01);
}

TEST_CASE("sampled sets carry scores and pool tag and are deterministic") {
  auto pool = testing::random_pool(30, 3);
  pool.tag = "top30";
  const auto a = pl::sample_set(pool, 10, 5);
  CHECK(a.size() == 10);
  CHECK(a.pool_tag == "top30");
  CHECK(a.items == pl::sample_set(pool, 10, 5).items);
  CHECK(a.items != pl::sample_set(pool, 10, 6).items);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto j = std::stoul(a.items[i].substr(1));
    CHECK(a.scores[i] == pool.scores[j]);
  }
}

TEST_CASE("log-probability gradient matches finite differences and sums to zero") {
  auto pool = testing::random_pool(8, 4, 2.0);
  const auto set = pl::sample_set(pool, 4, 9, 1.3);
  const auto g = pl::set_log_prob_grad(pool, set, 1.3);
  REQUIRE(g.size() == pool.size());
  double sum = 0;
  const double h = 1e-6;
  for (std::size_t j = 0; j < pool.size(); ++j) {
    const double keep = pool.scores[j];
    pool.scores[j] = keep + h;
    const double up = pl::set_log_prob(pool, set, 1.3);
    pool.scores[j] = keep - h;
    const double down = pl::set_log_prob(pool, set, 1.3);
    pool.scores[j] = keep;
    CHECK(g[j] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6));
    sum += g[j];
  }
  CHECK(std::abs(sum) < 1e-12);
}

TEST_CASE("sampler input errors") {
  const auto pool = testing::random_pool(4, 1);
  CHECK_THROWS_AS(pl::sample_set(pool, 5, 1), Error);
  CHECK_THROWS_AS(pl::sample_set(pool, 2, 1, 0.0), ConfigError);
  auto bad = pool;
  bad.scores[1] = INFINITY;
  CHECK_THROWS_AS(pl::sample_set(bad, 2, 1), NumericError);
  CandidateSet foreign;
  foreign.items = {"zz"};
  CHECK_THROWS_AS(pl::set_log_prob(pool, foreign), LookupError);
  CandidateSet dup;
  dup.items = {"p1", "p1"};
  CHECK_THROWS_AS(pl::set_log_prob(pool, dup), Error);
}
