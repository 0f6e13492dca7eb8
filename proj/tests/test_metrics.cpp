#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "doctest.h"
#include "glt/errors.hpp"
#include "glt/metrics.hpp"

using namespace glt;

namespace {

using Ids = std::vector<std::uint32_t>;

double brute_ndcg(const Ids& ranking, const Ids& relevant, std::size_t k) {
  std::set<std::uint32_t> rel(relevant.begin(), relevant.end());
  std::vector<double> gains;
  for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i) gains.push_back(rel.count(ranking[i]));
  double dcg = 0.0;
  for (std::size_t i = 0; i < gains.size(); ++i) dcg += gains[i] / std::log2(i + 2.0);
  double ideal = 0.0;
  for (std::size_t i = 0; i < std::min(k, rel.size()); ++i) ideal += 1.0 / std::log2(i + 2.0);
  return dcg / ideal;
}

double brute_map(const Ids& ranking, const Ids& relevant, std::size_t k) {
  std::set<std::uint32_t> rel(relevant.begin(), relevant.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i) {
    if (!rel.count(ranking[i])) continue;
    std::size_t hits = 0;
    for (std::size_t j = 0; j <= i; ++j) hits += rel.count(ranking[j]);
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return sum / static_cast<double>(std::min(k, rel.size()));
}

// Two-sided p by walking every sign pattern: the share of patterns whose
// min(W+, W-) is at most the observed one.
double enumerated_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(a[i] - b[i]) > kWilcoxonZeroTol) d.push_back(a[i] - b[i]);
  const std::size_t n = d.size();
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0.0, equal = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(d[j]) < std::abs(d[i])) less += 1.0;
      if (std::abs(d[j]) == std::abs(d[i])) equal += 1.0;
    }
    ranks[i] = less + (equal + 1.0) / 2.0;
  }
  const double total = std::accumulate(ranks.begin(), ranks.end(), 0.0);
  double wp = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) wp += ranks[i];
  const double observed = std::min(wp, total - wp);
  std::size_t count = 0;
  for (std::uint64_t mask = 0; mask < (1ull << n); ++mask) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) w += ranks[i];
    if (std::min(w, total - w) <= observed + 1e-9) ++count;
  }
  return static_cast<double>(count) / std::ldexp(1.0, static_cast<int>(n));
}

}  // namespace

TEST_CASE("ndcg examples") {
  CHECK(*ndcg_at_k(Ids{4, 1, 2}, Ids{4}, 5) == 1.0);
  CHECK(std::abs(*ndcg_at_k(Ids{1, 4, 2}, Ids{4}, 5) - 1.0 / std::log2(3.0)) <= 1e-9);
  CHECK(std::abs(*ndcg_at_k(Ids{1, 4, 2}, Ids{4}, 5) - 0.6309) <= 1e-4);
  CHECK(*ndcg_at_k(Ids{1, 2, 3, 5, 6, 4}, Ids{4}, 5) == 0.0);
  CHECK_FALSE(ndcg_at_k(Ids{1, 2}, Ids{}, 5).has_value());
  CHECK_THROWS_AS(ndcg_at_k(Ids{1}, Ids{1}, 0), ArgumentError);
}

TEST_CASE("map examples") {
  CHECK(std::abs(*map_at_k(Ids{1, 9, 2, 8, 7}, Ids{1, 2}, 5) - (1.0 + 2.0 / 3.0) / 2.0) <= 1e-9);
  CHECK(*map_at_k(Ids{1, 2, 3, 4, 5, 6}, Ids{1, 2, 3, 4, 5, 6, 7}, 5) == 1.0);
  CHECK(*map_at_k(Ids{8, 9}, Ids{1, 2}, 5) == 0.0);
  CHECK_FALSE(map_at_k(Ids{1, 2}, Ids{}, 5).has_value());
  CHECK_THROWS_AS(map_at_k(Ids{1}, Ids{1}, 0), ArgumentError);
}

TEST_CASE("metrics match a brute-force evaluator") {
  std::mt19937_64 rng(40);
  for (int trial = 0; trial < 500; ++trial) {
    Ids pool(20);
    std::iota(pool.begin(), pool.end(), 0);
    std::shuffle(pool.begin(), pool.end(), rng);
    Ids ranking(pool.begin(), pool.begin() + 1 + rng() % 20);
    std::shuffle(pool.begin(), pool.end(), rng);
    Ids relevant(pool.begin(), pool.begin() + 1 + rng() % 8);
    std::size_t k = 1 + rng() % 10;
    CHECK(std::abs(*ndcg_at_k(ranking, relevant, k) - brute_ndcg(ranking, relevant, k)) <= 1e-9);
    CHECK(std::abs(*map_at_k(ranking, relevant, k) - brute_map(ranking, relevant, k)) <= 1e-9);
  }
}

TEST_CASE("metrics ignore order beyond the cutoff and drop when a hit moves down") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    Ids ranking(12);
    std::iota(ranking.begin(), ranking.end(), 0);
    std::shuffle(ranking.begin(), ranking.end(), rng);
    Ids relevant{ranking[rng() % 12], ranking[rng() % 12]};
    Ids tail_shuffled = ranking;
    std::shuffle(tail_shuffled.begin() + 5, tail_shuffled.end(), rng);
    CHECK(*ndcg_at_k(ranking, relevant, 5) == *ndcg_at_k(tail_shuffled, relevant, 5));
    CHECK(*map_at_k(ranking, relevant, 5) == *map_at_k(tail_shuffled, relevant, 5));

    std::set<std::uint32_t> rel(relevant.begin(), relevant.end());
    for (std::size_t i = 0; i + 1 < ranking.size(); ++i) {
      if (!rel.count(ranking[i]) || rel.count(ranking[i + 1])) continue;
      Ids swapped = ranking;
      std::swap(swapped[i], swapped[i + 1]);
      CHECK(*ndcg_at_k(swapped, relevant, 5) <= *ndcg_at_k(ranking, relevant, 5));
      CHECK(*map_at_k(swapped, relevant, 5) <= *map_at_k(ranking, relevant, 5));
    }
  }
}

TEST_CASE("wilcoxon examples") {
  std::vector<double> a{1, 2, 3, 4, 5, 6};
  CHECK_THROWS_AS(wilcoxon_signed_rank(a, a), InsufficientDataError);

  std::vector<double> x{1.1, 2.2, 3.3, 4.4, 5.5}, y{1, 2, 3, 4, 5};
  auto r = wilcoxon_signed_rank(x, y);
  CHECK(r.exact);
  CHECK(r.n == 5);
  CHECK(r.statistic == 0.0);
  CHECK(r.p_two_sided == 0.0625);
  CHECK_THROWS_AS(wilcoxon_signed_rank(x, std::vector<double>{1, 2}), DimensionError);
}

TEST_CASE("exact wilcoxon equals sign-pattern enumeration") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> step(-6, 6);
  int tested = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 5 + trial % 8;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      b[i] = 0.5;
      a[i] = 0.5 + 0.05 * step(rng);  // coarse grid: ties and zero differences occur
    }
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < n; ++i) nonzero += std::abs(a[i] - b[i]) > kWilcoxonZeroTol;
    if (nonzero < 5) {
      CHECK_THROWS_AS(wilcoxon_signed_rank(a, b), InsufficientDataError);
      continue;
    }
    auto r = wilcoxon_signed_rank(a, b);
    CHECK(r.exact);
    CHECK(std::abs(r.p_two_sided - enumerated_p(a, b)) <= 1e-12);
    ++tested;
  }
  CHECK(tested > 150);
}

TEST_CASE("large samples use the normal approximation") {
  std::mt19937_64 rng(43);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> a(60), b(60);
  for (std::size_t i = 0; i < 60; ++i) {
    b[i] = noise(rng);
    a[i] = b[i] + 0.8 + noise(rng);
  }
  auto r = wilcoxon_signed_rank(a, b);
  CHECK_FALSE(r.exact);
  CHECK(r.p_two_sided < 1e-3);
  auto flipped = wilcoxon_signed_rank(b, a);
  CHECK(flipped.p_two_sided == doctest::Approx(r.p_two_sided));
}

TEST_CASE("spatial entropy examples") {
  std::vector<std::array<double, 2>> one_cell{{0.1, 0.1}, {0.2, 0.2}, {0.3, 0.05}};
  CHECK(spatial_entropy(one_cell, 2) == 0.0);
  std::vector<std::array<double, 2>> spread{{0.25, 0.25}, {0.75, 0.25}, {0.25, 0.75}, {0.75, 0.75}};
  CHECK(std::abs(spatial_entropy(spread, 2) - std::log(4.0)) <= 1e-9);
  CHECK(spatial_entropy(spread, 1) == 0.0);
  std::vector<std::array<double, 2>> edge{{1.0, 1.0}, {0.9, 0.9}};
  CHECK(spatial_entropy(edge, 2) == 0.0);
  CHECK_THROWS_AS(spatial_entropy(std::vector<std::array<double, 2>>{}, 2), ArgumentError);
}

TEST_CASE("spatial entropy is bounded by the occupied cells") {
  std::mt19937_64 rng(44);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::size_t n = 1 + rng() % 30, g = 1 + rng() % 6;
    std::vector<std::array<double, 2>> c(n);
    for (auto& p : c) p = {u(rng), u(rng)};
    double h = spatial_entropy(c, g);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(static_cast<double>(std::min(n, g * g))) + 1e-12);
  }
}
