#include "glt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_set>

#include "glt/errors.hpp"

namespace glt {

namespace {

void check_k(std::size_t k) {
  if (k < 1) throw ArgumentError("metric cutoff k must be >= 1");
}

}  // namespace

std::optional<double> ndcg_at_k(std::span<const std::uint32_t> ranking,
                                std::span<const std::uint32_t> relevant, std::size_t k) {
  check_k(k);
  const std::unordered_set<std::uint32_t> rel(relevant.begin(), relevant.end());
  if (rel.empty()) return std::nullopt;
  double dcg = 0.0;
  const std::size_t depth = std::min(k, ranking.size());
  for (std::size_t i = 0; i < depth; ++i) {
    if (rel.count(ranking[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  double ideal = 0.0;
  for (std::size_t i = 0; i < std::min(rel.size(), k); ++i) {
    ideal += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  return dcg / ideal;
}

std::optional<double> map_at_k(std::span<const std::uint32_t> ranking,
                               std::span<const std::uint32_t> relevant, std::size_t k) {
  check_k(k);
  const std::unordered_set<std::uint32_t> rel(relevant.begin(), relevant.end());
  if (rel.empty()) return std::nullopt;
  double sum = 0.0;
  std::size_t hits = 0;
  const std::size_t depth = std::min(k, ranking.size());
  for (std::size_t i = 0; i < depth; ++i) {
    if (rel.count(ranking[i])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(std::min(rel.size(), k));
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("wilcoxon: samples differ in length");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (std::abs(d) > kWilcoxonZeroTol) diffs.push_back(d);
  }
  const std::size_t n = diffs.size();
  if (n < 5) {
    throw InsufficientDataError("wilcoxon: insufficient data (" + std::to_string(n) +
                        " nonzero differences, need >= 5)");
  }

  // average ranks of |d|, kept doubled so tied ranks stay integral
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return std::abs(diffs[x]) < std::abs(diffs[y]); });
  std::vector<long> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) ++j;
    const long r2 = static_cast<long>(i + 1 + j + 1);  // 2 * average of ranks i+1..j+1
    for (std::size_t t = i; t <= j; ++t) rank2[order[t]] = r2;
    const double tcount = static_cast<double>(j - i + 1);
    tie_term += tcount * tcount * tcount - tcount;
    i = j + 1;
  }

  long w_plus2 = 0;
  long total2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += rank2[i];
    if (diffs[i] > 0) w_plus2 += rank2[i];
  }
  const long w_minus2 = total2 - w_plus2;

  WilcoxonResult res;
  res.n = n;
  res.w_plus = 0.5 * static_cast<double>(w_plus2);
  res.statistic = 0.5 * static_cast<double>(std::min(w_plus2, w_minus2));

  if (n <= kWilcoxonExactMaxN) {
    // count sign patterns by doubled W+ (subset-sum DP over the 2^n patterns)
    std::vector<double> ways(static_cast<std::size_t>(total2) + 1, 0.0);
    ways[0] = 1.0;
    long reach = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (long s = reach; s >= 0; --s) {
        if (ways[static_cast<std::size_t>(s)] != 0.0) {
          ways[static_cast<std::size_t>(s + rank2[i])] += ways[static_cast<std::size_t>(s)];
        }
      }
      reach += rank2[i];
    }
    const long lo = std::min(w_plus2, w_minus2);
    double tail = 0.0;
    for (long s = 0; s <= lo; ++s) tail += ways[static_cast<std::size_t>(s)];
    res.p_two_sided = std::min(1.0, 2.0 * tail / std::ldexp(1.0, static_cast<int>(n)));
    res.exact = true;
    return res;
  }

  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1.0) / 4.0;
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  const double dev = std::max(0.0, std::abs(res.w_plus - mean) - 0.5);
  const double z = var > 0.0 ? dev / std::sqrt(var) : 0.0;
  res.p_two_sided = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return res;
}

double spatial_entropy(std::span<const std::array<double, 2>> centers, std::size_t grid) {
  if (centers.empty()) throw ArgumentError("spatial_entropy: no centers");
  if (grid < 1) throw ArgumentError("spatial_entropy: grid must be >= 1");
  auto cell = [&](double v) {
    const auto g = static_cast<double>(grid);
    const auto idx = static_cast<long>(std::floor(std::clamp(v, 0.0, 1.0) * g));
    return static_cast<std::size_t>(std::min<long>(idx, static_cast<long>(grid) - 1));
  };
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> counts;
  for (const auto& c : centers) ++counts[{cell(c[0]), cell(c[1])}];
  const double total = static_cast<double>(centers.size());
  double h = 0.0;
  for (const auto& [key, count] : counts) {
    const double p = static_cast<double>(count) / total;
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace glt
