#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace glt {

/// Binary-gain nDCG@k. Returns nullopt (a skipped query) when the relevant
/// set is empty; throws ArgumentError when k < 1.
std::optional<double> ndcg_at_k(std::span<const std::uint32_t> ranking,
                                std::span<const std::uint32_t> relevant, std::size_t k);

/// (1 / min(|relevant|, k)) * sum of precision@i over relevant hits in the top k.
std::optional<double> map_at_k(std::span<const std::uint32_t> ranking,
                               std::span<const std::uint32_t> relevant, std::size_t k);

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double w_plus = 0.0;
  double p_two_sided = 1.0;
  std::size_t n = 0;       // nonzero differences used
  bool exact = false;
};

/// Differences with |a - b| <= this are treated as zero and discarded.
inline constexpr double kWilcoxonZeroTol = 1e-12;
inline constexpr std::size_t kWilcoxonExactMaxN = 20;

/// Paired two-sided signed-rank test. Exact null distribution for n <= 20,
/// normal approximation with continuity and tie correction above. Ties get
/// average ranks. Throws InsufficientDataError when fewer than
/// 5 nonzero differences remain, DimensionError on length mismatch.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

/// Natural-log Shannon entropy of center occupancy over a G x G grid. The
/// upper edge (x or y == 1) falls into the last cell.
double spatial_entropy(std::span<const std::array<double, 2>> centers, std::size_t grid);

}  // namespace glt
