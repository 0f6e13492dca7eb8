#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "glt/embedding.hpp"

namespace glt {

/// Which rows take part in MaxSim. Query content tokens always participate;
/// the flags drop the query global row, the document global row, or the
/// document patch rows.
struct ScoringFlags {
  bool use_query_global = true;
  bool use_doc_global = true;
  bool use_patches = true;

  friend bool operator==(const ScoringFlags&, const ScoringFlags&) = default;
};

struct ScoreMatrix {
  Matrix values;  // queries x documents
  std::vector<std::uint32_t> query_ids;
  std::vector<std::uint32_t> doc_ids;
};

struct Ranking {
  std::uint32_t query_id = 0;
  std::vector<std::uint32_t> doc_ids;  // best first
  std::vector<double> scores;

  friend bool operator==(const Ranking&, const Ranking&) = default;
};

enum class PoolingMode { Mean, Max, Median };

std::string_view pooling_name(PoolingMode mode) noexcept;
/// Parses "mean" / "max" / "median"; throws ArgumentError otherwise.
PoolingMode parse_pooling(std::string_view name);

/// Rows of q that MaxSim iterates over, in order: tokens then global.
Matrix active_query_rows(const QueryEmbedding& q, const ScoringFlags& flags);
/// Rows of d that each query row is maximized over: patches then global.
/// Throws ConfigError when the flags leave no rows.
Matrix active_doc_rows(const DocumentEmbedding& d, const ScoringFlags& flags);

/// Sum over active query rows of the best dot product against active
/// document rows.
double maxsim_score(const QueryEmbedding& q, const DocumentEmbedding& d,
                    const ScoringFlags& flags = {});

/// Entry (i, j) is bit-identical to maxsim_score(queries[i], docs[j]) for any
/// thread count.
ScoreMatrix score_batch(std::span<const QueryEmbedding> queries,
                        std::span<const DocumentEmbedding> docs, const ScoringFlags& flags = {},
                        unsigned threads = 1);

/// Top-min(k, |index|) documents, score descending, ties by ascending doc id.
Ranking rank(const QueryEmbedding& q, std::span<const DocumentEmbedding> index, std::size_t k,
             const ScoringFlags& flags = {});

/// Column-wise mean / max / median of the patch rows, then L2-normalized.
EmbeddingVector pool_patches(const Matrix& patches, PoolingMode mode);

/// Copy of d whose global vector is replaced by pooled patches.
DocumentEmbedding with_pooled_global(const DocumentEmbedding& d, PoolingMode mode);

/// MaxSim over raw row sets, also reporting which document row won for each
/// query row (lowest index on ties). Used by training backprop and diagnostics.
struct MaxSimTrace {
  double score = 0.0;
  std::vector<std::size_t> argmax;
};
MaxSimTrace maxsim_trace(const Matrix& query_rows, const Matrix& doc_rows);

}  // namespace glt
