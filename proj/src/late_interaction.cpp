#include "glt/late_interaction.hpp"

#include <algorithm>
#include <string>
#include <thread>

#include "glt/errors.hpp"
#include "glt/simd/kernels.hpp"

namespace glt {

std::string_view pooling_name(PoolingMode mode) noexcept {
  switch (mode) {
    case PoolingMode::Mean: return "mean";
    case PoolingMode::Max: return "max";
    case PoolingMode::Median: return "median";
  }
  return "?";
}

PoolingMode parse_pooling(std::string_view name) {
  if (name == "mean") return PoolingMode::Mean;
  if (name == "max") return PoolingMode::Max;
  if (name == "median") return PoolingMode::Median;
  throw ArgumentError("unknown pooling mode '" + std::string(name) + "'");
}

Matrix active_query_rows(const QueryEmbedding& q, const ScoringFlags& flags) {
  if (q.tokens.rows() == 0) throw ConfigError("query has no token rows");
  Matrix rows = q.tokens;
  if (flags.use_query_global) rows.append_row(q.global);
  return rows;
}

Matrix active_doc_rows(const DocumentEmbedding& d, const ScoringFlags& flags) {
  if (!flags.use_patches && !flags.use_doc_global) {
    throw ConfigError("scoring flags leave no document rows (patches and global both off)");
  }
  Matrix rows;
  if (flags.use_patches) {
    if (d.patches.rows() == 0) throw ConfigError("document has no patch rows");
    rows = d.patches;
  }
  if (flags.use_doc_global) rows.append_row(d.global);
  return rows;
}

namespace {

void check_dims(const Matrix& q, const Matrix& d) {
  if (q.cols() != d.cols()) {
    throw DimensionError("query width " + std::to_string(q.cols()) + " != document width " +
                         std::to_string(d.cols()));
  }
}

double prepared_score(const Matrix& q, const Matrix& d) {
  return simd::maxsim(q.data(), q.rows(), d.data(), d.rows(), d.cols());
}

}  // namespace

double maxsim_score(const QueryEmbedding& q, const DocumentEmbedding& d,
                    const ScoringFlags& flags) {
  const Matrix qr = active_query_rows(q, flags);
  const Matrix dr = active_doc_rows(d, flags);
  check_dims(qr, dr);
  return prepared_score(qr, dr);
}

ScoreMatrix score_batch(std::span<const QueryEmbedding> queries,
                        std::span<const DocumentEmbedding> docs, const ScoringFlags& flags,
                        unsigned threads) {
  if (queries.empty()) throw ConfigError("score_batch: empty query list");
  if (docs.empty()) throw ConfigError("score_batch: empty document list");

  std::vector<Matrix> qrows;
  std::vector<Matrix> drows;
  qrows.reserve(queries.size());
  drows.reserve(docs.size());
  for (const auto& q : queries) qrows.push_back(active_query_rows(q, flags));
  for (const auto& d : docs) {
    drows.push_back(active_doc_rows(d, flags));
    check_dims(qrows.front(), drows.back());
  }

  ScoreMatrix out;
  out.values = Matrix(queries.size(), docs.size());
  for (const auto& q : queries) out.query_ids.push_back(q.query_id);
  for (const auto& d : docs) out.doc_ids.push_back(d.page_id);

  // Each cell is an independent kernel call, so the partition cannot change results.
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t j = 0; j < drows.size(); ++j) {
        out.values(i, j) = prepared_score(qrows[i], drows[j]);
      }
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(queries.size())));
  if (threads == 1) {
    work(0, queries.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (queries.size() + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk;
      const std::size_t e = std::min(queries.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
  }
  return out;
}

Ranking rank(const QueryEmbedding& q, std::span<const DocumentEmbedding> index, std::size_t k,
             const ScoringFlags& flags) {
  if (k < 1) throw ArgumentError("rank: k must be >= 1");
  if (index.empty()) throw ConfigError("rank: empty index");
  const Matrix qr = active_query_rows(q, flags);

  std::vector<std::pair<double, std::uint32_t>> scored;
  scored.reserve(index.size());
  for (const auto& d : index) {
    const Matrix dr = active_doc_rows(d, flags);
    check_dims(qr, dr);
    scored.emplace_back(prepared_score(qr, dr), d.page_id);
  }
  const std::size_t top = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(top),
                    scored.end(), [](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return a.second < b.second;
                    });
  Ranking r;
  r.query_id = q.query_id;
  for (std::size_t i = 0; i < top; ++i) {
    r.scores.push_back(scored[i].first);
    r.doc_ids.push_back(scored[i].second);
  }
  return r;
}

EmbeddingVector pool_patches(const Matrix& patches, PoolingMode mode) {
  if (patches.rows() == 0) throw ArgumentError("pool_patches: no rows");
  const std::size_t n = patches.rows();
  const std::size_t d = patches.cols();
  EmbeddingVector pooled(d, 0.0);
  std::vector<double> column(n);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t r = 0; r < n; ++r) column[r] = patches(r, c);
    switch (mode) {
      case PoolingMode::Mean: {
        double s = 0.0;
        for (double v : column) s += v;
        pooled[c] = s / static_cast<double>(n);
        break;
      }
      case PoolingMode::Max:
        pooled[c] = *std::max_element(column.begin(), column.end());
        break;
      case PoolingMode::Median: {
        std::sort(column.begin(), column.end());
        pooled[c] = (n % 2 == 1) ? column[n / 2] : 0.5 * (column[n / 2 - 1] + column[n / 2]);
        break;
      }
    }
  }
  return l2_normalize(pooled).vector;
}

DocumentEmbedding with_pooled_global(const DocumentEmbedding& d, PoolingMode mode) {
  DocumentEmbedding out = d;
  out.global = pool_patches(d.patches, mode);
  return out;
}

MaxSimTrace maxsim_trace(const Matrix& query_rows, const Matrix& doc_rows) {
  if (query_rows.rows() == 0 || doc_rows.rows() == 0) {
    throw ConfigError("maxsim_trace: empty row set");
  }
  check_dims(query_rows, doc_rows);
  MaxSimTrace t;
  t.argmax.resize(query_rows.rows());
  for (std::size_t i = 0; i < query_rows.rows(); ++i) {
    t.score += simd::max_dot(query_rows.row(i).data(), doc_rows.data(), doc_rows.rows(),
                             doc_rows.cols(), &t.argmax[i]);
  }
  return t;
}

}  // namespace glt
