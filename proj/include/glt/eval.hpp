#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "glt/corpus.hpp"
#include "glt/encoder.hpp"
#include "glt/late_interaction.hpp"
#include "glt/metrics.hpp"

namespace glt {

inline constexpr std::size_t kEvalCutoff = 5;

struct QueryResult {
  std::uint32_t query_id = 0;
  std::vector<std::uint32_t> ranking;
  std::vector<std::uint32_t> relevant;
  QueryType qtype = QueryType::Local;
};

struct QueryMetrics {
  std::uint32_t query_id = 0;
  QueryType qtype = QueryType::Local;
  double ndcg = 0.0;
  double map = 0.0;
};

struct SignificanceRecord {
  std::string method_a;
  std::string method_b;
  std::string metric;  // paired unit, e.g. "ndcg@5"
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
};

struct EvalReport {
  std::string variant;
  std::string dataset;
  std::size_t k = kEvalCutoff;
  std::vector<QueryMetrics> per_query;  // query id order
  std::size_t skipped = 0;              // queries with an empty relevant set
  double mean_ndcg = 0.0;
  double mean_map = 0.0;
  std::vector<SignificanceRecord> significance;
};

/// Scores every result at cutoff k; means are plain averages of the
/// per-query columns.
EvalReport summarize(std::string variant, std::string dataset,
                     const std::vector<QueryResult>& results, std::size_t k = kEvalCutoff);

struct TypeMeans {
  std::size_t count = 0;
  double ndcg = 0.0;
  double map = 0.0;
};
/// Absent types have no entry (they are not reported as zero).
std::map<QueryType, TypeMeans> qtype_breakdown(const EvalReport& report);

/// Wilcoxon on paired per-query nDCG (matched by query id). Returns nullopt
/// when the test has too few nonzero differences.
std::optional<SignificanceRecord> compare_reports(const EvalReport& a, const EvalReport& b);

// ---- encoding and retrieval ------------------------------------------------

/// Encodes the split's pages from patch features only. Descriptors are
/// never consulted on this path.
std::vector<DocumentEmbedding> encode_split_pages(const EncoderParams& params, const Corpus& corpus,
                                                  SplitName split);
std::vector<QueryEmbedding> encode_split_queries(const EncoderParams& params, const Corpus& corpus,
                                                 SplitName split);

enum class CrossContext { Off, Frozen, Finetuned };
std::string_view cross_context_name(CrossContext mode) noexcept;
CrossContext parse_cross_context(std::string_view name);

/// Oracle document encodings that read descriptors at inference. Frozen
/// appends separately encoded descriptor token states to the patch rows;
/// finetuned encodes patches and descriptor tokens as one sequence. Throws
/// ConfigError when the corpus carries no descriptors or mode is Off.
std::vector<DocumentEmbedding> encode_split_pages_with_descriptors(const EncoderParams& params,
                                                                   const Corpus& corpus,
                                                                   SplitName split,
                                                                   CrossContext mode);

/// How documents are scored for one report row.
struct ScoringVariant {
  std::string name = "full";
  ScoringFlags flags;
  std::optional<PoolingMode> pooling;  // replaces the document global vector
};

/// Ranks every document for every query of the split and scores at k.
EvalReport evaluate_embeddings(const Corpus& corpus, SplitName split,
                               const std::vector<QueryEmbedding>& queries,
                               const std::vector<DocumentEmbedding>& docs,
                               const ScoringVariant& variant, std::size_t k = kEvalCutoff);

/// Normal-mode evaluation straight from parameters.
EvalReport evaluate_split(const EncoderParams& params, const Corpus& corpus, SplitName split,
                          const ScoringVariant& variant = {}, std::size_t k = kEvalCutoff);

// ---- ablations ---------------------------------------------------------------

inline constexpr const char* kRowFull = "full";
inline constexpr const char* kRowNoPatches = "no_local_patches";
inline constexpr const char* kRowNoQueryGlobal = "no_query_global";
inline constexpr const char* kRowNoDocGlobal = "no_image_global";
inline constexpr const char* kRowNoLossGlobal = "no_loss_global";
inline constexpr const char* kRowNoLossLocal = "no_loss_local";
inline constexpr const char* kRowPoolMean = "pool_mean";
inline constexpr const char* kRowPoolMax = "pool_max";
inline constexpr const char* kRowPoolMedian = "pool_median";

/// All nine rows in table order.
const std::vector<std::string>& ablation_rows();

/// Checkpoint roles consumed by the ablation table.
inline constexpr const char* kRoleFull = "full";
inline constexpr const char* kRoleNoLossGlobal = "no_loss_global";
inline constexpr const char* kRoleNoLossLocal = "no_loss_local";
inline constexpr const char* kRoleRetrievalOnly = "retrieval_only";

struct AblationTable {
  std::vector<EvalReport> rows;
  /// Row-vs-full significance plus full-vs-retrieval-only when available.
  std::vector<SignificanceRecord> significance;
};

/// Flag and pooling rows reuse the full checkpoint; loss rows need their
/// own. Throws ConfigError naming the first row whose checkpoint is missing,
/// or an unknown row name.
AblationTable run_ablations(const Corpus& corpus,
                            const std::map<std::string, const EncoderParams*>& checkpoints,
                            const std::vector<std::string>& rows, SplitName split = SplitName::Test,
                            std::size_t k = kEvalCutoff);

// ---- layout analysis -------------------------------------------------------

struct FeatureMeans {
  std::size_t pages = 0;
  double n_text = 0, n_image = 0, n_list = 0, n_words = 0, n_visual_elements = 0;
  double spatial_entropy = 0;
};

struct LayoutContrast {
  FeatureMeans improved;  // queries where `better` beats `baseline`
  FeatureMeans failed;    // queries where it loses
};

/// Mean layout features of the source pages of improvement vs failure
/// queries (ties excluded). Entropy uses a G x G grid over region centers.
LayoutContrast layout_contrast(const EvalReport& better, const EvalReport& baseline,
                               const Corpus& corpus, std::size_t entropy_grid = 3);

// ---- output ----------------------------------------------------------------

/// Aligned human-readable table (one line per report) plus significance lines.
void write_table(std::ostream& out, const std::vector<EvalReport>& rows,
                 const std::vector<SignificanceRecord>& significance = {});
/// Tab-separated rows: variant, dataset, metric, value.
void write_tsv(std::ostream& out, const std::vector<EvalReport>& rows,
               const std::vector<SignificanceRecord>& significance = {});

}  // namespace glt
