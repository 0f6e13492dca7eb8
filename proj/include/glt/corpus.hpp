#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "glt/embedding.hpp"

namespace glt {

enum class RegionType : std::uint8_t { Text = 0, Table = 1, Figure = 2, List = 3, Header = 4 };
inline constexpr std::size_t kRegionTypeCount = 5;

std::string_view region_type_name(RegionType t) noexcept;
RegionType parse_region_type(std::string_view name);

enum class QueryType : std::uint8_t { Local, Global };
std::string_view query_type_name(QueryType t) noexcept;
QueryType parse_query_type(std::string_view name);

/// Token id layout: structural tokens first, then content tokens.
///   0..4   region types (text table figure list header)
///   5      blank
///   6..8   top below right
///   9..15  span2 .. span8
///   16..   content tokens w0, w1, ...
struct Vocabulary {
  static constexpr std::uint32_t kBlank = 5;
  static constexpr std::uint32_t kTop = 6;
  static constexpr std::uint32_t kBelow = 7;
  static constexpr std::uint32_t kRight = 8;
  static constexpr std::uint32_t kSpanBase = 7;  // span h -> kSpanBase + h, h in [2, 8]
  static constexpr std::uint32_t kContentBase = 16;
  static constexpr std::uint32_t kMaxGridRows = 8;

  std::uint32_t content_size = 96;

  std::uint32_t size() const noexcept { return kContentBase + content_size; }
  static std::uint32_t type_token(RegionType t) noexcept { return static_cast<std::uint32_t>(t); }
  static std::uint32_t span_token(std::uint32_t h) noexcept { return kSpanBase + h; }
  std::uint32_t content_token(std::uint32_t i) const noexcept { return kContentBase + i; }
  bool is_content(std::uint32_t id) const noexcept {
    return id >= kContentBase && id < size();
  }
  std::string name(std::uint32_t id) const;
  /// Accepts structural names ("table", "below", "span2") and content names ("w17").
  std::uint32_t parse(std::string_view token) const;
};

struct Region {
  RegionType type = RegionType::Text;
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  std::uint32_t rows = 1;
  std::uint32_t cols = 1;
  std::vector<std::uint32_t> tokens;  // content token ids
  std::uint32_t word_count = 0;

  bool covers(std::uint32_t r, std::uint32_t c) const noexcept {
    return r >= row && r < row + rows && c >= col && c < col + cols;
  }
  friend bool operator==(const Region&, const Region&) = default;
};

struct PageSpec {
  std::uint32_t page_id = 0;
  std::uint32_t grid_rows = 4;
  std::uint32_t grid_cols = 4;
  std::vector<Region> regions;  // reading order

  friend bool operator==(const PageSpec&, const PageSpec&) = default;
};

struct Descriptor {
  std::uint32_t page_id = 0;
  std::vector<std::uint32_t> tokens;

  friend bool operator==(const Descriptor&, const Descriptor&) = default;
};

/// Layout pattern of a global query: some region of type `first` holding the
/// query's content tokens has a region of type `second` below it (later band)
/// or to its right (same band).
struct LayoutPattern {
  RegionType first = RegionType::Text;
  RegionType second = RegionType::Text;
  std::uint32_t relation = Vocabulary::kBelow;  // kBelow or kRight

  friend bool operator==(const LayoutPattern&, const LayoutPattern&) = default;
};

struct QuerySpec {
  std::uint32_t query_id = 0;
  QueryType qtype = QueryType::Local;
  std::vector<std::uint32_t> tokens;
  std::uint32_t source_page = 0;  // page the query was written from
  std::vector<std::uint32_t> relevant;
  std::vector<std::uint32_t> distractors;

  friend bool operator==(const QuerySpec&, const QuerySpec&) = default;
};

struct Splits {
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> dev;
  std::vector<std::uint32_t> test;

  friend bool operator==(const Splits&, const Splits&) = default;
};

enum class SplitName { Train, Dev, Test };
std::string_view split_name(SplitName s) noexcept;
SplitName parse_split(std::string_view name);

struct CorpusParams {
  std::uint64_t seed = 7;
  std::uint32_t n_pages = 200;
  std::uint32_t n_queries = 200;
  std::uint32_t grid_rows = 4;
  std::uint32_t grid_cols = 4;
  std::uint32_t content_vocab = 96;
  std::uint32_t sketch_dim = 128;
  double global_fraction = 0.5;
  double train_fraction = 0.6;
  double dev_fraction = 0.1;

  friend bool operator==(const CorpusParams&, const CorpusParams&) = default;
};

inline constexpr std::uint32_t kCorpusSchemaVersion = 1;
inline constexpr std::uint32_t kDescriptorGrammarVersion = 1;

struct Corpus {
  CorpusParams params;
  Vocabulary vocab;
  std::vector<PageSpec> pages;              // index == page_id
  std::vector<Descriptor> descriptors;      // empty when loaded without descriptors
  std::vector<QuerySpec> queries;           // index == query_id
  Splits splits;

  const PageSpec& page(std::uint32_t id) const;
  const Descriptor& descriptor(std::uint32_t page_id) const;
  bool has_descriptors() const noexcept { return !descriptors.empty(); }
  const std::vector<std::uint32_t>& split_pages(SplitName s) const noexcept;
  /// Queries whose source page lies in the split, in id order.
  std::vector<const QuerySpec*> split_queries(SplitName s) const;
  std::size_t patch_feature_dim() const noexcept;
};

/// Throws ConfigError for too-small corpora, unusable grids, or a content
/// vocabulary too small to build distractors.
Corpus generate_corpus(const CorpusParams& params);

/// One row per grid cell (row-major): region-type one-hot, content-token
/// sketch (token index mod sketch_dim), normalized cell-center coordinates.
Matrix render_patch_features(const PageSpec& page, const Vocabulary& vocab,
                             std::uint32_t sketch_dim);
std::size_t patch_feature_dim(std::uint32_t sketch_dim) noexcept;
/// Token id that each patch feature column stands for, -1 where none: the
/// type one-hot maps to the type tokens, and sketch slot s to content token
/// s when the sketch is collision-free (content vocabulary <= sketch_dim).
std::vector<std::int32_t> patch_feature_tokens(const Vocabulary& vocab, std::uint32_t sketch_dim);

/// Canonical structure-only token sequence: per band, `type rel [spanH]`,
/// with rel = top for the first band, below for later ones, and a right-hand
/// region written as `type right`. Empty rows become `blank rel [spanH]`.
Descriptor generate_descriptor(const PageSpec& page);

/// Regions as (type, row, col, rows, cols) tuples sorted by position.
using LayoutKey = std::vector<std::array<std::uint32_t, 5>>;
LayoutKey layout_key(const PageSpec& page);
/// Inverse of generate_descriptor on the layout; throws ArgumentError on malformed input.
LayoutKey decode_descriptor(std::span<const std::uint32_t> tokens, std::uint32_t grid_rows,
                            std::uint32_t grid_cols);

struct LayoutFeatures {
  std::uint32_t n_text = 0;
  std::uint32_t n_image = 0;
  std::uint32_t n_list = 0;
  std::uint32_t n_words = 0;
  std::uint32_t n_visual_elements = 0;  // figures + tables

  friend bool operator==(const LayoutFeatures&, const LayoutFeatures&) = default;
};
LayoutFeatures layout_features(const PageSpec& page);

/// Normalized region center points in [0,1]^2 (x = column axis).
std::vector<std::array<double, 2>> region_centers(const PageSpec& page);

/// Whether the page satisfies a global query's content + layout demand.
bool satisfies_pattern(const PageSpec& page, std::span<const std::uint32_t> content,
                       const LayoutPattern& pattern);
/// Pattern encoded in a global query's tokens (content first, then `A B rel`).
LayoutPattern query_pattern(const QuerySpec& q);
std::vector<std::uint32_t> query_content(const QuerySpec& q, const Vocabulary& vocab);

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> problems;
};
/// Re-checks every constructive guarantee of the generator.
ValidationReport validate_corpus(const Corpus& corpus);

/// Extra training queries drawn from the split's pages by the benchmark rules.
/// Local: 3 content tokens of one region. Global: 2 content tokens of a
/// region plus a (type, type, relation) pattern the page satisfies. Relevant
/// pages and distractors (same content, pattern unmet) are resolved within
/// the split. Ids continue after the corpus' own queries. global_fraction
/// defaults to the corpus setting.
std::vector<QuerySpec> sample_training_queries(const Corpus& corpus, SplitName split,
                                               std::size_t per_page, std::uint64_t seed,
                                               std::optional<double> global_fraction = {});

/// Writes corpus.jsonl (+ descriptors.jsonl) into dir.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
/// Reads corpus.jsonl; descriptors.jsonl only when with_descriptors is set
/// (ConfigError if it is then missing).
Corpus load_corpus(const std::filesystem::path& dir, bool with_descriptors);

inline constexpr const char* kCorpusFile = "corpus.jsonl";
inline constexpr const char* kDescriptorFile = "descriptors.jsonl";

}  // namespace glt
