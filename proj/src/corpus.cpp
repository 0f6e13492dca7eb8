#include "glt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "glt/errors.hpp"
#include "json.hpp"

namespace glt {

namespace {

constexpr std::array<std::string_view, kRegionTypeCount> kTypeNames{"text", "table", "figure",
                                                                     "list", "header"};

using Rng = std::mt19937_64;

std::uint32_t uniform(Rng& rng, std::uint32_t lo, std::uint32_t hi) {
  return std::uniform_int_distribution<std::uint32_t>(lo, hi)(rng);
}

double unit(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

RegionType random_type(Rng& rng) {
  // text-heavy mix; headers are rarer
  const double u = unit(rng);
  if (u < 0.32) return RegionType::Text;
  if (u < 0.54) return RegionType::Table;
  if (u < 0.76) return RegionType::Figure;
  if (u < 0.92) return RegionType::List;
  return RegionType::Header;
}

std::pair<std::uint32_t, std::uint32_t> token_range(RegionType t) {
  switch (t) {
    case RegionType::Text: return {4, 6};
    case RegionType::Table: return {3, 5};
    case RegionType::Figure: return {2, 4};
    case RegionType::List: return {3, 5};
    case RegionType::Header: return {2, 3};
  }
  return {2, 3};
}

std::pair<std::uint32_t, std::uint32_t> word_range(RegionType t) {
  switch (t) {
    case RegionType::Text: return {40, 200};
    case RegionType::Table: return {20, 80};
    case RegionType::Figure: return {0, 10};
    case RegionType::List: return {15, 60};
    case RegionType::Header: return {3, 12};
  }
  return {0, 0};
}

void fill_content(Region& r, Rng& rng, const Vocabulary& vocab) {
  const auto [lo, hi] = token_range(r.type);
  const std::uint32_t k = uniform(rng, lo, hi);
  std::vector<std::uint32_t> pool(vocab.content_size);
  std::iota(pool.begin(), pool.end(), 0u);
  // partial Fisher-Yates
  r.tokens.clear();
  for (std::uint32_t i = 0; i < k; ++i) {
    const std::uint32_t j = uniform(rng, i, vocab.content_size - 1);
    std::swap(pool[i], pool[j]);
    r.tokens.push_back(vocab.content_token(pool[i]));
  }
  const auto [wlo, whi] = word_range(r.type);
  r.word_count = uniform(rng, wlo, whi);
}

void set_type(Region& r, RegionType t, Rng& rng, const Vocabulary& vocab) {
  r.type = t;
  fill_content(r, rng, vocab);
}

// Stacks horizontal bands (height 1-2) that are full-width, split in two
// halves, or blank, until the grid is covered.
PageSpec random_layout(Rng& rng, std::uint32_t page_id, std::uint32_t rows, std::uint32_t cols,
                       const Vocabulary& vocab) {
  PageSpec page;
  page.page_id = page_id;
  page.grid_rows = rows;
  page.grid_cols = cols;
  const std::uint32_t half = cols / 2;
  while (page.regions.size() < 2) {
    page.regions.clear();
    std::uint32_t r = 0;
    while (r < rows) {
      const std::uint32_t h = (rows - r >= 2 && unit(rng) < 0.35) ? 2 : 1;
      const double kind = unit(rng);
      if (kind < 0.12) {
        // blank band
      } else if (kind < 0.55) {
        Region reg;
        reg.row = r;
        reg.rows = h;
        reg.col = 0;
        reg.cols = cols;
        set_type(reg, random_type(rng), rng, vocab);
        page.regions.push_back(std::move(reg));
      } else {
        for (std::uint32_t side = 0; side < 2; ++side) {
          Region reg;
          reg.row = r;
          reg.rows = h;
          reg.col = side == 0 ? 0 : half;
          reg.cols = side == 0 ? half : cols - half;
          set_type(reg, random_type(rng), rng, vocab);
          page.regions.push_back(std::move(reg));
        }
      }
      r += h;
    }
  }
  return page;
}

bool related(const Region& x, const Region& y, std::uint32_t relation) {
  if (relation == Vocabulary::kBelow) return y.row >= x.row + x.rows;
  return y.row == x.row && y.col > x.col;
}

bool has_any_partner(const PageSpec& page, std::size_t xi, std::uint32_t relation) {
  for (std::size_t j = 0; j < page.regions.size(); ++j) {
    if (j != xi && related(page.regions[xi], page.regions[j], relation)) return true;
  }
  return false;
}

bool contains_all(const Region& r, std::span<const std::uint32_t> content) {
  return std::all_of(content.begin(), content.end(), [&](std::uint32_t t) {
    return std::find(r.tokens.begin(), r.tokens.end(), t) != r.tokens.end();
  });
}

bool page_contains_all(const PageSpec& page, std::span<const std::uint32_t> content) {
  return std::any_of(page.regions.begin(), page.regions.end(),
                     [&](const Region& r) { return contains_all(r, content); });
}

bool shares_token(const PageSpec& page, std::span<const std::uint32_t> content) {
  for (const auto& r : page.regions) {
    for (std::uint32_t t : content) {
      if (std::find(r.tokens.begin(), r.tokens.end(), t) != r.tokens.end()) return true;
    }
  }
  return false;
}

std::vector<std::uint32_t> sample_tokens(Rng& rng, const std::vector<std::uint32_t>& from,
                                         std::size_t k) {
  std::vector<std::uint32_t> pool = from;
  k = std::min(k, pool.size());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = uniform(rng, static_cast<std::uint32_t>(i),
                                  static_cast<std::uint32_t>(pool.size() - 1));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

struct Twin {
  PageSpec target;      // satisfies the pattern
  PageSpec distractor;  // same content region, wrong arrangement
  std::size_t target_region = 0;
  std::size_t distractor_region = 0;
  LayoutPattern pattern;
  std::vector<std::uint32_t> content;
};

std::optional<Twin> build_twin(Rng& rng, const CorpusParams& p, const Vocabulary& vocab,
                               std::uint32_t id_a, std::uint32_t id_b) {
  Twin twin;
  twin.target = random_layout(rng, id_a, p.grid_rows, p.grid_cols, vocab);
  std::vector<std::tuple<std::size_t, std::size_t, std::uint32_t>> pairs;
  const auto& regs = twin.target.regions;
  for (std::size_t x = 0; x < regs.size(); ++x) {
    for (std::size_t y = 0; y < regs.size(); ++y) {
      if (x == y) continue;
      for (std::uint32_t rel : {Vocabulary::kBelow, Vocabulary::kRight}) {
        if (related(regs[x], regs[y], rel)) pairs.emplace_back(x, y, rel);
      }
    }
  }
  if (pairs.empty()) return std::nullopt;
  const auto [xi, yi, rel] = pairs[uniform(rng, 0, static_cast<std::uint32_t>(pairs.size() - 1))];
  twin.target_region = xi;
  twin.pattern = {regs[xi].type, regs[yi].type, rel};
  twin.content = sample_tokens(rng, regs[xi].tokens, 2);

  for (int attempt = 0; attempt < 64; ++attempt) {
    PageSpec d = random_layout(rng, id_b, p.grid_rows, p.grid_cols, vocab);
    std::vector<std::size_t> slots;
    for (std::size_t i = 0; i < d.regions.size(); ++i) {
      if (!has_any_partner(d, i, rel)) slots.push_back(i);
    }
    if (slots.empty()) continue;
    const std::size_t xs = slots[uniform(rng, 0, static_cast<std::uint32_t>(slots.size() - 1))];
    std::vector<std::size_t> others;
    for (std::size_t i = 0; i < d.regions.size(); ++i) {
      if (i != xs) others.push_back(i);
    }
    const std::size_t ys = others[uniform(rng, 0, static_cast<std::uint32_t>(others.size() - 1))];
    d.regions[xs].type = twin.pattern.first;
    d.regions[xs].tokens = regs[xi].tokens;
    d.regions[xs].word_count = regs[xi].word_count;
    set_type(d.regions[ys], twin.pattern.second, rng, vocab);
    if (satisfies_pattern(d, twin.content, twin.pattern)) continue;
    twin.distractor = std::move(d);
    twin.distractor_region = xs;
    return twin;
  }
  return std::nullopt;
}

std::vector<std::uint32_t> local_query_tokens(Rng& rng, const PageSpec& page,
                                              std::size_t shared_region) {
  std::vector<std::size_t> rich;
  std::vector<std::size_t> any;
  for (std::size_t i = 0; i < page.regions.size(); ++i) {
    if (i == shared_region) continue;
    any.push_back(i);
    if (page.regions[i].tokens.size() >= 3) rich.push_back(i);
  }
  const auto& pool = rich.empty() ? any : rich;
  const std::size_t ri = pool[uniform(rng, 0, static_cast<std::uint32_t>(pool.size() - 1))];
  return sample_tokens(rng, page.regions[ri].tokens, 3);
}

void check_params(const CorpusParams& p) {
  if (p.n_pages < 10) throw ConfigError("n_pages must be >= 10, got " + std::to_string(p.n_pages));
  if (p.n_queries < 10) {
    throw ConfigError("n_queries must be >= 10, got " + std::to_string(p.n_queries));
  }
  if (p.grid_rows < 2 || p.grid_rows > Vocabulary::kMaxGridRows || p.grid_cols < 2) {
    throw ConfigError("grid must be at least 2x2 with at most 8 rows");
  }
  // Regions draw up to 6 distinct tokens; twins need room for fresh content.
  if (p.content_vocab < 24) {
    throw ConfigError("content vocabulary of " + std::to_string(p.content_vocab) +
                      " is too small to construct distractors (need >= 24)");
  }
  if (p.sketch_dim < 1) throw ConfigError("sketch_dim must be >= 1");
  if (!(p.global_fraction >= 0.0 && p.global_fraction <= 1.0)) {
    throw ConfigError("global_fraction must lie in [0, 1]");
  }
  if (!(p.train_fraction > 0.0 && p.dev_fraction > 0.0 &&
        p.train_fraction + p.dev_fraction < 1.0)) {
    throw ConfigError("split fractions must be positive and leave room for a test split");
  }
}

}  // namespace

std::string_view region_type_name(RegionType t) noexcept {
  return kTypeNames[static_cast<std::size_t>(t)];
}

RegionType parse_region_type(std::string_view name) {
  for (std::size_t i = 0; i < kTypeNames.size(); ++i) {
    if (kTypeNames[i] == name) return static_cast<RegionType>(i);
  }
  throw ArgumentError("unknown region type '" + std::string(name) + "'");
}

std::string_view query_type_name(QueryType t) noexcept {
  return t == QueryType::Global ? "global" : "local";
}

QueryType parse_query_type(std::string_view name) {
  if (name == "global") return QueryType::Global;
  if (name == "local") return QueryType::Local;
  throw ArgumentError("unknown query type '" + std::string(name) + "'");
}

std::string_view split_name(SplitName s) noexcept {
  switch (s) {
    case SplitName::Train: return "train";
    case SplitName::Dev: return "dev";
    case SplitName::Test: return "test";
  }
  return "?";
}

SplitName parse_split(std::string_view name) {
  if (name == "train") return SplitName::Train;
  if (name == "dev") return SplitName::Dev;
  if (name == "test") return SplitName::Test;
  throw ArgumentError("unknown split '" + std::string(name) + "'");
}

std::string Vocabulary::name(std::uint32_t id) const {
  if (id < kRegionTypeCount) return std::string(kTypeNames[id]);
  switch (id) {
    case kBlank: return "blank";
    case kTop: return "top";
    case kBelow: return "below";
    case kRight: return "right";
    default: break;
  }
  if (id >= span_token(2) && id <= span_token(kMaxGridRows)) {
    return "span" + std::to_string(id - kSpanBase);
  }
  if (is_content(id)) return "w" + std::to_string(id - kContentBase);
  throw ArgumentError("token id " + std::to_string(id) + " outside vocabulary");
}

std::uint32_t Vocabulary::parse(std::string_view token) const {
  for (std::uint32_t id = 0; id < kContentBase; ++id) {
    if (id >= span_token(2) + (kMaxGridRows - 1)) break;
    if (name(id) == token) return id;
  }
  if (token.size() > 1 && token[0] == 'w') {
    std::uint32_t idx = 0;
    try {
      idx = static_cast<std::uint32_t>(std::stoul(std::string(token.substr(1))));
    } catch (const std::exception&) {
      throw ArgumentError("bad content token '" + std::string(token) + "'");
    }
    if (idx < content_size) return content_token(idx);
  }
  throw ArgumentError("unknown token '" + std::string(token) + "'");
}

const PageSpec& Corpus::page(std::uint32_t id) const {
  if (id >= pages.size()) throw ArgumentError("page id " + std::to_string(id) + " not in corpus");
  return pages[id];
}

const Descriptor& Corpus::descriptor(std::uint32_t page_id) const {
  if (descriptors.empty()) throw ConfigError("descriptors are not loaded");
  if (page_id >= descriptors.size()) {
    throw ArgumentError("no descriptor for page " + std::to_string(page_id));
  }
  return descriptors[page_id];
}

const std::vector<std::uint32_t>& Corpus::split_pages(SplitName s) const noexcept {
  switch (s) {
    case SplitName::Train: return splits.train;
    case SplitName::Dev: return splits.dev;
    case SplitName::Test: return splits.test;
  }
  return splits.test;
}

std::vector<const QuerySpec*> Corpus::split_queries(SplitName s) const {
  const auto& ids = split_pages(s);
  const std::set<std::uint32_t> members(ids.begin(), ids.end());
  std::vector<const QuerySpec*> out;
  for (const auto& q : queries) {
    if (members.count(q.source_page)) out.push_back(&q);
  }
  return out;
}

std::size_t Corpus::patch_feature_dim() const noexcept {
  return glt::patch_feature_dim(params.sketch_dim);
}

std::size_t patch_feature_dim(std::uint32_t sketch_dim) noexcept {
  return kRegionTypeCount + sketch_dim + 2;
}

Corpus generate_corpus(const CorpusParams& params) {
  check_params(params);
  Rng rng(params.seed);
  Corpus corpus;
  corpus.params = params;
  corpus.vocab.content_size = params.content_vocab;
  const Vocabulary& vocab = corpus.vocab;

  const std::uint32_t n_pairs = params.n_pages / 2;
  const bool has_single = params.n_pages % 2 == 1;
  corpus.pages.resize(params.n_pages);

  struct PairInfo {
    std::uint32_t target;
    std::uint32_t distractor;
    std::size_t target_region;
    std::size_t distractor_region;
    LayoutPattern pattern;
    std::vector<std::uint32_t> content;
  };
  std::vector<PairInfo> pairs;
  for (std::uint32_t k = 0; k < n_pairs; ++k) {
    // the twin's two ids are handed out in random order
    const bool flip = unit(rng) < 0.5;
    const std::uint32_t id_t = 2 * k + (flip ? 1 : 0);
    const std::uint32_t id_d = 2 * k + (flip ? 0 : 1);
    std::optional<Twin> twin;
    for (int attempt = 0; attempt < 64 && !twin; ++attempt) {
      twin = build_twin(rng, params, vocab, id_t, id_d);
    }
    if (!twin) throw ConfigError("could not construct a distractor twin; enlarge the grid");
    pairs.push_back({id_t, id_d, twin->target_region, twin->distractor_region, twin->pattern,
                     twin->content});
    corpus.pages[id_t] = std::move(twin->target);
    corpus.pages[id_d] = std::move(twin->distractor);
  }
  if (has_single) {
    corpus.pages.back() =
        random_layout(rng, params.n_pages - 1, params.grid_rows, params.grid_cols, vocab);
  }

  // splits at twin granularity so a distractor always sits next to its target
  std::vector<std::uint32_t> order(n_pairs);
  std::iota(order.begin(), order.end(), 0u);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_dev = std::max<std::uint32_t>(
      1, static_cast<std::uint32_t>(std::lround(params.dev_fraction * n_pairs)));
  auto n_train = static_cast<std::uint32_t>(std::lround(params.train_fraction * n_pairs));
  n_train = std::clamp<std::uint32_t>(n_train, 1, n_pairs - n_dev - 1);
  std::vector<SplitName> pair_split(n_pairs);
  for (std::uint32_t i = 0; i < n_pairs; ++i) {
    const SplitName s = i < n_train           ? SplitName::Train
                        : i < n_train + n_dev ? SplitName::Dev
                                              : SplitName::Test;
    pair_split[order[i]] = s;
  }
  auto split_vec = [&](SplitName s) -> std::vector<std::uint32_t>& {
    return s == SplitName::Train ? corpus.splits.train
           : s == SplitName::Dev ? corpus.splits.dev
                                 : corpus.splits.test;
  };
  std::vector<SplitName> page_split(params.n_pages, SplitName::Train);
  for (std::uint32_t k = 0; k < n_pairs; ++k) {
    page_split[2 * k] = page_split[2 * k + 1] = pair_split[k];
    split_vec(pair_split[k]).push_back(2 * k);
    split_vec(pair_split[k]).push_back(2 * k + 1);
  }
  if (has_single) corpus.splits.train.push_back(params.n_pages - 1);
  for (auto* v : {&corpus.splits.train, &corpus.splits.dev, &corpus.splits.test}) {
    std::sort(v->begin(), v->end());
  }

  // query kinds: exact global count, shuffled
  const auto n_global = static_cast<std::uint32_t>(
      std::lround(params.global_fraction * static_cast<double>(params.n_queries)));
  std::vector<QueryType> kinds(params.n_queries, QueryType::Local);
  std::fill(kinds.begin(), kinds.begin() + std::min(n_global, params.n_queries), QueryType::Global);
  std::shuffle(kinds.begin(), kinds.end(), rng);

  // local query slots: distractor pages first, then the single page, then targets
  std::vector<std::pair<std::uint32_t, std::size_t>> local_slots;
  for (const auto& pr : pairs) local_slots.emplace_back(pr.distractor, pr.distractor_region);
  if (has_single) local_slots.emplace_back(params.n_pages - 1, SIZE_MAX);
  for (const auto& pr : pairs) local_slots.emplace_back(pr.target, pr.target_region);

  std::uint32_t next_global = 0;
  std::uint32_t next_local = 0;
  for (std::uint32_t qi = 0; qi < params.n_queries; ++qi) {
    QuerySpec q;
    q.query_id = qi;
    q.qtype = kinds[qi];
    if (q.qtype == QueryType::Global) {
      const PairInfo& pr = pairs[next_global++ % n_pairs];
      q.source_page = pr.target;
      q.tokens = pr.content;
      q.tokens.push_back(Vocabulary::type_token(pr.pattern.first));
      q.tokens.push_back(Vocabulary::type_token(pr.pattern.second));
      q.tokens.push_back(pr.pattern.relation);
      q.distractors.push_back(pr.distractor);
    } else {
      const auto& [pid, shared] = local_slots[next_local++ % local_slots.size()];
      q.source_page = pid;
      q.tokens = local_query_tokens(rng, corpus.pages[pid], shared);
    }
    // relevance is resolved against the query's own split
    const auto& members = split_vec(page_split[q.source_page]);
    const std::vector<std::uint32_t> content = query_content(q, vocab);
    for (std::uint32_t pid : members) {
      const PageSpec& page = corpus.pages[pid];
      const bool rel = q.qtype == QueryType::Global
                           ? satisfies_pattern(page, content, query_pattern(q))
                           : page_contains_all(page, content);
      if (rel) q.relevant.push_back(pid);
    }
    corpus.queries.push_back(std::move(q));
  }

  for (const auto& page : corpus.pages) corpus.descriptors.push_back(generate_descriptor(page));
  return corpus;
}

Matrix render_patch_features(const PageSpec& page, const Vocabulary& vocab,
                             std::uint32_t sketch_dim) {
  const std::size_t cells = static_cast<std::size_t>(page.grid_rows) * page.grid_cols;
  Matrix feats(cells, patch_feature_dim(sketch_dim));
  const std::size_t sketch0 = kRegionTypeCount;
  const std::size_t coord0 = kRegionTypeCount + sketch_dim;
  for (std::uint32_t r = 0; r < page.grid_rows; ++r) {
    for (std::uint32_t c = 0; c < page.grid_cols; ++c) {
      const std::size_t cell = static_cast<std::size_t>(r) * page.grid_cols + c;
      for (const auto& reg : page.regions) {
        if (!reg.covers(r, c)) continue;
        feats(cell, static_cast<std::size_t>(reg.type)) = 1.0;
        for (std::uint32_t t : reg.tokens) {
          if (vocab.is_content(t)) {
            feats(cell, sketch0 + (t - Vocabulary::kContentBase) % sketch_dim) = 1.0;
          }
        }
        break;
      }
      feats(cell, coord0) = (c + 0.5) / page.grid_cols;
      feats(cell, coord0 + 1) = (r + 0.5) / page.grid_rows;
    }
  }
  return feats;
}

std::vector<std::int32_t> patch_feature_tokens(const Vocabulary& vocab, std::uint32_t sketch_dim) {
  std::vector<std::int32_t> out(patch_feature_dim(sketch_dim), -1);
  for (std::size_t t = 0; t < kRegionTypeCount; ++t) out[t] = static_cast<std::int32_t>(t);
  if (vocab.content_size <= sketch_dim) {
    for (std::uint32_t s = 0; s < vocab.content_size; ++s) {
      out[kRegionTypeCount + s] = static_cast<std::int32_t>(vocab.content_token(s));
    }
  }
  return out;
}

Descriptor generate_descriptor(const PageSpec& page) {
  Descriptor d;
  d.page_id = page.page_id;
  auto row_blank = [&](std::uint32_t r) {
    return std::none_of(page.regions.begin(), page.regions.end(), [&](const Region& reg) {
      return r >= reg.row && r < reg.row + reg.rows;
    });
  };
  auto emit_span = [&](std::uint32_t h) {
    if (h >= 2) d.tokens.push_back(Vocabulary::span_token(h));
  };
  bool first = true;
  std::uint32_t r = 0;
  while (r < page.grid_rows) {
    std::vector<const Region*> starting;
    for (const auto& reg : page.regions) {
      if (reg.row == r) starting.push_back(&reg);
    }
    const std::uint32_t rel = first ? Vocabulary::kTop : Vocabulary::kBelow;
    first = false;
    if (starting.empty()) {
      std::uint32_t h = 0;
      while (r + h < page.grid_rows && row_blank(r + h)) ++h;
      if (h == 0) h = 1;  // unreachable for band layouts
      d.tokens.push_back(Vocabulary::kBlank);
      d.tokens.push_back(rel);
      emit_span(h);
      r += h;
      continue;
    }
    std::sort(starting.begin(), starting.end(),
              [](const Region* a, const Region* b) { return a->col < b->col; });
    d.tokens.push_back(Vocabulary::type_token(starting.front()->type));
    d.tokens.push_back(rel);
    emit_span(starting.front()->rows);
    for (std::size_t i = 1; i < starting.size(); ++i) {
      d.tokens.push_back(Vocabulary::type_token(starting[i]->type));
      d.tokens.push_back(Vocabulary::kRight);
    }
    r += starting.front()->rows;
  }
  return d;
}

LayoutKey layout_key(const PageSpec& page) {
  LayoutKey key;
  for (const auto& r : page.regions) {
    key.push_back({static_cast<std::uint32_t>(r.type), r.row, r.col, r.rows, r.cols});
  }
  std::sort(key.begin(), key.end(), [](const auto& a, const auto& b) {
    return std::tie(a[1], a[2]) < std::tie(b[1], b[2]);
  });
  return key;
}

LayoutKey decode_descriptor(std::span<const std::uint32_t> tokens, std::uint32_t grid_rows,
                            std::uint32_t grid_cols) {
  LayoutKey key;
  std::uint32_t row = 0;
  std::size_t i = 0;
  const std::uint32_t half = grid_cols / 2;
  auto bad = [](const std::string& why) { return ArgumentError("malformed descriptor: " + why); };
  while (i < tokens.size()) {
    const std::uint32_t head = tokens[i];
    if (i + 1 >= tokens.size()) throw bad("dangling token");
    const std::uint32_t rel = tokens[i + 1];
    if (rel != (key.empty() && row == 0 ? Vocabulary::kTop : Vocabulary::kBelow)) {
      throw bad("unexpected relation token");
    }
    i += 2;
    std::uint32_t h = 1;
    if (i < tokens.size() && tokens[i] >= Vocabulary::span_token(2) &&
        tokens[i] <= Vocabulary::span_token(Vocabulary::kMaxGridRows)) {
      h = tokens[i] - Vocabulary::kSpanBase;
      ++i;
    }
    if (row + h > grid_rows) throw bad("band exceeds grid");
    if (head == Vocabulary::kBlank) {
      row += h;
      continue;
    }
    if (head >= kRegionTypeCount) throw bad("expected region type");
    const bool split = i + 1 < tokens.size() && tokens[i + 1] == Vocabulary::kRight;
    if (split) {
      if (tokens[i] >= kRegionTypeCount) throw bad("expected right-hand region type");
      key.push_back({head, row, 0, h, half});
      key.push_back({tokens[i], row, half, h, grid_cols - half});
      i += 2;
    } else {
      key.push_back({head, row, 0, h, grid_cols});
    }
    row += h;
  }
  if (row != grid_rows) throw bad("bands do not cover the grid");
  return key;
}

LayoutFeatures layout_features(const PageSpec& page) {
  LayoutFeatures f;
  for (const auto& r : page.regions) {
    switch (r.type) {
      case RegionType::Text: ++f.n_text; break;
      case RegionType::Figure: ++f.n_image; break;
      case RegionType::List: ++f.n_list; break;
      default: break;
    }
    if (r.type == RegionType::Figure || r.type == RegionType::Table) ++f.n_visual_elements;
    f.n_words += r.word_count;
  }
  return f;
}

std::vector<std::array<double, 2>> region_centers(const PageSpec& page) {
  std::vector<std::array<double, 2>> out;
  for (const auto& r : page.regions) {
    out.push_back({(r.col + 0.5 * r.cols) / page.grid_cols, (r.row + 0.5 * r.rows) / page.grid_rows});
  }
  return out;
}

bool satisfies_pattern(const PageSpec& page, std::span<const std::uint32_t> content,
                       const LayoutPattern& pattern) {
  for (const auto& x : page.regions) {
    if (x.type != pattern.first || !contains_all(x, content)) continue;
    for (const auto& y : page.regions) {
      if (&x != &y && y.type == pattern.second && related(x, y, pattern.relation)) return true;
    }
  }
  return false;
}

LayoutPattern query_pattern(const QuerySpec& q) {
  if (q.qtype != QueryType::Global || q.tokens.size() < 3) {
    throw ArgumentError("query " + std::to_string(q.query_id) + " carries no layout pattern");
  }
  const std::size_t n = q.tokens.size();
  return {static_cast<RegionType>(q.tokens[n - 3]), static_cast<RegionType>(q.tokens[n - 2]),
          q.tokens[n - 1]};
}

std::vector<std::uint32_t> query_content(const QuerySpec& q, const Vocabulary& vocab) {
  std::vector<std::uint32_t> out;
  for (std::uint32_t t : q.tokens) {
    if (vocab.is_content(t)) out.push_back(t);
  }
  return out;
}

std::vector<QuerySpec> sample_training_queries(const Corpus& corpus, SplitName split,
                                               std::size_t per_page, std::uint64_t seed,
                                               std::optional<double> global_fraction) {
  const double p_global = global_fraction.value_or(corpus.params.global_fraction);
  if (!(p_global >= 0.0 && p_global <= 1.0))
    throw ConfigError("sample_training_queries: global_fraction must be in [0, 1]");
  Rng rng(seed);
  const auto& members = corpus.split_pages(split);
  std::vector<QuerySpec> out;
  auto next_id = static_cast<std::uint32_t>(corpus.queries.size());
  for (std::uint32_t pid : members) {
    const PageSpec& page = corpus.page(pid);
    std::vector<std::tuple<std::size_t, std::size_t, std::uint32_t>> patterns;
    for (std::size_t x = 0; x < page.regions.size(); ++x) {
      if (page.regions[x].tokens.size() < 2) continue;
      for (std::size_t y = 0; y < page.regions.size(); ++y) {
        if (x == y) continue;
        for (std::uint32_t rel : {Vocabulary::kBelow, Vocabulary::kRight}) {
          if (related(page.regions[x], page.regions[y], rel)) patterns.emplace_back(x, y, rel);
        }
      }
    }
    for (std::size_t k = 0; k < per_page; ++k) {
      QuerySpec q;
      q.query_id = next_id++;
      q.source_page = pid;
      q.qtype = !patterns.empty() && unit(rng) < p_global ? QueryType::Global : QueryType::Local;
      if (q.qtype == QueryType::Global) {
        const auto [xi, yi, rel] =
            patterns[uniform(rng, 0, static_cast<std::uint32_t>(patterns.size() - 1))];
        q.tokens = sample_tokens(rng, page.regions[xi].tokens, 2);
        q.tokens.push_back(Vocabulary::type_token(page.regions[xi].type));
        q.tokens.push_back(Vocabulary::type_token(page.regions[yi].type));
        q.tokens.push_back(rel);
      } else {
        q.tokens = local_query_tokens(rng, page, SIZE_MAX);
      }
      const auto content = query_content(q, corpus.vocab);
      for (std::uint32_t other : members) {
        const PageSpec& cand = corpus.page(other);
        if (q.qtype == QueryType::Global) {
          if (satisfies_pattern(cand, content, query_pattern(q))) {
            q.relevant.push_back(other);
          } else if (page_contains_all(cand, content)) {
            q.distractors.push_back(other);
          }
        } else if (page_contains_all(cand, content)) {
          q.relevant.push_back(other);
        }
      }
      out.push_back(std::move(q));
    }
  }
  return out;
}

ValidationReport validate_corpus(const Corpus& corpus) {
  ValidationReport rep;
  auto fail = [&](std::string msg) {
    rep.ok = false;
    rep.problems.push_back(std::move(msg));
  };

  std::map<std::uint32_t, SplitName> owner;
  for (SplitName s : {SplitName::Train, SplitName::Dev, SplitName::Test}) {
    for (std::uint32_t id : corpus.split_pages(s)) {
      if (!owner.emplace(id, s).second) fail("page " + std::to_string(id) + " in two splits");
    }
  }
  if (owner.size() != corpus.pages.size()) fail("splits do not cover every page");

  for (std::size_t i = 0; i < corpus.pages.size(); ++i) {
    const PageSpec& p = corpus.pages[i];
    const std::string tag = "page " + std::to_string(i);
    if (p.page_id != i) fail(tag + ": id mismatch");
    if (p.regions.empty()) fail(tag + ": no regions");
    std::vector<int> cover(static_cast<std::size_t>(p.grid_rows) * p.grid_cols, 0);
    for (const auto& r : p.regions) {
      if (r.row + r.rows > p.grid_rows || r.col + r.cols > p.grid_cols || r.rows == 0 ||
          r.cols == 0) {
        fail(tag + ": region outside grid");
        continue;
      }
      for (std::uint32_t y = r.row; y < r.row + r.rows; ++y) {
        for (std::uint32_t x = r.col; x < r.col + r.cols; ++x) {
          if (++cover[static_cast<std::size_t>(y) * p.grid_cols + x] > 1) {
            fail(tag + ": overlapping regions");
          }
        }
      }
      for (std::uint32_t t : r.tokens) {
        if (!corpus.vocab.is_content(t)) fail(tag + ": non-content token in region");
      }
    }
  }

  if (corpus.has_descriptors()) {
    std::map<LayoutKey, std::vector<std::uint32_t>> by_layout;
    std::map<std::vector<std::uint32_t>, LayoutKey> by_tokens;
    for (const auto& p : corpus.pages) {
      const Descriptor& d = corpus.descriptor(p.page_id);
      const std::string tag = "descriptor " + std::to_string(p.page_id);
      if (d != generate_descriptor(p)) fail(tag + ": not canonical");
      for (std::uint32_t t : d.tokens) {
        if (corpus.vocab.is_content(t)) fail(tag + ": contains a content token");
      }
      const LayoutKey key = layout_key(p);
      try {
        if (decode_descriptor(d.tokens, p.grid_rows, p.grid_cols) != key) {
          fail(tag + ": does not decode to the page layout");
        }
      } catch (const ArgumentError& e) {
        fail(tag + ": " + e.what());
      }
      auto [it, fresh] = by_tokens.emplace(d.tokens, key);
      if (!fresh && it->second != key) fail(tag + ": two layouts share one descriptor");
      auto [jt, fresh2] = by_layout.emplace(key, d.tokens);
      if (!fresh2 && jt->second != d.tokens) fail(tag + ": one layout, two descriptors");
    }
  }

  for (const auto& q : corpus.queries) {
    const std::string tag = "query " + std::to_string(q.query_id);
    if (q.relevant.empty()) {
      fail(tag + ": no relevant page");
      continue;
    }
    const auto src = owner.find(q.source_page);
    if (src == owner.end()) {
      fail(tag + ": unknown source page");
      continue;
    }
    const std::vector<std::uint32_t> content = query_content(q, corpus.vocab);
    if (content.empty()) fail(tag + ": no content tokens");
    for (std::uint32_t pid : q.relevant) {
      const auto it = owner.find(pid);
      if (it == owner.end() || it->second != src->second) {
        fail(tag + ": relevant page outside the query's split");
      }
    }
    const auto& members = corpus.split_pages(src->second);
    if (q.qtype == QueryType::Global) {
      const LayoutPattern pat = query_pattern(q);
      for (std::uint32_t pid : members) {
        const bool sat = satisfies_pattern(corpus.page(pid), content, pat);
        const bool listed = std::count(q.relevant.begin(), q.relevant.end(), pid) > 0;
        if (sat != listed) fail(tag + ": relevant set disagrees with pattern on page " +
                                std::to_string(pid));
      }
      if (q.distractors.empty()) fail(tag + ": global query without distractor");
      for (std::uint32_t pid : q.distractors) {
        const PageSpec& dp = corpus.page(pid);
        if (!shares_token(dp, content)) fail(tag + ": distractor shares no content token");
        if (satisfies_pattern(dp, content, pat)) fail(tag + ": distractor satisfies the pattern");
        if (layout_key(dp) == layout_key(corpus.page(q.source_page))) {
          fail(tag + ": distractor has the target's arrangement");
        }
      }
    } else {
      for (std::uint32_t pid : members) {
        const bool has = page_contains_all(corpus.page(pid), content);
        const bool listed = std::count(q.relevant.begin(), q.relevant.end(), pid) > 0;
        if (has != listed) fail(tag + ": relevant set disagrees with content on page " +
                                std::to_string(pid));
      }
    }
  }
  return rep;
}

namespace {

using ojson = nlohmann::ordered_json;

ojson params_json(const CorpusParams& p) {
  return ojson{{"seed", p.seed},
               {"n_pages", p.n_pages},
               {"n_queries", p.n_queries},
               {"grid_rows", p.grid_rows},
               {"grid_cols", p.grid_cols},
               {"content_vocab", p.content_vocab},
               {"sketch_dim", p.sketch_dim},
               {"global_fraction", p.global_fraction},
               {"train_fraction", p.train_fraction},
               {"dev_fraction", p.dev_fraction}};
}

CorpusParams params_from(const ojson& j) {
  CorpusParams p;
  p.seed = j.at("seed").get<std::uint64_t>();
  p.n_pages = j.at("n_pages").get<std::uint32_t>();
  p.n_queries = j.at("n_queries").get<std::uint32_t>();
  p.grid_rows = j.at("grid_rows").get<std::uint32_t>();
  p.grid_cols = j.at("grid_cols").get<std::uint32_t>();
  p.content_vocab = j.at("content_vocab").get<std::uint32_t>();
  p.sketch_dim = j.at("sketch_dim").get<std::uint32_t>();
  p.global_fraction = j.at("global_fraction").get<double>();
  p.train_fraction = j.at("train_fraction").get<double>();
  p.dev_fraction = j.at("dev_fraction").get<double>();
  return p;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

ojson header_json(const Corpus& c, const char* file) {
  ojson h{{"kind", "header"},
          {"schema_version", kCorpusSchemaVersion},
          {"file", file},
          {"vocab_size", c.vocab.size()},
          {"params", params_json(c.params)}};
  if (std::string_view(file) == kDescriptorFile) h["grammar_version"] = kDescriptorGrammarVersion;
  return h;
}

void check_header(const ojson& h, const std::filesystem::path& path) {
  if (h.value("kind", "") != "header") throw IntegrityError(path.string() + ": missing header");
  const auto v = h.value("schema_version", 0u);
  if (v != kCorpusSchemaVersion) {
    throw IntegrityError(path.string() + ": unsupported schema version " + std::to_string(v));
  }
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  auto out = open_out(dir / kCorpusFile);
  out << header_json(corpus, kCorpusFile).dump() << '\n';
  for (const auto& p : corpus.pages) {
    ojson regions = ojson::array();
    for (const auto& r : p.regions) {
      regions.push_back(ojson{{"type", region_type_name(r.type)},
                              {"row", r.row},
                              {"col", r.col},
                              {"rows", r.rows},
                              {"cols", r.cols},
                              {"tokens", r.tokens},
                              {"word_count", r.word_count}});
    }
    out << ojson{{"kind", "page"},
                 {"id", p.page_id},
                 {"grid", {p.grid_rows, p.grid_cols}},
                 {"regions", regions}}
               .dump()
        << '\n';
  }
  for (const auto& q : corpus.queries) {
    out << ojson{{"kind", "query"},
                 {"id", q.query_id},
                 {"qtype", query_type_name(q.qtype)},
                 {"tokens", q.tokens},
                 {"source", q.source_page},
                 {"relevant", q.relevant},
                 {"distractors", q.distractors}}
               .dump()
        << '\n';
  }
  for (SplitName s : {SplitName::Train, SplitName::Dev, SplitName::Test}) {
    out << ojson{{"kind", "split"}, {"name", split_name(s)}, {"pages", corpus.split_pages(s)}}
               .dump()
        << '\n';
  }
  if (!out) throw IoError("write failed for " + (dir / kCorpusFile).string());

  if (corpus.has_descriptors()) {
    auto dout = open_out(dir / kDescriptorFile);
    dout << header_json(corpus, kDescriptorFile).dump() << '\n';
    for (const auto& d : corpus.descriptors) {
      dout << ojson{{"kind", "descriptor"}, {"page", d.page_id}, {"tokens", d.tokens}}.dump()
           << '\n';
    }
    if (!dout) throw IoError("write failed for " + (dir / kDescriptorFile).string());
  }
}

Corpus load_corpus(const std::filesystem::path& dir, bool with_descriptors) {
  const auto path = dir / kCorpusFile;
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  Corpus c;
  std::string line;
  bool header_seen = false;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const ojson j = ojson::parse(line);
      if (!header_seen) {
        check_header(j, path);
        c.params = params_from(j.at("params"));
        c.vocab.content_size = c.params.content_vocab;
        header_seen = true;
        continue;
      }
      const std::string kind = j.at("kind").get<std::string>();
      if (kind == "page") {
        PageSpec p;
        p.page_id = j.at("id").get<std::uint32_t>();
        p.grid_rows = j.at("grid").at(0).get<std::uint32_t>();
        p.grid_cols = j.at("grid").at(1).get<std::uint32_t>();
        for (const auto& r : j.at("regions")) {
          Region reg;
          reg.type = parse_region_type(r.at("type").get<std::string>());
          reg.row = r.at("row").get<std::uint32_t>();
          reg.col = r.at("col").get<std::uint32_t>();
          reg.rows = r.at("rows").get<std::uint32_t>();
          reg.cols = r.at("cols").get<std::uint32_t>();
          reg.tokens = r.at("tokens").get<std::vector<std::uint32_t>>();
          reg.word_count = r.at("word_count").get<std::uint32_t>();
          p.regions.push_back(std::move(reg));
        }
        if (p.page_id != c.pages.size()) throw IntegrityError("page records out of order");
        c.pages.push_back(std::move(p));
      } else if (kind == "query") {
        QuerySpec q;
        q.query_id = j.at("id").get<std::uint32_t>();
        q.qtype = parse_query_type(j.at("qtype").get<std::string>());
        q.tokens = j.at("tokens").get<std::vector<std::uint32_t>>();
        q.source_page = j.at("source").get<std::uint32_t>();
        q.relevant = j.at("relevant").get<std::vector<std::uint32_t>>();
        q.distractors = j.at("distractors").get<std::vector<std::uint32_t>>();
        c.queries.push_back(std::move(q));
      } else if (kind == "split") {
        const SplitName s = parse_split(j.at("name").get<std::string>());
        auto ids = j.at("pages").get<std::vector<std::uint32_t>>();
        (s == SplitName::Train ? c.splits.train
         : s == SplitName::Dev ? c.splits.dev
                               : c.splits.test) = std::move(ids);
      } else if (kind == "descriptor") {
        throw IntegrityError("descriptor records belong in " + std::string(kDescriptorFile));
      } else {
        throw IntegrityError("unknown record kind '" + kind + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(path.string() + ": " + e.what());
  }
  if (!header_seen) throw IntegrityError(path.string() + ": empty corpus file");

  if (with_descriptors) {
    const auto dpath = dir / kDescriptorFile;
    std::ifstream din(dpath);
    if (!din) {
      throw ConfigError("descriptors required but " + dpath.string() + " is missing");
    }
    bool dheader = false;
    try {
      while (std::getline(din, line)) {
        if (line.empty()) continue;
        const ojson j = ojson::parse(line);
        if (!dheader) {
          check_header(j, dpath);
          dheader = true;
          continue;
        }
        Descriptor d;
        d.page_id = j.at("page").get<std::uint32_t>();
        d.tokens = j.at("tokens").get<std::vector<std::uint32_t>>();
        if (d.page_id != c.descriptors.size()) throw IntegrityError("descriptors out of order");
        c.descriptors.push_back(std::move(d));
      }
    } catch (const nlohmann::json::exception& e) {
      throw IntegrityError(dpath.string() + ": " + e.what());
    }
    if (c.descriptors.size() != c.pages.size()) {
      throw IntegrityError("descriptor count does not match page count");
    }
  }
  return c;
}

}  // namespace glt
