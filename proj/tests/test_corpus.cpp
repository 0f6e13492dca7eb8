#include <algorithm>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "glt/corpus.hpp"
#include "glt/errors.hpp"
#include "glt/store.hpp"

using namespace glt;
namespace fs = std::filesystem;

namespace {

CorpusParams small(std::uint64_t seed = 7) {
  CorpusParams p;
  p.seed = seed;
  p.n_pages = 50;
  p.n_queries = 50;
  return p;
}

Region region(RegionType t, std::uint32_t row, std::uint32_t col, std::uint32_t rows,
              std::uint32_t cols, std::vector<std::uint32_t> tokens = {}, std::uint32_t words = 0) {
  Region r;
  r.type = t;
  r.row = row;
  r.col = col;
  r.rows = rows;
  r.cols = cols;
  r.tokens = std::move(tokens);
  r.word_count = words;
  return r;
}

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("glt_corpus_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("generation is deterministic") {
  Corpus a = generate_corpus(small());
  Corpus b = generate_corpus(small());
  CHECK(a.pages == b.pages);
  CHECK(a.descriptors == b.descriptors);
  CHECK(a.queries == b.queries);
  CHECK(a.splits == b.splits);
  auto da = scratch_dir("a"), db = scratch_dir("b");
  save_corpus(a, da);
  save_corpus(b, db);
  CHECK(read_file(da / kCorpusFile) == read_file(db / kCorpusFile));
  CHECK(read_file(da / kDescriptorFile) == read_file(db / kDescriptorFile));
  fs::remove_all(da);
  fs::remove_all(db);
}

TEST_CASE("referential integrity and validator") {
  Corpus c = generate_corpus(small());
  CHECK(c.pages.size() == 50);
  CHECK(c.descriptors.size() == 50);
  CHECK(c.queries.size() == 50);
  for (const auto& q : c.queries) {
    CHECK_FALSE(q.relevant.empty());
    for (auto id : q.relevant) CHECK(id < c.pages.size());
  }
  auto report = validate_corpus(c);
  CHECK(report.ok);
  CHECK(report.problems.empty());
}

TEST_CASE("splits are disjoint and cover every page") {
  Corpus c = generate_corpus(CorpusParams{});
  std::set<std::uint32_t> seen;
  for (auto s : {SplitName::Train, SplitName::Dev, SplitName::Test})
    for (auto id : c.split_pages(s)) CHECK(seen.insert(id).second);
  CHECK(seen.size() == c.pages.size());
}

TEST_CASE("default corpus mixes query types") {
  Corpus c = generate_corpus(CorpusParams{});
  auto globals = std::count_if(c.queries.begin(), c.queries.end(),
                               [](const QuerySpec& q) { return q.qtype == QueryType::Global; });
  CHECK(globals == 100);
}

TEST_CASE("global queries come with layout distractors") {
  Corpus c = generate_corpus(CorpusParams{});
  std::size_t checked = 0;
  for (const auto& q : c.queries) {
    if (q.qtype != QueryType::Global) continue;
    auto content = query_content(q, c.vocab);
    auto pattern = query_pattern(q);
    for (auto id : q.relevant) CHECK(satisfies_pattern(c.page(id), content, pattern));
    CHECK_FALSE(q.distractors.empty());
    for (auto id : q.distractors) {
      CHECK_FALSE(satisfies_pattern(c.page(id), content, pattern));
      bool shares = false;
      for (const auto& r : c.page(id).regions)
        for (auto t : r.tokens)
          shares |= std::find(content.begin(), content.end(), t) != content.end();
      CHECK(shares);
      CHECK(layout_key(c.page(id)) != layout_key(c.page(q.source_page)));
    }
    ++checked;
  }
  CHECK(checked > 0);
}

TEST_CASE("generator rejects unusable parameters") {
  auto p = small();
  p.n_pages = 5;
  CHECK_THROWS_AS(generate_corpus(p), ConfigError);
  p = small();
  p.n_queries = 9;
  CHECK_THROWS_AS(generate_corpus(p), ConfigError);
  p = small();
  p.content_vocab = 4;
  CHECK_THROWS_AS(generate_corpus(p), ConfigError);
}

TEST_CASE("render_patch_features") {
  Vocabulary v;
  PageSpec page;
  page.grid_rows = 2;
  page.grid_cols = 2;
  page.regions.push_back(region(RegionType::Table, 0, 0, 1, 2, {v.content_token(3)}, 10));
  Matrix f = render_patch_features(page, v, 8);
  const std::size_t dim = patch_feature_dim(8);
  CHECK(f.rows() == 4);
  CHECK(f.cols() == dim);

  SUBCASE("cells of one region share type and sketch blocks") {
    for (std::size_t c = 0; c < kRegionTypeCount + 8; ++c) CHECK(f(0, c) == f(1, c));
    CHECK(f(0, static_cast<std::size_t>(RegionType::Table)) == 1.0);
    CHECK(f(0, kRegionTypeCount + 3) > 0.0);
    CHECK((f(0, dim - 2) != f(1, dim - 2) || f(0, dim - 1) != f(1, dim - 1)));
  }
  SUBCASE("an empty cell carries only its coordinates") {
    for (std::size_t c = 0; c < kRegionTypeCount + 8; ++c) CHECK(f(2, c) == 0.0);
    CHECK(f(2, dim - 2) + f(2, dim - 1) > 0.0);
  }
  SUBCASE("rendering is deterministic") { CHECK(render_patch_features(page, v, 8) == f); }
}

TEST_CASE("descriptor examples") {
  Vocabulary v;
  PageSpec page;
  page.grid_rows = 2;
  page.grid_cols = 2;
  page.regions.push_back(region(RegionType::Header, 0, 0, 1, 2, {v.content_token(1)}, 3));
  page.regions.push_back(region(RegionType::Table, 1, 0, 1, 2, {v.content_token(2)}, 5));
  auto d = generate_descriptor(page);
  CHECK(d.tokens == std::vector<std::uint32_t>{Vocabulary::type_token(RegionType::Header),
                                               Vocabulary::kTop,
                                               Vocabulary::type_token(RegionType::Table),
                                               Vocabulary::kBelow});

  SUBCASE("content does not reach the descriptor") {
    PageSpec other = page;
    other.regions[0].tokens = {v.content_token(40)};
    other.regions[1].word_count = 99;
    CHECK(generate_descriptor(other).tokens == d.tokens);
    for (auto t : d.tokens) CHECK_FALSE(v.is_content(t));
  }
  SUBCASE("moving regions changes the descriptor") {
    PageSpec moved = page;
    std::swap(moved.regions[0].type, moved.regions[1].type);
    CHECK(generate_descriptor(moved).tokens != d.tokens);
  }
  SUBCASE("decoding inverts the layout") {
    CHECK(decode_descriptor(d.tokens, 2, 2) == layout_key(page));
  }
}

TEST_CASE("descriptors are injective on the generated layouts") {
  Corpus c = generate_corpus(CorpusParams{});
  for (std::size_t i = 0; i < c.pages.size(); ++i)
    for (std::size_t j = i + 1; j < c.pages.size(); ++j) {
      bool same_layout = layout_key(c.pages[i]) == layout_key(c.pages[j]);
      bool same_desc = c.descriptors[i].tokens == c.descriptors[j].tokens;
      CHECK(same_layout == same_desc);
    }
}

TEST_CASE("layout_features") {
  PageSpec page;
  page.regions.push_back(region(RegionType::Text, 0, 0, 1, 2, {}, 10));
  page.regions.push_back(region(RegionType::Text, 1, 0, 1, 2, {}, 20));
  page.regions.push_back(region(RegionType::Figure, 2, 0, 2, 4, {}, 0));
  CHECK(layout_features(page) == LayoutFeatures{2, 1, 0, 30, 1});
}

TEST_CASE("every generated page has a region") {
  Corpus c = generate_corpus(CorpusParams{});
  for (const auto& p : c.pages) CHECK_FALSE(p.regions.empty());
}

TEST_CASE("corpus files round-trip") {
  Corpus c = generate_corpus(small(11));
  auto dir = scratch_dir("rt");
  save_corpus(c, dir);
  Corpus back = load_corpus(dir, true);
  CHECK(back.pages == c.pages);
  CHECK(back.descriptors == c.descriptors);
  CHECK(back.queries == c.queries);
  CHECK(back.splits == c.splits);
  CHECK(back.params == c.params);

  Corpus bare = load_corpus(dir, false);
  CHECK_FALSE(bare.has_descriptors());
  fs::remove(dir / kDescriptorFile);
  CHECK_NOTHROW(load_corpus(dir, false));
  CHECK_THROWS_AS(load_corpus(dir, true), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("vocabulary names round-trip") {
  Vocabulary v;
  for (std::uint32_t id = 0; id < v.size(); ++id) CHECK(v.parse(v.name(id)) == id);
  CHECK_THROWS_AS(v.parse("nonsense"), ArgumentError);
  CHECK_THROWS_AS(v.name(v.size()), ArgumentError);
}

TEST_CASE("training query sampling stays inside the split") {
  Corpus c = generate_corpus(CorpusParams{});
  auto extra = sample_training_queries(c, SplitName::Train, 2, 5);
  std::set<std::uint32_t> train(c.splits.train.begin(), c.splits.train.end());
  CHECK(extra.size() == 2 * c.splits.train.size());
  CHECK(extra.front().query_id == c.queries.size());
  for (const auto& q : extra) {
    CHECK(train.count(q.source_page) == 1);
    for (auto id : q.relevant) CHECK(train.count(id) == 1);
    for (auto id : q.distractors) CHECK(train.count(id) == 1);
  }
  CHECK(sample_training_queries(c, SplitName::Train, 2, 5) == extra);
}

TEST_CASE("training query type mix") {
  Corpus c = generate_corpus(CorpusParams{});
  for (const auto& q : sample_training_queries(c, SplitName::Train, 3, 8, 0.0))
    CHECK(q.qtype == QueryType::Local);
  std::size_t global = 0;
  const auto all = sample_training_queries(c, SplitName::Train, 3, 8, 1.0);
  for (const auto& q : all) global += q.qtype == QueryType::Global;
  // pages without a relatable region pair fall back to local queries
  CHECK(global > all.size() * 9 / 10);
  CHECK_THROWS_AS(sample_training_queries(c, SplitName::Train, 1, 8, 1.5), ConfigError);
  CHECK_THROWS_AS(sample_training_queries(c, SplitName::Train, 1, 8, -0.1), ConfigError);
}
