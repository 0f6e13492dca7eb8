#include <cmath>
#include <sstream>

#include "doctest.h"
#include "glt/corpus.hpp"
#include "glt/errors.hpp"
#include "glt/eval.hpp"

using namespace glt;

namespace {

QueryResult result(std::uint32_t id, std::vector<std::uint32_t> ranking,
                   std::vector<std::uint32_t> relevant, QueryType t) {
  return {id, std::move(ranking), std::move(relevant), t};
}

struct Fixture {
  Corpus corpus;
  EncoderParams params;
  Fixture() {
    CorpusParams cp;
    cp.n_pages = 50;
    cp.n_queries = 60;
    corpus = generate_corpus(cp);
    EncoderConfig ec;
    ec.model_dim = 16;
    ec.retrieval_dim = 8;
    ec.layers = 1;
    ec.heads = 2;
    ec.ffn_dim = 32;
    ec.vocab_size = corpus.vocab.size();
    ec.patch_feature_dim = static_cast<std::uint32_t>(corpus.patch_feature_dim());
    ec.feature_tokens = patch_feature_tokens(corpus.vocab, cp.sketch_dim);
    params = init_params(ec);
  }
};

}  // namespace

TEST_CASE("summarize computes plain means") {
  std::vector<QueryResult> rs{result(3, {1, 2}, {2}, QueryType::Global),
                              result(1, {1, 2}, {1}, QueryType::Local),
                              result(2, {5, 6}, {}, QueryType::Local)};
  auto r = summarize("v", "d", rs, 5);
  CHECK(r.skipped == 1);
  REQUIRE(r.per_query.size() == 2);
  CHECK(r.per_query[0].query_id == 1);
  CHECK(r.per_query[1].query_id == 3);
  CHECK(r.mean_ndcg == doctest::Approx((1.0 + 1.0 / std::log2(3.0)) / 2.0).epsilon(1e-12));
  CHECK(r.mean_map == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("qtype breakdown") {
  SUBCASE("absent types have no entry") {
    auto r = summarize("v", "d", {result(1, {1}, {1}, QueryType::Local)});
    auto b = qtype_breakdown(r);
    CHECK(b.count(QueryType::Local) == 1);
    CHECK(b.count(QueryType::Global) == 0);
  }
  SUBCASE("type means recombine to the overall mean") {
    std::vector<QueryResult> rs;
    for (std::uint32_t i = 0; i < 17; ++i)
      rs.push_back(result(i, {i % 4, 9, 8, 7, 6, 5}, {i % 3},
                          i % 3 ? QueryType::Global : QueryType::Local));
    auto r = summarize("v", "d", rs);
    auto b = qtype_breakdown(r);
    double n = 0, ndcg = 0, map = 0;
    for (const auto& [t, m] : b) {
      n += static_cast<double>(m.count);
      ndcg += m.ndcg * static_cast<double>(m.count);
      map += m.map * static_cast<double>(m.count);
    }
    CHECK(n == 17);
    CHECK(std::abs(ndcg / n - r.mean_ndcg) <= 1e-9);
    CHECK(std::abs(map / n - r.mean_map) <= 1e-9);
  }
}

TEST_CASE("compare_reports pairs by query id") {
  std::vector<QueryResult> a, b;
  for (std::uint32_t i = 0; i < 8; ++i) {
    a.push_back(result(i, {i}, {i}, QueryType::Local));
    b.push_back(result(i, {99, i}, {i}, QueryType::Local));
  }
  auto ra = summarize("a", "d", a), rb = summarize("b", "d", b);
  auto s = compare_reports(ra, rb);
  REQUIRE(s.has_value());
  CHECK(s->n == 8);
  CHECK(s->p_value == doctest::Approx(2.0 / 256.0));
  CHECK(s->method_a == "a");
  CHECK_FALSE(compare_reports(ra, ra).has_value());
}

TEST_CASE("cross-context names") {
  for (auto m : {CrossContext::Off, CrossContext::Frozen, CrossContext::Finetuned})
    CHECK(parse_cross_context(cross_context_name(m)) == m);
  CHECK_THROWS_AS(parse_cross_context("zero-shot"), ConfigError);
}

TEST_CASE("evaluation from parameters") {
  Fixture f;
  auto report = evaluate_split(f.params, f.corpus, SplitName::Test);
  CHECK(report.dataset == "synthetic/test");
  CHECK(report.per_query.size() + report.skipped == f.corpus.split_queries(SplitName::Test).size());
  double sum = 0.0;
  for (const auto& q : report.per_query) sum += q.ndcg;
  CHECK(std::abs(sum / static_cast<double>(report.per_query.size()) - report.mean_ndcg) <= 1e-9);

  SUBCASE("normal mode works without descriptors") {
    Corpus bare = f.corpus;
    bare.descriptors.clear();
    auto again = evaluate_split(f.params, bare, SplitName::Test);
    CHECK(again.mean_ndcg == report.mean_ndcg);
  }
  SUBCASE("cross-context encodings need descriptors") {
    Corpus bare = f.corpus;
    bare.descriptors.clear();
    CHECK_THROWS_AS(
        encode_split_pages_with_descriptors(f.params, bare, SplitName::Test, CrossContext::Frozen),
        ConfigError);
    CHECK_THROWS_AS(encode_split_pages_with_descriptors(f.params, f.corpus, SplitName::Test,
                                                        CrossContext::Off),
                    ConfigError);
    auto frozen = encode_split_pages_with_descriptors(f.params, f.corpus, SplitName::Test,
                                                      CrossContext::Frozen);
    auto plain = encode_split_pages(f.params, f.corpus, SplitName::Test);
    REQUIRE(frozen.size() == plain.size());
    const auto& desc = f.corpus.descriptor(plain[0].page_id);
    CHECK(frozen[0].patches.rows() == plain[0].patches.rows() + desc.tokens.size());
  }
}

TEST_CASE("ablation table") {
  Fixture f;
  std::map<std::string, const EncoderParams*> cps{{kRoleFull, &f.params}};

  SUBCASE("flag and pooling rows need only the full checkpoint") {
    std::vector<std::string> rows{kRowFull, kRowNoPatches, kRowPoolMean};
    auto t = run_ablations(f.corpus, cps, rows);
    REQUIRE(t.rows.size() == 3);
    CHECK(t.rows[0].variant == kRowFull);
    CHECK(t.rows[0].mean_ndcg == evaluate_split(f.params, f.corpus, SplitName::Test).mean_ndcg);
  }
  SUBCASE("missing loss checkpoint names the row") {
    std::vector<std::string> rows{kRowFull, kRowNoLossLocal};
    try {
      run_ablations(f.corpus, cps, rows);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(kRowNoLossLocal) != std::string::npos);
    }
  }
  SUBCASE("unknown row") {
    CHECK_THROWS_AS(run_ablations(f.corpus, cps, {"w/o everything"}), ConfigError);
  }
  SUBCASE("all nine rows with every role") {
    cps[kRoleNoLossGlobal] = &f.params;
    cps[kRoleNoLossLocal] = &f.params;
    auto t = run_ablations(f.corpus, cps, ablation_rows());
    CHECK(t.rows.size() == 9);
    std::ostringstream table, tsv;
    write_table(table, t.rows, t.significance);
    write_tsv(tsv, t.rows, t.significance);
    CHECK(table.str().find("pool_median") != std::string::npos);
    CHECK(tsv.str().rfind("variant\tdataset\tmetric\tvalue\n", 0) == 0);
    CHECK(tsv.str().find("full\tsynthetic/test\tndcg@5\t") != std::string::npos);
  }
}

TEST_CASE("layout contrast splits queries by outcome") {
  std::vector<QueryResult> a, b;
  for (std::uint32_t i = 0; i < 6; ++i) {
    a.push_back(result(i, {i}, {i}, QueryType::Global));
    b.push_back(result(i, i < 4 ? std::vector<std::uint32_t>{99} : std::vector<std::uint32_t>{i},
                       {i}, QueryType::Global));
  }
  CorpusParams cp;
  cp.n_pages = 50;
  cp.n_queries = 50;
  Corpus c = generate_corpus(cp);
  auto lc = layout_contrast(summarize("a", "d", a), summarize("b", "d", b), c);
  CHECK(lc.improved.pages == 4);
  CHECK(lc.failed.pages == 0);
}
