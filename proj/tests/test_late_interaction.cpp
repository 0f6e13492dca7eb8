#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "glt/errors.hpp"
#include "glt/late_interaction.hpp"
#include "test_util.hpp"

using namespace glt;

namespace {

// Double loop over all active rows, written independently of the kernels.
double oracle_maxsim(const QueryEmbedding& q, const DocumentEmbedding& d, const ScoringFlags& f) {
  std::vector<std::span<const double>> qrows, drows;
  for (std::size_t i = 0; i < q.tokens.rows(); ++i) qrows.push_back(q.tokens.row(i));
  if (f.use_query_global) qrows.push_back(q.global);
  if (f.use_patches)
    for (std::size_t i = 0; i < d.patches.rows(); ++i) drows.push_back(d.patches.row(i));
  if (f.use_doc_global) drows.push_back(d.global);
  double total = 0.0;
  for (auto qr : qrows) {
    double best = -1e300;
    for (auto dr : drows) best = std::max(best, test::naive_dot(qr, dr));
    total += best;
  }
  return total;
}

const ScoringFlags kAllFlags[] = {
    {true, true, true},  {false, true, true},  {true, false, true}, {true, true, false},
    {false, false, true}, {false, true, false}};

}  // namespace

TEST_CASE("maxsim_score examples") {
  QueryEmbedding q{0, Matrix{{1.0, 0.0}}, {0.0, 1.0}};
  DocumentEmbedding d{0, Matrix{{1.0, 0.0}}, {0.0, 1.0}};
  CHECK(maxsim_score(q, d) == 2.0);
  CHECK(maxsim_score(q, d, {false, false, true}) == 1.0);

  QueryEmbedding q2{0, Matrix{{1.0, 0.0}, {0.0, 1.0}}, {0.6, 0.8}};
  DocumentEmbedding d2{0, Matrix{{0.8, 0.6}, {0.0, 1.0}}, {1.0, 0.0}};
  CHECK(maxsim_score(q2, d2) == doctest::Approx(2.96).epsilon(1e-15));
}

TEST_CASE("maxsim_score rejects flags with no document rows") {
  QueryEmbedding q{0, Matrix{{1.0, 0.0}}, {0.0, 1.0}};
  DocumentEmbedding d{0, Matrix{{1.0, 0.0}}, {0.0, 1.0}};
  CHECK_THROWS_AS(maxsim_score(q, d, {true, false, false}), ConfigError);
}

TEST_CASE("maxsim_score matches the double-loop oracle") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    std::size_t d = 1 + rng() % 16, lq = 1 + rng() % 8, ld = 1 + rng() % 8;
    auto q = test::random_query(rng, lq, d);
    auto doc = test::random_doc(rng, ld, d);
    for (const auto& f : kAllFlags)
      CHECK(std::abs(maxsim_score(q, doc, f) - oracle_maxsim(q, doc, f)) <= 1e-6);
  }
}

TEST_CASE("adding a document row never lowers the score") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    auto q = test::random_query(rng, 3, 8);
    auto doc = test::random_doc(rng, 4, 8);
    double before = maxsim_score(q, doc);
    auto extra = test::random_unit(rng, 8);
    doc.patches.append_row(extra);
    CHECK(maxsim_score(q, doc) >= before);
  }
}

TEST_CASE("the query global row adds its own best match") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    auto q = test::random_query(rng, 1 + trial % 5, 12);
    auto doc = test::random_doc(rng, 1 + trial % 7, 12);
    double best = -1e300;
    for (std::size_t r = 0; r < doc.patches.rows(); ++r)
      best = std::max(best, test::naive_dot(q.global, doc.patches.row(r)));
    best = std::max(best, test::naive_dot(q.global, doc.global));
    double with = maxsim_score(q, doc);
    double without = maxsim_score(q, doc, {false, true, true});
    CHECK(std::abs(with - (without + best)) <= 1e-12);
  }
}

TEST_CASE("maxsim_score is invariant to row order") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    auto q = test::random_query(rng, 5, 10);
    auto doc = test::random_doc(rng, 6, 10);
    double base = maxsim_score(q, doc);
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    DocumentEmbedding shuffled = doc;
    for (std::size_t r = 0; r < 6; ++r)
      std::copy(doc.patches.row(perm[r]).begin(), doc.patches.row(perm[r]).end(),
                shuffled.patches.row(r).begin());
    QueryEmbedding qs = q;
    std::vector<std::size_t> qperm(5);
    std::iota(qperm.begin(), qperm.end(), 0);
    std::shuffle(qperm.begin(), qperm.end(), rng);
    for (std::size_t r = 0; r < 5; ++r)
      std::copy(q.tokens.row(qperm[r]).begin(), q.tokens.row(qperm[r]).end(),
                qs.tokens.row(r).begin());
    CHECK(std::abs(maxsim_score(q, shuffled) - base) <= 1e-9);
    CHECK(std::abs(maxsim_score(qs, doc) - base) <= 1e-9);
  }
}

TEST_CASE("score_batch equals pairwise scoring") {
  std::mt19937_64 rng(9);
  SUBCASE("single pair") {
    auto q = test::random_query(rng, 2, 4);
    auto d = test::random_doc(rng, 3, 4);
    auto s = score_batch(std::span(&q, 1), std::span(&d, 1));
    CHECK(s.values.rows() == 1);
    CHECK(s.values(0, 0) == maxsim_score(q, d));
  }
  SUBCASE("random suite, all thread counts") {
    for (int trial = 0; trial < 100; ++trial) {
      std::size_t d = 1 + rng() % 16, bq = 1 + rng() % 8, bd = 1 + rng() % 8;
      std::vector<QueryEmbedding> qs;
      std::vector<DocumentEmbedding> ds;
      for (std::size_t i = 0; i < bq; ++i)
        qs.push_back(test::random_query(rng, 1 + rng() % 8, d, static_cast<std::uint32_t>(i)));
      for (std::size_t j = 0; j < bd; ++j)
        ds.push_back(test::random_doc(rng, 1 + rng() % 8, d, static_cast<std::uint32_t>(100 + j)));
      for (unsigned threads : {1u, 2u, 3u}) {
        auto s = score_batch(qs, ds, {}, threads);
        REQUIRE(s.values.rows() == bq);
        REQUIRE(s.values.cols() == bd);
        CHECK(s.query_ids[bq - 1] == bq - 1);
        CHECK(s.doc_ids[0] == 100);
        for (std::size_t i = 0; i < bq; ++i)
          for (std::size_t j = 0; j < bd; ++j) CHECK(s.values(i, j) == maxsim_score(qs[i], ds[j]));
      }
    }
  }
  SUBCASE("empty lists are rejected") {
    auto q = test::random_query(rng, 2, 4);
    CHECK_THROWS_AS(score_batch(std::span(&q, 1), std::span<const DocumentEmbedding>{}),
                    ConfigError);
  }
}

TEST_CASE("rank examples") {
  std::mt19937_64 rng(10);
  auto q = test::random_query(rng, 2, 4);

  SUBCASE("one document") {
    std::vector<DocumentEmbedding> docs{test::random_doc(rng, 3, 4, 42)};
    auto r = rank(q, docs, 10);
    REQUIRE(r.doc_ids.size() == 1);
    CHECK(r.doc_ids[0] == 42);
  }
  SUBCASE("ties go to the lower id") {
    auto d = test::random_doc(rng, 3, 4, 9);
    auto twin = d;
    twin.page_id = 4;
    std::vector<DocumentEmbedding> docs{d, twin};
    auto r = rank(q, docs, 2);
    CHECK(r.doc_ids == std::vector<std::uint32_t>{4, 9});
  }
  SUBCASE("agrees with a full sort") {
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<DocumentEmbedding> docs;
      for (std::uint32_t i = 0; i < 10; ++i) docs.push_back(test::random_doc(rng, 4, 4, i));
      std::vector<std::pair<double, std::uint32_t>> all;
      for (const auto& d : docs) all.emplace_back(-oracle_maxsim(q, d, {}), d.page_id);
      std::sort(all.begin(), all.end());
      auto r = rank(q, docs, 5);
      REQUIRE(r.doc_ids.size() == 5);
      for (std::size_t i = 0; i < 5; ++i) {
        CHECK(r.doc_ids[i] == all[i].second);
        CHECK(std::abs(r.scores[i] + all[i].first) <= 1e-9);
      }
      CHECK(std::is_sorted(r.scores.rbegin(), r.scores.rend()));
    }
  }
  SUBCASE("k larger than the index returns everything") {
    std::vector<DocumentEmbedding> docs;
    for (std::uint32_t i = 0; i < 3; ++i) docs.push_back(test::random_doc(rng, 2, 4, i));
    CHECK(rank(q, docs, 50).doc_ids.size() == 3);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(rank(q, std::vector<DocumentEmbedding>{}, 5), ConfigError);
    std::vector<DocumentEmbedding> docs{test::random_doc(rng, 3, 4)};
    CHECK_THROWS_AS(rank(q, docs, 0), ArgumentError);
  }
  SUBCASE("repeated calls are identical") {
    std::vector<DocumentEmbedding> docs;
    for (std::uint32_t i = 0; i < 30; ++i) docs.push_back(test::random_doc(rng, 5, 4, i));
    CHECK(rank(q, docs, 30) == rank(q, docs, 30));
  }
}

TEST_CASE("pool_patches examples") {
  Matrix eye{{1.0, 0.0}, {0.0, 1.0}};
  auto mean = pool_patches(eye, PoolingMode::Mean);
  CHECK(mean[0] == doctest::Approx(std::sqrt(0.5)));
  CHECK(mean[1] == doctest::Approx(std::sqrt(0.5)));
  auto mx = pool_patches(eye, PoolingMode::Max);
  CHECK(mx[0] == doctest::Approx(std::sqrt(0.5)));
  Matrix col{{0.0, 0.0}, {2.0, 0.0}, {4.0, 0.0}};
  auto med = pool_patches(col, PoolingMode::Median);
  CHECK(med == std::vector<double>{1.0, 0.0});
}

TEST_CASE("median pooling averages the middle pair") {
  Matrix m{{1.0, 0.0}, {3.0, 0.0}, {10.0, 0.0}, {-4.0, 0.0}};
  // column median of {-4, 1, 3, 10} is 2; normalized that is [1, 0]
  CHECK(pool_patches(m, PoolingMode::Median) == std::vector<double>{1.0, 0.0});
  Matrix m2{{1.0, 1.0}, {3.0, 5.0}};
  auto v = pool_patches(m2, PoolingMode::Median);
  CHECK(v[0] == doctest::Approx(2.0 / std::sqrt(13.0)));
  CHECK(v[1] == doctest::Approx(3.0 / std::sqrt(13.0)));
}

TEST_CASE("with_pooled_global replaces only the global vector") {
  std::mt19937_64 rng(12);
  auto d = test::random_doc(rng, 4, 6, 3);
  auto p = with_pooled_global(d, PoolingMode::Mean);
  CHECK(p.patches == d.patches);
  CHECK(p.page_id == 3);
  CHECK(p.global == pool_patches(d.patches, PoolingMode::Mean));
}

TEST_CASE("pooling names round-trip") {
  for (auto m : {PoolingMode::Mean, PoolingMode::Max, PoolingMode::Median})
    CHECK(parse_pooling(pooling_name(m)) == m);
  CHECK_THROWS_AS(parse_pooling("sum"), ArgumentError);
}

TEST_CASE("maxsim_trace picks the lowest index on ties") {
  Matrix q{{1.0, 0.0}};
  Matrix d{{0.0, 1.0}, {1.0, 0.0}, {1.0, 0.0}};
  auto t = maxsim_trace(q, d);
  CHECK(t.score == 1.0);
  CHECK(t.argmax == std::vector<std::size_t>{1});
}
