#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "glt/corpus.hpp"
#include "glt/encoder.hpp"
#include "glt/errors.hpp"
#include "glt/trainer.hpp"
#include "test_util.hpp"

using namespace glt;

namespace {

EncoderConfig tiny_config(std::uint32_t vocab = 40, std::uint32_t features = 12) {
  EncoderConfig c;
  c.model_dim = 16;
  c.retrieval_dim = 8;
  c.layers = 1;
  c.heads = 2;
  c.ffn_dim = 32;
  c.vocab_size = vocab;
  c.patch_feature_dim = features;
  c.max_seq = 24;
  c.seed = 0;
  return c;
}

void check_unit_rows(const Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) CHECK(std::abs(l2_norm(m.row(r)) - 1.0) <= 1e-6);
}

}  // namespace

TEST_CASE("encoder config validation") {
  auto c = tiny_config();
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.retrieval_dim = 32;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.layers = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.feature_tokens = {1, 2};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.feature_tokens.assign(12, -1);
  bad.feature_tokens[3] = 40;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("encode_page shape and norm contract") {
  auto params = init_params(tiny_config());
  std::mt19937_64 rng(30);
  auto feats = test::random_matrix(rng, 4, 12);
  auto d = encode_page(feats, params, 7);
  CHECK(d.page_id == 7);
  CHECK(d.patches.rows() == 4);
  CHECK(d.patches.cols() == 8);
  CHECK(d.global.size() == 8);
  check_unit_rows(d.patches);
  CHECK(std::abs(l2_norm(d.global) - 1.0) <= 1e-6);
}

TEST_CASE("encoding is deterministic") {
  std::mt19937_64 rng(31);
  auto feats = test::random_matrix(rng, 5, 12);
  auto a = encode_page(feats, init_params(tiny_config()));
  auto b = encode_page(feats, init_params(tiny_config()));
  CHECK(a.patches == b.patches);
  CHECK(a.global == b.global);
  std::vector<std::uint32_t> ids{3, 9, 1};
  auto params = init_params(tiny_config());
  auto q1 = encode_query(ids, params);
  auto q2 = encode_query(ids, params);
  CHECK(q1.tokens == q2.tokens);
  CHECK(q1.global == q2.global);
}

TEST_CASE("positions make the page global order-sensitive") {
  auto params = init_params(tiny_config());
  std::mt19937_64 rng(32);
  auto feats = test::random_matrix(rng, 4, 12);
  Matrix swapped;
  for (std::size_t r : {1u, 0u, 2u, 3u}) swapped.append_row(feats.row(r));
  CHECK(encode_page(feats, params).global != encode_page(swapped, params).global);
}

TEST_CASE("encode_query shapes and errors") {
  auto params = init_params(tiny_config());
  std::vector<std::uint32_t> one{5};
  auto q = encode_query(one, params);
  CHECK(q.tokens.rows() == 1);
  CHECK(forward(params, SequenceInput::text(one)).rows() == 2);
  std::vector<std::uint32_t> other{6, 7};
  CHECK(encode_query(other, params).global != q.global);
  std::vector<std::uint32_t> unknown{40};
  CHECK_THROWS_AS(encode_query(unknown, params), ArgumentError);
  CHECK_THROWS_AS(encode_query(std::vector<std::uint32_t>{}, params), ArgumentError);
  std::vector<std::uint32_t> too_long(24, 1);
  CHECK_THROWS_AS(encode_query(too_long, params), ConfigError);
  std::mt19937_64 rng(33);
  CHECK_THROWS_AS(encode_page(test::random_matrix(rng, 24, 12), params), ConfigError);
}

TEST_CASE("descriptor and query paths share weights") {
  auto params = init_params(tiny_config());
  std::vector<std::uint32_t> ids{0, 6, 2, 7, 11};
  auto desc = encode_descriptor(ids, params);
  auto q = encode_query(ids, params);
  CHECK(desc.tokens.rows() == 5);
  CHECK(desc.tokens == q.tokens);
  CHECK(desc.global == q.global);
  check_unit_rows(desc.tokens);
}

TEST_CASE("one global token receives gradient from every stream") {
  auto params = init_params(tiny_config());
  std::mt19937_64 rng(34);
  auto feats = test::random_matrix(rng, 3, 12);
  std::vector<std::uint32_t> ids{1, 2, 3};
  for (const auto& input : {SequenceInput::page(feats), SequenceInput::text(ids)}) {
    ForwardCache cache;
    Matrix out = forward(params, input, &cache);
    Matrix d_out(out.rows(), out.cols());
    for (std::size_t c = 0; c < out.cols(); ++c) d_out(out.rows() - 1, c) = 1.0;
    auto grads = zeros_like(params);
    backward(params, cache, d_out, grads);
    double norm = 0.0;
    for (double v : grads.global_token.values()) norm += v * v;
    CHECK(norm > 0.0);
    CHECK(grads.global_token_text.size() == 0);
  }
}

TEST_CASE("separate text global token when unshared") {
  auto cfg = tiny_config();
  cfg.shared_global = false;
  auto params = init_params(cfg);
  CHECK(params.global_token_text.rows() == 1);
  std::vector<std::uint32_t> ids{1, 2};
  ForwardCache cache;
  Matrix out = forward(params, SequenceInput::text(ids), &cache);
  Matrix d_out(out.rows(), out.cols(), 0.1);
  auto grads = zeros_like(params);
  backward(params, cache, d_out, grads);
  double text = 0.0, visual = 0.0;
  for (double v : grads.global_token_text.values()) text += std::abs(v);
  for (double v : grads.global_token.values()) visual += std::abs(v);
  CHECK(text > 0.0);
  CHECK(visual == 0.0);
}

TEST_CASE("tied feature columns start in token space") {
  auto cfg = tiny_config();
  cfg.feature_tokens.assign(12, -1);
  cfg.feature_tokens[2] = 5;
  auto params = init_params(cfg);
  for (double v : params.patch_proj.row(2)) CHECK(v == 0.0);
  CHECK(params.patch_proj.row(3)[0] != 0.0);
}

TEST_CASE("encoder gradient check") {
  CorpusParams cp;
  cp.n_pages = 40;
  cp.n_queries = 40;
  cp.seed = 3;
  Corpus corpus = generate_corpus(cp);
  EncoderConfig ec = tiny_config(corpus.vocab.size(), static_cast<std::uint32_t>(corpus.patch_feature_dim()));
  ec.max_seq = 64;
  ec.feature_tokens = patch_feature_tokens(corpus.vocab, cp.sketch_dim);
  auto params = init_params(ec);
  auto samples = training_samples(corpus, SplitName::Train);
  samples.resize(3);

  SUBCASE("passes at a moderate temperature") {
    TrainerConfig tc;
    tc.tau = 0.2;
    tc.tau_retrieval = 0.2;
    auto r = grad_check_encoder(params, samples, 1e-5, tc, 200);
    CHECK(r.passed);
    CHECK(r.checked + r.excluded == 200);
    CHECK(r.max_rel_error < 1e-3);
  }
  SUBCASE("epsilon outside the allowed range") {
    CHECK_THROWS_AS(grad_check_encoder(params, samples, 1e-2), ArgumentError);
    CHECK_THROWS_AS(grad_check_encoder(params, samples, 1e-8), ArgumentError);
  }
}
