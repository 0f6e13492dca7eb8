#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "glt/embedding.hpp"

namespace glt {

struct EncoderConfig {
  std::uint32_t model_dim = 64;
  std::uint32_t retrieval_dim = 32;
  std::uint32_t layers = 2;
  std::uint32_t heads = 4;
  std::uint32_t ffn_dim = 128;
  std::uint32_t vocab_size = 0;
  std::uint32_t patch_feature_dim = 0;
  std::uint32_t max_seq = 64;  // includes the appended global token
  bool shared_global = true;   // one global-token embedding for all streams
  std::uint64_t seed = 0;
  /// Optional per-feature-column token id (-1 = none). A tied column embeds
  /// through token_embedding as well as patch_proj, so page cells and query
  /// tokens naming the same thing start out in one space.
  std::vector<std::int32_t> feature_tokens;

  /// Throws ConfigError on violated invariants.
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct LayerParams {
  Matrix ln1_gain, ln1_bias;
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix ln2_gain, ln2_bias;
  Matrix w1, b1, w2, b2;
};

/// All trainable weights. Row-vector parameters (biases, gains, the global
/// token) are stored as 1 x n matrices.
struct EncoderParams {
  EncoderConfig config;
  Matrix token_embedding;    // vocab x model
  Matrix patch_proj;         // patch_feature_dim x model
  Matrix patch_bias;         // 1 x model
  Matrix position;           // max_seq x model
  Matrix global_token;       // 1 x model, appended to every stream
  Matrix global_token_text;  // 1 x model when !shared_global, else 0 x model
  std::vector<LayerParams> layers;
  Matrix final_ln_gain, final_ln_bias;
  Matrix head;               // model x retrieval_dim

  /// Visits every tensor in declaration order (the checkpoint order).
  void for_each(const std::function<void(std::string_view, Matrix&)>& fn);
  void for_each(const std::function<void(std::string_view, const Matrix&)>& fn) const;
  std::size_t parameter_count() const;
};

/// Random initialization from config.seed.
EncoderParams init_params(const EncoderConfig& config);
/// Same shapes, all zeros.
EncoderParams zeros_like(const EncoderParams& params);
/// dst += src, tensor by tensor.
void accumulate(EncoderParams& dst, const EncoderParams& src);

/// One input sequence. Pages supply patch features (and optionally extra
/// descriptor tokens for cross-context encoding); text supplies token ids.
struct SequenceInput {
  const Matrix* patch_features = nullptr;
  std::span<const std::uint32_t> tokens;

  static SequenceInput page(const Matrix& features) { return {&features, {}}; }
  static SequenceInput page_with_context(const Matrix& features,
                                         std::span<const std::uint32_t> desc_tokens) {
    return {&features, desc_tokens};
  }
  static SequenceInput text(std::span<const std::uint32_t> ids) { return {nullptr, ids}; }
};

/// Activations kept for the backward pass.
struct ForwardCache {
  struct Layer {
    Matrix x_in, xhat1, h1, q, k, v, attn_out, x_mid, xhat2, h2, pre_act, act;
    std::vector<double> rstd1, rstd2;
    std::vector<Matrix> probs;  // per head, n x n
  };
  SequenceInput input;
  std::vector<Layer> layers;
  Matrix x_final, xhat_f, h_f, z, y;
  std::vector<double> rstd_f, z_norm;
};

/// Runs the encoder; returns unit-norm rows (content rows then the global
/// row last). Throws ConfigError if the sequence is longer than max_seq and
/// ArgumentError on empty input or unknown token ids.
Matrix forward(const EncoderParams& params, const SequenceInput& input,
               ForwardCache* cache = nullptr);

/// Accumulates d(loss)/d(params) into grads given d(loss)/d(output rows).
void backward(const EncoderParams& params, const ForwardCache& cache, const Matrix& d_out,
              EncoderParams& grads);

DocumentEmbedding encode_page(const Matrix& page_features, const EncoderParams& params,
                              std::uint32_t page_id = 0);
/// Cross-context encoding: descriptor tokens are concatenated after the
/// patches and their output states become extra document rows.
DocumentEmbedding encode_page_with_context(const Matrix& page_features,
                                           std::span<const std::uint32_t> desc_tokens,
                                           const EncoderParams& params,
                                           std::uint32_t page_id = 0);
QueryEmbedding encode_query(std::span<const std::uint32_t> token_ids, const EncoderParams& params,
                            std::uint32_t query_id = 0);
DescriptorEmbedding encode_descriptor(std::span<const std::uint32_t> token_ids,
                                      const EncoderParams& params, std::uint32_t page_id = 0);

}  // namespace glt
