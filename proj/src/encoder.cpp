#include "glt/encoder.hpp"

#include <cmath>
#include <random>
#include <string>

#include "glt/errors.hpp"
#include "glt/simd/kernels.hpp"

namespace glt {

void EncoderConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("encoder config: " + msg);
  };
  need(model_dim >= 1 && retrieval_dim >= 1 && layers >= 1 && heads >= 1 && ffn_dim >= 1,
       "all counts must be >= 1");
  need(model_dim % heads == 0, "model_dim must be divisible by heads");
  need(retrieval_dim <= model_dim, "retrieval_dim must not exceed model_dim");
  need(vocab_size >= 1, "vocab_size must be >= 1");
  need(patch_feature_dim >= 1, "patch_feature_dim must be >= 1");
  need(max_seq >= 2, "max_seq must be >= 2");
  need(feature_tokens.empty() || feature_tokens.size() == patch_feature_dim,
       "feature_tokens must be empty or have one entry per patch feature");
  for (std::int32_t t : feature_tokens) {
    need(t >= -1 && (t < 0 || static_cast<std::uint32_t>(t) < vocab_size),
         "feature_tokens entry outside the vocabulary");
  }
}

void EncoderParams::for_each(const std::function<void(std::string_view, Matrix&)>& fn) {
  fn("token_embedding", token_embedding);
  fn("patch_proj", patch_proj);
  fn("patch_bias", patch_bias);
  fn("position", position);
  fn("global_token", global_token);
  fn("global_token_text", global_token_text);
  for (auto& l : layers) {
    fn("ln1_gain", l.ln1_gain);
    fn("ln1_bias", l.ln1_bias);
    fn("wq", l.wq);
    fn("bq", l.bq);
    fn("wk", l.wk);
    fn("bk", l.bk);
    fn("wv", l.wv);
    fn("bv", l.bv);
    fn("wo", l.wo);
    fn("bo", l.bo);
    fn("ln2_gain", l.ln2_gain);
    fn("ln2_bias", l.ln2_bias);
    fn("w1", l.w1);
    fn("b1", l.b1);
    fn("w2", l.w2);
    fn("b2", l.b2);
  }
  fn("final_ln_gain", final_ln_gain);
  fn("final_ln_bias", final_ln_bias);
  fn("head", head);
}

void EncoderParams::for_each(
    const std::function<void(std::string_view, const Matrix&)>& fn) const {
  const_cast<EncoderParams*>(this)->for_each(
      [&](std::string_view name, Matrix& m) { fn(name, static_cast<const Matrix&>(m)); });
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](std::string_view, const Matrix& m) { n += m.size(); });
  return n;
}

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (double& x : m.values()) x = dist(rng);
  return m;
}

}  // namespace

EncoderParams init_params(const EncoderConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const std::size_t m = config.model_dim;
  const std::size_t f = config.ffn_dim;
  const double w_std = 1.0 / std::sqrt(static_cast<double>(m));
  // Residual branches start near zero so the untrained stack stays close to
  // the embeddings it is given.
  const double out_std = 0.1 * w_std;

  EncoderParams p;
  p.config = config;
  p.token_embedding = gaussian(config.vocab_size, m, 0.5, rng);
  p.patch_proj = gaussian(config.patch_feature_dim, m, 0.5, rng);
  // Tied columns start from their token embedding alone.
  for (std::size_t c = 0; c < config.feature_tokens.size(); ++c) {
    if (config.feature_tokens[c] >= 0) {
      for (double& x : p.patch_proj.row(c)) x = 0.0;
    }
  }
  p.patch_bias = Matrix(1, m);
  p.position = gaussian(config.max_seq, m, 0.1, rng);
  p.global_token = gaussian(1, m, 0.5, rng);
  p.global_token_text = config.shared_global ? Matrix(0, m) : gaussian(1, m, 0.5, rng);
  for (std::uint32_t l = 0; l < config.layers; ++l) {
    LayerParams lp;
    lp.ln1_gain = Matrix(1, m, 1.0);
    lp.ln1_bias = Matrix(1, m);
    lp.wq = gaussian(m, m, w_std, rng);
    lp.bq = Matrix(1, m);
    lp.wk = gaussian(m, m, w_std, rng);
    lp.bk = Matrix(1, m);
    lp.wv = gaussian(m, m, w_std, rng);
    lp.bv = Matrix(1, m);
    lp.wo = gaussian(m, m, out_std, rng);
    lp.bo = Matrix(1, m);
    lp.ln2_gain = Matrix(1, m, 1.0);
    lp.ln2_bias = Matrix(1, m);
    lp.w1 = gaussian(m, f, w_std, rng);
    lp.b1 = Matrix(1, f);
    lp.w2 = gaussian(f, m, 0.1 / std::sqrt(static_cast<double>(f)), rng);
    lp.b2 = Matrix(1, m);
    p.layers.push_back(std::move(lp));
  }
  p.final_ln_gain = Matrix(1, m, 1.0);
  p.final_ln_bias = Matrix(1, m);
  p.head = gaussian(m, config.retrieval_dim, w_std, rng);
  return p;
}

EncoderParams zeros_like(const EncoderParams& params) {
  EncoderParams z = params;
  z.for_each([](std::string_view, Matrix& t) { t.fill(0.0); });
  return z;
}

void accumulate(EncoderParams& dst, const EncoderParams& src) {
  std::vector<const Matrix*> from;
  src.for_each([&](std::string_view, const Matrix& t) { from.push_back(&t); });
  std::size_t i = 0;
  dst.for_each([&](std::string_view, Matrix& t) {
    simd::axpy(1.0, from[i]->data(), t.data(), t.size());
    ++i;
  });
}

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluK * u * u * u))); }

double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + kGeluK * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluK * u * u);
}

// y = xhat * gain + bias with xhat = (x - mean) * rstd, per row.
void layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& xhat,
                std::vector<double>& rstd, Matrix& y) {
  const std::size_t n = x.rows();
  const std::size_t m = x.cols();
  xhat = Matrix(n, m);
  y = Matrix(n, m);
  rstd.assign(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto xr = x.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(m);
    rstd[r] = 1.0 / std::sqrt(var + kLnEps);
    for (std::size_t c = 0; c < m; ++c) {
      xhat(r, c) = (xr[c] - mean) * rstd[r];
      y(r, c) = xhat(r, c) * gain(0, c) + bias(0, c);
    }
  }
}

// Returns dx; accumulates dgain / dbias.
Matrix layer_norm_backward(const Matrix& dy, const Matrix& xhat, const std::vector<double>& rstd,
                           const Matrix& gain, Matrix& dgain, Matrix& dbias) {
  const std::size_t n = dy.rows();
  const std::size_t m = dy.cols();
  Matrix dx(n, m);
  std::vector<double> dxhat(m);
  for (std::size_t r = 0; r < n; ++r) {
    double mean_d = 0.0;
    double mean_dx = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      dgain(0, c) += dy(r, c) * xhat(r, c);
      dbias(0, c) += dy(r, c);
      dxhat[c] = dy(r, c) * gain(0, c);
      mean_d += dxhat[c];
      mean_dx += dxhat[c] * xhat(r, c);
    }
    mean_d /= static_cast<double>(m);
    mean_dx /= static_cast<double>(m);
    for (std::size_t c = 0; c < m; ++c) {
      dx(r, c) = rstd[r] * (dxhat[c] - mean_d - xhat(r, c) * mean_dx);
    }
  }
  return dx;
}

Matrix matmul(const Matrix& a, const Matrix& w) {
  Matrix out(a.rows(), w.cols());
  simd::gemm_nn(a.data(), w.data(), out.data(), a.rows(), a.cols(), w.cols(), false);
  return out;
}

void add_bias(Matrix& x, const Matrix& bias) {
  for (std::size_t r = 0; r < x.rows(); ++r) simd::axpy(1.0, bias.data(), x.row(r).data(), x.cols());
}

// Linear layer backward: dW += x^T dy, db += colsum(dy), returns dy W^T.
Matrix linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix& dw,
                       Matrix* db) {
  simd::gemm_tn(x.data(), dy.data(), dw.data(), x.rows(), x.cols(), dy.cols(), true);
  if (db) {
    for (std::size_t r = 0; r < dy.rows(); ++r) simd::axpy(1.0, dy.row(r).data(), db->data(), dy.cols());
  }
  Matrix dx(dy.rows(), w.rows());
  simd::gemm_nt(dy.data(), w.data(), dx.data(), dy.rows(), dy.cols(), w.rows(), false);
  return dx;
}

Matrix head_slice(const Matrix& x, std::size_t h, std::size_t dh) {
  Matrix out(x.rows(), dh);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < dh; ++c) out(r, c) = x(r, h * dh + c);
  }
  return out;
}

void scatter_head(Matrix& x, const Matrix& part, std::size_t h, std::size_t dh) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < dh; ++c) x(r, h * dh + c) += part(r, c);
  }
}

std::size_t content_rows(const SequenceInput& in) {
  return (in.patch_features ? in.patch_features->rows() : 0) + in.tokens.size();
}

const Matrix& global_for(const EncoderParams& p, const SequenceInput& in) {
  if (in.patch_features == nullptr && !p.config.shared_global) return p.global_token_text;
  return p.global_token;
}

Matrix embed(const EncoderParams& p, const SequenceInput& in) {
  const EncoderConfig& cfg = p.config;
  const std::size_t n_content = content_rows(in);
  if (n_content == 0) throw ArgumentError("encoder: empty input sequence");
  if (n_content + 1 > cfg.max_seq) {
    throw ConfigError("encoder: sequence of " + std::to_string(n_content + 1) +
                      " positions exceeds max_seq " + std::to_string(cfg.max_seq));
  }
  const std::size_t m = cfg.model_dim;
  Matrix x(n_content + 1, m);
  std::size_t row = 0;
  if (in.patch_features) {
    const Matrix& f = *in.patch_features;
    if (f.cols() != cfg.patch_feature_dim) {
      throw DimensionError("encoder: patch features have " + std::to_string(f.cols()) +
                           " columns, expected " + std::to_string(cfg.patch_feature_dim));
    }
    simd::gemm_nn(f.data(), p.patch_proj.data(), x.data(), f.rows(), f.cols(), m, false);
    for (; row < f.rows(); ++row) {
      simd::axpy(1.0, p.patch_bias.data(), x.row(row).data(), m);
      for (std::size_t c = 0; c < cfg.feature_tokens.size(); ++c) {
        const double v = f(row, c);
        if (v != 0.0 && cfg.feature_tokens[c] >= 0) {
          simd::axpy(v, p.token_embedding.row(cfg.feature_tokens[c]).data(), x.row(row).data(), m);
        }
      }
    }
  }
  for (std::uint32_t id : in.tokens) {
    if (id >= cfg.vocab_size) {
      throw ArgumentError("encoder: token id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(cfg.vocab_size));
    }
    simd::axpy(1.0, p.token_embedding.row(id).data(), x.row(row).data(), m);
    ++row;
  }
  for (std::size_t r = 0; r < n_content; ++r) {
    simd::axpy(1.0, p.position.row(r).data(), x.row(r).data(), m);
  }
  const Matrix& g = global_for(p, in);
  std::copy(g.data(), g.data() + m, x.row(n_content).data());
  return x;
}

void embed_backward(const EncoderParams& p, const SequenceInput& in, const Matrix& dx,
                    EncoderParams& grads) {
  const std::size_t m = p.config.model_dim;
  const std::size_t n_content = content_rows(in);
  std::size_t row = 0;
  if (in.patch_features) {
    const Matrix& f = *in.patch_features;
    simd::gemm_tn(f.data(), dx.data(), grads.patch_proj.data(), f.rows(), f.cols(), m, true);
    const auto& tied = p.config.feature_tokens;
    for (; row < f.rows(); ++row) {
      simd::axpy(1.0, dx.row(row).data(), grads.patch_bias.data(), m);
      for (std::size_t c = 0; c < tied.size(); ++c) {
        const double v = f(row, c);
        if (v != 0.0 && tied[c] >= 0) {
          simd::axpy(v, dx.row(row).data(), grads.token_embedding.row(tied[c]).data(), m);
        }
      }
    }
  }
  for (std::uint32_t id : in.tokens) {
    simd::axpy(1.0, dx.row(row).data(), grads.token_embedding.row(id).data(), m);
    ++row;
  }
  for (std::size_t r = 0; r < n_content; ++r) {
    simd::axpy(1.0, dx.row(r).data(), grads.position.row(r).data(), m);
  }
  Matrix& g = (in.patch_features == nullptr && !p.config.shared_global) ? grads.global_token_text
                                                                          : grads.global_token;
  simd::axpy(1.0, dx.row(n_content).data(), g.data(), m);
}

}  // namespace

Matrix forward(const EncoderParams& p, const SequenceInput& input, ForwardCache* cache) {
  const EncoderConfig& cfg = p.config;
  const std::size_t m = cfg.model_dim;
  const std::size_t heads = cfg.heads;
  const std::size_t dh = m / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.input = input;
  c.layers.assign(p.layers.size(), {});

  Matrix x = embed(p, input);
  const std::size_t n = x.rows();

  for (std::size_t li = 0; li < c.layers.size(); ++li) {
    const LayerParams& lp = p.layers[li];
    ForwardCache::Layer& L = c.layers[li];
    L.x_in = x;
    layer_norm(x, lp.ln1_gain, lp.ln1_bias, L.xhat1, L.rstd1, L.h1);
    L.q = matmul(L.h1, lp.wq);
    add_bias(L.q, lp.bq);
    L.k = matmul(L.h1, lp.wk);
    add_bias(L.k, lp.bk);
    L.v = matmul(L.h1, lp.wv);
    add_bias(L.v, lp.bv);

    L.attn_out = Matrix(n, m);
    L.probs.assign(heads, Matrix());
    for (std::size_t h = 0; h < heads; ++h) {
      const Matrix qh = head_slice(L.q, h, dh);
      const Matrix kh = head_slice(L.k, h, dh);
      const Matrix vh = head_slice(L.v, h, dh);
      Matrix s(n, n);
      simd::gemm_nt(qh.data(), kh.data(), s.data(), n, dh, n, false);
      for (std::size_t r = 0; r < n; ++r) {
        auto row = s.row(r);
        double mx = row[0] * scale;
        for (double& v : row) {
          v *= scale;
          mx = std::max(mx, v);
        }
        double sum = 0.0;
        for (double& v : row) {
          v = std::exp(v - mx);
          sum += v;
        }
        for (double& v : row) v /= sum;
      }
      Matrix oh(n, dh);
      simd::gemm_nn(s.data(), vh.data(), oh.data(), n, n, dh, false);
      scatter_head(L.attn_out, oh, h, dh);
      L.probs[h] = std::move(s);
    }
    Matrix a = matmul(L.attn_out, lp.wo);
    add_bias(a, lp.bo);
    L.x_mid = x;
    for (std::size_t i = 0; i < x.size(); ++i) L.x_mid.values()[i] += a.values()[i];

    layer_norm(L.x_mid, lp.ln2_gain, lp.ln2_bias, L.xhat2, L.rstd2, L.h2);
    L.pre_act = matmul(L.h2, lp.w1);
    add_bias(L.pre_act, lp.b1);
    L.act = L.pre_act;
    for (double& v : L.act.values()) v = gelu(v);
    Matrix f = matmul(L.act, lp.w2);
    add_bias(f, lp.b2);
    x = L.x_mid;
    for (std::size_t i = 0; i < x.size(); ++i) x.values()[i] += f.values()[i];
  }

  c.x_final = x;
  layer_norm(x, p.final_ln_gain, p.final_ln_bias, c.xhat_f, c.rstd_f, c.h_f);
  c.z = matmul(c.h_f, p.head);
  c.y = c.z;
  c.z_norm.assign(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    c.z_norm[r] = l2_norm(c.z.row(r));
  }
  if (normalize_rows(c.y) != 0) {
    throw DegenerateInputError("encoder produced a zero-norm output row");
  }
  return c.y;
}

void backward(const EncoderParams& p, const ForwardCache& c, const Matrix& d_out,
              EncoderParams& grads) {
  const std::size_t m = p.config.model_dim;
  const std::size_t heads = p.config.heads;
  const std::size_t dh = m / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t n = c.y.rows();
  if (!d_out.same_shape(c.y)) throw DimensionError("backward: gradient shape mismatch");

  // through row normalization
  Matrix dz(n, c.y.cols());
  for (std::size_t r = 0; r < n; ++r) {
    const auto y = c.y.row(r);
    const auto g = d_out.row(r);
    const double proj = simd::dot(y.data(), g.data(), y.size());
    for (std::size_t k = 0; k < y.size(); ++k) dz(r, k) = (g[k] - y[k] * proj) / c.z_norm[r];
  }
  const Matrix dhf = linear_backward(c.h_f, p.head, dz, grads.head, nullptr);
  Matrix dx = layer_norm_backward(dhf, c.xhat_f, c.rstd_f, p.final_ln_gain, grads.final_ln_gain,
                                  grads.final_ln_bias);

  for (std::size_t li = c.layers.size(); li-- > 0;) {
    const LayerParams& lp = p.layers[li];
    LayerParams& gl = grads.layers[li];
    const ForwardCache::Layer& L = c.layers[li];

    // feed-forward residual branch
    Matrix dact = linear_backward(L.act, lp.w2, dx, gl.w2, &gl.b2);
    for (std::size_t i = 0; i < dact.size(); ++i) dact.values()[i] *= gelu_grad(L.pre_act.values()[i]);
    const Matrix dh2 = linear_backward(L.h2, lp.w1, dact, gl.w1, &gl.b1);
    const Matrix dmid_ln = layer_norm_backward(dh2, L.xhat2, L.rstd2, lp.ln2_gain, gl.ln2_gain,
                                               gl.ln2_bias);
    for (std::size_t i = 0; i < dx.size(); ++i) dx.values()[i] += dmid_ln.values()[i];

    // attention residual branch
    const Matrix dattn = linear_backward(L.attn_out, lp.wo, dx, gl.wo, &gl.bo);
    Matrix dq(n, m), dk(n, m), dv(n, m);
    for (std::size_t h = 0; h < heads; ++h) {
      const Matrix& P = L.probs[h];
      const Matrix qh = head_slice(L.q, h, dh);
      const Matrix kh = head_slice(L.k, h, dh);
      const Matrix vh = head_slice(L.v, h, dh);
      const Matrix doh = head_slice(dattn, h, dh);
      Matrix dP(n, n);
      simd::gemm_nt(doh.data(), vh.data(), dP.data(), n, dh, n, false);
      Matrix dvh(n, dh);
      simd::gemm_tn(P.data(), doh.data(), dvh.data(), n, n, dh, false);
      Matrix dS(n, n);
      for (std::size_t r = 0; r < n; ++r) {
        const double inner = simd::dot(dP.row(r).data(), P.row(r).data(), n);
        for (std::size_t j = 0; j < n; ++j) dS(r, j) = P(r, j) * (dP(r, j) - inner) * scale;
      }
      Matrix dqh(n, dh);
      simd::gemm_nn(dS.data(), kh.data(), dqh.data(), n, n, dh, false);
      Matrix dkh(n, dh);
      simd::gemm_tn(dS.data(), qh.data(), dkh.data(), n, n, dh, false);
      scatter_head(dq, dqh, h, dh);
      scatter_head(dk, dkh, h, dh);
      scatter_head(dv, dvh, h, dh);
    }
    Matrix dh1 = linear_backward(L.h1, lp.wq, dq, gl.wq, &gl.bq);
    const Matrix dh1k = linear_backward(L.h1, lp.wk, dk, gl.wk, &gl.bk);
    const Matrix dh1v = linear_backward(L.h1, lp.wv, dv, gl.wv, &gl.bv);
    for (std::size_t i = 0; i < dh1.size(); ++i) {
      dh1.values()[i] += dh1k.values()[i] + dh1v.values()[i];
    }
    const Matrix din_ln = layer_norm_backward(dh1, L.xhat1, L.rstd1, lp.ln1_gain, gl.ln1_gain,
                                              gl.ln1_bias);
    for (std::size_t i = 0; i < dx.size(); ++i) dx.values()[i] += din_ln.values()[i];
  }

  embed_backward(p, c.input, dx, grads);
}

namespace {

void split_rows(const Matrix& out, std::size_t n_content, Matrix& rows, EmbeddingVector& global) {
  rows = Matrix(n_content, out.cols());
  std::copy(out.data(), out.data() + rows.size(), rows.data());
  const auto g = out.row(n_content);
  global.assign(g.begin(), g.end());
}

}  // namespace

DocumentEmbedding encode_page(const Matrix& page_features, const EncoderParams& params,
                              std::uint32_t page_id) {
  if (page_features.rows() == 0) throw ArgumentError("encode_page: no patches");
  DocumentEmbedding d;
  d.page_id = page_id;
  const Matrix out = forward(params, SequenceInput::page(page_features));
  split_rows(out, page_features.rows(), d.patches, d.global);
  return d;
}

DocumentEmbedding encode_page_with_context(const Matrix& page_features,
                                           std::span<const std::uint32_t> desc_tokens,
                                           const EncoderParams& params, std::uint32_t page_id) {
  if (page_features.rows() == 0) throw ArgumentError("encode_page: no patches");
  DocumentEmbedding d;
  d.page_id = page_id;
  const Matrix out =
      forward(params, SequenceInput::page_with_context(page_features, desc_tokens));
  split_rows(out, page_features.rows() + desc_tokens.size(), d.patches, d.global);
  return d;
}

QueryEmbedding encode_query(std::span<const std::uint32_t> token_ids, const EncoderParams& params,
                            std::uint32_t query_id) {
  if (token_ids.empty()) throw ArgumentError("encode_query: empty token sequence");
  QueryEmbedding q;
  q.query_id = query_id;
  const Matrix out = forward(params, SequenceInput::text(token_ids));
  split_rows(out, token_ids.size(), q.tokens, q.global);
  return q;
}

DescriptorEmbedding encode_descriptor(std::span<const std::uint32_t> token_ids,
                                      const EncoderParams& params, std::uint32_t page_id) {
  if (token_ids.empty()) throw ArgumentError("encode_descriptor: empty token sequence");
  DescriptorEmbedding e;
  e.page_id = page_id;
  const Matrix out = forward(params, SequenceInput::text(token_ids));
  split_rows(out, token_ids.size(), e.tokens, e.global);
  return e;
}

}  // namespace glt
