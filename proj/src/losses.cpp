#include "glt/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "glt/errors.hpp"
#include "glt/simd/kernels.hpp"

namespace glt {

Temperature::Temperature(double tau) : tau_(tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ArgumentError("temperature must be positive and finite, got " + std::to_string(tau));
  }
}

namespace {

struct UnitRows {
  Matrix unit;
  std::vector<double> norms;
};

UnitRows unit_rows(const Matrix& m, const char* what) {
  UnitRows out{m, std::vector<double>(m.rows())};
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double n = l2_norm(m.row(r));
    if (!(n > kDegenerateNorm)) {
      throw DegenerateInputError(std::string(what) + ": zero-norm row " + std::to_string(r));
    }
    out.norms[r] = n;
    for (double& x : out.unit.row(r)) x /= n;
  }
  return out;
}

// Pulls a gradient w.r.t. unit rows back to the raw rows: (g - u (u.g)) / |x|.
Matrix through_normalize(const UnitRows& u, const Matrix& grad_unit) {
  Matrix g(grad_unit.rows(), grad_unit.cols());
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const auto ur = u.unit.row(r);
    const auto gu = grad_unit.row(r);
    const double proj = simd::dot(ur.data(), gu.data(), ur.size());
    for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) = (gu[c] - ur[c] * proj) / u.norms[r];
  }
  return g;
}

// Softmax-row InfoNCE on a logit grid; returns the loss and writes dL/dlogits.
double infonce_on_logits(const Matrix& logits, Matrix& dlogits) {
  const std::size_t b = logits.rows();
  dlogits = Matrix(b, b);
  double total = 0.0;
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto row = logits.row(i);
    const double lse = log_sum_exp(row);
    if (row[i] >= *std::max_element(row.begin(), row.end())) {
      // lse - row[i] cancels to 0 once the positive dominates; keep the tail
      double tail = 0.0;
      for (std::size_t j = 0; j < b; ++j)
        if (j != i) tail += std::exp(row[j] - row[i]);
      total -= std::log1p(tail);
    } else {
      total += row[i] - lse;
    }
    for (std::size_t j = 0; j < b; ++j) {
      const double p = std::exp(row[j] - lse);
      dlogits(i, j) = inv_b * (p - (i == j ? 1.0 : 0.0));
    }
  }
  return -total * inv_b;
}

}  // namespace

LossValue global_infonce(const Matrix& gv, const Matrix& gdesc, Temperature tau) {
  if (gv.rows() == 0) throw ArgumentError("global_infonce: empty batch");
  if (!gv.same_shape(gdesc)) throw DimensionError("global_infonce: Gv and Gdesc shapes differ");
  const std::size_t b = gv.rows();
  const std::size_t d = gv.cols();
  const UnitRows u = unit_rows(gv, "global_infonce Gv");
  const UnitRows w = unit_rows(gdesc, "global_infonce Gdesc");
  const double inv_tau = 1.0 / tau.value();

  Matrix logits(b, b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      const double c = simd::dot(u.unit.row(i).data(), w.unit.row(j).data(), d);
      logits(i, j) = std::clamp(c, -1.0, 1.0) * inv_tau;
    }
  }
  Matrix dlogits;
  LossValue out;
  out.value = infonce_on_logits(logits, dlogits);

  Matrix du(b, d);
  Matrix dw(b, d);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      const double g = dlogits(i, j) * inv_tau;
      simd::axpy(g, w.unit.row(j).data(), du.row(i).data(), d);
      simd::axpy(g, u.unit.row(i).data(), dw.row(j).data(), d);
    }
  }
  out.gradients.push_back(through_normalize(u, du));
  out.gradients.push_back(through_normalize(w, dw));
  return out;
}

LossValue local_align(const Matrix& patches, const Matrix& desc_tokens) {
  if (patches.rows() == 0 || desc_tokens.rows() == 0) {
    throw ArgumentError("local_align: needs at least one patch and one descriptor row");
  }
  if (patches.cols() != desc_tokens.cols()) throw DimensionError("local_align: width mismatch");
  const std::size_t d = patches.cols();
  const UnitRows u = unit_rows(patches, "local_align I");
  const UnitRows w = unit_rows(desc_tokens, "local_align Edesc");

  LossValue out;
  Matrix du(patches.rows(), d);
  Matrix dw(desc_tokens.rows(), d);
  out.argmax.resize(patches.rows());
  double total = 0.0;
  for (std::size_t k = 0; k < patches.rows(); ++k) {
    std::size_t j_best = 0;
    const double best = simd::max_dot(u.unit.row(k).data(), w.unit.data(), w.unit.rows(), d,
                                      &j_best);
    total += std::clamp(best, -1.0, 1.0);
    out.argmax[k] = j_best;
    simd::axpy(-1.0, w.unit.row(j_best).data(), du.row(k).data(), d);
    simd::axpy(-1.0, u.unit.row(k).data(), dw.row(j_best).data(), d);
  }
  out.value = -total;
  out.gradients.push_back(through_normalize(u, du));
  out.gradients.push_back(through_normalize(w, dw));
  return out;
}

LossValue retrieval_infonce(const Matrix& scores, Temperature tau) {
  if (scores.rows() == 0 || scores.rows() != scores.cols()) {
    throw ConfigError("retrieval_infonce: score matrix must be square and nonempty, got " +
                      std::to_string(scores.rows()) + "x" + std::to_string(scores.cols()));
  }
  const double inv_tau = 1.0 / tau.value();
  Matrix logits = scores;
  for (double& x : logits.values()) x *= inv_tau;
  Matrix dlogits;
  LossValue out;
  out.value = infonce_on_logits(logits, dlogits);
  for (double& x : dlogits.values()) x *= inv_tau;
  out.gradients.push_back(std::move(dlogits));
  return out;
}

LossValue retrieval_infonce(const ScoreMatrix& scores, Temperature tau) {
  return retrieval_infonce(scores.values, tau);
}

LossValue joint_loss(const std::optional<LossValue>& global, const std::optional<LossValue>& local,
                     const std::optional<LossValue>& retrieval) {
  LossValue out;
  bool first = true;
  for (const auto* term : {&global, &local, &retrieval}) {
    if (!term->has_value()) continue;
    const LossValue& t = **term;
    out.value += t.value;
    out.argmax.insert(out.argmax.end(), t.argmax.begin(), t.argmax.end());
    if (first) {
      out.gradients = t.gradients;
      first = false;
      continue;
    }
    if (t.gradients.size() != out.gradients.size()) {
      throw DimensionError("joint_loss: terms expressed over different inputs");
    }
    for (std::size_t i = 0; i < t.gradients.size(); ++i) {
      if (!t.gradients[i].same_shape(out.gradients[i])) {
        throw DimensionError("joint_loss: gradient " + std::to_string(i) + " shape mismatch");
      }
      auto& acc = out.gradients[i].values();
      const auto& add = t.gradients[i].values();
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += add[k];
    }
  }
  if (first) throw ConfigError("joint_loss: no loss term enabled");
  return out;
}

namespace {

Matrix without_last_row(const Matrix& m) {
  Matrix out(m.rows() - 1, m.cols());
  std::copy(m.data(), m.data() + out.size(), out.data());
  return out;
}

Matrix first_rows(const Matrix& m, std::size_t n) {
  Matrix out(n, m.cols());
  std::copy(m.data(), m.data() + out.size(), out.data());
  return out;
}

void add_into(Matrix& dst, const Matrix& src, std::size_t row_offset = 0) {
  for (std::size_t r = 0; r < src.rows(); ++r) {
    simd::axpy(1.0, src.row(r).data(), dst.row(r + row_offset).data(), src.cols());
  }
}

}  // namespace

JointTerms joint_objective(const BatchEmbeddings& batch, const LossSwitches& switches,
                           Temperature tau_global, Temperature tau_retrieval,
                           const LossWeights& weights) {
  if (!switches.any()) throw ConfigError("joint_objective: all loss terms disabled");
  const std::size_t b = batch.pages.size();
  if (b == 0) throw ArgumentError("joint_objective: empty batch");
  if (batch.page_patch_rows.size() != b) {
    throw DimensionError("joint_objective: page_patch_rows size mismatch");
  }
  if (switches.retrieval && batch.queries.size() != b) {
    throw DimensionError("joint_objective: queries and pages differ in count");
  }
  if ((switches.global || switches.local) && batch.descriptors.size() != b) {
    throw DimensionError("joint_objective: descriptors required for global/local terms");
  }

  JointTerms out;
  out.page_grads.reserve(b);
  for (const auto& p : batch.pages) out.page_grads.emplace_back(p.rows(), p.cols());
  for (const auto& q : batch.queries) out.query_grads.emplace_back(q.rows(), q.cols());
  for (const auto& e : batch.descriptors) out.descriptor_grads.emplace_back(e.rows(), e.cols());

  if (switches.global) {
    const std::size_t d = batch.pages.front().cols();
    Matrix gv(b, d);
    Matrix gdesc(b, d);
    for (std::size_t i = 0; i < b; ++i) {
      const auto pg = batch.pages[i].row(batch.pages[i].rows() - 1);
      const auto dg = batch.descriptors[i].row(batch.descriptors[i].rows() - 1);
      std::copy(pg.begin(), pg.end(), gv.row(i).begin());
      std::copy(dg.begin(), dg.end(), gdesc.row(i).begin());
    }
    const LossValue g = global_infonce(gv, gdesc, tau_global);
    out.global = g.value;
    for (std::size_t i = 0; i < b; ++i) {
      simd::axpy(weights.global, g.gradients[0].row(i).data(),
                 out.page_grads[i].row(out.page_grads[i].rows() - 1).data(), d);
      simd::axpy(weights.global, g.gradients[1].row(i).data(),
                 out.descriptor_grads[i].row(out.descriptor_grads[i].rows() - 1).data(), d);
    }
  }

  if (switches.local) {
    // Averaged over pages and patches so the term stays on the scale of the
    // InfoNCE terms instead of growing with the patch count.
    for (std::size_t i = 0; i < b; ++i) {
      const double inv_b =
          1.0 / (static_cast<double>(b) * static_cast<double>(batch.page_patch_rows[i]));
      const LossValue l = local_align(first_rows(batch.pages[i], batch.page_patch_rows[i]),
                                      without_last_row(batch.descriptors[i]));
      out.local += l.value * inv_b;
      Matrix gi = l.gradients[0];
      Matrix ge = l.gradients[1];
      for (double& x : gi.values()) x *= inv_b * weights.local;
      for (double& x : ge.values()) x *= inv_b * weights.local;
      add_into(out.page_grads[i], gi);
      add_into(out.descriptor_grads[i], ge);
      out.argmax.insert(out.argmax.end(), l.argmax.begin(), l.argmax.end());
    }
  }

  if (switches.retrieval) {
    Matrix scores(b, b);
    std::vector<std::vector<std::size_t>> arg(b * b);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < b; ++j) {
        MaxSimTrace t = maxsim_trace(batch.queries[i], batch.pages[j]);
        scores(i, j) = t.score;
        arg[i * b + j] = std::move(t.argmax);
      }
    }
    const LossValue r = retrieval_infonce(scores, tau_retrieval);
    out.retrieval = r.value;
    const Matrix& ds = r.gradients[0];
    for (std::size_t i = 0; i < b; ++i) {
      const Matrix& q = batch.queries[i];
      for (std::size_t j = 0; j < b; ++j) {
        const double g = weights.retrieval * ds(i, j);
        const auto& a = arg[i * b + j];
        for (std::size_t row = 0; row < q.rows(); ++row) {
          simd::axpy(g, batch.pages[j].row(a[row]).data(), out.query_grads[i].row(row).data(),
                     q.cols());
          simd::axpy(g, q.row(row).data(), out.page_grads[j].row(a[row]).data(), q.cols());
        }
        out.argmax.insert(out.argmax.end(), a.begin(), a.end());
      }
    }
  }

  out.total = weights.global * out.global + weights.local * out.local +
              weights.retrieval * out.retrieval;
  return out;
}

GradCheckReport check_probes(std::span<const GradProbe> probes,
                             const std::function<LossValue()>& evaluate, double epsilon,
                             double tolerance) {
  if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) {
    throw ArgumentError("finite-difference epsilon must lie in [1e-6, 1e-3], got " +
                        std::to_string(epsilon));
  }
  GradCheckReport report;
  report.tolerance = tolerance;
  const std::vector<std::size_t> base_signature = evaluate().argmax;
  for (const GradProbe& p : probes) {
    const double saved = *p.coordinate;
    *p.coordinate = saved + epsilon;
    const LossValue plus = evaluate();
    *p.coordinate = saved - epsilon;
    const LossValue minus = evaluate();
    *p.coordinate = saved;
    if (plus.argmax != base_signature || minus.argmax != base_signature) {
      ++report.excluded;
      continue;
    }
    const double numeric = (plus.value - minus.value) / (2.0 * epsilon);
    const double denom = std::max({std::abs(numeric), std::abs(p.analytic), kGradCheckFloor});
    report.max_rel_error = std::max(report.max_rel_error, std::abs(numeric - p.analytic) / denom);
    ++report.checked;
  }
  report.passed = report.checked > 0 && report.max_rel_error < tolerance;
  return report;
}

GradCheckReport finite_diff_check(const LossFn& loss_fn, std::vector<Matrix> inputs,
                                  double epsilon, double tolerance) {
  const LossValue base = loss_fn(inputs);
  if (base.gradients.size() != inputs.size()) {
    throw DimensionError("finite_diff_check: loss returned wrong number of gradients");
  }
  std::vector<GradProbe> probes;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (!base.gradients[t].same_shape(inputs[t])) {
      throw DimensionError("finite_diff_check: gradient shape mismatch for input " +
                           std::to_string(t));
    }
    for (std::size_t k = 0; k < inputs[t].size(); ++k) {
      probes.push_back({inputs[t].data() + k, base.gradients[t].values()[k]});
    }
  }
  return check_probes(probes, [&] { return loss_fn(inputs); }, epsilon, tolerance);
}

}  // namespace glt
