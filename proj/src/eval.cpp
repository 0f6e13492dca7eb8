#include "glt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "glt/errors.hpp"

namespace glt {

EvalReport summarize(std::string variant, std::string dataset,
                     const std::vector<QueryResult>& results, std::size_t k) {
  EvalReport rep;
  rep.variant = std::move(variant);
  rep.dataset = std::move(dataset);
  rep.k = k;
  for (const auto& r : results) {
    auto nd = ndcg_at_k(r.ranking, r.relevant, k);
    auto mp = map_at_k(r.ranking, r.relevant, k);
    if (!nd || !mp) {
      ++rep.skipped;
      continue;
    }
    rep.per_query.push_back({r.query_id, r.qtype, *nd, *mp});
  }
  std::sort(rep.per_query.begin(), rep.per_query.end(),
            [](const QueryMetrics& a, const QueryMetrics& b) { return a.query_id < b.query_id; });
  if (!rep.per_query.empty()) {
    double sn = 0, sm = 0;
    for (const auto& q : rep.per_query) {
      sn += q.ndcg;
      sm += q.map;
    }
    rep.mean_ndcg = sn / static_cast<double>(rep.per_query.size());
    rep.mean_map = sm / static_cast<double>(rep.per_query.size());
  }
  return rep;
}

std::map<QueryType, TypeMeans> qtype_breakdown(const EvalReport& report) {
  std::map<QueryType, TypeMeans> out;
  for (const auto& q : report.per_query) {
    auto& t = out[q.qtype];
    ++t.count;
    t.ndcg += q.ndcg;
    t.map += q.map;
  }
  for (auto& [type, t] : out) {
    t.ndcg /= static_cast<double>(t.count);
    t.map /= static_cast<double>(t.count);
  }
  return out;
}

std::optional<SignificanceRecord> compare_reports(const EvalReport& a, const EvalReport& b) {
  std::map<std::uint32_t, double> bq;
  for (const auto& q : b.per_query) bq[q.query_id] = q.ndcg;
  std::vector<double> xa, xb;
  for (const auto& q : a.per_query) {
    auto it = bq.find(q.query_id);
    if (it == bq.end()) continue;
    xa.push_back(q.ndcg);
    xb.push_back(it->second);
  }
  try {
    auto w = wilcoxon_signed_rank(xa, xb);
    return SignificanceRecord{a.variant, b.variant, "ndcg@" + std::to_string(a.k), w.statistic,
                              w.p_two_sided, w.n};
  } catch (const InsufficientDataError&) {
    return std::nullopt;
  }
}

std::vector<DocumentEmbedding> encode_split_pages(const EncoderParams& params, const Corpus& corpus,
                                                  SplitName split) {
  std::vector<DocumentEmbedding> docs;
  const auto& ids = corpus.split_pages(split);
  docs.reserve(ids.size());
  for (auto id : ids) {
    Matrix feats = render_patch_features(corpus.page(id), corpus.vocab, corpus.params.sketch_dim);
    docs.push_back(encode_page(feats, params, id));
  }
  return docs;
}

std::vector<QueryEmbedding> encode_split_queries(const EncoderParams& params, const Corpus& corpus,
                                                 SplitName split) {
  std::vector<QueryEmbedding> out;
  for (const QuerySpec* q : corpus.split_queries(split))
    out.push_back(encode_query(q->tokens, params, q->query_id));
  return out;
}

std::string_view cross_context_name(CrossContext mode) noexcept {
  switch (mode) {
    case CrossContext::Off: return "off";
    case CrossContext::Frozen: return "frozen";
    case CrossContext::Finetuned: return "finetuned";
  }
  return "off";
}

CrossContext parse_cross_context(std::string_view name) {
  if (name == "off") return CrossContext::Off;
  if (name == "frozen") return CrossContext::Frozen;
  if (name == "finetuned") return CrossContext::Finetuned;
  throw ConfigError("unknown cross-context mode '" + std::string(name) +
                    "' (expected off, frozen or finetuned)");
}

std::vector<DocumentEmbedding> encode_split_pages_with_descriptors(const EncoderParams& params,
                                                                   const Corpus& corpus,
                                                                   SplitName split,
                                                                   CrossContext mode) {
  if (mode == CrossContext::Off)
    throw ConfigError("cross-context encoding requested with mode off");
  if (!corpus.has_descriptors())
    throw ConfigError(std::string("cross-context mode '") + std::string(cross_context_name(mode)) +
                      "' requires descriptors, but none were loaded (missing " + kDescriptorFile +
                      "?)");
  std::vector<DocumentEmbedding> docs;
  for (auto id : corpus.split_pages(split)) {
    Matrix feats = render_patch_features(corpus.page(id), corpus.vocab, corpus.params.sketch_dim);
    const auto& desc = corpus.descriptor(id).tokens;
    if (mode == CrossContext::Finetuned) {
      docs.push_back(encode_page_with_context(feats, desc, params, id));
      continue;
    }
    DocumentEmbedding d = encode_page(feats, params, id);
    DescriptorEmbedding e = encode_descriptor(desc, params, id);
    for (std::size_t r = 0; r < e.tokens.rows(); ++r) d.patches.append_row(e.tokens.row(r));
    docs.push_back(std::move(d));
  }
  return docs;
}

EvalReport evaluate_embeddings(const Corpus& corpus, SplitName split,
                               const std::vector<QueryEmbedding>& queries,
                               const std::vector<DocumentEmbedding>& docs,
                               const ScoringVariant& variant, std::size_t k) {
  const auto specs = corpus.split_queries(split);
  if (specs.empty()) throw ConfigError("split '" + std::string(split_name(split)) + "' has no queries");
  if (specs.size() != queries.size())
    throw DimensionError("evaluate: query embeddings do not match the split");

  std::vector<DocumentEmbedding> pooled;
  std::span<const DocumentEmbedding> index(docs);
  if (variant.pooling) {
    pooled.reserve(docs.size());
    for (const auto& d : docs) pooled.push_back(with_pooled_global(d, *variant.pooling));
    index = pooled;
  }

  std::vector<QueryResult> results;
  results.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    Ranking r = rank(queries[i], index, index.size(), variant.flags);
    results.push_back({specs[i]->query_id, std::move(r.doc_ids), specs[i]->relevant, specs[i]->qtype});
  }
  return summarize(variant.name, "synthetic/" + std::string(split_name(split)), results, k);
}

EvalReport evaluate_split(const EncoderParams& params, const Corpus& corpus, SplitName split,
                          const ScoringVariant& variant, std::size_t k) {
  auto docs = encode_split_pages(params, corpus, split);
  auto queries = encode_split_queries(params, corpus, split);
  return evaluate_embeddings(corpus, split, queries, docs, variant, k);
}

const std::vector<std::string>& ablation_rows() {
  static const std::vector<std::string> rows = {
      kRowFull,         kRowNoPatches,  kRowNoQueryGlobal, kRowNoDocGlobal, kRowNoLossGlobal,
      kRowNoLossLocal,  kRowPoolMean,   kRowPoolMax,       kRowPoolMedian};
  return rows;
}

namespace {

struct RowPlan {
  std::string checkpoint_role;
  ScoringVariant variant;
};

RowPlan plan_row(const std::string& row) {
  RowPlan p{kRoleFull, {}};
  p.variant.name = row;
  if (row == kRowFull) return p;
  if (row == kRowNoPatches) {
    p.variant.flags.use_patches = false;
  } else if (row == kRowNoQueryGlobal) {
    p.variant.flags.use_query_global = false;
  } else if (row == kRowNoDocGlobal) {
    p.variant.flags.use_doc_global = false;
  } else if (row == kRowNoLossGlobal) {
    p.checkpoint_role = kRoleNoLossGlobal;
  } else if (row == kRowNoLossLocal) {
    p.checkpoint_role = kRoleNoLossLocal;
  } else if (row == kRowPoolMean) {
    p.variant.pooling = PoolingMode::Mean;
  } else if (row == kRowPoolMax) {
    p.variant.pooling = PoolingMode::Max;
  } else if (row == kRowPoolMedian) {
    p.variant.pooling = PoolingMode::Median;
  } else {
    throw ConfigError("unknown ablation row '" + row + "'");
  }
  return p;
}

const EncoderParams* lookup(const std::map<std::string, const EncoderParams*>& cps,
                            const std::string& role) {
  auto it = cps.find(role);
  return it == cps.end() ? nullptr : it->second;
}

}  // namespace

AblationTable run_ablations(const Corpus& corpus,
                            const std::map<std::string, const EncoderParams*>& checkpoints,
                            const std::vector<std::string>& rows, SplitName split, std::size_t k) {
  std::vector<RowPlan> plans;
  for (const auto& row : rows) {
    plans.push_back(plan_row(row));
    if (!lookup(checkpoints, plans.back().checkpoint_role))
      throw ConfigError("ablation row '" + row + "' needs a checkpoint for role '" +
                        plans.back().checkpoint_role + "'");
  }

  // Encodings are shared between rows that use the same checkpoint.
  struct Encoded {
    std::vector<DocumentEmbedding> docs;
    std::vector<QueryEmbedding> queries;
  };
  std::map<std::string, Encoded> cache;
  auto encoded = [&](const std::string& role) -> const Encoded& {
    auto it = cache.find(role);
    if (it != cache.end()) return it->second;
    const EncoderParams& p = *lookup(checkpoints, role);
    Encoded e{encode_split_pages(p, corpus, split), encode_split_queries(p, corpus, split)};
    return cache.emplace(role, std::move(e)).first->second;
  };

  AblationTable table;
  for (const auto& plan : plans) {
    const Encoded& e = encoded(plan.checkpoint_role);
    table.rows.push_back(evaluate_embeddings(corpus, split, e.queries, e.docs, plan.variant, k));
  }

  const EvalReport* full = nullptr;
  for (const auto& r : table.rows)
    if (r.variant == kRowFull) full = &r;
  if (full) {
    for (const auto& r : table.rows) {
      if (&r == full) continue;
      if (auto s = compare_reports(*full, r)) table.significance.push_back(*s);
    }
    if (lookup(checkpoints, kRoleRetrievalOnly)) {
      ScoringVariant v;
      v.name = kRoleRetrievalOnly;
      const auto& e = encoded(kRoleRetrievalOnly);
      EvalReport ro = evaluate_embeddings(corpus, split, e.queries, e.docs, v, k);
      if (auto s = compare_reports(*full, ro)) table.significance.push_back(*s);
    }
  }
  for (auto& r : table.rows)
    for (const auto& s : table.significance)
      if (s.method_b == r.variant) r.significance.push_back(s);
  return table;
}

namespace {

void add_page(FeatureMeans& m, const PageSpec& page, std::size_t grid) {
  auto f = layout_features(page);
  m.n_text += f.n_text;
  m.n_image += f.n_image;
  m.n_list += f.n_list;
  m.n_words += f.n_words;
  m.n_visual_elements += f.n_visual_elements;
  auto centers = region_centers(page);
  m.spatial_entropy += spatial_entropy(centers, grid);
  ++m.pages;
}

void finish(FeatureMeans& m) {
  if (m.pages == 0) return;
  const double n = static_cast<double>(m.pages);
  m.n_text /= n;
  m.n_image /= n;
  m.n_list /= n;
  m.n_words /= n;
  m.n_visual_elements /= n;
  m.spatial_entropy /= n;
}

}  // namespace

LayoutContrast layout_contrast(const EvalReport& better, const EvalReport& baseline,
                               const Corpus& corpus, std::size_t entropy_grid) {
  std::map<std::uint32_t, double> base;
  for (const auto& q : baseline.per_query) base[q.query_id] = q.ndcg;
  LayoutContrast out;
  for (const auto& q : better.per_query) {
    auto it = base.find(q.query_id);
    if (it == base.end()) continue;
    const double diff = q.ndcg - it->second;
    if (std::abs(diff) <= kWilcoxonZeroTol) continue;
    const PageSpec& page = corpus.page(corpus.queries.at(q.query_id).source_page);
    add_page(diff > 0 ? out.improved : out.failed, page, entropy_grid);
  }
  finish(out.improved);
  finish(out.failed);
  return out;
}

namespace {

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

std::string type_cell(const std::map<QueryType, TypeMeans>& b, QueryType t) {
  auto it = b.find(t);
  return it == b.end() ? "absent" : fmt(it->second.ndcg);
}

}  // namespace

void write_table(std::ostream& out, const std::vector<EvalReport>& rows,
                 const std::vector<SignificanceRecord>& significance) {
  const std::vector<std::string> head = {"variant", "dataset", "nDCG@k", "MAP@k", "mean",
                                         "local nDCG", "global nDCG", "n"};
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    auto b = qtype_breakdown(r);
    cells.push_back({r.variant, r.dataset, fmt(r.mean_ndcg), fmt(r.mean_map),
                     fmt((r.mean_ndcg + r.mean_map) / 2), type_cell(b, QueryType::Local),
                     type_cell(b, QueryType::Global), std::to_string(r.per_query.size())});
  }
  std::vector<std::size_t> w(head.size());
  for (std::size_t c = 0; c < head.size(); ++c) {
    w[c] = head[c].size();
    for (const auto& row : cells) w[c] = std::max(w[c], row[c].size());
  }
  auto line = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out << "  ";
      if (c < 2)
        out << std::left << std::setw(static_cast<int>(w[c])) << row[c];
      else
        out << std::right << std::setw(static_cast<int>(w[c])) << row[c];
    }
    out << '\n';
  };
  line(head);
  for (const auto& row : cells) line(row);
  for (const auto& s : significance)
    out << "wilcoxon " << s.method_a << " vs " << s.method_b << " (" << s.metric
        << "): W=" << fmt(s.statistic, 1) << " p=" << fmt(s.p_value) << " n=" << s.n << '\n';
}

void write_tsv(std::ostream& out, const std::vector<EvalReport>& rows,
               const std::vector<SignificanceRecord>& significance) {
  out << "variant\tdataset\tmetric\tvalue\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    const std::string k = std::to_string(r.k);
    out << r.variant << '\t' << r.dataset << "\tndcg@" << k << '\t' << r.mean_ndcg << '\n';
    out << r.variant << '\t' << r.dataset << "\tmap@" << k << '\t' << r.mean_map << '\n';
    for (const auto& [type, t] : qtype_breakdown(r)) {
      out << r.variant << '\t' << r.dataset << "\tndcg@" << k << '/' << query_type_name(type)
          << '\t' << t.ndcg << '\n';
      out << r.variant << '\t' << r.dataset << "\tmap@" << k << '/' << query_type_name(type)
          << '\t' << t.map << '\n';
    }
  }
  for (const auto& s : significance) {
    const std::string dataset = rows.empty() ? "synthetic" : rows.front().dataset;
    out << s.method_a << "_vs_" << s.method_b << '\t' << dataset << "\twilcoxon_p/" << s.metric
        << '\t' << s.p_value << '\n';
  }
}

}  // namespace glt
