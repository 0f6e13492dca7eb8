#include "glt/commands.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include "glt/errors.hpp"
#include "glt/store.hpp"
#include "json.hpp"

namespace glt {

fs::path checkpoint_path(const fs::path& run_dir, const std::string& role) {
  return run_dir / ("model_" + role + ".gdft");
}

fs::path train_log_path(const fs::path& run_dir, const std::string& role) {
  return run_dir / ("train_log_" + role + ".jsonl");
}

GenSummary cmd_gen(const RunConfig& config, const fs::path& out_dir, std::ostream& out) {
  const Corpus corpus = generate_corpus(config.corpus);
  const ValidationReport rep = validate_corpus(corpus);
  if (!rep.ok) throw ConfigError("generated corpus failed validation: " + rep.problems.front());
  save_corpus(corpus, out_dir);

  GenSummary s;
  s.pages = corpus.pages.size();
  s.queries = corpus.queries.size();
  for (const auto& q : corpus.queries) (q.qtype == QueryType::Global ? s.global_queries : s.local_queries)++;
  s.train_pages = corpus.splits.train.size();
  s.dev_pages = corpus.splits.dev.size();
  s.test_pages = corpus.splits.test.size();
  out << "pages " << s.pages << " (train " << s.train_pages << ", dev " << s.dev_pages << ", test "
      << s.test_pages << ")\nqueries " << s.queries << " (local " << s.local_queries << ", global "
      << s.global_queries << ")\nwrote " << out_dir.string() << '\n';
  return s;
}

void write_train_log(const fs::path& path, const TrainingLog& log) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (const auto& r : log.steps) {
    nlohmann::ordered_json j{{"kind", "step"},        {"step", r.step},   {"epoch", r.epoch},
                             {"lr", r.lr},            {"total", r.total}, {"global", r.global},
                             {"local", r.local},      {"retrieval", r.retrieval}};
    os << j.dump() << '\n';
  }
  for (const auto& e : log.epochs) {
    nlohmann::ordered_json j{{"kind", "epoch"}, {"epoch", e.epoch}, {"mean_total", e.mean_total},
                             {"dev_ndcg5", e.dev_ndcg}};
    os << j.dump() << '\n';
  }
  nlohmann::ordered_json end{{"kind", "summary"},
                             {"best_epoch", log.best_epoch},
                             {"early_stop_epoch", log.early_stop_epoch
                                                      ? nlohmann::ordered_json(*log.early_stop_epoch)
                                                      : nlohmann::ordered_json(nullptr)}};
  os << end.dump() << '\n';
  const std::string text = os.str();
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

TrainOutcome cmd_train(const RunConfig& config, const fs::path& corpus_dir,
                       const fs::path& checkpoint_out, const fs::path& log_out,
                       const std::string& role, const std::optional<fs::path>& resume,
                       std::ostream& out) {
  const Corpus corpus = load_corpus(corpus_dir, true);
  TrainerConfig tc = config.trainer_config();
  tc.switches = role_switches(role);
  if (role == kRoleFull) tc.switches = config.trainer.switches;
  const EncoderConfig ec = config.encoder_config(corpus);

  std::optional<Checkpoint> start;
  if (resume) {
    start = load_checkpoint(*resume);
    if (start->params.config != ec) {
      throw ConfigError("resume checkpoint was trained with a different encoder config");
    }
  }

  TrainOutcome o{{}, checkpoint_out, log_out};
  try {
    o.result = train(corpus, ec, tc, start ? &start->params : nullptr, start ? start->step : 0,
                     [&](const EpochRecord& e, const EncoderParams&) {
                       out << "epoch " << e.epoch << " loss " << std::fixed << std::setprecision(4)
                           << e.mean_total << " dev nDCG@5 " << e.dev_ndcg << '\n';
                       out.unsetf(std::ios::floatfield);
                     });
  } catch (const NonFiniteLossError& e) {
    write_train_log(log_out, e.log);
    throw;
  }
  save_checkpoint(checkpoint_out, o.result.params, o.result.final_step);
  write_train_log(log_out, o.result.log);
  out << "role " << role << ": best epoch " << o.result.log.best_epoch << ", steps "
      << o.result.final_step;
  if (o.result.log.early_stop_epoch) out << ", early stop at epoch " << *o.result.log.early_stop_epoch;
  out << "\nwrote " << checkpoint_out.string() << " and " << log_out.string() << '\n';
  // The in-memory weights become the float32 ones the checkpoint holds.
  o.result.params = round_to_checkpoint_precision(o.result.params);
  return o;
}

std::size_t cmd_index(const fs::path& checkpoint, const fs::path& corpus_dir,
                      const fs::path& index_out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Corpus corpus = load_corpus(corpus_dir, false);
  std::vector<DocumentEmbedding> docs;
  docs.reserve(corpus.pages.size());
  for (const auto& page : corpus.pages) {
    docs.push_back(encode_page(render_patch_features(page, corpus.vocab, corpus.params.sketch_dim),
                               ck.params, page.page_id));
  }
  save_index(index_out, docs);
  return docs.size();
}

Ranking cmd_search(const fs::path& index, const fs::path& checkpoint,
                   const std::string& query_text, std::size_t k, const ScoringFlags& flags) {
  if (k < 1) throw ArgumentError("k must be >= 1");
  const Checkpoint ck = load_checkpoint(checkpoint);
  const auto docs = load_index(index);
  Vocabulary vocab;
  if (ck.params.config.vocab_size < Vocabulary::kContentBase) {
    throw IntegrityError("checkpoint vocabulary is smaller than the structural token set");
  }
  vocab.content_size = ck.params.config.vocab_size - Vocabulary::kContentBase;
  std::vector<std::uint32_t> ids;
  std::istringstream in(query_text);
  for (std::string tok; in >> tok;) ids.push_back(vocab.parse(tok));
  if (ids.empty()) throw ArgumentError("empty query");
  if (!docs.empty() && docs.front().dim() != ck.params.config.retrieval_dim) {
    throw ConfigError("index dimension does not match the checkpoint");
  }
  return rank(encode_query(ids, ck.params), docs, k, flags);
}

namespace {

std::vector<DocumentEmbedding> split_docs_from_index(const fs::path& index, const Corpus& corpus,
                                                     SplitName split) {
  auto all = load_index(index);
  std::map<std::uint32_t, DocumentEmbedding*> by_id;
  for (auto& d : all) by_id[d.page_id] = &d;
  std::vector<DocumentEmbedding> out;
  for (auto id : corpus.split_pages(split)) {
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw ConfigError("index lacks page " + std::to_string(id) + " of the " +
                        std::string(split_name(split)) + " split");
    }
    out.push_back(std::move(*it->second));
  }
  return out;
}

}  // namespace

EvalReport cmd_eval(const RunConfig& config, const EvalRequest& req) {
  const Checkpoint ck = load_checkpoint(req.checkpoint);
  const SplitName split = config.eval.split;
  ScoringVariant variant{req.variant, config.eval.flags, config.eval.pooling};

  if (req.mode == CrossContext::Off) {
    const Corpus corpus = load_corpus(req.corpus_dir, false);
    auto docs = req.index ? split_docs_from_index(*req.index, corpus, split)
                          : encode_split_pages(ck.params, corpus, split);
    auto queries = encode_split_queries(ck.params, corpus, split);
    return evaluate_embeddings(corpus, split, queries, docs, variant, config.eval.k);
  }
  if (req.index) throw ConfigError("cross-context evaluation encodes documents itself; drop --index");
  const Corpus corpus = load_corpus(req.corpus_dir, true);
  variant.name = req.variant + "/cross_context_" + std::string(cross_context_name(req.mode));
  auto docs = encode_split_pages_with_descriptors(ck.params, corpus, split, req.mode);
  auto queries = encode_split_queries(ck.params, corpus, split);
  return evaluate_embeddings(corpus, split, queries, docs, variant, config.eval.k);
}

AblationTable cmd_ablate(const RunConfig& config, const AblateRequest& req, std::ostream& out) {
  const std::vector<std::string> rows = req.rows.empty() ? config.ablation_rows : req.rows;
  const fs::path corpus_dir = req.run_dir / kCorpusDir;

  // Roles whose checkpoints the rows need, plus the retrieval-only baseline
  // for the significance column when it exists or will be trained.
  std::set<std::string> roles{kRoleFull};
  for (const auto& r : rows) {
    if (r == kRowNoLossGlobal) roles.insert(kRoleNoLossGlobal);
    if (r == kRowNoLossLocal) roles.insert(kRoleNoLossLocal);
  }
  if (req.train_missing) roles.insert(kRoleRetrievalOnly);

  std::map<std::string, EncoderParams> loaded;
  for (const auto& role : roles) {
    const fs::path ck = checkpoint_path(req.run_dir, role);
    if (!fs::exists(ck) && req.train_missing) {
      out << "training missing checkpoint for role " << role << '\n';
      cmd_train(config, corpus_dir, ck, train_log_path(req.run_dir, role), role, std::nullopt, out);
    }
    if (fs::exists(ck)) loaded.emplace(role, load_checkpoint(ck).params);
  }
  const fs::path ro = checkpoint_path(req.run_dir, kRoleRetrievalOnly);
  if (!loaded.count(kRoleRetrievalOnly) && fs::exists(ro))
    loaded.emplace(kRoleRetrievalOnly, load_checkpoint(ro).params);

  std::map<std::string, const EncoderParams*> ptrs;
  for (const auto& [role, p] : loaded) ptrs[role] = &p;
  const Corpus corpus = load_corpus(corpus_dir, false);
  return run_ablations(corpus, ptrs, rows, config.eval.split, config.eval.k);
}

void emit_reports(std::ostream& out, const std::vector<EvalReport>& rows,
                  const std::vector<SignificanceRecord>& sig, const std::optional<fs::path>& tsv) {
  write_table(out, rows, sig);
  if (tsv) {
    std::ostringstream os;
    write_tsv(os, rows, sig);
    const std::string text = os.str();
    write_file_atomic(*tsv, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
}

}  // namespace glt
