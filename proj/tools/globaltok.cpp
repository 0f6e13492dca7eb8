// globaltok: gen -> train -> index -> search -> eval -> ablate

#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "glt/commands.hpp"
#include "glt/errors.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIntegrity = 3;

}  // namespace

int main(int argc, char** argv) {
  using namespace glt;
  CLI::App app{"Global-token late-interaction retrieval on a synthetic layout corpus"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::string run_dir = "run";
  app.add_option("--config", config_path, "JSON run config (every key optional)");
  app.add_option("--seed", seed, "Encoder init / batch order seed");
  app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--run-dir", run_dir, "Directory holding corpus, checkpoints and index");

  auto* gen = app.add_subcommand("gen", "Generate the synthetic corpus");
  std::string gen_out;
  gen->add_option("--out", gen_out, "Corpus directory (default RUN_DIR/corpus)");

  auto* trn = app.add_subcommand("train", "Train one checkpoint");
  std::string role = kRoleFull, corpus_dir, ckpt_out, resume;
  trn->add_option("--role", role, "full | retrieval_only | no_loss_global | no_loss_local");
  trn->add_option("--corpus", corpus_dir, "Corpus directory");
  trn->add_option("--out", ckpt_out, "Checkpoint path (default RUN_DIR/model_ROLE.gdft)");
  trn->add_option("--resume", resume, "Continue from this checkpoint");

  auto* idx = app.add_subcommand("index", "Encode every page into an index file");
  std::string checkpoint, index_path;
  idx->add_option("--checkpoint", checkpoint, "Checkpoint (default RUN_DIR/model_full.gdft)");
  idx->add_option("--corpus", corpus_dir, "Corpus directory");
  idx->add_option("--out", index_path, "Index path (default RUN_DIR/index.ligt)");

  auto* srch = app.add_subcommand("search", "Rank indexed pages for one query");
  std::string query;
  std::size_t k = kEvalCutoff;
  bool no_patches = false, no_qg = false, no_dg = false;
  srch->add_option("--index", index_path, "Index path");
  srch->add_option("--checkpoint", checkpoint, "Checkpoint for the query encoder");
  srch->add_option("--query,-q", query, "Token names, e.g. \"w3 w17 table list below\"")->required();
  srch->add_option("-k", k, "Results to return");
  srch->add_flag("--no-patches", no_patches, "Drop document patch rows");
  srch->add_flag("--no-query-global", no_qg, "Drop the query global row");
  srch->add_flag("--no-doc-global", no_dg, "Drop the document global row");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  std::string mode = "off", tsv;
  ev->add_option("--checkpoint", checkpoint, "Checkpoint");
  ev->add_option("--corpus", corpus_dir, "Corpus directory");
  ev->add_option("--index", index_path, "Use these document vectors (normal mode)");
  ev->add_option("--mode", mode, "off | frozen | finetuned (cross-context oracles)");
  ev->add_option("--tsv", tsv, "Also write variant/dataset/metric/value rows here");

  auto* abl = app.add_subcommand("ablate", "Ablation table");
  std::vector<std::string> rows;
  bool train_missing = false;
  abl->add_option("--rows", rows, "Subset of rows")->delimiter(',');
  abl->add_flag("--train-missing", train_missing, "Train absent role checkpoints first");
  abl->add_option("--tsv", tsv, "Also write variant/dataset/metric/value rows here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    cfg.validate();
    const fs::path run(run_dir);
    const fs::path corpus = corpus_dir.empty() ? run / kCorpusDir : fs::path(corpus_dir);
    const fs::path ckpt = checkpoint.empty() ? checkpoint_path(run, kRoleFull) : fs::path(checkpoint);
    const fs::path index = index_path.empty() ? run / kIndexFile : fs::path(index_path);

    if (*gen) {
      const fs::path out = gen_out.empty() ? run / kCorpusDir : fs::path(gen_out);
      cmd_gen(cfg, out, std::cout);
      fs::create_directories(run);
      save_run_config(run / kConfigFile, cfg);
    } else if (*trn) {
      const fs::path out = ckpt_out.empty() ? checkpoint_path(run, role) : fs::path(ckpt_out);
      std::optional<fs::path> from;
      if (!resume.empty()) from = resume;
      fs::create_directories(out.parent_path().empty() ? fs::path(".") : out.parent_path());
      cmd_train(cfg, corpus, out, train_log_path(out.parent_path(), role), role, from, std::cout);
    } else if (*idx) {
      const std::size_t n = cmd_index(ckpt, corpus, index);
      std::cout << "indexed " << n << " pages into " << index.string() << '\n';
    } else if (*srch) {
      const ScoringFlags flags{!no_qg, !no_dg, !no_patches};
      const Ranking r = cmd_search(index, ckpt, query, k, flags);
      for (std::size_t i = 0; i < r.doc_ids.size(); ++i) {
        std::cout << i + 1 << "\tpage " << r.doc_ids[i] << '\t' << r.scores[i] << '\n';
      }
    } else if (*ev) {
      EvalRequest req{ckpt, corpus, std::nullopt, parse_cross_context(mode), "full"};
      if (!index_path.empty()) req.index = index;
      const EvalReport rep = cmd_eval(cfg, req);
      std::optional<fs::path> out;
      if (!tsv.empty()) out = tsv;
      emit_reports(std::cout, {rep}, {}, out);
    } else if (*abl) {
      const AblationTable t = cmd_ablate(cfg, {run, rows, train_missing}, std::cout);
      std::optional<fs::path> out;
      if (!tsv.empty()) out = tsv;
      emit_reports(std::cout, t.rows, t.significance, out);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << '\n';
    return kExitIntegrity;
  } catch (const std::invalid_argument& e) {
    std::cerr << "argument error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
