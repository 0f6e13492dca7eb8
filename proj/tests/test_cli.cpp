#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "doctest.h"
#include "glt/commands.hpp"
#include "glt/errors.hpp"
#include "glt/store.hpp"

using namespace glt;

namespace {

RunConfig tiny_run() {
  RunConfig c;
  c.corpus.n_pages = 40;
  c.corpus.n_queries = 40;
  c.encoder.model_dim = 16;
  c.encoder.retrieval_dim = 8;
  c.encoder.layers = 1;
  c.encoder.heads = 2;
  c.encoder.ffn_dim = 32;
  c.trainer.epochs = 2;
  c.trainer.batch_size = 8;
  c.trainer.augment_per_page = 1;
  c.trainer.warmup_steps = 5;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("glt_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// One generated corpus and trained full checkpoint shared by the cases below.
struct Run {
  RunConfig config = tiny_run();
  fs::path dir = fresh_dir("shared");
  fs::path corpus = dir / kCorpusDir;
  fs::path ckpt = checkpoint_path(dir, kRoleFull);
  Run() {
    std::ostringstream sink;
    cmd_gen(config, corpus, sink);
    cmd_train(config, corpus, ckpt, train_log_path(dir, kRoleFull), kRoleFull, std::nullopt, sink);
  }
};

Run& shared() {
  static Run run;
  return run;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(GLT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("gen writes a validated corpus") {
  auto dir = fresh_dir("gen");
  std::ostringstream out;
  auto s = cmd_gen(RunConfig{}, dir / "a", out);
  CHECK(s.pages == 200);
  CHECK(s.local_queries + s.global_queries == 200);
  CHECK(out.str().find("queries 200") != std::string::npos);
  CHECK(validate_corpus(load_corpus(dir / "a", true)).ok);
  cmd_gen(RunConfig{}, dir / "b", out);
  CHECK(read_file(dir / "a" / kCorpusFile) == read_file(dir / "b" / kCorpusFile));

  RunConfig tiny;
  tiny.corpus.n_pages = 5;
  CHECK_THROWS_AS(cmd_gen(tiny, dir / "c", out), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("train routes roles to loss switches") {
  auto& run = shared();
  auto full = read_lines(train_log_path(run.dir, kRoleFull));
  REQUIRE_FALSE(full.empty());
  CHECK(full.back().find("\"kind\":\"summary\"") != std::string::npos);

  std::ostringstream sink;
  auto dir = fresh_dir("roles");
  auto out = cmd_train(run.config, run.corpus, dir / "r.gdft", dir / "r.jsonl", kRoleRetrievalOnly,
                       std::nullopt, sink);
  for (const auto& s : out.result.log.steps) {
    CHECK(s.global == 0.0);
    CHECK(s.local == 0.0);
    CHECK(s.retrieval > 0.0);
  }
  CHECK(fs::exists(dir / "r.gdft"));
  fs::remove_all(dir);
}

TEST_CASE("resume continues the step count in the log") {
  auto& run = shared();
  auto dir = fresh_dir("resume");
  std::ostringstream sink;
  auto before = load_checkpoint(run.ckpt);
  auto out = cmd_train(run.config, run.corpus, dir / "m.gdft", dir / "m.jsonl", kRoleFull,
                       run.ckpt, sink);
  CHECK(out.result.log.steps.front().step == before.step + 1);
  CHECK(load_checkpoint(dir / "m.gdft").step > before.step);
  fs::remove_all(dir);
}

TEST_CASE("index covers every page and is reproducible") {
  auto& run = shared();
  auto dir = fresh_dir("index");
  CHECK(cmd_index(run.ckpt, run.corpus, dir / "a.ligt") == 40);
  cmd_index(run.ckpt, run.corpus, dir / "b.ligt");
  CHECK(read_file(dir / "a.ligt") == read_file(dir / "b.ligt"));
  auto docs = load_index(dir / "a.ligt");
  auto corpus = load_corpus(run.corpus, false);
  for (const auto& d : docs)
    CHECK(d.patches.rows() == corpus.page(d.page_id).grid_rows * corpus.page(d.page_id).grid_cols);
  fs::remove_all(dir);
}

TEST_CASE("a damaged checkpoint produces no index") {
  auto& run = shared();
  auto dir = fresh_dir("damaged");
  auto bytes = read_file(run.ckpt);
  bytes[bytes.size() / 3] ^= 0x04;
  write_file_atomic(dir / "bad.gdft", bytes);
  CHECK_THROWS_AS(cmd_index(dir / "bad.gdft", run.corpus, dir / "i.ligt"), IntegrityError);
  CHECK_FALSE(fs::exists(dir / "i.ligt"));
  fs::remove_all(dir);
}

TEST_CASE("search") {
  auto& run = shared();
  auto index = run.dir / kIndexFile;
  cmd_index(run.ckpt, run.corpus, index);
  SUBCASE("k beyond the corpus returns every page") {
    auto r = cmd_search(index, run.ckpt, "w3 w7", 1000, {});
    CHECK(r.doc_ids.size() == 40);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(cmd_search(index, run.ckpt, "w3", 0, {}), ArgumentError);
    CHECK_THROWS_AS(cmd_search(index, run.ckpt, "w3", 5, {true, false, false}), ConfigError);
    CHECK_THROWS_AS(cmd_search(index, run.ckpt, "nonsense", 5, {}), ArgumentError);
  }
}

TEST_CASE("eval modes and descriptor access") {
  auto& run = shared();
  auto dir = fresh_dir("purity");
  fs::copy(run.corpus, dir / "corpus", fs::copy_options::recursive);
  EvalRequest req{run.ckpt, dir / "corpus", std::nullopt, CrossContext::Off, "full"};
  auto with = cmd_eval(run.config, req);
  CHECK_FALSE(with.per_query.empty());

  req.mode = CrossContext::Frozen;
  CHECK_NOTHROW(cmd_eval(run.config, req));

  fs::remove(dir / "corpus" / kDescriptorFile);
  req.mode = CrossContext::Off;
  auto without = cmd_eval(run.config, req);
  CHECK(without.mean_ndcg == with.mean_ndcg);
  CHECK(without.mean_map == with.mean_map);
  req.mode = CrossContext::Frozen;
  CHECK_THROWS_AS(cmd_eval(run.config, req), ConfigError);
  req.mode = CrossContext::Finetuned;
  CHECK_THROWS_AS(cmd_eval(run.config, req), ConfigError);

  req.mode = CrossContext::Off;
  req.index = run.dir / kIndexFile;
  cmd_index(run.ckpt, run.corpus, *req.index);
  CHECK(cmd_eval(run.config, req).mean_ndcg == with.mean_ndcg);
  fs::remove_all(dir);
}

TEST_CASE("ablate") {
  auto& run = shared();
  std::ostringstream sink;
  SUBCASE("row subset") {
    auto t = cmd_ablate(run.config, {run.dir, {kRowFull, kRowPoolMax}, false}, sink);
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[1].variant == kRowPoolMax);
  }
  SUBCASE("missing loss checkpoint without training") {
    CHECK_THROWS_AS(cmd_ablate(run.config, {run.dir, {kRowNoLossGlobal}, false}, sink),
                    ConfigError);
  }
  SUBCASE("full table trains what it needs") {
    auto t = cmd_ablate(run.config, {run.dir, {}, true}, sink);
    CHECK(t.rows.size() == 9);
    CHECK(fs::exists(checkpoint_path(run.dir, kRoleRetrievalOnly)));
    EvalRequest req;
    req.checkpoint = checkpoint_path(run.dir, kRoleRetrievalOnly);
    req.corpus_dir = run.corpus;
    EvalReport ro = cmd_eval(run.config, req);
    ro.variant = kRoleRetrievalOnly;
    const auto expected = compare_reports(t.rows.front(), ro);
    REQUIRE(t.rows.front().variant == kRowFull);
    std::optional<SignificanceRecord> got;
    for (const auto& s : t.significance) {
      CHECK(s.method_a == kRowFull);
      if (s.method_b == kRoleRetrievalOnly) got = s;
    }
    REQUIRE(got.has_value() == expected.has_value());
    if (got) {
      CHECK(got->n == expected->n);
      CHECK(got->p_value == expected->p_value);
    }
  }
}

TEST_CASE("cli exit codes") {
  auto dir = fresh_dir("exit");
  const std::string run = "--run-dir " + (dir / "run").string();
  save_run_config(dir / "tiny.json", tiny_run());
  RunConfig bad = tiny_run();
  std::ofstream(dir / "bad.json") << R"({"corpus": {"n_pages": 5}})";
  std::ofstream(dir / "typo.json") << R"({"corpus": {"pages": 50}})";
  const std::string cfg = " --config " + (dir / "tiny.json").string() + " ";

  CHECK(run_cli(run + cfg + "gen") == 0);
  CHECK(fs::exists(dir / "run" / kConfigFile));
  CHECK(run_cli(run + " --config " + (dir / "bad.json").string() + " gen") == 2);
  CHECK(run_cli(run + " --config " + (dir / "typo.json").string() + " gen") == 2);
  CHECK(run_cli(run + " --bogus gen") == 2);
  CHECK(run_cli(run) == 2);
  CHECK(run_cli(run + cfg + "train") == 0);
  CHECK(run_cli(run + cfg + "index") == 0);
  CHECK(run_cli(run + cfg + "search -q 'w1 w2' -k 3") == 0);
  CHECK(run_cli(run + cfg + "search -q w1 -k 0") == 2);
  CHECK(run_cli(run + cfg + "search -q w1 --no-patches --no-doc-global") == 2);
  CHECK(run_cli(run + cfg + "eval --mode sideways") == 2);
  CHECK(run_cli(run + cfg + "eval --tsv " + (dir / "e.tsv").string()) == 0);
  CHECK(fs::exists(dir / "e.tsv"));

  auto bytes = read_file(dir / "run" / "model_full.gdft");
  bytes[40] ^= 0xff;
  write_file_atomic(dir / "run" / "model_full.gdft", bytes);
  CHECK(run_cli(run + cfg + "index") == 3);
  fs::remove_all(dir);
}
