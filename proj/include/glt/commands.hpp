#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "glt/config.hpp"
#include "glt/eval.hpp"
#include "glt/late_interaction.hpp"
#include "glt/trainer.hpp"

namespace glt {

namespace fs = std::filesystem;

/// File names inside a run directory.
inline constexpr const char* kCorpusDir = "corpus";
inline constexpr const char* kIndexFile = "index.ligt";
inline constexpr const char* kConfigFile = "run_config.json";
/// model_<role>.gdft and train_log_<role>.jsonl
fs::path checkpoint_path(const fs::path& run_dir, const std::string& role);
fs::path train_log_path(const fs::path& run_dir, const std::string& role);

struct GenSummary {
  std::size_t pages = 0;
  std::size_t queries = 0;
  std::size_t local_queries = 0;
  std::size_t global_queries = 0;
  std::size_t train_pages = 0, dev_pages = 0, test_pages = 0;
};

/// Generates, validates and writes the corpus into out_dir. Throws
/// ConfigError for bad parameters and IoError for an unwritable path.
GenSummary cmd_gen(const RunConfig& config, const fs::path& out_dir, std::ostream& out);

struct TrainOutcome {
  TrainResult result;
  fs::path checkpoint;
  fs::path log;
};

/// Trains one role and writes its checkpoint and per-step JSONL log. With
/// `resume`, starts from that checkpoint's weights and step count. On a
/// non-finite loss the partial log is written before the error propagates.
TrainOutcome cmd_train(const RunConfig& config, const fs::path& corpus_dir,
                       const fs::path& checkpoint_out, const fs::path& log_out,
                       const std::string& role, const std::optional<fs::path>& resume,
                       std::ostream& out);

void write_train_log(const fs::path& path, const TrainingLog& log);

/// Encodes every page with encode_page. The corpus is opened without
/// descriptors. Throws IntegrityError on a damaged checkpoint (before any
/// file is written).
std::size_t cmd_index(const fs::path& checkpoint, const fs::path& corpus_dir,
                      const fs::path& index_out);

/// Tokenizes `query_text` (whitespace separated token names such as
/// "w12 w40 table list below"), encodes it with the checkpoint and ranks the
/// index. Throws ArgumentError when k < 1 or a token is unknown.
Ranking cmd_search(const fs::path& index, const fs::path& checkpoint,
                   const std::string& query_text, std::size_t k, const ScoringFlags& flags);

struct EvalRequest {
  fs::path checkpoint;
  fs::path corpus_dir;
  std::optional<fs::path> index;  // precomputed documents for normal mode
  CrossContext mode = CrossContext::Off;
  std::string variant = "full";
};

/// Normal mode never opens descriptors. Cross-context modes require them
/// and raise ConfigError when they are missing.
EvalReport cmd_eval(const RunConfig& config, const EvalRequest& request);

struct AblateRequest {
  fs::path run_dir;
  std::vector<std::string> rows;  // empty = config.ablation_rows
  bool train_missing = false;     // train absent role checkpoints first
};

AblationTable cmd_ablate(const RunConfig& config, const AblateRequest& request, std::ostream& out);

/// Writes an aligned table to `out` and the TSV next to it when tsv is set.
void emit_reports(std::ostream& out, const std::vector<EvalReport>& rows,
                  const std::vector<SignificanceRecord>& sig, const std::optional<fs::path>& tsv);

}  // namespace glt
