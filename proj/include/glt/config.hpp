#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "glt/corpus.hpp"
#include "glt/encoder.hpp"
#include "glt/eval.hpp"
#include "glt/late_interaction.hpp"
#include "glt/trainer.hpp"

namespace glt {

struct EncoderSettings {
  std::uint32_t model_dim = 64;
  std::uint32_t retrieval_dim = 32;
  std::uint32_t layers = 2;
  std::uint32_t heads = 4;
  std::uint32_t ffn_dim = 128;
  std::uint32_t max_seq = 64;
  bool shared_global = true;
  bool tie_features = true;  // tie patch feature columns to their tokens

  friend bool operator==(const EncoderSettings&, const EncoderSettings&) = default;
};

struct EvalSettings {
  SplitName split = SplitName::Test;
  std::size_t k = kEvalCutoff;
  std::size_t entropy_grid = 3;
  ScoringFlags flags;
  std::optional<PoolingMode> pooling;

  friend bool operator==(const EvalSettings&, const EvalSettings&) = default;
};

/// Everything one run needs. Every key has a default; a JSON file only has
/// to name what it changes.
struct RunConfig {
  std::uint64_t seed = 0;                  // encoder init and batch order
  std::vector<std::uint64_t> seeds{0, 1, 2};  // seed-averaged directional runs
  unsigned threads = 1;
  CorpusParams corpus;
  EncoderSettings encoder;
  TrainerConfig trainer;
  EvalSettings eval;
  std::vector<std::string> ablation_rows = glt::ablation_rows();
  CrossContext cross_context = CrossContext::Off;

  /// Encoder config for a corpus (vocabulary and patch features come from it).
  EncoderConfig encoder_config(const Corpus& corpus) const;
  /// Trainer config with seed and threads applied.
  TrainerConfig trainer_config() const;
  void validate() const;
};

/// Nested JSON. Unknown keys and ill-typed values raise ConfigError naming
/// the key.
std::string to_json(const RunConfig& config);
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

/// Loss switches of a named training role (full, retrieval_only,
/// no_loss_global, no_loss_local).
LossSwitches role_switches(const std::string& role);

}  // namespace glt
