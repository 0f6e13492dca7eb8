#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "glt/corpus.hpp"
#include "glt/encoder.hpp"
#include "glt/losses.hpp"

namespace glt {

struct TrainerConfig {
  std::size_t batch_size = 32;
  double learning_rate = 5e-4;
  double weight_decay = 1e-4;
  std::size_t warmup_steps = 100;
  std::size_t epochs = 60;
  double tau = 0.1;            // L_global
  double tau_retrieval = 0.1;  // L_retrieval
  LossSwitches switches;
  LossWeights weights;
  std::size_t early_stop_patience = 10;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  /// Generated training queries per train page and epoch, on top of the
  /// corpus' own train queries (0 = corpus queries only).
  std::size_t augment_per_page = 8;
  /// Share of generated training queries that are layout (global) queries.
  double augment_global_fraction = 0.5;
  /// Generated queries per dev page added to the early-stopping monitor,
  /// drawn once per run. The corpus dev split alone has 20 queries.
  std::size_t dev_extra_per_page = 8;
  /// Train with descriptor tokens concatenated into every page sequence
  /// (the finetuned cross-context baseline).
  bool cross_context = false;

  /// Batch 128, lr 5e-5, 6 epochs, tau 0.02 on both contrastive terms.
  static TrainerConfig full_scale();
  /// Throws ConfigError on unusable settings, including all switches off.
  void validate() const;
  friend bool operator==(const TrainerConfig&, const TrainerConfig&) = default;
};

struct StepRecord {
  std::size_t step = 0;  // 1-based, continues across resumes
  std::size_t epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  double global = 0.0;
  double local = 0.0;
  double retrieval = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_total = 0.0;
  double dev_ndcg = 0.0;
};

struct TrainingLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::optional<std::size_t> early_stop_epoch;
};

struct TrainResult {
  EncoderParams params;  // best dev epoch
  TrainingLog log;
  std::size_t final_step = 0;
};

/// Training hit a NaN or infinite loss. Carries the log up to the failure.
class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(const std::string& what, TrainingLog partial)
      : std::runtime_error(what), log(std::move(partial)) {}
  TrainingLog log;
};

/// One (query, page, descriptor) triple.
struct TrainingSample {
  std::vector<std::uint32_t> query;
  Matrix page_features;
  std::vector<std::uint32_t> descriptor;
  std::uint32_t page_id = 0;
  std::vector<std::uint32_t> distractors;  // layout twins to share a batch with
};

/// Samples for the split's own queries plus `extra` (e.g. generated ones).
std::vector<TrainingSample> training_samples(const Corpus& corpus, SplitName split,
                                             std::span<const QuerySpec> extra = {});

/// Joint objective of one batch and its gradient w.r.t. every parameter.
/// Per-sample gradients are summed in ascending sample order, so the result
/// does not depend on the thread count.
JointTerms batch_gradients(const EncoderParams& params, std::span<const TrainingSample> batch,
                           const TrainerConfig& config, EncoderParams& grads);

/// Decoupled-weight-decay Adam. Decay applies to weight matrices only
/// (tensors with more than one row and column).
class AdamW {
 public:
  AdamW(const EncoderParams& shape, double weight_decay);
  void step(EncoderParams& params, const EncoderParams& grads, double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  EncoderParams m_, v_;
  double weight_decay_;
  std::size_t t_ = 0;
};

/// Linear ramp from 0 to lr over warmup steps, then constant. `step` is 1-based.
double learning_rate_at(const TrainerConfig& config, std::size_t step);

/// Trains from `init` (or a fresh init_params(encoder)) with early stopping
/// on dev nDCG@5. `start_step` offsets the step counter when resuming.
/// Throws ConfigError without train/dev data and NonFiniteLossError on
/// divergence.
/// `on_epoch`, when set, sees every epoch record with the current weights.
using EpochHook = std::function<void(const EpochRecord&, const EncoderParams&)>;
TrainResult train(const Corpus& corpus, const EncoderConfig& encoder, const TrainerConfig& config,
                  const EncoderParams* init = nullptr, std::size_t start_step = 0,
                  const EpochHook& on_epoch = {});

inline constexpr std::size_t kEncoderGradProbes = 200;
inline constexpr double kEncoderGradTolerance = 1e-3;

/// Central differences of the joint batch objective against backprop on
/// `probes` random parameter coordinates. Intended for tiny configs
/// (model_dim <= 16, one layer). Throws ArgumentError unless epsilon lies in
/// [1e-6, 1e-3].
GradCheckReport grad_check_encoder(EncoderParams params, std::span<const TrainingSample> sample,
                                   double epsilon, const TrainerConfig& config = {},
                                   std::size_t probes = kEncoderGradProbes,
                                   double tolerance = kEncoderGradTolerance,
                                   std::uint64_t probe_seed = 0);

}  // namespace glt
