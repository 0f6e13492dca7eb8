#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "glt/embedding.hpp"
#include "glt/late_interaction.hpp"

namespace glt {

class Temperature {
 public:
  /// Throws ArgumentError unless tau > 0 and finite.
  explicit Temperature(double tau);
  double value() const noexcept { return tau_; }

 private:
  double tau_;
};

inline constexpr double kFullScaleTau = 0.02;

/// A loss value with gradients shaped exactly like the inputs it was
/// computed from. `argmax` lists every max-selection the value depends on,
/// so a finite-difference probe can tell when it crossed a tie.
struct LossValue {
  double value = 0.0;
  std::vector<Matrix> gradients;
  std::vector<std::size_t> argmax;
};

/// InfoNCE between visual and descriptor global vectors (rows matched by
/// index), averaged over the batch. Gradients: {d/dGv, d/dGdesc}.
LossValue global_infonce(const Matrix& gv, const Matrix& gdesc, Temperature tau);

/// -sum_k max_j cos(patch_k, desc_j). Gradients: {d/dI, d/dEdesc}, routed
/// through the lowest-index maximizer.
LossValue local_align(const Matrix& patches, const Matrix& desc_tokens);

/// In-batch InfoNCE over a square score matrix with positives on the
/// diagonal. Gradients: {d/dscores}.
LossValue retrieval_infonce(const Matrix& scores, Temperature tau);
LossValue retrieval_infonce(const ScoreMatrix& scores, Temperature tau);

/// Unweighted sum of the enabled terms. Gradients are added position by
/// position, so every present term must be expressed over the same inputs.
/// At least one term must be present.
LossValue joint_loss(const std::optional<LossValue>& global, const std::optional<LossValue>& local,
                     const std::optional<LossValue>& retrieval);

struct LossSwitches {
  bool global = true;
  bool local = true;
  bool retrieval = true;

  bool any() const noexcept { return global || local || retrieval; }
  friend bool operator==(const LossSwitches&, const LossSwitches&) = default;
};

/// Coefficients on the joint objective. The default is the plain sum.
struct LossWeights {
  double global = 1.0;
  double local = 1.0;
  double retrieval = 1.0;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// Encoder outputs for one training batch. Every sequence carries its global
/// row last. Page sequences may carry extra (cross-context) rows between the
/// patches and the global row; only the first `page_patch_rows[b]` rows are
/// patches for the local loss.
struct BatchEmbeddings {
  std::vector<Matrix> queries;
  std::vector<Matrix> pages;
  std::vector<std::size_t> page_patch_rows;
  std::vector<Matrix> descriptors;  // may be empty when global/local are off
};

/// Components are unweighted; total applies the weights.
struct JointTerms {
  double total = 0.0;
  double global = 0.0;
  double local = 0.0;
  double retrieval = 0.0;
  std::vector<Matrix> query_grads;
  std::vector<Matrix> page_grads;
  std::vector<Matrix> descriptor_grads;
  std::vector<std::size_t> argmax;
};

/// The full training objective on a batch: global InfoNCE on the global rows,
/// local alignment averaged over the batch, and retrieval InfoNCE over the
/// in-batch MaxSim score grid. Throws ConfigError if all switches are off.
JointTerms joint_objective(const BatchEmbeddings& batch, const LossSwitches& switches,
                           Temperature tau_global, Temperature tau_retrieval,
                           const LossWeights& weights = {});

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;  // probes whose perturbation moved an argmax
  double tolerance = 0.0;
  bool passed = false;
};

/// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
inline constexpr double kGradCheckFloor = 1e-6;

/// One scalar coordinate under test and its analytic derivative.
struct GradProbe {
  double* coordinate;
  double analytic;
};

/// Central differences for every probe. `evaluate` recomputes the loss and
/// its argmax signature from the current coordinate values. Throws
/// ArgumentError unless epsilon is in [1e-6, 1e-3].
GradCheckReport check_probes(std::span<const GradProbe> probes,
                             const std::function<LossValue()>& evaluate, double epsilon,
                             double tolerance);

using LossFn = std::function<LossValue(const std::vector<Matrix>&)>;

/// Checks every coordinate of every input matrix against loss_fn's analytic
/// gradients.
GradCheckReport finite_diff_check(const LossFn& loss_fn, std::vector<Matrix> inputs,
                                  double epsilon, double tolerance);

}  // namespace glt
