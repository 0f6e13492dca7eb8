#include "glt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "glt/errors.hpp"
#include "glt/eval.hpp"
#include "glt/simd/kernels.hpp"
#include "parallel.hpp"

namespace glt {

namespace {

std::vector<Matrix*> tensors(EncoderParams& p) {
  std::vector<Matrix*> out;
  p.for_each([&](std::string_view, Matrix& m) { out.push_back(&m); });
  return out;
}

void zero(EncoderParams& p) {
  p.for_each([](std::string_view, Matrix& m) { m.fill(0.0); });
}

bool all_finite(const EncoderParams& p) {
  bool ok = true;
  p.for_each([&](std::string_view, const Matrix& m) {
    for (double x : m.values()) ok = ok && std::isfinite(x);
  });
  return ok;
}

}  // namespace

TrainerConfig TrainerConfig::full_scale() {
  TrainerConfig c;
  c.batch_size = 128;
  c.learning_rate = 5e-5;
  c.epochs = 6;
  c.tau = kFullScaleTau;
  c.tau_retrieval = kFullScaleTau;
  return c;
}

void TrainerConfig::validate() const {
  auto need = [](bool ok, const char* msg) {
    if (!ok) throw ConfigError(std::string("trainer config: ") + msg);
  };
  need(switches.any(), "all loss switches are off; nothing to optimize");
  need(batch_size >= 2, "batch_size must be >= 2 for in-batch negatives");
  need(learning_rate > 0 && std::isfinite(learning_rate), "learning_rate must be positive");
  need(weight_decay >= 0 && std::isfinite(weight_decay), "weight_decay must be >= 0");
  need(epochs >= 1, "epochs must be >= 1");
  need(early_stop_patience >= 1, "early_stop_patience must be >= 1");
  need(tau > 0 && std::isfinite(tau), "tau must be positive");
  need(tau_retrieval > 0 && std::isfinite(tau_retrieval), "tau_retrieval must be positive");
  for (double w : {weights.global, weights.local, weights.retrieval})
    need(w >= 0 && std::isfinite(w), "loss weights must be finite and >= 0");
  need(augment_global_fraction >= 0.0 && augment_global_fraction <= 1.0,
       "augment_global_fraction must be in [0, 1]");
  need(threads >= 1, "threads must be >= 1");
}

std::vector<TrainingSample> training_samples(const Corpus& corpus, SplitName split,
                                             std::span<const QuerySpec> extra) {
  if (!corpus.has_descriptors())
    throw ConfigError("training needs descriptors (" + std::string(kDescriptorFile) + ")");
  std::vector<const QuerySpec*> queries = corpus.split_queries(split);
  for (const auto& q : extra) queries.push_back(&q);
  std::map<std::uint32_t, Matrix> features;
  std::vector<TrainingSample> out;
  out.reserve(queries.size());
  for (const QuerySpec* q : queries) {
    auto it = features.find(q->source_page);
    if (it == features.end()) {
      it = features
               .emplace(q->source_page, render_patch_features(corpus.page(q->source_page),
                                                              corpus.vocab,
                                                              corpus.params.sketch_dim))
               .first;
    }
    out.push_back({q->tokens, it->second, corpus.descriptor(q->source_page).tokens,
                   q->source_page, q->distractors});
  }
  return out;
}

namespace {

struct Scratch {
  std::vector<EncoderParams> per_sample;
};

JointTerms batch_gradients_impl(const EncoderParams& params, std::span<const TrainingSample> batch,
                                const TrainerConfig& cfg, EncoderParams& grads, Scratch& scratch) {
  const std::size_t b = batch.size();
  const bool need_desc = cfg.switches.global || cfg.switches.local;

  std::vector<ForwardCache> qc(b), pc(b), dc(need_desc ? b : 0);
  BatchEmbeddings emb;
  emb.queries.resize(b);
  emb.pages.resize(b);
  emb.page_patch_rows.resize(b);
  if (need_desc) emb.descriptors.resize(b);

  detail::parallel_for(b, cfg.threads, [&](std::size_t i) {
    const TrainingSample& s = batch[i];
    emb.queries[i] = forward(params, SequenceInput::text(s.query), &qc[i]);
    emb.pages[i] = forward(params,
                           cfg.cross_context
                               ? SequenceInput::page_with_context(s.page_features, s.descriptor)
                               : SequenceInput::page(s.page_features),
                           &pc[i]);
    emb.page_patch_rows[i] = s.page_features.rows();
    if (need_desc) emb.descriptors[i] = forward(params, SequenceInput::text(s.descriptor), &dc[i]);
  });

  JointTerms terms = joint_objective(emb, cfg.switches, Temperature(cfg.tau),
                                     Temperature(cfg.tau_retrieval), cfg.weights);

  while (scratch.per_sample.size() < b) scratch.per_sample.push_back(zeros_like(params));
  detail::parallel_for(b, cfg.threads, [&](std::size_t i) {
    EncoderParams& g = scratch.per_sample[i];
    zero(g);
    if (!terms.query_grads.empty()) backward(params, qc[i], terms.query_grads[i], g);
    backward(params, pc[i], terms.page_grads[i], g);
    if (need_desc) backward(params, dc[i], terms.descriptor_grads[i], g);
  });

  zero(grads);
  for (std::size_t i = 0; i < b; ++i) accumulate(grads, scratch.per_sample[i]);
  return terms;
}

}  // namespace

JointTerms batch_gradients(const EncoderParams& params, std::span<const TrainingSample> batch,
                           const TrainerConfig& config, EncoderParams& grads) {
  Scratch scratch;
  return batch_gradients_impl(params, batch, config, grads, scratch);
}

AdamW::AdamW(const EncoderParams& shape, double weight_decay)
    : m_(zeros_like(shape)), v_(zeros_like(shape)), weight_decay_(weight_decay) {}

void AdamW::step(EncoderParams& params, const EncoderParams& grads, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  auto p = tensors(params);
  auto g = tensors(const_cast<EncoderParams&>(grads));
  auto m = tensors(m_);
  auto v = tensors(v_);
  for (std::size_t t = 0; t < p.size(); ++t) {
    const bool decay = p[t]->rows() > 1 && p[t]->cols() > 1;
    double* pw = p[t]->data();
    const double* gw = g[t]->data();
    double* mw = m[t]->data();
    double* vw = v[t]->data();
    for (std::size_t k = 0; k < p[t]->size(); ++k) {
      mw[k] = b1 * mw[k] + (1 - b1) * gw[k];
      vw[k] = b2 * vw[k] + (1 - b2) * gw[k] * gw[k];
      const double update = (mw[k] / c1) / (std::sqrt(vw[k] / c2) + eps);
      pw[k] -= lr * (update + (decay ? weight_decay_ * pw[k] : 0.0));
    }
  }
}

double learning_rate_at(const TrainerConfig& config, std::size_t step) {
  if (config.warmup_steps == 0 || step >= config.warmup_steps) return config.learning_rate;
  return config.learning_rate * static_cast<double>(step) /
         static_cast<double>(config.warmup_steps);
}

namespace {

/// Shuffled batches with no page repeated inside a batch. A global query
/// travels with one sample from its distractor page when the split has one,
/// so the layout twin is an in-batch negative. Samples that would repeat a
/// page wait for the next batch.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<TrainingSample>& samples,
                                                   std::size_t batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  std::map<std::uint32_t, std::vector<std::size_t>> by_page;
  for (auto i : order) by_page[samples[i].page_id].push_back(i);
  std::vector<bool> used(samples.size(), false);
  std::deque<std::vector<std::size_t>> units;
  for (auto i : order) {
    if (used[i]) continue;
    used[i] = true;
    std::vector<std::size_t> unit{i};
    for (auto pid : samples[i].distractors) {
      auto it = by_page.find(pid);
      if (it == by_page.end()) continue;
      auto partner = std::find_if(it->second.begin(), it->second.end(),
                                  [&](std::size_t j) { return !used[j]; });
      if (partner == it->second.end()) continue;
      used[*partner] = true;
      unit.push_back(*partner);
      break;
    }
    units.push_back(std::move(unit));
  }

  std::vector<std::vector<std::size_t>> batches;
  while (!units.empty()) {
    std::vector<std::size_t> batch;
    std::set<std::uint32_t> pages;
    std::deque<std::vector<std::size_t>> deferred;
    while (!units.empty() && batch.size() < batch_size) {
      auto unit = std::move(units.front());
      units.pop_front();
      const bool fits = batch.size() + unit.size() <= batch_size;
      const bool fresh = std::none_of(unit.begin(), unit.end(), [&](std::size_t i) {
        return pages.count(samples[i].page_id) > 0;
      });
      if (!fits || !fresh) {
        deferred.push_back(std::move(unit));
        if (!fits) break;
        continue;
      }
      for (auto i : unit) {
        pages.insert(samples[i].page_id);
        batch.push_back(i);
      }
    }
    units.insert(units.begin(), deferred.begin(), deferred.end());
    if (batch.size() < 2) break;  // nothing left that can form a batch
    batches.push_back(std::move(batch));
  }
  return batches;
}

double dev_ndcg(const EncoderParams& params, const Corpus& corpus, bool cross_context,
                std::span<const QuerySpec> extra) {
  auto docs = cross_context ? encode_split_pages_with_descriptors(params, corpus, SplitName::Dev,
                                                                  CrossContext::Finetuned)
                            : encode_split_pages(params, corpus, SplitName::Dev);
  std::vector<const QuerySpec*> specs = corpus.split_queries(SplitName::Dev);
  for (const auto& q : extra) specs.push_back(&q);
  std::vector<QueryResult> results;
  results.reserve(specs.size());
  for (const QuerySpec* q : specs) {
    Ranking r = rank(encode_query(q->tokens, params, q->query_id), docs, docs.size());
    results.push_back({q->query_id, std::move(r.doc_ids), q->relevant, q->qtype});
  }
  return summarize("dev", "synthetic/dev", results).mean_ndcg;
}

std::string diagnostic(const StepRecord& r, const EncoderParams& params) {
  std::ostringstream s;
  s << "non-finite loss at step " << r.step << " (epoch " << r.epoch << "): total=" << r.total
    << " global=" << r.global << " local=" << r.local << " retrieval=" << r.retrieval
    << " lr=" << r.lr << "; parameter norms:";
  params.for_each([&](std::string_view name, const Matrix& m) {
    double sq = 0;
    for (double x : m.values()) sq += x * x;
    s << ' ' << name << '=' << std::sqrt(sq);
  });
  return s.str();
}

}  // namespace

TrainResult train(const Corpus& corpus, const EncoderConfig& encoder, const TrainerConfig& config,
                  const EncoderParams* init, std::size_t start_step, const EpochHook& on_epoch) {
  config.validate();
  encoder.validate();
  if (corpus.split_queries(SplitName::Dev).empty())
    throw ConfigError("training needs a nonempty dev split for early stopping");
  if (corpus.split_queries(SplitName::Train).size() < 2)
    throw ConfigError("training needs at least two train queries");

  TrainResult result;
  EncoderParams params = init ? *init : init_params(encoder);
  if (params.config != encoder) throw ConfigError("initial parameters do not match encoder config");
  AdamW opt(params, config.weight_decay);
  EncoderParams grads = zeros_like(params);
  Scratch scratch;
  std::mt19937_64 rng(config.seed + start_step);
  std::size_t step = start_step;

  // Independent of start_step so a resumed run monitors the same queries.
  const std::vector<QuerySpec> dev_extra =
      config.dev_extra_per_page > 0
          ? sample_training_queries(corpus, SplitName::Dev, config.dev_extra_per_page,
                                    config.seed ^ 0x9e3779b97f4a7c15ULL)
          : std::vector<QuerySpec>{};

  double best = -1.0;
  EncoderParams best_params = params;
  std::size_t since_best = 0;
  TrainingLog& log = result.log;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<QuerySpec> extra;
    if (config.augment_per_page > 0) {
      extra = sample_training_queries(corpus, SplitName::Train, config.augment_per_page, rng(),
                                      config.augment_global_fraction);
    }
    const auto samples = training_samples(corpus, SplitName::Train, extra);
    const auto batches = make_batches(samples, config.batch_size, rng);
    double sum = 0;
    for (const auto& idx : batches) {
      std::vector<TrainingSample> batch;
      batch.reserve(idx.size());
      for (auto i : idx) batch.push_back(samples[i]);
      ++step;
      JointTerms t;
      try {
        t = batch_gradients_impl(params, batch, config, grads, scratch);
      } catch (const DegenerateInputError&) {
        if (all_finite(params)) throw;
        // NaN weights surface as degenerate rows before any loss is formed
        t.total = t.global = t.local = t.retrieval = std::numeric_limits<double>::quiet_NaN();
      }
      StepRecord rec{step, epoch, learning_rate_at(config, step), t.total, t.global, t.local,
                     t.retrieval};
      log.steps.push_back(rec);
      if (!std::isfinite(t.total)) throw NonFiniteLossError(diagnostic(rec, params), log);
      opt.step(params, grads, rec.lr);
      if (!all_finite(params)) {
        rec.total = std::numeric_limits<double>::quiet_NaN();
        throw NonFiniteLossError("parameters became non-finite; " + diagnostic(rec, params), log);
      }
      sum += t.total;
    }
    const double dev = dev_ndcg(params, corpus, config.cross_context, dev_extra);
    log.epochs.push_back({epoch, batches.empty() ? 0.0 : sum / static_cast<double>(batches.size()),
                          dev});
    if (on_epoch) on_epoch(log.epochs.back(), params);
    if (dev > best) {
      best = dev;
      best_params = params;
      log.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.early_stop_patience) {
      log.early_stop_epoch = epoch;
      break;
    }
  }
  result.params = std::move(best_params);
  result.final_step = step;
  return result;
}

GradCheckReport grad_check_encoder(EncoderParams params, std::span<const TrainingSample> sample,
                                   double epsilon, const TrainerConfig& config, std::size_t probes,
                                   double tolerance, std::uint64_t probe_seed) {
  if (!(epsilon >= 1e-6 && epsilon <= 1e-3))
    throw ArgumentError("grad_check_encoder: epsilon must lie in [1e-6, 1e-3]");
  TrainerConfig cfg = config;
  cfg.threads = 1;
  EncoderParams grads = zeros_like(params);
  batch_gradients(params, sample, cfg, grads);

  auto p = tensors(params);
  auto g = tensors(grads);
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t t = 0; t < p.size(); ++t)
    for (std::size_t k = 0; k < p[t]->size(); ++k) coords.emplace_back(t, k);
  std::mt19937_64 rng(probe_seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  coords.resize(std::min(probes, coords.size()));

  std::vector<GradProbe> list;
  for (auto [t, k] : coords) list.push_back({p[t]->data() + k, g[t]->data()[k]});

  EncoderParams scratch = zeros_like(params);
  auto evaluate = [&]() {
    const JointTerms t = batch_gradients(params, sample, cfg, scratch);
    return LossValue{t.total, {}, t.argmax};
  };
  return check_probes(list, evaluate, epsilon, tolerance);
}

}  // namespace glt
