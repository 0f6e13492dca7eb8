#include "glt/config.hpp"

#include <fstream>
#include <sstream>

#include "glt/errors.hpp"
#include "glt/store.hpp"
#include "json.hpp"

namespace glt {

using json = nlohmann::ordered_json;

EncoderConfig RunConfig::encoder_config(const Corpus& corpus) const {
  EncoderConfig c;
  c.model_dim = encoder.model_dim;
  c.retrieval_dim = encoder.retrieval_dim;
  c.layers = encoder.layers;
  c.heads = encoder.heads;
  c.ffn_dim = encoder.ffn_dim;
  c.vocab_size = corpus.vocab.size();
  c.patch_feature_dim = static_cast<std::uint32_t>(corpus.patch_feature_dim());
  c.max_seq = encoder.max_seq;
  c.shared_global = encoder.shared_global;
  c.seed = seed;
  if (encoder.tie_features) c.feature_tokens = patch_feature_tokens(corpus.vocab, corpus.params.sketch_dim);
  return c;
}

TrainerConfig RunConfig::trainer_config() const {
  TrainerConfig t = trainer;
  t.seed = seed;
  t.threads = threads;
  t.cross_context = cross_context == CrossContext::Finetuned;
  return t;
}

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (eval.k < 1) throw ConfigError("eval.k must be >= 1");
  if (eval.entropy_grid < 1) throw ConfigError("eval.entropy_grid must be >= 1");
  EncoderConfig shape;
  shape.model_dim = encoder.model_dim;
  shape.retrieval_dim = encoder.retrieval_dim;
  shape.layers = encoder.layers;
  shape.heads = encoder.heads;
  shape.ffn_dim = encoder.ffn_dim;
  shape.max_seq = encoder.max_seq;
  shape.vocab_size = 1;  // corpus-dependent sizes are checked once a corpus exists
  shape.patch_feature_dim = 1;
  shape.validate();
  trainer_config().validate();
}

namespace {

json flags_json(const ScoringFlags& f) {
  return {{"use_query_global", f.use_query_global},
          {"use_doc_global", f.use_doc_global},
          {"use_patches", f.use_patches}};
}

/// Reads keys of one JSON object into fields, rejecting anything unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
    for (auto it = j_.begin(); it != j_.end(); ++it) pending_.push_back(it.key());
  }
  template <class T>
  void get(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    std::erase(pending_, std::string(key));
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: '" + name(key) + "' has the wrong type");
    }
  }
  const json* child(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    std::erase(pending_, std::string(key));
    return &*it;
  }
  std::string name(const char* key) const { return path_.empty() ? key : path_ + "." + key; }
  void finish() const {
    if (!pending_.empty()) throw ConfigError("config: unknown key '" + name(pending_.front().c_str()) + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string> pending_;
};

void read_flags(const json& j, const std::string& path, ScoringFlags& f) {
  Section s(j, path);
  s.get("use_query_global", f.use_query_global);
  s.get("use_doc_global", f.use_doc_global);
  s.get("use_patches", f.use_patches);
  s.finish();
}

}  // namespace

std::string to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["seeds"] = c.seeds;
  j["threads"] = c.threads;
  const auto& p = c.corpus;
  j["corpus"] = {{"seed", p.seed},
                 {"n_pages", p.n_pages},
                 {"n_queries", p.n_queries},
                 {"grid_rows", p.grid_rows},
                 {"grid_cols", p.grid_cols},
                 {"content_vocab", p.content_vocab},
                 {"sketch_dim", p.sketch_dim},
                 {"global_fraction", p.global_fraction},
                 {"train_fraction", p.train_fraction},
                 {"dev_fraction", p.dev_fraction}};
  const auto& e = c.encoder;
  j["encoder"] = {{"model_dim", e.model_dim}, {"retrieval_dim", e.retrieval_dim},
                  {"layers", e.layers},       {"heads", e.heads},
                  {"ffn_dim", e.ffn_dim},     {"max_seq", e.max_seq},
                  {"shared_global", e.shared_global}, {"tie_features", e.tie_features}};
  const auto& t = c.trainer;
  j["trainer"] = {{"batch_size", t.batch_size},
                  {"learning_rate", t.learning_rate},
                  {"weight_decay", t.weight_decay},
                  {"warmup_steps", t.warmup_steps},
                  {"epochs", t.epochs},
                  {"tau", t.tau},
                  {"tau_retrieval", t.tau_retrieval},
                  {"loss", {{"global", t.switches.global},
                            {"local", t.switches.local},
                            {"retrieval", t.switches.retrieval}}},
                  {"loss_weights", {{"global", t.weights.global},
                                    {"local", t.weights.local},
                                    {"retrieval", t.weights.retrieval}}},
                  {"early_stop_patience", t.early_stop_patience},
                  {"augment_per_page", t.augment_per_page},
                  {"augment_global_fraction", t.augment_global_fraction},
                  {"dev_extra_per_page", t.dev_extra_per_page}};
  j["eval"] = {{"split", split_name(c.eval.split)},
               {"k", c.eval.k},
               {"entropy_grid", c.eval.entropy_grid},
               {"flags", flags_json(c.eval.flags)},
               {"pooling", c.eval.pooling ? json(pooling_name(*c.eval.pooling)) : json(nullptr)}};
  j["ablation"] = {{"rows", c.ablation_rows}};
  j["cross_context"] = cross_context_name(c.cross_context);
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON (") + e.what() + ")");
  }
  RunConfig c;
  Section top(j, "");
  top.get("seed", c.seed);
  top.get("seeds", c.seeds);
  top.get("threads", c.threads);
  if (const json* s = top.child("corpus")) {
    Section sec(*s, "corpus");
    auto& p = c.corpus;
    sec.get("seed", p.seed);
    sec.get("n_pages", p.n_pages);
    sec.get("n_queries", p.n_queries);
    sec.get("grid_rows", p.grid_rows);
    sec.get("grid_cols", p.grid_cols);
    sec.get("content_vocab", p.content_vocab);
    sec.get("sketch_dim", p.sketch_dim);
    sec.get("global_fraction", p.global_fraction);
    sec.get("train_fraction", p.train_fraction);
    sec.get("dev_fraction", p.dev_fraction);
    sec.finish();
  }
  if (const json* s = top.child("encoder")) {
    Section sec(*s, "encoder");
    auto& e = c.encoder;
    sec.get("model_dim", e.model_dim);
    sec.get("retrieval_dim", e.retrieval_dim);
    sec.get("layers", e.layers);
    sec.get("heads", e.heads);
    sec.get("ffn_dim", e.ffn_dim);
    sec.get("max_seq", e.max_seq);
    sec.get("shared_global", e.shared_global);
    sec.get("tie_features", e.tie_features);
    sec.finish();
  }
  if (const json* s = top.child("trainer")) {
    Section sec(*s, "trainer");
    auto& t = c.trainer;
    sec.get("batch_size", t.batch_size);
    sec.get("learning_rate", t.learning_rate);
    sec.get("weight_decay", t.weight_decay);
    sec.get("warmup_steps", t.warmup_steps);
    sec.get("epochs", t.epochs);
    sec.get("tau", t.tau);
    sec.get("tau_retrieval", t.tau_retrieval);
    if (const json* l = sec.child("loss")) {
      Section ls(*l, "trainer.loss");
      ls.get("global", t.switches.global);
      ls.get("local", t.switches.local);
      ls.get("retrieval", t.switches.retrieval);
      ls.finish();
    }
    if (const json* w = sec.child("loss_weights")) {
      Section ws(*w, "trainer.loss_weights");
      ws.get("global", t.weights.global);
      ws.get("local", t.weights.local);
      ws.get("retrieval", t.weights.retrieval);
      ws.finish();
    }
    sec.get("early_stop_patience", t.early_stop_patience);
    sec.get("augment_per_page", t.augment_per_page);
    sec.get("augment_global_fraction", t.augment_global_fraction);
    sec.get("dev_extra_per_page", t.dev_extra_per_page);
    sec.finish();
  }
  if (const json* s = top.child("eval")) {
    Section sec(*s, "eval");
    std::string split = std::string(split_name(c.eval.split));
    sec.get("split", split);
    try {
      c.eval.split = parse_split(split);
    } catch (const ArgumentError& e) {
      throw ConfigError(std::string("config: eval.split: ") + e.what());
    }
    sec.get("k", c.eval.k);
    sec.get("entropy_grid", c.eval.entropy_grid);
    if (const json* f = sec.child("flags")) read_flags(*f, "eval.flags", c.eval.flags);
    if (const json* pl = sec.child("pooling")) {
      if (pl->is_null()) {
        c.eval.pooling.reset();
      } else if (pl->is_string()) {
        try {
          c.eval.pooling = parse_pooling(pl->get<std::string>());
        } catch (const ArgumentError& e) {
          throw ConfigError(std::string("config: eval.pooling: ") + e.what());
        }
      } else {
        throw ConfigError("config: 'eval.pooling' has the wrong type");
      }
    }
    sec.finish();
  }
  if (const json* s = top.child("ablation")) {
    Section sec(*s, "ablation");
    sec.get("rows", c.ablation_rows);
    sec.finish();
  }
  std::string cc = std::string(cross_context_name(c.cross_context));
  top.get("cross_context", cc);
  c.cross_context = parse_cross_context(cc);
  top.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(ss.str());
}

void save_run_config(const std::filesystem::path& path, const RunConfig& config) {
  const std::string text = to_json(config);
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

LossSwitches role_switches(const std::string& role) {
  if (role == kRoleFull) return {true, true, true};
  if (role == kRoleRetrievalOnly) return {false, false, true};
  if (role == kRoleNoLossGlobal) return {false, true, true};
  if (role == kRoleNoLossLocal) return {true, false, true};
  throw ConfigError("unknown training role '" + role +
                    "' (expected full, retrieval_only, no_loss_global or no_loss_local)");
}

}  // namespace glt
