#include "dualslu/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace dualslu {

namespace {

using nlohmann::json;

bool g_verbose = false;

json jnum(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double num_or_nan(const json& j) {
  return j.is_null() ? kAbsent : j.get<double>();
}

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& item : j.items())
    if (!allowed.count(item.key()))
      throw ConfigError("unknown key '" + item.key() + "' in " + where);
}

std::string fmt2(double v) {
  if (!std::isfinite(v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

// --- config <-> json ---------------------------------------------------------

json data_to_json(const DataSpec& d) {
  json j;
  j["ontology"] = d.ontology_path;
  j["mode"] = d.mode;
  j["root"] = d.root;
  j["train"] = d.train;
  j["dev"] = d.dev;
  j["test"] = d.test;
  j["overlap"] = json::object();
  for (const auto& [lang, ov] : d.overlap) j["overlap"][lang] = ov;
  j["corpus_seed"] = d.corpus_seed;
  return j;
}

DataSpec data_from_json(const json& j) {
  check_keys(j,
             {"ontology", "mode", "root", "train", "dev", "test", "overlap",
              "corpus_seed"},
             "data");
  DataSpec d;
  if (j.contains("ontology")) d.ontology_path = j["ontology"].get<std::string>();
  if (j.contains("mode")) d.mode = j["mode"].get<std::string>();
  if (j.contains("root")) d.root = j["root"].get<std::string>();
  if (j.contains("train")) d.train = j["train"].get<std::size_t>();
  if (j.contains("dev")) d.dev = j["dev"].get<std::size_t>();
  if (j.contains("test")) d.test = j["test"].get<std::size_t>();
  if (j.contains("overlap"))
    for (const auto& item : j["overlap"].items())
      d.overlap[item.key()] = item.value().get<double>();
  if (j.contains("corpus_seed"))
    d.corpus_seed = j["corpus_seed"].get<std::uint64_t>();
  return d;
}

json model_to_json(const ModelConfig& m) {
  json j;
  j["feat_dim"] = m.feat_dim;
  j["model_dim"] = m.model_dim;
  j["enc_layers"] = m.enc_layers;
  j["enc_hidden"] = m.enc_hidden;
  j["slu_layers"] = m.slu_layers;
  j["slu_hidden"] = m.slu_hidden;
  j["embedding_dim"] = m.embedding_dim;
  j["leaky_slope"] = m.leaky_slope;
  j["frame_ms"] = m.frame_ms;
  return j;  // vocab_size is derived from the data, never configured
}

ModelConfig model_from_json(const json& j) {
  check_keys(j,
             {"feat_dim", "model_dim", "enc_layers", "enc_hidden",
              "slu_layers", "slu_hidden", "embedding_dim", "leaky_slope",
              "frame_ms"},
             "model");
  ModelConfig m;
  if (j.contains("feat_dim")) m.feat_dim = j["feat_dim"].get<std::size_t>();
  if (j.contains("model_dim")) m.model_dim = j["model_dim"].get<std::size_t>();
  if (j.contains("enc_layers"))
    m.enc_layers = j["enc_layers"].get<std::size_t>();
  if (j.contains("enc_hidden"))
    m.enc_hidden = j["enc_hidden"].get<std::size_t>();
  if (j.contains("slu_layers"))
    m.slu_layers = j["slu_layers"].get<std::size_t>();
  if (j.contains("slu_hidden"))
    m.slu_hidden = j["slu_hidden"].get<std::size_t>();
  if (j.contains("embedding_dim"))
    m.embedding_dim = j["embedding_dim"].get<std::size_t>();
  if (j.contains("leaky_slope")) m.leaky_slope = j["leaky_slope"].get<double>();
  if (j.contains("frame_ms")) m.frame_ms = j["frame_ms"].get<double>();
  return m;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["pipeline"] = pipeline_to_string(c.pipeline);
  j["train_languages"] = c.train_languages;
  j["slu_languages"] = c.slu_languages;
  j["target_language"] = c.target_language;
  j["lambda"] = c.lambda;
  j["lambda_grid"] = c.lambda_grid;
  j["epochs"] = c.epochs;
  j["slu_epochs"] = c.slu_epochs;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["adam_lr"] = c.adam_lr;
  j["adadelta_lr"] = c.adadelta_lr;
  j["adadelta_rho"] = c.adadelta_rho;
  j["clip_norm"] = c.clip_norm;
  j["shuffle"] = c.shuffle;
  j["init_from"] = c.init_from;
  j["model"] = model_to_json(c.model);
  j["data"] = data_to_json(c.data);
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  check_keys(j,
             {"pipeline", "train_languages", "slu_languages",
              "target_language", "lambda", "lambda_grid", "epochs",
              "slu_epochs", "batch_size", "seed", "adam_lr", "adadelta_lr",
              "adadelta_rho", "clip_norm", "shuffle", "init_from", "model",
              "data"},
             "config");
  ExperimentConfig c;
  if (j.contains("pipeline"))
    c.pipeline = pipeline_from_string(j["pipeline"].get<std::string>());
  if (j.contains("train_languages"))
    c.train_languages = j["train_languages"].get<std::vector<std::string>>();
  if (j.contains("slu_languages"))
    c.slu_languages = j["slu_languages"].get<std::vector<std::string>>();
  if (j.contains("target_language"))
    c.target_language = j["target_language"].get<std::string>();
  if (j.contains("lambda")) c.lambda = j["lambda"].get<double>();
  if (j.contains("lambda_grid"))
    c.lambda_grid = j["lambda_grid"].get<std::vector<double>>();
  if (j.contains("epochs")) c.epochs = j["epochs"].get<std::size_t>();
  if (j.contains("slu_epochs"))
    c.slu_epochs = j["slu_epochs"].get<std::size_t>();
  if (j.contains("batch_size"))
    c.batch_size = j["batch_size"].get<std::size_t>();
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("adam_lr")) c.adam_lr = j["adam_lr"].get<double>();
  if (j.contains("adadelta_lr"))
    c.adadelta_lr = j["adadelta_lr"].get<double>();
  if (j.contains("adadelta_rho"))
    c.adadelta_rho = j["adadelta_rho"].get<double>();
  if (j.contains("clip_norm")) c.clip_norm = j["clip_norm"].get<double>();
  if (j.contains("shuffle")) c.shuffle = j["shuffle"].get<bool>();
  if (j.contains("init_from")) c.init_from = j["init_from"].get<std::string>();
  if (j.contains("model")) c.model = model_from_json(j["model"]);
  if (j.contains("data")) c.data = data_from_json(j["data"]);
  return c;
}

// --- records <-> json --------------------------------------------------------

json epoch_to_json(const EpochRecord& e) {
  json j;
  j["epoch"] = e.epoch;
  j["train_semantic"] = jnum(e.train_semantic);
  j["train_slu"] = jnum(e.train_slu);
  j["train_total"] = jnum(e.train_total);
  j["dev_semantic"] = jnum(e.dev_semantic);
  j["dev_cer"] = jnum(e.dev_cer);
  j["dev_cver"] = jnum(e.dev_cver);
  j["dev_wer"] = jnum(e.dev_wer);
  j["dev_repairs"] = e.dev_repairs;
  return j;
}

EpochRecord epoch_from_json(const json& j) {
  EpochRecord e;
  e.epoch = j.at("epoch").get<std::size_t>();
  e.train_semantic = num_or_nan(j.at("train_semantic"));
  e.train_slu = num_or_nan(j.at("train_slu"));
  e.train_total = num_or_nan(j.at("train_total"));
  e.dev_semantic = num_or_nan(j.at("dev_semantic"));
  e.dev_cer = num_or_nan(j.at("dev_cer"));
  e.dev_cver = num_or_nan(j.at("dev_cver"));
  e.dev_wer = num_or_nan(j.at("dev_wer"));
  e.dev_repairs = j.at("dev_repairs").get<std::size_t>();
  return e;
}

json stage_to_json(const StageRecord& s) {
  json j;
  j["pipeline"] = pipeline_to_string(s.pipeline);
  j["selection"] = s.selection;
  j["epoch0_dev_cer"] = jnum(s.epoch0_dev_cer);
  j["epoch0_dev_semantic"] = jnum(s.epoch0_dev_semantic);
  j["epochs"] = json::array();
  for (const auto& e : s.epochs) j["epochs"].push_back(epoch_to_json(e));
  j["best_epoch"] = s.best_epoch;
  j["best_metric"] = jnum(s.best_metric);
  j["trainable_params"] = s.trainable_params;
  return j;
}

StageRecord stage_from_json(const json& j) {
  StageRecord s;
  s.pipeline = pipeline_from_string(j.at("pipeline").get<std::string>());
  s.selection = j.at("selection").get<std::string>();
  s.epoch0_dev_cer = num_or_nan(j.at("epoch0_dev_cer"));
  s.epoch0_dev_semantic = num_or_nan(j.at("epoch0_dev_semantic"));
  for (const auto& e : j.at("epochs")) s.epochs.push_back(epoch_from_json(e));
  s.best_epoch = j.at("best_epoch").get<std::size_t>();
  s.best_metric = num_or_nan(j.at("best_metric"));
  s.trainable_params = j.at("trainable_params").get<std::size_t>();
  return s;
}

std::string stages_to_json(const std::vector<StageRecord>& stages) {
  json arr = json::array();
  for (const auto& s : stages) arr.push_back(stage_to_json(s));
  return arr.dump();
}

std::vector<StageRecord> stages_from_json(const std::string& text) {
  json arr;
  try {
    arr = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::Format,
                          std::string("bad history payload: ") + e.what());
  }
  if (!arr.is_array())
    throw CheckpointError(CheckpointError::Kind::Format,
                          "history payload is not an array");
  std::vector<StageRecord> out;
  try {
    for (const auto& s : arr) out.push_back(stage_from_json(s));
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::Format,
                          std::string("bad history payload: ") + e.what());
  }
  return out;
}

// --- checkpoint bytes --------------------------------------------------------

void put_raw(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_raw(os, b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_raw(os, b, 8);
}

void put_f64(std::ostream& os, double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, 8);
  put_u64(os, u);
}

void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  put_raw(os, s.data(), s.size());
}

void put_f64s(std::ostream& os, const std::vector<double>& v) {
  put_u64(os, v.size());
  for (double d : v) put_f64(os, d);
}

struct ByteReader {
  std::ifstream in;

  explicit ByteReader(const std::filesystem::path& p)
      : in(p, std::ios::binary) {
    if (!in)
      throw CheckpointError(CheckpointError::Kind::Io,
                            "cannot open checkpoint " + p.string());
  }

  void raw(void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
      throw CheckpointError(CheckpointError::Kind::Truncated,
                            "checkpoint file is truncated");
  }

  std::uint32_t u32() {
    unsigned char b[4];
    raw(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    unsigned char b[8];
    raw(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
  }

  double f64() {
    const std::uint64_t u = u64();
    double d;
    std::memcpy(&d, &u, 8);
    return d;
  }

  std::string str() {
    const std::uint32_t n = u32();
    if (n > (1u << 24))
      throw CheckpointError(CheckpointError::Kind::Format,
                            "implausible string length in checkpoint");
    std::string s(n, '\0');
    if (n) raw(s.data(), n);
    return s;
  }

  std::vector<double> f64s() {
    const std::uint64_t n = u64();
    if (n > (1ull << 27))
      throw CheckpointError(CheckpointError::Kind::Format,
                            "implausible array length in checkpoint");
    std::vector<double> v(n);
    for (auto& d : v) d = f64();
    return v;
  }
};

constexpr char kCkptMagic[4] = {'D', 'S', 'C', 'P'};

// --- model/optimizer plumbing ------------------------------------------------

void assign_values(DualModel& model,
                   const std::vector<std::pair<std::string, Tensor>>& src) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : src)
    if (!by_name.emplace(name, &t).second)
      throw CheckpointError(CheckpointError::Kind::Format,
                            "duplicate parameter '" + name + "'");
  auto named = model.named_params();
  if (named.size() != by_name.size())
    throw CheckpointError(CheckpointError::Kind::Format,
                          "checkpoint parameter table does not match the "
                          "model");
  for (auto& [name, dst] : named) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw CheckpointError(CheckpointError::Kind::Format,
                            "checkpoint is missing parameter '" + name + "'");
    const Tensor& t = *it->second;
    if (t->shape != dst->shape)
      throw CheckpointError(CheckpointError::Kind::Format,
                            "shape mismatch for parameter '" + name + "'");
    dst->values = t->values;
  }
}

DualModel model_from_checkpoint(const Checkpoint& ck) {
  Rng scratch(0);
  DualModel model(ck.model_cfg, scratch);
  assign_values(model, ck.params);
  return model;
}

std::vector<std::pair<std::string, std::vector<double>>> snapshot_values(
    const DualModel& model) {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  for (const auto& [name, t] : model.named_params())
    out.emplace_back(name, t->values);
  return out;
}

void restore_values(
    DualModel& model,
    const std::vector<std::pair<std::string, std::vector<double>>>& vals) {
  std::map<std::string, const std::vector<double>*> by_name;
  for (const auto& [name, v] : vals) by_name[name] = &v;
  for (auto& [name, t] : model.named_params()) {
    auto it = by_name.find(name);
    if (it == by_name.end() || it->second->size() != t->values.size())
      throw CheckpointError(CheckpointError::Kind::Format,
                            "best-parameter snapshot does not match the "
                            "model");
    t->values = *it->second;
  }
}

AdamState adam_template(const ExperimentConfig& cfg) {
  AdamState s;
  s.lr = cfg.adam_lr;
  return s;
}

AdadeltaState adadelta_template(const ExperimentConfig& cfg) {
  AdadeltaState s;
  s.lr = cfg.adadelta_lr;
  s.rho = cfg.adadelta_rho;
  return s;
}

template <class StateMap>
void restore_states(StateMap& dst, const StateMap& src, const char* which) {
  if (dst.size() != src.size())
    throw CheckpointError(CheckpointError::Kind::Format,
                          std::string(which) +
                              " state does not match the parameter groups");
  for (const auto& [name, state] : src) {
    auto it = dst.find(name);
    if (it == dst.end())
      throw CheckpointError(CheckpointError::Kind::Format,
                            std::string(which) + " state for unknown "
                                                 "parameter '" +
                                name + "'");
    it->second = state;
  }
}

// --- training core -----------------------------------------------------------

struct StagePlanEntry {
  Pipeline pipeline;
  std::size_t epochs;
};

std::vector<StagePlanEntry> stage_plan(const ExperimentConfig& cfg) {
  if (cfg.pipeline == Pipeline::dual_then_slu) {
    const std::size_t second = cfg.slu_epochs ? cfg.slu_epochs : cfg.epochs;
    return {{Pipeline::dual, cfg.epochs}, {Pipeline::slu_finetune, second}};
  }
  return {{cfg.pipeline, cfg.epochs}};
}

bool wants_semantic(Pipeline stage, const ExperimentConfig& cfg,
                    const std::string& lang) {
  if (stage != Pipeline::specialize && stage != Pipeline::dual) return false;
  return contains(cfg.train_languages, lang);
}

// At lambda 0 the dual objective reduces to pure specialization, so the
// SLU branch is not even built; this keeps the reduction bit-exact.
bool wants_slu(Pipeline stage, const ExperimentConfig& cfg,
               const std::string& lang) {
  if (stage == Pipeline::slu_finetune)
    return contains(cfg.effective_slu_languages(), lang);
  if (stage == Pipeline::dual)
    return cfg.lambda > 0.0 && contains(cfg.effective_slu_languages(), lang);
  return false;
}

std::vector<std::string> active_languages(Pipeline stage,
                                          const ExperimentConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& lang : cfg.languages())
    if (wants_semantic(stage, cfg, lang) || wants_slu(stage, cfg, lang))
      out.push_back(lang);
  return out;
}

void fisher_yates(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.next_below(i)]);
}

using TargetMap = std::map<std::string, std::vector<std::vector<std::size_t>>>;

struct EpochStats {
  double train_semantic = kAbsent;
  double train_slu = kAbsent;
  double train_total = kAbsent;
};

// One pass over all active languages' training splits, batches interleaved
// round-robin across languages in config order.
EpochStats train_one_epoch(Pipeline stage, const ExperimentConfig& cfg,
                           const DataSet& data, DualModel& model,
                           DualOptimizer& opt,
                           const std::vector<NamedParam>& trainables,
                           const std::vector<std::string>& active,
                           const TargetMap& targets, Rng& rng) {
  struct LangView {
    const LanguageData* ld;
    const std::vector<std::vector<std::size_t>>* targets = nullptr;
    std::vector<std::size_t> order;
    bool sem = false;
    bool slu = false;
  };
  std::vector<LangView> views;
  for (const auto& lang : active) {
    LangView v;
    v.ld = &data.language(lang);
    v.sem = wants_semantic(stage, cfg, lang);
    v.slu = wants_slu(stage, cfg, lang);
    if (v.slu) v.targets = &targets.at(lang);
    v.order.resize(v.ld->train.size());
    for (std::size_t i = 0; i < v.order.size(); ++i) v.order[i] = i;
    if (cfg.shuffle) fisher_yates(v.order, rng);
    views.push_back(std::move(v));
  }
  std::size_t max_batches = 0;
  for (const auto& v : views)
    max_batches = std::max(
        max_batches, (v.order.size() + cfg.batch_size - 1) / cfg.batch_size);

  double sum_sem = 0.0, sum_slu = 0.0, sum_tot = 0.0;
  std::size_t n_sem = 0, n_slu = 0, n_tot = 0;
  for (std::size_t b = 0; b < max_batches; ++b) {
    for (const auto& v : views) {
      const std::size_t lo = b * cfg.batch_size;
      if (lo >= v.order.size()) continue;
      const std::size_t hi = std::min(v.order.size(), lo + cfg.batch_size);
      Tape tape;
      std::vector<Tensor> sems, slus;
      for (std::size_t k = lo; k < hi; ++k) {
        const Utterance& u = v.ld->train[v.order[k]];
        const Tensor enc = encoder_forward(model.encoder, tape, u.features);
        if (v.sem) {
          const Tensor student =
              semantic_head_forward(model.semantic_head, tape, enc);
          sems.push_back(
              cosine_alignment_loss(tape, student, u.teacher_embedding));
        }
        if (v.slu) {
          const Tensor lp = slu_head_forward(model.slu_head, tape, enc);
          slus.push_back(ctc_loss(tape, lp, (*v.targets)[v.order[k]],
                                  data.vocab.blank_id));
        }
      }
      if (sems.empty() && slus.empty()) continue;
      const Tensor bsem = sems.empty() ? nullptr : mean_of(tape, sems);
      const Tensor bslu = slus.empty() ? nullptr : mean_of(tape, slus);
      Tensor total;
      if (bsem && bslu) {
        const LossBreakdown lb = dual_loss(
            tape, DualLossConfig{cfg.lambda, data.vocab.blank_id}, bsem, bslu);
        total = lb.total;
      } else if (bsem) {
        total = bsem;
      } else {
        total = stage == Pipeline::dual ? scalar_mul(tape, bslu, cfg.lambda)
                                        : bslu;
      }
      tape.backward(total);
      if (cfg.clip_norm > 0.0) clip_gradients(trainables, cfg.clip_norm);
      opt.step();
      opt.zero_grad();
      if (bsem) {
        sum_sem += bsem->scalar() * double(sems.size());
        n_sem += sems.size();
      }
      if (bslu) {
        sum_slu += bslu->scalar() * double(slus.size());
        n_slu += slus.size();
      }
      sum_tot += total->scalar() * double(hi - lo);
      n_tot += hi - lo;
    }
  }
  EpochStats out;
  if (n_sem) out.train_semantic = sum_sem / double(n_sem);
  if (n_slu) out.train_slu = sum_slu / double(n_slu);
  if (n_tot) out.train_total = sum_tot / double(n_tot);
  return out;
}

double eval_dev_semantic(const DualModel& model, const DataSet& data,
                         const std::vector<std::string>& langs) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& lang : langs)
    for (const Utterance& u : data.language(lang).dev) {
      Tape tape;
      const Tensor enc = encoder_forward(model.encoder, tape, u.features);
      const Tensor student =
          semantic_head_forward(model.semantic_head, tape, enc);
      sum += cosine_alignment_loss(tape, student, u.teacher_embedding)
                 ->scalar();
      ++n;
    }
  return n ? sum / double(n) : kAbsent;
}

EvalReport decode_split(const DualModel& model, const Vocabulary& vocab,
                        const Ontology& ont,
                        const std::vector<Utterance>& split) {
  std::vector<AnnotatedTranscript> refs, hyps;
  std::size_t repairs = 0;
  for (const Utterance& u : split) {
    Tape tape;
    const Tensor enc = encoder_forward(model.encoder, tape, u.features);
    const Tensor lp = slu_head_forward(model.slu_head, tape, enc);
    TolerantParse tp = parse_annotation_tolerant(
        vocab.decode(greedy_ctc_decode(lp, vocab.blank_id)), ont);
    refs.push_back(u.transcript);
    hyps.push_back(std::move(tp.transcript));
    repairs += tp.repairs;
  }
  return evaluate_transcripts(refs, hyps, repairs);
}

Checkpoint make_checkpoint(
    std::uint64_t fp, std::size_t stage, std::size_t epochs_done,
    const ModelConfig& mc, const Vocabulary& vocab, const DualModel& model,
    DualOptimizer& opt, const Rng& rng, bool has_best, std::size_t best_epoch,
    double best_metric,
    const std::vector<std::pair<std::string, std::vector<double>>>&
        best_values,
    std::string history) {
  Checkpoint c;
  c.config_fingerprint = fp;
  c.stage = static_cast<std::uint32_t>(stage);
  c.epochs_done = static_cast<std::uint32_t>(epochs_done);
  c.model_cfg = mc;
  c.vocab = vocab;
  c.params = model.named_params();
  c.adam_states = opt.adam_states();
  c.adadelta_states = opt.adadelta_states();
  c.train_rng = rng.serialize();
  c.has_best = has_best;
  c.best_epoch = best_epoch;
  c.best_metric = best_metric;
  c.best_values = best_values;
  c.history_json = std::move(history);
  return c;
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
}

}  // namespace

void set_harness_verbose(bool enabled) { g_verbose = enabled; }
bool harness_verbose() { return g_verbose; }

// --- ExperimentConfig --------------------------------------------------------

void ExperimentConfig::validate() const {
  if (target_language.empty())
    throw ConfigError("target_language is required");
  const bool semantic = pipeline != Pipeline::slu_finetune;
  if (semantic && train_languages.empty())
    throw ConfigError("pipeline " + pipeline_to_string(pipeline) +
                      " needs train_languages");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!std::isfinite(lambda) || lambda < 0.0)
    throw ConfigError("lambda must be finite and non-negative");
  for (double l : lambda_grid)
    if (!std::isfinite(l) || l < 0.0)
      throw ConfigError("lambda_grid values must be finite and "
                        "non-negative");
  if (!(adam_lr > 0.0)) throw ConfigError("adam_lr must be positive");
  if (!(adadelta_lr > 0.0)) throw ConfigError("adadelta_lr must be positive");
  if (!(adadelta_rho > 0.0 && adadelta_rho < 1.0))
    throw ConfigError("adadelta_rho must lie in (0,1)");
  if (!std::isfinite(clip_norm) || clip_norm < 0.0)
    throw ConfigError("clip_norm must be finite and non-negative");
  ModelConfig probe = model;
  probe.vocab_size = std::max<std::size_t>(model.vocab_size, 2);
  probe.validate();
  if (data.mode != "generate" && data.mode != "files")
    throw ConfigError("data.mode must be 'generate' or 'files'");
  if (data.mode == "files" && data.root.empty())
    throw ConfigError("data.mode 'files' needs data.root");
  if (data.mode == "generate" &&
      (data.train == 0 || data.dev == 0 || data.test == 0))
    throw ConfigError("generated splits must all be non-empty");
  for (const auto& [lang, ov] : data.overlap)
    if (!std::isfinite(ov) || ov < 0.0 || ov > 1.0)
      throw ConfigError("overlap for '" + lang + "' must lie in [0,1]");
}

std::vector<std::string> ExperimentConfig::effective_slu_languages() const {
  if (!slu_languages.empty()) return slu_languages;
  return {target_language};
}

std::vector<std::string> ExperimentConfig::languages() const {
  std::vector<std::string> out;
  auto push = [&out](const std::string& s) {
    if (!contains(out, s)) out.push_back(s);
  };
  if (pipeline != Pipeline::slu_finetune)
    for (const auto& l : train_languages) push(l);
  if (pipeline != Pipeline::specialize)
    for (const auto& l : effective_slu_languages()) push(l);
  push(target_language);
  return out;
}

std::string ExperimentConfig::to_json_string() const {
  return config_to_json(*this).dump(2);
}

ExperimentConfig ExperimentConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config JSON: ") + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config JSON: ") + e.what());
  }
}

ExperimentConfig ExperimentConfig::from_json_file(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json_string(buf.str());
}

std::uint64_t ExperimentConfig::fingerprint(const Vocabulary& vocab) const {
  json j = config_to_json(*this);
  // Paths do not shape the computation; the data content is pinned through
  // the vocabulary fingerprint instead. Epoch budgets are stopping
  // criteria, not experiment identity: resuming under a larger budget is
  // the whole point of checkpoints.
  j.erase("init_from");
  j.erase("epochs");
  j.erase("slu_epochs");
  j["data"].erase("root");
  j["data"].erase("ontology");
  return hash_combine(fnv1a(j.dump()), vocab.fingerprint());
}

// --- data --------------------------------------------------------------------

const LanguageData& DataSet::language(const std::string& tag) const {
  for (const auto& ld : languages)
    if (ld.lang == tag) return ld;
  throw ConfigError("no data prepared for language '" + tag + "'");
}

DataSet prepare_data(const ExperimentConfig& cfg) {
  cfg.validate();
  DataSet out;
  out.ontology = cfg.data.ontology_path.empty()
                     ? Ontology::desk_default()
                     : Ontology::from_json_file(cfg.data.ontology_path);
  out.ontology.validate();
  if (out.ontology.feat_dim != cfg.model.feat_dim)
    throw ConfigError("model feat_dim " + std::to_string(cfg.model.feat_dim) +
                      " does not match the ontology's " +
                      std::to_string(out.ontology.feat_dim));
  if (out.ontology.embedding_dim != cfg.model.embedding_dim)
    throw ConfigError(
        "model embedding_dim " + std::to_string(cfg.model.embedding_dim) +
        " does not match the ontology's " +
        std::to_string(out.ontology.embedding_dim));
  for (const auto& [lang, ov] : cfg.data.overlap)
    if (!out.ontology.find_language(lang))
      throw ConfigError("overlap given for unknown language '" + lang + "'");
  for (const auto& lang : cfg.languages()) {
    if (!out.ontology.find_language(lang))
      throw ConfigError("language '" + lang + "' is not in the ontology");
    LanguageData ld;
    ld.lang = lang;
    if (cfg.data.mode == "generate") {
      const auto it = cfg.data.overlap.find(lang);
      const double ov = it == cfg.data.overlap.end() ? 0.0 : it->second;
      const std::uint64_t s = cfg.data.corpus_seed;
      ld.train = generate_corpus(out.ontology, lang, cfg.data.train,
                                 hash_combine(s, fnv1a("train")), ov);
      ld.dev = generate_corpus(out.ontology, lang, cfg.data.dev,
                               hash_combine(s, fnv1a("dev")), ov);
      ld.test = generate_corpus(out.ontology, lang, cfg.data.test,
                                hash_combine(s, fnv1a("test")), ov);
    } else {
      const std::filesystem::path root(cfg.data.root);
      ld.train = load_corpus(root / (lang + "_train.jsonl"), out.ontology);
      ld.dev = load_corpus(root / (lang + "_dev.jsonl"), out.ontology);
      ld.test = load_corpus(root / (lang + "_test.jsonl"), out.ontology);
    }
    out.languages.push_back(std::move(ld));
  }
  std::vector<const std::vector<Utterance>*> corpora;
  for (const auto& ld : out.languages) corpora.push_back(&ld.train);
  out.vocab = build_vocabulary(corpora, out.ontology);
  return out;
}

void write_dataset(const DataSet& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& ld : data.languages) {
    save_corpus(ld.train, dir / (ld.lang + "_train.jsonl"));
    save_corpus(ld.dev, dir / (ld.lang + "_dev.jsonl"));
    save_corpus(ld.test, dir / (ld.lang + "_test.jsonl"));
  }
}

// --- records -----------------------------------------------------------------

std::string RunRecord::to_json_string() const {
  json j;
  j["config"] = config_to_json(config);
  j["stages"] = json::array();
  for (const auto& s : stages) j["stages"].push_back(stage_to_json(s));
  j["test"] = json::parse(report_json(test_report));
  return j.dump(2);
}

// --- checkpoint io -----------------------------------------------------------

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os)
    throw CheckpointError(CheckpointError::Kind::Io,
                          "cannot write checkpoint " + path.string());
  put_raw(os, kCkptMagic, 4);
  put_u32(os, c.version);
  put_u64(os, c.config_fingerprint);
  put_u32(os, c.stage);
  put_u32(os, c.epochs_done);
  put_u64(os, c.model_cfg.feat_dim);
  put_u64(os, c.model_cfg.model_dim);
  put_u64(os, c.model_cfg.enc_layers);
  put_u64(os, c.model_cfg.enc_hidden);
  put_u64(os, c.model_cfg.slu_layers);
  put_u64(os, c.model_cfg.slu_hidden);
  put_u64(os, c.model_cfg.embedding_dim);
  put_u64(os, c.model_cfg.vocab_size);
  put_f64(os, c.model_cfg.leaky_slope);
  put_f64(os, c.model_cfg.frame_ms);
  put_u64(os, c.vocab.id2tok.size());
  for (const auto& tok : c.vocab.id2tok) put_str(os, tok);
  for (std::uint64_t w : c.train_rng.words) put_u64(os, w);
  os.put(c.train_rng.has_spare ? 1 : 0);
  put_f64(os, c.train_rng.spare);
  put_u64(os, c.params.size());
  for (const auto& [name, t] : c.params) {
    put_str(os, name);
    put_u32(os, static_cast<std::uint32_t>(t->shape.size()));
    for (std::size_t d : t->shape) put_u64(os, d);
    for (double v : t->values) put_f64(os, v);
  }
  put_u64(os, c.adam_states.size());
  for (const auto& [name, s] : c.adam_states) {
    put_str(os, name);
    put_f64(os, s.lr);
    put_f64(os, s.beta1);
    put_f64(os, s.beta2);
    put_f64(os, s.eps);
    put_u64(os, s.t);
    put_f64s(os, s.m);
    put_f64s(os, s.v);
  }
  put_u64(os, c.adadelta_states.size());
  for (const auto& [name, s] : c.adadelta_states) {
    put_str(os, name);
    put_f64(os, s.lr);
    put_f64(os, s.rho);
    put_f64(os, s.eps);
    put_f64s(os, s.eg2);
    put_f64s(os, s.edx2);
  }
  os.put(c.has_best ? 1 : 0);
  if (c.has_best) {
    put_u64(os, c.best_epoch);
    put_f64(os, c.best_metric);
    put_u64(os, c.best_values.size());
    for (const auto& [name, vals] : c.best_values) {
      put_str(os, name);
      put_f64s(os, vals);
    }
  }
  put_str(os, c.history_json);
  if (!os)
    throw CheckpointError(CheckpointError::Kind::Io,
                          "short write on checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  ByteReader r(path);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kCkptMagic, 4) != 0)
    throw CheckpointError(CheckpointError::Kind::Format,
                          "not a checkpoint file: " + path.string());
  Checkpoint c;
  c.version = r.u32();
  if (c.version != 1)
    throw CheckpointError(CheckpointError::Kind::Version,
                          "unsupported checkpoint version " +
                              std::to_string(c.version));
  c.config_fingerprint = r.u64();
  c.stage = r.u32();
  c.epochs_done = r.u32();
  c.model_cfg.feat_dim = r.u64();
  c.model_cfg.model_dim = r.u64();
  c.model_cfg.enc_layers = r.u64();
  c.model_cfg.enc_hidden = r.u64();
  c.model_cfg.slu_layers = r.u64();
  c.model_cfg.slu_hidden = r.u64();
  c.model_cfg.embedding_dim = r.u64();
  c.model_cfg.vocab_size = r.u64();
  c.model_cfg.leaky_slope = r.f64();
  c.model_cfg.frame_ms = r.f64();
  const std::uint64_t n_tok = r.u64();
  if (n_tok > (1ull << 24))
    throw CheckpointError(CheckpointError::Kind::Format,
                          "implausible vocabulary size in checkpoint");
  c.vocab.id2tok.clear();
  for (std::uint64_t i = 0; i < n_tok; ++i) c.vocab.id2tok.push_back(r.str());
  if (c.vocab.id2tok.empty() ||
      c.vocab.id2tok[0] != Vocabulary::kBlankToken)
    throw CheckpointError(CheckpointError::Kind::Format,
                          "checkpoint vocabulary does not start with the "
                          "blank");
  for (std::size_t i = 0; i < c.vocab.id2tok.size(); ++i)
    if (!c.vocab.tok2id.emplace(c.vocab.id2tok[i], i).second)
      throw CheckpointError(CheckpointError::Kind::Format,
                            "duplicate vocabulary token in checkpoint");
  c.vocab.blank_id = 0;
  for (auto& w : c.train_rng.words) w = r.u64();
  {
    char flag;
    r.raw(&flag, 1);
    c.train_rng.has_spare = flag != 0;
  }
  c.train_rng.spare = r.f64();
  const std::uint64_t n_params = r.u64();
  if (n_params > (1ull << 20))
    throw CheckpointError(CheckpointError::Kind::Format,
                          "implausible parameter count in checkpoint");
  for (std::uint64_t i = 0; i < n_params; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8)
      throw CheckpointError(CheckpointError::Kind::Format,
                            "implausible tensor rank in checkpoint");
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = r.u64();
      if (d == 0 || d > (1ull << 24))
        throw CheckpointError(CheckpointError::Kind::Format,
                              "implausible tensor dimension in checkpoint");
      numel *= d;
    }
    if (numel > (1ull << 27))
      throw CheckpointError(CheckpointError::Kind::Format,
                            "implausible tensor size in checkpoint");
    std::vector<double> values(numel);
    for (auto& v : values) v = r.f64();
    c.params.emplace_back(std::move(name),
                          make_tensor(std::move(shape), std::move(values),
                                      true));
  }
  const std::uint64_t n_adam = r.u64();
  for (std::uint64_t i = 0; i < n_adam; ++i) {
    std::string name = r.str();
    AdamState s;
    s.lr = r.f64();
    s.beta1 = r.f64();
    s.beta2 = r.f64();
    s.eps = r.f64();
    s.t = r.u64();
    s.m = r.f64s();
    s.v = r.f64s();
    c.adam_states.emplace(std::move(name), std::move(s));
  }
  const std::uint64_t n_ada = r.u64();
  for (std::uint64_t i = 0; i < n_ada; ++i) {
    std::string name = r.str();
    AdadeltaState s;
    s.lr = r.f64();
    s.rho = r.f64();
    s.eps = r.f64();
    s.eg2 = r.f64s();
    s.edx2 = r.f64s();
    c.adadelta_states.emplace(std::move(name), std::move(s));
  }
  {
    char flag;
    r.raw(&flag, 1);
    c.has_best = flag != 0;
  }
  if (c.has_best) {
    c.best_epoch = r.u64();
    c.best_metric = r.f64();
    const std::uint64_t n_best = r.u64();
    if (n_best > (1ull << 20))
      throw CheckpointError(CheckpointError::Kind::Format,
                            "implausible snapshot size in checkpoint");
    for (std::uint64_t i = 0; i < n_best; ++i) {
      std::string name = r.str();
      c.best_values.emplace_back(std::move(name), r.f64s());
    }
  }
  c.history_json = r.str();
  if (r.in.peek() != std::ifstream::traits_type::eof())
    throw CheckpointError(CheckpointError::Kind::Format,
                          "trailing bytes after checkpoint payload");
  return c;
}

// --- run_training ------------------------------------------------------------

TrainResult run_training(const ExperimentConfig& cfg, const DataSet& data,
                         const std::optional<std::filesystem::path>& run_dir,
                         const std::optional<std::filesystem::path>&
                             resume_from,
                         const Checkpoint* warm_start) {
  cfg.validate();
  ModelConfig mc = cfg.model;
  mc.vocab_size = data.vocab.size();
  mc.validate();
  const std::uint64_t fp = cfg.fingerprint(data.vocab);
  const auto plan = stage_plan(cfg);

  DualModel model;
  Rng train_rng(hash_combine(cfg.seed, fnv1a("train")));
  std::vector<StageRecord> stages;
  std::size_t start_stage = 0;
  bool mid_stage = false;
  bool resume_has_best = false;
  std::size_t resume_best_epoch = 0;
  double resume_best_metric = kAbsent;
  std::vector<std::pair<std::string, std::vector<double>>> resume_best_values;
  std::map<std::string, AdamState> resume_adam;
  std::map<std::string, AdadeltaState> resume_adadelta;

  if (resume_from) {
    Checkpoint ck = load_checkpoint(*resume_from);
    if (ck.config_fingerprint != fp)
      throw CheckpointError(CheckpointError::Kind::Fingerprint,
                            "checkpoint belongs to a different experiment");
    if (ck.vocab.fingerprint() != data.vocab.fingerprint())
      throw CheckpointError(CheckpointError::Kind::Fingerprint,
                            "checkpoint vocabulary differs from the "
                            "prepared data");
    model = model_from_checkpoint(ck);
    train_rng.restore(ck.train_rng);
    start_stage = ck.stage;
    stages = stages_from_json(ck.history_json);
    if (start_stage >= plan.size() || stages.size() != start_stage + 1 ||
        stages.back().epochs.size() != ck.epochs_done)
      throw CheckpointError(CheckpointError::Kind::Format,
                            "checkpoint history does not fit the configured "
                            "pipeline");
    if (ck.epochs_done > plan[start_stage].epochs)
      throw CheckpointError(CheckpointError::Kind::Format,
                            "checkpoint already trained past the configured "
                            "epoch budget");
    mid_stage = true;
    resume_has_best = ck.has_best;
    resume_best_epoch = ck.best_epoch;
    resume_best_metric = ck.best_metric;
    resume_best_values = std::move(ck.best_values);
    resume_adam = std::move(ck.adam_states);
    resume_adadelta = std::move(ck.adadelta_states);
  } else {
    Rng init_rng(hash_combine(cfg.seed, fnv1a("init")));
    model = DualModel(mc, init_rng);
    Checkpoint loaded;
    const Checkpoint* warm = warm_start;
    if (!warm && !cfg.init_from.empty()) {
      loaded = load_checkpoint(cfg.init_from);
      warm = &loaded;
    }
    if (warm) {
      if (warm->vocab.fingerprint() != data.vocab.fingerprint())
        throw CheckpointError(CheckpointError::Kind::Fingerprint,
                              "warm-start vocabulary differs from the "
                              "prepared data");
      assign_values(model, warm->params);
    }
  }

  if (run_dir) {
    std::filesystem::create_directories(*run_dir);
    write_text_file(*run_dir / "config.json", cfg.to_json_string());
    std::ofstream ep(*run_dir / "epochs.jsonl",
                     std::ios::binary | std::ios::trunc);
    for (std::size_t s = 0; s < stages.size(); ++s)
      for (const auto& er : stages[s].epochs) {
        json line = epoch_to_json(er);
        line["stage"] = s;
        line["pipeline"] = pipeline_to_string(stages[s].pipeline);
        ep << line.dump() << "\n";
      }
  }

  Checkpoint final_ck;
  for (std::size_t s = start_stage; s < plan.size(); ++s) {
    const Pipeline stage = plan[s].pipeline;
    const std::size_t stage_epochs = plan[s].epochs;
    DualOptimizer opt(build_param_groups(model, stage), adam_template(cfg),
                      adadelta_template(cfg));
    const std::vector<NamedParam> trainables = model.trainable_params(stage);
    bool has_best = false;
    std::size_t best_epoch = 0;
    double best_metric = kAbsent;
    std::vector<std::pair<std::string, std::vector<double>>> best_values;

    if (mid_stage && s == start_stage) {
      restore_states(opt.adam_states(), resume_adam, "Adam");
      restore_states(opt.adadelta_states(), resume_adadelta, "Adadelta");
      has_best = resume_has_best;
      best_epoch = resume_best_epoch;
      best_metric = resume_best_metric;
      best_values = std::move(resume_best_values);
    } else {
      StageRecord rec;
      rec.pipeline = stage;
      rec.selection =
          stage == Pipeline::specialize ? "dev_semantic" : "dev_cer";
      rec.trainable_params = param_count(trainables);
      if (stage != Pipeline::specialize) {
        const EvalReport r0 = decode_split(
            model, data.vocab, data.ontology,
            data.language(cfg.target_language).dev);
        rec.epoch0_dev_cer = r0.cer.rate;
      }
      if (stage != Pipeline::slu_finetune)
        rec.epoch0_dev_semantic =
            eval_dev_semantic(model, data, cfg.train_languages);
      stages.push_back(std::move(rec));
    }
    StageRecord& cur = stages.back();

    TargetMap targets;
    const auto active = active_languages(stage, cfg);
    for (const auto& lang : active)
      if (wants_slu(stage, cfg, lang)) {
        auto& vec = targets[lang];
        for (const Utterance& u : data.language(lang).train)
          vec.push_back(data.vocab.encode(u.transcript.tokens()));
      }

    for (std::size_t e = cur.epochs.size() + 1; e <= stage_epochs; ++e) {
      const auto t0 = std::chrono::steady_clock::now();
      const EpochStats st = train_one_epoch(stage, cfg, data, model, opt,
                                            trainables, active, targets,
                                            train_rng);
      EpochRecord er;
      er.epoch = e;
      er.train_semantic = st.train_semantic;
      er.train_slu = st.train_slu;
      er.train_total = st.train_total;
      if (stage != Pipeline::slu_finetune)
        er.dev_semantic = eval_dev_semantic(model, data, cfg.train_languages);
      if (stage != Pipeline::specialize) {
        const EvalReport dr = decode_split(
            model, data.vocab, data.ontology,
            data.language(cfg.target_language).dev);
        er.dev_cer = dr.cer.rate;
        er.dev_cver = dr.cver.rate;
        er.dev_wer = dr.wer.rate;
        er.dev_repairs = dr.repairs;
      }
      cur.epochs.push_back(er);
      const double metric =
          stage == Pipeline::specialize ? er.dev_semantic : er.dev_cer;
      const double comparable =
          std::isfinite(metric) ? metric
                                : std::numeric_limits<double>::infinity();
      const double best_comparable =
          std::isfinite(best_metric) ? best_metric
                                     : std::numeric_limits<double>::infinity();
      if (!has_best || comparable < best_comparable) {
        has_best = true;
        best_epoch = e;
        best_metric = metric;
        best_values = snapshot_values(model);
      }
      cur.best_epoch = best_epoch;
      cur.best_metric = best_metric;
      if (run_dir) {
        std::ofstream ep(*run_dir / "epochs.jsonl",
                         std::ios::binary | std::ios::app);
        json line = epoch_to_json(er);
        line["stage"] = s;
        line["pipeline"] = pipeline_to_string(stage);
        ep << line.dump() << "\n";
        save_checkpoint(
            make_checkpoint(fp, s, e, mc, data.vocab, model, opt, train_rng,
                            has_best, best_epoch, best_metric, best_values,
                            stages_to_json(stages)),
            *run_dir / "last.ckpt");
      }
      if (g_verbose) {
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                          t0)
                .count();
        std::fprintf(stderr,
                     "[%s] epoch %zu/%zu total=%s dev_sem=%s dev_cer=%s "
                     "(%.1fs)\n",
                     pipeline_to_string(stage).c_str(), e, stage_epochs,
                     fmt2(er.train_total).c_str(),
                     fmt2(er.dev_semantic).c_str(), fmt2(er.dev_cer).c_str(),
                     secs);
      }
    }

    if (has_best) restore_values(model, best_values);
    if (s + 1 == plan.size())
      final_ck = make_checkpoint(fp, s, stage_epochs, mc, data.vocab, model,
                                 opt, train_rng, has_best, best_epoch,
                                 best_metric, best_values,
                                 stages_to_json(stages));
    mid_stage = false;
  }

  TrainResult result;
  result.record.config = cfg;
  result.record.stages = stages;
  result.record.test_report = decode_split(
      model, data.vocab, data.ontology, data.language(cfg.target_language).test);
  result.final = std::move(final_ck);
  if (run_dir) {
    save_checkpoint(result.final, *run_dir / "final.ckpt");
    write_text_file(*run_dir / "report.json", result.record.to_json_string());
  }
  return result;
}

// --- evaluation --------------------------------------------------------------

EvalReport evaluate_model(const Checkpoint& ckpt, const Ontology& ontology,
                          const std::vector<Utterance>& split) {
  const DualModel model = model_from_checkpoint(ckpt);
  return decode_split(model, ckpt.vocab, ontology, split);
}

// --- lambda sweep ------------------------------------------------------------

std::string SweepResult::table() const {
  std::ostringstream os;
  os << "lambda    best_epoch  dev_CER%   test_CER%\n";
  for (const auto& e : entries) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-9s %-11zu %-10s %-10s\n",
                  fmt_g(e.lambda).c_str(), e.best_epoch,
                  fmt2(e.dev_cer_pct).c_str(), fmt2(e.test_cer_pct).c_str());
    os << buf;
  }
  os << "best lambda: " << fmt_g(best_lambda) << "\n";
  return os.str();
}

std::string SweepResult::to_json_string() const {
  json j;
  j["entries"] = json::array();
  for (const auto& e : entries) {
    json je;
    je["lambda"] = e.lambda;
    je["best_epoch"] = e.best_epoch;
    je["dev_cer_pct"] = jnum(e.dev_cer_pct);
    je["test_cer_pct"] = jnum(e.test_cer_pct);
    j["entries"].push_back(je);
  }
  j["best_lambda"] = best_lambda;
  j["best_run"] = json::parse(best_record.to_json_string());
  return j.dump(2);
}

SweepResult sweep_lambda(const ExperimentConfig& cfg, const DataSet& data,
                         const std::optional<std::filesystem::path>& run_dir) {
  if (cfg.pipeline != Pipeline::dual &&
      cfg.pipeline != Pipeline::dual_then_slu)
    throw ConfigError("lambda sweep needs a dual pipeline");
  if (cfg.lambda_grid.empty()) throw ConfigError("lambda_grid is empty");
  SweepResult out;
  bool have_best = false;
  double best_dev = 0.0;
  // Every trial reruns from the same seed so lambda is the only variable.
  for (double lam : cfg.lambda_grid) {
    ExperimentConfig c = cfg;
    c.lambda = lam;
    std::optional<std::filesystem::path> dir;
    if (run_dir) dir = *run_dir / ("lambda_" + fmt_g(lam));
    TrainResult r = run_training(c, data, dir);
    const StageRecord& last = r.record.stages.back();
    SweepEntry e;
    e.lambda = lam;
    e.best_epoch = last.best_epoch;
    e.dev_cer_pct = last.best_metric * 100.0;
    e.test_cer_pct = r.record.test_report.cer.rate * 100.0;
    out.entries.push_back(e);
    const double comparable =
        std::isfinite(e.dev_cer_pct) ? e.dev_cer_pct
                                     : std::numeric_limits<double>::infinity();
    if (!have_best || comparable < best_dev ||
        (comparable == best_dev && lam < out.best_lambda)) {
      have_best = true;
      best_dev = comparable;
      out.best_lambda = lam;
      out.best_record = std::move(r.record);
    }
  }
  if (run_dir) write_text_file(*run_dir / "sweep.json", out.to_json_string());
  return out;
}

// --- experiment matrix -------------------------------------------------------

std::string MatrixReport::table() const {
  std::ostringstream os;
  os << "regime               languages        pipeline       profile    "
        "dev_CER%   test_CER%  test_CVER%\n";
  for (const auto& r : rows) {
    char buf[192];
    std::snprintf(buf, sizeof buf, "%-20s %-16s %-14s %-10s %-10s %-10s %-10s\n",
                  r.regime.c_str(), r.languages.c_str(), r.pipeline.c_str(),
                  r.profile.c_str(), fmt2(r.dev_cer_pct).c_str(),
                  fmt2(r.test_cer_pct).c_str(), fmt2(r.test_cver_pct).c_str());
    os << buf;
  }
  os << "\n";
  for (const auto& v : verdicts) os << v << "\n";
  os << "\ntrend (distant test CER%, mean over " << trend_mono_pct.size()
     << " seeds): multilingual " << fmt2(trend_multi_mean) << " vs monolingual "
     << fmt2(trend_mono_mean) << " -> "
     << (trend_holds ? "multilingual wins" : "trend not reproduced") << "\n";
  return os.str();
}

std::string MatrixReport::to_json_string() const {
  json j;
  j["rows"] = json::array();
  for (const auto& r : rows) {
    json jr;
    jr["regime"] = r.regime;
    jr["languages"] = r.languages;
    jr["pipeline"] = r.pipeline;
    jr["profile"] = r.profile;
    jr["dev_cer_pct"] = jnum(r.dev_cer_pct);
    jr["test_cer_pct"] = jnum(r.test_cer_pct);
    jr["test_cver_pct"] = jnum(r.test_cver_pct);
    j["rows"].push_back(jr);
  }
  j["verdicts"] = verdicts;
  j["trend"] = {{"multi_pct", trend_multi_pct},
                {"mono_pct", trend_mono_pct},
                {"multi_mean_pct", jnum(trend_multi_mean)},
                {"mono_mean_pct", jnum(trend_mono_mean)},
                {"holds", trend_holds}};
  return j.dump(2);
}

MatrixReport run_matrix(const ExperimentConfig& base, std::size_t trend_seeds,
                        const std::optional<std::filesystem::path>& run_dir) {
  if (trend_seeds == 0) throw ConfigError("trend_seeds must be positive");
  Ontology ont = base.data.ontology_path.empty()
                     ? Ontology::desk_default()
                     : Ontology::from_json_file(base.data.ontology_path);
  ont.validate();
  if (ont.languages.size() < 3)
    throw ConfigError("the experiment matrix needs at least three languages");
  std::vector<std::string> all;
  for (const auto& l : ont.languages) all.push_back(l.tag);
  const std::string reference = all[0];
  auto overlap_of = [&base](const std::string& lang) {
    const auto it = base.data.overlap.find(lang);
    return it == base.data.overlap.end() ? 0.0 : it->second;
  };
  std::string closest = all[1];
  std::string distant = all[1];
  for (std::size_t i = 1; i < all.size(); ++i) {
    if (overlap_of(all[i]) > overlap_of(closest)) closest = all[i];
    if (overlap_of(all[i]) <= overlap_of(distant)) distant = all[i];
  }

  ExperimentConfig data_cfg = base;
  data_cfg.pipeline = Pipeline::dual;
  data_cfg.train_languages = all;
  data_cfg.slu_languages = all;
  data_cfg.target_language = distant;
  const DataSet data = prepare_data(data_cfg);

  MatrixReport rep;
  auto profile_of = [&ont](const std::string& lang) {
    return DatasetProfile::by_name(ont.find_language(lang)->profile);
  };
  auto dir_for = [&run_dir](const std::string& slug)
      -> std::optional<std::filesystem::path> {
    if (!run_dir) return std::nullopt;
    return *run_dir / slug;
  };
  auto add_row = [&rep, &ont](const std::string& regime,
                              const std::string& langs,
                              const RunRecord& record,
                              const std::string& target) {
    MatrixRow row;
    row.regime = regime;
    row.languages = langs;
    row.pipeline = pipeline_to_string(record.config.pipeline);
    row.profile = ont.find_language(target)->profile;
    row.dev_cer_pct = record.stages.back().best_metric * 100.0;
    row.test_cer_pct = record.test_report.cer.rate * 100.0;
    row.test_cver_pct = record.test_report.cver.rate * 100.0;
    rep.rows.push_back(row);
    return row;
  };
  auto base_row_cfg = [&base]() {
    ExperimentConfig c = base;
    c.init_from.clear();
    return c;
  };

  std::map<std::string, double> test_cer;  // keyed by row slug

  for (const auto& lang : all) {
    {
      ExperimentConfig c = base_row_cfg();
      c.pipeline = Pipeline::slu_finetune;
      c.train_languages.clear();
      c.slu_languages = {lang};
      c.target_language = lang;
      const TrainResult r = run_training(c, data, dir_for("slu_" + lang));
      add_row("slu_only", lang, r.record, lang);
      test_cer["slu_" + lang] = r.record.test_report.cer.rate * 100.0;
    }
    {
      ExperimentConfig cs = base_row_cfg();
      cs.pipeline = Pipeline::specialize;
      cs.train_languages = {lang};
      cs.slu_languages = {lang};
      cs.target_language = lang;
      const TrainResult spec =
          run_training(cs, data, dir_for("spec_" + lang));
      ExperimentConfig cf = base_row_cfg();
      cf.pipeline = Pipeline::slu_finetune;
      cf.train_languages.clear();
      cf.slu_languages = {lang};
      cf.target_language = lang;
      const TrainResult r = run_training(cf, data, dir_for("spec_slu_" + lang),
                                         std::nullopt, &spec.final);
      add_row("specialize_slu", lang, r.record, lang);
      test_cer["spec_slu_" + lang] = r.record.test_report.cer.rate * 100.0;
    }
    {
      ExperimentConfig c = base_row_cfg();
      c.pipeline = Pipeline::dual;
      c.train_languages = {lang};
      c.slu_languages = {lang};
      c.target_language = lang;
      const TrainResult r = run_training(c, data, dir_for("dual_" + lang));
      add_row("dual_mono", lang, r.record, lang);
      test_cer["dual_" + lang] = r.record.test_report.cer.rate * 100.0;
    }
  }

  for (const std::string& target : {reference, closest}) {
    ExperimentConfig c = base_row_cfg();
    c.pipeline = Pipeline::dual;
    c.train_languages = {reference, closest};
    c.slu_languages = {target};
    c.target_language = target;
    const TrainResult r =
        run_training(c, data, dir_for("dual_close_" + target));
    add_row("dual_close", reference + "+" + closest + "->" + target, r.record,
            target);
    test_cer["dual_close_" + target] = r.record.test_report.cer.rate * 100.0;
  }

  for (std::size_t i = 0; i < trend_seeds; ++i) {
    const std::uint64_t seed = base.seed + i;
    ExperimentConfig mono = base_row_cfg();
    mono.pipeline = Pipeline::dual_then_slu;
    mono.train_languages = {distant};
    mono.slu_languages = {distant};
    mono.target_language = distant;
    mono.seed = seed;
    const TrainResult rm = run_training(
        mono, data, dir_for("trend_mono_s" + std::to_string(i)));
    rep.trend_mono_pct.push_back(rm.record.test_report.cer.rate * 100.0);

    ExperimentConfig multi = mono;
    multi.train_languages = all;
    const TrainResult rx = run_training(
        multi, data, dir_for("trend_multi_s" + std::to_string(i)));
    rep.trend_multi_pct.push_back(rx.record.test_report.cer.rate * 100.0);

    if (i == 0) {
      add_row("dual_then_slu_mono", distant, rm.record, distant);
      std::string langs;
      for (const auto& l : all) langs += (langs.empty() ? "" : "+") + l;
      add_row("dual_then_slu_multi", langs + "->" + distant, rx.record,
              distant);
      test_cer["dts_mono"] = rm.record.test_report.cer.rate * 100.0;
      test_cer["dts_multi"] = rx.record.test_report.cer.rate * 100.0;
    }
  }

  auto mean_of_vec = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? kAbsent : s / double(v.size());
  };
  rep.trend_mono_mean = mean_of_vec(rep.trend_mono_pct);
  rep.trend_multi_mean = mean_of_vec(rep.trend_multi_pct);
  rep.trend_holds = rep.trend_multi_mean <= rep.trend_mono_mean;

  auto verdict = [&rep](const std::string& label, const DatasetProfile& prof,
                        double baseline_pct, double candidate_pct) {
    const SignificanceVerdict v =
        significance_check(prof, baseline_pct, candidate_pct);
    std::string state = v.relevant
                            ? "relevant"
                            : (v.within_variation ? "within run variation"
                                                  : "not relevant");
    rep.verdicts.push_back(label + ": " + fmt2(baseline_pct) + "% vs " +
                           fmt2(candidate_pct) + "% test CER, gap " +
                           fmt2(v.gap_pct) + "pt, " + state + " (" +
                           prof.name + " threshold " +
                           fmt_g(prof.cer_threshold_pct) + ")");
  };
  for (const auto& lang : all) {
    verdict(lang + " dual_mono vs slu_only", profile_of(lang),
            test_cer.at("slu_" + lang), test_cer.at("dual_" + lang));
    verdict(lang + " specialize_slu vs slu_only", profile_of(lang),
            test_cer.at("slu_" + lang), test_cer.at("spec_slu_" + lang));
  }
  verdict(distant + " dual_then_slu multi vs mono", profile_of(distant),
          test_cer.at("dts_mono"), test_cer.at("dts_multi"));

  if (run_dir) {
    std::filesystem::create_directories(*run_dir);
    write_text_file(*run_dir / "matrix.json", rep.to_json_string());
    write_text_file(*run_dir / "matrix.txt", rep.table());
  }
  return rep;
}

}  // namespace dualslu
