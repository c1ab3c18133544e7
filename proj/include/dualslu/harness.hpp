#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dualslu/corpus.hpp"
#include "dualslu/layers.hpp"
#include "dualslu/losses.hpp"
#include "dualslu/metrics.hpp"
#include "dualslu/optim.hpp"

namespace dualslu {

// Where training data comes from: synthesized on the fly or read from
// corpus files produced by gen-corpus.
struct DataSpec {
  std::string ontology_path;  // empty = built-in desk ontology
  std::string mode = "generate";
  std::string root;  // files mode: directory of <lang>_<split>.jsonl
  std::size_t train = 200;
  std::size_t dev = 50;
  std::size_t test = 50;
  std::map<std::string, double> overlap;  // per language, default 0
  std::uint64_t corpus_seed = 42;
};

struct ExperimentConfig {
  Pipeline pipeline = Pipeline::dual;
  std::vector<std::string> train_languages;  // semantic branch languages L
  std::vector<std::string> slu_languages;    // empty = {target_language}
  std::string target_language;
  double lambda = 1.0;
  std::vector<double> lambda_grid{0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0};
  std::size_t epochs = 30;
  std::size_t slu_epochs = 0;  // dual_then_slu second stage; 0 = epochs
  std::size_t batch_size = 8;
  std::uint64_t seed = 42;
  double adam_lr = 0.0001;
  double adadelta_lr = 1.0;
  double adadelta_rho = 0.95;
  double clip_norm = 0.0;  // <= 0 disables clipping
  bool shuffle = false;
  std::string init_from;  // checkpoint to warm-start from (chained runs)
  ModelConfig model;
  DataSpec data;

  void validate() const;
  // All languages the run touches, in round-robin order, deduplicated.
  std::vector<std::string> languages() const;
  std::vector<std::string> effective_slu_languages() const;

  std::string to_json_string() const;
  static ExperimentConfig from_json_string(const std::string& text);
  static ExperimentConfig from_json_file(const std::filesystem::path& path);

  // Stable digest of everything that shapes training, combined with the
  // vocabulary fingerprint; checkpoints refuse to resume across changes.
  std::uint64_t fingerprint(const Vocabulary& vocab) const;
};

struct LanguageData {
  std::string lang;
  std::vector<Utterance> train, dev, test;
};

struct DataSet {
  Ontology ontology;
  std::vector<LanguageData> languages;
  Vocabulary vocab;

  const LanguageData& language(const std::string& tag) const;
};

// Generates or loads every split the config needs and builds the shared
// vocabulary over all training splits.
DataSet prepare_data(const ExperimentConfig& cfg);

// Writes <lang>_<split>.jsonl (+ .feat sidecars) for every language.
void write_dataset(const DataSet& data, const std::filesystem::path& dir);

constexpr double kAbsent = std::numeric_limits<double>::quiet_NaN();

// All rates in records are fractions; percent appears only in tables and
// significance checks. kAbsent marks metrics a stage does not produce and
// serializes as null.
struct EpochRecord {
  std::size_t epoch = 0;  // 1-based within the stage
  double train_semantic = kAbsent;
  double train_slu = kAbsent;
  double train_total = kAbsent;
  double dev_semantic = kAbsent;
  double dev_cer = kAbsent;
  double dev_cver = kAbsent;
  double dev_wer = kAbsent;
  std::size_t dev_repairs = 0;
};

struct StageRecord {
  Pipeline pipeline = Pipeline::specialize;
  std::string selection;  // "dev_cer" or "dev_semantic"
  double epoch0_dev_cer = kAbsent;       // untrained baseline
  double epoch0_dev_semantic = kAbsent;  //
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 1-based; 0 = nothing selected yet
  double best_metric = kAbsent;
  std::size_t trainable_params = 0;
};

struct RunRecord {
  ExperimentConfig config;
  std::vector<StageRecord> stages;  // dual_then_slu has two
  EvalReport test_report;           // target test split, best parameters

  std::string to_json_string() const;
};

// Self-contained training state: enough to resume bit-exactly and to
// evaluate or chain without the original data files.
struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t config_fingerprint = 0;
  std::uint32_t stage = 0;        // index into RunRecord::stages
  std::uint32_t epochs_done = 0;  // completed epochs in that stage
  ModelConfig model_cfg;
  Vocabulary vocab;
  std::vector<std::pair<std::string, Tensor>> params;
  std::map<std::string, AdamState> adam_states;
  std::map<std::string, AdadeltaState> adadelta_states;
  Rng::State train_rng{};
  bool has_best = false;
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
  std::vector<std::pair<std::string, std::vector<double>>> best_values;
  std::string history_json;  // stages completed so far
};

void save_checkpoint(const Checkpoint& ckpt,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainResult {
  RunRecord record;
  Checkpoint final;  // parameters = dev-selected best of the last stage
};

// One progress line per epoch on stderr; off by default so test output
// stays quiet. Wall-clock timing never enters report files.
void set_harness_verbose(bool enabled);
bool harness_verbose();

// Runs the configured pipeline. When run_dir is given, writes config.json,
// epochs.jsonl, last.ckpt (per epoch, for resume), final.ckpt, and
// report.json. resume_from continues a previous last.ckpt; warm_start
// seeds the initial weights from another run's final checkpoint (shape
// and vocabulary must match) without touching optimizer state.
TrainResult run_training(
    const ExperimentConfig& cfg, const DataSet& data,
    const std::optional<std::filesystem::path>& run_dir = std::nullopt,
    const std::optional<std::filesystem::path>& resume_from = std::nullopt,
    const Checkpoint* warm_start = nullptr);

struct SweepEntry {
  double lambda = 0.0;
  double dev_cer_pct = kAbsent;  // best epoch's dev CER, percent
  double test_cer_pct = kAbsent;
  std::size_t best_epoch = 0;
};

struct SweepResult {
  std::vector<SweepEntry> entries;
  double best_lambda = 0.0;
  RunRecord best_record;

  std::string table() const;
  std::string to_json_string() const;
};

// run_dual once per grid value (same seed each trial, λ isolated as the
// only variable); argmin best-epoch dev CER, ties to the smaller λ.
SweepResult sweep_lambda(
    const ExperimentConfig& cfg, const DataSet& data,
    const std::optional<std::filesystem::path>& run_dir = std::nullopt);

// Decodes a split with the checkpoint's parameters and vocabulary.
EvalReport evaluate_model(const Checkpoint& ckpt, const Ontology& ontology,
                          const std::vector<Utterance>& split);

// Regime grid covering every training-order comparison: per language a
// fresh-SLU baseline, specialize-then-SLU, and a monolingual dual; plus
// the close-pair dual and the multilingual dual_then_slu for the distant
// language, with significance verdicts and a seed-averaged trend.
struct MatrixRow {
  std::string regime;
  std::string languages;
  std::string pipeline;
  std::string profile;
  double dev_cer_pct = kAbsent;
  double test_cer_pct = kAbsent;
  double test_cver_pct = kAbsent;
};

struct MatrixReport {
  std::vector<MatrixRow> rows;
  std::vector<std::string> verdicts;
  std::vector<double> trend_multi_pct;  // per-seed test CER, multilingual
  std::vector<double> trend_mono_pct;   // per-seed test CER, monolingual
  double trend_multi_mean = kAbsent;
  double trend_mono_mean = kAbsent;
  bool trend_holds = false;  // multilingual <= monolingual on the distant set

  std::string table() const;
  std::string to_json_string() const;
};

MatrixReport run_matrix(
    const ExperimentConfig& base, std::size_t trend_seeds = 5,
    const std::optional<std::filesystem::path>& run_dir = std::nullopt);

}  // namespace dualslu
