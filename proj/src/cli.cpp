#include "dualslu/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dualslu/common.hpp"
#include "dualslu/corpus.hpp"
#include "dualslu/harness.hpp"
#include "dualslu/layers.hpp"
#include "dualslu/metrics.hpp"

namespace dualslu {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path run_root() {
  if (const char* env = std::getenv("DSLU_RUN_ROOT")) return fs::path(env);
  return fs::path("runs");
}

json load_config_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)), {});
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw ConfigError("config file '" + path + "' is not a JSON object");
  return j;
}

// Flags land in the parsed config JSON before schema validation, so
// precedence is flags > file > defaults with one code path.
struct CommonTrainFlags {
  std::string config_path;
  std::string out;
  std::string pipeline;
  double lambda = 0.0;
  std::size_t epochs = 0;
  std::size_t slu_epochs = 0;
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  bool shuffle = false;
  std::string init_from;
  std::string target;

  CLI::Option* o_pipeline = nullptr;
  CLI::Option* o_lambda = nullptr;
  CLI::Option* o_epochs = nullptr;
  CLI::Option* o_slu_epochs = nullptr;
  CLI::Option* o_batch = nullptr;
  CLI::Option* o_seed = nullptr;
  CLI::Option* o_shuffle = nullptr;
  CLI::Option* o_init = nullptr;
  CLI::Option* o_target = nullptr;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config JSON")
        ->required();
    cmd->add_option("--out", out,
                    "run directory (default $DSLU_RUN_ROOT/<config stem>)");
    o_pipeline = cmd->add_option(
        "--pipeline", pipeline,
        "override: specialize | slu_finetune | dual | dual_then_slu");
    o_lambda = cmd->add_option("--lambda", lambda, "override: SLU loss weight");
    o_epochs = cmd->add_option("--epochs", epochs, "override: epoch budget");
    o_slu_epochs = cmd->add_option("--slu-epochs", slu_epochs,
                                   "override: second-stage epoch budget");
    o_batch = cmd->add_option("--batch-size", batch_size, "override");
    o_seed = cmd->add_option("--seed", seed, "override: experiment seed");
    o_shuffle = cmd->add_flag("--shuffle", shuffle,
                              "override: shuffle training batches");
    o_init = cmd->add_option("--init-from", init_from,
                             "override: warm-start checkpoint");
    o_target = cmd->add_option("--target", target,
                               "override: target language");
  }

  ExperimentConfig resolve() const {
    json j = load_config_json(config_path);
    if (o_pipeline->count()) j["pipeline"] = pipeline;
    if (o_lambda->count()) j["lambda"] = lambda;
    if (o_epochs->count()) j["epochs"] = epochs;
    if (o_slu_epochs->count()) j["slu_epochs"] = slu_epochs;
    if (o_batch->count()) j["batch_size"] = batch_size;
    if (o_seed->count()) j["seed"] = seed;
    if (o_shuffle->count()) j["shuffle"] = true;
    if (o_init->count()) j["init_from"] = init_from;
    if (o_target->count()) j["target_language"] = target;
    ExperimentConfig cfg = ExperimentConfig::from_json_string(j.dump());
    cfg.validate();
    return cfg;
  }

  fs::path out_dir(const ExperimentConfig& cfg, const char* suffix) const {
    if (!out.empty()) return fs::path(out);
    const std::string stem = fs::path(config_path).stem().string();
    return run_root() / (stem + "_" + pipeline_to_string(cfg.pipeline) +
                         suffix);
  }
};

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (text.empty() || text.back() != '\n') out << "\n";
}

std::string pct(double rate) {
  if (!std::isfinite(rate)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", rate * 100.0);
  return buf;
}

void print_run_summary(const TrainResult& r, const fs::path& dir) {
  std::cout << "run directory: " << dir.string() << "\n";
  for (const auto& s : r.record.stages) {
    std::cout << "stage " << pipeline_to_string(s.pipeline) << ": "
              << s.epochs.size() << " epochs, best epoch " << s.best_epoch
              << " (" << s.selection << " "
              << (std::isfinite(s.best_metric)
                      ? std::to_string(s.best_metric).substr(0, 6)
                      : std::string("-"))
              << "), " << s.trainable_params << " trainable params\n";
  }
  const EvalReport& t = r.record.test_report;
  std::cout << "test: CER " << pct(t.cer.rate) << "  CVER " << pct(t.cver.rate)
            << "  WER " << pct(t.wer.rate) << "  (" << t.utterances
            << " utterances, " << t.repairs << " repairs)\n";
}

std::vector<AnnotatedTranscript> read_reference_file(const fs::path& path,
                                                     const Ontology& ont) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  std::vector<AnnotatedTranscript> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(parse_annotation(line, ont));
  }
  return out;
}

std::pair<std::vector<AnnotatedTranscript>, std::size_t> read_hypothesis_file(
    const fs::path& path, const Ontology& ont) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  std::vector<AnnotatedTranscript> out;
  std::size_t repairs = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream words(line);
    std::vector<std::string> toks;
    std::string tok;
    while (words >> tok) toks.push_back(tok);
    TolerantParse parsed = parse_annotation_tolerant(toks, ont);
    repairs += parsed.repairs;
    out.push_back(std::move(parsed.transcript));
  }
  return {std::move(out), repairs};
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"dual-objective (semantic alignment + SLU) speech encoder "
               "training at desk scale"};
  app.require_subcommand(1);

  // gen-corpus -------------------------------------------------------------
  auto* gen = app.add_subcommand(
      "gen-corpus", "generate the synthetic corpus described by a config");
  std::string gen_config, gen_out;
  std::uint64_t gen_seed = 0;
  gen->add_option("--config", gen_config, "experiment config JSON")
      ->required();
  gen->add_option("--out", gen_out, "output directory");
  auto* gen_seed_opt =
      gen->add_option("--seed", gen_seed, "override: corpus seed");
  bool gen_json = false;
  gen->add_flag("--json", gen_json, "machine-readable output");

  // train ------------------------------------------------------------------
  auto* train = app.add_subcommand(
      "train", "run the configured training pipeline end to end");
  CommonTrainFlags train_flags;
  train_flags.attach(train);
  std::string train_resume;
  train->add_option("--resume", train_resume, "resume from a checkpoint");
  bool train_json = false, train_quiet = false;
  train->add_flag("--json", train_json, "print the full run record as JSON");
  train->add_flag("--quiet", train_quiet, "no per-epoch progress on stderr");

  // sweep-lambda -----------------------------------------------------------
  auto* sweep = app.add_subcommand(
      "sweep-lambda", "train once per grid value and pick the best dev CER");
  CommonTrainFlags sweep_flags;
  sweep_flags.attach(sweep);
  std::vector<double> sweep_grid;
  auto* sweep_grid_opt = sweep->add_option(
      "--grid", sweep_grid, "override: lambda values to try");
  bool sweep_json = false, sweep_quiet = false;
  sweep->add_flag("--json", sweep_json, "machine-readable output");
  sweep->add_flag("--quiet", sweep_quiet, "no per-epoch progress on stderr");

  // evaluate ---------------------------------------------------------------
  auto* eval = app.add_subcommand(
      "evaluate", "decode a corpus split with a trained checkpoint");
  std::string eval_ckpt, eval_config, eval_split = "test", eval_lang;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--config", eval_config, "experiment config JSON")
      ->required();
  eval->add_option("--split", eval_split, "train | dev | test")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  eval->add_option("--language", eval_lang,
                   "language tag (default: the config's target)");
  bool eval_json = false;
  eval->add_flag("--json", eval_json, "machine-readable output");

  // score ------------------------------------------------------------------
  auto* score = app.add_subcommand(
      "score", "CER/CVER/WER between two bracketed-annotation files");
  std::string score_ref, score_hyp, score_profile, score_ontology;
  score->add_option("--ref", score_ref, "reference file, one line each")
      ->required();
  score->add_option("--hyp", score_hyp, "hypothesis file, one line each")
      ->required();
  score->add_option("--profile", score_profile,
                    "dataset profile for relevance thresholds "
                    "(media | portmedia | taric)");
  score->add_option("--ontology", score_ontology,
                    "ontology JSON (default: built-in)");
  bool score_json = false;
  score->add_flag("--json", score_json, "machine-readable output");

  // show-params ------------------------------------------------------------
  auto* params = app.add_subcommand(
      "show-params", "parameter accounting per training pipeline");
  std::string params_config;
  params->add_option("--config", params_config, "experiment config JSON")
      ->required();
  bool params_json = false;
  params->add_flag("--json", params_json, "machine-readable output");

  // matrix -----------------------------------------------------------------
  auto* matrix = app.add_subcommand(
      "matrix", "run every sequential-vs-dual and portability regime");
  CommonTrainFlags matrix_flags;
  matrix_flags.attach(matrix);
  std::size_t matrix_seeds = 5;
  matrix->add_option("--seeds", matrix_seeds,
                     "seeds for the multilingual-vs-monolingual trend");
  bool matrix_json = false, matrix_quiet = false;
  matrix->add_flag("--json", matrix_json, "machine-readable output");
  matrix->add_flag("--quiet", matrix_quiet, "no progress on stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  try {
    if (app.got_subcommand(gen)) {
      json j = load_config_json(gen_config);
      if (gen_seed_opt->count()) j["data"]["corpus_seed"] = gen_seed;
      ExperimentConfig cfg = ExperimentConfig::from_json_string(j.dump());
      cfg.validate();
      const fs::path dir =
          gen_out.empty() ? run_root() / "corpus" : fs::path(gen_out);
      DataSet data = prepare_data(cfg);
      write_dataset(data, dir);
      write_text(dir / "config.json", cfg.to_json_string());
      if (gen_json) {
        json out;
        out["out"] = dir.string();
        out["vocab_size"] = data.vocab.size();
        out["languages"] = json::array();
        for (const auto& ld : data.languages)
          out["languages"].push_back(
              {{"lang", ld.lang},
               {"train", ld.train.size()},
               {"dev", ld.dev.size()},
               {"test", ld.test.size()}});
        std::cout << out.dump(2) << "\n";
      } else {
        std::cout << "resolved config:\n" << cfg.to_json_string() << "\n";
        for (const auto& ld : data.languages)
          std::cout << ld.lang << ": " << ld.train.size() << " train, "
                    << ld.dev.size() << " dev, " << ld.test.size()
                    << " test\n";
        std::cout << "vocabulary: " << data.vocab.size() << " tokens\n"
                  << "wrote " << dir.string() << "\n";
      }
      return 0;
    }

    if (app.got_subcommand(train)) {
      ExperimentConfig cfg = train_flags.resolve();
      set_harness_verbose(!train_quiet);
      const fs::path dir = train_flags.out_dir(cfg, "");
      DataSet data = prepare_data(cfg);
      std::optional<fs::path> resume;
      if (!train_resume.empty()) resume = fs::path(train_resume);
      TrainResult r = run_training(cfg, data, dir, resume);
      if (train_json)
        std::cout << r.record.to_json_string() << "\n";
      else {
        std::cout << "resolved config:\n" << cfg.to_json_string() << "\n";
        print_run_summary(r, dir);
      }
      return 0;
    }

    if (app.got_subcommand(sweep)) {
      ExperimentConfig cfg = sweep_flags.resolve();
      if (sweep_grid_opt->count()) {
        cfg.lambda_grid = sweep_grid;
        cfg.validate();
      }
      set_harness_verbose(!sweep_quiet);
      const fs::path dir = sweep_flags.out_dir(cfg, "_sweep");
      DataSet data = prepare_data(cfg);
      write_text(dir / "config.json", cfg.to_json_string());
      SweepResult sw = sweep_lambda(cfg, data, dir);
      if (sweep_json)
        std::cout << sw.to_json_string() << "\n";
      else {
        std::cout << "resolved config:\n" << cfg.to_json_string() << "\n";
        std::cout << sw.table();
      }
      return 0;
    }

    if (app.got_subcommand(eval)) {
      Checkpoint ck = load_checkpoint(eval_ckpt);
      ExperimentConfig cfg =
          ExperimentConfig::from_json_file(eval_config);
      cfg.validate();
      DataSet data = prepare_data(cfg);
      const std::string lang =
          eval_lang.empty() ? cfg.target_language : eval_lang;
      const LanguageData& ld = data.language(lang);
      const std::vector<Utterance>& split = eval_split == "train" ? ld.train
                                            : eval_split == "dev" ? ld.dev
                                                                  : ld.test;
      EvalReport rep = evaluate_model(ck, data.ontology, split);
      std::cout << (eval_json ? report_json(rep) : report_table(rep));
      return 0;
    }

    if (app.got_subcommand(score)) {
      const Ontology ont = score_ontology.empty()
                               ? Ontology::desk_default()
                               : Ontology::from_json_file(score_ontology);
      auto refs = read_reference_file(score_ref, ont);
      auto [hyps, repairs] = read_hypothesis_file(score_hyp, ont);
      EvalReport rep = evaluate_transcripts(refs, hyps, repairs);
      if (score_json) {
        json out = json::parse(report_json(rep));
        if (!score_profile.empty()) {
          const DatasetProfile prof = DatasetProfile::by_name(score_profile);
          out["profile"] = {{"name", prof.name},
                            {"cer_threshold_pct", prof.cer_threshold_pct},
                            {"run_variation_pct", prof.run_variation_pct}};
        }
        std::cout << out.dump(2) << "\n";
      } else {
        std::cout << report_table(rep);
        if (!score_profile.empty()) {
          const DatasetProfile prof = DatasetProfile::by_name(score_profile);
          std::cout << "profile " << prof.name << ": CER gaps below "
                    << prof.cer_threshold_pct
                    << "pt are not relevant; run-to-run variation "
                    << prof.run_variation_pct << "pt\n";
        }
      }
      return 0;
    }

    if (app.got_subcommand(params)) {
      ExperimentConfig cfg =
          ExperimentConfig::from_json_file(params_config);
      cfg.validate();
      DataSet data = prepare_data(cfg);
      ModelConfig mc = cfg.model;
      mc.vocab_size = data.vocab.size();
      mc.validate();
      Rng rng(0);
      DualModel model(mc, rng);
      const std::size_t total = param_count(model.named_params());
      const std::size_t n_spec =
          param_count(model.trainable_params(Pipeline::specialize));
      const std::size_t n_slu =
          param_count(model.trainable_params(Pipeline::slu_finetune));
      const std::size_t n_dual =
          param_count(model.trainable_params(Pipeline::dual));
      if (params_json) {
        json out;
        out["vocab_size"] = data.vocab.size();
        out["model_total"] = total;
        out["trainable"] = {{"specialize", n_spec},
                            {"slu_finetune", n_slu},
                            {"dual", n_dual}};
        out["dual_below_sequential_sum"] = n_dual < n_spec + n_slu;
        std::cout << out.dump(2) << "\n";
      } else {
        std::cout << "vocabulary: " << data.vocab.size() << " tokens\n"
                  << "model total: " << total << " parameters\n"
                  << "trainable by pipeline:\n"
                  << "  specialize    " << n_spec << "\n"
                  << "  slu_finetune  " << n_slu << "\n"
                  << "  dual          " << n_dual << "\n"
                  << "dual " << n_dual << " < " << n_spec + n_slu
                  << " = specialize + slu_finetune: "
                  << (n_dual < n_spec + n_slu ? "yes" : "NO") << "\n";
      }
      return 0;
    }

    if (app.got_subcommand(matrix)) {
      ExperimentConfig base = matrix_flags.resolve();
      set_harness_verbose(!matrix_quiet);
      const fs::path dir = matrix_flags.out_dir(base, "_matrix");
      write_text(dir / "config.json", base.to_json_string());
      MatrixReport rep = run_matrix(base, matrix_seeds, dir);
      if (matrix_json)
        std::cout << rep.to_json_string() << "\n";
      else
        std::cout << rep.table();
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << "\n";
    return 1;
  }
  return 2;  // unreachable with require_subcommand(1)
}

}  // namespace dualslu
