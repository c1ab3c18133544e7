// Python surface: thin wrappers over the C++ core. Heavy calls release
// the GIL; structured results come back as plain dicts/lists so callers
// never hold C++ objects across the boundary.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dualslu/harness.hpp"
#include "dualslu/rng.hpp"

namespace py = pybind11;
using namespace dualslu;

namespace {

Ontology ontology_from(const std::optional<std::string>& path) {
  return path ? Ontology::from_json_file(*path) : Ontology::desk_default();
}

Tensor log_prob_tensor(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw EmptySequenceError("log_probs must have frames");
  const std::size_t V = rows.front().size();
  std::vector<double> flat;
  flat.reserve(rows.size() * V);
  for (const auto& r : rows) {
    if (r.size() != V)
      throw DimensionError("log_probs rows must have equal width");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return make_tensor({rows.size(), V}, std::move(flat));
}

using Segments =
    std::vector<std::pair<std::optional<std::string>, std::vector<std::string>>>;

Segments segments_of(const AnnotatedTranscript& t) {
  Segments out;
  for (const auto& seg : t.segments) {
    std::optional<std::string> label;
    if (!seg.label.empty()) label = seg.label;
    out.emplace_back(label, seg.words);
  }
  return out;
}

AnnotatedTranscript transcript_of(const Segments& segments) {
  AnnotatedTranscript t;
  for (const auto& [label, words] : segments) {
    ConceptSegment seg;
    if (label) seg.label = *label;
    seg.words = words;
    t.segments.push_back(std::move(seg));
  }
  return t;
}

py::dict counts_dict(const EditCounts& c) {
  py::dict d;
  d["substitutions"] = c.substitutions;
  d["deletions"] = c.deletions;
  d["insertions"] = c.insertions;
  d["reference_length"] = c.reference_length;
  d["total"] = c.total();
  return d;
}

py::object json_loads(const std::string& text) {
  return py::module_::import("json").attr("loads")(py::str(text));
}

std::vector<AnnotatedTranscript> parse_all(
    const std::vector<std::string>& texts, const Ontology& ont) {
  std::vector<AnnotatedTranscript> out;
  out.reserve(texts.size());
  for (const auto& s : texts) out.push_back(parse_annotation(s, ont));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() =
      "Dual-task speech model testbed: bracketed-annotation parsing, CTC "
      "and cosine alignment losses, synthetic multilingual corpora, and "
      "the training harness.";
  m.attr("__version__") = "0.1.0";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const AnnotationParseError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.def(
      "parse",
      [](const std::string& text, const std::optional<std::string>& ontology) {
        return segments_of(parse_annotation(text, ontology_from(ontology)));
      },
      py::arg("text"), py::arg("ontology") = py::none(),
      "Parse a bracketed annotation into (concept, words) segments; the "
      "concept is None for unlabeled spans. Raises ValueError on malformed "
      "input.");

  m.def(
      "serialize",
      [](const Segments& segments) {
        return serialize_annotation(transcript_of(segments));
      },
      py::arg("segments"),
      "Inverse of parse(); returns the canonical bracketed text.");

  m.def(
      "levenshtein",
      [](const std::vector<std::string>& ref,
         const std::vector<std::string>& hyp) {
        const auto c = levenshtein_align(ref, hyp);
        auto d = counts_dict(c);
        d["rate"] = c.reference_length == 0 ? py::object(py::none())
                                            : py::cast(c.rate());
        return d;
      },
      py::arg("ref"), py::arg("hyp"),
      "Minimum-edit alignment counts; ties prefer substitutions.");

  m.def(
      "score",
      [](const std::vector<std::string>& refs,
         const std::vector<std::string>& hyps,
         const std::optional<std::string>& ontology, bool tolerant) {
        const auto ont = ontology_from(ontology);
        const auto ref_ts = parse_all(refs, ont);
        std::vector<AnnotatedTranscript> hyp_ts;
        std::size_t repairs = 0;
        if (tolerant) {
          for (const auto& h : hyps) {
            std::istringstream in(h);
            std::vector<std::string> toks;
            for (std::string tok; in >> tok;) toks.push_back(tok);
            auto rep = parse_annotation_tolerant(toks, ont);
            repairs += rep.repairs;
            hyp_ts.push_back(std::move(rep.transcript));
          }
        } else {
          hyp_ts = parse_all(hyps, ont);
        }
        const auto report = evaluate_transcripts(ref_ts, hyp_ts, repairs);
        return json_loads(report_json(report));
      },
      py::arg("refs"), py::arg("hyps"), py::arg("ontology") = py::none(),
      py::arg("tolerant") = true,
      "CER/CVER/WER between reference and hypothesis annotation strings. "
      "Tolerant mode repairs malformed hypotheses and counts the repairs.");

  m.def(
      "significance",
      [](const std::string& profile, double cer_a_pct, double cer_b_pct) {
        const auto prof = DatasetProfile::by_name(profile);
        const auto v = significance_check(prof, cer_a_pct, cer_b_pct);
        py::dict d;
        d["gap_pct"] = v.gap_pct;
        d["relevant"] = v.relevant;
        d["within_variation"] = v.within_variation;
        d["cer_threshold_pct"] = prof.cer_threshold_pct;
        d["run_variation_pct"] = prof.run_variation_pct;
        return d;
      },
      py::arg("profile"), py::arg("cer_a_pct"), py::arg("cer_b_pct"),
      "Judge a CER gap (percent domain) against a dataset profile's "
      "relevance and run-variation thresholds.");

  m.def(
      "ctc_loss",
      [](const std::vector<std::vector<double>>& log_probs,
         const std::vector<std::size_t>& target, std::size_t blank) {
        Tape t;
        return ctc_loss(t, log_prob_tensor(log_probs), target, blank)
            ->scalar();
      },
      py::arg("log_probs"), py::arg("target"), py::arg("blank") = 0,
      "Negative log-likelihood of the target under all CTC alignments. "
      "log_probs is [T][V], rows already log-normalized.");

  m.def(
      "ctc_grad",
      [](const std::vector<std::vector<double>>& log_probs,
         const std::vector<std::size_t>& target, std::size_t blank) {
        Tape t;
        auto lp = log_prob_tensor(log_probs);
        lp->requires_grad = true;
        auto loss = ctc_loss(t, lp, target, blank);
        t.backward(loss);
        std::vector<std::vector<double>> grad(log_probs.size());
        const std::size_t V = log_probs.front().size();
        for (std::size_t i = 0; i < grad.size(); ++i)
          grad[i].assign(lp->grad.begin() + i * V,
                         lp->grad.begin() + (i + 1) * V);
        return std::make_pair(loss->scalar(), grad);
      },
      py::arg("log_probs"), py::arg("target"), py::arg("blank") = 0,
      "(loss, d loss / d log_probs) via the reverse-mode tape.");

  m.def(
      "cosine_loss",
      [](const std::vector<double>& student,
         const std::vector<double>& teacher) {
        Tape t;
        auto s = make_tensor({student.size()}, student);
        auto e = make_tensor({teacher.size()}, teacher);
        return cosine_alignment_loss(t, s, e)->scalar();
      },
      py::arg("student"), py::arg("teacher"),
      "1 - cos(student, teacher); the student is normalized internally.");

  m.def(
      "generate_corpus",
      [](const std::string& lang, std::size_t n, std::uint64_t seed,
         double overlap, const std::optional<std::string>& ontology) {
        const auto ont = ontology_from(ontology);
        std::vector<std::string> out;
        {
          py::gil_scoped_release release;
          const auto utts = dualslu::generate_corpus(ont, lang, n, seed,
                                                     overlap);
          out.reserve(utts.size());
          for (const auto& u : utts)
            out.push_back(serialize_annotation(u.transcript));
        }
        return out;
      },
      py::arg("lang"), py::arg("n"), py::arg("seed") = 42,
      py::arg("overlap") = 0.0, py::arg("ontology") = py::none(),
      "Serialized transcripts of a synthetic split. overlap is the "
      "probability a concept surface is borrowed from the reference "
      "language verbatim.");

  m.def(
      "generate_dataset",
      [](const std::string& config, const std::string& out_dir) {
        py::gil_scoped_release release;
        const auto cfg = ExperimentConfig::from_json_string(config);
        const auto data = prepare_data(cfg);
        write_dataset(data, out_dir);
      },
      py::arg("config"), py::arg("out_dir"),
      "Write every split the config needs as <lang>_<split>.jsonl plus "
      "feature sidecars.");

  m.def(
      "run_experiment",
      [](const std::string& config,
         const std::optional<std::string>& out_dir,
         const std::optional<std::string>& resume_from) {
        std::string report;
        {
          py::gil_scoped_release release;
          const auto cfg = ExperimentConfig::from_json_string(config);
          const auto data = prepare_data(cfg);
          std::optional<std::filesystem::path> dir, resume;
          if (out_dir) dir = *out_dir;
          if (resume_from) resume = *resume_from;
          report = run_training(cfg, data, dir, resume).record
                       .to_json_string();
        }
        return json_loads(report);
      },
      py::arg("config"), py::arg("out_dir") = py::none(),
      py::arg("resume_from") = py::none(),
      "Train the configured pipeline; returns the run record (the same "
      "JSON written to report.json when out_dir is given).");

  m.def(
      "sweep_lambda",
      [](const std::string& config,
         const std::optional<std::string>& out_dir) {
        std::string result;
        {
          py::gil_scoped_release release;
          const auto cfg = ExperimentConfig::from_json_string(config);
          const auto data = prepare_data(cfg);
          std::optional<std::filesystem::path> dir;
          if (out_dir) dir = *out_dir;
          result = dualslu::sweep_lambda(cfg, data, dir).to_json_string();
        }
        return json_loads(result);
      },
      py::arg("config"), py::arg("out_dir") = py::none(),
      "Rerun the dual pipeline once per grid value (same seed, lambda "
      "isolated); returns the trial table and the winning run.");

  m.def(
      "run_matrix",
      [](const std::string& config, std::size_t seeds,
         const std::optional<std::string>& out_dir) {
        std::string result;
        {
          py::gil_scoped_release release;
          const auto base = ExperimentConfig::from_json_string(config);
          std::optional<std::filesystem::path> dir;
          if (out_dir) dir = *out_dir;
          result = dualslu::run_matrix(base, seeds, dir).to_json_string();
        }
        return json_loads(result);
      },
      py::arg("config"), py::arg("seeds") = 5,
      py::arg("out_dir") = py::none(),
      "Full regime grid (baselines, chained, dual, close-pair, "
      "multilingual) with significance verdicts and the seed-averaged "
      "trend.");

  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& config,
         const std::string& split, const std::optional<std::string>& language) {
        std::string report;
        {
          py::gil_scoped_release release;
          const auto cfg = ExperimentConfig::from_json_string(config);
          const auto ckpt = load_checkpoint(checkpoint);
          const auto data = prepare_data(cfg);
          const auto& lang =
              data.language(language ? *language : cfg.target_language);
          const std::vector<Utterance>* utts = &lang.test;
          if (split == "train")
            utts = &lang.train;
          else if (split == "dev")
            utts = &lang.dev;
          else if (split != "test")
            throw ConfigError("split must be train, dev, or test");
          report = report_json(evaluate_model(ckpt, data.ontology, *utts));
        }
        return json_loads(report);
      },
      py::arg("checkpoint"), py::arg("config"), py::arg("split") = "test",
      py::arg("language") = py::none(),
      "Decode one split with a checkpoint's parameters and report "
      "CER/CVER/WER.");

  m.def(
      "param_counts",
      [](const std::string& config) {
        const auto cfg = ExperimentConfig::from_json_string(config);
        const auto data = prepare_data(cfg);
        ModelConfig mc = cfg.model;
        mc.vocab_size = data.vocab.size();
        Rng rng(0);
        const DualModel model(mc, rng);
        py::dict d;
        d["vocab"] = data.vocab.size();
        d["total"] = param_count(model.named_params());
        d["specialize"] =
            param_count(model.trainable_params(Pipeline::specialize));
        d["slu_finetune"] =
            param_count(model.trainable_params(Pipeline::slu_finetune));
        d["dual"] = param_count(model.trainable_params(Pipeline::dual));
        return d;
      },
      py::arg("config"),
      "Trainable parameter counts per pipeline for a config; dual stays "
      "below the specialize + slu_finetune sum.");

  m.def("set_verbose", &set_harness_verbose, py::arg("enabled"),
        "Per-epoch progress lines on stderr during training.");
}
