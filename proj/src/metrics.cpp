#include "dualslu/metrics.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

namespace dualslu {

std::vector<std::size_t> greedy_ctc_decode(const Tensor& log_probs,
                                           std::size_t blank) {
  if (log_probs->shape.size() != 2)
    throw DimensionError("greedy_ctc_decode: expected [T,V] log-probs");
  const std::size_t T = log_probs->shape[0];
  const std::size_t V = log_probs->shape[1];
  if (blank >= V)
    throw ContractError("greedy_ctc_decode: blank id out of range");
  std::vector<std::size_t> out;
  std::size_t prev = V;  // sentinel: nothing emitted yet
  for (std::size_t t = 0; t < T; ++t) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < V; ++k)
      if (log_probs->values[t * V + k] > log_probs->values[t * V + best])
        best = k;
    if (best != prev && best != blank) out.push_back(best);
    prev = best;
  }
  return out;
}

std::vector<std::string> extract_concepts(const AnnotatedTranscript& t) {
  std::vector<std::string> out;
  for (const auto& seg : t.segments)
    if (seg.labeled()) out.push_back(seg.label);
  return out;
}

std::vector<std::pair<std::string, std::string>> extract_concept_values(
    const AnnotatedTranscript& t) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& seg : t.segments) {
    if (!seg.labeled()) continue;
    std::string value;
    for (std::size_t i = 0; i < seg.words.size(); ++i) {
      if (i) value += " ";
      value += seg.words[i];
    }
    out.emplace_back(seg.label, value);
  }
  return out;
}

namespace {

template <class Extract>
RatedCounts pooled_rate(const std::vector<AnnotatedTranscript>& refs,
                        const std::vector<AnnotatedTranscript>& hyps,
                        Extract extract, const char* what) {
  if (refs.size() != hyps.size())
    throw PairingError(std::string(what) + ": " + std::to_string(refs.size()) +
                       " references vs " + std::to_string(hyps.size()) +
                       " hypotheses");
  RatedCounts out;
  for (std::size_t i = 0; i < refs.size(); ++i)
    out.counts += levenshtein_align(extract(refs[i]), extract(hyps[i]));
  out.rate = out.counts.rate();
  return out;
}

}  // namespace

RatedCounts concept_error_rate(const std::vector<AnnotatedTranscript>& refs,
                               const std::vector<AnnotatedTranscript>& hyps) {
  return pooled_rate(refs, hyps, extract_concepts, "concept_error_rate");
}

RatedCounts concept_value_error_rate(
    const std::vector<AnnotatedTranscript>& refs,
    const std::vector<AnnotatedTranscript>& hyps) {
  return pooled_rate(refs, hyps, extract_concept_values,
                     "concept_value_error_rate");
}

RatedCounts word_error_rate(const std::vector<AnnotatedTranscript>& refs,
                            const std::vector<AnnotatedTranscript>& hyps) {
  return pooled_rate(
      refs, hyps, [](const AnnotatedTranscript& t) { return t.word_tokens(); },
      "word_error_rate");
}

DatasetProfile DatasetProfile::media() { return {"media", 0.4, 0.3}; }
DatasetProfile DatasetProfile::portmedia() { return {"portmedia", 0.7, 0.3}; }
DatasetProfile DatasetProfile::taric() { return {"taric", 1.0, 0.3}; }

DatasetProfile DatasetProfile::by_name(const std::string& name) {
  if (name == "media") return media();
  if (name == "portmedia") return portmedia();
  if (name == "taric") return taric();
  throw ConfigError("unknown dataset profile '" + name + "'");
}

SignificanceVerdict significance_check(const DatasetProfile& profile,
                                       double cer_a_pct, double cer_b_pct) {
  if (!std::isfinite(cer_a_pct) || !std::isfinite(cer_b_pct))
    throw ContractError("significance_check: rates must be finite");
  SignificanceVerdict v;
  v.gap_pct = std::abs(cer_a_pct - cer_b_pct);
  v.relevant = v.gap_pct >= profile.cer_threshold_pct - 1e-12;
  v.within_variation = v.gap_pct <= profile.run_variation_pct + 1e-12;
  return v;
}

EvalReport evaluate_transcripts(const std::vector<AnnotatedTranscript>& refs,
                                const std::vector<AnnotatedTranscript>& hyps,
                                std::size_t repairs) {
  EvalReport r;
  r.cer = concept_error_rate(refs, hyps);
  r.cver = concept_value_error_rate(refs, hyps);
  r.wer = word_error_rate(refs, hyps);
  r.utterances = refs.size();
  r.repairs = repairs;
  return r;
}

namespace {

nlohmann::json counts_json(const RatedCounts& rc) {
  nlohmann::json j{{"substitutions", rc.counts.substitutions},
                   {"deletions", rc.counts.deletions},
                   {"insertions", rc.counts.insertions},
                   {"reference_length", rc.counts.reference_length}};
  if (std::isnan(rc.rate))
    j["rate"] = nullptr;
  else
    j["rate"] = rc.rate;
  return j;
}

}  // namespace

std::string report_json(const EvalReport& report) {
  nlohmann::json j{{"cer", counts_json(report.cer)},
                   {"cver", counts_json(report.cver)},
                   {"wer", counts_json(report.wer)},
                   {"utterances", report.utterances},
                   {"repairs", report.repairs}};
  return j.dump();
}

std::string report_table(const EvalReport& report) {
  std::ostringstream out;
  out << "metric   rate%      S      D      I      N\n";
  auto row = [&](const char* name, const RatedCounts& rc) {
    char rate[32];
    if (std::isnan(rc.rate))
      std::snprintf(rate, sizeof rate, "%8s", "n/a");
    else
      std::snprintf(rate, sizeof rate, "%8.2f", 100.0 * rc.rate);
    out << name << rate;
    char buf[64];
    std::snprintf(buf, sizeof buf, " %6zu %6zu %6zu %6zu\n",
                  rc.counts.substitutions, rc.counts.deletions,
                  rc.counts.insertions, rc.counts.reference_length);
    out << buf;
  };
  row("CER   ", report.cer);
  row("CVER  ", report.cver);
  row("WER   ", report.wer);
  out << "utterances " << report.utterances << ", repairs " << report.repairs
      << "\n";
  return out.str();
}

}  // namespace dualslu
