#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "dualslu/corpus.hpp"
#include "dualslu/tensor.hpp"

namespace dualslu {

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t reference_length = 0;

  std::size_t total() const { return substitutions + deletions + insertions; }
  // (S+D+I)/N; NaN when the reference is empty (counts still meaningful).
  double rate() const {
    if (reference_length == 0)
      return std::numeric_limits<double>::quiet_NaN();
    return double(total()) / double(reference_length);
  }
  EditCounts& operator+=(const EditCounts& o) {
    substitutions += o.substitutions;
    deletions += o.deletions;
    insertions += o.insertions;
    reference_length += o.reference_length;
    return *this;
  }
  bool operator==(const EditCounts&) const = default;
};

// Minimal-cost alignment; among equal-cost scripts the one with the most
// substitutions wins (then deletions and insertions are forced: every
// script satisfies S+D+I = cost and D-I = |ref|-|hyp|). This makes counts
// deterministic and swap-symmetric (S preserved, D and I exchanged).
template <class Sym>
EditCounts levenshtein_align(const std::vector<Sym>& ref,
                             const std::vector<Sym>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  // Per cell: (cost, substitutions of the preferred script).
  std::vector<std::size_t> cost((n + 1) * (m + 1));
  std::vector<std::size_t> subs((n + 1) * (m + 1));
  auto at = [m](std::size_t i, std::size_t j) { return i * (m + 1) + j; };
  for (std::size_t i = 0; i <= n; ++i) cost[at(i, 0)] = i;
  for (std::size_t j = 0; j <= m; ++j) cost[at(0, j)] = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      const bool eq = ref[i - 1] == hyp[j - 1];
      std::size_t c = cost[at(i - 1, j - 1)] + (eq ? 0 : 1);
      std::size_t s = subs[at(i - 1, j - 1)] + (eq ? 0 : 1);
      const std::size_t del_c = cost[at(i - 1, j)] + 1;
      const std::size_t del_s = subs[at(i - 1, j)];
      const std::size_t ins_c = cost[at(i, j - 1)] + 1;
      const std::size_t ins_s = subs[at(i, j - 1)];
      if (del_c < c || (del_c == c && del_s > s)) c = del_c, s = del_s;
      if (ins_c < c || (ins_c == c && ins_s > s)) c = ins_c, s = ins_s;
      cost[at(i, j)] = c;
      subs[at(i, j)] = s;
    }
  EditCounts out;
  out.reference_length = n;
  const std::size_t c = cost[at(n, m)];
  out.substitutions = subs[at(n, m)];
  out.deletions = (c - out.substitutions + n - m) / 2;
  out.insertions = (c - out.substitutions) - out.deletions;
  return out;
}

// Best-path decoding: per-frame argmax, collapse adjacent repeats, drop
// blanks. Works on values only; no gradient involvement.
std::vector<std::size_t> greedy_ctc_decode(const Tensor& log_probs,
                                           std::size_t blank);

// Ordered concept names of the labeled segments.
std::vector<std::string> extract_concepts(const AnnotatedTranscript& t);

// Ordered (concept, space-joined value words) pairs; each pair is one
// alignment symbol.
std::vector<std::pair<std::string, std::string>> extract_concept_values(
    const AnnotatedTranscript& t);

struct RatedCounts {
  double rate = 0.0;
  EditCounts counts;
};

// Corpus-pooled rates: edit counts are summed over utterance pairs before
// dividing by the total reference length. Length mismatch → PairingError.
RatedCounts concept_error_rate(const std::vector<AnnotatedTranscript>& refs,
                               const std::vector<AnnotatedTranscript>& hyps);
RatedCounts concept_value_error_rate(
    const std::vector<AnnotatedTranscript>& refs,
    const std::vector<AnnotatedTranscript>& hyps);
// Spoken words only (concept markers stripped).
RatedCounts word_error_rate(const std::vector<AnnotatedTranscript>& refs,
                            const std::vector<AnnotatedTranscript>& hyps);

// Reporting thresholds, all in percentage points (as rates appear in
// result tables).
struct DatasetProfile {
  std::string name;
  double cer_threshold_pct = 0.4;
  double run_variation_pct = 0.3;

  static DatasetProfile media();      // 0.4
  static DatasetProfile portmedia();  // 0.7
  static DatasetProfile taric();      // 1.0
  static DatasetProfile by_name(const std::string& name);
};

struct SignificanceVerdict {
  double gap_pct = 0.0;
  bool relevant = false;          // gap at or above the dataset threshold
  bool within_variation = false;  // gap attributable to run-to-run noise
};

// cer_a_pct and cer_b_pct are percentages (e.g., 18.5 for 18.5% CER).
SignificanceVerdict significance_check(const DatasetProfile& profile,
                                       double cer_a_pct, double cer_b_pct);

struct EvalReport {
  RatedCounts cer;
  RatedCounts cver;
  RatedCounts wer;
  std::size_t utterances = 0;
  std::size_t repairs = 0;  // tolerant-parse fixups across the corpus
};

EvalReport evaluate_transcripts(const std::vector<AnnotatedTranscript>& refs,
                                const std::vector<AnnotatedTranscript>& hyps,
                                std::size_t repairs = 0);

std::string report_json(const EvalReport& report);
std::string report_table(const EvalReport& report);

}  // namespace dualslu
