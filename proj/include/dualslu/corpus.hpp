#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dualslu/tensor.hpp"

namespace dualslu {

// --- bracketed annotation format ---------------------------------------------

struct ConceptSegment {
  std::vector<std::string> words;
  std::string label;  // empty for unlabeled spans

  bool labeled() const { return !label.empty(); }
  bool operator==(const ConceptSegment&) const = default;
};

struct AnnotatedTranscript {
  std::vector<ConceptSegment> segments;

  bool operator==(const AnnotatedTranscript&) const = default;
  // Full tagged token stream: words plus "<name>" and ">" markers.
  std::vector<std::string> tokens() const;
  // Spoken words only (what the feature synthesizer sees).
  std::vector<std::string> word_tokens() const;
};

// Canonical, language-independent meaning: ordered (concept, slot values).
struct FrameSlot {
  std::string name;
  std::vector<std::string> values;  // canonical slot names, not surface words

  bool operator==(const FrameSlot&) const = default;
};

struct SemanticFrame {
  std::vector<FrameSlot> slots;

  bool operator==(const SemanticFrame&) const = default;
  bool empty() const { return slots.empty(); }
  std::string canonical() const;  // "c=v1+v2|c2=v3"
};

// --- ontology ----------------------------------------------------------------

struct OntologyLanguage {
  std::string tag;
  std::string profile;       // metric profile this language reports under
  double code_switch = 0.0;  // fraction of values borrowed from the reference
};

struct OntologyConcept {
  std::string name;
  std::vector<std::string> slots;
};

struct Ontology {
  std::vector<OntologyConcept> concepts;
  std::vector<OntologyLanguage> languages;  // languages[0] is the reference
  std::size_t feat_dim = 16;
  std::size_t embedding_dim = 32;
  std::size_t filler_count = 30;
  std::uint64_t lexicon_seed = 977;
  std::uint64_t teacher_seed = 7;

  static Ontology desk_default();
  static Ontology from_json_file(const std::filesystem::path& path);

  void validate() const;
  const OntologyConcept* find_concept(const std::string& name) const;
  const OntologyLanguage* find_language(const std::string& tag) const;
  std::set<std::string> concept_names() const;
};

// --- parsing -----------------------------------------------------------------

// Strict grammar: SEQ := (WORD | "<"NAME">" WORD+ ">")*. Violations throw
// AnnotationParseError carrying the 1-based token position.
AnnotatedTranscript parse_annotation(const std::string& text,
                                     const Ontology& ontology);

std::string serialize_annotation(const AnnotatedTranscript& t);

// Decoder-output parsing: never throws on structure. Unclosed spans are
// closed at the end, stray closers dropped, empty spans removed, tags
// inside a span close it first; every repair is counted.
struct TolerantParse {
  AnnotatedTranscript transcript;
  std::size_t repairs = 0;
};
TolerantParse parse_annotation_tolerant(const std::vector<std::string>& tokens,
                                        const Ontology& ontology);

// Canonical frame of a generated transcript: reverse lexicon lookup of
// each labeled span. Only valid for surfaces the ontology can produce.
SemanticFrame frame_of_transcript(const AnnotatedTranscript& t,
                                  const Ontology& ontology,
                                  const std::string& lang);

// --- synthetic corpus --------------------------------------------------------

struct Utterance {
  std::string id;
  std::string lang;
  AnnotatedTranscript transcript;
  SemanticFrame frame;
  Tensor features;           // [T, feat_dim]
  Tensor teacher_embedding;  // [embedding_dim], unit norm, frozen
};

// The fixed acoustic identity of a token in a language.
std::vector<double> token_prototype(const std::string& lang,
                                    const std::string& token,
                                    std::size_t feat_dim);

// Each word emits 2-4 frames of its prototype plus Gaussian noise. The
// seed drives frame counts and noise only; prototypes are global.
Tensor synthesize_features(const std::vector<std::string>& words,
                           const std::string& lang, std::uint64_t seed,
                           std::size_t feat_dim, double noise_sigma = 0.1);

// Frozen deterministic stand-in for a multilingual sentence encoder:
// the same canonical frame maps to the same unit vector in any language.
Tensor teacher_embed(const SemanticFrame& frame, std::size_t d_e,
                     std::uint64_t seed);

// Surface realizations of every (concept, slot) plus filler words for one
// language. origin_lang records whose acoustics a borrowed word keeps.
struct LexiconEntry {
  std::vector<std::string> words;
  std::string origin_lang;
};

struct Lexicon {
  std::string lang;
  std::map<std::pair<std::string, std::string>, LexiconEntry> values;
  std::vector<std::string> fillers;

  std::set<std::string> value_word_set() const;
};

// overlap is the probability that a (concept, slot) surface is shared
// verbatim with the reference language; the language's code_switch rate
// borrows additionally even at overlap 0.
Lexicon derive_lexicon(const Ontology& ontology, const std::string& lang,
                       double overlap);

std::vector<Utterance> generate_corpus(const Ontology& ontology,
                                       const std::string& lang, std::size_t n,
                                       std::uint64_t seed, double overlap);

// --- vocabulary --------------------------------------------------------------

struct Vocabulary {
  std::vector<std::string> id2tok;  // [0] is always the blank
  std::map<std::string, std::size_t> tok2id;
  std::size_t blank_id = 0;

  static constexpr const char* kBlankToken = "<blank>";

  std::size_t size() const { return id2tok.size(); }
  std::size_t id_of(const std::string& token) const;
  const std::string& token_of(std::size_t id) const;
  std::vector<std::size_t> encode(const std::vector<std::string>& toks) const;
  std::vector<std::string> decode(const std::vector<std::size_t>& ids) const;
  std::uint64_t fingerprint() const;
};

Vocabulary build_vocabulary(
    const std::vector<const std::vector<Utterance>*>& corpora,
    const Ontology& ontology);

// --- corpus files ------------------------------------------------------------

// One JSON object per line: {id, lang, annotated_text, frame, feature_ref};
// features live in a binary sidecar next to the .jsonl (same stem, .feat):
// per record a 16-byte header (magic "FEAT", u32 T, u32 F, u32 zero), then
// T*F little-endian doubles.
void save_corpus(const std::vector<Utterance>& utts,
                 const std::filesystem::path& jsonl_path);

std::vector<Utterance> load_corpus(const std::filesystem::path& jsonl_path,
                                   const Ontology& ontology);

}  // namespace dualslu
