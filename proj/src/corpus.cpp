#include "dualslu/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace dualslu {

namespace {

using nlohmann::json;

std::uint64_t seed_of(std::uint64_t base, const std::string& stream) {
  return hash_combine(base, fnv1a(stream));
}

std::uint64_t seed_of(std::uint64_t base, const std::string& stream,
                      std::uint64_t idx) {
  return hash_combine(seed_of(base, stream), idx);
}

// Disjoint consonant inventories keep the languages' word forms
// collision-free by construction.
const std::map<std::string, std::string>& consonant_sets() {
  static const std::map<std::string, std::string> sets{
      {"fr", "bdflm"}, {"it", "nprst"}, {"tu", "vzgkj"}};
  return sets;
}

std::string consonants_for(const std::string& lang) {
  auto it = consonant_sets().find(lang);
  if (it != consonant_sets().end()) return it->second;
  // Unknown tags get an inventory carved out of the remaining letters.
  static const std::string extra = "chqwx";
  std::string set;
  Rng rng(seed_of(41, lang));
  for (int i = 0; i < 5; ++i) set += extra[rng.next_below(extra.size())];
  return set;
}

std::string make_word(Rng& rng, const std::string& consonants) {
  static const std::string vowels = "aeiou";
  const std::size_t syllables = 2 + rng.next_below(2);
  std::string w;
  for (std::size_t s = 0; s < syllables; ++s) {
    w += consonants[rng.next_below(consonants.size())];
    w += vowels[rng.next_below(vowels.size())];
  }
  return w;
}

std::string unique_word(Rng& rng, const std::string& consonants,
                        std::set<std::string>& used) {
  std::string w = make_word(rng, consonants);
  while (used.count(w)) {
    w += consonants[rng.next_below(consonants.size())];
    w += "aeiou"[rng.next_below(5)];
  }
  used.insert(w);
  return w;
}

// Deterministic surface table of a language before any borrowing: every
// (concept, slot) gets 1-3 unique words, then the filler inventory.
struct NativeSurfaces {
  std::map<std::pair<std::string, std::string>, std::vector<std::string>>
      values;
  std::vector<std::string> fillers;
};

NativeSurfaces native_surfaces(const Ontology& ont, const std::string& lang) {
  NativeSurfaces out;
  const std::string consonants = consonants_for(lang);
  std::set<std::string> used;
  for (const auto& cpt : ont.concepts) {
    for (const auto& slot : cpt.slots) {
      Rng rng(seed_of(ont.lexicon_seed,
                      "surface/" + lang + "/" + cpt.name + "/" + slot));
      const std::size_t n = 1 + rng.next_below(3);
      std::vector<std::string> words;
      for (std::size_t i = 0; i < n; ++i)
        words.push_back(unique_word(rng, consonants, used));
      out.values[{cpt.name, slot}] = std::move(words);
    }
  }
  Rng frng(seed_of(ont.lexicon_seed, "fillers/" + lang));
  for (std::size_t i = 0; i < ont.filler_count; ++i)
    out.fillers.push_back(unique_word(frng, consonants, used));
  return out;
}

std::vector<double> gaussian_values(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.gaussian();
  return v;
}

void normalize_in_place(std::vector<double>& v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double n = std::sqrt(sq);
  if (n < 1e-12) return;
  for (double& x : v) x /= n;
}

Tensor synth_with_origins(const std::vector<std::string>& words,
                          const std::vector<std::string>& origins,
                          std::uint64_t seed, std::size_t feat_dim,
                          double noise_sigma) {
  if (words.empty())
    throw EmptySequenceError("synthesize_features: no tokens");
  Rng rng(seed_of(seed, "emission"));
  std::vector<double> rows;
  std::size_t T = 0;
  for (std::size_t w = 0; w < words.size(); ++w) {
    const auto proto = token_prototype(origins[w], words[w], feat_dim);
    const std::size_t frames = 2 + rng.next_below(3);
    for (std::size_t f = 0; f < frames; ++f, ++T)
      for (std::size_t j = 0; j < feat_dim; ++j)
        rows.push_back(proto[j] + noise_sigma * rng.gaussian());
  }
  return make_tensor({T, feat_dim}, std::move(rows));
}

}  // namespace

// --- ontology ----------------------------------------------------------------

Ontology Ontology::desk_default() {
  Ontology ont;
  ont.languages = {{"fr", "media", 0.0},
                   {"it", "portmedia", 0.0},
                   {"tu", "taric", 0.3}};
  ont.concepts = {
      {"reservation", {"request", "confirm", "cancel", "modify"}},
      {"room-number", {"one", "two", "three", "four"}},
      {"room-type", {"single", "double", "suite", "twin"}},
      {"checkin-day", {"monday", "wednesday", "friday", "sunday"}},
      {"checkout-day", {"tuesday", "thursday", "saturday", "today"}},
      {"guest-count", {"solo", "couple", "family", "group"}},
      {"price-range", {"budget", "standard", "premium", "luxury"}},
      {"hotel-name", {"central", "station", "harbor", "garden"}},
      {"city", {"north", "south", "east", "west"}},
      {"meal-plan", {"none", "breakfast", "half", "full"}},
      {"payment-method", {"cash", "card", "transfer", "voucher"}},
      {"duration", {"night", "weekend", "week", "month"}},
      {"floor-level", {"ground", "low", "high", "top"}},
      {"amenity", {"parking", "pool", "wifi", "spa"}},
      {"confirmation", {"yes", "no", "later", "unsure"}},
  };
  return ont;
}

void Ontology::validate() const {
  if (concepts.empty()) throw ConfigError("ontology: no concepts");
  if (languages.empty()) throw ConfigError("ontology: no languages");
  if (feat_dim == 0 || embedding_dim == 0 || filler_count == 0)
    throw ConfigError("ontology: dimensions must be positive");
  std::set<std::string> names;
  for (const auto& c : concepts) {
    if (c.name.empty() || c.name == "blank")
      throw ConfigError("ontology: bad concept name '" + c.name + "'");
    if (c.name.find_first_of("<> \t") != std::string::npos)
      throw ConfigError("ontology: concept name '" + c.name +
                        "' contains reserved characters");
    if (!names.insert(c.name).second)
      throw ConfigError("ontology: duplicate concept '" + c.name + "'");
    if (c.slots.empty())
      throw ConfigError("ontology: concept '" + c.name + "' has no slots");
    std::set<std::string> slots(c.slots.begin(), c.slots.end());
    if (slots.size() != c.slots.size())
      throw ConfigError("ontology: duplicate slot in '" + c.name + "'");
  }
  std::set<std::string> tags;
  for (const auto& l : languages) {
    if (l.tag.empty()) throw ConfigError("ontology: empty language tag");
    if (!tags.insert(l.tag).second)
      throw ConfigError("ontology: duplicate language '" + l.tag + "'");
    if (l.code_switch < 0.0 || l.code_switch > 1.0)
      throw ConfigError("ontology: code_switch outside [0,1]");
  }
}

const OntologyConcept* Ontology::find_concept(const std::string& name) const {
  for (const auto& c : concepts)
    if (c.name == name) return &c;
  return nullptr;
}

const OntologyLanguage* Ontology::find_language(const std::string& tag) const {
  for (const auto& l : languages)
    if (l.tag == tag) return &l;
  return nullptr;
}

std::set<std::string> Ontology::concept_names() const {
  std::set<std::string> out;
  for (const auto& c : concepts) out.insert(c.name);
  return out;
}

Ontology Ontology::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open ontology file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("ontology " + path.string() + ": " + e.what());
  }
  Ontology ont;
  ont.feat_dim = j.value("feat_dim", ont.feat_dim);
  ont.embedding_dim = j.value("embedding_dim", ont.embedding_dim);
  ont.filler_count = j.value("filler_count", ont.filler_count);
  ont.lexicon_seed = j.value("lexicon_seed", ont.lexicon_seed);
  ont.teacher_seed = j.value("teacher_seed", ont.teacher_seed);
  if (!j.contains("languages") || !j.contains("concepts"))
    throw ConfigError("ontology: 'languages' and 'concepts' are required");
  for (const auto& l : j.at("languages")) {
    OntologyLanguage lang;
    lang.tag = l.at("tag").get<std::string>();
    lang.profile = l.value("profile", std::string{});
    lang.code_switch = l.value("code_switch", 0.0);
    ont.languages.push_back(std::move(lang));
  }
  for (const auto& c : j.at("concepts")) {
    OntologyConcept cpt;
    cpt.name = c.at("name").get<std::string>();
    for (const auto& s : c.at("slots"))
      cpt.slots.push_back(s.get<std::string>());
    ont.concepts.push_back(std::move(cpt));
  }
  ont.validate();
  return ont;
}

// --- features and teacher ----------------------------------------------------

std::vector<double> token_prototype(const std::string& lang,
                                    const std::string& token,
                                    std::size_t feat_dim) {
  auto v = gaussian_values(
      hash_combine(fnv1a("proto/" + lang), fnv1a(token)), feat_dim);
  normalize_in_place(v);
  return v;
}

Tensor synthesize_features(const std::vector<std::string>& words,
                           const std::string& lang, std::uint64_t seed,
                           std::size_t feat_dim, double noise_sigma) {
  return synth_with_origins(
      words, std::vector<std::string>(words.size(), lang), seed, feat_dim,
      noise_sigma);
}

Tensor teacher_embed(const SemanticFrame& frame, std::size_t d_e,
                     std::uint64_t seed) {
  // Blend of a whole-frame component (order-sensitive) and a bag of
  // (concept, value) atoms (compositional, so unseen frames built from
  // seen atoms stay predictable). Weights keep distinct frames' cosines
  // comfortably below 1.
  auto whole =
      gaussian_values(seed_of(seed, "frame/" + frame.canonical()), d_e);
  normalize_in_place(whole);

  std::vector<double> atoms(d_e, 0.0);
  for (const auto& slot : frame.slots)
    for (const auto& value : slot.values) {
      const auto a = gaussian_values(
          seed_of(seed, "atom/" + slot.name + "=" + value), d_e);
      for (std::size_t j = 0; j < d_e; ++j) atoms[j] += a[j];
    }
  normalize_in_place(atoms);

  // Even energy split: atom overlap alone can push two frames' cosine to
  // at most ~0.5, keeping distinct frames well separated.
  const double wa = std::sqrt(0.5);
  const double wb = std::sqrt(0.5);
  std::vector<double> e(d_e);
  for (std::size_t j = 0; j < d_e; ++j)
    e[j] = wa * whole[j] + wb * atoms[j];
  double sq = 0.0;
  for (double x : e) sq += x * x;
  if (std::sqrt(sq) < 1e-9) e = whole;  // blend collapsed, keep the hash part
  normalize_in_place(e);
  return make_tensor({d_e}, std::move(e), false);
}

// --- lexicon and generation ---------------------------------------------------

std::set<std::string> Lexicon::value_word_set() const {
  std::set<std::string> out;
  for (const auto& [key, entry] : values)
    out.insert(entry.words.begin(), entry.words.end());
  return out;
}

Lexicon derive_lexicon(const Ontology& ont, const std::string& lang,
                       double overlap) {
  if (overlap < 0.0 || overlap > 1.0)
    throw ConfigError("derive_lexicon: overlap outside [0,1]");
  const auto* spec = ont.find_language(lang);
  if (!spec) throw ConfigError("derive_lexicon: unknown language '" + lang +
                               "'");
  const std::string& ref = ont.languages.front().tag;

  Lexicon lex;
  lex.lang = lang;
  const auto own = native_surfaces(ont, lang);
  lex.fillers = own.fillers;

  if (lang == ref) {
    for (const auto& [key, words] : own.values)
      lex.values[key] = LexiconEntry{words, ref};
    return lex;
  }

  const auto ref_surfaces = native_surfaces(ont, ref);
  for (const auto& [key, words] : own.values) {
    Rng route(seed_of(ont.lexicon_seed,
                      "route/" + lang + "/" + key.first + "/" + key.second));
    const double u = route.uniform();
    const double v = route.uniform();
    if (u < overlap || v < spec->code_switch)
      lex.values[key] = LexiconEntry{ref_surfaces.values.at(key), ref};
    else
      lex.values[key] = LexiconEntry{words, lang};
  }
  return lex;
}

SemanticFrame frame_of_transcript(const AnnotatedTranscript& t,
                                  const Ontology& ont,
                                  const std::string& lang) {
  const auto own = native_surfaces(ont, lang);
  const auto ref = native_surfaces(ont, ont.languages.front().tag);
  SemanticFrame frame;
  for (const auto& seg : t.segments) {
    if (!seg.labeled()) continue;
    const auto* cpt = ont.find_concept(seg.label);
    if (!cpt)
      throw ConfigError("frame_of_transcript: unknown concept '" +
                        seg.label + "'");
    const std::string* found = nullptr;
    for (const auto& slot : cpt->slots) {
      const std::pair<std::string, std::string> key{seg.label, slot};
      if (own.values.at(key) == seg.words || ref.values.at(key) == seg.words) {
        found = &slot;
        break;
      }
    }
    if (!found)
      throw ConfigError("frame_of_transcript: no slot of '" + seg.label +
                        "' realizes '" + serialize_annotation({{seg}}) + "'");
    frame.slots.push_back({seg.label, {*found}});
  }
  return frame;
}

std::vector<Utterance> generate_corpus(const Ontology& ont,
                                       const std::string& lang, std::size_t n,
                                       std::uint64_t seed, double overlap) {
  ont.validate();
  if (!ont.find_language(lang))
    throw ConfigError("generate_corpus: unknown language '" + lang + "'");
  const auto lex = derive_lexicon(ont, lang, overlap);

  std::vector<Utterance> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    // The frame stream depends only on (seed, index) so equal seeds give
    // parallel corpora across languages.
    Rng frame_rng(seed_of(seed, "frame", i));
    const std::size_t k = 1 + frame_rng.next_below(5);
    std::vector<std::pair<std::string, std::string>> picks(k);
    for (auto& pick : picks) {
      const auto& cpt =
          ont.concepts[frame_rng.next_below(ont.concepts.size())];
      pick = {cpt.name,
              cpt.slots[frame_rng.next_below(cpt.slots.size())]};
    }

    Utterance utt;
    utt.lang = lang;
    {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s-%06zu", lang.c_str(), i);
      utt.id = buf;
    }

    Rng srng(seed_of(seed, "surface/" + lang, i));
    std::vector<std::string> origins;  // per word token, acoustic origin
    auto add_fillers = [&](std::size_t count) {
      if (count == 0) return;
      auto& segs = utt.transcript.segments;
      // Extend a trailing unlabeled segment instead of stacking several,
      // so generated transcripts match the parser's normal form.
      if (segs.empty() || segs.back().labeled())
        segs.push_back(ConceptSegment{});
      for (std::size_t f = 0; f < count; ++f) {
        segs.back().words.push_back(
            lex.fillers[srng.next_below(lex.fillers.size())]);
        origins.push_back(lang);
      }
    };

    add_fillers(srng.next_below(3));
    for (std::size_t j = 0; j < k; ++j) {
      const auto& entry = lex.values.at(picks[j]);
      ConceptSegment seg;
      seg.label = picks[j].first;
      seg.words = entry.words;
      origins.insert(origins.end(), entry.words.size(), entry.origin_lang);
      utt.transcript.segments.push_back(seg);
      utt.frame.slots.push_back({picks[j].first, {picks[j].second}});
      add_fillers(srng.next_below(3));
    }

    // CTC needs enough frames for the tagged token stream; each word
    // yields at least two frames, so pad with fillers until safe.
    auto needed = [&] {
      const auto toks = utt.transcript.tokens();
      std::size_t need = toks.size();
      for (std::size_t m = 1; m < toks.size(); ++m)
        if (toks[m] == toks[m - 1]) ++need;
      return need;
    };
    while (2 * utt.transcript.word_tokens().size() < needed() + 2)
      add_fillers(1 + srng.next_below(2));

    utt.features =
        synth_with_origins(utt.transcript.word_tokens(), origins,
                           seed_of(seed, "feat/" + lang, i), ont.feat_dim,
                           0.1);
    utt.teacher_embedding =
        teacher_embed(utt.frame, ont.embedding_dim, ont.teacher_seed);
    out.push_back(std::move(utt));
  }
  return out;
}

// --- vocabulary --------------------------------------------------------------

std::size_t Vocabulary::id_of(const std::string& token) const {
  auto it = tok2id.find(token);
  if (it == tok2id.end())
    throw ContractError("vocabulary: unknown token '" + token + "'");
  return it->second;
}

const std::string& Vocabulary::token_of(std::size_t id) const {
  if (id >= id2tok.size())
    throw ContractError("vocabulary: id " + std::to_string(id) +
                        " out of range");
  return id2tok[id];
}

std::vector<std::size_t> Vocabulary::encode(
    const std::vector<std::string>& toks) const {
  std::vector<std::size_t> out;
  out.reserve(toks.size());
  for (const auto& t : toks) out.push_back(id_of(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(
    const std::vector<std::size_t>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (std::size_t id : ids) out.push_back(token_of(id));
  return out;
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = fnv1a("vocab");
  for (const auto& t : id2tok) h = hash_combine(h, fnv1a(t));
  return h;
}

Vocabulary build_vocabulary(
    const std::vector<const std::vector<Utterance>*>& corpora,
    const Ontology& ontology) {
  if (corpora.empty())
    throw EmptySequenceError("build_vocabulary: no corpora");
  std::set<std::string> tokens;
  for (const auto* corpus : corpora)
    for (const auto& utt : *corpus)
      for (const auto& w : utt.transcript.word_tokens()) tokens.insert(w);
  for (const auto& c : ontology.concepts) tokens.insert("<" + c.name + ">");
  tokens.insert(">");

  Vocabulary vocab;
  vocab.id2tok.push_back(Vocabulary::kBlankToken);
  for (const auto& t : tokens) vocab.id2tok.push_back(t);
  for (std::size_t i = 0; i < vocab.id2tok.size(); ++i)
    vocab.tok2id[vocab.id2tok[i]] = i;
  vocab.blank_id = 0;
  return vocab;
}

// --- files -------------------------------------------------------------------

namespace {

constexpr std::uint32_t kFeatMagic = 0x54414546;  // "FEAT" little-endian

void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (v >> (8 * i)) & 0xff;
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_corpus(const std::vector<Utterance>& utts,
                 const std::filesystem::path& jsonl_path) {
  std::filesystem::path feat_path = jsonl_path;
  feat_path.replace_extension(".feat");

  std::ofstream feat(feat_path, std::ios::binary);
  std::ofstream meta(jsonl_path);
  if (!feat || !meta)
    throw ConfigError("save_corpus: cannot write " + jsonl_path.string());

  for (const auto& utt : utts) {
    const std::uint64_t offset = static_cast<std::uint64_t>(feat.tellp());
    const std::size_t T = utt.features->shape[0];
    const std::size_t F = utt.features->shape[1];
    put_u32(feat, kFeatMagic);
    put_u32(feat, static_cast<std::uint32_t>(T));
    put_u32(feat, static_cast<std::uint32_t>(F));
    put_u32(feat, 0);
    static_assert(sizeof(double) == 8);
    feat.write(reinterpret_cast<const char*>(utt.features->values.data()),
               static_cast<std::streamsize>(T * F * 8));

    json frame = json::array();
    for (const auto& slot : utt.frame.slots)
      frame.push_back(json::array({slot.name, slot.values}));
    json line{{"id", utt.id},
              {"lang", utt.lang},
              {"annotated_text", serialize_annotation(utt.transcript)},
              {"frame", frame},
              {"feature_ref",
               {{"file", feat_path.filename().string()}, {"offset", offset}}}};
    meta << line.dump() << "\n";
  }
}

std::vector<Utterance> load_corpus(const std::filesystem::path& jsonl_path,
                                   const Ontology& ontology) {
  std::ifstream meta(jsonl_path);
  if (!meta)
    throw ConfigError("load_corpus: cannot open " + jsonl_path.string());

  std::vector<Utterance> out;
  std::string line;
  std::size_t line_no = 0;
  std::ifstream feat;
  std::string feat_name;
  while (std::getline(meta, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ConfigError("load_corpus: " + jsonl_path.string() + ":" +
                        std::to_string(line_no) + ": " + e.what());
    }
    Utterance utt;
    utt.id = j.at("id").get<std::string>();
    utt.lang = j.at("lang").get<std::string>();
    utt.transcript =
        parse_annotation(j.at("annotated_text").get<std::string>(), ontology);
    for (const auto& pair : j.at("frame")) {
      FrameSlot slot;
      slot.name = pair.at(0).get<std::string>();
      for (const auto& v : pair.at(1))
        slot.values.push_back(v.get<std::string>());
      utt.frame.slots.push_back(std::move(slot));
    }

    const auto& ref = j.at("feature_ref");
    const std::string fname = ref.at("file").get<std::string>();
    if (fname != feat_name) {
      feat.close();
      feat.clear();
      feat.open(jsonl_path.parent_path() / fname, std::ios::binary);
      if (!feat)
        throw ConfigError("load_corpus: cannot open feature file " + fname);
      feat_name = fname;
    }
    feat.seekg(static_cast<std::streamoff>(ref.at("offset").get<std::uint64_t>()));
    if (get_u32(feat) != kFeatMagic)
      throw ConfigError("load_corpus: bad feature record magic for " + utt.id);
    const std::uint32_t T = get_u32(feat);
    const std::uint32_t F = get_u32(feat);
    get_u32(feat);  // reserved
    if (T == 0 || F != ontology.feat_dim)
      throw ConfigError("load_corpus: feature shape " + std::to_string(T) +
                        "x" + std::to_string(F) + " invalid for " + utt.id);
    std::vector<double> values(std::size_t(T) * F);
    feat.read(reinterpret_cast<char*>(values.data()),
              static_cast<std::streamsize>(values.size() * 8));
    if (!feat)
      throw ConfigError("load_corpus: truncated features for " + utt.id);
    utt.features = make_tensor({T, F}, std::move(values));
    utt.teacher_embedding =
        teacher_embed(utt.frame, ontology.embedding_dim, ontology.teacher_seed);
    out.push_back(std::move(utt));
  }
  return out;
}

}  // namespace dualslu
