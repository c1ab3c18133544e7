#include <sstream>

#include "dualslu/corpus.hpp"

namespace dualslu {

namespace {

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

bool is_open_tag(const std::string& tok) {
  return tok.size() >= 3 && tok.front() == '<' && tok.back() == '>';
}

std::string tag_name(const std::string& tok) {
  return tok.substr(1, tok.size() - 2);
}

}  // namespace

std::vector<std::string> AnnotatedTranscript::tokens() const {
  std::vector<std::string> out;
  for (const auto& seg : segments) {
    if (seg.labeled()) out.push_back("<" + seg.label + ">");
    out.insert(out.end(), seg.words.begin(), seg.words.end());
    if (seg.labeled()) out.push_back(">");
  }
  return out;
}

std::vector<std::string> AnnotatedTranscript::word_tokens() const {
  std::vector<std::string> out;
  for (const auto& seg : segments)
    out.insert(out.end(), seg.words.begin(), seg.words.end());
  return out;
}

std::string SemanticFrame::canonical() const {
  std::string out;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (i) out += "|";
    out += slots[i].name;
    out += "=";
    for (std::size_t j = 0; j < slots[i].values.size(); ++j) {
      if (j) out += "+";
      out += slots[i].values[j];
    }
  }
  return out;
}

AnnotatedTranscript parse_annotation(const std::string& text,
                                     const Ontology& ontology) {
  const auto toks = tokenize(text);
  const auto known = ontology.concept_names();

  AnnotatedTranscript out;
  ConceptSegment plain;    // accumulating unlabeled words
  ConceptSegment tagged;   // the open concept span, if any
  bool in_span = false;

  auto flush_plain = [&] {
    if (!plain.words.empty()) {
      out.segments.push_back(plain);
      plain.words.clear();
    }
  };

  for (std::size_t i = 0; i < toks.size(); ++i) {
    const std::string& tok = toks[i];
    const std::size_t pos = i + 1;
    if (tok == ">") {
      if (!in_span)
        throw AnnotationParseError("stray '>' outside any concept span", pos);
      if (tagged.words.empty())
        throw AnnotationParseError(
            "concept '" + tagged.label + "' has an empty span", pos);
      out.segments.push_back(tagged);
      tagged = ConceptSegment{};
      in_span = false;
    } else if (is_open_tag(tok)) {
      if (in_span)
        throw AnnotationParseError(
            "nested tag " + tok + " inside concept '" + tagged.label + "'",
            pos);
      const std::string name = tag_name(tok);
      if (!known.count(name))
        throw AnnotationParseError("unknown concept '" + name + "'", pos);
      flush_plain();
      tagged.label = name;
      in_span = true;
    } else if (tok.find('<') != std::string::npos ||
               tok.find('>') != std::string::npos) {
      throw AnnotationParseError("malformed tag token '" + tok + "'", pos);
    } else if (in_span) {
      tagged.words.push_back(tok);
    } else {
      plain.words.push_back(tok);
    }
  }
  if (in_span)
    throw AnnotationParseError(
        "unclosed concept '" + tagged.label + "' at end of input",
        toks.size());
  flush_plain();
  return out;
}

std::string serialize_annotation(const AnnotatedTranscript& t) {
  const auto toks = t.tokens();
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out += " ";
    out += toks[i];
  }
  return out;
}

TolerantParse parse_annotation_tolerant(const std::vector<std::string>& toks,
                                        const Ontology& ontology) {
  const auto known = ontology.concept_names();
  TolerantParse res;
  ConceptSegment plain;
  ConceptSegment tagged;
  bool in_span = false;

  auto flush_plain = [&] {
    if (!plain.words.empty()) {
      res.transcript.segments.push_back(plain);
      plain.words.clear();
    }
  };
  auto close_span = [&](bool counts_as_repair) {
    if (counts_as_repair) ++res.repairs;
    if (tagged.words.empty()) {
      if (!counts_as_repair) ++res.repairs;  // dropped empty span
    } else {
      res.transcript.segments.push_back(tagged);
    }
    tagged = ConceptSegment{};
    in_span = false;
  };

  for (const std::string& tok : toks) {
    if (tok == ">") {
      if (!in_span) {
        ++res.repairs;  // stray closer dropped
        continue;
      }
      close_span(false);
    } else if (is_open_tag(tok) && known.count(tag_name(tok))) {
      if (in_span) close_span(true);  // implicit close
      flush_plain();
      tagged.label = tag_name(tok);
      in_span = true;
    } else if (is_open_tag(tok) || tok == Vocabulary::kBlankToken) {
      ++res.repairs;  // unusable marker dropped
    } else if (in_span) {
      tagged.words.push_back(tok);
    } else {
      plain.words.push_back(tok);
    }
  }
  if (in_span) close_span(true);  // closed at utterance end
  flush_plain();
  return res;
}

}  // namespace dualslu
