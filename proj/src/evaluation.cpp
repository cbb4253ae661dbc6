#include "docwin/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "docwin/alignment.hpp"

namespace docwin {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

Sentence split_ws(const std::string& text) {
  std::istringstream in(text);
  Sentence out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

}  // namespace

LexiconTagger LexiconTagger::from_json(const nlohmann::json& j) {
  LexiconTagger tagger;
  for (const auto& [language, rules] : j.items()) {
    auto& compiled = tagger.rules_[language];
    for (const auto& r : rules) {
      Compiled c;
      c.rule.label = r.at("label").get<std::string>();
      c.rule.words = r.value("words", std::vector<std::string>{});
      c.rule.patterns = r.value("regex", std::vector<std::string>{});
      c.rule.case_sensitive = r.value("case_sensitive", false);
      c.rule.non_initial = r.value("non_initial", false);
      if (!c.rule.case_sensitive) {
        for (auto& w : c.rule.words) w = lower(w);
      }
      const auto flags = c.rule.case_sensitive ? std::regex::ECMAScript : std::regex::ECMAScript | std::regex::icase;
      for (const auto& p : c.rule.patterns) c.regexes.emplace_back(p, flags);
      compiled.push_back(std::move(c));
    }
  }
  return tagger;
}

LexiconTagger LexiconTagger::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open lexicon " + path.string());
  return from_json(nlohmann::json::parse(in));
}

const LexiconTagger& LexiconTagger::shipped() {
  static const LexiconTagger tagger = load(std::filesystem::path(DOCWIN_DATA_DIR) / "lexicon.json");
  return tagger;
}

std::vector<std::string> LexiconTagger::tag(std::span<const std::string> sentence, std::string_view language) const {
  std::vector<std::string> labels(sentence.size(), std::string(kOtherLabel));
  auto it = rules_.find(language);
  if (it == rules_.end()) return labels;
  for (size_t p = 0; p < sentence.size(); ++p) {
    const std::string folded = lower(sentence[p]);
    for (const auto& c : it->second) {
      if (c.rule.non_initial && p == 0) continue;
      const std::string& probe = c.rule.case_sensitive ? sentence[p] : folded;
      bool hit = std::find(c.rule.words.begin(), c.rule.words.end(), probe) != c.rule.words.end();
      for (size_t r = 0; !hit && r < c.regexes.size(); ++r) hit = std::regex_match(sentence[p], c.regexes[r]);
      if (hit) {
        labels[p] = c.rule.label;
        break;
      }
    }
  }
  return labels;
}

namespace {

bool has_label(const std::vector<std::string>& labels, std::initializer_list<std::string_view> wanted) {
  for (const auto& l : labels) {
    for (auto w : wanted) {
      if (l == w) return true;
    }
  }
  return false;
}

Index count_label(const std::vector<std::string>& labels, std::string_view wanted) {
  return std::count(labels.begin(), labels.end(), wanted);
}

}  // namespace

Index count_pronouns(std::span<const std::string> source, std::span<const std::string> target, std::string_view x,
                     const Tagger& tagger) {
  const auto src = tagger.tag(source, "en");
  if (!has_label(src, {"en_neuter"})) return 0;
  if (x == "female" && has_label(src, {"en_plural3", "en_second"})) return 0;
  if (x != "male" && x != "female" && x != "neuter") throw std::invalid_argument("unknown pronoun class");
  return count_label(tagger.tag(target, "de"), "de_" + std::string(x));
}

Index count_formality(std::span<const std::string> source, std::span<const std::string> target, std::string_view x,
                      const Tagger& tagger) {
  const auto src = tagger.tag(source, "en");
  if (!has_label(src, {"en_second"})) return 0;
  if (x == "formal" && has_label(src, {"en_female", "en_neuter", "en_plural3"})) return 0;
  if (x != "formal" && x != "informal") throw std::invalid_argument("unknown formality class");
  return count_label(tagger.tag(target, "de"), "de_" + std::string(x));
}

nlohmann::json F1Report::to_json() const {
  nlohmann::json cats = nlohmann::json::object();
  for (const auto& [name, t] : categories) {
    cats[name] = {{"matched", t.matched}, {"hypothesis", t.hypothesis}, {"reference", t.reference}};
  }
  return {{"precision", precision},       {"recall", recall},
          {"f1", f1},                     {"matched", matched},
          {"hypothesis_total", hypothesis_total}, {"reference_total", reference_total},
          {"categories", cats}};
}

namespace {

template <typename Counter, size_t N>
F1Report clipped_f1(std::span<const SentenceTriple> corpus, const Tagger& tagger, const std::string_view (&classes)[N],
                    Counter count) {
  F1Report report;
  for (auto x : classes) report.categories[std::string(x)];
  for (const auto& t : corpus) {
    for (auto x : classes) {
      const Index h = count(t.source, t.hypothesis, x, tagger);
      const Index r = count(t.source, t.reference, x, tagger);
      auto& totals = report.categories[std::string(x)];
      totals.matched += std::min(h, r);
      totals.hypothesis += h;
      totals.reference += r;
    }
  }
  for (const auto& [name, t] : report.categories) {
    report.matched += t.matched;
    report.hypothesis_total += t.hypothesis;
    report.reference_total += t.reference;
  }
  const auto m = static_cast<double>(report.matched);
  report.precision = report.hypothesis_total > 0 ? m / static_cast<double>(report.hypothesis_total) : 0.0;
  report.recall = report.reference_total > 0 ? m / static_cast<double>(report.reference_total) : 0.0;
  const double pr = report.precision + report.recall;
  report.f1 = pr > 0.0 ? 2.0 * report.precision * report.recall / pr : 0.0;
  return report;
}

}  // namespace

F1Report pronoun_f1(std::span<const SentenceTriple> corpus, const Tagger& tagger) {
  return clipped_f1(corpus, tagger, kPronounClasses, count_pronouns);
}

F1Report formality_f1(std::span<const SentenceTriple> corpus, const Tagger& tagger) {
  return clipped_f1(corpus, tagger, kFormalityClasses, count_formality);
}

std::vector<SentenceTriple> align_triples(const Corpus& hypotheses, const Corpus& references) {
  std::map<std::string, const Document*> by_id;
  for (const auto& d : hypotheses) by_id[d.doc_id] = &d;
  std::vector<SentenceTriple> triples;
  for (const auto& ref : references) {
    if (!ref.parallel()) throw std::invalid_argument("reference document " + ref.doc_id + " has no target side");
    auto it = by_id.find(ref.doc_id);
    if (it == by_id.end()) throw std::invalid_argument("no hypothesis for document " + ref.doc_id);
    const Document& hyp = *it->second;
    const auto& hyp_sentences = hyp.parallel() ? hyp.target : hyp.source;
    if (hyp_sentences.size() != ref.target.size()) {
      throw std::invalid_argument("document " + ref.doc_id + ": hypothesis and reference sentence counts differ");
    }
    for (size_t n = 0; n < ref.target.size(); ++n) triples.push_back({ref.source[n], hyp_sentences[n], ref.target[n]});
  }
  return triples;
}

std::vector<ContrastiveCase> parse_contrastive_cases(std::string_view jsonl) {
  std::vector<ContrastiveCase> cases;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line);
    ContrastiveCase c;
    c.source = split_ws(j.at("src").get<std::string>());
    c.reference = split_ws(j.at("ref").get<std::string>());
    for (const auto& s : j.value("ctx_src", std::vector<std::string>{})) c.source_context.push_back(split_ws(s));
    for (const auto& s : j.value("ctx_tgt", std::vector<std::string>{})) c.target_context.push_back(split_ws(s));
    for (const auto& s : j.at("contrastive").get<std::vector<std::string>>()) c.contrastive.push_back(split_ws(s));
    if (c.contrastive.empty()) throw std::invalid_argument("contrastive case without contrastive references");
    if (c.source_context.size() != c.target_context.size()) {
      throw std::invalid_argument("contrastive case: source and target context sizes differ");
    }
    cases.push_back(std::move(c));
  }
  return cases;
}

std::vector<ContrastiveCase> read_contrastive_cases(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open contrastive cases " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_contrastive_cases(buffer.str());
}

ContrastiveReport contrastive_accuracy(std::span<const ContrastiveCase> cases, const CaseScorer& scorer) {
  if (cases.empty()) throw std::invalid_argument("contrastive_accuracy: no cases");
  ContrastiveReport report;
  for (const auto& c : cases) {
    if (c.contrastive.empty()) throw std::invalid_argument("contrastive case without contrastive references");
    const double correct = scorer(c, c.reference);
    bool wins = true;
    for (const auto& alt : c.contrastive) wins = wins && correct > scorer(c, alt);
    report.points += wins ? 1 : 0;
  }
  report.cases = static_cast<Index>(cases.size());
  report.accuracy = static_cast<double>(report.points) / static_cast<double>(report.cases);
  return report;
}

CaseScorer model_case_scorer(const ModelScorer& scorer, const Vocab& vocab, Index k) {
  return [&scorer, &vocab, k](const ContrastiveCase& c, const Sentence& candidate) {
    Document doc;
    doc.source = c.source_context;
    doc.source.push_back(c.source);
    doc.target = c.target_context;
    doc.target.push_back(candidate);
    const Index n = doc.size();
    const ContextInput input = k == kFullDocument ? full_document_input(doc) : build_context_input(doc, n, k);
    std::vector<TokenId> target = vocab.encode(input.target_prefix);
    const size_t from = target.size();
    for (TokenId t : vocab.encode(candidate)) target.push_back(t);
    target.push_back(special::kEosId);
    return scorer.score(vocab.encode(input.source), target, from);
  };
}

CrossAttentionProbe model_probe(const Model& model, double ratio, bool dense_reference) {
  return [&model, ratio, dense_reference](std::span<const TokenId> source, std::span<const TokenId> target) {
    const ModelScorer scorer(model, ratio);
    const std::vector<TokenId> input = shift_right(target);
    const std::vector<Index> anchors = replay_anchors(scorer.aligner(source), input, special::kSepId);
    AttentionTrace trace;
    ForwardOptions options;
    options.cross_anchors = &anchors;
    options.dense_reference = dense_reference;
    options.trace = &trace;
    (void)model.log_probs(source, input, options);
    std::vector<Matrix> out;
    for (auto& layer : trace.cross) {
      for (auto& head : layer) out.push_back(std::move(head));
    }
    return out;
  };
}

FocusMass& FocusMass::operator+=(const FocusMass& other) {
  on += other.on;
  off += other.off;
  rows += other.rows;
  return *this;
}

FocusMass attention_focus(const CrossAttentionProbe& probe, std::span<const TokenId> source,
                          std::span<const TokenId> target, Index sentence) {
  const std::vector<Matrix> maps = probe(source, target);
  if (maps.empty()) throw std::invalid_argument("attention_focus: model exposes no cross-attention weights");
  const SentenceMap src = sentence_map(source);
  const SentenceMap tgt = sentence_map(target);
  FocusMass mass;
  for (const auto& a : maps) {
    if (a.rows() != tgt.size() || a.cols() != src.size()) {
      throw std::invalid_argument("attention_focus: attention shape does not match the sequences");
    }
    for (Index i = 0; i < a.rows(); ++i) {
      if (tgt.index[static_cast<size_t>(i)] != sentence) continue;
      ++mass.rows;
      for (Index j = 0; j < a.cols(); ++j) {
        (src.index[static_cast<size_t>(j)] == sentence ? mass.on : mass.off) += a(i, j);
      }
    }
  }
  return mass;
}

FocusMass attention_focus(const CrossAttentionProbe& probe, const Vocab& vocab, const Document& doc, Index n, Index k) {
  if (!doc.parallel()) throw std::invalid_argument("attention_focus: parallel document required");
  if (n < 1 || n > doc.size()) throw std::out_of_range("attention_focus: sentence index out of range");
  ContextInput input;
  Index sentence = 0;
  if (k == kFullDocument) {
    input = full_document_input(doc);
    sentence = n + 1;  // <bod> occupies the first slot
  } else {
    input = build_context_input(doc, n, k);
  }
  std::vector<TokenId> source = vocab.encode(input.source);
  std::vector<TokenId> target = vocab.encode(input.target_prefix);
  if (k == kFullDocument) {
    for (TokenId t : vocab.encode(doc.target.back())) target.push_back(t);
  } else {
    for (TokenId t : vocab.encode(doc.target[static_cast<size_t>(n - 1)])) target.push_back(t);
    sentence = sentence_map(source).sentence_count();
  }
  target.push_back(special::kEosId);
  return attention_focus(probe, source, target, sentence);
}

}  // namespace docwin
