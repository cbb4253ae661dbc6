#include "docwin/document.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace docwin {

namespace special {
bool is_reserved(std::string_view token) {
  return token == kPad || token == kUnk || token == kBod || token == kEos || token == kSep;
}
}  // namespace special

namespace {

Index count_tokens(const std::vector<Sentence>& sentences) {
  Index total = 0;
  for (const auto& s : sentences) total += static_cast<Index>(s.size());
  return total;
}

}  // namespace

Index Document::target_tokens() const { return count_tokens(target); }
Index Document::source_tokens() const { return count_tokens(source); }

void Document::validate() const {
  if (source.empty()) throw std::invalid_argument("document " + doc_id + " has no sentences");
  if (parallel() && target.size() != source.size()) {
    throw std::invalid_argument("document " + doc_id + " has unequal source/target sentence counts");
  }
  for (const auto* side : {&source, &target}) {
    for (const auto& sentence : *side) {
      for (const auto& tok : sentence) {
        if (special::is_reserved(tok)) throw std::invalid_argument("document " + doc_id + " contains reserved token " + tok);
      }
    }
  }
}

Vocab::Vocab() {
  for (auto tok : {special::kPad, special::kUnk, special::kBod, special::kEos, special::kSep}) add(std::string(tok));
}

TokenId Vocab::add(const std::string& token) {
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

TokenId Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? special::kUnkId : it->second;
}

bool Vocab::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || id >= static_cast<TokenId>(tokens_.size())) throw std::out_of_range("Vocab::token: id out of range");
  return tokens_[static_cast<size_t>(id)];
}

std::vector<TokenId> Vocab::encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocab::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (TokenId i : ids) out.push_back(token(i));
  return out;
}

Vocab Vocab::build(const Corpus& corpus) {
  std::vector<std::string> seen;
  for (const auto& doc : corpus) {
    for (const auto* side : {&doc.source, &doc.target}) {
      for (const auto& s : *side) seen.insert(seen.end(), s.begin(), s.end());
    }
  }
  std::sort(seen.begin(), seen.end());
  seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
  Vocab vocab;
  for (const auto& t : seen) vocab.add(t);
  return vocab;
}

nlohmann::json Vocab::to_json() const {
  return {{"tokens", tokens_},
          {"reserved",
           {{"pad", special::kPadId}, {"unk", special::kUnkId}, {"bod", special::kBodId}, {"eos", special::kEosId},
            {"sep", special::kSepId}}}};
}

Vocab Vocab::from_json(const nlohmann::json& j) {
  const auto tokens = j.at("tokens").get<std::vector<std::string>>();
  const auto& reserved = j.at("reserved");
  const std::pair<const char*, std::pair<TokenId, std::string_view>> expected[] = {
      {"pad", {special::kPadId, special::kPad}}, {"unk", {special::kUnkId, special::kUnk}},
      {"bod", {special::kBodId, special::kBod}}, {"eos", {special::kEosId, special::kEos}},
      {"sep", {special::kSepId, special::kSep}}};
  for (const auto& [name, id_tok] : expected) {
    const auto id = reserved.at(name).get<TokenId>();
    if (id != id_tok.first || static_cast<size_t>(id) >= tokens.size() || tokens[static_cast<size_t>(id)] != id_tok.second) {
      throw std::invalid_argument(std::string("vocab: reserved id mismatch for ") + name);
    }
  }
  Vocab vocab;
  for (size_t i = 5; i < tokens.size(); ++i) {
    if (vocab.contains(tokens[i])) throw std::invalid_argument("vocab: duplicate token " + tokens[i]);
    vocab.add(tokens[i]);
  }
  return vocab;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocab file " + path.string());
  return from_json(nlohmann::json::parse(in));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocab file " + path.string());
  out << to_json().dump() << '\n';
}

ContextInput build_context_input(const Document& doc, Index n, Index k) {
  return build_context_input(doc, doc.target, n, k);
}

ContextInput build_context_input(const Document& doc, std::span<const Sentence> targets, Index n, Index k) {
  if (n < 1 || n > doc.size()) throw std::out_of_range("build_context_input: sentence index out of range");
  if (k < 0) throw std::invalid_argument("build_context_input: k must be >= 0");
  const std::string bod(special::kBod);
  const std::string sep(special::kSep);
  ContextInput input;
  const Index first = std::max<Index>(n - k, 0);
  for (Index m = first; m <= n; ++m) {
    if (m == 0) {
      input.source.push_back(bod);
    } else {
      const auto& s = doc.source[static_cast<size_t>(m - 1)];
      input.source.insert(input.source.end(), s.begin(), s.end());
    }
    input.source.push_back(m == n ? std::string(special::kEos) : sep);
  }
  for (Index m = first; m < n; ++m) {
    if (m == 0) {
      input.target_prefix.push_back(bod);
    } else {
      if (static_cast<Index>(targets.size()) < m) throw std::invalid_argument("build_context_input: missing target context");
      const auto& s = targets[static_cast<size_t>(m - 1)];
      input.target_prefix.insert(input.target_prefix.end(), s.begin(), s.end());
    }
    input.target_prefix.push_back(sep);
  }
  return input;
}

ContextInput full_document_input(const Document& doc) { return build_context_input(doc, doc.size(), doc.size()); }

namespace {

// Cut points inside [begin, end) closest to the ideal cumulative masses q * total / parts.
std::vector<Index> balanced_cuts(const std::vector<Index>& lengths, Index begin, Index end, Index parts) {
  std::vector<Index> cuts;
  Index total = 0;
  for (Index i = begin; i < end; ++i) total += lengths[static_cast<size_t>(i)];
  Index cumulative = 0;
  Index cursor = begin;
  for (Index q = 1; q < parts; ++q) {
    const double ideal = static_cast<double>(total) * static_cast<double>(q) / static_cast<double>(parts);
    const Index min_cut = (cuts.empty() ? begin : cuts.back()) + 1;
    const Index max_cut = end - (parts - q);
    while (cursor < min_cut) cumulative += lengths[static_cast<size_t>(cursor++)];
    while (cursor < max_cut) {
      const double here = std::abs(static_cast<double>(cumulative) - ideal);
      const double after = std::abs(static_cast<double>(cumulative + lengths[static_cast<size_t>(cursor)]) - ideal);
      if (after >= here) break;
      cumulative += lengths[static_cast<size_t>(cursor++)];
    }
    cuts.push_back(cursor);
  }
  return cuts;
}

}  // namespace

SplitResult split_document(const Document& doc, Index max_target_tokens) {
  if (!doc.parallel()) throw std::invalid_argument("split_document: target side required");
  if (max_target_tokens < 1) throw std::invalid_argument("split_document: limit must be positive");
  SplitResult result;
  const auto n = static_cast<Index>(doc.target.size());
  std::vector<Index> lengths;
  for (const auto& s : doc.target) lengths.push_back(static_cast<Index>(s.size()));

  // Sentences above the limit become parts of their own; the stretches between them are balanced.
  std::vector<Index> boundaries{0};
  for (Index i = 0; i < n; ++i) {
    if (lengths[static_cast<size_t>(i)] > max_target_tokens) {
      result.warnings.push_back("document " + doc.doc_id + ": sentence " + std::to_string(i + 1) + " has " +
                                std::to_string(lengths[static_cast<size_t>(i)]) + " target tokens, above the limit of " +
                                std::to_string(max_target_tokens));
      if (boundaries.back() != i) boundaries.push_back(i);
      boundaries.push_back(i + 1);
    }
  }
  if (boundaries.back() != n) boundaries.push_back(n);

  std::vector<Index> cuts{0};
  for (size_t b = 0; b + 1 < boundaries.size(); ++b) {
    const Index begin = boundaries[b];
    const Index end = boundaries[b + 1];
    Index mass = 0;
    for (Index i = begin; i < end; ++i) mass += lengths[static_cast<size_t>(i)];
    const Index parts = std::clamp<Index>((mass + max_target_tokens - 1) / max_target_tokens, 1, end - begin);
    for (Index c : balanced_cuts(lengths, begin, end, parts)) cuts.push_back(c);
    cuts.push_back(end);
  }

  for (size_t p = 0; p + 1 < cuts.size(); ++p) {
    Document part;
    part.doc_id = cuts.size() == 2 ? doc.doc_id : doc.doc_id + "#" + std::to_string(p + 1);
    part.source.assign(doc.source.begin() + cuts[p], doc.source.begin() + cuts[p + 1]);
    part.target.assign(doc.target.begin() + cuts[p], doc.target.begin() + cuts[p + 1]);
    result.parts.push_back(std::move(part));
  }
  return result;
}

namespace {

template <typename Token>
SentenceMap sentence_map_impl(std::span<const Token> sequence, const Token& separator) {
  SentenceMap map;
  map.index.reserve(sequence.size());
  Index current = 1;
  for (const auto& tok : sequence) {
    map.index.push_back(current);
    if (tok == separator) ++current;
  }
  return map;
}

}  // namespace

SentenceMap sentence_map(std::span<const std::string> sequence) {
  return sentence_map_impl(sequence, std::string(special::kSep));
}

SentenceMap sentence_map(std::span<const TokenId> sequence) { return sentence_map_impl(sequence, special::kSepId); }

std::vector<Index> sentence_lengths(std::span<const TokenId> sequence) {
  std::vector<Index> lengths{0};
  for (TokenId t : sequence) {
    if (t == special::kSepId) {
      lengths.push_back(0);
    } else if (t != special::kEosId) {
      ++lengths.back();
    }
  }
  return lengths;
}

nlohmann::json document_to_json(const Document& doc) {
  nlohmann::json j = {{"doc_id", doc.doc_id}, {"src", doc.source}};
  if (doc.parallel()) j["tgt"] = doc.target;
  return j;
}

Document document_from_json(const nlohmann::json& j) {
  Document doc;
  doc.doc_id = j.at("doc_id").get<std::string>();
  doc.source = j.at("src").get<std::vector<Sentence>>();
  if (j.contains("tgt") && !j.at("tgt").is_null()) doc.target = j.at("tgt").get<std::vector<Sentence>>();
  doc.validate();
  return doc;
}

Corpus parse_corpus(std::string_view jsonl) {
  Corpus corpus;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      corpus.push_back(document_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::invalid_argument("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return corpus;
}

std::string serialize_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& doc : corpus) out += document_to_json(doc).dump() + "\n";
  return out;
}

Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_corpus(buffer.str());
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus " + path.string());
  out << serialize_corpus(corpus);
}

Sentence join_sentences(std::span<const Sentence> sentences) {
  Sentence out;
  for (size_t i = 0; i < sentences.size(); ++i) {
    if (i > 0) out.emplace_back(special::kSep);
    out.insert(out.end(), sentences[i].begin(), sentences[i].end());
  }
  return out;
}

std::vector<Sentence> split_sentences(std::span<const std::string> tokens) {
  std::vector<Sentence> out(1);
  for (const auto& t : tokens) {
    if (t == special::kSep) {
      out.emplace_back();
    } else {
      out.back().push_back(t);
    }
  }
  return out;
}

}  // namespace docwin
