#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "docwin/attention.hpp"

namespace docwin {

using TokenId = int;
using Sentence = std::vector<std::string>;

namespace special {
inline constexpr std::string_view kPad = "<pad>";
inline constexpr std::string_view kUnk = "<unk>";
inline constexpr std::string_view kBod = "<bod>";
inline constexpr std::string_view kEos = "<eos>";
inline constexpr std::string_view kSep = "<sep>";

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kBodId = 2;
inline constexpr TokenId kEosId = 3;
inline constexpr TokenId kSepId = 4;

bool is_reserved(std::string_view token);
}  // namespace special

/// Parallel (or source-only) document: sentence lists F_1..F_N and E_1..E_N.
struct Document {
  std::string doc_id;
  std::vector<Sentence> source;
  std::vector<Sentence> target;

  [[nodiscard]] bool parallel() const { return !target.empty(); }
  [[nodiscard]] Index size() const { return static_cast<Index>(source.size()); }
  [[nodiscard]] Index target_tokens() const;
  [[nodiscard]] Index source_tokens() const;

  /// Throws if a parallel document has mismatched sentence counts or a sentence holds a reserved token.
  void validate() const;

  bool operator==(const Document&) const = default;
};

using Corpus = std::vector<Document>;

/// Token <-> id map with reserved ids 0..4 for <pad>, <unk>, <bod>, <eos>, <sep>.
class Vocab {
 public:
  Vocab();

  static Vocab build(const Corpus& corpus);
  static Vocab from_json(const nlohmann::json& j);
  [[nodiscard]] nlohmann::json to_json() const;
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  TokenId add(const std::string& token);
  [[nodiscard]] TokenId id(std::string_view token) const;  // <unk> when absent
  [[nodiscard]] bool contains(std::string_view token) const;
  [[nodiscard]] const std::string& token(TokenId id) const;
  [[nodiscard]] Index size() const { return static_cast<Index>(tokens_.size()); }

  [[nodiscard]] std::vector<TokenId> encode(std::span<const std::string> tokens) const;
  [[nodiscard]] std::vector<std::string> decode(std::span<const TokenId> ids) const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

struct ContextInput {
  Sentence source;         // F_{n-k} <sep> ... <sep> F_n <eos>
  Sentence target_prefix;  // E_{n-k} <sep> ... <sep> E_{n-1} <sep>
};

/// Concatenates sentence n (1-based) with its k predecessors; `<bod>` stands
/// in for sentence 0 when the window reaches before the document start.
ContextInput build_context_input(const Document& doc, Index n, Index k);

/// Same as build_context_input but with caller-supplied target sentences
/// (used when earlier target sentences come from the decoder).
ContextInput build_context_input(const Document& doc, std::span<const Sentence> targets, Index n, Index k);

/// Whole-document sequences: the context input of the last sentence with every predecessor as context.
ContextInput full_document_input(const Document& doc);

struct SplitResult {
  std::vector<Document> parts;
  std::vector<std::string> warnings;
};

/// Splits at sentence boundaries into ceil(target_tokens / max) parts of roughly equal target mass.
SplitResult split_document(const Document& doc, Index max_target_tokens = 1000);

/// s(i) for a separator-delimited sequence; `<sep>` belongs to the sentence it closes.
SentenceMap sentence_map(std::span<const std::string> sequence);
SentenceMap sentence_map(std::span<const TokenId> sequence);

/// Token counts of the sentences of a separator-delimited sequence (separators and `<eos>` excluded).
std::vector<Index> sentence_lengths(std::span<const TokenId> sequence);

nlohmann::json document_to_json(const Document& doc);
Document document_from_json(const nlohmann::json& j);

Corpus read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const Corpus& corpus);
Corpus parse_corpus(std::string_view jsonl);
std::string serialize_corpus(const Corpus& corpus);

/// Joins sentences with `<sep>` (no trailing token).
Sentence join_sentences(std::span<const Sentence> sentences);
/// Splits at `<sep>` tokens; an empty input yields one empty sentence.
std::vector<Sentence> split_sentences(std::span<const std::string> tokens);

}  // namespace docwin
