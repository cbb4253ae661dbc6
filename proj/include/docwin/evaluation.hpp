#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <regex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "docwin/decoding.hpp"
#include "docwin/document.hpp"
#include "docwin/model.hpp"

namespace docwin {

inline constexpr std::string_view kOtherLabel = "OTHER";

/// Assigns one label per token; unmatched tokens get OTHER.
class Tagger {
 public:
  virtual ~Tagger() = default;
  [[nodiscard]] virtual std::vector<std::string> tag(std::span<const std::string> sentence,
                                                     std::string_view language) const = 0;
};

struct LexiconRule {
  std::string label;
  std::vector<std::string> words;
  std::vector<std::string> patterns;
  bool case_sensitive = false;
  bool non_initial = false;  // never matches the first token of a sentence
};

/// Ordered word-list and regex rules per language; the first matching rule wins.
class LexiconTagger : public Tagger {
 public:
  static LexiconTagger from_json(const nlohmann::json& j);
  static LexiconTagger load(const std::filesystem::path& path);
  /// The lexicon shipped in the data directory.
  static const LexiconTagger& shipped();

  [[nodiscard]] std::vector<std::string> tag(std::span<const std::string> sentence,
                                             std::string_view language) const override;

 private:
  struct Compiled {
    LexiconRule rule;
    std::vector<std::regex> regexes;
  };
  std::map<std::string, std::vector<Compiled>, std::less<>> rules_;
};

/// CP(F, E, x) for x in {male, female, neuter}; zero unless F holds an English neuter pronoun.
Index count_pronouns(std::span<const std::string> source, std::span<const std::string> target, std::string_view x,
                     const Tagger& tagger);
/// CP(F, E, x) for x in {formal, informal}; zero unless F holds an English second-person pronoun.
Index count_formality(std::span<const std::string> source, std::span<const std::string> target, std::string_view x,
                      const Tagger& tagger);

inline constexpr std::string_view kPronounClasses[] = {"male", "female", "neuter"};
inline constexpr std::string_view kFormalityClasses[] = {"formal", "informal"};

struct SentenceTriple {
  Sentence source;
  Sentence hypothesis;
  Sentence reference;
};

struct CategoryTotals {
  Index matched = 0;
  Index hypothesis = 0;
  Index reference = 0;
};

struct F1Report {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Index matched = 0;
  Index hypothesis_total = 0;
  Index reference_total = 0;
  std::map<std::string, CategoryTotals> categories;

  [[nodiscard]] nlohmann::json to_json() const;
};

F1Report pronoun_f1(std::span<const SentenceTriple> corpus, const Tagger& tagger);
F1Report formality_f1(std::span<const SentenceTriple> corpus, const Tagger& tagger);

/// Pairs hypothesis and reference sentences by document id and position.
std::vector<SentenceTriple> align_triples(const Corpus& hypotheses, const Corpus& references);

struct ContrastiveCase {
  Sentence source;
  std::vector<Sentence> source_context;
  Sentence reference;
  std::vector<Sentence> contrastive;
  std::vector<Sentence> target_context;
};

std::vector<ContrastiveCase> parse_contrastive_cases(std::string_view jsonl);
std::vector<ContrastiveCase> read_contrastive_cases(const std::filesystem::path& path);

/// Log-probability of `candidate` as the translation of the case's source.
using CaseScorer = std::function<double(const ContrastiveCase&, const Sentence& candidate)>;

struct ContrastiveReport {
  Index points = 0;
  Index cases = 0;
  double accuracy = 0.0;
};

/// A point only when the reference scores strictly above every contrastive variant.
ContrastiveReport contrastive_accuracy(std::span<const ContrastiveCase> cases, const CaseScorer& scorer);

/// Scores the current sentence with up to k context sentences on both sides.
CaseScorer model_case_scorer(const ModelScorer& scorer, const Vocab& vocab, Index k);

/// Cross-attention probabilities of a teacher-forced pass, one I x J matrix per decoder layer and head.
using CrossAttentionProbe =
    std::function<std::vector<Matrix>(std::span<const TokenId> source, std::span<const TokenId> target)>;

/// Probe over a model using its decode-time alignment; `dense_reference` uses explicit masks.
CrossAttentionProbe model_probe(const Model& model, double ratio, bool dense_reference = false);

struct FocusMass {
  double on = 0.0;   // mass on the matching source sentence
  double off = 0.0;  // mass elsewhere
  Index rows = 0;    // target positions x heads x layers

  [[nodiscard]] double percentage() const { return on + off > 0.0 ? 100.0 * (on / (on + off)) : 0.0; }
  FocusMass& operator+=(const FocusMass& other);
};

/// Attention mass that target positions of sentence n place on source sentence n.
FocusMass attention_focus(const CrossAttentionProbe& probe, std::span<const TokenId> source,
                          std::span<const TokenId> target, Index sentence);

/// Focus for sentence n of a document fed with k context sentences (kFullDocument for the whole document).
FocusMass attention_focus(const CrossAttentionProbe& probe, const Vocab& vocab, const Document& doc, Index n, Index k);

}  // namespace docwin
