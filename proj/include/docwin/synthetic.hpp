#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "docwin/document.hpp"

namespace docwin {

struct SyntheticOptions {
  Index docs = 100;
  Index min_sentences = 3;
  Index max_sentences = 5;
  Index min_words = 2;
  Index max_words = 4;
  Index content_vocab = 20;
  std::uint64_t seed = 1;
};

/// Target sentences equal the source sentences.
Corpus generate_copy(const SyntheticOptions& options);
/// Each target sentence is its source sentence reversed.
Corpus generate_reversal(const SyntheticOptions& options);

/// Document-global formality: sentence 1 opens with "sir" or "buddy", every source sentence
/// holds "you", and each target sentence opens with "Sie" or "du" according to that tag.
Corpus generate_formality(const SyntheticOptions& options);

/// Dispatches on "copy", "reversal" or "formality".
Corpus generate_task(std::string_view task, const SyntheticOptions& options);

struct MarkerAccuracy {
  Index correct = 0;
  Index total = 0;
  [[nodiscard]] double accuracy() const { return total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Fraction of hypothesis sentences n >= first_sentence whose first token is the reference marker.
MarkerAccuracy formality_marker_accuracy(const Corpus& references, const std::vector<std::vector<Sentence>>& hypotheses,
                                         Index first_sentence = 2);

}  // namespace docwin
