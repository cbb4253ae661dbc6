#include "docwin/synthetic.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace docwin {

namespace {

void check(const SyntheticOptions& o) {
  if (o.docs < 1 || o.min_sentences < 1 || o.max_sentences < o.min_sentences || o.min_words < 1 ||
      o.max_words < o.min_words || o.content_vocab < 1) {
    throw std::invalid_argument("synthetic options out of range");
  }
}

Index uniform(std::mt19937_64& rng, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

Sentence words(std::mt19937_64& rng, const SyntheticOptions& o, const std::string& stem) {
  Sentence s(static_cast<size_t>(uniform(rng, o.min_words, o.max_words)));
  for (auto& w : s) w = stem + std::to_string(uniform(rng, 1, o.content_vocab));
  return s;
}

std::string doc_name(Index i) { return "doc" + std::to_string(i + 1); }

template <typename MakeTarget>
Corpus generate_mapped(const SyntheticOptions& o, MakeTarget make_target) {
  check(o);
  std::mt19937_64 rng(o.seed);
  Corpus corpus;
  for (Index d = 0; d < o.docs; ++d) {
    Document doc;
    doc.doc_id = doc_name(d);
    const Index n = uniform(rng, o.min_sentences, o.max_sentences);
    for (Index s = 0; s < n; ++s) {
      doc.source.push_back(words(rng, o, "w"));
      doc.target.push_back(make_target(doc.source.back()));
    }
    corpus.push_back(std::move(doc));
  }
  return corpus;
}

}  // namespace

Corpus generate_copy(const SyntheticOptions& options) {
  return generate_mapped(options, [](const Sentence& s) { return s; });
}

Corpus generate_reversal(const SyntheticOptions& options) {
  return generate_mapped(options, [](const Sentence& s) { return Sentence(s.rbegin(), s.rend()); });
}

Corpus generate_formality(const SyntheticOptions& options) {
  check(options);
  std::mt19937_64 rng(options.seed);
  Corpus corpus;
  for (Index d = 0; d < options.docs; ++d) {
    Document doc;
    doc.doc_id = doc_name(d);
    const bool formal = uniform(rng, 0, 1) == 1;
    const Index n = uniform(rng, options.min_sentences, options.max_sentences);
    for (Index s = 0; s < n; ++s) {
      Sentence content = words(rng, options, "s");
      Sentence src;
      if (s == 0) src.emplace_back(formal ? "sir" : "buddy");
      src.emplace_back("you");
      src.insert(src.end(), content.begin(), content.end());
      Sentence tgt{formal ? "Sie" : "du"};
      for (const auto& w : content) tgt.push_back("t" + w.substr(1));
      doc.source.push_back(std::move(src));
      doc.target.push_back(std::move(tgt));
    }
    corpus.push_back(std::move(doc));
  }
  return corpus;
}

Corpus generate_task(std::string_view task, const SyntheticOptions& options) {
  if (task == "copy") return generate_copy(options);
  if (task == "reversal") return generate_reversal(options);
  if (task == "formality") return generate_formality(options);
  throw std::invalid_argument("unknown synthetic task: " + std::string(task));
}

MarkerAccuracy formality_marker_accuracy(const Corpus& references, const std::vector<std::vector<Sentence>>& hypotheses,
                                         Index first_sentence) {
  if (references.size() != hypotheses.size()) throw std::invalid_argument("marker accuracy: corpus sizes differ");
  MarkerAccuracy acc;
  for (size_t d = 0; d < references.size(); ++d) {
    const auto& ref = references[d].target;
    const auto& hyp = hypotheses[d];
    for (Index n = first_sentence; n <= static_cast<Index>(ref.size()); ++n) {
      ++acc.total;
      const auto i = static_cast<size_t>(n - 1);
      if (i < hyp.size() && !hyp[i].empty() && hyp[i].front() == ref[i].front()) ++acc.correct;
    }
  }
  return acc;
}

}  // namespace docwin
