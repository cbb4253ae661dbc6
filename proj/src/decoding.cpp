#include "docwin/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace docwin {

namespace {

class ModelSession : public ScoringSession {
 public:
  ModelSession(const Model& model, Matrix memory) : model_(&model), memory_(std::move(memory)) {}

  Vector next_log_probs(std::span<const TokenId> decoder_input, std::span<const Index> anchors) override {
    ag::Tape tape(false);
    Model::Binding b(tape, model_->params(), nullptr);
    const std::vector<Index> cross(anchors.begin(), anchors.end());
    ForwardOptions options;
    options.cross_anchors = &cross;
    ag::Var logp = model_->decode(b, tape.constant(memory_), decoder_input, options);
    const Matrix& lp = tape.value(logp);
    return lp.row(lp.rows() - 1).transpose();
  }

 private:
  const Model* model_;
  Matrix memory_;
};

}  // namespace

std::unique_ptr<ScoringSession> ModelScorer::start(std::span<const TokenId> source) const {
  ag::Tape tape(false);
  Model::Binding b(tape, model_->params(), nullptr);
  ag::Var memory = model_->encode(b, source, {});
  return std::make_unique<ModelSession>(*model_, tape.value(memory));
}

Aligner ModelScorer::aligner(std::span<const TokenId> source) const {
  const auto length = static_cast<Index>(source.size());
  switch (model_->config().align) {
    case AlignMode::Identity: return Aligner::identity(length);
    case AlignMode::LinearTrain:
    case AlignMode::Ratio: return Aligner::ratio(ratio_, length);
    case AlignMode::SentAlign: return Aligner::sent_align(sentence_lengths(source), length);
  }
  return Aligner::identity(length);
}

double ModelScorer::score(std::span<const TokenId> source, std::span<const TokenId> target, size_t from) const {
  if (target.empty() || from >= target.size()) throw std::invalid_argument("score: nothing to score");
  const Matrix lp = model_->log_probs(source, shift_right(target));
  double total = 0.0;
  for (size_t i = from; i < target.size(); ++i) total += lp(static_cast<Index>(i), target[i]);
  return total;
}

double normalized_score(const Hypothesis& h, double alpha) {
  const auto len = static_cast<double>(std::max<size_t>(h.tokens.size(), 1));
  return h.score / std::pow(len, alpha);
}

namespace {

struct Candidate {
  size_t parent;
  TokenId token;
  double score;
};

// Lexicographic order of parent.tokens + token; parents of one step share a length.
bool lex_less(const std::vector<TokenId>& a, TokenId ta, const std::vector<TokenId>& b, TokenId tb) {
  if (a != b) return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  return ta < tb;
}

bool better_finished(const Hypothesis& a, const Hypothesis& b, double alpha) {
  const double sa = normalized_score(a, alpha);
  const double sb = normalized_score(b, alpha);
  if (sa != sb) return sa > sb;
  return std::lexicographical_compare(a.tokens.begin(), a.tokens.end(), b.tokens.begin(), b.tokens.end());
}

}  // namespace

BeamResult beam_search(const SequenceScorer& scorer, std::span<const TokenId> source, std::span<const TokenId> prefix,
                       const BeamOptions& options) {
  if (options.beam < 1) throw std::invalid_argument("beam_search: beam must be >= 1");
  if (options.alpha < 0.0) throw std::invalid_argument("beam_search: alpha must be >= 0");
  if (source.empty()) throw std::invalid_argument("beam_search: empty source");
  const Index max_length = options.max_length.value_or(2 * static_cast<Index>(source.size()) + 10);
  if (max_length < 1) throw std::invalid_argument("beam_search: max length must be >= 1");
  const Index vocab = scorer.vocab_size();
  auto session = scorer.start(source);

  std::vector<TokenId> base{special::kEosId};
  base.insert(base.end(), prefix.begin(), prefix.end());

  Hypothesis init;
  init.aligner = scorer.aligner(source);
  for (size_t p = 0; p < base.size(); ++p) init.anchors.push_back(init.aligner.next(p > 0 && base[p] == special::kSepId));

  std::vector<Hypothesis> active{std::move(init)};
  std::vector<Hypothesis> finished;
  const double length_bound = std::pow(static_cast<double>(max_length), options.alpha);

  for (Index step = 1; step <= max_length && !active.empty(); ++step) {
    std::vector<Candidate> candidates;
    candidates.reserve(active.size() * static_cast<size_t>(vocab));
    std::vector<TokenId> input;
    for (size_t h = 0; h < active.size(); ++h) {
      input = base;
      input.insert(input.end(), active[h].tokens.begin(), active[h].tokens.end());
      const Vector lp = session->next_log_probs(input, active[h].anchors);
      if (lp.size() != vocab) throw std::logic_error("scorer returned a distribution of the wrong size");
      for (TokenId tok = 0; tok < static_cast<TokenId>(vocab); ++tok) {
        if (tok == special::kPadId) continue;
        candidates.push_back({h, tok, active[h].score + lp(tok)});
      }
    }
    const size_t keep = std::min(candidates.size(), static_cast<size_t>(options.beam));
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [&](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        return lex_less(active[a.parent].tokens, a.token, active[b.parent].tokens, b.token);
                      });

    std::vector<Hypothesis> next;
    for (size_t c = 0; c < keep; ++c) {
      const Candidate& cand = candidates[c];
      const Hypothesis& parent = active[cand.parent];
      Hypothesis h;
      h.tokens = parent.tokens;
      h.tokens.push_back(cand.token);
      h.score = cand.score;
      h.separators = parent.separators;
      const bool is_sep = cand.token == special::kSepId;
      const bool terminal = cand.token == special::kEosId ||
                            (is_sep && options.separator_limit >= 0 && parent.separators >= options.separator_limit);
      if (is_sep) ++h.separators;
      h.aligner = parent.aligner;
      h.anchors = parent.anchors;
      if (terminal) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        h.anchors.push_back(h.aligner.next(is_sep));
        next.push_back(std::move(h));
      }
    }
    active = std::move(next);

    std::sort(finished.begin(), finished.end(),
              [&](const Hypothesis& a, const Hypothesis& b) { return better_finished(a, b, options.alpha); });
    if (static_cast<Index>(finished.size()) > options.beam) finished.resize(static_cast<size_t>(options.beam));

    if (!finished.empty() && !active.empty()) {
      double bound = -std::numeric_limits<double>::infinity();
      for (const auto& h : active) bound = std::max(bound, h.score / length_bound);
      if (normalized_score(finished.front(), options.alpha) > bound) break;
    }
  }

  BeamResult result;
  if (!finished.empty()) {
    result.best = finished.front();
    return result;
  }
  auto best = std::min_element(active.begin(), active.end(), [&](const Hypothesis& a, const Hypothesis& b) {
    return better_finished(a, b, options.alpha);
  });
  result.best = *best;
  result.finished = false;
  result.warnings.push_back("no hypothesis finished within " + std::to_string(max_length) + " tokens");
  return result;
}

namespace {

std::vector<Sentence> to_sentences(const Vocab& vocab, std::span<const TokenId> tokens) {
  std::vector<Sentence> out(1);
  for (TokenId t : tokens) {
    if (t == special::kSepId) {
      out.emplace_back();
    } else if (!special::is_reserved(vocab.token(t))) {
      out.back().push_back(vocab.token(t));
    }
  }
  return out;
}

}  // namespace

DecodeResult decode_fsd(const SequenceScorer& scorer, const Vocab& vocab, const Document& doc, Index segment,
                        const BeamOptions& options) {
  if (segment < 0) throw std::invalid_argument("decode_fsd: segment size must be >= 0");
  const Index n = doc.size();
  if (n == 0) throw std::invalid_argument("decode_fsd: empty document");
  const Index size = segment == 0 ? n : std::min(segment, n);
  DecodeResult result;
  for (Index a = 1; a <= n; a += size) {
    const Index b = std::min(a + size - 1, n);
    const Index m = b - a + 1;
    Sentence source;
    Sentence prefix;
    if (a == 1) {
      for (auto* side : {&source, &prefix}) {
        side->emplace_back(special::kBod);
        side->emplace_back(special::kSep);
      }
    }
    const Sentence body = join_sentences(std::span(doc.source).subspan(static_cast<size_t>(a - 1), static_cast<size_t>(m)));
    source.insert(source.end(), body.begin(), body.end());
    source.emplace_back(special::kEos);

    BeamOptions opts = options;
    opts.separator_limit = m - 1;
    const BeamResult beam = beam_search(scorer, vocab.encode(source), vocab.encode(prefix), opts);
    result.warnings.insert(result.warnings.end(), beam.warnings.begin(), beam.warnings.end());

    std::vector<TokenId> tokens = beam.best.tokens;
    const bool ended_on_sep = beam.finished && !tokens.empty() && tokens.back() == special::kSepId;
    if (beam.finished && !tokens.empty()) tokens.pop_back();
    std::vector<Sentence> sentences = to_sentences(vocab, tokens);
    if (ended_on_sep || static_cast<Index>(sentences.size()) != m) {
      result.misaligned = true;
      result.warnings.push_back("segment " + std::to_string(a) + "-" + std::to_string(b) + ": expected " +
                                std::to_string(m) + " sentences, separator count disagrees");
    }
    sentences.resize(static_cast<size_t>(m));
    result.sentences.insert(result.sentences.end(), sentences.begin(), sentences.end());
    result.segments.emplace_back(a, b);
  }
  return result;
}

DecodeResult decode_sd(const SequenceScorer& scorer, const Vocab& vocab, const Document& doc, Index k,
                       const BeamOptions& options) {
  if (k < 0) throw std::invalid_argument("decode_sd: k must be >= 0");
  DecodeResult result;
  BeamOptions opts = options;
  opts.separator_limit = 0;
  for (Index n = 1; n <= doc.size(); ++n) {
    const ContextInput input = build_context_input(doc, result.sentences, n, k);
    const BeamResult beam = beam_search(scorer, vocab.encode(input.source), vocab.encode(input.target_prefix), opts);
    result.warnings.insert(result.warnings.end(), beam.warnings.begin(), beam.warnings.end());
    std::vector<TokenId> tokens = beam.best.tokens;
    if (beam.finished && !tokens.empty()) tokens.pop_back();
    Sentence sentence;
    for (TokenId t : tokens) {
      if (!special::is_reserved(vocab.token(t))) sentence.push_back(vocab.token(t));
    }
    result.sentences.push_back(std::move(sentence));
    result.segments.emplace_back(n, n);
  }
  return result;
}

}  // namespace docwin
