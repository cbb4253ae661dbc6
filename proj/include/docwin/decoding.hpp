#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "docwin/alignment.hpp"
#include "docwin/document.hpp"
#include "docwin/model.hpp"

namespace docwin {

/// Next-token distributions for one fixed source sequence.
class ScoringSession {
 public:
  virtual ~ScoringSession() = default;
  /// Log-probabilities (length V) of the token after `decoder_input`, whose first entry is the start token.
  /// `anchors` holds one 1-based cross-attention anchor per decoder position.
  virtual Vector next_log_probs(std::span<const TokenId> decoder_input, std::span<const Index> anchors) = 0;
};

class SequenceScorer {
 public:
  virtual ~SequenceScorer() = default;
  [[nodiscard]] virtual Index vocab_size() const = 0;
  [[nodiscard]] virtual std::unique_ptr<ScoringSession> start(std::span<const TokenId> source) const = 0;
  /// Decode-time aligner for this source.
  [[nodiscard]] virtual Aligner aligner(std::span<const TokenId> source) const {
    return Aligner::identity(static_cast<Index>(source.size()));
  }
};

/// Scorer backed by a trained model; the encoder runs once per source.
class ModelScorer : public SequenceScorer {
 public:
  ModelScorer(const Model& model, double ratio) : model_(&model), ratio_(ratio) {}
  [[nodiscard]] Index vocab_size() const override { return model_->config().vocab_size; }
  [[nodiscard]] std::unique_ptr<ScoringSession> start(std::span<const TokenId> source) const override;
  [[nodiscard]] Aligner aligner(std::span<const TokenId> source) const override;

  /// Teacher-forced log p(target[from..] | source, target[..from]) with training-time linear anchors.
  [[nodiscard]] double score(std::span<const TokenId> source, std::span<const TokenId> target, size_t from = 0) const;

 private:
  const Model* model_;
  double ratio_;
};

struct Hypothesis {
  std::vector<TokenId> tokens;  // generated tokens, terminator included once finished
  double score = 0.0;           // summed log-probability of `tokens`
  bool finished = false;
  Index separators = 0;
  Aligner aligner;
  std::vector<Index> anchors;  // one per decoder position (start token and forced prefix included)
};

struct BeamOptions {
  Index beam = 12;
  double alpha = 1.0;
  std::optional<Index> max_length;  // generated tokens; default 2 * source length + 10
  /// A `<sep>` ends the search once the hypothesis already holds this many separators; negative disables.
  Index separator_limit = -1;
};

struct BeamResult {
  Hypothesis best;
  bool finished = true;
  std::vector<std::string> warnings;
};

/// score / len^alpha, len counting generated tokens including the terminator.
double normalized_score(const Hypothesis& h, double alpha);

/// Token-level beam search; the forced prefix is fed but not scored. `<pad>` is never generated.
BeamResult beam_search(const SequenceScorer& scorer, std::span<const TokenId> source, std::span<const TokenId> prefix,
                       const BeamOptions& options = {});

struct DecodeResult {
  std::vector<Sentence> sentences;
  std::vector<std::pair<Index, Index>> segments;  // 1-based inclusive sentence ranges
  bool misaligned = false;
  std::vector<std::string> warnings;
};

/// Translates non-overlapping segments of `segment` sentences independently; 0 or >= N means the whole document.
DecodeResult decode_fsd(const SequenceScorer& scorer, const Vocab& vocab, const Document& doc, Index segment,
                        const BeamOptions& options = {});

/// Sentence-by-sentence decoding with the previous k outputs as forced target context.
DecodeResult decode_sd(const SequenceScorer& scorer, const Vocab& vocab, const Document& doc, Index k,
                       const BeamOptions& options = {});

}  // namespace docwin
