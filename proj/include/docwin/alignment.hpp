#pragma once

#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "docwin/numerics.hpp"

namespace docwin {

/// Rounds half away from zero.
Index round_half_away(double x);

/// b_i = round(J / I * i), clamped to [1, J]. All positions are 1-based.
Index linear_align(Index i, Index target_length, Index source_length);

/// Mean of J_m / I_m over documents given as (source_length, target_length) pairs.
double train_ratio(std::span<const std::pair<Index, Index>> lengths);

/// b_i = round(ratio * i); the caller clamps to [1, J].
Index ratio_align(Index i, double ratio);

/// Thrown when a decoder emits more separators than the source contains.
class SentenceOverflow : public std::runtime_error {
 public:
  SentenceOverflow() : std::runtime_error("sentence overflow") {}
};

/// Stateful decode-time aligner that jumps to the start of source sentence
/// N'+1 after the N'-th separator and otherwise advances by one.
///
/// Anchors address the concatenated source as the encoder sees it, so the
/// start of sentence N'+1 is sum_{n<=N'} J_n + N' + 1 (one separator token
/// per finished sentence).
class SentAligner {
 public:
  SentAligner() = default;
  /// `strict` makes an overflow throw; otherwise the anchor saturates at J.
  SentAligner(std::vector<Index> source_sentence_lengths, Index source_length, bool strict = true);

  /// Anchor for the next target position given whether the previous token was `<sep>`.
  Index step(bool previous_was_separator);

  [[nodiscard]] Index anchor() const { return anchor_; }
  [[nodiscard]] Index separators() const { return separators_; }
  [[nodiscard]] Index source_length() const { return source_length_; }

 private:
  std::vector<Index> prefix_;  // prefix_[n] = sum of the first n sentence lengths
  Index source_length_ = 1;
  Index separators_ = 0;
  Index anchor_ = 0;
  bool strict_ = true;
  bool started_ = false;
};

enum class AlignMode { Identity, LinearTrain, Ratio, SentAlign };

std::string_view to_string(AlignMode mode);
AlignMode parse_align_mode(std::string_view name);

/// One aligner per decode hypothesis; copied when a hypothesis is expanded.
class Aligner {
 public:
  Aligner() = default;
  static Aligner identity(Index source_length);
  static Aligner ratio(double ratio, Index source_length);
  static Aligner sent_align(std::vector<Index> source_sentence_lengths, Index source_length, bool strict = false);

  /// Anchor for the next target position (clamped to [1, J]).
  Index next(bool previous_was_separator);

  [[nodiscard]] AlignMode mode() const { return mode_; }
  [[nodiscard]] Index position() const { return position_; }

 private:
  AlignMode mode_ = AlignMode::Identity;
  double ratio_ = 1.0;
  Index source_length_ = 1;
  Index position_ = 0;
  SentAligner sent_;
};

/// Anchors for every target position under training-time linear alignment.
std::vector<Index> linear_anchors(Index target_length, Index source_length);

/// Replays `aligner` over decoder inputs (start token first) and returns one anchor per position.
std::vector<Index> replay_anchors(Aligner aligner, std::span<const int> decoder_input, int separator_id);

}  // namespace docwin
