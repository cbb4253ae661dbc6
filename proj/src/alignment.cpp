#include "docwin/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace docwin {

Index round_half_away(double x) { return static_cast<Index>(std::round(x)); }

Index linear_align(Index i, Index target_length, Index source_length) {
  if (target_length < 1 || source_length < 1) throw std::invalid_argument("linear_align: lengths must be >= 1");
  if (i < 1 || i > target_length) throw std::invalid_argument("linear_align: position outside [1, I]");
  const double ratio = static_cast<double>(source_length) / static_cast<double>(target_length);
  return std::clamp<Index>(round_half_away(ratio * static_cast<double>(i)), 1, source_length);
}

double train_ratio(std::span<const std::pair<Index, Index>> lengths) {
  if (lengths.empty()) throw std::invalid_argument("train_ratio: empty corpus");
  double total = 0.0;
  for (const auto& [source, target] : lengths) {
    if (target < 1) throw std::invalid_argument("train_ratio: target length must be >= 1");
    total += static_cast<double>(source) / static_cast<double>(target);
  }
  return total / static_cast<double>(lengths.size());
}

Index ratio_align(Index i, double ratio) {
  if (i < 1 || !(ratio > 0.0)) throw std::invalid_argument("ratio_align: need i >= 1 and ratio > 0");
  return round_half_away(ratio * static_cast<double>(i));
}

SentAligner::SentAligner(std::vector<Index> source_sentence_lengths, Index source_length, bool strict)
    : source_length_(source_length), strict_(strict) {
  if (source_sentence_lengths.empty()) throw std::invalid_argument("SentAligner: no source sentences");
  if (source_length < 1) throw std::invalid_argument("SentAligner: empty source");
  prefix_.assign(1, 0);
  for (Index len : source_sentence_lengths) prefix_.push_back(prefix_.back() + len);
}

Index SentAligner::step(bool previous_was_separator) {
  Index next = 0;
  if (!started_) {
    started_ = true;
    next = 1;
  } else if (previous_was_separator) {
    const auto sentences = static_cast<Index>(prefix_.size()) - 1;
    if (separators_ + 1 >= sentences) {
      if (strict_) throw SentenceOverflow();
      next = source_length_;
    } else {
      ++separators_;
      next = prefix_[static_cast<size_t>(separators_)] + separators_ + 1;
    }
  } else {
    next = anchor_ + 1;
  }
  anchor_ = std::clamp<Index>(next, 1, source_length_);
  return anchor_;
}

std::string_view to_string(AlignMode mode) {
  switch (mode) {
    case AlignMode::Identity: return "identity";
    case AlignMode::LinearTrain: return "linear";
    case AlignMode::Ratio: return "ratio";
    case AlignMode::SentAlign: return "sent";
  }
  return "identity";
}

AlignMode parse_align_mode(std::string_view name) {
  if (name == "identity") return AlignMode::Identity;
  if (name == "linear") return AlignMode::LinearTrain;
  if (name == "ratio") return AlignMode::Ratio;
  if (name == "sent") return AlignMode::SentAlign;
  throw std::invalid_argument("unknown alignment mode: " + std::string(name));
}

Aligner Aligner::identity(Index source_length) {
  Aligner a;
  a.mode_ = AlignMode::Identity;
  a.source_length_ = source_length;
  return a;
}

Aligner Aligner::ratio(double ratio, Index source_length) {
  if (!(ratio > 0.0)) throw std::invalid_argument("Aligner::ratio: ratio must be positive");
  Aligner a;
  a.mode_ = AlignMode::Ratio;
  a.ratio_ = ratio;
  a.source_length_ = source_length;
  return a;
}

Aligner Aligner::sent_align(std::vector<Index> source_sentence_lengths, Index source_length, bool strict) {
  Aligner a;
  a.mode_ = AlignMode::SentAlign;
  a.source_length_ = source_length;
  a.sent_ = SentAligner(std::move(source_sentence_lengths), source_length, strict);
  return a;
}

Index Aligner::next(bool previous_was_separator) {
  ++position_;
  switch (mode_) {
    case AlignMode::Identity:
    case AlignMode::LinearTrain:
      return std::clamp<Index>(position_, 1, source_length_);
    case AlignMode::Ratio:
      return std::clamp<Index>(ratio_align(position_, ratio_), 1, source_length_);
    case AlignMode::SentAlign:
      return sent_.step(previous_was_separator);
  }
  return 1;
}

std::vector<Index> linear_anchors(Index target_length, Index source_length) {
  std::vector<Index> anchors(static_cast<size_t>(target_length));
  for (Index i = 1; i <= target_length; ++i) anchors[static_cast<size_t>(i - 1)] = linear_align(i, target_length, source_length);
  return anchors;
}

std::vector<Index> replay_anchors(Aligner aligner, std::span<const int> decoder_input, int separator_id) {
  std::vector<Index> anchors;
  anchors.reserve(decoder_input.size());
  for (size_t i = 0; i < decoder_input.size(); ++i) {
    anchors.push_back(aligner.next(i > 0 && decoder_input[i] == separator_id));
  }
  return anchors;
}

}  // namespace docwin
