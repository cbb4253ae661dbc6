#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "docwin/alignment.hpp"
#include "docwin/attention.hpp"
#include "docwin/autograd.hpp"
#include "docwin/document.hpp"

namespace docwin {

enum class PosEnc { Absolute, Relative };

std::string_view to_string(PosEnc mode);
PosEnc parse_pos_enc(std::string_view name);

struct ModelConfig {
  Index vocab_size = 0;
  Index d_model = 64;
  Index heads = 4;
  Index enc_layers = 2;
  Index dec_layers = 2;
  Index ffn_dim = 128;
  AttentionVariant enc_self = AttentionVariant::Full;
  AttentionVariant dec_self = AttentionVariant::Full;
  AttentionVariant cross = AttentionVariant::Full;
  Index window = 0;
  PosEnc pos_enc = PosEnc::Absolute;
  AlignMode align = AlignMode::SentAlign;  // decode-time cross-attention anchors
  double dropout = 0.1;
  double label_smoothing = 0.1;

  /// Same variant at every site; LST keeps full cross-attention.
  void set_variant(AttentionVariant variant);
  [[nodiscard]] bool uses_window() const;
  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  [[nodiscard]] nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

/// Named dense parameters in a fixed registration order.
class ModelParams {
 public:
  Index add(std::string name, Matrix value);
  [[nodiscard]] Index index(const std::string& name) const;
  [[nodiscard]] bool contains(const std::string& name) const { return lookup_.count(name) > 0; }

  Matrix& operator[](Index i) { return values_[static_cast<size_t>(i)]; }
  const Matrix& operator[](Index i) const { return values_[static_cast<size_t>(i)]; }
  Matrix& at(const std::string& name) { return values_[static_cast<size_t>(index(name))]; }
  [[nodiscard]] const Matrix& at(const std::string& name) const { return values_[static_cast<size_t>(index(name))]; }

  [[nodiscard]] Index size() const { return static_cast<Index>(values_.size()); }
  [[nodiscard]] const std::string& name(Index i) const { return names_[static_cast<size_t>(i)]; }
  [[nodiscard]] Index parameter_count() const;
  [[nodiscard]] bool all_finite() const;

  /// Zero matrices shaped like every parameter.
  [[nodiscard]] std::vector<Matrix> zeros_like() const;

  [[nodiscard]] nlohmann::json to_json() const;
  static ModelParams from_json(const nlohmann::json& j);
  bool operator==(const ModelParams&) const = default;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::unordered_map<std::string, Index> lookup_;
};

/// Cross-attention probabilities, [decoder layer][head] -> I x J.
struct AttentionTrace {
  std::vector<std::vector<Matrix>> cross;
};

struct ForwardOptions {
  bool training = false;  // enables dropout
  std::mt19937_64* rng = nullptr;
  bool dense_reference = false;  // explicit masks instead of gathered keys
  /// 1-based cross-attention anchors per decoder position; linear alignment when null.
  const std::vector<Index>* cross_anchors = nullptr;
  AttentionTrace* trace = nullptr;
};

/// Pre-norm encoder-decoder transformer with configurable attention sites.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);
  Model(ModelConfig config, ModelParams params);

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  ModelParams& params() { return params_; }
  [[nodiscard]] const ModelParams& params() const { return params_; }

  /// Binds parameters to a tape; gradients flow into `grads` when non-null.
  class Binding {
   public:
    Binding(ag::Tape& tape, const ModelParams& params, std::vector<Matrix>* grads);
    ag::Var operator()(const std::string& name);
    ag::Tape& tape() { return *tape_; }

   private:
    ag::Tape* tape_;
    const ModelParams* params_;
    std::vector<Matrix>* grads_;
    std::vector<ag::Var> vars_;
  };

  /// Encoder states, J x d.
  ag::Var encode(Binding& b, std::span<const TokenId> source, const ForwardOptions& options) const;

  /// Per-position log-probabilities, I x V, for decoder inputs given encoder states.
  ag::Var decode(Binding& b, ag::Var memory, std::span<const TokenId> decoder_input,
                 const ForwardOptions& options) const;

  /// Convenience: log-probabilities of every next token, no gradients.
  [[nodiscard]] Matrix log_probs(std::span<const TokenId> source, std::span<const TokenId> decoder_input,
                                 const ForwardOptions& options = {}) const;

 private:
  ModelConfig config_;
  ModelParams params_;
};

/// Decoder input for teacher forcing: `<eos>` as the start token followed by target[0..I-2].
std::vector<TokenId> shift_right(std::span<const TokenId> target);

/// Sinusoidal position table, length x d.
Matrix sinusoidal_positions(Index length, Index d);

/// One training pair; the target ends with `<eos>`.
struct Example {
  std::vector<TokenId> source;
  std::vector<TokenId> target;
};

/// Context mode: k >= 0 builds local-context pairs per sentence; kFullDocument uses whole documents.
inline constexpr Index kFullDocument = -1;

std::vector<Example> make_examples(const Corpus& corpus, const Vocab& vocab, Index context);

struct LossStats {
  double smoothed = 0.0;  // summed label-smoothed NLL
  double nll = 0.0;       // summed plain NLL
  Index tokens = 0;
};

/// Forward (and optionally backward with the given gradient scale) over one example.
LossStats example_loss(const Model& model, const Example& example, std::vector<Matrix>* grads, double grad_scale,
                       const ForwardOptions& options = {});

/// Per-token mean smoothed NLL of the local-context objective with context size k.
double local_context_loss(const Model& model, const Corpus& corpus, const Vocab& vocab, Index k);
/// Per-token mean smoothed NLL over whole documents.
double full_document_loss(const Model& model, const Corpus& corpus, const Vocab& vocab);

/// exp of the plain per-token NLL.
double perplexity(const Model& model, std::span<const Example> examples);

/// Mean J/I over examples, used by ratio alignment at decode time.
double example_ratio(std::span<const Example> examples);

}  // namespace docwin
