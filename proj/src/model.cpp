#include "docwin/model.hpp"

#include <cmath>
#include <stdexcept>

namespace docwin {

std::string_view to_string(PosEnc mode) { return mode == PosEnc::Absolute ? "abs" : "rel"; }

PosEnc parse_pos_enc(std::string_view name) {
  if (name == "abs" || name == "absolute") return PosEnc::Absolute;
  if (name == "rel" || name == "relative") return PosEnc::Relative;
  throw std::invalid_argument("unknown positional encoding: " + std::string(name));
}

void ModelConfig::set_variant(AttentionVariant variant) {
  enc_self = variant;
  dec_self = variant;
  cross = variant == AttentionVariant::Lst ? AttentionVariant::Full : variant;
}

bool ModelConfig::uses_window() const {
  return enc_self == AttentionVariant::Window || dec_self == AttentionVariant::Window ||
         cross == AttentionVariant::Window;
}

void ModelConfig::validate() const {
  if (vocab_size < 5) throw std::invalid_argument("model: vocab_size must cover the reserved tokens");
  if (d_model < 1 || heads < 1 || d_model % heads != 0) {
    throw std::invalid_argument("model: d_model must be a positive multiple of heads");
  }
  if (enc_layers < 1 || dec_layers < 1 || ffn_dim < 1) throw std::invalid_argument("model: layer sizes must be positive");
  if ((uses_window() || pos_enc == PosEnc::Relative) && window < 1) {
    throw std::invalid_argument("model: window attention and relative positions need window >= 1");
  }
  if (cross == AttentionVariant::Lst) throw std::invalid_argument("model: LST applies to self-attention only");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("model: dropout must lie in [0, 1)");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    throw std::invalid_argument("model: label smoothing must lie in [0, 1)");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size},
          {"d_model", d_model},
          {"heads", heads},
          {"enc_layers", enc_layers},
          {"dec_layers", dec_layers},
          {"ffn_dim", ffn_dim},
          {"enc_self", to_string(enc_self)},
          {"dec_self", to_string(dec_self)},
          {"cross", to_string(cross)},
          {"window", window},
          {"pos_enc", to_string(pos_enc)},
          {"align", to_string(align)},
          {"dropout", dropout},
          {"label_smoothing", label_smoothing}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.enc_layers = j.value("enc_layers", c.enc_layers);
  c.dec_layers = j.value("dec_layers", c.dec_layers);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  if (j.contains("variant")) c.set_variant(parse_attention_variant(j.at("variant").get<std::string>()));
  if (j.contains("enc_self")) c.enc_self = parse_attention_variant(j.at("enc_self").get<std::string>());
  if (j.contains("dec_self")) c.dec_self = parse_attention_variant(j.at("dec_self").get<std::string>());
  if (j.contains("cross")) c.cross = parse_attention_variant(j.at("cross").get<std::string>());
  c.window = j.value("window", c.window);
  if (j.contains("pos_enc")) c.pos_enc = parse_pos_enc(j.at("pos_enc").get<std::string>());
  if (j.contains("align")) c.align = parse_align_mode(j.at("align").get<std::string>());
  c.dropout = j.value("dropout", c.dropout);
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  return c;
}

Index ModelParams::add(std::string name, Matrix value) {
  if (lookup_.count(name) > 0) throw std::invalid_argument("duplicate parameter " + name);
  const auto id = static_cast<Index>(values_.size());
  lookup_.emplace(name, id);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return id;
}

Index ModelParams::index(const std::string& name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

Index ModelParams::parameter_count() const {
  Index n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

bool ModelParams::all_finite() const {
  for (const auto& v : values_) {
    if (!v.allFinite()) return false;
  }
  return true;
}

std::vector<Matrix> ModelParams::zeros_like() const {
  std::vector<Matrix> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.push_back(Matrix::Zero(v.rows(), v.cols()));
  return out;
}

nlohmann::json ModelParams::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (size_t i = 0; i < values_.size(); ++i) {
    const Matrix& m = values_[i];
    std::vector<double> data(static_cast<size_t>(m.size()));
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) data[static_cast<size_t>(r * m.cols() + c)] = m(r, c);
    }
    arr.push_back({{"name", names_[i]}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}});
  }
  return arr;
}

ModelParams ModelParams::from_json(const nlohmann::json& j) {
  ModelParams params;
  for (const auto& entry : j) {
    const auto rows = entry.at("rows").get<Index>();
    const auto cols = entry.at("cols").get<Index>();
    const auto data = entry.at("data").get<std::vector<double>>();
    if (static_cast<Index>(data.size()) != rows * cols) throw std::invalid_argument("checkpoint: parameter size mismatch");
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
      for (Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<size_t>(r * cols + c)];
    }
    params.add(entry.at("name").get<std::string>(), std::move(m));
  }
  return params;
}

namespace {

Matrix xavier(Index rows, Index cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  }
  return m;
}

Matrix gaussian(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  }
  return m;
}

void add_norm(ModelParams& p, const std::string& name, Index d) {
  p.add(name + ".g", Matrix::Ones(1, d));
  p.add(name + ".b", Matrix::Zero(1, d));
}

void add_attention(ModelParams& p, const std::string& name, const ModelConfig& c, AttentionVariant variant,
                   bool self, std::mt19937_64& rng) {
  const Index d = c.d_model;
  p.add(name + ".wq", xavier(d, d, rng));
  p.add(name + ".wk", xavier(d, d, rng));
  p.add(name + ".wv", xavier(d, d, rng));
  Matrix wo = xavier(d, d, rng);
  if (variant == AttentionVariant::Lst) {
    Matrix wc(2 * d, d);
    wc << 0.5 * wo, 0.5 * wo;
    p.add(name + ".wc", std::move(wc));
  } else {
    p.add(name + ".wo", std::move(wo));
  }
  if (self && c.pos_enc == PosEnc::Relative) p.add(name + ".rel", Matrix::Zero(c.heads, 2 * c.window + 1));
}

void add_ffn(ModelParams& p, const std::string& name, const ModelConfig& c, std::mt19937_64& rng) {
  p.add(name + ".w1", xavier(c.d_model, c.ffn_dim, rng));
  p.add(name + ".b1", Matrix::Zero(1, c.ffn_dim));
  p.add(name + ".w2", xavier(c.ffn_dim, c.d_model, rng));
  p.add(name + ".b2", Matrix::Zero(1, c.d_model));
}

ModelParams init_params(const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams p;
  const double embed_std = 1.0 / std::sqrt(static_cast<double>(c.d_model));
  p.add("enc.embed", gaussian(c.vocab_size, c.d_model, embed_std, rng));
  p.add("dec.embed", gaussian(c.vocab_size, c.d_model, embed_std, rng));
  for (Index l = 0; l < c.enc_layers; ++l) {
    const std::string base = "enc." + std::to_string(l);
    add_norm(p, base + ".ln1", c.d_model);
    add_attention(p, base + ".self", c, c.enc_self, true, rng);
    add_norm(p, base + ".ln2", c.d_model);
    add_ffn(p, base + ".ffn", c, rng);
  }
  add_norm(p, "enc.ln", c.d_model);
  for (Index l = 0; l < c.dec_layers; ++l) {
    const std::string base = "dec." + std::to_string(l);
    add_norm(p, base + ".ln1", c.d_model);
    add_attention(p, base + ".self", c, c.dec_self, true, rng);
    add_norm(p, base + ".ln2", c.d_model);
    add_attention(p, base + ".cross", c, c.cross, false, rng);
    add_norm(p, base + ".ln3", c.d_model);
    add_ffn(p, base + ".ffn", c, rng);
  }
  add_norm(p, "dec.ln", c.d_model);
  p.add("out.w", xavier(c.d_model, c.vocab_size, rng));
  p.add("out.b", Matrix::Zero(1, c.vocab_size));
  return p;
}

}  // namespace

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  params_ = init_params(config_, seed);
}

Model::Model(ModelConfig config, ModelParams params) : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const ModelParams reference = init_params(config_, 0);
  if (reference.size() != params_.size()) throw std::invalid_argument("checkpoint: parameter set does not match config");
  for (Index i = 0; i < reference.size(); ++i) {
    if (reference.name(i) != params_.name(i) || reference[i].rows() != params_[i].rows() ||
        reference[i].cols() != params_[i].cols()) {
      throw std::invalid_argument("checkpoint: parameter " + reference.name(i) + " does not match config");
    }
  }
}

Model::Binding::Binding(ag::Tape& tape, const ModelParams& params, std::vector<Matrix>* grads)
    : tape_(&tape), params_(&params), grads_(grads), vars_(static_cast<size_t>(params.size())) {
  if (grads_ != nullptr && static_cast<Index>(grads_->size()) != params.size()) {
    throw std::invalid_argument("gradient buffer does not match parameters");
  }
}

ag::Var Model::Binding::operator()(const std::string& name) {
  const Index i = params_->index(name);
  ag::Var& v = vars_[static_cast<size_t>(i)];
  if (!v.valid()) {
    v = grads_ != nullptr ? tape_->leaf((*params_)[i], &(*grads_)[static_cast<size_t>(i)])
                          : tape_->constant((*params_)[i]);
  }
  return v;
}

Matrix sinusoidal_positions(Index length, Index d) {
  Matrix pe(length, d);
  for (Index pos = 0; pos < length; ++pos) {
    for (Index i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe(pos, i) = std::sin(angle);
      if (i + 1 < d) pe(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

std::vector<TokenId> shift_right(std::span<const TokenId> target) {
  std::vector<TokenId> input;
  input.reserve(target.size());
  input.push_back(special::kEosId);
  if (!target.empty()) input.insert(input.end(), target.begin(), target.end() - 1);
  return input;
}

namespace {

using ag::Var;

struct Site {
  AttentionVariant variant = AttentionVariant::Full;
  bool causal = false;
  bool relative = false;
  std::vector<Index> anchors;  // window anchors, 1-based
  const SentenceMap* queries = nullptr;
  const SentenceMap* keys = nullptr;
};

class Forward {
 public:
  Forward(const ModelConfig& c, Model::Binding& b, const ForwardOptions& o) : c_(c), b_(b), o_(o) {}

  Var drop(Var x) {
    if (!o_.training || c_.dropout <= 0.0) return x;
    if (o_.rng == nullptr) throw std::invalid_argument("training forward pass needs an rng");
    return ag::dropout(b_.tape(), x, c_.dropout, *o_.rng);
  }

  Var norm(Var x, const std::string& name) { return ag::layer_norm(b_.tape(), x, b_(name + ".g"), b_(name + ".b")); }

  Var ffn(Var x, const std::string& name) {
    auto& t = b_.tape();
    Var h = ag::relu(t, ag::add_row(t, ag::matmul(t, x, b_(name + ".w1")), b_(name + ".b1")));
    return ag::add_row(t, ag::matmul(t, drop(h), b_(name + ".w2")), b_(name + ".b2"));
  }

  Var embed(std::span<const TokenId> ids, const std::string& table) {
    auto& t = b_.tape();
    for (TokenId id : ids) {
      if (id < 0 || id >= c_.vocab_size) throw std::out_of_range("token id outside vocabulary");
    }
    Var x = ag::scale(t, ag::gather_rows(t, b_(table), ids), std::sqrt(static_cast<double>(c_.d_model)));
    if (c_.pos_enc == PosEnc::Absolute) {
      x = ag::add_constant(t, x, sinusoidal_positions(static_cast<Index>(ids.size()), c_.d_model));
    }
    return drop(x);
  }

  Var attention(const std::string& name, Var xq, Var xkv, const Site& site, std::vector<Matrix>* probs) {
    auto& t = b_.tape();
    const Index queries = t.value(xq).rows();
    const Index keys = t.value(xkv).rows();
    Var q = ag::matmul(t, xq, b_(name + ".wq"));
    Var k = ag::matmul(t, xkv, b_(name + ".wk"));
    Var v = ag::matmul(t, xkv, b_(name + ".wv"));
    const std::vector<Index> limits = site.causal ? causal_limits(queries) : std::vector<Index>{};
    const Mask causal = site.causal ? Mask::causal(queries, keys) : Mask(queries, keys);

    ag::BiasInput bias;
    if (site.relative) {
      bias.table = b_(name + ".rel");
      bias.radius = c_.window;
      bias.origins.resize(static_cast<size_t>(queries));
      for (Index i = 0; i < queries; ++i) bias.origins[static_cast<size_t>(i)] = i;
    }
    const ag::BiasInput* bias_ptr = site.relative ? &bias : nullptr;

    auto run = [&](KeyRanges ranges, const Mask& mask, std::vector<Matrix>* out) {
      if (o_.dense_reference) return ag::dense_attention(t, q, k, v, mask, c_.heads, bias_ptr, out);
      std::shared_ptr<RangeAttentionState> state;
      Var ctx = ag::range_attention(t, q, k, v, std::move(ranges), c_.heads, bias_ptr, out != nullptr ? &state : nullptr);
      if (out != nullptr) {
        for (Index h = 0; h < state->heads; ++h) {
          Matrix dense = Matrix::Zero(queries, keys);
          for (Index i = 0; i < queries; ++i) {
            const KeyRange r = state->ranges[static_cast<size_t>(i)];
            const auto row = state->row(h, i);
            for (Index j = 0; j < r.size(); ++j) dense(i, r.begin + j) = row[static_cast<size_t>(j)];
          }
          out->push_back(std::move(dense));
        }
      }
      return ctx;
    };

    switch (site.variant) {
      case AttentionVariant::Full: {
        Var ctx = run(full_ranges(queries, keys, limits), causal, probs);
        return ag::matmul(t, ctx, b_(name + ".wo"));
      }
      case AttentionVariant::Window: {
        WindowSpec spec{c_.window, site.anchors};
        Var ctx = run(window_ranges(spec, keys, limits), window_mask(spec, keys, limits), probs);
        return ag::matmul(t, ctx, b_(name + ".wo"));
      }
      case AttentionVariant::Lst: {
        Var restricted = run(sentence_ranges(*site.queries, *site.keys, limits),
                             sentence_mask(*site.queries, *site.keys) & causal, nullptr);
        Var full = run(full_ranges(queries, keys, limits), causal, probs);
        const Var parts[] = {restricted, full};
        return ag::matmul(t, ag::concat_cols(t, parts), b_(name + ".wc"));
      }
    }
    throw std::logic_error("unhandled attention variant");
  }

 private:
  const ModelConfig& c_;
  Model::Binding& b_;
  const ForwardOptions& o_;
};

}  // namespace

Var Model::encode(Binding& b, std::span<const TokenId> source, const ForwardOptions& options) const {
  if (source.empty()) throw std::invalid_argument("empty source sequence");
  auto& t = b.tape();
  Forward f(config_, b, options);
  const auto length = static_cast<Index>(source.size());
  const SentenceMap map = sentence_map(source);
  Site site;
  site.variant = config_.enc_self;
  site.relative = config_.pos_enc == PosEnc::Relative;
  site.anchors = WindowSpec::identity(length, config_.window).anchors;
  site.queries = &map;
  site.keys = &map;

  Var x = f.embed(source, "enc.embed");
  for (Index l = 0; l < config_.enc_layers; ++l) {
    const std::string base = "enc." + std::to_string(l);
    Var h = f.norm(x, base + ".ln1");
    x = ag::add(t, x, f.drop(f.attention(base + ".self", h, h, site, nullptr)));
    h = f.norm(x, base + ".ln2");
    x = ag::add(t, x, f.drop(f.ffn(h, base + ".ffn")));
  }
  return f.norm(x, "enc.ln");
}

Var Model::decode(Binding& b, Var memory, std::span<const TokenId> decoder_input, const ForwardOptions& options) const {
  if (decoder_input.empty()) throw std::invalid_argument("empty decoder input");
  auto& t = b.tape();
  Forward f(config_, b, options);
  const auto length = static_cast<Index>(decoder_input.size());
  const Index source_length = t.value(memory).rows();
  const SentenceMap map = sentence_map(decoder_input);

  Site self;
  self.variant = config_.dec_self;
  self.causal = true;
  self.relative = config_.pos_enc == PosEnc::Relative;
  self.anchors = WindowSpec::identity(length, config_.window).anchors;
  self.queries = &map;
  self.keys = &map;

  Site cross;
  cross.variant = config_.cross;
  if (options.cross_anchors != nullptr) {
    if (static_cast<Index>(options.cross_anchors->size()) != length) {
      throw std::invalid_argument("cross anchors must cover every decoder position");
    }
    cross.anchors = *options.cross_anchors;
  } else {
    cross.anchors = linear_anchors(length, source_length);
  }

  if (options.trace != nullptr) options.trace->cross.clear();
  Var x = f.embed(decoder_input, "dec.embed");
  for (Index l = 0; l < config_.dec_layers; ++l) {
    const std::string base = "dec." + std::to_string(l);
    Var h = f.norm(x, base + ".ln1");
    x = ag::add(t, x, f.drop(f.attention(base + ".self", h, h, self, nullptr)));
    h = f.norm(x, base + ".ln2");
    std::vector<Matrix>* probs = nullptr;
    if (options.trace != nullptr) probs = &options.trace->cross.emplace_back();
    x = ag::add(t, x, f.drop(f.attention(base + ".cross", h, memory, cross, probs)));
    h = f.norm(x, base + ".ln3");
    x = ag::add(t, x, f.drop(f.ffn(h, base + ".ffn")));
  }
  x = f.norm(x, "dec.ln");
  Var logits = ag::add_row(t, ag::matmul(t, x, b("out.w")), b("out.b"));
  return ag::log_softmax(t, logits);
}

Matrix Model::log_probs(std::span<const TokenId> source, std::span<const TokenId> decoder_input,
                        const ForwardOptions& options) const {
  ag::Tape tape(false);
  Binding b(tape, params_, nullptr);
  Var memory = encode(b, source, options);
  return tape.value(decode(b, memory, decoder_input, options));
}

std::vector<Example> make_examples(const Corpus& corpus, const Vocab& vocab, Index context) {
  if (context < kFullDocument) throw std::invalid_argument("context must be >= 0 or full-document");
  std::vector<Example> examples;
  auto push = [&](const ContextInput& input, const Sentence& current) {
    Example ex;
    ex.source = vocab.encode(input.source);
    ex.target = vocab.encode(input.target_prefix);
    const auto cur = vocab.encode(current);
    ex.target.insert(ex.target.end(), cur.begin(), cur.end());
    ex.target.push_back(special::kEosId);
    examples.push_back(std::move(ex));
  };
  for (const auto& doc : corpus) {
    if (!doc.parallel()) throw std::invalid_argument("document " + doc.doc_id + " has no target side");
    if (context == kFullDocument) {
      push(full_document_input(doc), doc.target.back());
    } else {
      for (Index n = 1; n <= doc.size(); ++n) push(build_context_input(doc, n, context), doc.target[static_cast<size_t>(n - 1)]);
    }
  }
  return examples;
}

LossStats example_loss(const Model& model, const Example& example, std::vector<Matrix>* grads, double grad_scale,
                       const ForwardOptions& options) {
  ag::Tape tape(grads != nullptr);
  Model::Binding b(tape, model.params(), grads);
  const std::vector<TokenId> input = shift_right(example.target);
  Var memory = model.encode(b, example.source, options);
  Var logp = model.decode(b, memory, input, options);
  Var loss = ag::smoothed_nll(tape, logp, example.target, model.config().label_smoothing);

  LossStats stats;
  stats.smoothed = tape.value(loss)(0, 0);
  stats.tokens = static_cast<Index>(example.target.size());
  const Matrix& lp = tape.value(logp);
  for (Index i = 0; i < lp.rows(); ++i) stats.nll -= lp(i, example.target[static_cast<size_t>(i)]);
  if (grads != nullptr) tape.backward(ag::scale(tape, loss, grad_scale));
  return stats;
}

namespace {

double mean_loss(const Model& model, std::span<const Example> examples) {
  if (examples.empty()) throw std::invalid_argument("loss over an empty corpus");
  double total = 0.0;
  Index tokens = 0;
  for (const auto& ex : examples) {
    const LossStats s = example_loss(model, ex, nullptr, 0.0);
    total += s.smoothed;
    tokens += s.tokens;
  }
  return total / static_cast<double>(tokens);
}

}  // namespace

double local_context_loss(const Model& model, const Corpus& corpus, const Vocab& vocab, Index k) {
  if (k < 0) throw std::invalid_argument("local_context_loss: k must be >= 0");
  return mean_loss(model, make_examples(corpus, vocab, k));
}

double full_document_loss(const Model& model, const Corpus& corpus, const Vocab& vocab) {
  return mean_loss(model, make_examples(corpus, vocab, kFullDocument));
}

double perplexity(const Model& model, std::span<const Example> examples) {
  if (examples.empty()) throw std::invalid_argument("perplexity over an empty set");
  double nll = 0.0;
  Index tokens = 0;
  for (const auto& ex : examples) {
    const LossStats s = example_loss(model, ex, nullptr, 0.0);
    nll += s.nll;
    tokens += s.tokens;
  }
  return std::exp(nll / static_cast<double>(tokens));
}

double example_ratio(std::span<const Example> examples) {
  std::vector<std::pair<Index, Index>> lengths;
  lengths.reserve(examples.size());
  for (const auto& ex : examples) {
    lengths.emplace_back(static_cast<Index>(ex.source.size()), static_cast<Index>(ex.target.size()));
  }
  return train_ratio(lengths);
}

}  // namespace docwin
