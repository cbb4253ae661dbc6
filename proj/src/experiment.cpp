#include "docwin/experiment.hpp"

#include <fstream>
#include <stdexcept>

namespace docwin {

std::string_view to_string(Strategy strategy) { return strategy == Strategy::Fsd ? "fsd" : "sd"; }

Strategy parse_strategy(std::string_view name) {
  if (name == "fsd") return Strategy::Fsd;
  if (name == "sd") return Strategy::Sd;
  throw std::invalid_argument("unknown decoding strategy: " + std::string(name));
}

nlohmann::json DecodeConfig::to_json() const {
  return {{"strategy", to_string(strategy)}, {"k", k}, {"beam", beam}, {"alpha", alpha}};
}

DecodeConfig DecodeConfig::from_json(const nlohmann::json& j) {
  DecodeConfig c;
  if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy").get<std::string>());
  c.k = j.value("k", c.k);
  c.beam = j.value("beam", c.beam);
  c.alpha = j.value("alpha", c.alpha);
  if (c.k < 0 || c.beam < 1 || c.alpha < 0.0) throw std::invalid_argument("decode config: k >= 0, beam >= 1, alpha >= 0");
  return c;
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"task", task},
          {"train", train_path},
          {"valid", valid_path},
          {"test", test_path},
          {"model", model.to_json()},
          {"training", training.to_json()},
          {"decode", decode.to_json()},
          {"max_target_tokens", max_target_tokens},
          {"seed", seed},
          {"out_dir", out_dir}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.task = j.value("task", c.task);
  c.train_path = j.value("train", c.train_path);
  c.valid_path = j.value("valid", c.valid_path);
  c.test_path = j.value("test", c.test_path);
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  if (j.contains("training")) c.training = TrainConfig::from_json(j.at("training"));
  if (j.contains("decode")) c.decode = DecodeConfig::from_json(j.at("decode"));
  c.max_target_tokens = j.value("max_target_tokens", c.max_target_tokens);
  c.seed = j.value("seed", c.seed);
  c.out_dir = j.value("out_dir", c.out_dir);
  if (c.max_target_tokens < 1) throw std::invalid_argument("max_target_tokens must be positive");
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  return from_json(nlohmann::json::parse(in));
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config " + path.string());
  out << to_json().dump(2) << '\n';
}

TrainOutcome train_experiment(const ExperimentConfig& config, const Corpus& train_corpus, const Corpus& valid_corpus,
                              const EpochCallback& on_epoch) {
  TrainOutcome outcome;
  Corpus train_docs;
  Corpus valid_docs;
  auto prepare = [&](const Corpus& in, Corpus& out) {
    for (const auto& doc : in) {
      if (config.training.context != kFullDocument) {
        out.push_back(doc);
        continue;
      }
      SplitResult split = split_document(doc, config.max_target_tokens);
      outcome.warnings.insert(outcome.warnings.end(), split.warnings.begin(), split.warnings.end());
      out.insert(out.end(), split.parts.begin(), split.parts.end());
    }
  };
  prepare(train_corpus, train_docs);
  prepare(valid_corpus, valid_docs);

  Corpus both = train_docs;
  both.insert(both.end(), valid_docs.begin(), valid_docs.end());
  Checkpoint& ck = outcome.checkpoint;
  ck.vocab = Vocab::build(both);
  ck.context = config.training.context;
  ck.config = config.model;
  ck.config.vocab_size = ck.vocab.size();

  const auto train_set = make_examples(train_docs, ck.vocab, ck.context);
  const auto valid_set = make_examples(valid_docs, ck.vocab, ck.context);
  ck.ratio = example_ratio(train_set);

  TrainConfig tc = config.training;
  tc.seed = config.seed;
  Model model(ck.config, config.seed);
  outcome.result = train(model, train_set, valid_set, tc, on_epoch);
  ck.params = model.params();
  return outcome;
}

TranslationOutcome translate_corpus(const Checkpoint& checkpoint, const Corpus& corpus, const DecodeConfig& decode) {
  const Model model(checkpoint.config, checkpoint.params);
  const ModelScorer scorer(model, checkpoint.ratio);
  BeamOptions options;
  options.beam = decode.beam;
  options.alpha = decode.alpha;
  TranslationOutcome outcome;
  for (const auto& doc : corpus) {
    const DecodeResult r = decode.strategy == Strategy::Fsd ? decode_fsd(scorer, checkpoint.vocab, doc, decode.k, options)
                                                            : decode_sd(scorer, checkpoint.vocab, doc, decode.k, options);
    Document hyp;
    hyp.doc_id = doc.doc_id;
    hyp.source = doc.source;
    hyp.target = r.sentences;
    if (r.misaligned) ++outcome.misaligned_documents;
    for (const auto& w : r.warnings) outcome.warnings.push_back(doc.doc_id + ": " + w);
    outcome.hypotheses.push_back(std::move(hyp));
  }
  return outcome;
}

}  // namespace docwin
