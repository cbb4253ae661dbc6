#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "docwin/decoding.hpp"
#include "docwin/model.hpp"
#include "docwin/training.hpp"

namespace docwin {

enum class Strategy { Fsd, Sd };

std::string_view to_string(Strategy strategy);
Strategy parse_strategy(std::string_view name);

struct DecodeConfig {
  Strategy strategy = Strategy::Fsd;
  Index k = 0;  // SD: context sentences; FSD: segment size, 0 for the whole document
  Index beam = 12;
  double alpha = 1.0;

  [[nodiscard]] nlohmann::json to_json() const;
  static DecodeConfig from_json(const nlohmann::json& j);
  bool operator==(const DecodeConfig&) const = default;
};

struct ExperimentConfig {
  std::string task;
  std::string train_path;
  std::string valid_path;
  std::string test_path;
  ModelConfig model;
  TrainConfig training;
  DecodeConfig decode;
  Index max_target_tokens = 1000;  // full-document training splits longer documents
  std::uint64_t seed = 1;
  std::string out_dir;

  [[nodiscard]] nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  bool operator==(const ExperimentConfig&) const = default;
};

struct TrainOutcome {
  Checkpoint checkpoint;
  TrainResult result;
  std::vector<std::string> warnings;
};

/// Builds the vocabulary and training pairs, then trains with the experiment's seed.
TrainOutcome train_experiment(const ExperimentConfig& config, const Corpus& train_corpus, const Corpus& valid_corpus,
                              const EpochCallback& on_epoch = {});

struct TranslationOutcome {
  Corpus hypotheses;  // source copied, target holds the translation
  Index misaligned_documents = 0;
  std::vector<std::string> warnings;
};

TranslationOutcome translate_corpus(const Checkpoint& checkpoint, const Corpus& corpus, const DecodeConfig& decode);

}  // namespace docwin
