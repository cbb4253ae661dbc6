#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "docwin/model.hpp"

namespace docwin {

struct TrainConfig {
  Index max_epochs = 40;
  Index patience = 3;
  Index batch_tokens = 512;
  double peak_lr = 2e-3;
  Index warmup_steps = 100;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-9;
  double clip_norm = 1.0;  // 0 disables clipping
  Index context = kFullDocument;
  std::uint64_t seed = 1;

  [[nodiscard]] nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  bool operator==(const TrainConfig&) const = default;
};

/// Inverse-square-root schedule with linear warmup; step is 1-based.
double learning_rate(const TrainConfig& config, Index step);

class Adam {
 public:
  Adam(const ModelParams& params, const TrainConfig& config);
  /// One update with the given gradients; returns the learning rate used.
  double step(ModelParams& params, const std::vector<Matrix>& grads);
  [[nodiscard]] Index steps() const { return steps_; }

 private:
  TrainConfig config_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  Index steps_ = 0;
};

/// Rescales gradients in place so their global L2 norm is at most max_norm; returns the norm before clipping.
double clip_gradients(std::vector<Matrix>& grads, double max_norm);

/// Length-bucketed batches of example indices, each holding at most `batch_tokens` target tokens (min one example).
std::vector<std::vector<size_t>> make_batches(std::span<const Example> examples, Index batch_tokens);

struct EpochRecord {
  Index epoch = 0;
  Index steps = 0;
  double train_loss = 0.0;
  double valid_ppl = 0.0;
  double lr = 0.0;
  bool best = false;

  [[nodiscard]] nlohmann::json to_json() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  ModelParams best_params;
  Index best_epoch = 0;
  double best_valid_ppl = 0.0;
  bool stopped_early = false;
  std::vector<EpochRecord> log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains from `model`'s current parameters and returns the checkpoint with the best validation perplexity.
/// The model is left holding the best parameters.
TrainResult train(Model& model, std::span<const Example> train_set, std::span<const Example> valid_set,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

std::string log_to_jsonl(const std::vector<EpochRecord>& log);

/// Model, vocabulary and the data settings needed to decode with it.
struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  Vocab vocab;
  Index context = kFullDocument;
  double ratio = 1.0;  // mean source/target length ratio of the training pairs

  [[nodiscard]] nlohmann::json to_json() const;
  static Checkpoint from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace docwin
