#include "docwin/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace docwin {

nlohmann::json TrainConfig::to_json() const {
  return {{"max_epochs", max_epochs}, {"patience", patience},   {"batch_tokens", batch_tokens},
          {"peak_lr", peak_lr},       {"warmup_steps", warmup_steps}, {"beta1", beta1},
          {"beta2", beta2},           {"adam_eps", adam_eps},   {"clip_norm", clip_norm},
          {"context", context},       {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.batch_tokens = j.value("batch_tokens", c.batch_tokens);
  c.peak_lr = j.value("peak_lr", c.peak_lr);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.context = j.value("context", c.context);
  c.seed = j.value("seed", c.seed);
  if (c.max_epochs < 1 || c.patience < 1 || c.batch_tokens < 1 || c.warmup_steps < 1 || !(c.peak_lr > 0.0)) {
    throw std::invalid_argument("training config: epochs, patience, batch size, warmup and lr must be positive");
  }
  if (c.context < kFullDocument) throw std::invalid_argument("training config: context must be >= 0 or -1");
  return c;
}

double learning_rate(const TrainConfig& config, Index step) {
  const double s = static_cast<double>(std::max<Index>(step, 1));
  const double w = static_cast<double>(config.warmup_steps);
  return config.peak_lr * std::min(s / w, std::sqrt(w / s));
}

Adam::Adam(const ModelParams& params, const TrainConfig& config)
    : config_(config), m_(params.zeros_like()), v_(params.zeros_like()) {}

double Adam::step(ModelParams& params, const std::vector<Matrix>& grads) {
  ++steps_;
  const double lr = learning_rate(config_, steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (Index i = 0; i < params.size(); ++i) {
    auto& m = m_[static_cast<size_t>(i)];
    auto& v = v_[static_cast<size_t>(i)];
    const Matrix& g = grads[static_cast<size_t>(i)];
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    params[i].array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config_.adam_eps);
  }
  return lr;
}

double clip_gradients(std::vector<Matrix>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    for (auto& g : grads) g *= max_norm / norm;
  }
  return norm;
}

std::vector<std::vector<size_t>> make_batches(std::span<const Example> examples, Index batch_tokens) {
  std::vector<size_t> order(examples.size());
  std::iota(order.begin(), order.end(), size_t{0});
  auto length = [&](size_t i) { return examples[i].source.size() + examples[i].target.size(); };
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return length(a) < length(b); });
  std::vector<std::vector<size_t>> batches;
  Index tokens = 0;
  for (size_t i : order) {
    const auto n = static_cast<Index>(examples[i].target.size());
    if (batches.empty() || (tokens + n > batch_tokens && !batches.back().empty())) {
      batches.emplace_back();
      tokens = 0;
    }
    batches.back().push_back(i);
    tokens += n;
  }
  return batches;
}

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch}, {"steps", steps}, {"train_loss", train_loss},
          {"valid_ppl", valid_ppl}, {"lr", lr}, {"best", best}};
}

TrainResult train(Model& model, std::span<const Example> train_set, std::span<const Example> valid_set,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  if (train_set.empty() || valid_set.empty()) throw std::invalid_argument("train: empty training or validation set");
  std::mt19937_64 rng(config.seed);
  Adam adam(model.params(), config);
  auto batches = make_batches(train_set, config.batch_tokens);

  TrainResult result;
  result.best_params = model.params();
  result.best_valid_ppl = std::numeric_limits<double>::infinity();
  Index bad_epochs = 0;
  ForwardOptions options;
  options.training = true;
  options.rng = &rng;
  double lr = 0.0;

  for (Index epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(batches.begin(), batches.end(), rng);
    double epoch_loss = 0.0;
    Index epoch_tokens = 0;
    for (const auto& batch : batches) {
      Index tokens = 0;
      for (size_t i : batch) tokens += static_cast<Index>(train_set[i].target.size());
      std::vector<Matrix> grads = model.params().zeros_like();
      for (size_t i : batch) {
        LossStats s;
        try {
          s = example_loss(model, train_set[i], &grads, 1.0 / static_cast<double>(tokens), options);
        } catch (const std::domain_error& e) {
          throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(adam.steps() + 1) + ": " + e.what());
        }
        epoch_loss += s.smoothed;
        epoch_tokens += s.tokens;
      }
      const double norm = clip_gradients(grads, config.clip_norm);
      if (!std::isfinite(norm)) {
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ": non-finite gradient");
      }
      lr = adam.step(model.params(), grads);
    }
    if (!model.params().all_finite()) {
      throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ": non-finite parameters");
    }

    EpochRecord record;
    record.epoch = epoch;
    record.steps = adam.steps();
    record.train_loss = epoch_loss / static_cast<double>(epoch_tokens);
    record.valid_ppl = perplexity(model, valid_set);
    record.lr = lr;
    if (!std::isfinite(record.train_loss) || !std::isfinite(record.valid_ppl)) {
      throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ": loss is not finite");
    }
    if (record.valid_ppl < result.best_valid_ppl) {
      record.best = true;
      result.best_valid_ppl = record.valid_ppl;
      result.best_epoch = epoch;
      result.best_params = model.params();
      bad_epochs = 0;
    } else {
      ++bad_epochs;
    }
    result.log.push_back(record);
    if (on_epoch) on_epoch(record);
    if (bad_epochs >= config.patience) {
      result.stopped_early = true;
      break;
    }
  }
  model.params() = result.best_params;
  return result;
}

std::string log_to_jsonl(const std::vector<EpochRecord>& log) {
  std::string out;
  for (const auto& r : log) out += r.to_json().dump() + "\n";
  return out;
}

nlohmann::json Checkpoint::to_json() const {
  return {{"format", "docwin-checkpoint"}, {"version", 1},     {"config", config.to_json()},
          {"vocab", vocab.to_json()},      {"context", context}, {"ratio", ratio},
          {"params", params.to_json()}};
}

Checkpoint Checkpoint::from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "docwin-checkpoint") throw std::invalid_argument("not a checkpoint file");
  if (j.value("version", 0) != 1) throw std::invalid_argument("unsupported checkpoint version");
  Checkpoint c;
  c.config = ModelConfig::from_json(j.at("config"));
  c.vocab = Vocab::from_json(j.at("vocab"));
  c.context = j.at("context").get<Index>();
  c.ratio = j.at("ratio").get<double>();
  c.params = ModelParams::from_json(j.at("params"));
  Model check(c.config, c.params);
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << to_json().dump() << '\n';
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  return from_json(nlohmann::json::parse(in));
}

}  // namespace docwin
