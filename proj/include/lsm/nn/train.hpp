#pragma once

#include "lsm/nn/model.hpp"
#include "lsm/reduce.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lsm::nn {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 0;  // shuffling

  bool operator==(const TrainConfig&) const = default;
};

/// Flattened model inputs (each of spec.input_size()) with binary labels.
struct Dataset {
  std::vector<std::vector<double>> inputs;
  std::vector<int> labels;

  std::size_t size() const { return inputs.size(); }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct Checkpoint {
  ModelSpec spec;
  TrainConfig config;
  std::optional<Standardizer> standardizer;  // per-band input statistics
  std::string pca_hash;                      // empty when no reducer is used
  std::vector<double> weights;               // float32-representable
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;                // 0 = initialization
  std::map<std::string, std::string> meta;
};

/// Mean binary cross-entropy of the network over a dataset.
double mean_loss(const ModelSpec& spec, std::span<const double> weights, const Dataset& data);

/// Adam with per-epoch seeded shuffling and early stopping on validation
/// loss; the best-validation weights are restored. Deterministic in
/// (spec.seed, config, data).
Checkpoint train(const ModelSpec& spec, const Dataset& train_set, const Dataset& val_set, const TrainConfig& config);

std::vector<double> predict_batch(const Checkpoint& ckpt, const std::vector<std::vector<double>>& inputs);

/// Writes <base>.json and <base>.bin.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& base);
Checkpoint load_checkpoint(const std::filesystem::path& base);

std::string weights_to_bin(std::span<const double> weights);
std::vector<double> weights_from_bin(const std::string& bytes, std::size_t expected_count);

inline constexpr char kWeightMagic[4] = {'L', 'S', 'M', 'W'};
inline constexpr unsigned char kWeightFormatVersion = 1;

} // namespace lsm::nn
