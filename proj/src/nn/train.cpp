#include "lsm/nn/train.hpp"

#include "lsm/common.hpp"
#include "lsm/rng.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <json.hpp>
#include <numeric>

namespace lsm::nn {

double mean_loss(const ModelSpec& spec, std::span<const double> weights, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Tape t(false);
    Var logit = build_graph(t, spec, weights, data.inputs[i]);
    Var loss = bce_with_logit(t, logit, data.labels[i]);
    total += t.scalar(loss);
  }
  return total / static_cast<double>(data.size());
}

Checkpoint train(const ModelSpec& spec, const Dataset& train_set, const Dataset& val_set, const TrainConfig& config) {
  if (train_set.size() == 0) throw ValidationError("train: empty training set");
  if (config.batch_size == 0) throw ValidationError("train: batch_size must be positive");
  for (const auto* ds : {&train_set, &val_set}) {
    if (ds->inputs.size() != ds->labels.size()) throw ValidationError("train: input/label count mismatch");
    for (const auto& x : ds->inputs)
      if (x.size() != spec.input_size()) throw ValidationError("train: input shape mismatch");
  }

  Checkpoint ck;
  ck.spec = spec;
  ck.config = config;
  ck.weights = init_weights(spec);
  const std::size_t n_w = ck.weights.size();

  std::vector<double> w = ck.weights;
  std::vector<double> m(n_w, 0.0), v(n_w, 0.0);
  std::vector<double> best = w;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::size_t step = 0;
  Rng rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(n_w);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t s = start; s < end; ++s) {
        const std::size_t i = order[s];
        auto lg = backward(spec, w, train_set.inputs[i], train_set.labels[i], inv);
        if (!std::isfinite(lg.loss))
          throw RuntimeError("train: non-finite loss in epoch " + std::to_string(epoch));
        epoch_loss += lg.loss / inv;
        for (std::size_t k = 0; k < n_w; ++k) grad[k] += lg.grad[k];
      }
      ++step;
      const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      for (std::size_t k = 0; k < n_w; ++k) {
        m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * grad[k];
        v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * grad[k] * grad[k];
        const double mh = m[k] / bc1;
        const double vh = v[k] / bc2;
        w[k] -= config.learning_rate * mh / (std::sqrt(vh) + config.epsilon);
      }
      round_to_float(w);
    }
    epoch_loss /= static_cast<double>(order.size());
    const double val_loss = val_set.size() ? mean_loss(spec, w, val_set) : epoch_loss;
    if (!std::isfinite(epoch_loss) || !std::isfinite(val_loss))
      throw RuntimeError("train: non-finite loss in epoch " + std::to_string(epoch));
    ck.history.push_back({epoch, epoch_loss, val_loss});

    if (val_loss < best_val) {
      best_val = val_loss;
      best = w;
      ck.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  if (ck.best_epoch > 0) ck.weights = std::move(best);
  return ck;
}

std::vector<double> predict_batch(const Checkpoint& ckpt, const std::vector<std::vector<double>>& inputs) {
  std::vector<double> out;
  out.reserve(inputs.size());
  for (const auto& x : inputs) out.push_back(forward(ckpt.spec, ckpt.weights, x));
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

std::string weights_to_bin(std::span<const double> weights) {
  std::string out(kWeightMagic, 4);
  out.push_back(static_cast<char>(kWeightFormatVersion));
  out.reserve(5 + 4 * weights.size());
  for (double w : weights) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(w));
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
  }
  return out;
}

std::vector<double> weights_from_bin(const std::string& bytes, std::size_t expected_count) {
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kWeightMagic, 4) != 0)
    throw ValidationError("checkpoint: corrupted magic bytes");
  if (static_cast<unsigned char>(bytes[4]) != kWeightFormatVersion)
    throw ValidationError("checkpoint: unsupported weight format version " +
                          std::to_string(static_cast<unsigned char>(bytes[4])));
  const std::size_t payload = bytes.size() - 5;
  if (payload % 4 != 0 || payload / 4 != expected_count)
    throw ValidationError("checkpoint: weight count mismatch, header declares " + std::to_string(expected_count) +
                          " but file holds " + std::to_string(payload / 4) + (payload % 4 ? " (+partial)" : ""));
  std::vector<double> w(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[5 + 4 * i + static_cast<std::size_t>(b)]))
              << (8 * b);
    w[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return w;
}

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& base, const char* ext) {
  return std::filesystem::path(base.string() + ext);
}

} // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& base) {
  const std::string bin = weights_to_bin(ck.weights);
  nlohmann::ordered_json j;
  j["format"] = "lsm-checkpoint";
  j["version"] = kWeightFormatVersion;
  j["spec"] = nlohmann::ordered_json::parse(spec_to_json(ck.spec));
  nlohmann::ordered_json cfg;
  cfg["learning_rate"] = ck.config.learning_rate;
  cfg["beta1"] = ck.config.beta1;
  cfg["beta2"] = ck.config.beta2;
  cfg["epsilon"] = ck.config.epsilon;
  cfg["batch_size"] = ck.config.batch_size;
  cfg["max_epochs"] = ck.config.max_epochs;
  cfg["patience"] = ck.config.patience;
  cfg["seed"] = ck.config.seed;
  j["training"] = cfg;
  j["seeds"] = {{"init", ck.spec.seed}, {"shuffle", ck.config.seed}};
  if (ck.standardizer) {
    j["standardization"] = {{"mean", ck.standardizer->mean},
                            {"std", ck.standardizer->std},
                            {"degenerate", ck.standardizer->degenerate}};
  } else {
    j["standardization"] = nullptr;
  }
  j["pca_hash"] = ck.pca_hash.empty() ? nlohmann::ordered_json() : nlohmann::ordered_json(ck.pca_hash);
  nlohmann::ordered_json hist = nlohmann::ordered_json::array();
  for (const auto& e : ck.history)
    hist.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  j["history"] = hist;
  j["best_epoch"] = ck.best_epoch;
  j["meta"] = ck.meta;
  j["weight_count"] = ck.weights.size();
  j["weights_hash"] = hex64(fnv1a64(bin));
  write_text_file(with_suffix(base, ".json"), j.dump(2) + "\n");
  write_text_file(with_suffix(base, ".bin"), bin);
}

Checkpoint load_checkpoint(const std::filesystem::path& base) {
  const std::string header = read_text_file(with_suffix(base, ".json"));
  const std::string bin = read_text_file(with_suffix(base, ".bin"));
  try {
    const auto j = nlohmann::json::parse(header);
    Checkpoint ck;
    ck.spec = spec_from_json(j.at("spec").dump());
    const auto& cfg = j.at("training");
    ck.config.learning_rate = cfg.at("learning_rate").get<double>();
    ck.config.beta1 = cfg.at("beta1").get<double>();
    ck.config.beta2 = cfg.at("beta2").get<double>();
    ck.config.epsilon = cfg.at("epsilon").get<double>();
    ck.config.batch_size = cfg.at("batch_size").get<std::size_t>();
    ck.config.max_epochs = cfg.at("max_epochs").get<std::size_t>();
    ck.config.patience = cfg.at("patience").get<std::size_t>();
    ck.config.seed = cfg.at("seed").get<std::uint64_t>();
    if (!j.at("standardization").is_null()) {
      Standardizer s;
      s.mean = j["standardization"].at("mean").get<std::vector<double>>();
      s.std = j["standardization"].at("std").get<std::vector<double>>();
      s.degenerate = j["standardization"].at("degenerate").get<std::vector<bool>>();
      ck.standardizer = s;
    }
    if (!j.at("pca_hash").is_null()) ck.pca_hash = j["pca_hash"].get<std::string>();
    for (const auto& e : j.at("history"))
      ck.history.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                            e.at("val_loss").get<double>()});
    ck.best_epoch = j.at("best_epoch").get<std::size_t>();
    ck.meta = j.at("meta").get<std::map<std::string, std::string>>();

    const auto declared = j.at("weight_count").get<std::size_t>();
    const auto expected = ck.spec.parameter_count();
    if (declared != expected)
      throw ValidationError("checkpoint: weight count mismatch, spec needs " + std::to_string(expected) +
                            " but header declares " + std::to_string(declared));
    ck.weights = weights_from_bin(bin, declared);
    if (hex64(fnv1a64(bin)) != j.at("weights_hash").get<std::string>())
      throw ValidationError("checkpoint: weight file hash does not match header");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint header: ") + e.what());
  }
}

} // namespace lsm::nn
