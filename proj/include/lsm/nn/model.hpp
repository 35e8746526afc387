#pragma once

#include "lsm/nn/autodiff.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace lsm::nn {

enum class Arch { cnn1d, cnn2d, vit, linear };
enum class LayerKind { dense, conv1d, conv2d, maxpool2d, global_avg_pool, token_embed, encoder_block, cls_select };
enum class Activation { none, relu, gelu };

std::string to_string(Arch a);
Arch arch_from_string(const std::string& s);
std::string to_string(LayerKind k);
LayerKind layer_kind_from_string(const std::string& s);

/// Activation shape: a (height x width) grid of `channels`-vectors, held on the
/// tape as a [height*width, channels] matrix. Sequences use width 1.
struct ActShape {
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t channels = 1;

  std::size_t positions() const { return height * width; }
  bool operator==(const ActShape&) const = default;
};
std::string to_string(const ActShape& s);

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t units = 0;    // dense units or conv filters
  std::size_t kernel = 0;   // conv kernel size (square for conv2d)
  bool same_padding = true;
  Activation activation = Activation::none;
  std::size_t d_model = 0;  // token_embed / encoder_block
  std::size_t heads = 0;
  std::size_t ff_dim = 0;

  bool operator==(const LayerSpec&) const = default;
};

enum class Init { zeros, ones, he_uniform, glorot_uniform, normal_002 };

struct ParamShape {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  Init init = Init::zeros;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;

  std::size_t size() const { return rows * cols; }
};

/// Declarative network. input_shape is (p) for vector models or (h, w, p)
/// for patch models.
struct ModelSpec {
  Arch arch = Arch::linear;
  std::vector<std::size_t> input_shape;
  std::vector<LayerSpec> layers;
  std::uint64_t seed = 0;

  /// Activation shape the network sees for its input.
  ActShape input_act() const;
  std::size_t input_size() const;
  /// Throws ValidationError naming the first layer whose shapes do not compose
  /// or when the network does not end in a single logit.
  std::vector<ActShape> validate() const;
  std::vector<ParamShape> parameter_shapes() const;
  std::size_t parameter_count() const;

  bool operator==(const ModelSpec&) const = default;
};

std::string spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const std::string& text);

ModelSpec build_cnn1d(std::size_t p, std::uint64_t seed);
ModelSpec build_cnn2d(std::size_t h, std::size_t w, std::size_t p, std::uint64_t seed);
ModelSpec build_vit(std::size_t h, std::size_t w, std::size_t p, std::uint64_t seed);
/// Single dense layer (logistic regression); used as the convex probe.
ModelSpec build_linear(std::size_t p, std::uint64_t seed);

/// Weights drawn from the spec's seed, rounded to single precision.
std::vector<double> init_weights(const ModelSpec& spec);

/// Round every entry to the nearest float.
void round_to_float(std::span<double> weights);

/// Per-forward hooks for inspection in tests.
struct ForwardTrace {
  std::vector<Var> attention;  // one [T,T] softmax matrix per block per head
};

/// Builds the network graph on `tape`. When params_out is set it receives one
/// Var per ParamShape in declaration order.
Var build_graph(Tape& tape, const ModelSpec& spec, std::span<const double> weights, std::span<const double> input,
                std::vector<Var>* params_out = nullptr, ForwardTrace* trace = nullptr);

/// Sigmoid of the final logit.
double forward(const ModelSpec& spec, std::span<const double> weights, std::span<const double> input);

/// Binary cross-entropy (scaled by loss_scale) and its exact gradient with
/// respect to every weight, in declaration order.
struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};
LossAndGrad backward(const ModelSpec& spec, std::span<const double> weights, std::span<const double> input,
                     double label, double loss_scale = 1.0);

// Layer building blocks, exposed for per-layer gradient checks.
Var dense_layer(Tape& t, Var x, Var w, Var b, Activation act);
Var conv1d_layer(Tape& t, Var x, const ActShape& in, const LayerSpec& l, Var w, Var b);
Var conv2d_layer(Tape& t, Var x, const ActShape& in, const LayerSpec& l, Var w, Var b);
Var maxpool2d_layer(Tape& t, Var x, const ActShape& in);
Var layer_norm(Tape& t, Var x, Var gain, Var bias);
/// Multi-head self-attention over rows of x [T, d]; params Wq bq Wk bk Wv bv Wo bo.
/// With query_rows = 1 only the first row attends (keys and values still
/// cover every row) and the result is [1, d].
Var multi_head_attention(Tape& t, Var x, std::span<const Var> params, std::size_t heads,
                         std::vector<Var>* attention_out = nullptr, std::size_t query_rows = 0);
/// Per-token linear embedding + positional embedding + prepended class token.
Var token_embedding(Tape& t, Var x, Var w, Var b, Var pos, Var cls);

} // namespace lsm::nn
