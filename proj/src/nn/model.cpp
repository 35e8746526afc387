#include "lsm/nn/model.hpp"

#include "lsm/common.hpp"
#include "lsm/rng.hpp"

#include <cmath>
#include <json.hpp>

namespace lsm::nn {

namespace {

struct NamedKinds {
  LayerKind kind;
  const char* name;
};
constexpr NamedKinds kLayerNames[] = {
    {LayerKind::dense, "dense"},
    {LayerKind::conv1d, "conv1d"},
    {LayerKind::conv2d, "conv2d"},
    {LayerKind::maxpool2d, "maxpool2d"},
    {LayerKind::global_avg_pool, "global_avg_pool"},
    {LayerKind::token_embed, "token_embed"},
    {LayerKind::encoder_block, "encoder_block"},
    {LayerKind::cls_select, "cls_select"},
};

std::string act_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
    default: return "none";
  }
}

Activation act_from(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "gelu") return Activation::gelu;
  if (s == "none") return Activation::none;
  throw ValidationError("unknown activation '" + s + "'");
}

Var activate(Tape& t, Var x, Activation a) {
  switch (a) {
    case Activation::relu: return relu(t, x);
    case Activation::gelu: return gelu(t, x);
    default: return x;
  }
}

std::size_t conv_out(std::size_t n, std::size_t k, bool same) { return same ? n : (n >= k ? n - k + 1 : 0); }

} // namespace

std::string to_string(Arch a) {
  switch (a) {
    case Arch::cnn1d: return "cnn1d";
    case Arch::cnn2d: return "cnn2d";
    case Arch::vit: return "vit";
    default: return "linear";
  }
}

Arch arch_from_string(const std::string& s) {
  if (s == "cnn1d") return Arch::cnn1d;
  if (s == "cnn2d") return Arch::cnn2d;
  if (s == "vit") return Arch::vit;
  if (s == "linear") return Arch::linear;
  throw ValidationError("unknown architecture '" + s + "'");
}

std::string to_string(LayerKind k) {
  for (const auto& e : kLayerNames)
    if (e.kind == k) return e.name;
  return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
  for (const auto& e : kLayerNames)
    if (s == e.name) return e.kind;
  throw ValidationError("unknown layer kind '" + s + "'");
}

std::string to_string(const ActShape& s) {
  return "(" + std::to_string(s.height) + "," + std::to_string(s.width) + "," + std::to_string(s.channels) + ")";
}

// ---------------------------------------------------------------------------
// ModelSpec

ActShape ModelSpec::input_act() const {
  if (input_shape.size() == 1) {
    if (arch == Arch::cnn1d) return {input_shape[0], 1, 1};
    return {1, 1, input_shape[0]};
  }
  if (input_shape.size() == 3) return {input_shape[0], input_shape[1], input_shape[2]};
  throw ValidationError("model spec: input_shape must be (p) or (h,w,p)");
}

std::size_t ModelSpec::input_size() const {
  std::size_t n = 1;
  for (auto d : input_shape) n *= d;
  return n;
}

std::vector<ActShape> ModelSpec::validate() const {
  for (auto d : input_shape)
    if (d == 0) throw ValidationError("model spec: zero input dimension");
  std::vector<ActShape> shapes{input_act()};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const ActShape in = shapes.back();
    ActShape out = in;
    auto fail = [&](const std::string& why) {
      throw ValidationError("model spec: layer " + std::to_string(i) + " (" + to_string(l.kind) + ") with input " +
                            to_string(in) + ": " + why);
    };
    switch (l.kind) {
      case LayerKind::dense:
        if (l.units == 0) fail("units must be positive");
        out.channels = l.units;
        break;
      case LayerKind::conv1d:
        if (in.width != 1) fail("expects a sequence (width 1)");
        if (l.kernel == 0 || l.kernel % 2 == 0 || l.units == 0) fail("kernel must be odd and filters positive");
        out = {conv_out(in.height, l.kernel, l.same_padding), 1, l.units};
        if (out.height == 0) fail("kernel longer than sequence");
        break;
      case LayerKind::conv2d:
        if (l.kernel == 0 || l.kernel % 2 == 0 || l.units == 0) fail("kernel must be odd and filters positive");
        out = {conv_out(in.height, l.kernel, l.same_padding), conv_out(in.width, l.kernel, l.same_padding), l.units};
        if (out.height == 0 || out.width == 0) fail("kernel larger than input");
        break;
      case LayerKind::maxpool2d:
        out = {in.height / 2, in.width / 2, in.channels};
        if (out.height == 0 || out.width == 0) fail("input smaller than pool window");
        break;
      case LayerKind::global_avg_pool:
        out = {1, 1, in.channels};
        break;
      case LayerKind::token_embed:
        if (l.d_model == 0) fail("d_model must be positive");
        out = {in.positions() + 1, 1, l.d_model};
        break;
      case LayerKind::encoder_block:
        if (in.width != 1 || in.channels != l.d_model) fail("expects tokens of width d_model");
        if (l.heads == 0 || l.d_model % l.heads != 0) fail("d_model must be divisible by heads");
        if (l.ff_dim == 0) fail("ff_dim must be positive");
        break;
      case LayerKind::cls_select:
        if (in.width != 1) fail("expects a token sequence");
        out = {1, 1, in.channels};
        break;
    }
    shapes.push_back(out);
  }
  if (!(shapes.back() == ActShape{1, 1, 1}))
    throw ValidationError("model spec: network must end in a single logit, got " + to_string(shapes.back()));
  return shapes;
}

std::vector<ParamShape> ModelSpec::parameter_shapes() const {
  const auto shapes = validate();
  std::vector<ParamShape> ps;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const ActShape in = shapes[i];
    const std::string pre = "l" + std::to_string(i) + "." + to_string(l.kind) + ".";
    const Init act_init = l.activation == Activation::relu ? Init::he_uniform : Init::glorot_uniform;
    auto bias = [&](const std::string& n, std::size_t c) { ps.push_back({pre + n, 1, c, Init::zeros, 0, 0}); };
    switch (l.kind) {
      case LayerKind::dense:
        ps.push_back({pre + "w", in.channels, l.units, act_init, in.channels, l.units});
        bias("b", l.units);
        break;
      case LayerKind::conv1d: {
        const std::size_t fan_in = l.kernel * in.channels;
        ps.push_back({pre + "w", fan_in, l.units, act_init, fan_in, l.kernel * l.units});
        bias("b", l.units);
        break;
      }
      case LayerKind::conv2d: {
        const std::size_t fan_in = l.kernel * l.kernel * in.channels;
        ps.push_back({pre + "w", fan_in, l.units, act_init, fan_in, l.kernel * l.kernel * l.units});
        bias("b", l.units);
        break;
      }
      case LayerKind::token_embed:
        ps.push_back({pre + "w", in.channels, l.d_model, Init::glorot_uniform, in.channels, l.d_model});
        bias("b", l.d_model);
        ps.push_back({pre + "pos", in.positions(), l.d_model, Init::normal_002, 0, 0});
        ps.push_back({pre + "cls", 1, l.d_model, Init::normal_002, 0, 0});
        break;
      case LayerKind::encoder_block: {
        const std::size_t d = l.d_model;
        ps.push_back({pre + "ln1.g", 1, d, Init::ones, 0, 0});
        bias("ln1.b", d);
        for (const char* n : {"q", "k", "v", "o"}) {
          ps.push_back({pre + "attn.w" + n, d, d, Init::glorot_uniform, d, d});
          bias(std::string("attn.b") + n, d);
        }
        ps.push_back({pre + "ln2.g", 1, d, Init::ones, 0, 0});
        bias("ln2.b", d);
        ps.push_back({pre + "ff.w1", d, l.ff_dim, Init::glorot_uniform, d, l.ff_dim});
        bias("ff.b1", l.ff_dim);
        ps.push_back({pre + "ff.w2", l.ff_dim, d, Init::glorot_uniform, l.ff_dim, d});
        bias("ff.b2", d);
        break;
      }
      case LayerKind::maxpool2d:
      case LayerKind::global_avg_pool:
      case LayerKind::cls_select:
        break;
    }
  }
  return ps;
}

std::size_t ModelSpec::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameter_shapes()) n += p.size();
  return n;
}

std::string spec_to_json(const ModelSpec& spec) {
  nlohmann::ordered_json j;
  j["arch"] = to_string(spec.arch);
  j["input_shape"] = spec.input_shape;
  j["seed"] = spec.seed;
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (const auto& l : spec.layers) {
    nlohmann::ordered_json lj;
    lj["kind"] = to_string(l.kind);
    lj["units"] = l.units;
    lj["kernel"] = l.kernel;
    lj["same_padding"] = l.same_padding;
    lj["activation"] = act_name(l.activation);
    lj["d_model"] = l.d_model;
    lj["heads"] = l.heads;
    lj["ff_dim"] = l.ff_dim;
    layers.push_back(lj);
  }
  j["layers"] = layers;
  return j.dump();
}

ModelSpec spec_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelSpec s;
    s.arch = arch_from_string(j.at("arch").get<std::string>());
    s.input_shape = j.at("input_shape").get<std::vector<std::size_t>>();
    s.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.kind = layer_kind_from_string(lj.at("kind").get<std::string>());
      l.units = lj.at("units").get<std::size_t>();
      l.kernel = lj.at("kernel").get<std::size_t>();
      l.same_padding = lj.at("same_padding").get<bool>();
      l.activation = act_from(lj.at("activation").get<std::string>());
      l.d_model = lj.at("d_model").get<std::size_t>();
      l.heads = lj.at("heads").get<std::size_t>();
      l.ff_dim = lj.at("ff_dim").get<std::size_t>();
      s.layers.push_back(l);
    }
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model spec: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Builders

namespace {

LayerSpec conv(LayerKind kind, std::size_t filters, std::size_t kernel, bool same, Activation act) {
  LayerSpec l;
  l.kind = kind;
  l.units = filters;
  l.kernel = kernel;
  l.same_padding = same;
  l.activation = act;
  return l;
}

LayerSpec dense(std::size_t units, Activation act) {
  LayerSpec l;
  l.kind = LayerKind::dense;
  l.units = units;
  l.activation = act;
  return l;
}

LayerSpec simple(LayerKind kind) {
  LayerSpec l;
  l.kind = kind;
  return l;
}

} // namespace

ModelSpec build_cnn1d(std::size_t p, std::uint64_t seed) {
  if (p < 1) throw ValidationError("build_cnn1d: p must be >= 1");
  ModelSpec s;
  s.arch = Arch::cnn1d;
  s.input_shape = {p};
  s.seed = seed;
  // Both convolutions pad so that p = 1 or 2 (a single retained component,
  // two-feature toys) still composes.
  s.layers = {conv(LayerKind::conv1d, 32, 3, true, Activation::relu),
              conv(LayerKind::conv1d, 64, 3, true, Activation::relu),
              simple(LayerKind::global_avg_pool),
              dense(64, Activation::relu),
              dense(1, Activation::none)};
  s.validate();
  return s;
}

ModelSpec build_cnn2d(std::size_t h, std::size_t w, std::size_t p, std::uint64_t seed) {
  if (h < 3 || w < 3) throw ValidationError("build_cnn2d: window must be at least 3x3");
  if (p < 1) throw ValidationError("build_cnn2d: p must be >= 1");
  ModelSpec s;
  s.arch = Arch::cnn2d;
  s.input_shape = {h, w, p};
  s.seed = seed;
  // The post-pool convolution is unpadded when the pooled map can hold a 3x3
  // kernel (11x11 -> 5x5 -> 3x3) and padded otherwise.
  const bool third_same = (h / 2) < 3 || (w / 2) < 3;
  s.layers = {conv(LayerKind::conv2d, 32, 3, true, Activation::relu),
              conv(LayerKind::conv2d, 64, 3, true, Activation::relu),
              simple(LayerKind::maxpool2d),
              conv(LayerKind::conv2d, 64, 3, third_same, Activation::relu),
              simple(LayerKind::global_avg_pool),
              dense(64, Activation::relu),
              dense(1, Activation::none)};
  s.validate();
  return s;
}

ModelSpec build_vit(std::size_t h, std::size_t w, std::size_t p, std::uint64_t seed) {
  if (h < 1 || w < 1 || p < 1) throw ValidationError("build_vit: empty input");
  ModelSpec s;
  s.arch = Arch::vit;
  s.input_shape = {h, w, p};
  s.seed = seed;
  LayerSpec embed = simple(LayerKind::token_embed);
  embed.d_model = 64;
  LayerSpec block = simple(LayerKind::encoder_block);
  block.d_model = 64;
  block.heads = 4;
  block.ff_dim = 128;
  block.activation = Activation::gelu;
  s.layers = {embed, block, block, simple(LayerKind::cls_select), dense(1, Activation::none)};
  s.validate();
  return s;
}

ModelSpec build_linear(std::size_t p, std::uint64_t seed) {
  ModelSpec s;
  s.arch = Arch::linear;
  s.input_shape = {p};
  s.seed = seed;
  s.layers = {dense(1, Activation::none)};
  s.validate();
  return s;
}

void round_to_float(std::span<double> weights) {
  for (auto& w : weights) w = static_cast<double>(static_cast<float>(w));
}

std::vector<double> init_weights(const ModelSpec& spec) {
  Rng rng(spec.seed);
  std::vector<double> w;
  w.reserve(spec.parameter_count());
  for (const auto& p : spec.parameter_shapes()) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      double v = 0.0;
      switch (p.init) {
        case Init::zeros: v = 0.0; break;
        case Init::ones: v = 1.0; break;
        case Init::he_uniform: {
          const double lim = std::sqrt(6.0 / static_cast<double>(p.fan_in));
          v = rng.uniform(-lim, lim);
          break;
        }
        case Init::glorot_uniform: {
          const double lim = std::sqrt(6.0 / static_cast<double>(p.fan_in + p.fan_out));
          v = rng.uniform(-lim, lim);
          break;
        }
        case Init::normal_002: v = 0.02 * rng.normal(); break;
      }
      w.push_back(v);
    }
  }
  round_to_float(w);
  return w;
}

// ---------------------------------------------------------------------------
// Layers

Var dense_layer(Tape& t, Var x, Var w, Var b, Activation act) {
  return activate(t, add_row(t, matmul(t, x, w), b), act);
}

Var conv1d_layer(Tape& t, Var x, const ActShape& in, const LayerSpec& l, Var w, Var b) {
  const std::size_t L = in.height, C = in.channels, k = l.kernel;
  const std::size_t out_len = conv_out(L, k, l.same_padding);
  const long pad = l.same_padding ? static_cast<long>(k / 2) : 0;
  std::vector<long> idx(out_len * k * C);
  std::size_t n = 0;
  for (std::size_t o = 0; o < out_len; ++o)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const long src = static_cast<long>(o + kk) - pad;
      for (std::size_t c = 0; c < C; ++c)
        idx[n++] = (src < 0 || src >= static_cast<long>(L)) ? -1 : src * static_cast<long>(C) + static_cast<long>(c);
    }
  Var cols = gather(t, x, out_len, k * C, std::move(idx));
  return dense_layer(t, cols, w, b, l.activation);
}

Var conv2d_layer(Tape& t, Var x, const ActShape& in, const LayerSpec& l, Var w, Var b) {
  const std::size_t H = in.height, W = in.width, C = in.channels, k = l.kernel;
  const std::size_t oh = conv_out(H, k, l.same_padding), ow = conv_out(W, k, l.same_padding);
  const long pad = l.same_padding ? static_cast<long>(k / 2) : 0;
  std::vector<long> idx(oh * ow * k * k * C);
  std::size_t n = 0;
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t di = 0; di < k; ++di)
        for (std::size_t dj = 0; dj < k; ++dj) {
          const long r = static_cast<long>(i + di) - pad;
          const long c = static_cast<long>(j + dj) - pad;
          const bool outside = r < 0 || c < 0 || r >= static_cast<long>(H) || c >= static_cast<long>(W);
          const long base = (r * static_cast<long>(W) + c) * static_cast<long>(C);
          for (std::size_t ch = 0; ch < C; ++ch) idx[n++] = outside ? -1 : base + static_cast<long>(ch);
        }
  Var cols = gather(t, x, oh * ow, k * k * C, std::move(idx));
  return dense_layer(t, cols, w, b, l.activation);
}

Var maxpool2d_layer(Tape& t, Var x, const ActShape& in) {
  const std::size_t oh = in.height / 2, ow = in.width / 2, C = in.channels;
  const auto v = t.value(x);
  std::vector<long> idx(oh * ow * C);
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t c = 0; c < C; ++c) {
        long best = -1;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const auto k = static_cast<long>((((2 * i + di) * in.width) + (2 * j + dj)) * C + c);
            if (best < 0 || v[static_cast<std::size_t>(k)] > v[static_cast<std::size_t>(best)]) best = k;
          }
        idx[(i * ow + j) * C + c] = best;
      }
  return gather(t, x, oh * ow, C, std::move(idx));
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias) { return add_row(t, mul_row(t, layernorm_rows(t, x), gain), bias); }

Var multi_head_attention(Tape& t, Var x, std::span<const Var> p, std::size_t heads, std::vector<Var>* attention_out,
                         std::size_t query_rows) {
  if (p.size() != 8) throw ValidationError("multi_head_attention: expected 8 parameter tensors");
  const std::size_t d = t.cols(x);
  const std::size_t dh = d / heads;
  const Var xq = query_rows == 1 ? row(t, x, 0) : x;
  Var q = add_row(t, matmul(t, xq, p[0]), p[1]);
  Var k = add_row(t, matmul(t, x, p[2]), p[3]);
  Var v = add_row(t, matmul(t, x, p[4]), p[5]);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = slice_cols(t, q, h * dh, dh);
    Var kh = slice_cols(t, k, h * dh, dh);
    Var vh = slice_cols(t, v, h * dh, dh);
    Var a = softmax_rows(t, scale(t, matmul(t, qh, kh, true), inv_sqrt));
    if (attention_out) attention_out->push_back(a);
    outs.push_back(matmul(t, a, vh));
  }
  Var merged = concat_cols(t, outs);
  return add_row(t, matmul(t, merged, p[6]), p[7]);
}

Var token_embedding(Tape& t, Var x, Var w, Var b, Var pos, Var cls) {
  Var tokens = add(t, add_row(t, matmul(t, x, w), b), pos);
  return concat_rows(t, cls, tokens);
}

// ---------------------------------------------------------------------------
// Forward / backward

Var build_graph(Tape& t, const ModelSpec& spec, std::span<const double> weights, std::span<const double> input,
                std::vector<Var>* params_out, ForwardTrace* trace) {
  const auto shapes = spec.validate();
  const auto pshapes = spec.parameter_shapes();
  std::size_t expected = 0;
  for (const auto& p : pshapes) expected += p.size();
  if (weights.size() != expected)
    throw ValidationError("forward: expected " + std::to_string(expected) + " weights, got " +
                          std::to_string(weights.size()));
  if (input.size() != spec.input_size())
    throw ValidationError("forward: input shape mismatch, expected " + std::to_string(spec.input_size()) +
                          " values for " + to_string(shapes.front()) + ", got " + std::to_string(input.size()));

  std::vector<Var> params;
  params.reserve(pshapes.size());
  std::size_t off = 0;
  for (const auto& p : pshapes) {
    params.push_back(t.parameter(p.rows, p.cols, weights.subspan(off, p.size())));
    off += p.size();
  }

  const ActShape in0 = shapes.front();
  Var x = t.constant_view(in0.positions(), in0.channels, input);
  std::size_t pi = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const ActShape in = shapes[i];
    switch (l.kind) {
      case LayerKind::dense:
        x = dense_layer(t, x, params[pi], params[pi + 1], l.activation);
        pi += 2;
        break;
      case LayerKind::conv1d:
        x = conv1d_layer(t, x, in, l, params[pi], params[pi + 1]);
        pi += 2;
        break;
      case LayerKind::conv2d:
        x = conv2d_layer(t, x, in, l, params[pi], params[pi + 1]);
        pi += 2;
        break;
      case LayerKind::maxpool2d: x = maxpool2d_layer(t, x, in); break;
      case LayerKind::global_avg_pool: x = mean_rows(t, x); break;
      case LayerKind::token_embed:
        x = token_embedding(t, x, params[pi], params[pi + 1], params[pi + 2], params[pi + 3]);
        pi += 4;
        break;
      case LayerKind::encoder_block: {
        // Only the classification row survives a following cls_select, so the
        // last block computes queries and the feed-forward for that row alone.
        const bool cls_only = i + 1 < spec.layers.size() && spec.layers[i + 1].kind == LayerKind::cls_select;
        Var h = layer_norm(t, x, params[pi], params[pi + 1]);
        Var a = multi_head_attention(t, h, std::span<const Var>(params).subspan(pi + 2, 8), l.heads,
                                     trace ? &trace->attention : nullptr, cls_only ? 1 : 0);
        x = add(t, cls_only ? row(t, x, 0) : x, a);
        Var h2 = layer_norm(t, x, params[pi + 10], params[pi + 11]);
        Var f = dense_layer(t, h2, params[pi + 12], params[pi + 13], l.activation);
        f = dense_layer(t, f, params[pi + 14], params[pi + 15], Activation::none);
        x = add(t, x, f);
        pi += 16;
        break;
      }
      case LayerKind::cls_select: x = row(t, x, 0); break;
    }
  }
  if (params_out) *params_out = std::move(params);
  return x;
}

double forward(const ModelSpec& spec, std::span<const double> weights, std::span<const double> input) {
  Tape t(false);
  Var logit = build_graph(t, spec, weights, input);
  return 1.0 / (1.0 + std::exp(-t.scalar(logit)));
}

LossAndGrad backward(const ModelSpec& spec, std::span<const double> weights, std::span<const double> input,
                     double label, double loss_scale) {
  Tape t(true);
  std::vector<Var> params;
  Var logit = build_graph(t, spec, weights, input, &params);
  Var loss = bce_with_logit(t, logit, label);
  if (loss_scale != 1.0) loss = scale(t, loss, loss_scale);
  LossAndGrad out;
  out.loss = t.scalar(loss);
  if (!std::isfinite(out.loss)) throw RuntimeError("backward: non-finite loss");
  t.backward(loss);
  out.grad.reserve(weights.size());
  for (Var p : params) {
    const auto g = t.grad(p);
    if (g.empty()) out.grad.insert(out.grad.end(), t.rows(p) * t.cols(p), 0.0);
    else out.grad.insert(out.grad.end(), g.begin(), g.end());
  }
  return out;
}

} // namespace lsm::nn
