#include "lsm/nn/autodiff.hpp"

#include "lsm/common.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace lsm::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ValidationError(std::string(op) + ": " + what);
}

std::string dims(const Tape& t, Var v) {
  return "[" + std::to_string(t.rows(v)) + "," + std::to_string(t.cols(v)) + "]";
}

#if defined(__GLIBC__)
// Tape buffers of a few hundred KB are allocated and freed per sample; keep
// them on the heap instead of a fresh mmap (and page faults) every time.
const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();
#endif

// Operand pointer with a fixed alignment: views into caller memory are copied
// into `scratch` so Eigen never picks a kernel path from a runtime address.
const double* aligned_operand(std::span<const double> v, Buffer& scratch) {
  if (reinterpret_cast<std::uintptr_t>(v.data()) % kBufferAlignment == 0) return v.data();
  scratch.assign(v.begin(), v.end());
  return scratch.data();
}

} // namespace

// ---------------------------------------------------------------------------
// Tape

Var Tape::constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
  require(values.size() == rows * cols, "constant", "value count does not match shape");
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.value.assign(values.begin(), values.end());
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::constant_view(std::size_t rows, std::size_t cols, std::span<const double> values) {
  require(values.size() == rows * cols, "constant_view", "value count does not match shape");
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.view = values.data();
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(std::size_t rows, std::size_t cols, std::span<const double> values) {
  Var v = constant_view(rows, cols, values);
  nodes_[v.id].needs_grad = record_;
  return v;
}

std::span<const double> Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.view) return {n.view, n.rows * n.cols};
  return n.value;
}

Var Tape::push(std::size_t rows, std::size_t cols, Buffer value, std::vector<std::size_t> parents) {
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.value = std::move(value);
  if (record_)
    for (auto p : parents) n.needs_grad = n.needs_grad || nodes_[p].needs_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

void Tape::set_backprop(Var v, std::function<void(Tape&)> fn) {
  if (nodes_[v.id].needs_grad) nodes_[v.id].backprop = std::move(fn);
}

Buffer& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty()) n.grad.assign(n.rows * n.cols, 0.0);
  return n.grad;
}

void Tape::backward(Var out) {
  require(record_, "backward", "tape was built without recording");
  require(nodes_[out.id].rows * nodes_[out.id].cols == 1, "backward", "output must be 1x1");
  for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
  grad_buffer(out)[0] = 1.0;
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backprop && !n.grad.empty()) n.backprop(*this);
  }
}

// ---------------------------------------------------------------------------
// Ops

Var matmul(Tape& t, Var a, Var b, bool trans_b) {
  const std::size_t m = t.rows(a), k = t.cols(a);
  const std::size_t n = trans_b ? t.rows(b) : t.cols(b);
  require(k == (trans_b ? t.cols(b) : t.rows(b)), "matmul", "inner dimensions differ: " + dims(t, a) + " x " + dims(t, b));
  Buffer out(m * n);
  {
    Buffer sa, sb;
    ConstMap A(aligned_operand(t.value(a), sa), m, k);
    ConstMap B(aligned_operand(t.value(b), sb), t.rows(b), t.cols(b));
    MutMap C(out.data(), m, n);
    if (trans_b) C.noalias() = A * B.transpose();
    else C.noalias() = A * B;
  }
  Var r = t.push(m, n, std::move(out), {a.id, b.id});
  t.set_backprop(r, [a, b, r, m, k, n, trans_b](Tape& tp) {
    ConstMap G(tp.grad(r).data(), m, n);
    Buffer scratch;
    if (tp.needs_grad(a)) {
      MutMap GA(tp.grad_buffer(a).data(), m, k);
      ConstMap B(aligned_operand(tp.value(b), scratch), tp.rows(b), tp.cols(b));
      if (trans_b) GA.noalias() += G * B;
      else GA.noalias() += G * B.transpose();
    }
    if (tp.needs_grad(b)) {
      MutMap GB(tp.grad_buffer(b).data(), tp.rows(b), tp.cols(b));
      ConstMap A(aligned_operand(tp.value(a), scratch), m, k);
      if (trans_b) GB.noalias() += G.transpose() * A;
      else GB.noalias() += A.transpose() * G;
    }
  });
  return r;
}

Var add(Tape& t, Var a, Var b) {
  require(t.rows(a) == t.rows(b) && t.cols(a) == t.cols(b), "add", "shape mismatch " + dims(t, a) + " vs " + dims(t, b));
  const auto va = t.value(a), vb = t.value(b);
  Buffer out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  Var r = t.push(t.rows(a), t.cols(a), std::move(out), {a.id, b.id});
  t.set_backprop(r, [a, b, r](Tape& tp) {
    const auto g = tp.grad(r);
    for (Var p : {a, b}) {
      if (!tp.needs_grad(p)) continue;
      auto& gp = tp.grad_buffer(p);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
  });
  return r;
}

Var add_row(Tape& t, Var a, Var bias) {
  const std::size_t rows = t.rows(a), cols = t.cols(a);
  require(t.rows(bias) == 1 && t.cols(bias) == cols, "add_row", "bias " + dims(t, bias) + " for " + dims(t, a));
  const auto va = t.value(a), vb = t.value(bias);
  Buffer out(va.size());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = va[i * cols + j] + vb[j];
  Var r = t.push(rows, cols, std::move(out), {a.id, bias.id});
  t.set_backprop(r, [a, bias, r, rows, cols](Tape& tp) {
    const auto g = tp.grad(r);
    if (tp.needs_grad(a)) {
      auto& ga = tp.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.needs_grad(bias)) {
      auto& gb = tp.grad_buffer(bias);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) gb[j] += g[i * cols + j];
    }
  });
  return r;
}

Var mul_row(Tape& t, Var a, Var gain) {
  const std::size_t rows = t.rows(a), cols = t.cols(a);
  require(t.rows(gain) == 1 && t.cols(gain) == cols, "mul_row", "gain " + dims(t, gain) + " for " + dims(t, a));
  const auto va = t.value(a), vg = t.value(gain);
  Buffer out(va.size());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = va[i * cols + j] * vg[j];
  Var r = t.push(rows, cols, std::move(out), {a.id, gain.id});
  t.set_backprop(r, [a, gain, r, rows, cols](Tape& tp) {
    const auto g = tp.grad(r);
    const auto va = tp.value(a), vg = tp.value(gain);
    if (tp.needs_grad(a)) {
      auto& ga = tp.grad_buffer(a);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) ga[i * cols + j] += g[i * cols + j] * vg[j];
    }
    if (tp.needs_grad(gain)) {
      auto& gg = tp.grad_buffer(gain);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) gg[j] += g[i * cols + j] * va[i * cols + j];
    }
  });
  return r;
}

Var scale(Tape& t, Var a, double s) {
  const auto va = t.value(a);
  Buffer out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * s;
  Var r = t.push(t.rows(a), t.cols(a), std::move(out), {a.id});
  t.set_backprop(r, [a, r, s](Tape& tp) {
    const auto g = tp.grad(r);
    auto& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
  return r;
}

Var relu(Tape& t, Var a) {
  const auto va = t.value(a);
  Buffer out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] > 0.0 ? va[i] : 0.0;
  Var r = t.push(t.rows(a), t.cols(a), std::move(out), {a.id});
  t.set_backprop(r, [a, r](Tape& tp) {
    const auto g = tp.grad(r);
    const auto va = tp.value(a);
    auto& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (va[i] > 0.0) ga[i] += g[i];
  });
  return r;
}

Var gelu(Tape& t, Var a) {
  const auto va = t.value(a);
  Buffer out(va.size()), cdf(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    cdf[i] = 0.5 * (1.0 + std::erf(va[i] * std::numbers::sqrt2 / 2.0));
    out[i] = va[i] * cdf[i];
  }
  Var r = t.push(t.rows(a), t.cols(a), std::move(out), {a.id});
  if (t.needs_grad(r))
    t.set_backprop(r, [a, r, cdf = std::move(cdf)](Tape& tp) {
      const auto g = tp.grad(r);
      const auto va = tp.value(a);
      auto& ga = tp.grad_buffer(a);
      const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
      Eigen::Map<const Eigen::ArrayXd> x(va.data(), static_cast<Eigen::Index>(va.size()));
      const Eigen::ArrayXd pdf = inv_sqrt_2pi * (-0.5 * x * x).exp();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (cdf[i] + va[i] * pdf[static_cast<Eigen::Index>(i)]);
    });
  return r;
}

Var gather(Tape& t, Var a, std::size_t rows, std::size_t cols, std::vector<long> index) {
  require(index.size() == rows * cols, "gather", "index count does not match shape");
  const auto va = t.value(a);
  const auto n = static_cast<long>(va.size());
  Buffer out(index.size());
  for (long ix : index)
    if (ix >= n) throw ValidationError("gather: index out of range");
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = index[i] >= 0 ? va[static_cast<std::size_t>(index[i])] : 0.0;
  Var r = t.push(rows, cols, std::move(out), {a.id});
  t.set_backprop(r, [a, r, index = std::move(index)](Tape& tp) {
    const auto g = tp.grad(r);
    auto& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < index.size(); ++i)
      if (index[i] >= 0) ga[static_cast<std::size_t>(index[i])] += g[i];
  });
  return r;
}

Var slice_cols(Tape& t, Var a, std::size_t start, std::size_t count) {
  const std::size_t rows = t.rows(a), cols = t.cols(a);
  require(start + count <= cols, "slice_cols", "range exceeds " + dims(t, a));
  const auto va = t.value(a);
  Buffer out(rows * count);
  for (std::size_t i = 0; i < rows; ++i)
    std::copy_n(va.data() + i * cols + start, count, out.data() + i * count);
  Var r = t.push(rows, count, std::move(out), {a.id});
  t.set_backprop(r, [a, r, rows, cols, start, count](Tape& tp) {
    const auto g = tp.grad(r);
    auto& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < count; ++j) ga[i * cols + start + j] += g[i * count + j];
  });
  return r;
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  const std::size_t rows = t.rows(parts[0]);
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (Var p : parts) {
    require(t.rows(p) == rows, "concat_cols", "row count mismatch");
    cols += t.cols(p);
    ids.push_back(p.id);
  }
  Buffer out(rows * cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const auto vp = t.value(p);
    const std::size_t pc = t.cols(p);
    for (std::size_t i = 0; i < rows; ++i) std::copy_n(vp.data() + i * pc, pc, out.data() + i * cols + off);
    off += pc;
  }
  Var r = t.push(rows, cols, std::move(out), ids);
  std::vector<Var> saved(parts.begin(), parts.end());
  t.set_backprop(r, [saved = std::move(saved), r, rows, cols](Tape& tp) {
    const auto g = tp.grad(r);
    std::size_t off = 0;
    for (Var p : saved) {
      const std::size_t pc = tp.cols(p);
      if (tp.needs_grad(p)) {
        auto& gp = tp.grad_buffer(p);
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] += g[i * cols + off + j];
      }
      off += pc;
    }
  });
  return r;
}

Var concat_rows(Tape& t, Var top, Var bottom) {
  require(t.cols(top) == t.cols(bottom), "concat_rows", "column mismatch " + dims(t, top) + " vs " + dims(t, bottom));
  const auto vt = t.value(top), vb = t.value(bottom);
  Buffer out;
  out.reserve(vt.size() + vb.size());
  out.insert(out.end(), vt.begin(), vt.end());
  out.insert(out.end(), vb.begin(), vb.end());
  Var r = t.push(t.rows(top) + t.rows(bottom), t.cols(top), std::move(out), {top.id, bottom.id});
  t.set_backprop(r, [top, bottom, r](Tape& tp) {
    const auto g = tp.grad(r);
    const std::size_t nt = tp.rows(top) * tp.cols(top);
    if (tp.needs_grad(top)) {
      auto& gt = tp.grad_buffer(top);
      for (std::size_t i = 0; i < nt; ++i) gt[i] += g[i];
    }
    if (tp.needs_grad(bottom)) {
      auto& gb = tp.grad_buffer(bottom);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[nt + i];
    }
  });
  return r;
}

Var row(Tape& t, Var a, std::size_t r_index) {
  const std::size_t cols = t.cols(a);
  require(r_index < t.rows(a), "row", "index out of range");
  std::vector<long> idx(cols);
  for (std::size_t j = 0; j < cols; ++j) idx[j] = static_cast<long>(r_index * cols + j);
  return gather(t, a, 1, cols, std::move(idx));
}

Var mean_rows(Tape& t, Var a) {
  const std::size_t rows = t.rows(a), cols = t.cols(a);
  const auto va = t.value(a);
  Buffer out(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j] += va[i * cols + j];
  for (auto& v : out) v /= static_cast<double>(rows);
  Var r = t.push(1, cols, std::move(out), {a.id});
  t.set_backprop(r, [a, r, rows, cols](Tape& tp) {
    const auto g = tp.grad(r);
    auto& ga = tp.grad_buffer(a);
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) ga[i * cols + j] += g[j] * inv;
  });
  return r;
}

Var layernorm_rows(Tape& t, Var a, double eps) {
  const std::size_t rows = t.rows(a), cols = t.cols(a);
  const auto va = t.value(a);
  Buffer out(va.size());
  std::vector<double> inv_std(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* x = va.data() + i * cols;
    double mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mu += x[j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(cols);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = (x[j] - mu) * inv_std[i];
  }
  Var r = t.push(rows, cols, std::move(out), {a.id});
  t.set_backprop(r, [a, r, rows, cols, inv_std = std::move(inv_std)](Tape& tp) {
    const auto g = tp.grad(r);
    const auto y = tp.value(r);
    auto& ga = tp.grad_buffer(a);
    const double n = static_cast<double>(cols);
    for (std::size_t i = 0; i < rows; ++i) {
      double mg = 0.0, mgy = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        mg += g[i * cols + j];
        mgy += g[i * cols + j] * y[i * cols + j];
      }
      mg /= n;
      mgy /= n;
      for (std::size_t j = 0; j < cols; ++j)
        ga[i * cols + j] += inv_std[i] * (g[i * cols + j] - mg - y[i * cols + j] * mgy);
    }
  });
  return r;
}

Var softmax_rows(Tape& t, Var a) {
  const std::size_t rows = t.rows(a), cols = t.cols(a);
  Buffer out(rows * cols);
  {
    ConstMap X(t.value(a).data(), rows, cols);
    MutMap Y(out.data(), rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
      Y.row(i) = (X.row(i).array() - X.row(i).maxCoeff()).exp().matrix();
      Y.row(i) /= Y.row(i).sum();
    }
  }
  Var r = t.push(rows, cols, std::move(out), {a.id});
  t.set_backprop(r, [a, r, rows, cols](Tape& tp) {
    ConstMap G(tp.grad(r).data(), rows, cols);
    ConstMap Y(tp.value(r).data(), rows, cols);
    MutMap GA(tp.grad_buffer(a).data(), rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
      const double dot = G.row(i).dot(Y.row(i));
      GA.row(i).array() += Y.row(i).array() * (G.row(i).array() - dot);
    }
  });
  return r;
}

Var sigmoid(Tape& t, Var a) {
  const auto va = t.value(a);
  Buffer out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-va[i]));
  Var r = t.push(t.rows(a), t.cols(a), std::move(out), {a.id});
  t.set_backprop(r, [a, r](Tape& tp) {
    const auto g = tp.grad(r);
    const auto y = tp.value(r);
    auto& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
  return r;
}

Var bce_with_logit(Tape& t, Var logit, double label) {
  require(t.rows(logit) == 1 && t.cols(logit) == 1, "bce_with_logit", "logit must be 1x1");
  const double z = t.scalar(logit);
  const double loss = std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z)));
  Var r = t.push(1, 1, Buffer{loss}, {logit.id});
  t.set_backprop(r, [logit, r, label](Tape& tp) {
    const double z = tp.scalar(logit);
    const double p = 1.0 / (1.0 + std::exp(-z));
    tp.grad_buffer(logit)[0] += tp.grad(r)[0] * (p - label);
  });
  return r;
}

} // namespace lsm::nn
