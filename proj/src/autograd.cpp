#include "icehrnet/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "icehrnet/error.hpp"

namespace icehrnet::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw ValidationError("variables belong to different tapes");
}

struct ConvPlan {
  int cin, cout, k, h, w, ho, wo;
  ConvGeometry g;
  bool pointwise() const { return k == 1 && g.stride == 1 && g.padding == 0; }
  int col_rows() const { return cin * k * k; }
  int col_cols() const { return ho * wo; }
};

// Output columns [lo, hi) whose input column lands inside the row.
void valid_span(const ConvPlan& p, int kj, int& lo, int& hi) {
  const int off = kj * p.g.dilation - p.g.padding;
  const int st = p.g.stride;
  lo = off >= 0 ? 0 : (-off + st - 1) / st;
  hi = p.w - off <= 0 ? 0 : std::min(p.wo, (p.w - off + st - 1) / st);
  if (hi < lo) hi = lo;
}

void im2col(const double* in, const ConvPlan& p, double* col) {
  const int cols = p.col_cols();
  const int st = p.g.stride;
  for (int c = 0; c < p.cin; ++c) {
    const double* plane = in + static_cast<std::size_t>(c) * p.h * p.w;
    for (int ki = 0; ki < p.k; ++ki) {
      for (int kj = 0; kj < p.k; ++kj) {
        double* row = col + static_cast<std::size_t>((c * p.k + ki) * p.k + kj) * cols;
        int lo, hi;
        valid_span(p, kj, lo, hi);
        const int off = kj * p.g.dilation - p.g.padding;
        for (int oy = 0; oy < p.ho; ++oy) {
          const int iy = oy * st - p.g.padding + ki * p.g.dilation;
          double* dst = row + oy * p.wo;
          if (iy < 0 || iy >= p.h) {
            std::fill(dst, dst + p.wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * p.w + off;
          std::fill(dst, dst + lo, 0.0);
          if (st == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * st];
          }
          std::fill(dst + hi, dst + p.wo, 0.0);
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvPlan& p, double* out) {
  const int cols = p.col_cols();
  const int st = p.g.stride;
  for (int c = 0; c < p.cin; ++c) {
    double* plane = out + static_cast<std::size_t>(c) * p.h * p.w;
    for (int ki = 0; ki < p.k; ++ki) {
      for (int kj = 0; kj < p.k; ++kj) {
        const double* row = col + static_cast<std::size_t>((c * p.k + ki) * p.k + kj) * cols;
        int lo, hi;
        valid_span(p, kj, lo, hi);
        const int off = kj * p.g.dilation - p.g.padding;
        for (int oy = 0; oy < p.ho; ++oy) {
          const int iy = oy * st - p.g.padding + ki * p.g.dilation;
          if (iy < 0 || iy >= p.h) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * p.w + off;
          const double* src = row + oy * p.wo;
          for (int ox = lo; ox < hi; ++ox) dst[ox * st] += src[ox];
        }
      }
    }
  }
}

// Source coordinate mapping for half-pixel bilinear resampling.
struct Tap {
  int lo, hi;
  double frac;
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const int hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - lo};
  }
  return taps;
}

}  // namespace

const Tensor& Var::value() const {
  if (!tape_) throw ValidationError("use of an unset variable");
  return tape_->value(id_);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  Node node;
  node.value = p.value;
  node.param = &p;
  node.needs_grad = record_ && p.trainable;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  if (record_) {
    for (const Var& in : inputs) {
      if (in.tape() != this) throw ValidationError("variable from a different tape");
      if (nodes_[in.id()].needs_grad) node.needs_grad = true;
    }
    if (node.needs_grad) node.backward = std::move(fn);
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad(Var v) {
  Node& node = nodes_[v.id()];
  if (node.grad.empty() && node.value.size() > 0) node.grad = Tensor(node.value.shape());
  return node.grad;
}

void Tape::backward(Var root) {
  if (!record_) throw ValidationError("backward on a non-recording tape");
  if (root.tape() != this) throw ValidationError("backward root from a different tape");
  if (nodes_[root.id()].value.size() != 1) throw ValidationError("backward root must be a scalar");
  grad(root).fill(1.0);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.needs_grad || node.grad.empty()) continue;
    if (node.backward) {
      // Copy: the callback may grow other grads but never this node's.
      const Tensor& g = node.grad;
      node.backward(g);
    }
    if (node.param) {
      Parameter& p = *node.param;
      if (p.grad.empty()) p.grad = Tensor(p.value.shape());
      p.grad.add_(node.grad);
    }
  }
}

int conv_output_extent(int input, int kernel, const ConvGeometry& g) {
  return (input + 2 * g.padding - g.dilation * (kernel - 1) - 1) / g.stride + 1;
}

Var conv2d(Var x, Var weight, const Var* bias, const ConvGeometry& geometry) {
  require_same_tape(x, weight);
  Tape& tape = *x.tape();
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c) {
    throw ValidationError("conv2d channel mismatch: input " + xs.str() + " weight " + ws.str());
  }
  if (ws.h != ws.w) throw ValidationError("conv2d expects square kernels");
  ConvPlan plan{xs.c, ws.n, ws.h, xs.h, xs.w, 0, 0, geometry};
  plan.ho = conv_output_extent(xs.h, plan.k, geometry);
  plan.wo = conv_output_extent(xs.w, plan.k, geometry);
  if (plan.ho <= 0 || plan.wo <= 0) throw ValidationError("conv2d output is empty for input " + xs.str());

  Tensor out(Shape{xs.n, plan.cout, plan.ho, plan.wo});
  const int rows = plan.col_rows();
  const int cols = plan.col_cols();
  std::vector<double> col(plan.pointwise() ? 0 : static_cast<std::size_t>(rows) * cols);
  ConstMatrixMap wmat(weight.value().data(), plan.cout, rows);
  const double* bias_data = bias ? bias->value().data() : nullptr;
  for (int n = 0; n < xs.n; ++n) {
    const double* in = x.value().plane(n, 0);
    const double* colp = in;
    if (!plan.pointwise()) {
      im2col(in, plan, col.data());
      colp = col.data();
    }
    MatrixMap omat(out.plane(n, 0), plan.cout, cols);
    omat.noalias() = wmat * ConstMatrixMap(colp, rows, cols);
    if (bias_data) {
      for (int o = 0; o < plan.cout; ++o) omat.row(o).array() += bias_data[o];
    }
  }

  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias != nullptr;
  const Var bias_var = has_bias ? *bias : Var();
  return tape.push(std::move(out), inputs, [&tape, x, weight, bias_var, has_bias, plan](const Tensor& g) {
    const int rows = plan.col_rows();
    const int cols = plan.col_cols();
    const Shape xs = x.shape();
    ConstMatrixMap wmat(weight.value().data(), plan.cout, rows);
    const bool want_x = tape.needs_grad(x);
    const bool want_w = tape.needs_grad(weight);
    std::vector<double> col(static_cast<std::size_t>(rows) * cols);
    for (int n = 0; n < xs.n; ++n) {
      ConstMatrixMap gmat(g.plane(n, 0), plan.cout, cols);
      if (want_w) {
        const double* in = x.value().plane(n, 0);
        const double* colp = in;
        if (!plan.pointwise()) {
          im2col(in, plan, col.data());
          colp = col.data();
        }
        MatrixMap gw(tape.grad(weight).data(), plan.cout, rows);
        gw.noalias() += gmat * ConstMatrixMap(colp, rows, cols).transpose();
      }
      if (want_x) {
        if (plan.pointwise()) {
          MatrixMap gx(tape.grad(x).plane(n, 0), rows, cols);
          gx.noalias() += wmat.transpose() * gmat;
        } else {
          MatrixMap cmat(col.data(), rows, cols);
          cmat.noalias() = wmat.transpose() * gmat;
          col2im_add(col.data(), plan, tape.grad(x).plane(n, 0));
        }
      }
    }
    if (has_bias && tape.needs_grad(bias_var)) {
      Tensor& gb = tape.grad(bias_var);
      for (int n = 0; n < xs.n; ++n) {
        for (int o = 0; o < plan.cout; ++o) {
          const double* gp = g.plane(n, o);
          double s = 0;
          for (int i = 0; i < cols; ++i) s += gp[i];
          gb[o] += s;
        }
      }
    }
  });
}

Var batch_norm(Var x, Var gamma, Var beta, Parameter& running_mean, Parameter& running_var,
               const BatchNormOptions& options) {
  Tape& tape = *x.tape();
  const Shape s = x.shape();
  if (gamma.shape().c != s.c || beta.shape().c != s.c || running_mean.value.shape().c != s.c) {
    throw ValidationError("batch_norm channel mismatch for input " + s.str());
  }
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * plane;
  std::vector<double> mean(s.c), inv_std(s.c);
  if (options.training) {
    for (int c = 0; c < s.c; ++c) {
      double sum = 0;
      for (int n = 0; n < s.n; ++n) {
        const double* p = x.value().plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      const double m = sum / count;
      double sq = 0;
      for (int n = 0; n < s.n; ++n) {
        const double* p = x.value().plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - m) * (p[i] - m);
      }
      const double var = sq / count;
      mean[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + options.eps);
      const double unbiased = count > 1 ? sq / (count - 1) : var;
      running_mean.value[c] = (1 - options.momentum) * running_mean.value[c] + options.momentum * m;
      running_var.value[c] = (1 - options.momentum) * running_var.value[c] + options.momentum * unbiased;
    }
  } else {
    for (int c = 0; c < s.c; ++c) {
      mean[c] = running_mean.value[c];
      inv_std[c] = 1.0 / std::sqrt(running_var.value[c] + options.eps);
    }
  }

  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* p = x.value().plane(n, c);
      double* o = out.plane(n, c);
      const double a = gamma.value()[c] * inv_std[c];
      const double b = beta.value()[c] - mean[c] * a;
      for (std::size_t i = 0; i < plane; ++i) o[i] = p[i] * a + b;
    }
  }

  const Var inputs[] = {x, gamma, beta};
  const bool training = options.training;
  return tape.push(std::move(out), inputs, [&tape, x, gamma, beta, mean, inv_std, training, count](const Tensor& g) {
    const Shape s = x.shape();
    const std::size_t plane = s.plane();
    for (int c = 0; c < s.c; ++c) {
      double sum_g = 0, sum_gx = 0;
      for (int n = 0; n < s.n; ++n) {
        const double* gp = g.plane(n, c);
        const double* xp = x.value().plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          sum_g += gp[i];
          sum_gx += gp[i] * (xp[i] - mean[c]) * inv_std[c];
        }
      }
      if (tape.needs_grad(gamma)) tape.grad(gamma)[c] += sum_gx;
      if (tape.needs_grad(beta)) tape.grad(beta)[c] += sum_g;
      if (!tape.needs_grad(x)) continue;
      const double gam = gamma.value()[c];
      for (int n = 0; n < s.n; ++n) {
        const double* gp = g.plane(n, c);
        const double* xp = x.value().plane(n, c);
        double* gx = tape.grad(x).plane(n, c);
        if (training) {
          const double k = gam * inv_std[c] / count;
          for (std::size_t i = 0; i < plane; ++i) {
            const double xhat = (xp[i] - mean[c]) * inv_std[c];
            gx[i] += k * (count * gp[i] - sum_g - xhat * sum_gx);
          }
        } else {
          const double k = gam * inv_std[c];
          for (std::size_t i = 0; i < plane; ++i) gx[i] += k * gp[i];
        }
      }
    }
  });
}

Var relu(Var x) {
  Tape& tape = *x.tape();
  Tensor out(x.shape());
  const Tensor& in = x.value();
  // NaN passes through so divergence is not masked.
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] <= 0 ? 0.0 : in[i];
  const Var inputs[] = {x};
  return tape.push(std::move(out), inputs, [&tape, x](const Tensor& g) {
    const Tensor& in = x.value();
    Tensor& gx = tape.grad(x);
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i] > 0) gx[i] += g[i];
    }
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  Tape& tape = *a.tape();
  if (!(a.shape() == b.shape())) {
    throw ValidationError("add shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  Tensor out = a.value();
  out.add_(b.value());
  const Var inputs[] = {a, b};
  return tape.push(std::move(out), inputs, [&tape, a, b](const Tensor& g) {
    if (tape.needs_grad(a)) tape.grad(a).add_(g);
    if (tape.needs_grad(b)) tape.grad(b).add_(g);
  });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("concat of zero tensors");
  Tape& tape = *parts[0].tape();
  const Shape first = parts[0].shape();
  int channels = 0;
  for (const Var& p : parts) {
    const Shape s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ValidationError("concat spatial mismatch " + s.str() + " vs " + first.str());
    }
    channels += s.c;
  }
  Tensor out(Shape{first.n, channels, first.h, first.w});
  const std::size_t plane = first.plane();
  for (int n = 0; n < first.n; ++n) {
    int offset = 0;
    for (const Var& p : parts) {
      const int c = p.shape().c;
      std::copy_n(p.value().plane(n, 0), c * plane, out.plane(n, offset));
      offset += c;
    }
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.push(std::move(out), inputs, [&tape, inputs, plane](const Tensor& g) {
    const int batch = g.shape().n;
    int offset = 0;
    for (const Var& p : inputs) {
      const int c = p.shape().c;
      if (tape.needs_grad(p)) {
        Tensor& gp = tape.grad(p);
        for (int n = 0; n < batch; ++n) {
          const double* src = g.plane(n, offset);
          double* dst = gp.plane(n, 0);
          for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
        }
      }
      offset += c;
    }
  });
}

Var resize_bilinear(Var x, int out_h, int out_w) {
  Tape& tape = *x.tape();
  const Shape s = x.shape();
  if (out_h <= 0 || out_w <= 0) throw ValidationError("resize to empty extent");
  if (s.h == out_h && s.w == out_w) return x;
  const auto ty = bilinear_taps(s.h, out_h);
  const auto tx = bilinear_taps(s.w, out_w);
  Tensor out(Shape{s.n, s.c, out_h, out_w});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* in = x.value().plane(n, c);
      double* o = out.plane(n, c);
      for (int y = 0; y < out_h; ++y) {
        const Tap& a = ty[y];
        const double* r0 = in + static_cast<std::size_t>(a.lo) * s.w;
        const double* r1 = in + static_cast<std::size_t>(a.hi) * s.w;
        for (int xo = 0; xo < out_w; ++xo) {
          const Tap& b = tx[xo];
          const double top = r0[b.lo] * (1 - b.frac) + r0[b.hi] * b.frac;
          const double bot = r1[b.lo] * (1 - b.frac) + r1[b.hi] * b.frac;
          o[y * out_w + xo] = top * (1 - a.frac) + bot * a.frac;
        }
      }
    }
  }
  const Var inputs[] = {x};
  return tape.push(std::move(out), inputs, [&tape, x, ty, tx, out_h, out_w](const Tensor& g) {
    const Shape s = x.shape();
    Tensor& gx = tape.grad(x);
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const double* gp = g.plane(n, c);
        double* d = gx.plane(n, c);
        for (int y = 0; y < out_h; ++y) {
          const Tap& a = ty[y];
          for (int xo = 0; xo < out_w; ++xo) {
            const Tap& b = tx[xo];
            const double v = gp[y * out_w + xo];
            d[a.lo * s.w + b.lo] += v * (1 - a.frac) * (1 - b.frac);
            d[a.lo * s.w + b.hi] += v * (1 - a.frac) * b.frac;
            d[a.hi * s.w + b.lo] += v * a.frac * (1 - b.frac);
            d[a.hi * s.w + b.hi] += v * a.frac * b.frac;
          }
        }
      }
    }
  });
}

Var global_avg_pool(Var x) {
  Tape& tape = *x.tape();
  const Shape s = x.shape();
  Tensor out(Shape{s.n, s.c, 1, 1});
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* p = x.value().plane(n, c);
      double sum = 0;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      out.at(n, c, 0, 0) = sum / static_cast<double>(plane);
    }
  }
  const Var inputs[] = {x};
  return tape.push(std::move(out), inputs, [&tape, x](const Tensor& g) {
    const Shape s = x.shape();
    const std::size_t plane = s.plane();
    Tensor& gx = tape.grad(x);
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const double v = g.at(n, c, 0, 0) / static_cast<double>(plane);
        double* d = gx.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) d[i] += v;
      }
    }
  });
}

Var mean_all(Var x) {
  Tape& tape = *x.tape();
  const Tensor& in = x.value();
  double sum = 0;
  for (double v : in.values()) sum += v;
  Tensor out(Shape{1, 1, 1, 1}, sum / static_cast<double>(in.size()));
  const Var inputs[] = {x};
  return tape.push(std::move(out), inputs, [&tape, x](const Tensor& g) {
    Tensor& gx = tape.grad(x);
    const double v = g[0] / static_cast<double>(gx.size());
    for (double& d : gx.values()) d += v;
  });
}

Var cross_entropy(Var logits, std::span<const std::uint8_t> labels) {
  Tape& tape = *logits.tape();
  const Shape s = logits.shape();
  const std::size_t plane = s.plane();
  if (labels.size() != static_cast<std::size_t>(s.n) * plane) {
    throw ValidationError("label count does not match logits " + s.str());
  }
  // probs holds the softmax for the backward pass.
  Tensor probs(s);
  double total = 0;
  std::size_t valid = 0;
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      const std::uint8_t label = labels[n * plane + i];
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < s.c; ++c) mx = std::max(mx, logits.value().plane(n, c)[i]);
      double z = 0;
      for (int c = 0; c < s.c; ++c) {
        const double e = std::exp(logits.value().plane(n, c)[i] - mx);
        probs.plane(n, c)[i] = e;
        z += e;
      }
      for (int c = 0; c < s.c; ++c) probs.plane(n, c)[i] /= z;
      if (label == kIgnoreLabel) continue;
      if (label >= s.c) {
        throw ValidationError("label " + std::to_string(label) + " out of range for " + std::to_string(s.c) +
                              " classes");
      }
      total += -(logits.value().plane(n, label)[i] - mx - std::log(z));
      ++valid;
    }
  }
  if (valid == 0) throw ValidationError("cross-entropy over a batch where every pixel is ignored");
  Tensor out(Shape{1, 1, 1, 1}, total / static_cast<double>(valid));
  std::vector<std::uint8_t> label_copy(labels.begin(), labels.end());
  const Var inputs[] = {logits};
  return tape.push(std::move(out), inputs,
                   [&tape, logits, probs = std::move(probs), label_copy = std::move(label_copy), valid](const Tensor& g) {
                     const Shape s = logits.shape();
                     const std::size_t plane = s.plane();
                     const double k = g[0] / static_cast<double>(valid);
                     Tensor& gx = tape.grad(logits);
                     for (int n = 0; n < s.n; ++n) {
                       for (std::size_t i = 0; i < plane; ++i) {
                         const std::uint8_t label = label_copy[n * plane + i];
                         if (label == kIgnoreLabel) continue;
                         for (int c = 0; c < s.c; ++c) {
                           const double target = c == label ? 1.0 : 0.0;
                           gx.plane(n, c)[i] += k * (probs.plane(n, c)[i] - target);
                         }
                       }
                     }
                   });
}

}  // namespace icehrnet::nn
