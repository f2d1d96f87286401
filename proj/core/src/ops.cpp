#include "relmod/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "relmod/errors.hpp"
#include "relmod/rng.hpp"

namespace relmod::ops {

namespace {

bool track(Tape& tape, const Tensor& t) { return tape.recording() && t.requires_grad(); }

Tensor make_out(Tape& tape, Shape shape, std::vector<double> vals, bool any_grad) {
  return Tensor::from_values(std::move(shape), std::move(vals), tape.recording() && any_grad);
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
}

// outer x extent x inner view of one axis
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const char* op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(shape));
  }
  AxisView v;
  for (std::size_t d = 0; d < axis; ++d) v.outer *= shape[d];
  v.extent = shape[axis];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) v.inner *= shape[d];
  return v;
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    shape_fail("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = out.data() + i * n;
    const double* arow = pa + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = pb + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  Tensor y = make_out(tape, {m, n}, std::move(out), a.requires_grad() || b.requires_grad());
  if (y.requires_grad()) {
    Tensor ac = a, bc = b, yc = y;
    tape.record([ac, bc, yc, m, k, n]() mutable {
      const std::vector<double>& gy = yc.grad();
      if (ac.requires_grad()) {
        std::vector<double>& ga = ac.grad();
        const double* pb = bc.data().data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* gyrow = gy.data() + i * n;
          double* garow = ga.data() + i * k;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double* brow = pb + kk * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += gyrow[j] * brow[j];
            garow[kk] += acc;
          }
        }
      }
      if (bc.requires_grad()) {
        std::vector<double>& gb = bc.grad();
        const double* pa = ac.data().data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* arow = pa + i * k;
          const double* gyrow = gy.data() + i * n;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            double* gbrow = gb.data() + kk * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * gyrow[j];
          }
        }
      }
    });
  }
  return y;
}

Tensor transpose(Tape& tape, const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expected rank-2, got " + shape_str(x.shape()));
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x.data()[i * n + j];
  Tensor y = make_out(tape, {n, m}, std::move(out), x.requires_grad());
  if (y.requires_grad()) {
    Tensor xc = x, yc = y;
    tape.record([xc, yc, m, n]() mutable {
      std::vector<double>& gx = xc.grad();
      const std::vector<double>& gy = yc.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += gy[j * m + i];
    });
  }
  return y;
}

Tensor bias_add(Tape& tape, const Tensor& x, const Tensor& b) {
  if (b.rank() != 1 || x.rank() < 1 || x.shape().back() != b.shape()[0]) {
    shape_fail("bias_add", x.shape(), b.shape());
  }
  const std::size_t n = b.shape()[0];
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.data());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += b.data()[j];
  Tensor y = make_out(tape, x.shape(), std::move(out), x.requires_grad() || b.requires_grad());
  if (y.requires_grad()) {
    Tensor xc = x, bc = b, yc = y;
    tape.record([xc, bc, yc, rows, n]() mutable {
      const std::vector<double>& gy = yc.grad();
      if (xc.requires_grad()) {
        std::vector<double>& gx = xc.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
      }
      if (bc.requires_grad()) {
        std::vector<double>& gb = bc.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) gb[j] += gy[r * n + j];
      }
    });
  }
  return y;
}

Tensor relu(Tape& tape, const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  Tensor y = make_out(tape, x.shape(), std::move(out), x.requires_grad());
  if (y.requires_grad()) {
    Tensor xc = x, yc = y;
    tape.record([xc, yc]() mutable {
      std::vector<double>& gx = xc.grad();
      const std::vector<double>& gy = yc.grad();
      const std::vector<double>& xv = xc.data();
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (xv[i] > 0.0) gx[i] += gy[i];
    });
  }
  return y;
}

namespace {

template <typename FwdFn, typename BwdFn>
Tensor binary_elementwise(Tape& tape, const char* name, const Tensor& a, const Tensor& b,
                          FwdFn fwd, BwdFn bwd) {
  if (a.shape() != b.shape()) shape_fail(name, a.shape(), b.shape());
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.data()[i], b.data()[i]);
  Tensor y = make_out(tape, a.shape(), std::move(out), a.requires_grad() || b.requires_grad());
  if (y.requires_grad()) {
    Tensor ac = a, bc = b, yc = y;
    tape.record([ac, bc, yc, bwd]() mutable {
      const std::vector<double>& gy = yc.grad();
      std::vector<double>* ga = ac.requires_grad() ? &ac.grad() : nullptr;
      std::vector<double>* gb = bc.requires_grad() ? &bc.grad() : nullptr;
      for (std::size_t i = 0; i < gy.size(); ++i) {
        auto [da, db] = bwd(ac.data()[i], bc.data()[i], gy[i]);
        if (ga) (*ga)[i] += da;
        if (gb) (*gb)[i] += db;
      }
    });
  }
  return y;
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      tape, "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g) { return std::pair<double, double>(g, g); });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      tape, "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g) { return std::pair<double, double>(g, -g); });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      tape, "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g) { return std::pair<double, double>(g * y, g * x); });
}

Tensor div(Tape& tape, const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0 || !std::isfinite(v)) {
      throw NumericError("div: zero or non-finite denominator");
    }
  }
  return binary_elementwise(
      tape, "div", a, b, [](double x, double y) { return x / y; },
      [](double x, double y, double g) {
        return std::pair<double, double>(g / y, -g * x / (y * y));
      });
}

Tensor add_const(Tape& tape, const Tensor& x, double c) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + c;
  Tensor y = make_out(tape, x.shape(), std::move(out), x.requires_grad());
  if (y.requires_grad()) {
    Tensor xc = x, yc = y;
    tape.record([xc, yc]() mutable {
      std::vector<double>& gx = xc.grad();
      const std::vector<double>& gy = yc.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    });
  }
  return y;
}

Tensor mul_const(Tape& tape, const Tensor& x, double c) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * c;
  Tensor y = make_out(tape, x.shape(), std::move(out), x.requires_grad());
  if (y.requires_grad()) {
    Tensor xc = x, yc = y;
    tape.record([xc, yc, c]() mutable {
      std::vector<double>& gx = xc.grad();
      const std::vector<double>& gy = yc.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += c * gy[i];
    });
  }
  return y;
}

Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(s0));
  }
  std::size_t total_extent = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    if (p.rank() != s0.size()) shape_fail("concat", s0, p.shape());
    for (std::size_t d = 0; d < s0.size(); ++d) {
      if (d != axis && p.shape()[d] != s0[d]) shape_fail("concat", s0, p.shape());
    }
    total_extent += p.shape()[axis];
    any_grad = any_grad || p.requires_grad();
  }
  Shape out_shape = s0;
  out_shape[axis] = total_extent;
  AxisView ov = axis_view("concat", out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t pos = 0;
  for (const Tensor& p : parts) {
    const std::size_t ext = p.shape()[axis];
    for (std::size_t o = 0; o < ov.outer; ++o) {
      const double* src = p.data().data() + o * ext * ov.inner;
      double* dst = out.data() + (o * total_extent + pos) * ov.inner;
      std::copy(src, src + ext * ov.inner, dst);
    }
    pos += ext;
  }
  Tensor y = make_out(tape, out_shape, std::move(out), any_grad);
  if (y.requires_grad()) {
    std::vector<Tensor> pc = parts;
    Tensor yc = y;
    tape.record([pc, yc, ov, total_extent]() mutable {
      const std::vector<double>& gy = yc.grad();
      std::size_t pos = 0;
      for (Tensor& p : pc) {
        const std::size_t ext = p.numel() / (ov.outer * ov.inner);
        if (p.requires_grad()) {
          std::vector<double>& gp = p.grad();
          for (std::size_t o = 0; o < ov.outer; ++o) {
            const double* src = gy.data() + (o * total_extent + pos) * ov.inner;
            double* dst = gp.data() + o * ext * ov.inner;
            for (std::size_t i = 0; i < ext * ov.inner; ++i) dst[i] += src[i];
          }
        }
        pos += ext;
      }
    });
  }
  return y;
}

Tensor slice(Tape& tape, const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
  AxisView v = axis_view("slice", x.shape(), axis);
  if (len == 0 || start + len > v.extent) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of bounds for extent " +
                     std::to_string(v.extent));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::vector<double> out(shape_numel(out_shape));
  for (std::size_t o = 0; o < v.outer; ++o) {
    const double* src = x.data().data() + (o * v.extent + start) * v.inner;
    std::copy(src, src + len * v.inner, out.data() + o * len * v.inner);
  }
  Tensor y = make_out(tape, out_shape, std::move(out), x.requires_grad());
  if (y.requires_grad()) {
    Tensor xc = x, yc = y;
    tape.record([xc, yc, v, start, len]() mutable {
      std::vector<double>& gx = xc.grad();
      const std::vector<double>& gy = yc.grad();
      for (std::size_t o = 0; o < v.outer; ++o) {
        const double* src = gy.data() + o * len * v.inner;
        double* dst = gx.data() + (o * v.extent + start) * v.inner;
        for (std::size_t i = 0; i < len * v.inner; ++i) dst[i] += src[i];
      }
    });
  }
  return y;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) shape_fail("reshape", x.shape(), new_shape);
  Tensor y = make_out(tape, std::move(new_shape), x.data(), x.requires_grad());
  if (y.requires_grad()) {
    Tensor xc = x, yc = y;
    tape.record([xc, yc]() mutable {
      std::vector<double>& gx = xc.grad();
      const std::vector<double>& gy = yc.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    });
  }
  return y;
}

namespace {

Tensor reduce_axis(Tape& tape, const char* name, const Tensor& x, std::size_t axis, bool mean) {
  AxisView v = axis_view(name, x.shape(), axis);
  Shape out_shape;
  for (std::size_t d = 0; d < x.rank(); ++d)
    if (d != axis) out_shape.push_back(x.shape()[d]);
  if (out_shape.empty()) out_shape = {1};
  const double scale = mean ? 1.0 / static_cast<double>(v.extent) : 1.0;
  std::vector<double> out(v.outer * v.inner, 0.0);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t e = 0; e < v.extent; ++e) {
      const double* src = x.data().data() + (o * v.extent + e) * v.inner;
      double* dst = out.data() + o * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i];
    }
  }
  if (mean)
    for (double& d : out) d *= scale;
  Tensor y = make_out(tape, out_shape, std::move(out), x.requires_grad());
  if (y.requires_grad()) {
    Tensor xc = x, yc = y;
    tape.record([xc, yc, v, scale]() mutable {
      std::vector<double>& gx = xc.grad();
      const std::vector<double>& gy = yc.grad();
      for (std::size_t o = 0; o < v.outer; ++o) {
        const double* src = gy.data() + o * v.inner;
        for (std::size_t e = 0; e < v.extent; ++e) {
          double* dst = gx.data() + (o * v.extent + e) * v.inner;
          for (std::size_t i = 0; i < v.inner; ++i) dst[i] += scale * src[i];
        }
      }
    });
  }
  return y;
}

}  // namespace

Tensor reduce_sum(Tape& tape, const Tensor& x, std::size_t axis) {
  return reduce_axis(tape, "reduce_sum", x, axis, false);
}

Tensor reduce_mean(Tape& tape, const Tensor& x, std::size_t axis) {
  return reduce_axis(tape, "reduce_mean", x, axis, true);
}

Tensor sum_all(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor y = make_out(tape, {1}, {s}, x.requires_grad());
  if (y.requires_grad()) {
    Tensor xc = x, yc = y;
    tape.record([xc, yc]() mutable {
      std::vector<double>& gx = xc.grad();
      const double g = yc.grad()[0];
      for (double& v : gx) v += g;
    });
  }
  return y;
}

Tensor maxpool2x2(Tape& tape, const Tensor& x) {
  if (x.rank() != 3 || x.shape()[0] % 2 != 0 || x.shape()[1] % 2 != 0) {
    throw ShapeError("maxpool2x2: need [H,W,C] with even H,W, got " + shape_str(x.shape()));
  }
  const std::size_t h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<double> out(oh * ow * c);
  std::vector<std::size_t> argmax(oh * ow * c);
  const auto& xv = x.data();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        // window scanned in row-major order; strict > keeps the first max
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ((2 * oy + dy) * w + (2 * ox + dx)) * c + ch;
            if (xv[idx] > best) {
              best = xv[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (oy * ow + ox) * c + ch;
        out[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
  Tensor y = make_out(tape, {oh, ow, c}, std::move(out), x.requires_grad());
  if (y.requires_grad()) {
    Tensor xc = x, yc = y;
    tape.record([xc, yc, argmax]() mutable {
      std::vector<double>& gx = xc.grad();
      const std::vector<double>& gy = yc.grad();
      for (std::size_t o = 0; o < gy.size(); ++o) gx[argmax[o]] += gy[o];
    });
  }
  return y;
}

Tensor dropout(Tape& tape, const Tensor& x, double p, bool train, std::uint64_t seed) {
  if (p < 0.0 || p >= 1.0) {
    throw ConfigError("dropout: p must be in [0,1), got " + std::to_string(p));
  }
  if (!train || p == 0.0) return x;  // eval mode is the identity
  std::mt19937_64 rng(seed);
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = uniform_double(rng) >= p ? keep_scale : 0.0;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
  Tensor y = make_out(tape, x.shape(), std::move(out), x.requires_grad());
  if (y.requires_grad()) {
    Tensor xc = x, yc = y;
    tape.record([xc, yc, mask]() mutable {
      std::vector<double>& gx = xc.grad();
      const std::vector<double>& gy = yc.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * mask[i];
    });
  }
  return y;
}

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, std::size_t stride,
              std::size_t pad) {
  if (input.rank() != 3 || kernel.rank() != 4 || kernel.shape()[0] != kernel.shape()[1] ||
      kernel.shape()[2] != input.shape()[2]) {
    shape_fail("conv2d", input.shape(), kernel.shape());
  }
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  const std::size_t h = input.shape()[0], w = input.shape()[1], cin = input.shape()[2];
  const std::size_t k = kernel.shape()[0], cout = kernel.shape()[3];
  const std::ptrdiff_t oh_s = (static_cast<std::ptrdiff_t>(h + 2 * pad) -
                               static_cast<std::ptrdiff_t>(k)) /
                                  static_cast<std::ptrdiff_t>(stride) +
                              1;
  const std::ptrdiff_t ow_s = (static_cast<std::ptrdiff_t>(w + 2 * pad) -
                               static_cast<std::ptrdiff_t>(k)) /
                                  static_cast<std::ptrdiff_t>(stride) +
                              1;
  if (oh_s <= 0 || ow_s <= 0 || h + 2 * pad < k || w + 2 * pad < k) {
    throw ShapeError("conv2d: non-positive output size for input " + shape_str(input.shape()) +
                     " kernel " + shape_str(kernel.shape()));
  }
  const std::size_t oh = static_cast<std::size_t>(oh_s), ow = static_cast<std::size_t>(ow_s);
  std::vector<double> out(oh * ow * cout, 0.0);
  const double* in = input.data().data();
  const double* kw = kernel.data().data();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double* orow = out.data() + (oy * ow + ox) * cout;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                 static_cast<std::ptrdiff_t>(pad);
        if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t xcoord = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                        static_cast<std::ptrdiff_t>(pad);
          if (xcoord < 0 || xcoord >= static_cast<std::ptrdiff_t>(w)) continue;
          const double* irow = in + (static_cast<std::size_t>(y) * w +
                                     static_cast<std::size_t>(xcoord)) *
                                        cin;
          const double* krow = kw + (ky * k + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double iv = irow[ci];
            const double* kv = krow + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) orow[co] += iv * kv[co];
          }
        }
      }
    }
  }
  Tensor y = make_out(tape, {oh, ow, cout}, std::move(out),
                      input.requires_grad() || kernel.requires_grad());
  if (y.requires_grad()) {
    Tensor ic = input, kc = kernel, yc = y;
    tape.record([ic, kc, yc, h, w, cin, k, cout, oh, ow, stride, pad]() mutable {
      const std::vector<double>& gy = yc.grad();
      const bool gi = ic.requires_grad(), gk = kc.requires_grad();
      std::vector<double>* gin = gi ? &ic.grad() : nullptr;
      std::vector<double>* gker = gk ? &kc.grad() : nullptr;
      const double* in = ic.data().data();
      const double* kw = kc.data().data();
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double* grow = gy.data() + (oy * ow + ox) * cout;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                        static_cast<std::ptrdiff_t>(pad);
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
              const std::size_t ipos = (static_cast<std::size_t>(yy) * w +
                                        static_cast<std::size_t>(xx)) *
                                       cin;
              const std::size_t kpos = (ky * k + kx) * cin * cout;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                if (gin) {
                  const double* kv = kw + kpos + ci * cout;
                  double acc = 0.0;
                  for (std::size_t co = 0; co < cout; ++co) acc += grow[co] * kv[co];
                  (*gin)[ipos + ci] += acc;
                }
                if (gker) {
                  const double iv = in[ipos + ci];
                  double* kgrow = gker->data() + kpos + ci * cout;
                  for (std::size_t co = 0; co < cout; ++co) kgrow[co] += iv * grow[co];
                }
              }
            }
          }
        }
      }
    });
  }
  return y;
}

namespace {

double vec_norm(const double* v, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += v[i] * v[i];
  return std::sqrt(s);
}

}  // namespace

Tensor l2_normalize_scale(Tape& tape, const Tensor& x, double s) {
  if (s <= 0.0) throw ConfigError("l2_normalize_scale: scale must be positive");
  if (x.rank() != 1 && x.rank() != 2) {
    throw ShapeError("l2_normalize_scale: expected vector or row matrix, got " +
                     shape_str(x.shape()));
  }
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  std::vector<double> norms(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double nrm = vec_norm(x.data().data() + r * d, d);
    if (nrm <= kNormEpsilon) {
      throw DegenerateVectorError("l2_normalize_scale: vector " + std::to_string(r) +
                                  " has norm " + std::to_string(nrm) + " <= epsilon");
    }
    norms[r] = nrm;
    const double f = s / nrm;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x.data()[r * d + j] * f;
  }
  Tensor y = make_out(tape, x.shape(), std::move(out), x.requires_grad());
  if (y.requires_grad()) {
    Tensor xc = x, yc = y;
    tape.record([xc, yc, norms, s, rows, d]() mutable {
      std::vector<double>& gx = xc.grad();
      const std::vector<double>& gy = yc.grad();
      const std::vector<double>& xv = xc.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double nrm = norms[r];
        const double* g = gy.data() + r * d;
        const double* v = xv.data() + r * d;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += g[j] * v[j];
        const double f = s / nrm;
        const double proj = dot / (nrm * nrm);
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += f * (g[j] - proj * v[j]);
      }
    });
  }
  return y;
}

Tensor cosine_similarity(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1 || a.shape() != b.shape()) {
    shape_fail("cosine_similarity", a.shape(), b.shape());
  }
  const std::size_t d = a.numel();
  const double na = vec_norm(a.data().data(), d);
  const double nb = vec_norm(b.data().data(), d);
  if (na <= kNormEpsilon || nb <= kNormEpsilon) {
    throw DegenerateVectorError("cosine_similarity: zero-norm input");
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < d; ++i) dot += a.data()[i] * b.data()[i];
  const double c = std::clamp(dot / (na * nb), -1.0, 1.0);
  Tensor y = make_out(tape, {1}, {c}, a.requires_grad() || b.requires_grad());
  if (y.requires_grad()) {
    Tensor ac = a, bc = b, yc = y;
    tape.record([ac, bc, yc, na, nb, c, d]() mutable {
      const double g = yc.grad()[0];
      const std::vector<double>& av = ac.data();
      const std::vector<double>& bv = bc.data();
      if (ac.requires_grad()) {
        std::vector<double>& ga = ac.grad();
        for (std::size_t i = 0; i < d; ++i)
          ga[i] += g * (bv[i] / (na * nb) - c * av[i] / (na * na));
      }
      if (bc.requires_grad()) {
        std::vector<double>& gb = bc.grad();
        for (std::size_t i = 0; i < d; ++i)
          gb[i] += g * (av[i] / (na * nb) - c * bv[i] / (nb * nb));
      }
    });
  }
  return y;
}

Tensor gather_rows(Tape& tape, const Tensor& x, const std::vector<std::size_t>& rows) {
  if (x.rank() != 2) throw ShapeError("gather_rows: expected [K,D], got " + shape_str(x.shape()));
  const std::size_t kdim = x.shape()[0], d = x.shape()[1];
  for (std::size_t r : rows) {
    if (r >= kdim) {
      throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range " +
                       std::to_string(kdim));
    }
  }
  std::vector<double> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* src = x.data().data() + rows[i] * d;
    std::copy(src, src + d, out.data() + i * d);
  }
  Tensor y = make_out(tape, {rows.size(), d}, std::move(out), x.requires_grad());
  if (y.requires_grad()) {
    Tensor xc = x, yc = y;
    tape.record([xc, yc, rows, d]() mutable {
      std::vector<double>& gx = xc.grad();
      const std::vector<double>& gy = yc.grad();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const double* src = gy.data() + i * d;
        double* dst = gx.data() + rows[i] * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return y;
}

Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax_cross_entropy: expected [B,M], got " + shape_str(logits.shape()));
  }
  const std::size_t b = logits.shape()[0], m = logits.shape()[1];
  if (labels.size() != b) {
    throw ShapeError("softmax_cross_entropy: batch " + std::to_string(b) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= m) {
      throw Error("softmax_cross_entropy: label " + std::to_string(l) + " out of range [0," +
                  std::to_string(m) + ")");
    }
  }
  // stable log-sum-exp; probs kept for the backward rule
  std::vector<double> probs(b * m);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = logits.data().data() + i * m;
    double mx = row[0];
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < m; ++j) probs[i * m + j] = std::exp(row[j] - lse);
    loss += lse - row[labels[i]];
  }
  loss /= static_cast<double>(b);
  Tensor y = make_out(tape, {1}, {loss}, logits.requires_grad());
  if (y.requires_grad()) {
    Tensor lc = logits, yc = y;
    tape.record([lc, yc, probs, labels, b, m]() mutable {
      std::vector<double>& gl = lc.grad();
      const double g = yc.grad()[0] / static_cast<double>(b);
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          double delta = probs[i * m + j];
          if (static_cast<std::size_t>(labels[i]) == j) delta -= 1.0;
          gl[i * m + j] += g * delta;
        }
      }
    });
  }
  return y;
}

}  // namespace relmod::ops
