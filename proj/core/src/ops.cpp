#include "dcnet/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace dcnet {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

CMapMat cmap(std::span<const double> s, std::int64_t rows, std::int64_t cols) {
  return CMapMat(s.data(), rows, cols);
}
MapMat map(std::span<double> s, std::int64_t rows, std::int64_t cols) {
  return MapMat(s.data(), rows, cols);
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  }
}

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw InvalidArgument(std::string(op) + ": axis out of range for rank " + std::to_string(rank));
  }
  return axis;
}

// outer x n x inner decomposition around `axis`.
struct AxisSplit {
  std::int64_t outer = 1, n = 1, inner = 1;
};
AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.n = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

struct ConvGeom {
  std::int64_t cin, h, w, cout, kh, kw, ho, wo;
  int stride, pad;
};

void im2col(std::span<const double> in, const ConvGeom& g, std::vector<double>& col) {
  const std::int64_t cols = g.ho * g.wo;
  col.assign(static_cast<std::size_t>(g.cin * g.kh * g.kw * cols), 0.0);
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < g.cin; ++c) {
    const double* plane = in.data() + c * g.h * g.w;
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx, ++row) {
        double* dst = col.data() + row * cols;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.w) continue;
            dst[oy * g.wo + ox] = plane[iy * g.w + ix];
          }
        }
      }
    }
  }
}

void col2im_add(const RowMat& col, const ConvGeom& g, std::span<double> out) {
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < g.cin; ++c) {
    double* plane = out.data() + c * g.h * g.w;
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx, ++row) {
        const double* src = col.data() + row * col.cols();
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.w) continue;
            plane[iy * g.w + ix] += src[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor make_op(std::string name, Shape shape, std::vector<double> values,
               std::vector<Tensor> inputs, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values));
  Tape* tape = active_tape();
  if (!tape) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  out.set_requires_grad(true);
  tape->record(std::move(name), std::move(inputs), out, std::move(backward));
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions opts) {
  require(input.rank() == 3, "conv2d: input must be [C,H,W], got " + shape_str(input.shape()));
  require(weight.rank() == 4, "conv2d: weight must be [C_out,C_in,kh,kw], got " + shape_str(weight.shape()));
  require(opts.stride >= 1, "conv2d: stride must be >= 1");
  require(opts.padding >= 0, "conv2d: padding must be >= 0");
  ConvGeom g{input.dim(0), input.dim(1), input.dim(2), weight.dim(0), weight.dim(2), weight.dim(3),
             0, 0, opts.stride, opts.padding};
  if (weight.dim(1) != g.cin) {
    throw InvalidArgument("conv2d: input channel dimension C_in mismatch (input " +
                          std::to_string(g.cin) + ", weight " + std::to_string(weight.dim(1)) + ")");
  }
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == g.cout,
            "conv2d: bias dimension C_out mismatch, got " + shape_str(bias.shape()));
  }
  const std::int64_t span_h = g.h + 2 * g.pad - g.kh;
  const std::int64_t span_w = g.w + 2 * g.pad - g.kw;
  require(span_h >= 0, "conv2d: height " + std::to_string(g.h) + " too small for kernel");
  require(span_w >= 0, "conv2d: width " + std::to_string(g.w) + " too small for kernel");
  if (opts.strict) {
    require(span_h % g.stride == 0, "conv2d: height does not tile exactly with stride");
    require(span_w % g.stride == 0, "conv2d: width does not tile exactly with stride");
  }
  g.ho = span_h / g.stride + 1;
  g.wo = span_w / g.stride + 1;

  auto col = std::make_shared<std::vector<double>>();
  im2col(input.data(), g, *col);
  const std::int64_t k = g.cin * g.kh * g.kw;
  const std::int64_t cols = g.ho * g.wo;

  std::vector<double> out(static_cast<std::size_t>(g.cout * cols));
  map(out, g.cout, cols).noalias() = cmap(weight.data(), g.cout, k) * cmap(*col, k, cols);
  if (bias.defined()) {
    auto b = bias.data();
    for (std::int64_t o = 0; o < g.cout; ++o) {
      double* row = out.data() + o * cols;
      for (std::int64_t j = 0; j < cols; ++j) row[j] += b[static_cast<std::size_t>(o)];
    }
  }

  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op(
      "conv2d", Shape{g.cout, g.ho, g.wo}, std::move(out), std::move(inputs),
      [g, col, weight, k, cols, has_bias = bias.defined()](BackwardContext& ctx) {
        auto gout = cmap(ctx.grad_output(), g.cout, cols);
        if (ctx.needs(1)) {
          map(ctx.grad_input(1), g.cout, k).noalias() += gout * cmap(*col, k, cols).transpose();
        }
        if (has_bias && ctx.needs(2)) {
          auto gb = ctx.grad_input(2);
          for (std::int64_t o = 0; o < g.cout; ++o) gb[static_cast<std::size_t>(o)] += gout.row(o).sum();
        }
        if (ctx.needs(0)) {
          RowMat gcol = cmap(weight.data(), g.cout, k).transpose() * gout;
          col2im_add(gcol, g, ctx.grad_input(0));
        }
      });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require(weight.rank() == 2, "linear: weight must be [D_out,D_in], got " + shape_str(weight.shape()));
  const std::int64_t din = weight.dim(1), dout = weight.dim(0);
  if (input.dim(-1) != din) {
    throw InvalidArgument("linear: trailing input dimension " + std::to_string(input.dim(-1)) +
                          " != D_in " + std::to_string(din));
  }
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == dout,
            "linear: bias must have D_out entries, got " + shape_str(bias.shape()));
  }
  const std::int64_t rows = input.numel() / din;
  std::vector<double> out(static_cast<std::size_t>(rows * dout));
  auto o = map(out, rows, dout);
  o.noalias() = cmap(input.data(), rows, din) * cmap(weight.data(), dout, din).transpose();
  if (bias.defined()) {
    Eigen::Map<const Eigen::RowVectorXd> b(bias.data().data(), dout);
    o.rowwise() += b;
  }
  Shape shape = input.shape();
  shape.back() = dout;
  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op("linear", std::move(shape), std::move(out), std::move(inputs),
                 [input, weight, rows, din, dout, has_bias = bias.defined()](BackwardContext& ctx) {
                   auto g = cmap(ctx.grad_output(), rows, dout);
                   if (ctx.needs(0)) {
                     map(ctx.grad_input(0), rows, din).noalias() += g * cmap(weight.data(), dout, din);
                   }
                   if (ctx.needs(1)) {
                     map(ctx.grad_input(1), dout, din).noalias() +=
                         g.transpose() * cmap(input.data(), rows, din);
                   }
                   if (has_bias && ctx.needs(2)) {
                     Eigen::Map<Eigen::RowVectorXd> gb(ctx.grad_input(2).data(), dout);
                     gb += g.colwise().sum();
                   }
                 });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be 2-D");
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw InvalidArgument("matmul: inner dimensions differ (" + std::to_string(k) + " vs " +
                          std::to_string(b.dim(0)) + ")");
  }
  std::vector<double> out(static_cast<std::size_t>(m * n));
  map(out, m, n).noalias() = cmap(a.data(), m, k) * cmap(b.data(), k, n);
  return make_op("matmul", Shape{m, n}, std::move(out), {a, b}, [a, b, m, k, n](BackwardContext& ctx) {
    auto g = cmap(ctx.grad_output(), m, n);
    if (ctx.needs(0)) map(ctx.grad_input(0), m, k).noalias() += g * cmap(b.data(), k, n).transpose();
    if (ctx.needs(1)) map(ctx.grad_input(1), k, n).noalias() += cmap(a.data(), m, k).transpose() * g;
  });
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose: operand must be 2-D, got " + shape_str(a.shape()));
  const std::int64_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m * n));
  map(out, n, m) = cmap(a.data(), m, n).transpose();
  return make_op("transpose", Shape{n, m}, std::move(out), {a}, [m, n](BackwardContext& ctx) {
    map(ctx.grad_input(0), m, n) += cmap(ctx.grad_output(), n, m).transpose();
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw InvalidArgument("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op("reshape", std::move(shape), std::move(out), {a}, [](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    auto gi = ctx.grad_input(0);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
  });
}

Tensor softmax(const Tensor& input, int axis) {
  axis = normalize_axis(axis, input.rank(), "softmax");
  const AxisSplit s = split_axis(input.shape(), axis);
  auto x = input.data();
  std::vector<double> out(x.size());
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t i = 0; i < s.inner; ++i) {
      const std::int64_t base = o * s.n * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t j = 0; j < s.n; ++j) mx = std::max(mx, x[static_cast<std::size_t>(base + j * s.inner)]);
      double z = 0.0;
      for (std::int64_t j = 0; j < s.n; ++j) {
        const auto idx = static_cast<std::size_t>(base + j * s.inner);
        out[idx] = std::exp(x[idx] - mx);
        z += out[idx];
      }
      for (std::int64_t j = 0; j < s.n; ++j) out[static_cast<std::size_t>(base + j * s.inner)] /= z;
    }
  }
  auto y = std::make_shared<std::vector<double>>(out);
  return make_op("softmax", input.shape(), std::move(out), {input}, [s, y](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    auto gi = ctx.grad_input(0);
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t i = 0; i < s.inner; ++i) {
        const std::int64_t base = o * s.n * s.inner + i;
        double dot = 0.0;
        for (std::int64_t j = 0; j < s.n; ++j) {
          const auto idx = static_cast<std::size_t>(base + j * s.inner);
          dot += g[idx] * (*y)[idx];
        }
        for (std::int64_t j = 0; j < s.n; ++j) {
          const auto idx = static_cast<std::size_t>(base + j * s.inner);
          gi[idx] += (*y)[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Tensor relu(const Tensor& input) {
  auto x = input.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return make_op("relu", input.shape(), std::move(out), {input}, [input](BackwardContext& ctx) {
    auto x = input.data();
    auto g = ctx.grad_output();
    auto gi = ctx.grad_input(0);
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] > 0.0) gi[i] += g[i];
  });
}

Tensor global_avg_pool(const Tensor& input) {
  require(input.rank() == 3, "global_avg_pool: input must be [C,H,W], got " + shape_str(input.shape()));
  const std::int64_t c = input.dim(0), hw = input.dim(1) * input.dim(2);
  auto x = input.data();
  std::vector<double> out(static_cast<std::size_t>(c), 0.0);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::int64_t j = 0; j < hw; ++j) acc += x[static_cast<std::size_t>(ch * hw + j)];
    out[static_cast<std::size_t>(ch)] = acc / static_cast<double>(hw);
  }
  return make_op("global_avg_pool", Shape{c}, std::move(out), {input}, [c, hw](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    auto gi = ctx.grad_input(0);
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t j = 0; j < hw; ++j) gi[static_cast<std::size_t>(ch * hw + j)] += g[static_cast<std::size_t>(ch)] * inv;
  });
}

Tensor concat(const std::vector<Tensor>& tensors, int axis) {
  require(!tensors.empty(), "concat: empty tensor list");
  const Shape& first = tensors.front().shape();
  axis = normalize_axis(axis, static_cast<int>(first.size()), "concat");
  Shape out_shape = first;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto& t : tensors) {
    const Shape& s = t.shape();
    require(s.size() == first.size(), "concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (static_cast<int>(d) != axis && s[d] != first[d]) {
        throw InvalidArgument("concat: extent mismatch in dimension " + std::to_string(d) + " (" +
                              shape_str(s) + " vs " + shape_str(first) + ")");
      }
    }
    out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
  }
  const AxisSplit os = split_axis(out_shape, axis);
  std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& t : tensors) {
    const AxisSplit ts = split_axis(t.shape(), axis);
    const std::int64_t block = ts.n * ts.inner;
    auto x = t.data();
    for (std::int64_t o = 0; o < os.outer; ++o)
      std::copy_n(x.begin() + o * block, block, out.begin() + o * os.n * os.inner + off * os.inner);
    offsets.push_back(off);
    off += ts.n;
  }
  std::vector<std::int64_t> extents;
  for (const auto& t : tensors) extents.push_back(t.dim(axis));
  return make_op("concat", out_shape, std::move(out), tensors,
                 [os, offsets, extents](BackwardContext& ctx) {
                   auto g = ctx.grad_output();
                   for (std::size_t k = 0; k < offsets.size(); ++k) {
                     if (!ctx.needs(k)) continue;
                     auto gi = ctx.grad_input(k);
                     const std::int64_t block = extents[k] * os.inner;
                     for (std::int64_t o = 0; o < os.outer; ++o) {
                       const std::int64_t src = o * os.n * os.inner + offsets[k] * os.inner;
                       for (std::int64_t j = 0; j < block; ++j)
                         gi[static_cast<std::size_t>(o * block + j)] += g[static_cast<std::size_t>(src + j)];
                     }
                   }
                 });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return make_op("add", a.shape(), std::move(out), {a, b}, [](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    for (std::size_t k = 0; k < 2; ++k) {
      if (!ctx.needs(k)) continue;
      auto gi = ctx.grad_input(k);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return make_op("sub", a.shape(), std::move(out), {a, b}, [](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    if (ctx.needs(0)) {
      auto gi = ctx.grad_input(0);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
    if (ctx.needs(1)) {
      auto gi = ctx.grad_input(1);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return make_op("mul", a.shape(), std::move(out), {a, b}, [a, b](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    if (ctx.needs(0)) {
      auto gi = ctx.grad_input(0);
      auto y = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * y[i];
    }
    if (ctx.needs(1)) {
      auto gi = ctx.grad_input(1);
      auto x = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  return make_op("scale", a.shape(), std::move(out), {a}, [factor](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    auto gi = ctx.grad_input(0);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * factor;
  });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  require(s.numel() == 1, "scale_by: factor must have one element, got " + shape_str(s.shape()));
  const double f = s.data()[0];
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * f;
  return make_op("scale_by", a.shape(), std::move(out), {a, s}, [a, f](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    if (ctx.needs(0)) {
      auto gi = ctx.grad_input(0);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * f;
    }
    if (ctx.needs(1)) {
      auto x = a.data();
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
      ctx.grad_input(1)[0] += acc;
    }
  });
}

Tensor add_row_bias(const Tensor& x, const Tensor& b) {
  require(x.rank() == 2, "add_row_bias: input must be 2-D, got " + shape_str(x.shape()));
  if (b.rank() != 1 || b.dim(0) != x.dim(1)) {
    throw InvalidArgument("add_row_bias: bias length " + std::to_string(b.numel()) + " != row width " +
                          std::to_string(x.dim(1)));
  }
  const std::int64_t n = x.dim(0), d = x.dim(1);
  std::vector<double> out(x.data().begin(), x.data().end());
  auto bv = b.data();
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t j = 0; j < d; ++j) out[static_cast<std::size_t>(r * d + j)] += bv[static_cast<std::size_t>(j)];
  return make_op("add_row_bias", x.shape(), std::move(out), {x, b}, [n, d](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    if (ctx.needs(0)) {
      auto gi = ctx.grad_input(0);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
    if (ctx.needs(1)) {
      auto gb = ctx.grad_input(1);
      for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t j = 0; j < d; ++j) gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(r * d + j)];
    }
  });
}

Tensor channel_scale(const Tensor& a, const Tensor& w) {
  require(a.rank() >= 1, "channel_scale: input must have a channel axis");
  if (w.rank() != 1 || w.dim(0) != a.dim(0)) {
    throw InvalidArgument("channel_scale: vector length " + std::to_string(w.numel()) +
                          " != channel count " + std::to_string(a.dim(0)));
  }
  const std::int64_t c = a.dim(0), inner = a.numel() / c;
  auto x = a.data(), v = w.data();
  std::vector<double> out(x.size());
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t j = 0; j < inner; ++j) {
      const auto idx = static_cast<std::size_t>(ch * inner + j);
      out[idx] = x[idx] * v[static_cast<std::size_t>(ch)];
    }
  return make_op("channel_scale", a.shape(), std::move(out), {a, w}, [a, w, c, inner](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    if (ctx.needs(0)) {
      auto gi = ctx.grad_input(0);
      auto v = w.data();
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t j = 0; j < inner; ++j) {
          const auto idx = static_cast<std::size_t>(ch * inner + j);
          gi[idx] += g[idx] * v[static_cast<std::size_t>(ch)];
        }
    }
    if (ctx.needs(1)) {
      auto gw = ctx.grad_input(1);
      auto x = a.data();
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < inner; ++j) {
          const auto idx = static_cast<std::size_t>(ch * inner + j);
          acc += g[idx] * x[idx];
        }
        gw[static_cast<std::size_t>(ch)] += acc;
      }
    }
  });
}

Tensor sum(const Tensor& input, int axis) {
  axis = normalize_axis(axis, input.rank(), "sum");
  const AxisSplit s = split_axis(input.shape(), axis);
  Shape shape = input.shape();
  shape.erase(shape.begin() + axis);
  if (shape.empty()) shape = {1};
  auto x = input.data();
  std::vector<double> out(static_cast<std::size_t>(s.outer * s.inner), 0.0);
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t j = 0; j < s.n; ++j)
      for (std::int64_t i = 0; i < s.inner; ++i)
        out[static_cast<std::size_t>(o * s.inner + i)] += x[static_cast<std::size_t>((o * s.n + j) * s.inner + i)];
  return make_op("sum_axis", std::move(shape), std::move(out), {input}, [s](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    auto gi = ctx.grad_input(0);
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t j = 0; j < s.n; ++j)
        for (std::int64_t i = 0; i < s.inner; ++i)
          gi[static_cast<std::size_t>((o * s.n + j) * s.inner + i)] += g[static_cast<std::size_t>(o * s.inner + i)];
  });
}

Tensor sum(const Tensor& input) {
  double acc = 0.0;
  for (double v : input.data()) acc += v;
  return make_op("sum", Shape{1}, {acc}, {input}, [](BackwardContext& ctx) {
    const double g = ctx.grad_output()[0];
    for (double& v : ctx.grad_input(0)) v += g;
  });
}

Tensor mean(const Tensor& input) { return scale(sum(input), 1.0 / static_cast<double>(input.numel())); }

Tensor gather(const Tensor& input, std::span<const std::int64_t> indices) {
  require(!indices.empty(), "gather: empty index list");
  auto x = input.data();
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= input.numel()) {
      throw InvalidArgument("gather: index " + std::to_string(indices[i]) + " out of range");
    }
    out[i] = x[static_cast<std::size_t>(indices[i])];
  }
  std::vector<std::int64_t> idx(indices.begin(), indices.end());
  return make_op("gather", Shape{static_cast<std::int64_t>(idx.size())}, std::move(out), {input},
                 [idx](BackwardContext& ctx) {
                   auto g = ctx.grad_output();
                   auto gi = ctx.grad_input(0);
                   for (std::size_t i = 0; i < idx.size(); ++i) gi[static_cast<std::size_t>(idx[i])] += g[i];
                 });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require(logits.rank() == 2, "cross_entropy: logits must be [n,K], got " + shape_str(logits.shape()));
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw InvalidArgument("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(n) + " rows");
  }
  for (int l : labels) {
    if (l < 0 || l >= k) throw InvalidArgument("cross_entropy: label " + std::to_string(l) + " outside [0," + std::to_string(k) + ")");
  }
  auto x = logits.data();
  auto prob = std::make_shared<std::vector<double>>(x.size());
  double loss = 0.0;
  for (std::int64_t r = 0; r < n; ++r) {
    const double* row = x.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::int64_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double logz = std::log(z) + mx;
    for (std::int64_t j = 0; j < k; ++j) (*prob)[static_cast<std::size_t>(r * k + j)] = std::exp(row[j] - logz);
    loss += logz - row[labels[static_cast<std::size_t>(r)]];
  }
  loss /= static_cast<double>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return make_op("cross_entropy", Shape{1}, {loss}, {logits}, [prob, lab, n, k](BackwardContext& ctx) {
    const double g = ctx.grad_output()[0] / static_cast<double>(n);
    auto gi = ctx.grad_input(0);
    for (std::int64_t r = 0; r < n; ++r) {
      for (std::int64_t j = 0; j < k; ++j) {
        const auto idx = static_cast<std::size_t>(r * k + j);
        const double onehot = (j == lab[static_cast<std::size_t>(r)]) ? 1.0 : 0.0;
        gi[idx] += g * ((*prob)[idx] - onehot);
      }
    }
  });
}

Tensor binary_cross_entropy_with_logits(const Tensor& logits, std::span<const double> targets) {
  if (static_cast<std::int64_t>(targets.size()) != logits.numel()) {
    throw InvalidArgument("binary_cross_entropy_with_logits: " + std::to_string(targets.size()) +
                          " targets for " + std::to_string(logits.numel()) + " logits");
  }
  auto x = logits.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double t = targets[i];
    if (t < 0.0 || t > 1.0) throw InvalidArgument("binary_cross_entropy_with_logits: target outside [0,1]");
    loss += std::max(x[i], 0.0) - x[i] * t + std::log1p(std::exp(-std::abs(x[i])));
  }
  const auto n = static_cast<double>(x.size());
  std::vector<double> tgt(targets.begin(), targets.end());
  return make_op("bce_logits", Shape{1}, {loss / n}, {logits}, [logits, tgt, n](BackwardContext& ctx) {
    const double g = ctx.grad_output()[0] / n;
    auto x = logits.data();
    auto gi = ctx.grad_input(0);
    for (std::size_t i = 0; i < x.size(); ++i) gi[i] += g * (1.0 / (1.0 + std::exp(-x[i])) - tgt[i]);
  });
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target, double beta) {
  require_same_shape(pred, target, "smooth_l1");
  require(beta > 0.0, "smooth_l1: beta must be positive");
  auto p = pred.data(), t = target.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = std::abs(p[i] - t[i]);
    loss += d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
  }
  const auto n = static_cast<double>(p.size());
  return make_op("smooth_l1", Shape{1}, {loss / n}, {pred, target}, [pred, target, beta, n](BackwardContext& ctx) {
    const double g = ctx.grad_output()[0] / n;
    auto p = pred.data(), t = target.data();
    std::vector<double> dl(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = p[i] - t[i];
      dl[i] = std::abs(d) < beta ? d / beta : (d > 0 ? 1.0 : -1.0);
    }
    if (ctx.needs(0)) {
      auto gi = ctx.grad_input(0);
      for (std::size_t i = 0; i < p.size(); ++i) gi[i] += g * dl[i];
    }
    if (ctx.needs(1)) {
      auto gi = ctx.grad_input(1);
      for (std::size_t i = 0; i < p.size(); ++i) gi[i] -= g * dl[i];
    }
  });
}

Tensor resample(const Tensor& input, const SamplingPlan& plan) {
  require(input.rank() == 3, "resample: input must be [C,H,W], got " + shape_str(input.shape()));
  const std::int64_t locs = plan.out_h * plan.out_w;
  require(locs > 0 && static_cast<std::int64_t>(plan.offsets.size()) == locs + 1, "resample: malformed plan");
  const std::int64_t c = input.dim(0), hw = input.dim(1) * input.dim(2);
  for (auto s : plan.source) require(s >= 0 && s < hw, "resample: plan source outside input map");
  auto x = input.data();
  std::vector<double> out(static_cast<std::size_t>(c * locs), 0.0);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const double* plane = x.data() + ch * hw;
    double* dst = out.data() + ch * locs;
    for (std::int64_t o = 0; o < locs; ++o) {
      double acc = 0.0;
      for (auto k = plan.offsets[static_cast<std::size_t>(o)]; k < plan.offsets[static_cast<std::size_t>(o) + 1]; ++k)
        acc += plan.weight[static_cast<std::size_t>(k)] * plane[plan.source[static_cast<std::size_t>(k)]];
      dst[o] = acc;
    }
  }
  auto shared_plan = std::make_shared<SamplingPlan>(plan);
  return make_op("resample", Shape{c, plan.out_h, plan.out_w}, std::move(out), {input},
                 [shared_plan, c, hw, locs](BackwardContext& ctx) {
                   const SamplingPlan& p = *shared_plan;
                   auto g = ctx.grad_output();
                   auto gi = ctx.grad_input(0);
                   for (std::int64_t ch = 0; ch < c; ++ch) {
                     double* plane = gi.data() + ch * hw;
                     const double* src = g.data() + ch * locs;
                     for (std::int64_t o = 0; o < locs; ++o) {
                       const double go = src[o];
                       if (go == 0.0) continue;
                       for (auto k = p.offsets[static_cast<std::size_t>(o)]; k < p.offsets[static_cast<std::size_t>(o) + 1]; ++k)
                         plane[p.source[static_cast<std::size_t>(k)]] += p.weight[static_cast<std::size_t>(k)] * go;
                     }
                   }
                 });
}

}  // namespace dcnet
