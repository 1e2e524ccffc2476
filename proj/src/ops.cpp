// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#include "mcgr/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "mcgr/error.hpp"

namespace mcgr::ag {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

void require_rank4(const Shape& s, const char* op) {
  require(s.size() == 4, std::string(op) + ": expected a rank-4 tensor, got " + to_string(s));
}

template <typename F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto in = a.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  return out;
}

template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = f(x[i], y[i]);
  return out;
}

std::vector<Var> grads(std::size_t n) { return std::vector<Var>(n); }

// Unfolds one sample (Ci, H, W) into columns (Ci*k*k, Ho*Wo).
void im2col(const double* x, std::int64_t channels, std::int64_t h, std::int64_t w, std::int64_t k,
            const ConvGeometry& g, std::int64_t ho, std::int64_t wo, double* col) {
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        double* row = col + ((c * k + ky) * k + kx) * ho * wo;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          std::int64_t iy = oy * g.stride - g.pad + ky;
          double* dst = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* src = x + (c * h + iy) * w;
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            std::int64_t ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, std::int64_t channels, std::int64_t h, std::int64_t w, std::int64_t k,
            const ConvGeometry& g, std::int64_t ho, std::int64_t wo, double* x) {
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((c * k + ky) * k + kx) * ho * wo;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= h) continue;
          double* dst = x + (c * h + iy) * w;
          const double* src = row + oy * wo;
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(std::int64_t k, const ConvGeometry& g) { return k == 1 && g.stride == 1 && g.pad == 0; }

struct ConvDims {
  std::int64_t batch, cin, h, w, cout, k, ho, wo;
};

ConvDims conv_dims(const Shape& x, const Shape& weight, const ConvGeometry& g, const char* op) {
  require_rank4(x, op);
  require_rank4(weight, op);
  require(weight[1] == x[1], std::string(op) + ": weight expects " + std::to_string(weight[1]) +
                                 " input channels, got " + std::to_string(x[1]));
  require(weight[2] == weight[3], std::string(op) + ": square kernels only");
  require(g.stride >= 1 && g.pad >= 0, std::string(op) + ": invalid geometry");
  ConvDims d{x[0], x[1], x[2], x[3], weight[0], weight[2], 0, 0};
  d.ho = conv_output_size(d.h, d.k, g);
  d.wo = conv_output_size(d.w, d.k, g);
  require(d.ho >= 1 && d.wo >= 1, std::string(op) + ": input smaller than kernel");
  return d;
}

Tensor conv_forward(const Tensor& x, const Tensor& weight, const ConvGeometry& g) {
  auto d = conv_dims(x.shape(), weight.shape(), g, "conv2d");
  Tensor out({d.batch, d.cout, d.ho, d.wo});
  const std::int64_t kk = d.cin * d.k * d.k;
  const std::int64_t pix = d.ho * d.wo;
  ConstMatrixMap wm(weight.raw(), d.cout, kk);
  std::vector<double> col;
  if (!is_pointwise(d.k, g)) col.resize(static_cast<std::size_t>(kk * pix));
  for (std::int64_t b = 0; b < d.batch; ++b) {
    const double* xb = x.raw() + b * d.cin * d.h * d.w;
    const double* cols = xb;
    if (!col.empty()) {
      im2col(xb, d.cin, d.h, d.w, d.k, g, d.ho, d.wo, col.data());
      cols = col.data();
    }
    MatrixMap ob(out.raw() + b * d.cout * pix, d.cout, pix);
    ob.noalias() = wm * ConstMatrixMap(cols, kk, pix);
  }
  return out;
}

Tensor conv_input_grad(const Tensor& grad_out, const Tensor& weight, const Shape& in_shape, const ConvGeometry& g) {
  auto d = conv_dims(in_shape, weight.shape(), g, "conv2d_input_grad");
  require(grad_out.shape() == Shape({d.batch, d.cout, d.ho, d.wo}), "conv2d_input_grad: gradient shape mismatch");
  Tensor dx(in_shape);
  const std::int64_t kk = d.cin * d.k * d.k;
  const std::int64_t pix = d.ho * d.wo;
  ConstMatrixMap wm(weight.raw(), d.cout, kk);
  std::vector<double> col(static_cast<std::size_t>(kk * pix));
  for (std::int64_t b = 0; b < d.batch; ++b) {
    ConstMatrixMap gb(grad_out.raw() + b * d.cout * pix, d.cout, pix);
    double* xb = dx.raw() + b * d.cin * d.h * d.w;
    if (is_pointwise(d.k, g)) {
      MatrixMap(xb, kk, pix).noalias() = wm.transpose() * gb;
      continue;
    }
    MatrixMap(col.data(), kk, pix).noalias() = wm.transpose() * gb;
    col2im(col.data(), d.cin, d.h, d.w, d.k, g, d.ho, d.wo, xb);
  }
  return dx;
}

Tensor conv_weight_grad(const Tensor& x, const Tensor& grad_out, const Shape& w_shape, const ConvGeometry& g) {
  auto d = conv_dims(x.shape(), w_shape, g, "conv2d_weight_grad");
  require(grad_out.shape() == Shape({d.batch, d.cout, d.ho, d.wo}), "conv2d_weight_grad: gradient shape mismatch");
  Tensor dw(w_shape);
  const std::int64_t kk = d.cin * d.k * d.k;
  const std::int64_t pix = d.ho * d.wo;
  MatrixMap dwm(dw.raw(), d.cout, kk);
  std::vector<double> col;
  if (!is_pointwise(d.k, g)) col.resize(static_cast<std::size_t>(kk * pix));
  for (std::int64_t b = 0; b < d.batch; ++b) {
    const double* xb = x.raw() + b * d.cin * d.h * d.w;
    const double* cols = xb;
    if (!col.empty()) {
      im2col(xb, d.cin, d.h, d.w, d.k, g, d.ho, d.wo, col.data());
      cols = col.data();
    }
    ConstMatrixMap gb(grad_out.raw() + b * d.cout * pix, d.cout, pix);
    dwm.noalias() += gb * ConstMatrixMap(cols, kk, pix).transpose();
  }
  return dw;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return make_result(map_binary(a.value(), b.value(), [](double x, double y) { return x + y; }), {a, b},
                     [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make_result(map_binary(a.value(), b.value(), [](double x, double y) { return x - y; }), {a, b},
                     [](const Var& g, const std::vector<bool>& need) {
                       auto r = grads(2);
                       r[0] = g;
                       if (need[1]) r[1] = neg(g);
                       return r;
                     });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return make_result(map_binary(a.value(), b.value(), [](double x, double y) { return x * y; }), {a, b},
                     [a, b](const Var& g, const std::vector<bool>& need) {
                       auto r = grads(2);
                       if (need[0]) r[0] = mul(g, b);
                       if (need[1]) r[1] = mul(g, a);
                       return r;
                     });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double factor) {
  return make_result(map_unary(a.value(), [factor](double x) { return x * factor; }), {a},
                     [factor](const Var& g, const std::vector<bool>&) { return std::vector<Var>{scale(g, factor)}; });
}

Var add_scalar(const Var& a, double value) {
  return make_result(map_unary(a.value(), [value](double x) { return x + value; }), {a},
                     [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{g}; });
}

Var mul_const(const Var& a, const Tensor& factor) {
  require(a.shape() == factor.shape(), "mul_const: shape mismatch");
  return make_result(map_binary(a.value(), factor, [](double x, double y) { return x * y; }), {a},
                     [factor](const Var& g, const std::vector<bool>&) { return std::vector<Var>{mul_const(g, factor)}; });
}

Var add_const(const Var& a, const Tensor& offset) {
  require(a.shape() == offset.shape(), "add_const: shape mismatch");
  return make_result(map_binary(a.value(), offset, [](double x, double y) { return x + y; }), {a},
                     [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{g}; });
}

Var square(const Var& a) {
  return make_result(map_unary(a.value(), [](double x) { return x * x; }), {a},
                     [a](const Var& g, const std::vector<bool>&) { return std::vector<Var>{mul(g, scale(a, 2.0))}; });
}

Var abs(const Var& a) {
  Tensor sign = map_unary(a.value(), [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
  return make_result(map_unary(a.value(), [](double x) { return std::fabs(x); }), {a},
                     [sign](const Var& g, const std::vector<bool>&) { return std::vector<Var>{mul_const(g, sign)}; });
}

Var sqrt(const Var& a) {
  Tensor out = map_unary(a.value(), [](double x) { return std::sqrt(x); });
  Tensor local = map_unary(out, [](double s) { return 0.5 / s; });
  return make_result(std::move(out), {a},
                     [local](const Var& g, const std::vector<bool>&) { return std::vector<Var>{mul_const(g, local)}; });
}

Var exp(const Var& a) {
  Tensor out = map_unary(a.value(), [](double x) { return std::exp(x); });
  Tensor local = out;
  return make_result(std::move(out), {a},
                     [local](const Var& g, const std::vector<bool>&) { return std::vector<Var>{mul_const(g, local)}; });
}

Var sigmoid(const Var& a) {
  Tensor out = map_unary(a.value(), [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  Tensor local = map_unary(out, [](double s) { return s * (1.0 - s); });
  return make_result(std::move(out), {a},
                     [local](const Var& g, const std::vector<bool>&) { return std::vector<Var>{mul_const(g, local)}; });
}

Var leaky_relu(const Var& a, double slope) {
  Tensor mask = map_unary(a.value(), [slope](double x) { return x > 0 ? 1.0 : slope; });
  return make_result(map_binary(a.value(), mask, [](double x, double m) { return x * m; }), {a},
                     [mask](const Var& g, const std::vector<bool>&) { return std::vector<Var>{mul_const(g, mask)}; });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  Shape shape = a.shape();
  return make_result(Tensor::scalar(total), {a}, [shape](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{expand(g, shape)};
  });
}

Var mean(const Var& a) {
  require(a.value().size() > 0, "mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var expand(const Var& scalar, const Shape& shape) {
  require(scalar.value().size() == 1, "expand: expected a scalar");
  return make_result(Tensor(shape, scalar.value()[0]), {scalar}, [](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{sum(g)};
  });
}

Var sum_per_sample(const Var& a) {
  require(a.shape().size() >= 1, "sum_per_sample: rank must be at least 1");
  const std::int64_t batch = a.shape()[0];
  const std::int64_t inner = batch ? a.value().size() / batch : 0;
  Tensor out({batch});
  for (std::int64_t b = 0; b < batch; ++b) {
    double s = 0.0;
    for (std::int64_t i = 0; i < inner; ++i) s += a.value()[b * inner + i];
    out[b] = s;
  }
  Shape shape = a.shape();
  return make_result(std::move(out), {a}, [shape](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{expand_per_sample(g, shape)};
  });
}

Var expand_per_sample(const Var& per_sample, const Shape& shape) {
  require(per_sample.shape().size() == 1 && !shape.empty() && per_sample.shape()[0] == shape[0],
          "expand_per_sample: leading dimension mismatch");
  Tensor out(shape);
  const std::int64_t batch = shape[0];
  const std::int64_t inner = batch ? out.size() / batch : 0;
  for (std::int64_t b = 0; b < batch; ++b)
    std::fill_n(out.raw() + b * inner, inner, per_sample.value()[b]);
  return make_result(std::move(out), {per_sample}, [](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{sum_per_sample(g)};
  });
}

Var reshape(const Var& a, const Shape& shape) {
  Shape original = a.shape();
  return make_result(a.value().reshaped(shape), {a}, [original](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{reshape(g, original)};
  });
}

std::int64_t conv_output_size(std::int64_t in, std::int64_t kernel, const ConvGeometry& geom) {
  return (in + 2 * geom.pad - kernel) / geom.stride + 1;
}

Var conv2d(const Var& x, const Var& weight, ConvGeometry geom) {
  Shape x_shape = x.shape();
  Shape w_shape = weight.shape();
  return make_result(conv_forward(x.value(), weight.value(), geom), {x, weight},
                     [x, weight, x_shape, w_shape, geom](const Var& g, const std::vector<bool>& need) {
                       auto r = grads(2);
                       if (need[0]) r[0] = conv2d_input_grad(g, weight, x_shape, geom);
                       if (need[1]) r[1] = conv2d_weight_grad(x, g, w_shape, geom);
                       return r;
                     });
}

Var conv2d_input_grad(const Var& grad_out, const Var& weight, const Shape& input_shape, ConvGeometry geom) {
  Shape w_shape = weight.shape();
  return make_result(conv_input_grad(grad_out.value(), weight.value(), input_shape, geom), {grad_out, weight},
                     [grad_out, weight, w_shape, geom](const Var& gg, const std::vector<bool>& need) {
                       auto r = grads(2);
                       if (need[0]) r[0] = conv2d(gg, weight, geom);
                       if (need[1]) r[1] = conv2d_weight_grad(gg, grad_out, w_shape, geom);
                       return r;
                     });
}

Var conv2d_weight_grad(const Var& x, const Var& grad_out, const Shape& weight_shape, ConvGeometry geom) {
  Shape x_shape = x.shape();
  return make_result(conv_weight_grad(x.value(), grad_out.value(), weight_shape, geom), {x, grad_out},
                     [x, grad_out, x_shape, geom](const Var& gw, const std::vector<bool>& need) {
                       auto r = grads(2);
                       if (need[0]) r[0] = conv2d_input_grad(grad_out, gw, x_shape, geom);
                       if (need[1]) r[1] = conv2d(x, gw, geom);
                       return r;
                     });
}

Var add_channel_bias(const Var& x, const Var& bias) {
  require_rank4(x.shape(), "add_channel_bias");
  require(bias.shape() == Shape({x.shape()[1]}), "add_channel_bias: bias must have one entry per channel");
  Tensor out = x.value();
  const auto& s = x.shape();
  const std::int64_t plane = s[2] * s[3];
  for (std::int64_t b = 0; b < s[0]; ++b)
    for (std::int64_t c = 0; c < s[1]; ++c) {
      double* p = out.raw() + (b * s[1] + c) * plane;
      const double v = bias.value()[c];
      for (std::int64_t i = 0; i < plane; ++i) p[i] += v;
    }
  return make_result(std::move(out), {x, bias}, [](const Var& g, const std::vector<bool>& need) {
    auto r = grads(2);
    r[0] = g;
    if (need[1]) r[1] = channel_sum(g);
    return r;
  });
}

Var channel_sum(const Var& x) {
  require_rank4(x.shape(), "channel_sum");
  const auto& s = x.shape();
  const std::int64_t plane = s[2] * s[3];
  Tensor out({s[1]});
  for (std::int64_t b = 0; b < s[0]; ++b)
    for (std::int64_t c = 0; c < s[1]; ++c) {
      const double* p = x.value().raw() + (b * s[1] + c) * plane;
      double acc = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
      out[c] += acc;
    }
  Shape shape = s;
  return make_result(std::move(out), {x}, [shape](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{channel_broadcast(g, shape)};
  });
}

Var channel_broadcast(const Var& bias, const Shape& shape) {
  require_rank4(shape, "channel_broadcast");
  require(bias.shape() == Shape({shape[1]}), "channel_broadcast: channel count mismatch");
  Tensor out(shape);
  const std::int64_t plane = shape[2] * shape[3];
  for (std::int64_t b = 0; b < shape[0]; ++b)
    for (std::int64_t c = 0; c < shape[1]; ++c)
      std::fill_n(out.raw() + (b * shape[1] + c) * plane, plane, bias.value()[c]);
  return make_result(std::move(out), {bias}, [](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{channel_sum(g)};
  });
}

namespace {

Tensor transposed(const Tensor& m) {
  Tensor out({m.dim(1), m.dim(0)});
  MatrixMap(out.raw(), m.dim(1), m.dim(0)) = ConstMatrixMap(m.raw(), m.dim(0), m.dim(1)).transpose();
  return out;
}

}  // namespace

Var separable_linear(const Var& x, const Tensor& rows, const Tensor& cols) {
  require_rank4(x.shape(), "separable_linear");
  require(rows.rank() == 2 && cols.rank() == 2, "separable_linear: rows and cols must be matrices");
  const auto& s = x.shape();
  require(rows.dim(1) == s[2] && cols.dim(1) == s[3],
          "separable_linear: operator " + to_string(rows.shape()) + " x " + to_string(cols.shape()) +
              " does not fit input " + to_string(s));
  const std::int64_t ho = rows.dim(0), wo = cols.dim(0);
  Tensor out({s[0], s[1], ho, wo});
  const ConstMatrixMap r(rows.raw(), ho, s[2]);
  const ConstMatrixMap c(cols.raw(), wo, s[3]);
  for (std::int64_t p = 0; p < s[0] * s[1]; ++p) {
    const ConstMatrixMap in(x.value().raw() + p * s[2] * s[3], s[2], s[3]);
    MatrixMap(out.raw() + p * ho * wo, ho, wo).noalias() = r * in * c.transpose();
  }
  return make_result(std::move(out), {x}, [rows, cols](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{separable_linear(g, transposed(rows), transposed(cols))};
  });
}

Var pixel_shuffle(const Var& x, int factor) {
  require_rank4(x.shape(), "pixel_shuffle");
  require(factor >= 1, "pixel_shuffle: factor must be positive");
  const auto& s = x.shape();
  const std::int64_t f = factor;
  require(s[1] % (f * f) == 0, "pixel_shuffle: channels " + std::to_string(s[1]) + " not divisible by " +
                                   std::to_string(f * f));
  const std::int64_t c_out = s[1] / (f * f);
  Tensor out({s[0], c_out, s[2] * f, s[3] * f});
  for (std::int64_t b = 0; b < s[0]; ++b)
    for (std::int64_t c = 0; c < c_out; ++c)
      for (std::int64_t dy = 0; dy < f; ++dy)
        for (std::int64_t dx = 0; dx < f; ++dx)
          for (std::int64_t i = 0; i < s[2]; ++i)
            for (std::int64_t j = 0; j < s[3]; ++j)
              out.at(b, c, i * f + dy, j * f + dx) = x.value().at(b, c * f * f + dy * f + dx, i, j);
  return make_result(std::move(out), {x}, [factor](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{pixel_unshuffle(g, factor)};
  });
}

Var pixel_unshuffle(const Var& x, int factor) {
  require_rank4(x.shape(), "pixel_unshuffle");
  require(factor >= 1, "pixel_unshuffle: factor must be positive");
  const auto& s = x.shape();
  const std::int64_t f = factor;
  require(s[2] % f == 0 && s[3] % f == 0, "pixel_unshuffle: spatial size not divisible by factor");
  const std::int64_t h = s[2] / f;
  const std::int64_t w = s[3] / f;
  Tensor out({s[0], s[1] * f * f, h, w});
  for (std::int64_t b = 0; b < s[0]; ++b)
    for (std::int64_t c = 0; c < s[1]; ++c)
      for (std::int64_t dy = 0; dy < f; ++dy)
        for (std::int64_t dx = 0; dx < f; ++dx)
          for (std::int64_t i = 0; i < h; ++i)
            for (std::int64_t j = 0; j < w; ++j)
              out.at(b, c * f * f + dy * f + dx, i, j) = x.value().at(b, c, i * f + dy, j * f + dx);
  return make_result(std::move(out), {x}, [factor](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{pixel_shuffle(g, factor)};
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  Shape s = parts[0].shape();
  require_rank4(s, "concat_channels");
  std::int64_t total = 0;
  for (const auto& p : parts) {
    const auto& ps = p.shape();
    require(ps.size() == 4 && ps[0] == s[0] && ps[2] == s[2] && ps[3] == s[3],
            "concat_channels: incompatible part shape " + to_string(ps));
    total += ps[1];
  }
  Shape out_shape{s[0], total, s[2], s[3]};
  Tensor out(out_shape);
  const std::int64_t plane = s[2] * s[3];
  std::vector<std::int64_t> offsets;
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::int64_t c = p.shape()[1];
    for (std::int64_t b = 0; b < s[0]; ++b)
      std::copy_n(p.value().raw() + b * c * plane, c * plane, out.raw() + (b * total + offset) * plane);
    offset += c;
  }
  std::vector<std::int64_t> counts;
  for (const auto& p : parts) counts.push_back(p.shape()[1]);
  return make_result(std::move(out), parts, [offsets, counts](const Var& g, const std::vector<bool>& need) {
    auto r = grads(offsets.size());
    for (std::size_t i = 0; i < offsets.size(); ++i)
      if (need[i]) r[i] = slice_channels(g, offsets[i], counts[i]);
    return r;
  });
}

Var slice_channels(const Var& x, std::int64_t begin, std::int64_t count) {
  require_rank4(x.shape(), "slice_channels");
  const auto& s = x.shape();
  require(begin >= 0 && count >= 1 && begin + count <= s[1], "slice_channels: range out of bounds");
  const std::int64_t plane = s[2] * s[3];
  Tensor out({s[0], count, s[2], s[3]});
  for (std::int64_t b = 0; b < s[0]; ++b)
    std::copy_n(x.value().raw() + (b * s[1] + begin) * plane, count * plane, out.raw() + b * count * plane);
  const std::int64_t total = s[1];
  return make_result(std::move(out), {x}, [begin, total](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{pad_channels(g, begin, total)};
  });
}

Var pad_channels(const Var& x, std::int64_t begin, std::int64_t total) {
  require_rank4(x.shape(), "pad_channels");
  const auto& s = x.shape();
  const std::int64_t count = s[1];
  require(begin >= 0 && begin + count <= total, "pad_channels: range out of bounds");
  const std::int64_t plane = s[2] * s[3];
  Tensor out({s[0], total, s[2], s[3]});
  for (std::int64_t b = 0; b < s[0]; ++b)
    std::copy_n(x.value().raw() + b * count * plane, count * plane, out.raw() + (b * total + begin) * plane);
  return make_result(std::move(out), {x}, [begin, count](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{slice_channels(g, begin, count)};
  });
}

Var spatial_sum(const Var& x) {
  require_rank4(x.shape(), "spatial_sum");
  const auto& s = x.shape();
  const std::int64_t plane = s[2] * s[3];
  Tensor out({s[0], s[1], 1, 1});
  for (std::int64_t i = 0; i < s[0] * s[1]; ++i) {
    double acc = 0.0;
    const double* p = x.value().raw() + i * plane;
    for (std::int64_t j = 0; j < plane; ++j) acc += p[j];
    out[i] = acc;
  }
  const std::int64_t h = s[2];
  const std::int64_t w = s[3];
  return make_result(std::move(out), {x}, [h, w](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{spatial_expand(g, h, w)};
  });
}

Var spatial_expand(const Var& x, std::int64_t height, std::int64_t width) {
  require_rank4(x.shape(), "spatial_expand");
  const auto& s = x.shape();
  require(s[2] == 1 && s[3] == 1, "spatial_expand: input must be (B, C, 1, 1)");
  Tensor out({s[0], s[1], height, width});
  const std::int64_t plane = height * width;
  for (std::int64_t i = 0; i < s[0] * s[1]; ++i) std::fill_n(out.raw() + i * plane, plane, x.value()[i]);
  return make_result(std::move(out), {x}, [](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{spatial_sum(g)};
  });
}

Var spatial_mean(const Var& x) {
  require_rank4(x.shape(), "spatial_mean");
  return scale(spatial_sum(x), 1.0 / static_cast<double>(x.shape()[2] * x.shape()[3]));
}

Var gather(const Var& x, const std::vector<std::int64_t>& indices) {
  Tensor out({static_cast<std::int64_t>(indices.size())});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] >= 0 && indices[i] < x.value().size(), "gather: index out of range");
    out[static_cast<std::int64_t>(i)] = x.value()[indices[i]];
  }
  Shape shape = x.shape();
  return make_result(std::move(out), {x}, [indices, shape](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{scatter(g, indices, shape)};
  });
}

Var scatter(const Var& values, const std::vector<std::int64_t>& indices, const Shape& shape) {
  require(values.shape() == Shape({static_cast<std::int64_t>(indices.size())}), "scatter: values/indices mismatch");
  Tensor out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] >= 0 && indices[i] < out.size(), "scatter: index out of range");
    out[indices[i]] += values.value()[static_cast<std::int64_t>(i)];
  }
  return make_result(std::move(out), {values}, [indices](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{gather(g, indices)};
  });
}

Var bce_with_logits_sum(const Var& logits, const Tensor& targets, const Tensor& weights) {
  require(logits.shape() == targets.shape() && logits.shape() == weights.shape(),
          "bce_with_logits_sum: shape mismatch");
  double total = 0.0;
  Tensor local(logits.shape());
  for (std::int64_t i = 0; i < logits.value().size(); ++i) {
    const double x = logits.value()[i];
    const double t = targets[i];
    // softplus(x) - t*x, written to avoid overflow
    const double softplus = std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
    total += weights[i] * (softplus - t * x);
    local[i] = weights[i] * (1.0 / (1.0 + std::exp(-x)) - t);
  }
  Shape shape = logits.shape();
  return make_result(Tensor::scalar(total), {logits}, [local, shape](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{mul_const(expand(g, shape), local)};
  });
}

Var softmax_cross_entropy_sum(const Var& logits, const std::vector<int>& labels) {
  require(logits.shape().size() == 2, "softmax_cross_entropy_sum: logits must be (K, n)");
  const std::int64_t rows = logits.shape()[0];
  const std::int64_t n = logits.shape()[1];
  require(rows == static_cast<std::int64_t>(labels.size()), "softmax_cross_entropy_sum: label count mismatch");
  double total = 0.0;
  Tensor local(logits.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* z = logits.value().raw() + r * n;
    const int label = labels[static_cast<std::size_t>(r)];
    require(label >= 0 && label < n, "softmax_cross_entropy_sum: label out of range");
    const double peak = *std::max_element(z, z + n);
    double denom = 0.0;
    for (std::int64_t j = 0; j < n; ++j) denom += std::exp(z[j] - peak);
    total += std::log(denom) + peak - z[label];
    for (std::int64_t j = 0; j < n; ++j) local[r * n + j] = std::exp(z[j] - peak) / denom - (j == label ? 1.0 : 0.0);
  }
  Shape shape = logits.shape();
  return make_result(Tensor::scalar(total), {logits}, [local, shape](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{mul_const(expand(g, shape), local)};
  });
}

}  // namespace mcgr::ag
