#include "ka/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "ka/error.hpp"

namespace ka::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void accumulate(const Tensor& target, std::span<const double> g) {
  if (!target.requires_grad()) return;
  auto dst = target.mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

struct ConvGeom {
  std::size_t n, c, h, w, o, kh, kw, stride, pad, ho, wo;
};

void im2col(const double* x, const ConvGeom& g, double* col) {
  const std::size_t hw = g.ho * g.wo;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = col + ((c * g.kh + i) * g.kw + j) * hw;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + i) - static_cast<long>(g.pad);
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + j) - static_cast<long>(g.pad);
            row[oh * g.wo + ow] = (ih >= 0 && iw >= 0 && ih < static_cast<long>(g.h) && iw < static_cast<long>(g.w))
                                      ? x[(c * g.h + ih) * g.w + iw]
                                      : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeom& g, double* dx) {
  const std::size_t hw = g.ho * g.wo;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = col + ((c * g.kh + i) * g.kw + j) * hw;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + i) - static_cast<long>(g.pad);
          if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + j) - static_cast<long>(g.pad);
            if (iw < 0 || iw >= static_cast<long>(g.w)) continue;
            dx[(c * g.h + ih) * g.w + iw] += row[oh * g.wo + ow];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) mutable {
    accumulate(a, g);
    accumulate(b, g);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) mutable {
    accumulate(a, g);
    if (b.requires_grad()) {
      auto d = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [a, factor](std::span<const double> g) mutable {
    auto d = a.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += factor * g[i];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::make_result({}, {s}, {a}, [a](std::span<const double> g) mutable {
    auto d = a.mutable_grad();
    for (auto& v : d) v += g[0];
  });
}

Tensor mean(const Tensor& a) {
  require(a.numel() > 0, "mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_scalars(const std::vector<Tensor>& terms) {
  std::vector<Tensor> live;
  double s = 0.0;
  for (const auto& t : terms) {
    if (!t.defined()) continue;
    require(t.numel() == 1, "sum_scalars: non-scalar term");
    s += t.item();
    live.push_back(t);
  }
  return Tensor::make_result({}, {s}, live, [live](std::span<const double> g) mutable {
    for (auto& t : live) {
      if (t.requires_grad()) t.mutable_grad()[0] += g[0];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(numel(shape) == a.numel(), "reshape: element count mismatch");
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {a},
                             [a](std::span<const double> g) mutable { accumulate(a, g); });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require(a.rank() == 2 && begin <= end && end <= a.dim(0), "slice_rows: bad range");
  const std::size_t cols = a.dim(1);
  std::vector<double> out(a.data().begin() + begin * cols, a.data().begin() + end * cols);
  return Tensor::make_result({end - begin, cols}, std::move(out), {a},
                             [a, begin, cols](std::span<const double> g) mutable {
                               auto d = a.mutable_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) d[begin * cols + i] += g[i];
                             });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require(a.rank() == 2 && begin <= end && end <= a.dim(1), "slice_cols: bad range");
  const std::size_t rows = a.dim(0), cols = a.dim(1), w = end - begin;
  std::vector<double> out(rows * w);
  const auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = x[r * cols + begin + c];
  return Tensor::make_result({rows, w}, std::move(out), {a},
                             [a, begin, rows, cols, w](std::span<const double> g) mutable {
                               auto d = a.mutable_grad();
                               for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t c = 0; c < w; ++c) d[r * cols + begin + c] += g[r * w + c];
                             });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [a](std::span<const double> g) mutable {
    auto d = a.mutable_grad();
    const auto x = a.data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) d[i] += g[i];
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
  auto y = out;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [a, y](std::span<const double> g) mutable {
    auto d = a.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Tensor l2_normalize_rows(const Tensor& a, double eps) {
  require(a.rank() == 2, "l2_normalize_rows: expected N×D");
  const std::size_t n = a.dim(0), d = a.dim(1);
  std::vector<double> out(a.numel()), norms(n);
  const auto x = a.data();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += x[i * d + k] * x[i * d + k];
    norms[i] = std::max(std::sqrt(s), eps);
    for (std::size_t k = 0; k < d; ++k) out[i * d + k] = x[i * d + k] / norms[i];
  }
  auto y = out;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [a, y, norms, d](std::span<const double> g) mutable {
    auto dx = a.mutable_grad();
    for (std::size_t i = 0; i < norms.size(); ++i) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += g[i * d + k] * y[i * d + k];
      for (std::size_t k = 0; k < d; ++k) dx[i * d + k] += (g[i * d + k] - dot * y[i * d + k]) / norms[i];
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require(x.rank() == 2 && weight.rank() == 2 && x.dim(1) == weight.dim(1),
          "linear: shape mismatch " + to_string(x.shape()) + " * " + to_string(weight.shape()) + "^T");
  const std::size_t n = x.dim(0), in = x.dim(1), out_f = weight.dim(0);
  if (bias.defined()) require(bias.numel() == out_f, "linear: bias size mismatch");
  std::vector<double> out(n * out_f);
  CMapMat X(x.data().data(), n, in);
  CMapMat W(weight.data().data(), out_f, in);
  MapMat Y(out.data(), n, out_f);
  Y.noalias() = X * W.transpose();
  if (bias.defined()) {
    const auto b = bias.data();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < out_f; ++c) Y(r, c) += b[c];
  }
  std::vector<Tensor> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return Tensor::make_result(
      {n, out_f}, std::move(out), parents, [x, weight, bias, n, in, out_f](std::span<const double> g) mutable {
        CMapMat G(g.data(), n, out_f);
        if (x.requires_grad()) {
          MapMat dX(x.mutable_grad().data(), n, in);
          dX.noalias() += G * CMapMat(weight.data().data(), out_f, in);
        }
        if (weight.requires_grad()) {
          MapMat dW(weight.mutable_grad().data(), out_f, in);
          dW.noalias() += G.transpose() * CMapMat(x.data().data(), n, in);
        }
        if (bias.defined() && bias.requires_grad()) {
          auto db = bias.mutable_grad();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < out_f; ++c) db[c] += G(r, c);
        }
      });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t pad) {
  require(x.rank() == 4 && weight.rank() == 4, "conv2d: expects NCHW input and OCkk weight");
  require(x.dim(1) == weight.dim(1), "conv2d: channel mismatch " + to_string(x.shape()) + " vs " +
                                         to_string(weight.shape()));
  require(stride >= 1, "conv2d: stride must be >= 1");
  ConvGeom geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), weight.dim(3), stride, pad, 0, 0};
  require(geo.h + 2 * pad >= geo.kh && geo.w + 2 * pad >= geo.kw, "conv2d: kernel larger than padded input");
  geo.ho = (geo.h + 2 * pad - geo.kh) / stride + 1;
  geo.wo = (geo.w + 2 * pad - geo.kw) / stride + 1;
  if (bias.defined()) require(bias.numel() == geo.o, "conv2d: bias size mismatch");

  const std::size_t ckk = geo.c * geo.kh * geo.kw, hw = geo.ho * geo.wo;
  const std::size_t in_step = geo.c * geo.h * geo.w, out_step = geo.o * hw;
  std::vector<double> out(geo.n * out_step);
  std::vector<double> col(ckk * hw);
  CMapMat W(weight.data().data(), geo.o, ckk);
  for (std::size_t s = 0; s < geo.n; ++s) {
    im2col(x.data().data() + s * in_step, geo, col.data());
    MapMat Y(out.data() + s * out_step, geo.o, hw);
    Y.noalias() = W * CMapMat(col.data(), ckk, hw);
    if (bias.defined()) {
      const auto b = bias.data();
      for (std::size_t o = 0; o < geo.o; ++o) Y.row(o).array() += b[o];
    }
  }
  std::vector<Tensor> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return Tensor::make_result(
      {geo.n, geo.o, geo.ho, geo.wo}, std::move(out), parents,
      [x, weight, bias, geo, ckk, hw, in_step, out_step](std::span<const double> g) mutable {
        std::vector<double> col(ckk * hw), dcol(ckk * hw);
        CMapMat W(weight.data().data(), geo.o, ckk);
        for (std::size_t s = 0; s < geo.n; ++s) {
          CMapMat G(g.data() + s * out_step, geo.o, hw);
          if (weight.requires_grad()) {
            im2col(x.data().data() + s * in_step, geo, col.data());
            MapMat dW(weight.mutable_grad().data(), geo.o, ckk);
            dW.noalias() += G * CMapMat(col.data(), ckk, hw).transpose();
          }
          if (x.requires_grad()) {
            MapMat dC(dcol.data(), ckk, hw);
            dC.noalias() = W.transpose() * G;
            col2im(dcol.data(), geo, x.mutable_grad().data() + s * in_step);
          }
          if (bias.defined() && bias.requires_grad()) {
            auto db = bias.mutable_grad();
            for (std::size_t o = 0; o < geo.o; ++o) db[o] += G.row(o).sum();
          }
        }
      });
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t pad) {
  require(x.rank() == 4, "max_pool2d: expects NCHW");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h + 2 * pad >= kernel && w + 2 * pad >= kernel, "max_pool2d: kernel larger than input");
  const std::size_t ho = (h + 2 * pad - kernel) / stride + 1, wo = (w + 2 * pad - kernel) / stride + 1;
  std::vector<double> out(n * c * ho * wo);
  std::vector<std::size_t> argmax(out.size());
  const auto in = x.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = in.data() + plane * h * w;
    for (std::size_t oh = 0; oh < ho; ++oh) {
      for (std::size_t ow = 0; ow < wo; ++ow) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t i = 0; i < kernel; ++i) {
          const long ih = static_cast<long>(oh * stride + i) - static_cast<long>(pad);
          if (ih < 0 || ih >= static_cast<long>(h)) continue;
          for (std::size_t j = 0; j < kernel; ++j) {
            const long iw = static_cast<long>(ow * stride + j) - static_cast<long>(pad);
            if (iw < 0 || iw >= static_cast<long>(w)) continue;
            const std::size_t idx = ih * w + iw;
            if (src[idx] > best) {
              best = src[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (plane * ho + oh) * wo + ow;
        out[o] = best;
        argmax[o] = plane * h * w + best_idx;
      }
    }
  }
  return Tensor::make_result({n, c, ho, wo}, std::move(out), {x},
                             [x, argmax = std::move(argmax)](std::span<const double> g) mutable {
                               auto d = x.mutable_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) d[argmax[i]] += g[i];
                             });
}

Tensor global_avg_pool(const Tensor& x) {
  require(x.rank() == 4, "global_avg_pool: expects NCHW");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(n * c, 0.0);
  const auto in = x.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    double s = 0.0;
    for (std::size_t k = 0; k < hw; ++k) s += in[p * hw + k];
    out[p] = s / static_cast<double>(hw);
  }
  return Tensor::make_result({n, c}, std::move(out), {x}, [x, hw](std::span<const double> g) mutable {
    auto d = x.mutable_grad();
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t p = 0; p < g.size(); ++p)
      for (std::size_t k = 0; k < hw; ++k) d[p * hw + k] += g[p] * inv;
  });
}

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                    Tensor& running_var, bool training, double momentum, double eps) {
  require(x.rank() == 4, "batch_norm2d: expects NCHW");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require(gamma.numel() == c && beta.numel() == c && running_mean.numel() == c && running_var.numel() == c,
          "batch_norm2d: parameter size mismatch");
  const std::size_t count = n * hw;
  require(!training || count > 1, "batch_norm2d: training needs more than one value per channel");
  const auto in = x.data();
  std::vector<double> mu(c), inv_std(c), xhat(x.numel()), out(x.numel());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double m, var;
    if (training) {
      double s = 0.0;
      for (std::size_t s_i = 0; s_i < n; ++s_i)
        for (std::size_t k = 0; k < hw; ++k) s += in[(s_i * c + ch) * hw + k];
      m = s / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t s_i = 0; s_i < n; ++s_i)
        for (std::size_t k = 0; k < hw; ++k) {
          const double dlt = in[(s_i * c + ch) * hw + k] - m;
          sq += dlt * dlt;
        }
      var = sq / static_cast<double>(count);
      auto rm = running_mean.mutable_data();
      auto rv = running_var.mutable_data();
      rm[ch] = (1.0 - momentum) * rm[ch] + momentum * m;
      rv[ch] = (1.0 - momentum) * rv[ch] + momentum * var * static_cast<double>(count) / static_cast<double>(count - 1);
    } else {
      m = running_mean.data()[ch];
      var = running_var.data()[ch];
    }
    mu[ch] = m;
    inv_std[ch] = 1.0 / std::sqrt(var + eps);
    const double gm = gamma.data()[ch], bt = beta.data()[ch];
    for (std::size_t s_i = 0; s_i < n; ++s_i)
      for (std::size_t k = 0; k < hw; ++k) {
        const std::size_t idx = (s_i * c + ch) * hw + k;
        xhat[idx] = (in[idx] - m) * inv_std[ch];
        out[idx] = gm * xhat[idx] + bt;
      }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, n, c, hw, count, training, inv_std = std::move(inv_std),
       xhat = std::move(xhat)](std::span<const double> g) mutable {
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t s_i = 0; s_i < n; ++s_i)
            for (std::size_t k = 0; k < hw; ++k) {
              const std::size_t idx = (s_i * c + ch) * hw + k;
              sum_g += g[idx];
              sum_gx += g[idx] * xhat[idx];
            }
          if (gamma.requires_grad()) gamma.mutable_grad()[ch] += sum_gx;
          if (beta.requires_grad()) beta.mutable_grad()[ch] += sum_g;
          if (!x.requires_grad()) continue;
          auto d = x.mutable_grad();
          const double gm = gamma.data()[ch];
          const double inv_n = 1.0 / static_cast<double>(count);
          for (std::size_t s_i = 0; s_i < n; ++s_i)
            for (std::size_t k = 0; k < hw; ++k) {
              const std::size_t idx = (s_i * c + ch) * hw + k;
              if (training) {
                d[idx] += gm * inv_std[ch] * (g[idx] - inv_n * sum_g - xhat[idx] * inv_n * sum_gx);
              } else {
                d[idx] += gm * inv_std[ch] * g[idx];
              }
            }
        }
      });
}

}  // namespace ka::ops
