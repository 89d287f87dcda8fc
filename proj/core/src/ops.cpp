#include "vc/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace vc::ops {

namespace {

using detail::Node;

std::vector<double>& grad_of(const std::shared_ptr<Node>& node) { return node->grad_buffer(); }

Shape broadcast_shape(const Shape& a, const Shape& b) {
  auto dim = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw std::invalid_argument("cannot broadcast " + a.str() + " with " + b.str());
  };
  return {dim(a.n, b.n), dim(a.c, b.c), dim(a.t, b.t)};
}

struct Strides {
  std::size_t n, c, t;
};

Strides broadcast_strides(const Shape& s) {
  return {s.n == 1 ? 0 : s.c * s.t, s.c == 1 ? 0 : s.t, s.t == 1 ? 0 : std::size_t{1}};
}

// Visits every output element with the matching operand offsets.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  Strides sa = broadcast_strides(a), sb = broadcast_strides(b);
  std::size_t o = 0;
  for (std::size_t n = 0; n < out.n; ++n)
    for (std::size_t c = 0; c < out.c; ++c) {
      std::size_t ia = n * sa.n + c * sa.c, ib = n * sb.n + c * sb.c;
      for (std::size_t t = 0; t < out.t; ++t, ++o) f(o, ia + t * sa.t, ib + t * sb.t);
    }
}

enum class BinaryKind { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  Shape out = broadcast_shape(a.shape(), b.shape());
  std::vector<double> y(out.size());
  auto av = a.values();
  auto bv = b.values();
  for_each_broadcast(out, a.shape(), b.shape(), [&](std::size_t o, std::size_t ia, std::size_t ib) {
    switch (kind) {
      case BinaryKind::add: y[o] = av[ia] + bv[ib]; break;
      case BinaryKind::sub: y[o] = av[ia] - bv[ib]; break;
      case BinaryKind::mul: y[o] = av[ia] * bv[ib]; break;
    }
  });
  auto na = a.node(), nb = b.node();
  return make_result(out, std::move(y), {a, b}, [na, nb, kind](Node& self) {
    const auto& g = self.grad;
    double* ga = na->requires_grad ? grad_of(na).data() : nullptr;
    double* gb = nb->requires_grad ? grad_of(nb).data() : nullptr;
    const auto& av = na->value;
    const auto& bv = nb->value;
    for_each_broadcast(self.shape, na->shape, nb->shape,
                       [&](std::size_t o, std::size_t ia, std::size_t ib) {
                         switch (kind) {
                           case BinaryKind::add:
                             if (ga) ga[ia] += g[o];
                             if (gb) gb[ib] += g[o];
                             break;
                           case BinaryKind::sub:
                             if (ga) ga[ia] += g[o];
                             if (gb) gb[ib] -= g[o];
                             break;
                           case BinaryKind::mul:
                             if (ga) ga[ia] += g[o] * bv[ib];
                             if (gb) gb[ib] += g[o] * av[ia];
                             break;
                         }
                       });
  });
}

// Elementwise op whose derivative is expressed through input x and output y.
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  auto xv = x.values();
  std::vector<double> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(xv[i]);
  auto nx = x.node();
  return make_result(x.shape(), std::move(y), {x}, [nx, deriv](Node& self) {
    auto& gx = grad_of(nx);
    for (std::size_t i = 0; i < gx.size(); ++i)
      gx[i] += self.grad[i] * deriv(nx->value[i], self.value[i]);
  });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!(a.shape() == b.shape()))
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape().str() +
                                " vs " + b.shape().str());
}

std::size_t mirror_index(long j, std::size_t len) {
  if (len == 1) return 0;
  const long period = 2 * static_cast<long>(len) - 2;
  long m = j % period;
  if (m < 0) m += period;
  if (m >= static_cast<long>(len)) m = period - m;
  return static_cast<std::size_t>(m);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul); }

Tensor scale(const Tensor& x, double factor) {
  return unary(x, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(x, [slope](double v) { return v > 0.0 ? v : slope * v; },
               [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor silu(const Tensor& x) {
  return unary(x, [](double v) { return v / (1.0 + std::exp(-v)); },
               [](double v, double) {
                 double s = 1.0 / (1.0 + std::exp(-v));
                 return s * (1.0 + v * (1.0 - s));
               });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvSpec& spec) {
  const Shape xs = x.shape(), ws = weight.shape();
  const std::size_t groups = spec.groups;
  if (groups == 0 || xs.c % groups != 0 || ws.n % groups != 0 || ws.c * groups != xs.c)
    throw std::invalid_argument("conv1d: input " + xs.str() + " incompatible with weight " +
                                ws.str() + " and groups " + std::to_string(groups));
  if (bias.defined() && bias.size() != ws.n)
    throw std::invalid_argument("conv1d: bias size does not match output channels");
  if (spec.stride == 0 || spec.dilation == 0) throw std::invalid_argument("conv1d: zero stride");

  const std::size_t N = xs.n, Cin = xs.c, T = xs.t, Cout = ws.n, Cg = ws.c, K = ws.t;
  const std::size_t Og = Cout / groups;
  const std::size_t s = spec.stride, d = spec.dilation;
  const std::size_t padded = T + spec.pad_left + spec.pad_right;
  const std::size_t span = d * (K - 1) + 1;
  if (padded < span)
    throw std::invalid_argument("conv1d: input length " + std::to_string(T) +
                                " shorter than receptive span " + std::to_string(span));
  const std::size_t Tout = (padded - span) / s + 1;

  // Valid output range per tap so the inner loop is branch-free.
  std::vector<std::size_t> lo(K), hi(K);
  std::vector<long> offset(K);
  for (std::size_t k = 0; k < K; ++k) {
    long off = static_cast<long>(k * d) - static_cast<long>(spec.pad_left);
    offset[k] = off;
    long first = off >= 0 ? 0 : (-off + static_cast<long>(s) - 1) / static_cast<long>(s);
    long last_num = static_cast<long>(T) - 1 - off;  // t*s <= last_num
    long last = last_num < 0 ? -1 : last_num / static_cast<long>(s);
    lo[k] = static_cast<std::size_t>(std::min<long>(first, static_cast<long>(Tout)));
    hi[k] = static_cast<std::size_t>(std::clamp<long>(last + 1, static_cast<long>(lo[k]),
                                                      static_cast<long>(Tout)));
  }

  // Wide reductions go through im2col + GEMM in time tiles; depthwise and
  // other tiny groups use the direct loops.
  const std::size_t rows = Cg * K;
  const bool use_gemm = rows >= 16 && Og >= 4;
  const std::size_t tile = std::max<std::size_t>(64, (std::size_t{1} << 18) / std::max<std::size_t>(rows, 1));

  // cols[r, t - t0] for r = i*K + k: input sample feeding tap k of channel i.
  auto gather = [=](const double* xg, std::size_t t0, std::size_t t1, double* cols) {
    const std::size_t w = t1 - t0;
    for (std::size_t i = 0; i < Cg; ++i)
      for (std::size_t k = 0; k < K; ++k) {
        double* c = cols + (i * K + k) * w;
        const double* src = xg + i * T + offset[k];
        const std::size_t a = std::clamp(lo[k], t0, t1), b = std::clamp(hi[k], t0, t1);
        std::fill(c, c + (a - t0), 0.0);
        for (std::size_t t = a; t < b; ++t) c[t - t0] = src[t * s];
        std::fill(c + (b - t0), c + w, 0.0);
      }
  };

  std::vector<double> y(N * Cout * Tout, 0.0);
  auto xv = x.values();
  auto wv = weight.values();
  if (use_gemm) {
    std::vector<double> cols(rows * std::min(tile, Tout));
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t g = 0; g < groups; ++g) {
        const double* xg = xv.data() + (n * Cin + g * Cg) * T;
        double* yg = y.data() + (n * Cout + g * Og) * Tout;
        for (std::size_t t0 = 0; t0 < Tout; t0 += tile) {
          const std::size_t t1 = std::min(Tout, t0 + tile);
          gather(xg, t0, t1, cols.data());
          cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(Og), static_cast<int>(t1 - t0),
                      static_cast<int>(rows), 1.0, wv.data() + g * Og * rows, static_cast<int>(rows), cols.data(),
                      static_cast<int>(t1 - t0), 0.0, yg + t0, static_cast<int>(Tout));
        }
      }
    if (bias.defined())
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < Cout; ++o) {
          double* yrow = y.data() + (n * Cout + o) * Tout;
          const double b = bias.values()[o];
          for (std::size_t t = 0; t < Tout; ++t) yrow[t] += b;
        }
  } else {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < Cout; ++o) {
        double* yrow = y.data() + (n * Cout + o) * Tout;
        if (bias.defined()) std::fill(yrow, yrow + Tout, bias.values()[o]);
        const std::size_t g = o / Og;
        for (std::size_t i = 0; i < Cg; ++i) {
          const double* xrow = xv.data() + (n * Cin + g * Cg + i) * T;
          const double* wrow = wv.data() + (o * Cg + i) * K;
          for (std::size_t k = 0; k < K; ++k) {
            const double w = wrow[k];
            const double* src = xrow + offset[k];
            if (s == 1) {
              for (std::size_t t = lo[k]; t < hi[k]; ++t) yrow[t] += w * src[t];
            } else {
              for (std::size_t t = lo[k]; t < hi[k]; ++t) yrow[t] += w * src[t * s];
            }
          }
        }
      }
  }

  auto nx = x.node(), nw = weight.node();
  auto nb = bias.defined() ? bias.node() : nullptr;
  std::vector<Tensor> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result(
      {N, Cout, Tout}, std::move(y), std::move(parents),
      [=](Node& self) {
        const auto& gy = self.grad;
        double* gx = nx->requires_grad ? grad_of(nx).data() : nullptr;
        double* gw = nw->requires_grad ? grad_of(nw).data() : nullptr;
        double* gb = (nb && nb->requires_grad) ? grad_of(nb).data() : nullptr;
        const auto& xv = nx->value;
        const auto& wv = nw->value;
        if (gb)
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t o = 0; o < Cout; ++o) {
              const double* grow = gy.data() + (n * Cout + o) * Tout;
              gb[o] += std::accumulate(grow, grow + Tout, 0.0);
            }
        if (use_gemm) {
          const std::size_t width = std::min(tile, Tout);
          std::vector<double> cols(rows * width), gcols(rows * width);
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t g = 0; g < groups; ++g) {
              const double* xg = xv.data() + (n * Cin + g * Cg) * T;
              const double* gyg = gy.data() + (n * Cout + g * Og) * Tout;
              for (std::size_t t0 = 0; t0 < Tout; t0 += tile) {
                const std::size_t t1 = std::min(Tout, t0 + tile), w = t1 - t0;
                const int iw = static_cast<int>(w), ir = static_cast<int>(rows), io = static_cast<int>(Og);
                if (gw) {
                  gather(xg, t0, t1, cols.data());
                  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, io, ir, iw, 1.0, gyg + t0,
                              static_cast<int>(Tout), cols.data(), iw, 1.0, gw + g * Og * rows, ir);
                }
                if (gx) {
                  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, ir, iw, io, 1.0, wv.data() + g * Og * rows, ir,
                              gyg + t0, static_cast<int>(Tout), 0.0, gcols.data(), iw);
                  double* gxg = gx + (n * Cin + g * Cg) * T;
                  for (std::size_t i = 0; i < Cg; ++i)
                    for (std::size_t k = 0; k < K; ++k) {
                      const double* c = gcols.data() + (i * K + k) * w;
                      double* dst = gxg + i * T + offset[k];
                      const std::size_t a = std::clamp(lo[k], t0, t1), b = std::clamp(hi[k], t0, t1);
                      for (std::size_t t = a; t < b; ++t) dst[t * s] += c[t - t0];
                    }
                }
              }
            }
          return;
        }
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t o = 0; o < Cout; ++o) {
            const double* grow = gy.data() + (n * Cout + o) * Tout;
            const std::size_t g = o / Og;
            for (std::size_t i = 0; i < Cg; ++i) {
              const std::size_t xbase = (n * Cin + g * Cg + i) * T;
              const double* xrow = xv.data() + xbase;
              for (std::size_t k = 0; k < K; ++k) {
                const std::size_t widx = (o * Cg + i) * K + k;
                const long off = offset[k];
                if (gw) {
                  double acc = 0.0;
                  const double* src = xrow + off;
                  if (s == 1) {
                    for (std::size_t t = lo[k]; t < hi[k]; ++t) acc += grow[t] * src[t];
                  } else {
                    for (std::size_t t = lo[k]; t < hi[k]; ++t) acc += grow[t] * src[t * s];
                  }
                  gw[widx] += acc;
                }
                if (gx) {
                  const double w = wv[widx];
                  double* dst = gx + xbase + off;
                  if (s == 1) {
                    for (std::size_t t = lo[k]; t < hi[k]; ++t) dst[t] += w * grow[t];
                  } else {
                    for (std::size_t t = lo[k]; t < hi[k]; ++t) dst[t * s] += w * grow[t];
                  }
                }
              }
            }
          }
      });
}

Tensor pad_reflect(const Tensor& x, std::size_t left, std::size_t right) {
  const Shape xs = x.shape();
  const std::size_t Tout = xs.t + left + right;
  std::vector<std::size_t> src(Tout);
  for (std::size_t t = 0; t < Tout; ++t)
    src[t] = mirror_index(static_cast<long>(t) - static_cast<long>(left), xs.t);
  std::vector<double> y(xs.n * xs.c * Tout);
  auto xv = x.values();
  for (std::size_t r = 0; r < xs.n * xs.c; ++r)
    for (std::size_t t = 0; t < Tout; ++t) y[r * Tout + t] = xv[r * xs.t + src[t]];
  auto nx = x.node();
  return make_result({xs.n, xs.c, Tout}, std::move(y), {x}, [nx, src, Tout](Node& self) {
    auto& gx = grad_of(nx);
    const std::size_t T = nx->shape.t;
    for (std::size_t r = 0; r < nx->shape.n * nx->shape.c; ++r)
      for (std::size_t t = 0; t < Tout; ++t) gx[r * T + src[t]] += self.grad[r * Tout + t];
  });
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  const Shape xs = x.shape();
  const std::size_t Tout = xs.t * factor;
  std::vector<double> y(xs.n * xs.c * Tout);
  auto xv = x.values();
  for (std::size_t r = 0; r < xs.n * xs.c; ++r)
    for (std::size_t t = 0; t < Tout; ++t) y[r * Tout + t] = xv[r * xs.t + t / factor];
  auto nx = x.node();
  return make_result({xs.n, xs.c, Tout}, std::move(y), {x}, [nx, factor, Tout](Node& self) {
    auto& gx = grad_of(nx);
    const std::size_t T = nx->shape.t;
    for (std::size_t r = 0; r < nx->shape.n * nx->shape.c; ++r)
      for (std::size_t t = 0; t < Tout; ++t) gx[r * T + t / factor] += self.grad[r * Tout + t];
  });
}

Tensor avg_pool(const Tensor& x, std::size_t factor) {
  const Shape xs = x.shape();
  const std::size_t Tout = (xs.t + factor - 1) / factor;
  std::vector<double> y(xs.n * xs.c * Tout, 0.0);
  auto xv = x.values();
  auto window = [&](std::size_t o) { return std::min(factor, xs.t - o * factor); };
  for (std::size_t r = 0; r < xs.n * xs.c; ++r)
    for (std::size_t o = 0; o < Tout; ++o) {
      double acc = 0.0;
      for (std::size_t j = 0; j < window(o); ++j) acc += xv[r * xs.t + o * factor + j];
      y[r * Tout + o] = acc / static_cast<double>(window(o));
    }
  auto nx = x.node();
  return make_result({xs.n, xs.c, Tout}, std::move(y), {x}, [nx, factor, Tout](Node& self) {
    auto& gx = grad_of(nx);
    const std::size_t T = nx->shape.t;
    for (std::size_t r = 0; r < nx->shape.n * nx->shape.c; ++r)
      for (std::size_t o = 0; o < Tout; ++o) {
        const std::size_t w = std::min(factor, T - o * factor);
        const double g = self.grad[r * Tout + o] / static_cast<double>(w);
        for (std::size_t j = 0; j < w; ++j) gx[r * T + o * factor + j] += g;
      }
  });
}

Tensor fold_period(const Tensor& x, std::size_t period) {
  const Shape xs = x.shape();
  if (period == 0 || xs.t % period != 0)
    throw std::invalid_argument("fold_period: length " + std::to_string(xs.t) +
                                " not a multiple of period " + std::to_string(period));
  const std::size_t rows = xs.t / period;
  const Shape out{xs.n * period, xs.c, rows};
  std::vector<double> y(out.size());
  auto xv = x.values();
  auto index = [=](std::size_t n, std::size_t j, std::size_t c, std::size_t i) {
    return std::pair{((n * period + j) * xs.c + c) * rows + i, (n * xs.c + c) * xs.t + i * period + j};
  };
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t j = 0; j < period; ++j)
      for (std::size_t c = 0; c < xs.c; ++c)
        for (std::size_t i = 0; i < rows; ++i) {
          auto [o, s] = index(n, j, c, i);
          y[o] = xv[s];
        }
  auto nx = x.node();
  return make_result(out, std::move(y), {x}, [nx, index, xs, period, rows](Node& self) {
    auto& gx = grad_of(nx);
    for (std::size_t n = 0; n < xs.n; ++n)
      for (std::size_t j = 0; j < period; ++j)
        for (std::size_t c = 0; c < xs.c; ++c)
          for (std::size_t i = 0; i < rows; ++i) {
            auto [o, s] = index(n, j, c, i);
            gx[s] += self.grad[o];
          }
  });
}

Tensor slice_channels(const Tensor& x, std::size_t start, std::size_t count) {
  const Shape xs = x.shape();
  if (start + count > xs.c) throw std::invalid_argument("slice_channels: range out of bounds");
  std::vector<double> y(xs.n * count * xs.t);
  auto xv = x.values();
  for (std::size_t n = 0; n < xs.n; ++n)
    std::copy_n(xv.begin() + static_cast<long>((n * xs.c + start) * xs.t), count * xs.t,
                y.begin() + static_cast<long>(n * count * xs.t));
  auto nx = x.node();
  return make_result({xs.n, count, xs.t}, std::move(y), {x}, [nx, start, count](Node& self) {
    auto& gx = grad_of(nx);
    const Shape s = nx->shape;
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < count * s.t; ++i)
        gx[(n * s.c + start) * s.t + i] += self.grad[n * count * s.t + i];
  });
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const std::size_t N = parts[0].shape().n, T = parts[0].shape().t;
  std::size_t C = 0;
  for (const auto& p : parts) {
    if (p.shape().n != N || p.shape().t != T)
      throw std::invalid_argument("concat_channels: mismatched " + p.shape().str());
    C += p.shape().c;
  }
  std::vector<double> y(N * C * T);
  std::vector<std::shared_ptr<Node>> nodes;
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.shape().c;
    for (std::size_t n = 0; n < N; ++n)
      std::copy_n(p.values().begin() + static_cast<long>(n * pc * T), pc * T,
                  y.begin() + static_cast<long>((n * C + c0) * T));
    c0 += pc;
    nodes.push_back(p.node());
  }
  return make_result({N, C, T}, std::move(y), {parts.begin(), parts.end()},
                     [nodes, N, C, T](Node& self) {
                       std::size_t c0 = 0;
                       for (const auto& p : nodes) {
                         const std::size_t pc = p->shape.c;
                         if (p->requires_grad) {
                           auto& g = grad_of(p);
                           for (std::size_t n = 0; n < N; ++n)
                             for (std::size_t i = 0; i < pc * T; ++i)
                               g[n * pc * T + i] += self.grad[(n * C + c0) * T + i];
                         }
                         c0 += pc;
                       }
                     });
}

Tensor slice_time(const Tensor& x, std::size_t start, std::size_t length) {
  const Shape xs = x.shape();
  if (start + length > xs.t) throw std::invalid_argument("slice_time: range out of bounds");
  std::vector<double> y(xs.n * xs.c * length);
  auto xv = x.values();
  for (std::size_t r = 0; r < xs.n * xs.c; ++r)
    std::copy_n(xv.begin() + static_cast<long>(r * xs.t + start), length,
                y.begin() + static_cast<long>(r * length));
  auto nx = x.node();
  return make_result({xs.n, xs.c, length}, std::move(y), {x}, [nx, start, length](Node& self) {
    auto& gx = grad_of(nx);
    const std::size_t T = nx->shape.t;
    for (std::size_t r = 0; r < nx->shape.n * nx->shape.c; ++r)
      for (std::size_t t = 0; t < length; ++t) gx[r * T + start + t] += self.grad[r * length + t];
  });
}

Tensor resample_time(const Tensor& x, std::size_t length) {
  const Shape xs = x.shape();
  if (length == 0 || xs.t == 0) throw std::invalid_argument("resample_time: empty");
  std::vector<std::size_t> src(length);
  for (std::size_t i = 0; i < length; ++i) src[i] = i * xs.t / length;
  std::vector<double> y(xs.n * xs.c * length);
  auto xv = x.values();
  for (std::size_t r = 0; r < xs.n * xs.c; ++r)
    for (std::size_t i = 0; i < length; ++i) y[r * length + i] = xv[r * xs.t + src[i]];
  auto nx = x.node();
  return make_result({xs.n, xs.c, length}, std::move(y), {x}, [nx, src, length](Node& self) {
    auto& gx = grad_of(nx);
    const std::size_t T = nx->shape.t;
    for (std::size_t r = 0; r < nx->shape.n * nx->shape.c; ++r)
      for (std::size_t i = 0; i < length; ++i) gx[r * T + src[i]] += self.grad[r * length + i];
  });
}

Tensor select_row(const Tensor& table, std::size_t index) {
  const Shape ts = table.shape();
  if (index >= ts.n) throw std::out_of_range("select_row: index " + std::to_string(index));
  const std::size_t width = ts.c * ts.t;
  std::vector<double> y(table.values().begin() + static_cast<long>(index * width),
                        table.values().begin() + static_cast<long>((index + 1) * width));
  auto nt = table.node();
  return make_result({1, ts.c, ts.t}, std::move(y), {table}, [nt, index, width](Node& self) {
    auto& g = grad_of(nt);
    for (std::size_t i = 0; i < width; ++i) g[index * width + i] += self.grad[i];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Shape xs = x.shape();
  if (gamma.size() != xs.c || beta.size() != xs.c)
    throw std::invalid_argument("layer_norm: affine parameters do not match channels");
  const std::size_t N = xs.n, C = xs.c, T = xs.t;
  std::vector<double> y(xs.size()), xhat(xs.size()), inv_std(N * T);
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t < T; ++t) {
      double mu = 0.0;
      for (std::size_t c = 0; c < C; ++c) mu += xv[(n * C + c) * T + t];
      mu /= static_cast<double>(C);
      double var = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        double dlt = xv[(n * C + c) * T + t] - mu;
        var += dlt * dlt;
      }
      var /= static_cast<double>(C);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[n * T + t] = is;
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = (n * C + c) * T + t;
        xhat[i] = (xv[i] - mu) * is;
        y[i] = gv[c] * xhat[i] + bv[c];
      }
    }
  auto nx = x.node(), ng = gamma.node(), nb = beta.node();
  return make_result(xs, std::move(y), {x, gamma, beta},
                     [nx, ng, nb, xhat = std::move(xhat), inv_std = std::move(inv_std), N, C,
                      T](Node& self) {
                       const auto& gy = self.grad;
                       double* gg = ng->requires_grad ? grad_of(ng).data() : nullptr;
                       double* gb = nb->requires_grad ? grad_of(nb).data() : nullptr;
                       double* gx = nx->requires_grad ? grad_of(nx).data() : nullptr;
                       const auto& gamma = ng->value;
                       for (std::size_t n = 0; n < N; ++n)
                         for (std::size_t t = 0; t < T; ++t) {
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t c = 0; c < C; ++c) {
                             const std::size_t i = (n * C + c) * T + t;
                             if (gg) gg[c] += gy[i] * xhat[i];
                             if (gb) gb[c] += gy[i];
                             const double dxh = gy[i] * gamma[c];
                             m1 += dxh;
                             m2 += dxh * xhat[i];
                           }
                           if (!gx) continue;
                           m1 /= static_cast<double>(C);
                           m2 /= static_cast<double>(C);
                           const double is = inv_std[n * T + t];
                           for (std::size_t c = 0; c < C; ++c) {
                             const std::size_t i = (n * C + c) * T + t;
                             gx[i] += is * (gy[i] * gamma[c] - m1 - xhat[i] * m2);
                           }
                         }
                     });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  const Shape qs = q.shape(), ks = k.shape(), vs = v.shape();
  if (qs.n != ks.n || qs.c != ks.c || !(ks == vs) || heads == 0 || qs.c % heads != 0)
    throw std::invalid_argument("attention: incompatible q " + qs.str() + " k " + ks.str() +
                                " v " + vs.str());
  const std::size_t N = qs.n, C = qs.c, Tq = qs.t, Tk = ks.t, dh = C / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const int iq = static_cast<int>(Tq), ik = static_cast<int>(Tk), id = static_cast<int>(dh);
  // Per head the channel rows [h*dh, (h+1)*dh) form a dh x T row-major block,
  // so scores are Q^T K and the output is V A^T.
  std::vector<double> probs(N * heads * Tq * Tk);
  std::vector<double> y(N * C * Tq);
  auto qv = q.values();
  auto kv = k.values();
  auto vv = v.values();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t row = n * C + h * dh;
      double* A = probs.data() + (n * heads + h) * Tq * Tk;
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, iq, ik, id, inv_scale, qv.data() + row * Tq, iq,
                  kv.data() + row * Tk, ik, 0.0, A, ik);
      for (std::size_t i = 0; i < Tq; ++i) {
        double* arow = A + i * Tk;
        const double mx = *std::max_element(arow, arow + Tk);
        double z = 0.0;
        for (std::size_t j = 0; j < Tk; ++j) {
          arow[j] = std::exp(arow[j] - mx);
          z += arow[j];
        }
        const double inv_z = 1.0 / z;
        for (std::size_t j = 0; j < Tk; ++j) arow[j] *= inv_z;
      }
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, id, iq, ik, 1.0, vv.data() + row * Tk, ik, A, ik,
                  0.0, y.data() + row * Tq, iq);
    }
  auto nq = q.node(), nk = k.node(), nv = v.node();
  return make_result(
      {N, C, Tq}, std::move(y), {q, k, v},
      [=, probs = std::move(probs)](Node& self) {
        const auto& gy = self.grad;
        const auto& qv = nq->value;
        const auto& kv = nk->value;
        const auto& vv = nv->value;
        double* gq = nq->requires_grad ? grad_of(nq).data() : nullptr;
        double* gk = nk->requires_grad ? grad_of(nk).data() : nullptr;
        double* gv = nv->requires_grad ? grad_of(nv).data() : nullptr;
        std::vector<double> dA(Tq * Tk);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t row = n * C + h * dh;
            const double* A = probs.data() + (n * heads + h) * Tq * Tk;
            const double* g = gy.data() + row * Tq;
            cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, iq, ik, id, 1.0, g, iq, vv.data() + row * Tk, ik,
                        0.0, dA.data(), ik);
            if (gv)
              cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, id, ik, iq, 1.0, g, iq, A, ik, 1.0,
                          gv + row * Tk, ik);
            // Softmax Jacobian, then scale back to the raw logits.
            for (std::size_t i = 0; i < Tq; ++i) {
              const double* arow = A + i * Tk;
              double* darow = dA.data() + i * Tk;
              double dot = 0.0;
              for (std::size_t j = 0; j < Tk; ++j) dot += darow[j] * arow[j];
              for (std::size_t j = 0; j < Tk; ++j) darow[j] = arow[j] * (darow[j] - dot) * inv_scale;
            }
            if (gq)
              cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, id, iq, ik, 1.0, kv.data() + row * Tk, ik,
                          dA.data(), ik, 1.0, gq + row * Tq, iq);
            if (gk)
              cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, id, ik, iq, 1.0, qv.data() + row * Tq, iq,
                          dA.data(), ik, 1.0, gk + row * Tk, ik);
          }
      });
}

Tensor glu(const Tensor& x) {
  const std::size_t half = x.shape().c / 2;
  if (x.shape().c % 2 != 0) throw std::invalid_argument("glu: odd channel count");
  return mul(slice_channels(x, 0, half), sigmoid(slice_channels(x, half, half)));
}

Tensor sum(const Tensor& x) {
  auto xv = x.values();
  double s = std::accumulate(xv.begin(), xv.end(), 0.0);
  auto nx = x.node();
  return make_result({1, 1, 1}, {s}, {x}, [nx](Node& self) {
    auto& gx = grad_of(nx);
    for (double& g : gx) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  auto av = a.values();
  auto bv = b.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += (av[i] - bv[i]) * (av[i] - bv[i]);
  const double inv = 1.0 / static_cast<double>(av.size());
  auto na = a.node(), nb = b.node();
  return make_result({1, 1, 1}, {acc * inv}, {a, b}, [na, nb, inv](Node& self) {
    const double g = self.grad[0] * 2.0 * inv;
    for (std::size_t i = 0; i < na->value.size(); ++i) {
      const double d = g * (na->value[i] - nb->value[i]);
      if (na->requires_grad) grad_of(na)[i] += d;
      if (nb->requires_grad) grad_of(nb)[i] -= d;
    }
  });
}

Tensor mean_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mean_abs_diff");
  auto av = a.values();
  auto bv = b.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += std::abs(av[i] - bv[i]);
  const double inv = 1.0 / static_cast<double>(av.size());
  auto na = a.node(), nb = b.node();
  return make_result({1, 1, 1}, {acc * inv}, {a, b}, [na, nb, inv](Node& self) {
    const double g = self.grad[0] * inv;
    for (std::size_t i = 0; i < na->value.size(); ++i) {
      const double diff = na->value[i] - nb->value[i];
      const double d = diff > 0.0 ? g : (diff < 0.0 ? -g : 0.0);
      if (na->requires_grad) grad_of(na)[i] += d;
      if (nb->requires_grad) grad_of(nb)[i] -= d;
    }
  });
}

Tensor weight_norm(const Tensor& v, const Tensor& g) {
  const Shape vs = v.shape();
  if (g.size() != vs.n) throw std::invalid_argument("weight_norm: gain size mismatch");
  const std::size_t O = vs.n, M = vs.c * vs.t;
  std::vector<double> w(vs.size()), norms(O);
  auto vv = v.values();
  auto gv = g.values();
  for (std::size_t o = 0; o < O; ++o) {
    double sq = 0.0;
    for (std::size_t m = 0; m < M; ++m) sq += vv[o * M + m] * vv[o * M + m];
    norms[o] = std::sqrt(std::max(sq, 1e-24));
    for (std::size_t m = 0; m < M; ++m) w[o * M + m] = gv[o] * vv[o * M + m] / norms[o];
  }
  auto nv = v.node(), ng = g.node();
  return make_result(vs, std::move(w), {v, g}, [nv, ng, norms, O, M](Node& self) {
    const auto& gw = self.grad;
    const auto& vv = nv->value;
    const auto& gain = ng->value;
    for (std::size_t o = 0; o < O; ++o) {
      double dot = 0.0;
      for (std::size_t m = 0; m < M; ++m) dot += gw[o * M + m] * vv[o * M + m];
      const double nrm = norms[o];
      if (ng->requires_grad) grad_of(ng)[o] += dot / nrm;
      if (nv->requires_grad) {
        auto& gvv = grad_of(nv);
        const double a = gain[o] / nrm;
        const double b = gain[o] * dot / (nrm * nrm * nrm);
        for (std::size_t m = 0; m < M; ++m) gvv[o * M + m] += a * gw[o * M + m] - b * vv[o * M + m];
      }
    }
  });
}

Tensor spectral_normalize(const Tensor& w, Tensor& u, bool update) {
  const Shape ws = w.shape();
  const std::size_t O = ws.n, M = ws.c * ws.t;
  if (u.size() != O) throw std::invalid_argument("spectral_normalize: u size mismatch");
  auto wv = w.values();
  auto normalize = [](std::vector<double>& x) {
    double s = 0.0;
    for (double e : x) s += e * e;
    s = std::sqrt(std::max(s, 1e-24));
    for (double& e : x) e /= s;
  };
  std::vector<double> uvec(u.values().begin(), u.values().end());
  std::vector<double> vvec(M, 0.0);
  auto right = [&] {
    std::fill(vvec.begin(), vvec.end(), 0.0);
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t m = 0; m < M; ++m) vvec[m] += wv[o * M + m] * uvec[o];
    normalize(vvec);
  };
  right();
  if (update) {
    for (std::size_t o = 0; o < O; ++o) {
      double acc = 0.0;
      for (std::size_t m = 0; m < M; ++m) acc += wv[o * M + m] * vvec[m];
      uvec[o] = acc;
    }
    normalize(uvec);
    std::copy(uvec.begin(), uvec.end(), u.mutable_values().begin());
    right();
  }
  double sigma = 0.0;
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t m = 0; m < M; ++m) sigma += uvec[o] * wv[o * M + m] * vvec[m];
  sigma = std::max(std::abs(sigma), 1e-12);
  std::vector<double> y(ws.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = wv[i] / sigma;
  auto nw = w.node();
  return make_result(ws, std::move(y), {w}, [nw, uvec, vvec, sigma, O, M](Node& self) {
    const auto& gy = self.grad;
    double inner = 0.0;
    for (std::size_t i = 0; i < gy.size(); ++i) inner += gy[i] * self.value[i];
    auto& gw = grad_of(nw);
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t m = 0; m < M; ++m)
        gw[o * M + m] += (gy[o * M + m] - inner * uvec[o] * vvec[m]) / sigma;
  });
}

}  // namespace vc::ops
