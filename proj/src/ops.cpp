#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "nsedit/autograd.hpp"

namespace nsedit::ops {

namespace {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using CMapVec = Eigen::Map<const Eigen::Matrix<real, Eigen::Dynamic, 1>>;
using MapVec = Eigen::Map<Eigen::Matrix<real, Eigen::Dynamic, 1>>;

void require_rank4(const Tensor& t, const char* op) {
  if (t.rank() != 4) throw DimensionError(std::string(op) + " expects (B, C, H, W), got " + to_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + " shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

// Output columns [lo, hi) read in-bounds input for kernel offset k.
inline void valid_range(int k, int S, int P, int W, int Wo, int& lo, int& hi) {
  lo = std::max(0, (P - k + S - 1) / S);
  hi = std::min(Wo, (W - 1 + P - k) / S + 1);
  if (W - 1 + P - k < 0) hi = 0;
  if (hi < lo) hi = lo;
}

void im2col(const real* x, int C, int H, int W, int K, int S, int P, int Ho, int Wo, real* cols) {
  const std::size_t plane = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    const real* xc = x + static_cast<std::size_t>(c) * H * W;
    for (int ky = 0; ky < K; ++ky) {
      for (int kx = 0; kx < K; ++kx) {
        real* row = cols + (static_cast<std::size_t>(c) * K * K + ky * K + kx) * plane;
        int lo, hi;
        valid_range(kx, S, P, W, Wo, lo, hi);
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * S - P + ky;
          real* dst = row + static_cast<std::size_t>(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wo, 0.0f);
            continue;
          }
          const real* src = xc + static_cast<std::size_t>(iy) * W;
          const int off = kx - P;
          std::fill(dst, dst + lo, 0.0f);
          if (S == 1) {
            std::copy(src + off + lo, src + off + hi, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[off + ox * S];
          }
          std::fill(dst + hi, dst + Wo, 0.0f);
        }
      }
    }
  }
}

void col2im(const real* cols, int C, int H, int W, int K, int S, int P, int Ho, int Wo, real* x) {
  const std::size_t plane = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    real* xc = x + static_cast<std::size_t>(c) * H * W;
    for (int ky = 0; ky < K; ++ky) {
      for (int kx = 0; kx < K; ++kx) {
        const real* row = cols + (static_cast<std::size_t>(c) * K * K + ky * K + kx) * plane;
        int lo, hi;
        valid_range(kx, S, P, W, Wo, lo, hi);
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * S - P + ky;
          if (iy < 0 || iy >= H) continue;
          const real* src = row + static_cast<std::size_t>(oy) * Wo;
          real* dst = xc + static_cast<std::size_t>(iy) * W;
          const int off = kx - P;
          if (S == 1) {
            for (int ox = lo; ox < hi; ++ox) dst[off + ox] += src[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[off + ox * S] += src[ox];
          }
        }
      }
    }
  }
}

struct NormStats {
  Tensor xhat;
  std::vector<real> inv_std;
};

NormStats normalize_planes(const Tensor& x, double eps) {
  const int B = x.dim(0), C = x.dim(1);
  const std::size_t HW = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  NormStats s{Tensor(x.shape()), std::vector<real>(static_cast<std::size_t>(B) * C)};
  for (std::size_t p = 0; p < static_cast<std::size_t>(B) * C; ++p) {
    const real* src = x.ptr() + p * HW;
    double m = 0.0;
    for (std::size_t i = 0; i < HW; ++i) m += src[i];
    m /= static_cast<double>(HW);
    double v = 0.0;
    for (std::size_t i = 0; i < HW; ++i) v += (src[i] - m) * (src[i] - m);
    v /= static_cast<double>(HW);
    const double inv = 1.0 / std::sqrt(v + eps);
    s.inv_std[p] = static_cast<real>(inv);
    real* dst = s.xhat.ptr() + p * HW;
    for (std::size_t i = 0; i < HW; ++i) dst[i] = static_cast<real>((src[i] - m) * inv);
  }
  return s;
}

// Gradient of the plane normalization given d/dxhat.
void normalize_planes_backward(const Tensor& gxhat, const NormStats& s, Tensor& gx) {
  const std::size_t planes = s.inv_std.size();
  const std::size_t HW = gxhat.numel() / planes;
  for (std::size_t p = 0; p < planes; ++p) {
    const real* g = gxhat.ptr() + p * HW;
    const real* xh = s.xhat.ptr() + p * HW;
    double mg = 0.0, mgx = 0.0;
    for (std::size_t i = 0; i < HW; ++i) {
      mg += g[i];
      mgx += static_cast<double>(g[i]) * xh[i];
    }
    mg /= static_cast<double>(HW);
    mgx /= static_cast<double>(HW);
    real* out = gx.ptr() + p * HW;
    for (std::size_t i = 0; i < HW; ++i) out[i] += static_cast<real>(s.inv_std[p] * (g[i] - mg - xh[i] * mgx));
  }
}

}  // namespace

Var detach(const Var& x) { return constant(x.value()); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& n) {
    for (auto& p : n.parents)
      if (p->requires_grad) p->accumulate(n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
    if (n.parents[1]->requires_grad) {
      Tensor g = n.grad;
      for (auto& v : g.storage()) v = -v;
      n.parents[1]->accumulate(g);
    }
  });
}

Var scale(const Var& x, double factor) {
  Tensor out = x.value();
  const real f = static_cast<real>(factor);
  for (auto& v : out.storage()) v *= f;
  return make_result(std::move(out), {x}, [f](Node& n) {
    Tensor g = n.grad;
    for (auto& v : g.storage()) v *= f;
    n.parents[0]->accumulate(g);
  });
}

Var add_scalar(const Var& x, double v) {
  Tensor out = x.value();
  for (auto& e : out.storage()) e += static_cast<real>(v);
  return make_result(std::move(out), {x}, [](Node& n) { n.parents[0]->accumulate(n.grad); });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (real v : x.value().storage()) s += v;
  return make_result(Tensor({1}, static_cast<real>(s)), {x}, [](Node& n) {
    n.parents[0]->accumulate(Tensor(n.parents[0]->value.shape(), n.grad[0]));
  });
}

Var mean(const Var& x) {
  const double count = static_cast<double>(x.value().numel());
  double s = 0.0;
  for (real v : x.value().storage()) s += v;
  return make_result(Tensor({1}, static_cast<real>(s / count)), {x}, [count](Node& n) {
    n.parents[0]->accumulate(Tensor(n.parents[0]->value.shape(), static_cast<real>(n.grad[0] / count)));
  });
}

Var sum_all(std::span<const Var> scalars) {
  if (scalars.empty()) return constant(Tensor({1}, 0.0f));
  double s = 0.0;
  std::vector<Var> parents;
  for (const auto& v : scalars) {
    if (v.value().numel() != 1) throw DimensionError("sum_all expects scalars");
    s += v.value()[0];
    parents.push_back(v);
  }
  return make_result(Tensor({1}, static_cast<real>(s)), std::move(parents), [](Node& n) {
    for (auto& p : n.parents)
      if (p->requires_grad) p->accumulate(Tensor({1}, n.grad[0]));
  });
}

Var mse(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mse");
  const std::size_t count = a.value().numel();
  double s = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = static_cast<double>(a.value()[i]) - b.value()[i];
    s += d * d;
  }
  return make_result(Tensor({1}, static_cast<real>(s / count)), {a, b}, [count](Node& n) {
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    const double k = 2.0 * n.grad[0] / static_cast<double>(count);
    Tensor g(av.shape());
    for (std::size_t i = 0; i < count; ++i) g[i] = static_cast<real>(k * (static_cast<double>(av[i]) - bv[i]));
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(g);
    if (n.parents[1]->requires_grad) {
      for (auto& v : g.storage()) v = -v;
      n.parents[1]->accumulate(g);
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_result(std::move(out), {x}, [](Node& n) {
    n.parents[0]->accumulate(n.grad.reshaped(n.parents[0]->value.shape()));
  });
}

Var leaky_relu(const Var& x, real slope) {
  Tensor out = x.value();
  for (auto& v : out.storage()) v = v > 0.0f ? v : v * slope;
  return make_result(std::move(out), {x}, [slope](Node& n) {
    const Tensor& xv = n.parents[0]->value;
    Tensor g = n.grad;
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (!(xv[i] > 0.0f)) g[i] *= slope;
    n.parents[0]->accumulate(g);
  });
}

Var tanh(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.storage()) v = std::tanh(v);
  return make_result(out, {x}, [out](Node& n) {
    Tensor g = n.grad;
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= 1.0f - out[i] * out[i];
    n.parents[0]->accumulate(g);
  });
}

int conv_output_size(int input, int kernel, int stride, int padding) {
  const int span = input + 2 * padding - kernel;
  if (span < 0 || stride < 1) return 0;
  return span / stride + 1;
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require_rank4(xv, "conv2d");
  if (wv.rank() != 4 || wv.dim(2) != wv.dim(3)) throw DimensionError("conv2d weight must be (Cout, Cin, K, K)");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int Cout = wv.dim(0), K = wv.dim(2);
  if (wv.dim(1) != C) {
    throw DimensionError("conv2d channel mismatch: input " + to_string(xv.shape()) + ", weight " + to_string(wv.shape()));
  }
  const int Ho = conv_output_size(H, K, stride, padding), Wo = conv_output_size(W, K, stride, padding);
  if (Ho < 1 || Wo < 1) throw DimensionError("conv2d output would be empty for input " + to_string(xv.shape()));
  if (bias && (bias.value().rank() != 1 || bias.value().dim(0) != Cout)) throw DimensionError("conv2d bias shape");

  const int CKK = C * K * K;
  const std::size_t plane = static_cast<std::size_t>(Ho) * Wo;
  const bool pointwise = K == 1 && stride == 1 && padding == 0;
  Tensor out({B, Cout, Ho, Wo});
  Buffer cols(pointwise ? 0 : static_cast<std::size_t>(CKK) * plane);
  CMapMat Wm(wv.ptr(), Cout, CKK);
  for (int b = 0; b < B; ++b) {
    const real* xs = xv.ptr() + static_cast<std::size_t>(b) * C * H * W;
    const real* colp = xs;
    if (!pointwise) {
      im2col(xs, C, H, W, K, stride, padding, Ho, Wo, cols.data());
      colp = cols.data();
    }
    MapMat Om(out.ptr() + static_cast<std::size_t>(b) * Cout * plane, Cout, static_cast<Eigen::Index>(plane));
    Om.noalias() = Wm * CMapMat(colp, CKK, static_cast<Eigen::Index>(plane));
    if (bias) {
      for (int o = 0; o < Cout; ++o) Om.row(o).array() += bias.value()[o];
    }
  }

  std::vector<Var> parents{x, weight};
  if (bias) parents.push_back(bias);
  return make_result(std::move(out), std::move(parents), [=](Node& n) {
    const Tensor& xin = n.parents[0]->value;
    const Tensor& w = n.parents[1]->value;
    const bool need_x = n.parents[0]->requires_grad;
    const bool need_w = n.parents[1]->requires_grad;
    const bool need_b = n.parents.size() > 2 && n.parents[2]->requires_grad;
    Buffer colbuf(static_cast<std::size_t>(CKK) * plane);
    CMapMat Wk(w.ptr(), Cout, CKK);
    Tensor* gw = need_w ? &n.parents[1]->grad_buffer() : nullptr;
    Tensor* gb = need_b ? &n.parents[2]->grad_buffer() : nullptr;
    Tensor* gx = need_x ? &n.parents[0]->grad_buffer() : nullptr;
    for (int b = 0; b < B; ++b) {
      CMapMat Gy(n.grad.ptr() + static_cast<std::size_t>(b) * Cout * plane, Cout, static_cast<Eigen::Index>(plane));
      const real* xs = xin.ptr() + static_cast<std::size_t>(b) * C * H * W;
      if (need_w) {
        const real* colp = xs;
        if (!pointwise) {
          im2col(xs, C, H, W, K, stride, padding, Ho, Wo, colbuf.data());
          colp = colbuf.data();
        }
        MapMat Gw(gw->ptr(), Cout, CKK);
        Gw.noalias() += Gy * CMapMat(colp, CKK, static_cast<Eigen::Index>(plane)).transpose();
      }
      if (need_b) {
        for (int o = 0; o < Cout; ++o) (*gb)[o] += Gy.row(o).sum();
      }
      if (need_x) {
        real* gxs = gx->ptr() + static_cast<std::size_t>(b) * C * H * W;
        if (pointwise) {
          MapMat Gx(gxs, CKK, static_cast<Eigen::Index>(plane));
          Gx.noalias() += Wk.transpose() * Gy;
        } else {
          MapMat Gc(colbuf.data(), CKK, static_cast<Eigen::Index>(plane));
          Gc.noalias() = Wk.transpose() * Gy;
          col2im(colbuf.data(), C, H, W, K, stride, padding, Ho, Wo, gxs);
        }
      }
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1)) {
    throw DimensionError("linear shape mismatch: input " + to_string(xv.shape()) + ", weight " + to_string(wv.shape()));
  }
  const int B = xv.dim(0), In = xv.dim(1), Out = wv.dim(0);
  if (bias && (bias.value().rank() != 1 || bias.value().dim(0) != Out)) throw DimensionError("linear bias shape");
  Tensor out({B, Out});
  CMapMat Wm(wv.ptr(), Out, In);
  for (int b = 0; b < B; ++b) {
    MapVec y(out.ptr() + static_cast<std::size_t>(b) * Out, Out);
    y.noalias() = Wm * CMapVec(xv.ptr() + static_cast<std::size_t>(b) * In, In);
    if (bias) y += CMapVec(bias.value().ptr(), Out);
  }
  std::vector<Var> parents{x, weight};
  if (bias) parents.push_back(bias);
  return make_result(std::move(out), std::move(parents), [B, In, Out](Node& n) {
    CMapMat Gy(n.grad.ptr(), B, Out);
    CMapMat X(n.parents[0]->value.ptr(), B, In);
    CMapMat Wk(n.parents[1]->value.ptr(), Out, In);
    if (n.parents[0]->requires_grad) {
      MapMat Gx(n.parents[0]->grad_buffer().ptr(), B, In);
      Gx.noalias() += Gy * Wk;
    }
    if (n.parents[1]->requires_grad) {
      MapMat Gw(n.parents[1]->grad_buffer().ptr(), Out, In);
      Gw.noalias() += Gy.transpose() * X;
    }
    if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
      MapVec Gb(n.parents[2]->grad_buffer().ptr(), Out);
      Gb += Gy.colwise().sum().transpose();
    }
  });
}

Var instance_norm(const Var& x, double eps) {
  require_rank4(x.value(), "instance_norm");
  auto stats = std::make_shared<NormStats>(normalize_planes(x.value(), eps));
  Tensor out = stats->xhat;
  return make_result(std::move(out), {x}, [stats](Node& n) {
    normalize_planes_backward(n.grad, *stats, n.parents[0]->grad_buffer());
  });
}

Var adain(const Var& x, const Var& style, double eps) {
  const Tensor& xv = x.value();
  require_rank4(xv, "adain");
  const int B = xv.dim(0), C = xv.dim(1);
  const std::size_t HW = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  if (style.value().rank() != 2 || style.value().dim(0) != B || style.value().dim(1) != 2 * C) {
    throw DimensionError("adain style must be (B, 2C) = (" + std::to_string(B) + ", " + std::to_string(2 * C) +
                         "), got " + to_string(style.value().shape()));
  }
  auto stats = std::make_shared<NormStats>(normalize_planes(xv, eps));
  Tensor out(xv.shape());
  const Tensor& sv = style.value();
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const real s = sv[static_cast<std::size_t>(b) * 2 * C + c];
      const real t = sv[static_cast<std::size_t>(b) * 2 * C + C + c];
      const std::size_t p = (static_cast<std::size_t>(b) * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) out[p + i] = s * stats->xhat[p + i] + t;
    }
  }
  return make_result(std::move(out), {x, style}, [stats, B, C, HW](Node& n) {
    const Tensor& sv = n.parents[1]->value;
    if (n.parents[1]->requires_grad) {
      Tensor& gs = n.parents[1]->grad_buffer();
      for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
          const std::size_t p = (static_cast<std::size_t>(b) * C + c) * HW;
          double gscale = 0.0, gshift = 0.0;
          for (std::size_t i = 0; i < HW; ++i) {
            gscale += static_cast<double>(n.grad[p + i]) * stats->xhat[p + i];
            gshift += n.grad[p + i];
          }
          gs[static_cast<std::size_t>(b) * 2 * C + c] += static_cast<real>(gscale);
          gs[static_cast<std::size_t>(b) * 2 * C + C + c] += static_cast<real>(gshift);
        }
      }
    }
    if (n.parents[0]->requires_grad) {
      Tensor gxhat(n.grad.shape());
      for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
          const real s = sv[static_cast<std::size_t>(b) * 2 * C + c];
          const std::size_t p = (static_cast<std::size_t>(b) * C + c) * HW;
          for (std::size_t i = 0; i < HW; ++i) gxhat[p + i] = n.grad[p + i] * s;
        }
      }
      normalize_planes_backward(gxhat, *stats, n.parents[0]->grad_buffer());
    }
  });
}

Var upsample_nearest(const Var& x, int factor) {
  const Tensor& xv = x.value();
  require_rank4(xv, "upsample_nearest");
  if (factor < 1) throw DimensionError("upsample factor must be >= 1");
  if (factor == 1) return x;
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int Ho = H * factor, Wo = W * factor;
  Tensor out({B, C, Ho, Wo});
  for (int p = 0; p < B * C; ++p) {
    const real* src = xv.ptr() + static_cast<std::size_t>(p) * H * W;
    real* dst = out.ptr() + static_cast<std::size_t>(p) * Ho * Wo;
    for (int y = 0; y < Ho; ++y)
      for (int xx = 0; xx < Wo; ++xx) dst[y * Wo + xx] = src[(y / factor) * W + xx / factor];
  }
  return make_result(std::move(out), {x}, [=](Node& n) {
    Tensor& g = n.parents[0]->grad_buffer();
    for (int p = 0; p < B * C; ++p) {
      const real* src = n.grad.ptr() + static_cast<std::size_t>(p) * Ho * Wo;
      real* dst = g.ptr() + static_cast<std::size_t>(p) * H * W;
      for (int y = 0; y < Ho; ++y)
        for (int xx = 0; xx < Wo; ++xx) dst[(y / factor) * W + xx / factor] += src[y * Wo + xx];
    }
  });
}

Var avg_pool_2x2(const Var& x) {
  const Tensor& xv = x.value();
  require_rank4(xv, "avg_pool_2x2");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (H % 2 != 0 || W % 2 != 0) {
    throw DimensionError("avg_pool_2x2 requires even spatial dimensions, got " + to_string(xv.shape()));
  }
  const int Ho = H / 2, Wo = W / 2;
  Tensor out({B, C, Ho, Wo});
  for (int p = 0; p < B * C; ++p) {
    const real* src = xv.ptr() + static_cast<std::size_t>(p) * H * W;
    real* dst = out.ptr() + static_cast<std::size_t>(p) * Ho * Wo;
    for (int y = 0; y < Ho; ++y) {
      for (int xx = 0; xx < Wo; ++xx) {
        const real* r0 = src + (2 * y) * W + 2 * xx;
        const real* r1 = r0 + W;
        dst[y * Wo + xx] = ((r0[0] + r0[1]) + (r1[0] + r1[1])) * 0.25f;
      }
    }
  }
  return make_result(std::move(out), {x}, [=](Node& n) {
    Tensor& g = n.parents[0]->grad_buffer();
    for (int p = 0; p < B * C; ++p) {
      const real* src = n.grad.ptr() + static_cast<std::size_t>(p) * Ho * Wo;
      real* dst = g.ptr() + static_cast<std::size_t>(p) * H * W;
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) dst[y * W + xx] += 0.25f * src[(y / 2) * Wo + xx / 2];
    }
  });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_channels of nothing");
  if (parts.size() == 1) return parts[0];
  const Tensor& f = parts[0].value();
  require_rank4(f, "concat_channels");
  const int B = f.dim(0), H = f.dim(2), W = f.dim(3);
  int C = 0;
  std::vector<int> offsets;
  for (const auto& p : parts) {
    const Tensor& t = p.value();
    require_rank4(t, "concat_channels");
    if (t.dim(0) != B || t.dim(2) != H || t.dim(3) != W) {
      throw DimensionError("concat_channels mismatch: " + to_string(t.shape()) + " vs " + to_string(f.shape()));
    }
    offsets.push_back(C);
    C += t.dim(1);
  }
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  Tensor out({B, C, H, W});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& t = parts[k].value();
    const int Ck = t.dim(1);
    for (int b = 0; b < B; ++b) {
      std::copy_n(t.ptr() + static_cast<std::size_t>(b) * Ck * HW, Ck * HW,
                  out.ptr() + (static_cast<std::size_t>(b) * C + offsets[k]) * HW);
    }
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_result(std::move(out), std::move(parents), [offsets, B, C, HW](Node& n) {
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      if (!n.parents[k]->requires_grad) continue;
      Tensor& g = n.parents[k]->grad_buffer();
      const int Ck = n.parents[k]->value.dim(1);
      for (int b = 0; b < B; ++b) {
        const real* src = n.grad.ptr() + (static_cast<std::size_t>(b) * C + offsets[k]) * HW;
        real* dst = g.ptr() + static_cast<std::size_t>(b) * Ck * HW;
        for (std::size_t i = 0; i < Ck * HW; ++i) dst[i] += src[i];
      }
    }
  });
}

Var repeat_interleave(const Var& x, int times) {
  const Tensor& xv = x.value();
  if (times < 1) throw DimensionError("repeat_interleave count must be >= 1");
  if (times == 1) return x;
  const int B = xv.dim(0);
  const std::size_t per = xv.numel() / static_cast<std::size_t>(B);
  Shape s = xv.shape();
  s[0] = B * times;
  Tensor out(s);
  for (int b = 0; b < B; ++b)
    for (int j = 0; j < times; ++j)
      std::copy_n(xv.ptr() + b * per, per, out.ptr() + (static_cast<std::size_t>(b) * times + j) * per);
  return make_result(std::move(out), {x}, [B, times, per](Node& n) {
    Tensor& g = n.parents[0]->grad_buffer();
    for (int b = 0; b < B; ++b)
      for (int j = 0; j < times; ++j) {
        const real* src = n.grad.ptr() + (static_cast<std::size_t>(b) * times + j) * per;
        for (std::size_t i = 0; i < per; ++i) g[b * per + i] += src[i];
      }
  });
}

Var slice_batch(const Var& x, int begin, int count) {
  Tensor out = nsedit::slice_batch(x.value(), begin, count);
  const std::size_t per = x.value().numel() / static_cast<std::size_t>(x.value().dim(0));
  return make_result(std::move(out), {x}, [begin, per](Node& n) {
    Tensor& g = n.parents[0]->grad_buffer();
    real* dst = g.ptr() + static_cast<std::size_t>(begin) * per;
    for (std::size_t i = 0; i < n.grad.numel(); ++i) dst[i] += n.grad[i];
  });
}

Var pairwise_distances(const Var& rows) {
  const Tensor& xv = rows.value();
  if (xv.rank() < 1) throw DimensionError("pairwise_distances expects (N, ...)");
  const int N = xv.dim(0);
  const std::size_t D = N > 0 ? xv.numel() / static_cast<std::size_t>(N) : 0;
  Tensor out({N, N});
  for (int i = 0; i < N; ++i) {
    for (int j = i + 1; j < N; ++j) {
      const real* a = xv.ptr() + i * D;
      const real* b = xv.ptr() + j * D;
      double s = 0.0;
      for (std::size_t k = 0; k < D; ++k) {
        const double d = static_cast<double>(a[k]) - b[k];
        s += d * d;
      }
      const real dist = static_cast<real>(std::sqrt(s));
      out[static_cast<std::size_t>(i) * N + j] = dist;
      out[static_cast<std::size_t>(j) * N + i] = dist;
    }
  }
  return make_result(std::move(out), {rows}, [N, D](Node& n) {
    const Tensor& xin = n.parents[0]->value;
    Tensor& g = n.parents[0]->grad_buffer();
    for (int i = 0; i < N; ++i) {
      for (int j = i + 1; j < N; ++j) {
        const real dist = n.value[static_cast<std::size_t>(i) * N + j];
        if (!(dist > 0.0f)) continue;  // subgradient 0 at coincident samples
        const double coef =
            (static_cast<double>(n.grad[static_cast<std::size_t>(i) * N + j]) + n.grad[static_cast<std::size_t>(j) * N + i]) /
            dist;
        const real* a = xin.ptr() + i * D;
        const real* b = xin.ptr() + j * D;
        real* ga = g.ptr() + i * D;
        real* gb = g.ptr() + j * D;
        for (std::size_t k = 0; k < D; ++k) {
          const real d = static_cast<real>(coef * (static_cast<double>(a[k]) - b[k]));
          ga[k] += d;
          gb[k] -= d;
        }
      }
    }
  });
}

Var normalize_rows(const Var& d, double eps) {
  const Tensor& dv = d.value();
  if (dv.rank() != 2 || dv.dim(0) != dv.dim(1)) throw DimensionError("normalize_rows expects a square matrix");
  const int N = dv.dim(0);
  std::vector<double> denom(static_cast<std::size_t>(N));
  Tensor out(dv.shape());
  for (int i = 0; i < N; ++i) {
    double s = 0.0;
    for (int j = 0; j < N; ++j) s += dv[static_cast<std::size_t>(i) * N + j];
    denom[i] = s + eps;
    for (int j = 0; j < N; ++j)
      out[static_cast<std::size_t>(i) * N + j] = static_cast<real>(dv[static_cast<std::size_t>(i) * N + j] / denom[i]);
  }
  return make_result(std::move(out), {d}, [N, denom](Node& n) {
    const Tensor& dv = n.parents[0]->value;
    Tensor& g = n.parents[0]->grad_buffer();
    for (int i = 0; i < N; ++i) {
      double dot = 0.0;
      for (int k = 0; k < N; ++k)
        dot += static_cast<double>(n.grad[static_cast<std::size_t>(i) * N + k]) * dv[static_cast<std::size_t>(i) * N + k];
      const double q = dot / (denom[i] * denom[i]);
      for (int j = 0; j < N; ++j)
        g[static_cast<std::size_t>(i) * N + j] +=
            static_cast<real>(n.grad[static_cast<std::size_t>(i) * N + j] / denom[i] - q);
    }
  });
}

Var hinge_mean(const Var& dz, const Var& dg, double alpha) {
  const Tensor& a = dz.value();
  const Tensor& b = dg.value();
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) throw DimensionError("hinge_mean expects square matrices");
  if (a.shape() != b.shape()) {
    throw DimensionError("hinge_mean sample count mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const int N = a.dim(0);
  if (N < 2) throw ConfigError("hinge_mean requires at least two samples");
  const double norm = 1.0 / (static_cast<double>(N) * N - N);
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += std::max(0.0, alpha * a[i] - static_cast<double>(b[i]));
  return make_result(Tensor({1}, static_cast<real>(s * norm)), {dz, dg}, [alpha, norm](Node& n) {
    const Tensor& a = n.parents[0]->value;
    const Tensor& b = n.parents[1]->value;
    const double g = n.grad[0] * norm;
    Tensor ga(a.shape()), gb(b.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) {
      if (alpha * a[i] - static_cast<double>(b[i]) > 0.0) {
        ga[i] = static_cast<real>(alpha * g);
        gb[i] = static_cast<real>(-g);
      }
    }
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(ga);
    if (n.parents[1]->requires_grad) n.parents[1]->accumulate(gb);
  });
}

Var softplus_mean(const Var& x, double sign) {
  const Tensor& xv = x.value();
  const double count = static_cast<double>(xv.numel());
  double s = 0.0;
  for (real v : xv.storage()) {
    const double t = sign * v;
    s += std::max(t, 0.0) + std::log1p(std::exp(-std::fabs(t)));
  }
  return make_result(Tensor({1}, static_cast<real>(s / count)), {x}, [sign, count](Node& n) {
    const Tensor& xv = n.parents[0]->value;
    Tensor g(xv.shape());
    const double k = n.grad[0] / count;
    for (std::size_t i = 0; i < xv.numel(); ++i) {
      const double t = sign * xv[i];
      const double sig = t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
      g[i] = static_cast<real>(k * sign * sig);
    }
    n.parents[0]->accumulate(g);
  });
}

}  // namespace nsedit::ops
