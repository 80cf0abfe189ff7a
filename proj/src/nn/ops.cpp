#include "wsseg/nn/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace wsseg::nn {

namespace {

using MatrixRM =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// Unpacks one image into [Cin*kh*kw, Ho*Wo] (single group slice).
void im2col(const float* src, int cin, int h, int w, int kh, int kw,
            const ConvSpec& s, int ho, int wo, float* col) {
  const int plane = h * w;
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        float* row = col + ((static_cast<size_t>(c) * kh + ky) * kw + kx) *
                               static_cast<size_t>(ho) * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s.stride - s.pad + ky * s.dilation;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + wo, 0.0f);
            row += wo;
            continue;
          }
          const float* src_row = src + static_cast<size_t>(c) * plane + iy * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s.stride - s.pad + kx * s.dilation;
            *row++ = (ix >= 0 && ix < w) ? src_row[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* col, int cin, int h, int w, int kh, int kw,
            const ConvSpec& s, int ho, int wo, float* dst) {
  const int plane = h * w;
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const float* row = col + ((static_cast<size_t>(c) * kh + ky) * kw + kx) *
                                     static_cast<size_t>(ho) * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s.stride - s.pad + ky * s.dilation;
          if (iy < 0 || iy >= h) {
            row += wo;
            continue;
          }
          float* dst_row = dst + static_cast<size_t>(c) * plane + iy * w;
          for (int ox = 0; ox < wo; ++ox, ++row) {
            const int ix = ox * s.stride - s.pad + kx * s.dilation;
            if (ix >= 0 && ix < w) dst_row[ix] += *row;
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, const ConvSpec& spec) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.dim() != 4 || wv.dim() != 4) throw ShapeError("conv2d expects 4-d tensors");
  const int n = xv.size(0), cin = xv.size(1), h = xv.size(2), wd = xv.size(3);
  const int cout = wv.size(0), cpg = wv.size(1), kh = wv.size(2), kw = wv.size(3);
  const int g = spec.groups;
  if (cin != cpg * g) throw ShapeError("conv2d channel/group mismatch");
  if (cout % g != 0) throw ShapeError("conv2d cout not divisible by groups");
  const int ho = conv_out_size(h, kh, spec.stride, spec.pad, spec.dilation);
  const int wo = conv_out_size(wd, kw, spec.stride, spec.pad, spec.dilation);
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d output would be empty");

  const int cog = cout / g;          // out channels per group
  const int kdim = cpg * kh * kw;    // unrolled kernel size
  const int p = ho * wo;

  Tensor out({n, cout, ho, wo});
  const int nthreads = std::min(max_threads(), n > 0 ? n : 1);
  std::vector<std::vector<float>> cols(static_cast<size_t>(nthreads));
  for (auto& c : cols) c.resize(static_cast<size_t>(kdim) * p);

#pragma omp parallel for schedule(static) num_threads(nthreads)
  for (int ni = 0; ni < n; ++ni) {
#ifdef _OPENMP
    float* col = cols[static_cast<size_t>(omp_get_thread_num())].data();
#else
    float* col = cols[0].data();
#endif
    for (int gi = 0; gi < g; ++gi) {
      const float* src = xv.data() + ((static_cast<size_t>(ni) * cin) + gi * cpg) *
                                         static_cast<size_t>(h) * wd;
      im2col(src, cpg, h, wd, kh, kw, spec, ho, wo, col);
      ConstMapRM wm(wv.data() + static_cast<size_t>(gi) * cog * kdim, cog, kdim);
      ConstMapRM cm(col, kdim, p);
      MapRM om(out.data() + ((static_cast<size_t>(ni) * cout) + gi * cog) *
                                static_cast<size_t>(p),
               cog, p);
      om.noalias() = wm * cm;
    }
    if (b) {
      const float* bias = b->value.data();
      float* dst = out.data() + static_cast<size_t>(ni) * cout * p;
      for (int c = 0; c < cout; ++c) {
        const float bv = bias[c];
        for (int i = 0; i < p; ++i) dst[static_cast<size_t>(c) * p + i] += bv;
      }
    }
  }

  std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  ConvSpec sp = spec;
  Var xc = x, wc = w, bc = b;
  return make_op(std::move(out), std::move(parents), [xc, wc, bc, sp, n, cin, h, wd,
                                                      cout, cpg, kh, kw, ho, wo, g,
                                                      cog, kdim, p](Node& node) {
    const Tensor& dy = node.grad;
    const Tensor& xv = xc->value;
    const Tensor& wv = wc->value;
    const bool need_dx = xc->requires_grad;
    const bool need_dw = wc->requires_grad;
    const bool need_db = bc && bc->requires_grad;

    Tensor* dx = need_dx ? &ensure_grad(*xc) : nullptr;
    const int nthreads = std::min(max_threads(), n > 0 ? n : 1);

    // Per-thread weight/bias partials merged in thread order keep the
    // accumulation deterministic under static scheduling.
    std::vector<Tensor> dw_part, db_part;
    if (need_dw)
      dw_part.assign(static_cast<size_t>(nthreads), Tensor(wv.shape()));
    if (need_db)
      db_part.assign(static_cast<size_t>(nthreads), Tensor(bc->value.shape()));
    std::vector<std::vector<float>> cols(static_cast<size_t>(nthreads)),
        dcols(static_cast<size_t>(nthreads));
    for (auto& c : cols) c.resize(static_cast<size_t>(kdim) * p);
    for (auto& c : dcols) c.resize(static_cast<size_t>(kdim) * p);

#pragma omp parallel for schedule(static) num_threads(nthreads)
    for (int ni = 0; ni < n; ++ni) {
#ifdef _OPENMP
      const int t = omp_get_thread_num();
#else
      const int t = 0;
#endif
      float* col = cols[static_cast<size_t>(t)].data();
      float* dcol = dcols[static_cast<size_t>(t)].data();
      for (int gi = 0; gi < g; ++gi) {
        ConstMapRM dym(dy.data() + ((static_cast<size_t>(ni) * cout) + gi * cog) *
                                       static_cast<size_t>(p),
                       cog, p);
        if (need_dw) {
          const float* src = xv.data() +
                             ((static_cast<size_t>(ni) * cin) + gi * cpg) *
                                 static_cast<size_t>(h) * wd;
          im2col(src, cpg, h, wd, kh, kw, sp, ho, wo, col);
          ConstMapRM cm(col, kdim, p);
          MapRM dwm(dw_part[static_cast<size_t>(t)].data() +
                        static_cast<size_t>(gi) * cog * kdim,
                    cog, kdim);
          dwm.noalias() += dym * cm.transpose();
        }
        if (need_dx) {
          ConstMapRM wm(wv.data() + static_cast<size_t>(gi) * cog * kdim, cog, kdim);
          MapRM dcm(dcol, kdim, p);
          dcm.noalias() = wm.transpose() * dym;
          float* dst = dx->data() + ((static_cast<size_t>(ni) * cin) + gi * cpg) *
                                        static_cast<size_t>(h) * wd;
          col2im(dcol, cpg, h, wd, kh, kw, sp, ho, wo, dst);
        }
      }
      if (need_db) {
        float* dbp = db_part[static_cast<size_t>(t)].data();
        const float* dyp = dy.data() + static_cast<size_t>(ni) * cout * p;
        for (int c = 0; c < cout; ++c) {
          float acc = 0.0f;
          for (int i = 0; i < p; ++i) acc += dyp[static_cast<size_t>(c) * p + i];
          dbp[c] += acc;
        }
      }
    }
    if (need_dw) {
      Tensor& dw = ensure_grad(*wc);
      for (const auto& part : dw_part)
        for (int64_t i = 0; i < dw.numel(); ++i) dw[i] += part[i];
    }
    if (need_db) {
      Tensor& db = ensure_grad(*bc);
      for (const auto& part : db_part)
        for (int64_t i = 0; i < db.numel(); ++i) db[i] += part[i];
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.dim() != 2 || wv.dim() != 2) throw ShapeError("linear expects 2-d tensors");
  const int n = xv.size(0), f = xv.size(1), k = wv.size(0);
  if (wv.size(1) != f) throw ShapeError("linear weight shape mismatch");

  Tensor out({n, k});
  ConstMapRM xm(xv.data(), n, f), wm(wv.data(), k, f);
  MapRM om(out.data(), n, k);
  om.noalias() = xm * wm.transpose();
  if (b) {
    const float* bias = b->value.data();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) out.at(i, j) += bias[j];
  }

  std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  Var xc = x, wc = w, bc = b;
  return make_op(std::move(out), std::move(parents), [xc, wc, bc, n, f, k](Node& node) {
    ConstMapRM dym(node.grad.data(), n, k);
    if (xc->requires_grad) {
      ConstMapRM wm(wc->value.data(), k, f);
      MapRM dxm(ensure_grad(*xc).data(), n, f);
      dxm.noalias() += dym * wm;
    }
    if (wc->requires_grad) {
      ConstMapRM xm(xc->value.data(), n, f);
      MapRM dwm(ensure_grad(*wc).data(), k, f);
      dwm.noalias() += dym.transpose() * xm;
    }
    if (bc && bc->requires_grad) {
      Tensor& db = ensure_grad(*bc);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) db[j] += node.grad.at(i, j);
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(0.0f, out[i]);
  Var xc = x;
  return make_op(std::move(out), {x}, [xc](Node& node) {
    if (!xc->requires_grad) return;
    Tensor& dx = ensure_grad(*xc);
    const Tensor& xv = xc->value;
    for (int64_t i = 0; i < dx.numel(); ++i)
      if (xv[i] > 0.0f) dx[i] += node.grad[i];
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x->value;
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = 1.0f / (1.0f + std::exp(-out[i]));
  Var xc = x;
  return make_op(std::move(out), {x}, [xc](Node& node) {
    if (!xc->requires_grad) return;
    Tensor& dx = ensure_grad(*xc);
    for (int64_t i = 0; i < dx.numel(); ++i) {
      const float y = node.value[i];
      dx[i] += node.grad[i] * y * (1.0f - y);
    }
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a->value, b->value, "add");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  Var ac = a, bc = b;
  return make_op(std::move(out), {a, b}, [ac, bc](Node& node) {
    if (ac->requires_grad) accumulate(*ac, node.grad);
    if (bc->requires_grad) accumulate(*bc, node.grad);
  });
}

Var mul_mask(const Var& x, Tensor mask) {
  check_same_shape(x->value, mask, "mul_mask");
  Tensor out = x->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  Var xc = x;
  auto m = std::make_shared<Tensor>(std::move(mask));
  return make_op(std::move(out), {x}, [xc, m](Node& node) {
    if (!xc->requires_grad) return;
    Tensor& dx = ensure_grad(*xc);
    for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += node.grad[i] * (*m)[i];
  });
}

Var scale_channels(const Var& x, const Var& s) {
  const Tensor& xv = x->value;
  const Tensor& sv = s->value;
  if (xv.dim() != 4 || sv.dim() != 2 || sv.size(0) != xv.size(0) ||
      sv.size(1) != xv.size(1))
    throw ShapeError("scale_channels expects x[N,C,H,W], s[N,C]");
  const int n = xv.size(0), c = xv.size(1);
  const int plane = xv.size(2) * xv.size(3);
  Tensor out = xv;
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const float f = sv.at(ni, ci);
      float* dst = out.data() + (static_cast<size_t>(ni) * c + ci) * plane;
      for (int i = 0; i < plane; ++i) dst[i] *= f;
    }
  Var xc = x, sc = s;
  return make_op(std::move(out), {x, s}, [xc, sc, n, c, plane](Node& node) {
    const Tensor& dy = node.grad;
    if (xc->requires_grad) {
      Tensor& dx = ensure_grad(*xc);
      for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
          const float f = sc->value.at(ni, ci);
          const size_t off = (static_cast<size_t>(ni) * c + ci) * plane;
          for (int i = 0; i < plane; ++i) dx[off + i] += dy[off + i] * f;
        }
    }
    if (sc->requires_grad) {
      Tensor& ds = ensure_grad(*sc);
      for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
          const size_t off = (static_cast<size_t>(ni) * c + ci) * plane;
          float acc = 0.0f;
          for (int i = 0; i < plane; ++i)
            acc += dy[off + i] * xc->value[off + i];
          ds.at(ni, ci) += acc;
        }
    }
  });
}

Var max_pool2d(const Var& x, int k, int stride, int pad) {
  const Tensor& xv = x->value;
  if (xv.dim() != 4) throw ShapeError("max_pool2d expects 4-d input");
  const int n = xv.size(0), c = xv.size(1), h = xv.size(2), w = xv.size(3);
  const int ho = conv_out_size(h, k, stride, pad, 1);
  const int wo = conv_out_size(w, k, stride, pad, 1);
  if (ho <= 0 || wo <= 0) throw ShapeError("max_pool2d output would be empty");

  Tensor out({n, c, ho, wo});
  auto argmax = std::make_shared<std::vector<int>>(
      static_cast<size_t>(n) * c * ho * wo);
  size_t oi = 0;
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const float* plane =
          xv.data() + (static_cast<size_t>(ni) * c + ci) * static_cast<size_t>(h) * w;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox, ++oi) {
          float best = -std::numeric_limits<float>::infinity();
          int best_idx = -1;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= w) continue;
              const float v = plane[iy * w + ix];
              if (v > best) {
                best = v;
                best_idx = iy * w + ix;
              }
            }
          }
          out[static_cast<int64_t>(oi)] = best;
          (*argmax)[oi] = best_idx;
        }
    }

  Var xc = x;
  return make_op(std::move(out), {x}, [xc, argmax, n, c, h, w, ho, wo](Node& node) {
    if (!xc->requires_grad) return;
    Tensor& dx = ensure_grad(*xc);
    size_t oi = 0;
    for (int ni = 0; ni < n; ++ni)
      for (int ci = 0; ci < c; ++ci) {
        float* plane = dx.data() +
                       (static_cast<size_t>(ni) * c + ci) * static_cast<size_t>(h) * w;
        for (int i = 0; i < ho * wo; ++i, ++oi) {
          const int idx = (*argmax)[oi];
          if (idx >= 0) plane[idx] += node.grad[static_cast<int64_t>(oi)];
        }
      }
  });
}

Var global_avg_pool(const Var& x) {
  const Tensor& xv = x->value;
  if (xv.dim() != 4) throw ShapeError("global_avg_pool expects 4-d input");
  const int n = xv.size(0), c = xv.size(1);
  const int plane = xv.size(2) * xv.size(3);
  Tensor out({n, c});
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const float* src = xv.data() + (static_cast<size_t>(ni) * c + ci) * plane;
      double acc = 0.0;
      for (int i = 0; i < plane; ++i) acc += src[i];
      out.at(ni, ci) = static_cast<float>(acc / plane);
    }
  Var xc = x;
  return make_op(std::move(out), {x}, [xc, n, c, plane](Node& node) {
    if (!xc->requires_grad) return;
    Tensor& dx = ensure_grad(*xc);
    for (int ni = 0; ni < n; ++ni)
      for (int ci = 0; ci < c; ++ci) {
        const float g = node.grad.at(ni, ci) / static_cast<float>(plane);
        float* dst = dx.data() + (static_cast<size_t>(ni) * c + ci) * plane;
        for (int i = 0; i < plane; ++i) dst[i] += g;
      }
  });
}

namespace {

// One axis of a half-pixel bilinear lookup: out position o reads input
// indices i0/i1 with weight w1 on i1.
struct BilinearTap {
  int i0, i1;
  float w1;
};

BilinearTap bilinear_tap(int o, int out_size, int in_size) {
  const float scale = static_cast<float>(in_size) / static_cast<float>(out_size);
  float s = (static_cast<float>(o) + 0.5f) * scale - 0.5f;
  s = std::clamp(s, 0.0f, static_cast<float>(in_size - 1));
  BilinearTap t{};
  t.i0 = static_cast<int>(std::floor(s));
  t.i1 = std::min(t.i0 + 1, in_size - 1);
  t.w1 = s - static_cast<float>(t.i0);
  return t;
}

}  // namespace

Var upsample_bilinear(const Var& x, int out_h, int out_w) {
  const Tensor& xv = x->value;
  if (xv.dim() != 4) throw ShapeError("upsample_bilinear expects 4-d input");
  const int n = xv.size(0), c = xv.size(1), h = xv.size(2), w = xv.size(3);

  std::vector<BilinearTap> ytap(static_cast<size_t>(out_h)),
      xtap(static_cast<size_t>(out_w));
  for (int oy = 0; oy < out_h; ++oy) ytap[static_cast<size_t>(oy)] = bilinear_tap(oy, out_h, h);
  for (int ox = 0; ox < out_w; ++ox) xtap[static_cast<size_t>(ox)] = bilinear_tap(ox, out_w, w);

  Tensor out({n, c, out_h, out_w});
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const float* src =
          xv.data() + (static_cast<size_t>(ni) * c + ci) * static_cast<size_t>(h) * w;
      float* dst = out.data() + (static_cast<size_t>(ni) * c + ci) *
                                    static_cast<size_t>(out_h) * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const auto& ty = ytap[static_cast<size_t>(oy)];
        for (int ox = 0; ox < out_w; ++ox) {
          const auto& tx = xtap[static_cast<size_t>(ox)];
          const float top = src[ty.i0 * w + tx.i0] * (1.0f - tx.w1) +
                            src[ty.i0 * w + tx.i1] * tx.w1;
          const float bot = src[ty.i1 * w + tx.i0] * (1.0f - tx.w1) +
                            src[ty.i1 * w + tx.i1] * tx.w1;
          dst[oy * out_w + ox] = top * (1.0f - ty.w1) + bot * ty.w1;
        }
      }
    }

  auto yt = std::make_shared<std::vector<BilinearTap>>(std::move(ytap));
  auto xt = std::make_shared<std::vector<BilinearTap>>(std::move(xtap));
  Var xc = x;
  return make_op(std::move(out), {x}, [xc, yt, xt, n, c, h, w, out_h, out_w](Node& node) {
    if (!xc->requires_grad) return;
    Tensor& dx = ensure_grad(*xc);
    for (int ni = 0; ni < n; ++ni)
      for (int ci = 0; ci < c; ++ci) {
        float* dst = dx.data() +
                     (static_cast<size_t>(ni) * c + ci) * static_cast<size_t>(h) * w;
        const float* g = node.grad.data() + (static_cast<size_t>(ni) * c + ci) *
                                                static_cast<size_t>(out_h) * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          const auto& ty = (*yt)[static_cast<size_t>(oy)];
          for (int ox = 0; ox < out_w; ++ox) {
            const auto& tx = (*xt)[static_cast<size_t>(ox)];
            const float gv = g[oy * out_w + ox];
            dst[ty.i0 * w + tx.i0] += gv * (1.0f - ty.w1) * (1.0f - tx.w1);
            dst[ty.i0 * w + tx.i1] += gv * (1.0f - ty.w1) * tx.w1;
            dst[ty.i1 * w + tx.i0] += gv * ty.w1 * (1.0f - tx.w1);
            dst[ty.i1 * w + tx.i1] += gv * ty.w1 * tx.w1;
          }
        }
      }
  });
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: empty input list");
  const Tensor& first = xs[0]->value;
  if (first.dim() != 4) throw ShapeError("concat_channels expects 4-d inputs");
  const int n = first.size(0), h = first.size(2), w = first.size(3);
  int ctotal = 0;
  for (const auto& v : xs) {
    const Tensor& t = v->value;
    if (t.size(0) != n || t.size(2) != h || t.size(3) != w)
      throw ShapeError("concat_channels: spatial/batch mismatch");
    ctotal += t.size(1);
  }
  const int plane = h * w;
  Tensor out({n, ctotal, h, w});
  for (int ni = 0; ni < n; ++ni) {
    int coff = 0;
    for (const auto& v : xs) {
      const Tensor& t = v->value;
      const int ci = t.size(1);
      std::copy(t.data() + static_cast<size_t>(ni) * ci * plane,
                t.data() + static_cast<size_t>(ni + 1) * ci * plane,
                out.data() + (static_cast<size_t>(ni) * ctotal + coff) * plane);
      coff += ci;
    }
  }
  auto parts = xs;
  return make_op(std::move(out), xs, [parts, n, ctotal, plane](Node& node) {
    for (int ni = 0; ni < n; ++ni) {
      int coff = 0;
      for (const auto& v : parts) {
        const int ci = v->value.size(1);
        if (v->requires_grad) {
          Tensor& dx = ensure_grad(*v);
          const float* src =
              node.grad.data() + (static_cast<size_t>(ni) * ctotal + coff) * plane;
          float* dst = dx.data() + static_cast<size_t>(ni) * ci * plane;
          for (int64_t i = 0; i < static_cast<int64_t>(ci) * plane; ++i)
            dst[i] += src[i];
        }
        coff += ci;
      }
    }
  });
}

Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta,
                 Tensor& running_mean, Tensor& running_var, bool training,
                 float momentum, float eps) {
  const Tensor& xv = x->value;
  if (xv.dim() != 4) throw ShapeError("batch_norm2d expects 4-d input");
  const int n = xv.size(0), c = xv.size(1), h = xv.size(2), w = xv.size(3);
  const int64_t m = static_cast<int64_t>(n) * h * w;
  const int plane = h * w;

  Tensor mean({c}), var({c});
  if (training) {
    for (int ci = 0; ci < c; ++ci) {
      double acc = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const float* src =
            xv.data() + (static_cast<size_t>(ni) * c + ci) * plane;
        for (int i = 0; i < plane; ++i) acc += src[i];
      }
      mean[ci] = static_cast<float>(acc / static_cast<double>(m));
    }
    for (int ci = 0; ci < c; ++ci) {
      double acc = 0.0;
      const double mu = mean[ci];
      for (int ni = 0; ni < n; ++ni) {
        const float* src =
            xv.data() + (static_cast<size_t>(ni) * c + ci) * plane;
        for (int i = 0; i < plane; ++i) {
          const double d = src[i] - mu;
          acc += d * d;
        }
      }
      var[ci] = static_cast<float>(acc / static_cast<double>(m));
    }
    for (int ci = 0; ci < c; ++ci) {
      running_mean[ci] = (1.0f - momentum) * running_mean[ci] + momentum * mean[ci];
      running_var[ci] = (1.0f - momentum) * running_var[ci] + momentum * var[ci];
    }
  } else {
    mean = running_mean;
    var = running_var;
  }

  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const float inv = 1.0f / std::sqrt(var[ci] + eps);
      const float mu = mean[ci];
      const float gm = gamma->value[ci];
      const float bt = beta->value[ci];
      const size_t off = (static_cast<size_t>(ni) * c + ci) * plane;
      for (int i = 0; i < plane; ++i) {
        const float xn = (xv[off + i] - mu) * inv;
        xhat[off + i] = xn;
        out[off + i] = gm * xn + bt;
      }
    }

  auto xhat_p = std::make_shared<Tensor>(std::move(xhat));
  auto var_p = std::make_shared<Tensor>(var);
  Var xc = x, gc = gamma, bc = beta;
  return make_op(
      std::move(out), {x, gamma, beta},
      [xc, gc, bc, xhat_p, var_p, training, eps, n, c, plane, m](Node& node) {
        const Tensor& dy = node.grad;
        // dgamma / dbeta
        Tensor dg({c}), db({c});
        for (int ci = 0; ci < c; ++ci) {
          double ag = 0.0, ab = 0.0;
          for (int ni = 0; ni < n; ++ni) {
            const size_t off = (static_cast<size_t>(ni) * c + ci) * plane;
            for (int i = 0; i < plane; ++i) {
              ag += dy[off + i] * (*xhat_p)[off + i];
              ab += dy[off + i];
            }
          }
          dg[ci] = static_cast<float>(ag);
          db[ci] = static_cast<float>(ab);
        }
        if (gc->requires_grad) accumulate(*gc, dg);
        if (bc->requires_grad) accumulate(*bc, db);
        if (!xc->requires_grad) return;

        Tensor& dx = ensure_grad(*xc);
        for (int ci = 0; ci < c; ++ci) {
          const float inv = 1.0f / std::sqrt((*var_p)[ci] + eps);
          const float gm = gc->value[ci];
          if (training) {
            const float mean_dy = db[ci] / static_cast<float>(m);
            const float mean_dyxh = dg[ci] / static_cast<float>(m);
            for (int ni = 0; ni < n; ++ni) {
              const size_t off = (static_cast<size_t>(ni) * c + ci) * plane;
              for (int i = 0; i < plane; ++i)
                dx[off + i] += gm * inv *
                               (dy[off + i] - mean_dy -
                                (*xhat_p)[off + i] * mean_dyxh);
            }
          } else {
            for (int ni = 0; ni < n; ++ni) {
              const size_t off = (static_cast<size_t>(ni) * c + ci) * plane;
              for (int i = 0; i < plane; ++i) dx[off + i] += gm * inv * dy[off + i];
            }
          }
        }
      });
}

}  // namespace wsseg::nn
