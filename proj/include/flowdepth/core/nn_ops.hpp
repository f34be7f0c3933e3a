#pragma once

#include "flowdepth/core/autodiff.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace flowdepth::ad {

// ---- convolution ----
// x [Ci,H,W], w [Co,Ci,kh,kw], b [Co]; zero padding. Output element order is
// fixed regardless of thread count, so results are bitwise reproducible.
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride = 1,
                  int pad = -1, int dil = 1) {
  const int Ci = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
  const int Co = w->val.dim(0), kh = w->val.dim(2), kw = w->val.dim(3);
  if (w->val.dim(1) != Ci) throw std::invalid_argument("conv2d: channel mismatch");
  if (pad < 0) pad = dil * (kh / 2);
  const int Ho = (H + 2 * pad - (dil * (kh - 1) + 1)) / stride + 1;
  const int Wo = (W + 2 * pad - (dil * (kw - 1) + 1)) / stride + 1;
  Tensor out({Co, Ho, Wo});
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int co = 0; co < Co; ++co) {
    for (int yo = 0; yo < Ho; ++yo)
      for (int xo = 0; xo < Wo; ++xo) {
        double acc = b->val[co];
        for (int ci = 0; ci < Ci; ++ci)
          for (int ky = 0; ky < kh; ++ky) {
            const int yi = yo * stride + ky * dil - pad;
            if (yi < 0 || yi >= H) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int xi = xo * stride + kx * dil - pad;
              if (xi < 0 || xi >= W) continue;
              acc += x->val.at(ci, yi, xi) * w->val.at(co, ci, ky, kx);
            }
          }
        out.at(co, yo, xo) = acc;
      }
  }
  const int P = pad, S = stride, D = dil;
  return make_op(std::move(out), {x, w, b}, [=](Node& self) {
    const Tensor& go = self.grad;
    if (x->requires_grad) {
      Tensor& gx = x->g();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
      for (int ci = 0; ci < Ci; ++ci)
        for (int yi = 0; yi < H; ++yi)
          for (int xi = 0; xi < W; ++xi) {
            double acc = 0;
            for (int co = 0; co < Co; ++co)
              for (int ky = 0; ky < kh; ++ky) {
                const int ynum = yi + P - ky * D;
                if (ynum % S != 0) continue;
                const int yo = ynum / S;
                if (yo < 0 || yo >= Ho) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int xnum = xi + P - kx * D;
                  if (xnum % S != 0) continue;
                  const int xo = xnum / S;
                  if (xo < 0 || xo >= Wo) continue;
                  acc += go.at(co, yo, xo) * w->val.at(co, ci, ky, kx);
                }
              }
            gx.at(ci, yi, xi) += acc;
          }
    }
    if (w->requires_grad) {
      Tensor& gw = w->g();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
      for (int co = 0; co < Co; ++co)
        for (int ci = 0; ci < Ci; ++ci)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              double acc = 0;
              for (int yo = 0; yo < Ho; ++yo) {
                const int yi = yo * S + ky * D - P;
                if (yi < 0 || yi >= H) continue;
                for (int xo = 0; xo < Wo; ++xo) {
                  const int xi = xo * S + kx * D - P;
                  if (xi < 0 || xi >= W) continue;
                  acc += go.at(co, yo, xo) * x->val.at(ci, yi, xi);
                }
              }
              gw.at(co, ci, ky, kx) += acc;
            }
    }
    if (b->requires_grad) {
      Tensor& gb = b->g();
      for (int co = 0; co < Co; ++co) {
        double acc = 0;
        for (int yo = 0; yo < Ho; ++yo)
          for (int xo = 0; xo < Wo; ++xo) acc += go.at(co, yo, xo);
        gb[co] += acc;
      }
    }
  });
}

// linear layer: x [n], w [m,n], b [m] -> [m]
inline Var linear(const Var& x, const Var& w, const Var& b) {
  const int n = x->val.dim(0), m = w->val.dim(0);
  Tensor out({m});
  for (int i = 0; i < m; ++i) {
    double acc = b->val[i];
    for (int j = 0; j < n; ++j) acc += w->val[i * n + j] * x->val[j];
    out[i] = acc;
  }
  return make_op(std::move(out), {x, w, b}, [=](Node& self) {
    for (int i = 0; i < m; ++i) {
      const double g = self.grad[i];
      if (x->requires_grad) {
        Tensor& gx = x->g();
        for (int j = 0; j < n; ++j) gx[j] += g * w->val[i * n + j];
      }
      if (w->requires_grad) {
        Tensor& gw = w->g();
        for (int j = 0; j < n; ++j) gw[i * n + j] += g * x->val[j];
      }
      if (b->requires_grad) b->g()[i] += g;
    }
  });
}

// ---- padding / resampling ----

inline Var pad_reflect(const Var& x, int p) {
  const int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
  auto ry = [&](int y) { return y < 0 ? -y : (y >= H ? 2 * H - 2 - y : y); };
  auto rx = [&](int xx) { return xx < 0 ? -xx : (xx >= W ? 2 * W - 2 - xx : xx); };
  Tensor out({C, H + 2 * p, W + 2 * p});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H + 2 * p; ++y)
      for (int xx = 0; xx < W + 2 * p; ++xx)
        out.at(c, y, xx) = x->val.at(c, ry(y - p), rx(xx - p));
  return make_op(std::move(out), {x}, [=](Node& self) {
    if (!x->requires_grad) return;
    Tensor& gx = x->g();
    auto ry2 = [&](int y) { return y < 0 ? -y : (y >= H ? 2 * H - 2 - y : y); };
    auto rx2 = [&](int xx) { return xx < 0 ? -xx : (xx >= W ? 2 * W - 2 - xx : xx); };
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H + 2 * p; ++y)
        for (int xx = 0; xx < W + 2 * p; ++xx)
          gx.at(c, ry2(y - p), rx2(xx - p)) += self.grad.at(c, y, xx);
  });
}

inline Var avgpool2(const Var& x) {
  const int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
  const int Ho = H / 2, Wo = W / 2;
  Tensor out({C, Ho, Wo});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < Ho; ++y)
      for (int xx = 0; xx < Wo; ++xx)
        out.at(c, y, xx) = 0.25 * (x->val.at(c, 2 * y, 2 * xx) + x->val.at(c, 2 * y, 2 * xx + 1) +
                                   x->val.at(c, 2 * y + 1, 2 * xx) + x->val.at(c, 2 * y + 1, 2 * xx + 1));
  return make_op(std::move(out), {x}, [=](Node& self) {
    if (!x->requires_grad) return;
    Tensor& gx = x->g();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < Ho; ++y)
        for (int xx = 0; xx < Wo; ++xx) {
          const double g = 0.25 * self.grad.at(c, y, xx);
          gx.at(c, 2 * y, 2 * xx) += g;
          gx.at(c, 2 * y, 2 * xx + 1) += g;
          gx.at(c, 2 * y + 1, 2 * xx) += g;
          gx.at(c, 2 * y + 1, 2 * xx + 1) += g;
        }
  });
}

// nearest-neighbour resize to (Ho,Wo)
inline Var upsample_nearest(const Var& x, int Ho, int Wo) {
  const int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
  Tensor out({C, Ho, Wo});
  std::vector<int> my(Ho), mx(Wo);
  for (int y = 0; y < Ho; ++y) my[y] = std::min(H - 1, y * H / Ho);
  for (int xx = 0; xx < Wo; ++xx) mx[xx] = std::min(W - 1, xx * W / Wo);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < Ho; ++y)
      for (int xx = 0; xx < Wo; ++xx) out.at(c, y, xx) = x->val.at(c, my[y], mx[xx]);
  return make_op(std::move(out), {x}, [=](Node& self) {
    if (!x->requires_grad) return;
    Tensor& gx = x->g();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < Ho; ++y)
        for (int xx = 0; xx < Wo; ++xx)
          gx.at(c, my[y], mx[xx]) += self.grad.at(c, y, xx);
  });
}

// finite differences along x / y (for smoothness terms)
inline Var grad_x(const Var& t) {
  const int C = t->val.dim(0), H = t->val.dim(1), W = t->val.dim(2);
  Tensor out({C, H, W - 1});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W - 1; ++x)
        out.at(c, y, x) = t->val.at(c, y, x + 1) - t->val.at(c, y, x);
  return make_op(std::move(out), {t}, [=](Node& self) {
    if (!t->requires_grad) return;
    Tensor& g = t->g();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W - 1; ++x) {
          g.at(c, y, x + 1) += self.grad.at(c, y, x);
          g.at(c, y, x) -= self.grad.at(c, y, x);
        }
  });
}

inline Var grad_y(const Var& t) {
  const int C = t->val.dim(0), H = t->val.dim(1), W = t->val.dim(2);
  Tensor out({C, H - 1, W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H - 1; ++y)
      for (int x = 0; x < W; ++x)
        out.at(c, y, x) = t->val.at(c, y + 1, x) - t->val.at(c, y, x);
  return make_op(std::move(out), {t}, [=](Node& self) {
    if (!t->requires_grad) return;
    Tensor& g = t->g();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H - 1; ++y)
        for (int x = 0; x < W; ++x) {
          g.at(c, y + 1, x) += self.grad.at(c, y, x);
          g.at(c, y, x) -= self.grad.at(c, y, x);
        }
  });
}

// ---- backward (bilinear) warping ----
// dst(x) = bilinear sample of src at x + flow(x). valid = all four corners
// inside the image; invalid destination pixels are 0 and receive no gradient.
struct SampleResult {
  Var image;
  Mask valid;
};

inline SampleResult grid_sample(const Var& src, const Var& flow) {
  const int C = src->val.dim(0), H = src->val.dim(1), W = src->val.dim(2);
  if (flow->val.dim(0) != 2 || flow->val.dim(1) != H || flow->val.dim(2) != W)
    throw std::invalid_argument("grid_sample: flow shape mismatch");
  Tensor out({C, H, W});
  Mask valid({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double sx = x + flow->val.at(0, y, x);
      const double sy = y + flow->val.at(1, y, x);
      // exact border coordinates count as valid
      if (!(sx >= 0 && sx <= W - 1 && sy >= 0 && sy <= H - 1)) continue;
      valid.at(y, x) = 1;
      const int xa = std::max(0, std::min(static_cast<int>(std::floor(sx)), W - 2));
      const int ya = std::max(0, std::min(static_cast<int>(std::floor(sy)), H - 2));
      const double fx = sx - xa, fy = sy - ya;
      for (int c = 0; c < C; ++c) {
        const double v00 = src->val.at(c, ya, xa), v01 = src->val.at(c, ya, xa + 1);
        const double v10 = src->val.at(c, ya + 1, xa), v11 = src->val.at(c, ya + 1, xa + 1);
        out.at(c, y, x) = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                          fy * ((1 - fx) * v10 + fx * v11);
      }
    }
  Mask valid_copy = valid;
  Var image = make_op(std::move(out), {src, flow}, [=](Node& self) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        if (!valid_copy.at(y, x)) continue;
        const double sx = x + flow->val.at(0, y, x);
        const double sy = y + flow->val.at(1, y, x);
        const int xa = std::max(0, std::min(static_cast<int>(std::floor(sx)), W - 2));
        const int ya = std::max(0, std::min(static_cast<int>(std::floor(sy)), H - 2));
        const double fx = sx - xa, fy = sy - ya;
        double du = 0, dv = 0;
        for (int c = 0; c < C; ++c) {
          const double g = self.grad.at(c, y, x);
          if (g == 0) continue;
          const double v00 = src->val.at(c, ya, xa), v01 = src->val.at(c, ya, xa + 1);
          const double v10 = src->val.at(c, ya + 1, xa), v11 = src->val.at(c, ya + 1, xa + 1);
          if (src->requires_grad) {
            Tensor& gs = src->g();
            gs.at(c, ya, xa) += g * (1 - fy) * (1 - fx);
            gs.at(c, ya, xa + 1) += g * (1 - fy) * fx;
            gs.at(c, ya + 1, xa) += g * fy * (1 - fx);
            gs.at(c, ya + 1, xa + 1) += g * fy * fx;
          }
          du += g * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
          dv += g * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
        }
        if (flow->requires_grad) {
          Tensor& gf = flow->g();
          gf.at(0, y, x) += du;
          gf.at(1, y, x) += dv;
        }
      }
  });
  return {image, valid};
}

// ---- softmax splatting (forward warping) ----
// Each source pixel scatters its value to the four neighbours of x+flow(x)
// with bilinear weights scaled by exp(importance); the destination divides by
// the accumulated weight. coverage is the raw bilinear weight sum, used for
// hole detection.
struct SplatResult {
  Var image;
  Tensor coverage;  // [H,W]
  Mask holes;       // coverage < eps_cov
};

inline SplatResult softmax_splat(const Var& src, const Var& flow,
                                 const Var& importance, double eps_cov = 1e-3) {
  const int C = src->val.dim(0), H = src->val.dim(1), W = src->val.dim(2);
  check_same_shape(flow->val, Tensor({2, H, W}), "softmax_splat flow");
  if (importance->val.shape != std::vector<int>{H, W})
    throw std::invalid_argument("softmax_splat: importance must be [H,W]");
  // shift importance by its max; the output ratio is invariant to the shift
  const double mshift = importance->val.max();

  Tensor num({C, H, W}), den({H, W}), cov({H, W});
  auto scatter = [&](auto&& fn) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double tx = x + flow->val.at(0, y, x);
        const double ty = y + flow->val.at(1, y, x);
        const int x0 = static_cast<int>(std::floor(tx));
        const int y0 = static_cast<int>(std::floor(ty));
        const double fx = tx - x0, fy = ty - y0;
        const double e = std::exp(importance->val.at(y, x) - mshift);
        const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy),
                               (1 - fx) * fy, fx * fy};
        const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
        const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
        for (int k = 0; k < 4; ++k) {
          if (xs[k] < 0 || xs[k] >= W || ys[k] < 0 || ys[k] >= H) continue;
          fn(y, x, ys[k], xs[k], wts[k], e, k, fx, fy);
        }
      }
  };
  scatter([&](int sy, int sx, int dy, int dx, double w, double e, int, double, double) {
    den.at(dy, dx) += w * e;
    cov.at(dy, dx) += w;
    for (int c = 0; c < C; ++c) num.at(c, dy, dx) += w * e * src->val.at(c, sy, sx);
  });
  Tensor out({C, H, W});
  Mask holes({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (cov.at(y, x) < eps_cov) holes.at(y, x) = 1;
      const double d = den.at(y, x);
      if (d > 0)
        for (int c = 0; c < C; ++c) out.at(c, y, x) = num.at(c, y, x) / d;
    }
  Tensor num_c = num, den_c = den;
  Var image = make_op(std::move(out), {src, flow, importance}, [=](Node& self) {
    // out[c,p] = N[c,p] / D[p]. Walk the same scatter pattern; each source
    // contribution (w*e, value v) adds to N and D, so
    //   d out/d contrib_w_e = (v - out) / D,  d out/d v = w*e / D.
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double tx = x + flow->val.at(0, y, x);
        const double ty = y + flow->val.at(1, y, x);
        const int x0 = static_cast<int>(std::floor(tx));
        const int y0 = static_cast<int>(std::floor(ty));
        const double fx = tx - x0, fy = ty - y0;
        const double e = std::exp(importance->val.at(y, x) - mshift);
        const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy),
                               (1 - fx) * fy, fx * fy};
        // d w / d (fx, fy)
        const double dwdfx[4] = {-(1 - fy), (1 - fy), -fy, fy};
        const double dwdfy[4] = {-(1 - fx), -fx, (1 - fx), fx};
        const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
        const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
        double dLdfx = 0, dLdfy = 0, dLdm = 0;
        for (int k = 0; k < 4; ++k) {
          const int dx = xs[k], dy = ys[k];
          if (dx < 0 || dx >= W || dy < 0 || dy >= H) continue;
          const double D = den_c.at(dy, dx);
          if (D <= 0) continue;
          // A = dL/d(contribution weight w*e) = sum_c g*(v_c - out_c)/D
          double A = 0;
          for (int c = 0; c < C; ++c) {
            const double g = self.grad.at(c, dy, dx);
            if (g == 0) continue;
            const double outv = num_c.at(c, dy, dx) / D;
            A += g * (src->val.at(c, y, x) - outv) / D;
            if (src->requires_grad) src->g().at(c, y, x) += g * wts[k] * e / D;
          }
          dLdfx += A * e * dwdfx[k];
          dLdfy += A * e * dwdfy[k];
          dLdm += A * wts[k] * e;
        }
        if (flow->requires_grad) {
          flow->g().at(0, y, x) += dLdfx;
          flow->g().at(1, y, x) += dLdfy;
        }
        if (importance->requires_grad) importance->g().at(y, x) += dLdm;
      }
  });
  return {image, cov, holes};
}

// ---- local correlation (cost features for the flow net) ----
// out[(2r+1)^2, H, W]; channel (dy+r)*(2r+1)+(dx+r) holds
// mean_c f1[c,y,x] * f2[c,y+dy,x+dx], zero outside bounds.
inline Var correlation(const Var& f1, const Var& f2, int r) {
  const int C = f1->val.dim(0), H = f1->val.dim(1), W = f1->val.dim(2);
  check_same_shape(f1->val, f2->val, "correlation");
  const int D = 2 * r + 1;
  Tensor out({D * D, H, W});
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int o = 0; o < D * D; ++o) {
    const int dy = o / D - r, dx = o % D - r;
    for (int y = 0; y < H; ++y) {
      const int y2 = y + dy;
      if (y2 < 0 || y2 >= H) continue;
      for (int x = 0; x < W; ++x) {
        const int x2 = x + dx;
        if (x2 < 0 || x2 >= W) continue;
        double acc = 0;
        for (int c = 0; c < C; ++c) acc += f1->val.at(c, y, x) * f2->val.at(c, y2, x2);
        out.at(o, y, x) = acc / C;
      }
    }
  }
  return make_op(std::move(out), {f1, f2}, [=](Node& self) {
    for (int o = 0; o < D * D; ++o) {
      const int dy = o / D - r, dx = o % D - r;
      for (int y = 0; y < H; ++y) {
        const int y2 = y + dy;
        if (y2 < 0 || y2 >= H) continue;
        for (int x = 0; x < W; ++x) {
          const int x2 = x + dx;
          if (x2 < 0 || x2 >= W) continue;
          const double g = self.grad.at(o, y, x) / C;
          if (g == 0) continue;
          for (int c = 0; c < C; ++c) {
            if (f1->requires_grad) f1->g().at(c, y, x) += g * f2->val.at(c, y2, x2);
            if (f2->requires_grad) f2->g().at(c, y2, x2) += g * f1->val.at(c, y, x);
          }
        }
      }
    }
  });
}

// fixed-weight reduction over axis 0: x [C,H,W], w [C] -> [1,H,W]
// (soft-argmin style expectation over candidate channels)
inline Var channel_combine(const Var& x, const Tensor& w) {
  const int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
  if (w.ndim() != 1 || w.dim(0) != C)
    throw std::invalid_argument("channel_combine: weight length mismatch");
  Tensor out({1, H, W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) out.at(0, y, xx) += w[c] * x->val.at(c, y, xx);
  return make_op(std::move(out), {x}, [=](Node& self) {
    if (!x->requires_grad) return;
    Tensor& gx = x->g();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) gx.at(c, y, xx) += w[c] * self.grad.at(0, y, xx);
  });
}

// softmax along axis 0 of [n,H,W] (candidate-depth axis)
inline Var softmax0(const Var& logits) {
  const int n = logits->val.dim(0), H = logits->val.dim(1), W = logits->val.dim(2);
  Tensor out({n, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double mx = -1e300;
      for (int i = 0; i < n; ++i) mx = std::max(mx, logits->val.at(i, y, x));
      double Z = 0;
      for (int i = 0; i < n; ++i) Z += std::exp(logits->val.at(i, y, x) - mx);
      for (int i = 0; i < n; ++i)
        out.at(i, y, x) = std::exp(logits->val.at(i, y, x) - mx) / Z;
    }
  Tensor probs = out;
  return make_op(std::move(out), {logits}, [=](Node& self) {
    if (!logits->requires_grad) return;
    Tensor& gl = logits->g();
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double dot = 0;
        for (int i = 0; i < n; ++i) dot += self.grad.at(i, y, x) * probs.at(i, y, x);
        for (int i = 0; i < n; ++i)
          gl.at(i, y, x) += probs.at(i, y, x) * (self.grad.at(i, y, x) - dot);
      }
  });
}

}  // namespace flowdepth::ad
