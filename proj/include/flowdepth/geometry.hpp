#pragma once

#include <array>

#include "flowdepth/core/nn_ops.hpp"

namespace flowdepth {

struct BehindCameraError : std::domain_error {
  using std::domain_error::domain_error;
};

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }

// Pinhole intrinsics. Pixel convention: x=(u,v), origin top-left, u along
// width (rightward), v along height (downward).
struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const {
    if (!(fx > 0 && fy > 0)) throw std::invalid_argument("Intrinsics: focal lengths must be > 0");
    if (!(cx >= 0 && cx < width && cy >= 0 && cy < height))
      throw std::invalid_argument("Intrinsics: principal point outside image");
  }

  // intrinsics for an image downscaled by integer factor s
  Intrinsics scaled(int s) const {
    return {fx / s, fy / s, cx / s, cy / s, width / s, height / s};
  }
};

// Rigid transform camera_src -> camera_dst: X_dst = R * X_src + T.
struct Pose {
  std::array<std::array<double, 3>, 3> R{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  std::array<double, 3> T{0, 0, 0};

  static Pose identity() { return Pose{}; }

  Vec3 apply(Vec3 p) const {
    return {R[0][0] * p.x + R[0][1] * p.y + R[0][2] * p.z + T[0],
            R[1][0] * p.x + R[1][1] * p.y + R[1][2] * p.z + T[1],
            R[2][0] * p.x + R[2][1] * p.y + R[2][2] * p.z + T[2]};
  }

  void validate(double tol = 1e-6) const {
    // R^T R = I and det R = 1
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double d = 0;
        for (int k = 0; k < 3; ++k) d += R[k][i] * R[k][j];
        if (std::fabs(d - (i == j ? 1.0 : 0.0)) > tol)
          throw std::invalid_argument("Pose: rotation not orthonormal");
      }
    const double det =
        R[0][0] * (R[1][1] * R[2][2] - R[1][2] * R[2][1]) -
        R[0][1] * (R[1][0] * R[2][2] - R[1][2] * R[2][0]) +
        R[0][2] * (R[1][0] * R[2][1] - R[1][1] * R[2][0]);
    if (std::fabs(det - 1.0) > tol)
      throw std::invalid_argument("Pose: det(R) != 1");
  }
};

inline Pose compose(const Pose& p1, const Pose& p2) {
  // (p1 * p2)(X) = p1(p2(X))
  Pose out;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += p1.R[i][k] * p2.R[k][j];
      out.R[i][j] = s;
    }
    out.T[i] = p1.R[i][0] * p2.T[0] + p1.R[i][1] * p2.T[1] + p1.R[i][2] * p2.T[2] + p1.T[i];
  }
  return out;
}

inline Pose invert(const Pose& p) {
  Pose out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out.R[i][j] = p.R[j][i];
  for (int i = 0; i < 3; ++i)
    out.T[i] = -(out.R[i][0] * p.T[0] + out.R[i][1] * p.T[1] + out.R[i][2] * p.T[2]);
  return out;
}

// Rodrigues rotation from an axis-angle vector.
inline Pose pose_from_axisangle(Vec3 w, Vec3 t = {}) {
  Pose p;
  p.T = {t.x, t.y, t.z};
  const double th2 = w.x * w.x + w.y * w.y + w.z * w.z;
  const double th = std::sqrt(th2);
  if (th < 1e-12) return p;  // exact identity rotation at zero
  const double A = std::sin(th) / th;
  const double B = (1.0 - std::cos(th)) / th2;
  p.R = {{{1 + B * (w.x * w.x - th2), -A * w.z + B * w.x * w.y, A * w.y + B * w.x * w.z},
          {A * w.z + B * w.x * w.y, 1 + B * (w.y * w.y - th2), -A * w.x + B * w.y * w.z},
          {-A * w.y + B * w.x * w.z, A * w.x + B * w.y * w.z, 1 + B * (w.z * w.z - th2)}}};
  return p;
}

struct DepthMap {
  Tensor values;  // [H,W], scene units
  Mask valid;     // [H,W]

  DepthMap() = default;
  DepthMap(int H, int W, double fill = 1.0)
      : values(Tensor::full({H, W}, fill)), valid(Mask({H, W}, true)) {}

  int height() const { return values.dim(0); }
  int width() const { return values.dim(1); }
};

struct FlowField {
  Tensor uv;  // [2,H,W]: channel 0 = u (rightward), channel 1 = v (downward)

  FlowField() = default;
  FlowField(int H, int W) : uv(Tensor::zeros({2, H, W})) {}
  explicit FlowField(Tensor t) : uv(std::move(t)) {
    if (uv.ndim() != 3 || uv.dim(0) != 2)
      throw std::invalid_argument("FlowField: expected [2,H,W]");
  }

  int height() const { return uv.dim(1); }
  int width() const { return uv.dim(2); }
  double& u(int y, int x) { return uv.at(0, y, x); }
  double& v(int y, int x) { return uv.at(1, y, x); }
  double u(int y, int x) const { return uv.at(0, y, x); }
  double v(int y, int x) const { return uv.at(1, y, x); }
};

// x -> X = d * K^-1 [x;1]
inline Vec3 backproject(double u, double v, double depth, const Intrinsics& K) {
  if (!(depth > 0)) throw std::domain_error("backproject: depth must be > 0");
  return {(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, depth};
}

struct Projected {
  double u, v, depth;
};

// X -> (u,v) by perspective divide; z is the depth
inline Projected project(Vec3 X, const Intrinsics& K) {
  if (!(X.z > 0)) throw BehindCameraError("project: point behind camera");
  return {K.fx * X.x / X.z + K.cx, K.fy * X.y / X.z + K.cy, X.z};
}

// Static/rigid flow: per pixel, flow = project(pose * backproject(x)) - x.
// Pixels with invalid depth or a transformed point at z<=0 get flow 0 and
// valid 0.
struct StaticFlowResult {
  FlowField flow;
  Mask valid;
};

inline StaticFlowResult static_flow(const DepthMap& depth_src,
                                    const Pose& pose_src_to_dst,
                                    const Intrinsics& K) {
  const int H = depth_src.height(), W = depth_src.width();
  StaticFlowResult r{FlowField(H, W), Mask({H, W})};
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!depth_src.valid.at(y, x)) continue;
      const double d = depth_src.values.at(y, x);
      if (!(d > 0) || !std::isfinite(d)) continue;
      const Vec3 Xc = pose_src_to_dst.apply(backproject(x, y, d, K));
      if (!(Xc.z > 1e-9)) continue;
      r.flow.u(y, x) = K.fx * Xc.x / Xc.z + K.cx - x;
      r.flow.v(y, x) = K.fy * Xc.y / Xc.z + K.cy - y;
      r.valid.at(y, x) = 1;
    }
  return r;
}

// ---- differentiable static flow ----
// depth [H,W] and rt [12] = row-major R followed by T are tape Vars; the
// output flow is [2,H,W]. Invalid pixels (z <= eps) produce zero flow and
// block gradient flow.
struct RigidFlowResult {
  ad::Var flow;
  Mask valid;
};

inline RigidFlowResult rigid_flow(const ad::Var& depth, const ad::Var& rt,
                                  const Intrinsics& K) {
  using ad::Node;
  const int H = depth->val.dim(0), W = depth->val.dim(1);
  Tensor out({2, H, W});
  Mask valid({H, W});
  const auto& r = rt->val;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double d = depth->val.at(y, x);
      if (!(d > 0)) continue;
      const double a = (x - K.cx) / K.fx, b = (y - K.cy) / K.fy;
      const double X = d * (r[0] * a + r[1] * b + r[2]) + r[9];
      const double Y = d * (r[3] * a + r[4] * b + r[5]) + r[10];
      const double Z = d * (r[6] * a + r[7] * b + r[8]) + r[11];
      if (!(Z > 1e-9)) continue;
      out.at(0, y, x) = K.fx * X / Z + K.cx - x;
      out.at(1, y, x) = K.fy * Y / Z + K.cy - y;
      valid.at(y, x) = 1;
    }
  Mask valid_copy = valid;
  auto dv = depth;
  auto rv = rt;
  ad::Var flow = ad::make_op(std::move(out), {dv, rv}, [=](Node& self) {
    const auto& rr = rv->val;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        if (!valid_copy.at(y, x)) continue;
        const double gu = self.grad.at(0, y, x), gv = self.grad.at(1, y, x);
        if (gu == 0 && gv == 0) continue;
        const double d = dv->val.at(y, x);
        const double a = (x - K.cx) / K.fx, b = (y - K.cy) / K.fy;
        const double kx = rr[0] * a + rr[1] * b + rr[2];
        const double ky = rr[3] * a + rr[4] * b + rr[5];
        const double kz = rr[6] * a + rr[7] * b + rr[8];
        const double X = d * kx + rr[9], Y = d * ky + rr[10], Z = d * kz + rr[11];
        // d(u')/dXc and d(v')/dXc
        const double du_dX = K.fx / Z, du_dZ = -K.fx * X / (Z * Z);
        const double dv_dY = K.fy / Z, dv_dZ = -K.fy * Y / (Z * Z);
        if (dv->requires_grad) {
          dv->g().at(y, x) += gu * (du_dX * kx + du_dZ * kz) +
                              gv * (dv_dY * ky + dv_dZ * kz);
        }
        if (rv->requires_grad) {
          Tensor& gr = rv->g();
          const double h[3] = {d * a, d * b, d};  // dXc_i/dR_ij = x3_j
          for (int j = 0; j < 3; ++j) {
            gr[0 + j] += gu * du_dX * h[j];
            gr[3 + j] += gv * dv_dY * h[j];
            gr[6 + j] += (gu * du_dZ + gv * dv_dZ) * h[j];
          }
          gr[9] += gu * du_dX;
          gr[10] += gv * dv_dY;
          gr[11] += gu * du_dZ + gv * dv_dZ;
        }
      }
  });
  return {flow, valid};
}

inline ad::Var rt_constant(const Pose& p) {
  Tensor t({12});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[i * 3 + j] = p.R[i][j];
  for (int i = 0; i < 3; ++i) t[9 + i] = p.T[i];
  return ad::constant(t);
}

inline Pose pose_from_rt(const Tensor& t) {
  Pose p;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) p.R[i][j] = t[i * 3 + j];
  for (int i = 0; i < 3; ++i) p.T[i] = t[9 + i];
  return p;
}

// Differentiable Rodrigues: aa6 = [wx,wy,wz,tx,ty,tz] -> rt [12].
// Uses a smoothed angle sqrt(theta^2 + 1e-16) so the zero-rotation point is
// differentiable.
inline ad::Var rt_from_axisangle(const ad::Var& aa6) {
  using namespace ad;
  Var wx = index1d(aa6, 0), wy = index1d(aa6, 1), wz = index1d(aa6, 2);
  Var th2 = add(add(square(wx), square(wy)), square(wz));
  Var th = vsqrt(add_scalar(th2, 1e-16));
  Var A = div(vsin(th), th);
  Var B = div(sub(constant_scalar(1.0), vcos(th)), square(th));
  auto diag = [&](const Var& wi) {
    return add_scalar(mul(B, sub(square(wi), th2)), 1.0);
  };
  auto off = [&](const Var& wi, const Var& wj, const Var& wk, double sign) {
    return add(mul_scalar(mul(A, wk), sign), mul(B, mul(wi, wj)));
  };
  std::vector<Var> e = {
      diag(wx), off(wx, wy, wz, -1.0), off(wx, wz, wy, 1.0),
      off(wy, wx, wz, 1.0), diag(wy), off(wy, wz, wx, -1.0),
      off(wz, wx, wy, -1.0), off(wz, wy, wx, 1.0), diag(wz),
      index1d(aa6, 3), index1d(aa6, 4), index1d(aa6, 5)};
  return stack_scalars(e);
}

}  // namespace flowdepth
