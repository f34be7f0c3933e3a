#pragma once

#include <algorithm>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowdepth/dcablur.hpp"
#include "flowdepth/geometry.hpp"

namespace flowdepth {

// Standard depth metrics with median scaling and cap, dynamic-region
// evaluation, and entropy-by-texture-region statistics for ablations.

inline constexpr double kDepthCap = 80.0;
inline constexpr double kPredFloor = 1e-3;  // clip predictions away from 0

struct DepthMetrics {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;
  long pixels = 0;
  bool empty = false;  // no pixels to evaluate; all values are zero
};

// Evaluated pixels: gt valid, 0 < gt <= cap, inside `region` if given.
// With median_scale the prediction is rescaled by median(gt)/median(pred)
// over those pixels; predictions are then clipped to [kPredFloor, cap].
inline DepthMetrics evaluate(const DepthMap& pred, const DepthMap& gt,
                             double cap = kDepthCap, bool median_scale = true,
                             const Mask* region = nullptr) {
  check_same_shape(pred.values, gt.values, "evaluate");
  const int H = gt.height(), W = gt.width();
  std::vector<double> ps, gs;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!gt.valid.at(y, x)) continue;
      if (region && !region->at(y, x)) continue;
      const double g = gt.values.at(y, x);
      if (!(g > 0) || g > cap) continue;
      ps.push_back(pred.values.at(y, x));
      gs.push_back(g);
    }
  DepthMetrics m;
  m.pixels = static_cast<long>(gs.size());
  if (gs.empty()) {
    m.empty = true;
    return m;
  }
  if (median_scale) {
    auto median = [](std::vector<double> v) {
      std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
      return v[v.size() / 2];
    };
    const double mp = median(ps);
    const double scale = mp > 0 ? median(gs) / mp : 1.0;
    for (auto& p : ps) p *= scale;
  }
  const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = t2 * 1.25;
  for (size_t i = 0; i < gs.size(); ++i) {
    const double p = std::clamp(ps[i], kPredFloor, cap);
    const double g = gs[i];
    const double d = p - g;
    m.abs_rel += std::fabs(d) / g;
    m.sq_rel += d * d / g;
    m.rmse += d * d;
    const double dl = std::log(p) - std::log(g);
    m.rmse_log += dl * dl;
    const double r = std::max(p / g, g / p);
    m.delta1 += r < t1;
    m.delta2 += r < t2;
    m.delta3 += r < t3;
  }
  const double n = static_cast<double>(gs.size());
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rmse = std::sqrt(m.rmse / n);
  m.rmse_log = std::sqrt(m.rmse_log / n);
  m.delta1 /= n;
  m.delta2 /= n;
  m.delta3 /= n;
  return m;
}

inline DepthMetrics dynamic_region_evaluate(const DepthMap& pred, const DepthMap& gt,
                                            const Mask& gt_dynamic_mask,
                                            double cap = kDepthCap,
                                            bool median_scale = true) {
  return evaluate(pred, gt, cap, median_scale, &gt_dynamic_mask);
}

// mean cost-volume entropy split by the frequency map: texture-free regions
// are where the entropy losses are supposed to act
struct RegionEntropy {
  double mean_low_texture = 0, mean_textured = 0;
  long low_texture_pixels = 0, textured_pixels = 0;
};

inline RegionEntropy entropy_by_texture(const Tensor& entropy_hw,
                                        const FrequencyMap& fmap) {
  check_same_shape(entropy_hw, fmap.values, "entropy_by_texture");
  RegionEntropy r;
  for (long i = 0; i < entropy_hw.numel(); ++i) {
    if (fmap.values[i] > fmap.threshold) {
      r.mean_textured += entropy_hw[i];
      ++r.textured_pixels;
    } else {
      r.mean_low_texture += entropy_hw[i];
      ++r.low_texture_pixels;
    }
  }
  if (r.textured_pixels) r.mean_textured /= r.textured_pixels;
  if (r.low_texture_pixels) r.mean_low_texture /= r.low_texture_pixels;
  return r;
}

inline nlohmann::json to_json(const DepthMetrics& m) {
  return {{"abs_rel", m.abs_rel},   {"sq_rel", m.sq_rel}, {"rmse", m.rmse},
          {"rmse_log", m.rmse_log}, {"delta1", m.delta1}, {"delta2", m.delta2},
          {"delta3", m.delta3},     {"pixels", m.pixels}, {"empty", m.empty}};
}

// plain-text table in the usual column order
inline std::string metrics_table(
    const std::vector<std::pair<std::string, DepthMetrics>>& rows) {
  std::ostringstream os;
  os << "name                 AbsRel  SqRel   RMSE    RMSElog d<1.25  d<1.25^2 d<1.25^3\n";
  for (const auto& [name, m] : rows) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "%-20s %-7.4f %-7.4f %-7.4f %-7.4f %-7.4f %-8.4f %-7.4f\n",
                  name.c_str(), m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.delta1,
                  m.delta2, m.delta3);
    os << buf;
  }
  return os.str();
}

}  // namespace flowdepth
