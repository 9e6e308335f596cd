#include "brainage/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace brainage {

AugmentConfig AugmentConfig::identity() {
  AugmentConfig cfg;
  cfg.brightness_delta_max = 0.0;
  cfg.contrast_factor_range = {1.0, 1.0};
  cfg.rotation_max_deg = 0.0;
  cfg.zoom_range = {1.0, 1.0};
  cfg.translation_max = 0;
  cfg.flip_probability = 0.0;
  return cfg;
}

void AugmentConfig::validate() const {
  auto contains_one = [](std::pair<double, double> r) { return r.first <= 1.0 && 1.0 <= r.second && r.first > 0.0; };
  if (!(brightness_delta_max >= 0.0)) fail(ErrorKind::BadConfig, "brightness_delta_max must be >= 0");
  if (!contains_one(contrast_factor_range)) fail(ErrorKind::BadConfig, "contrast_factor_range must be positive and contain 1");
  if (!(rotation_max_deg >= 0.0)) fail(ErrorKind::BadConfig, "rotation_max_deg must be >= 0");
  if (!contains_one(zoom_range)) fail(ErrorKind::BadConfig, "zoom_range must be positive and contain 1");
  if (translation_max < 0) fail(ErrorKind::BadConfig, "translation_max must be >= 0");
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) fail(ErrorKind::BadConfig, "flip_probability must lie in [0, 1]");
}

void to_json(nlohmann::json& j, const AugmentConfig& cfg) {
  j = nlohmann::json{{"brightness_delta_max", cfg.brightness_delta_max},
                     {"contrast_factor_range", {cfg.contrast_factor_range.first, cfg.contrast_factor_range.second}},
                     {"rotation_max_deg", cfg.rotation_max_deg},
                     {"zoom_range", {cfg.zoom_range.first, cfg.zoom_range.second}},
                     {"translation_max", cfg.translation_max},
                     {"flip_probability", cfg.flip_probability},
                     {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, AugmentConfig& cfg) {
  try {
    cfg = AugmentConfig{};
    if (j.contains("brightness_delta_max")) cfg.brightness_delta_max = j.at("brightness_delta_max").get<double>();
    if (j.contains("contrast_factor_range")) {
      const auto r = j.at("contrast_factor_range").get<std::vector<double>>();
      if (r.size() != 2) fail(ErrorKind::BadConfig, "contrast_factor_range needs two values");
      cfg.contrast_factor_range = {r[0], r[1]};
    }
    if (j.contains("rotation_max_deg")) cfg.rotation_max_deg = j.at("rotation_max_deg").get<double>();
    if (j.contains("zoom_range")) {
      const auto r = j.at("zoom_range").get<std::vector<double>>();
      if (r.size() != 2) fail(ErrorKind::BadConfig, "zoom_range needs two values");
      cfg.zoom_range = {r[0], r[1]};
    }
    if (j.contains("translation_max")) cfg.translation_max = j.at("translation_max").get<int>();
    if (j.contains("flip_probability")) cfg.flip_probability = j.at("flip_probability").get<double>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::BadConfig, std::string("augment config: ") + e.what());
  }
  cfg.validate();
}

namespace {

void check_grid(const Grid& data) {
  if (data.rank() != 2 && data.rank() != 3) fail(ErrorKind::ShapeMismatch, "augmentation needs a rank-2 or rank-3 grid");
}

std::array<Index, 3> extents3(const Grid& data) {
  return {data.dim(0), data.dim(1), data.rank() == 3 ? data.dim(2) : Index{1}};
}

double uniform(Rng& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

Grid adjust_brightness_contrast(const Grid& data, double delta, double factor) {
  if (!(factor > 0.0)) fail(ErrorKind::BadConfig, "contrast factor must be > 0");
  if (delta == 0.0 && factor == 1.0) return data.detach();
  double sum = 0.0;
  Index count = 0;
  for (Index i = 0; i < data.size(); ++i)
    if (data.data()(i) != 0.0f) {
      sum += data.data()(i);
      ++count;
    }
  const double mean = count ? sum / static_cast<double>(count) : 0.0;
  Grid out(data.shape());
  for (Index i = 0; i < data.size(); ++i) {
    const double v = (data.data()(i) - mean) * factor + mean + delta;
    out.data()(i) = static_cast<float>(std::clamp(v, 0.0, 255.0));
  }
  return out;
}

Grid flip(const Grid& data, int axis) {
  if (axis < 0 || axis >= data.rank()) fail(ErrorKind::BadAxis, "axis " + std::to_string(axis) + " is not a grid axis");
  const auto n = extents3(data);
  Grid out(data.shape());
  for (Index i0 = 0; i0 < n[0]; ++i0)
    for (Index i1 = 0; i1 < n[1]; ++i1)
      for (Index i2 = 0; i2 < n[2]; ++i2) {
        std::array<Index, 3> src{i0, i1, i2};
        src[axis] = n[axis] - 1 - src[axis];
        out.data()((i0 * n[1] + i1) * n[2] + i2) = data.data()((src[0] * n[1] + src[1]) * n[2] + src[2]);
      }
  return out;
}

Grid affine_resample(const Grid& data, double rotation_deg, double zoom, std::array<int, 3> translation) {
  check_grid(data);
  if (!(zoom > 0.0)) fail(ErrorKind::BadConfig, "zoom must be > 0");
  const bool volumetric = data.rank() == 3;
  if (!volumetric) translation[2] = 0;
  if (rotation_deg == 0.0 && zoom == 1.0 && translation == std::array<int, 3>{0, 0, 0}) return data.detach();

  const auto n = extents3(data);
  const double theta = rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  std::array<double, 3> centre;
  for (int a = 0; a < 3; ++a) centre[a] = (static_cast<double>(n[a]) - 1.0) / 2.0;

  const auto& in = data.data();
  auto at = [&](Index i0, Index i1, Index i2) -> double {
    if (i0 < 0 || i1 < 0 || i2 < 0 || i0 >= n[0] || i1 >= n[1] || i2 >= n[2]) return 0.0;
    return in((i0 * n[1] + i1) * n[2] + i2);
  };

  Grid out(data.shape());
  for (Index i0 = 0; i0 < n[0]; ++i0)
    for (Index i1 = 0; i1 < n[1]; ++i1)
      for (Index i2 = 0; i2 < n[2]; ++i2) {
        // Inverse map: source = R^-1 (q - c - t) / zoom + c.
        const double q0 = static_cast<double>(i0) - centre[0] - translation[0];
        const double q1 = static_cast<double>(i1) - centre[1] - translation[1];
        const double q2 = static_cast<double>(i2) - centre[2] - translation[2];
        const double s0 = (cs * q0 + sn * q1) / zoom + centre[0];
        const double s1 = (-sn * q0 + cs * q1) / zoom + centre[1];
        const double s2 = volumetric ? q2 / zoom + centre[2] : 0.0;
        const auto f0 = static_cast<Index>(std::floor(s0));
        const auto f1 = static_cast<Index>(std::floor(s1));
        const auto f2 = static_cast<Index>(std::floor(s2));
        const double t0 = s0 - f0, t1 = s1 - f1, t2 = s2 - f2;
        double value = 0.0;
        for (int d0 = 0; d0 < 2; ++d0)
          for (int d1 = 0; d1 < 2; ++d1)
            for (int d2 = 0; d2 < (volumetric ? 2 : 1); ++d2) {
              const double w = (d0 ? t0 : 1.0 - t0) * (d1 ? t1 : 1.0 - t1) * (volumetric ? (d2 ? t2 : 1.0 - t2) : 1.0);
              if (w != 0.0) value += w * at(f0 + d0, f1 + d1, f2 + d2);
            }
        out.data()((i0 * n[1] + i1) * n[2] + i2) = static_cast<float>(value);
      }
  return out;
}

AugmentDraw sample_augmentation(const AugmentConfig& cfg, std::uint64_t counter, int rank) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32)};
  Rng rng(seq);
  AugmentDraw draw;
  draw.delta = uniform(rng, -cfg.brightness_delta_max, cfg.brightness_delta_max);
  draw.factor = uniform(rng, cfg.contrast_factor_range.first, cfg.contrast_factor_range.second);
  for (auto& f : draw.flips) f = cfg.flip_probability > 0.0 && std::bernoulli_distribution(cfg.flip_probability)(rng);
  draw.rotation_deg = uniform(rng, -cfg.rotation_max_deg, cfg.rotation_max_deg);
  draw.zoom = uniform(rng, cfg.zoom_range.first, cfg.zoom_range.second);
  for (int a = 0; a < rank; ++a)
    draw.translation[a] =
        cfg.translation_max > 0 ? std::uniform_int_distribution<int>(-cfg.translation_max, cfg.translation_max)(rng) : 0;
  return draw;
}

Grid apply_augmentation(const Grid& data, const AugmentConfig& cfg, std::uint64_t counter) {
  check_grid(data);
  cfg.validate();
  const auto draw = sample_augmentation(cfg, counter, static_cast<int>(data.rank()));
  Grid out = adjust_brightness_contrast(data, draw.delta, draw.factor);
  for (int axis = 0; axis < 2; ++axis)
    if (draw.flips[axis]) out = flip(out, axis);
  out = affine_resample(out, draw.rotation_deg, draw.zoom, draw.translation);
  for (Index i = 0; i < out.size(); ++i) out.data()(i) = std::clamp(out.data()(i), 0.0f, 255.0f);
  return out;
}

}  // namespace brainage
