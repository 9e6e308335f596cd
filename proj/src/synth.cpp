#include <cmath>
#include <cstdio>
#include <random>

#include "brainage/nifti.hpp"
#include "brainage/pipeline.hpp"

namespace brainage {

namespace fs = std::filesystem;

namespace {

// Brain ellipsoid radii (voxels) and cortical shell thickness on the 91x109x91 grid.
constexpr std::array<double, 3> kBrainRadii{36.0, 46.0, 36.0};
constexpr double kCortexThickness = 5.0;

double ellipsoid_norm(const std::array<double, 3>& offset, const std::array<double, 3>& radii) {
  double s = 0.0;
  for (int a = 0; a < 3; ++a) s += (offset[a] / radii[a]) * (offset[a] / radii[a]);
  return std::sqrt(s);
}

}  // namespace

Volume synthesize_phantom(double age, const SyntheticOptions& opts, Rng& rng) {
  Volume v(opts.dims, kMniSpacing);
  // Geometry scales with the grid so tiny test grids stay proportional.
  std::array<double, 3> brain, centre, ventricle;
  const auto vent = PhantomLaws::ventricle_radii(age);
  for (int a = 0; a < 3; ++a) {
    const double grid_scale = static_cast<double>(opts.dims[a]) / static_cast<double>(kMniDims[a]);
    brain[a] = kBrainRadii[a] * grid_scale;
    ventricle[a] = vent[a] * grid_scale;
    centre[a] = (opts.dims[a] - 1) / 2.0;
  }
  const double shell = 1.0 - kCortexThickness / kBrainRadii[0];
  const auto cortex = static_cast<float>(PhantomLaws::cortex_intensity(age));

  const auto [lo, hi] = opts.intensity_scale_range;
  const double gain = lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
  std::normal_distribution<double> noise(0.0, opts.noise_sigma > 0.0 ? opts.noise_sigma : 1.0);

  for (int x = 0; x < opts.dims[0]; ++x)
    for (int y = 0; y < opts.dims[1]; ++y)
      for (int z = 0; z < opts.dims[2]; ++z) {
        const std::array<double, 3> off{x - centre[0], y - centre[1], z - centre[2]};
        const double r = ellipsoid_norm(off, brain);
        if (r > 1.0) continue;
        float tissue = r > shell ? cortex : PhantomLaws::kWhiteMatter;
        if (ellipsoid_norm(off, ventricle) <= 1.0) tissue = PhantomLaws::kVentricle;
        double value = tissue;
        if (opts.noise_sigma > 0.0) value += noise(rng);
        v(x, y, z) = static_cast<float>(std::max(1.0, value * gain));
      }
  return v;
}

Manifest generate_synthetic_cohort(const SyntheticOptions& opts, const fs::path& out_dir) {
  const auto [lo, hi] = opts.age_range;
  if (opts.n < 1) fail(ErrorKind::BadRange, "cohort size must be >= 1");
  if (!(lo >= 18.0 && hi <= 120.0 && lo <= hi)) fail(ErrorKind::BadRange, "age range must lie within [18, 120]");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::IoFailure, "cannot create " + out_dir.string());

  Manifest manifest;
  manifest.base_dir = out_dir;
  for (int i = 0; i < opts.n; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32),
                      static_cast<std::uint32_t>(i)};
    Rng rng(seq);
    const double age = lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
    const Volume v = synthesize_phantom(age, opts, rng);
    char name[32];
    std::snprintf(name, sizeof name, "sub-%04d", i);
    SubjectRecord r;
    r.subject_id = name;
    r.age = age;
    r.volume_path = std::string(name) + ".nii";
    write_nifti(v, out_dir / r.volume_path);
    manifest.records.push_back(std::move(r));
  }
  return manifest;
}

}  // namespace brainage
