#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "brainage/augment.hpp"
#include "brainage/checkpoint.hpp"
#include "brainage/models.hpp"
#include "brainage/optim.hpp"
#include "brainage/volume.hpp"

namespace brainage {

// ---------------------------------------------------------------------------
// Manifests

enum class Split { Train, Val, Test };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

struct SubjectRecord {
  std::string subject_id;
  double age = 0.0;
  std::filesystem::path volume_path;
  Split split = Split::Train;
};

/// Subject list. Relative volume paths resolve against base_dir (the manifest's directory).
struct Manifest {
  std::vector<SubjectRecord> records;
  std::filesystem::path base_dir;

  std::vector<SubjectRecord> subset(Split split) const;
  std::filesystem::path resolve(const SubjectRecord& record) const;
};

/// Parses the CSV form `subject_id,age,volume_path,split`. Throws BadManifest / EmptyManifest.
/// With check_paths, every volume must exist.
Manifest read_manifest(const std::filesystem::path& path, bool check_paths = true);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Seeded shuffle, then the first round(N * train_fraction) subjects become train and the rest val.
/// Records keep their relative order inside each split. Test subjects are never produced here.
Manifest split_manifest(std::vector<SubjectRecord> records, double train_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic cohort

struct SyntheticOptions {
  int n = 10;
  std::pair<double, double> age_range{55.0, 96.0};
  std::uint64_t seed = 1;
  std::array<int, 3> dims = kMniDims;
  double noise_sigma = 5.0;
  std::pair<double, double> intensity_scale_range{0.8, 1.2};
};

/// Tissue intensities and geometry of the phantom as functions of age.
struct PhantomLaws {
  static constexpr float kWhiteMatter = 160.0f;
  static constexpr float kVentricle = 40.0f;
  static double cortex_intensity(double age) { return 130.0 - 0.6 * (age - 18.0); }
  static std::array<double, 3> ventricle_radii(double age) {
    return {4.0 + 0.12 * (age - 18.0), 8.0 + 0.22 * (age - 18.0), 5.0 + 0.12 * (age - 18.0)};
  }
};

/// Ellipsoidal brain with a cortical shell and central ventricles, on dims. The ventricles grow
/// and the cortex darkens with age; noise and a global intensity scale are then applied from rng.
/// With noise_sigma 0 and a unit scale range the phantom is the noise-free template.
Volume synthesize_phantom(double age, const SyntheticOptions& opts, Rng& rng);

/// Writes sub-NNNN.nii volumes into out_dir and returns unsplit records (split = Train, paths
/// relative to out_dir). Deterministic per (seed, subject index). Throws BadRange.
Manifest generate_synthetic_cohort(const SyntheticOptions& opts, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  ModelSpec model;
  int epochs = 80;
  int batch_size = 10;
  LrSchedule schedule;
  AugmentConfig augment;
  bool augment_enabled = true;
  std::uint64_t seed = 0;
  int slices_per_subject = kDefaultSliceCount;

  static TrainConfig defaults_3d();
  static TrainConfig defaults_2d();

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
/// Fields missing from j take the defaults of the model kind named in j["model"]["kind"].
void from_json(const nlohmann::json& j, TrainConfig& cfg);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // MSE in years^2 under augmentation and dropout
  double val_mae = 0.0;
  std::optional<double> val_slice_mae;
};

struct TrainResult {
  Checkpoint checkpoint;  // the epoch with the lowest validation MAE
  std::vector<EpochLog> log;
  std::size_t samples_per_epoch = 0;
};

/// Minibatch Adam on MSE against standardised ages. The 3D model takes one sample per subject; the
/// 2D model takes every central slice of every subject as an independent sample labelled with the
/// subject's age. Throws EmptySplit and DivergedLoss.
TrainResult train_model(const Manifest& manifest, const TrainConfig& cfg, std::ostream* progress = nullptr);

std::string format_train_log(std::span<const EpochLog> log);

// ---------------------------------------------------------------------------
// Evaluation

struct HistogramBin {
  double start = 0.0;
  double end = 0.0;
  std::size_t count = 0;
};

struct EvalReport {
  double mae_years = 0.0;
  std::vector<SubjectPrediction> per_subject;
  std::vector<HistogramBin> age_histogram;
  std::vector<std::pair<double, double>> scatter_rows;  // (true_age, predicted_age)
  std::string split;
  ModelKind model_kind = ModelKind::BrainNet3D;
  std::optional<double> slice_mae_years;
};

/// One-year bins from floor(min age) to floor(max age) + 1.
std::vector<HistogramBin> age_histogram(std::span<const double> ages);

/// Builds the report from predictions that carry true ages. Throws EmptySplit.
EvalReport make_report(std::vector<SubjectPrediction> predictions, const std::string& split, ModelKind kind);

/// Predicts one preprocessed volume with either model kind.
SubjectPrediction predict_subject(const Checkpoint& ckpt, const Volume& volume, const std::string& subject_id = {});

EvalReport evaluate_mae(const Checkpoint& ckpt, const Manifest& manifest, Split split);

/// Writes age_histogram.csv, scatter.csv and metrics.json into out_dir.
void export_report(const EvalReport& report, const std::filesystem::path& out_dir);

}  // namespace brainage
