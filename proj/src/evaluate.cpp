#include <cmath>
#include <sstream>

#include "brainage/io.hpp"
#include "brainage/nifti.hpp"
#include "brainage/pipeline.hpp"

namespace brainage {

namespace fs = std::filesystem;

std::vector<HistogramBin> age_histogram(std::span<const double> ages) {
  if (ages.empty()) return {};
  const auto [lo, hi] = std::minmax_element(ages.begin(), ages.end());
  const double start = std::floor(*lo);
  const auto bins = static_cast<std::size_t>(std::floor(*hi) - start) + 1;
  std::vector<HistogramBin> out(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].start = start + static_cast<double>(b);
    out[b].end = out[b].start + 1.0;
  }
  for (double a : ages) ++out[static_cast<std::size_t>(std::floor(a) - start)].count;
  return out;
}

EvalReport make_report(std::vector<SubjectPrediction> predictions, const std::string& split, ModelKind kind) {
  if (predictions.empty()) fail(ErrorKind::EmptySplit, "no subjects in split '" + split + "'");
  EvalReport report;
  report.split = split;
  report.model_kind = kind;
  double abs_sum = 0.0, slice_sum = 0.0;
  std::size_t slice_count = 0;
  std::vector<double> ages;
  for (const auto& p : predictions) {
    if (!p.true_age) fail(ErrorKind::BadManifest, "prediction for " + p.subject_id + " has no true age");
    abs_sum += std::abs(*p.true_age - p.predicted_age);
    ages.push_back(*p.true_age);
    report.scatter_rows.emplace_back(*p.true_age, p.predicted_age);
    if (p.slice_predictions) {
      for (double s : *p.slice_predictions) slice_sum += std::abs(*p.true_age - s);
      slice_count += p.slice_predictions->size();
    }
  }
  report.mae_years = abs_sum / static_cast<double>(predictions.size());
  if (slice_count) report.slice_mae_years = slice_sum / static_cast<double>(slice_count);
  report.age_histogram = age_histogram(ages);
  report.per_subject = std::move(predictions);
  return report;
}

SubjectPrediction predict_subject(const Checkpoint& ckpt, const Volume& volume, const std::string& subject_id) {
  const auto& spec = ckpt.model.spec();
  if (spec.kind == ModelKind::BrainNet3D)
    return predict_volume_3d(ckpt.model, prepare_volume_input(spec, volume), subject_id);
  const auto slices = prepare_slice_inputs(spec, volume, ckpt.slices_per_subject, subject_id);
  return predict_subject_sliced(ckpt.model, slices, ckpt.slices_per_subject, subject_id);
}

EvalReport evaluate_mae(const Checkpoint& ckpt, const Manifest& manifest, Split split) {
  std::vector<SubjectPrediction> predictions;
  for (const auto& r : manifest.subset(split)) {
    auto p = predict_subject(ckpt, read_nifti(manifest.resolve(r)).volume, r.subject_id);
    p.true_age = r.age;
    predictions.push_back(std::move(p));
  }
  return make_report(std::move(predictions), to_string(split), ckpt.model.spec().kind);
}

void export_report(const EvalReport& report, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::IoFailure, "cannot create " + out_dir.string());

  std::ostringstream hist;
  hist << "bin_start,bin_end,count\n";
  for (const auto& b : report.age_histogram)
    hist << format_double(b.start) << ',' << format_double(b.end) << ',' << b.count << '\n';
  write_text_atomic(out_dir / "age_histogram.csv", hist.str());

  std::ostringstream scatter;
  scatter << "subject_id,true_age,predicted_age\n";
  for (const auto& p : report.per_subject)
    scatter << p.subject_id << ',' << format_double(p.true_age.value_or(NAN)) << ',' << format_double(p.predicted_age)
            << '\n';
  write_text_atomic(out_dir / "scatter.csv", scatter.str());

  nlohmann::json metrics{{"mae_years", report.mae_years},
                         {"n", report.per_subject.size()},
                         {"split", report.split},
                         {"model_kind", to_string(report.model_kind)}};
  if (report.slice_mae_years) metrics["slice_mae_years"] = *report.slice_mae_years;
  write_text_atomic(out_dir / "metrics.json", metrics.dump(2) + "\n");
}

}  // namespace brainage
