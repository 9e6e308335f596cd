#include "brainage/models.hpp"

#include <algorithm>

#include "brainage/error.hpp"

namespace brainage {

std::string to_string(ModelKind kind) {
  return kind == ModelKind::BrainNet3D ? "brainnet3d" : "slicenet2d";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "brainnet3d") return ModelKind::BrainNet3D;
  if (name == "slicenet2d") return ModelKind::SliceNet2D;
  fail(ErrorKind::BadSpec, "unknown model kind '" + name + "'");
}

ModelSpec ModelSpec::brainnet3d() { return ModelSpec{}; }

ModelSpec ModelSpec::slicenet2d() {
  ModelSpec spec;
  spec.kind = ModelKind::SliceNet2D;
  spec.head_units = 1024;
  spec.input_shape = {kSliceRows, kSliceCols};
  return spec;
}

void ModelSpec::validate() const {
  if (block_filters.empty()) fail(ErrorKind::BadSpec, "block_filters is empty");
  if (block_filters.front() < 1) fail(ErrorKind::BadSpec, "block_filters must be positive");
  for (std::size_t i = 1; i < block_filters.size(); ++i)
    if (block_filters[i] != 2 * block_filters[i - 1]) fail(ErrorKind::BadSpec, "block_filters must double per block");
  if (head_units < 1) fail(ErrorKind::BadSpec, "head_units must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail(ErrorKind::BadSpec, "dropout_p must lie in [0, 1)");
  if (kernel < 1 || kernel % 2 == 0) fail(ErrorKind::BadSpec, "kernel must be odd");
  if (static_cast<int>(input_shape.size()) != spatial_rank())
    fail(ErrorKind::BadSpec, to_string(kind) + " needs a rank-" + std::to_string(spatial_rank()) + " input_shape");
  const int min_extent = 1 << block_filters.size();
  for (int extent : input_shape)
    if (extent < min_extent)
      fail(ErrorKind::BadSpec, "input extent " + std::to_string(extent) + " vanishes after " +
                                   std::to_string(block_filters.size()) + " poolings");
  if (!(input_scale > 0.0) || !(target_scale > 0.0)) fail(ErrorKind::BadSpec, "scales must be positive");
  if (input_downsample < 1) fail(ErrorKind::BadSpec, "input_downsample must be >= 1");
}

void to_json(nlohmann::json& j, const ModelSpec& spec) {
  j = nlohmann::json{{"kind", to_string(spec.kind)},
                     {"block_filters", spec.block_filters},
                     {"head_units", spec.head_units},
                     {"dropout_p", spec.dropout_p},
                     {"input_shape", spec.input_shape},
                     {"kernel", spec.kernel},
                     {"input_scale", spec.input_scale},
                     {"target_offset", spec.target_offset},
                     {"target_scale", spec.target_scale},
                     {"input_downsample", spec.input_downsample}};
}

void from_json(const nlohmann::json& j, ModelSpec& spec) {
  try {
    const auto kind = model_kind_from_string(j.at("kind").get<std::string>());
    spec = kind == ModelKind::BrainNet3D ? ModelSpec::brainnet3d() : ModelSpec::slicenet2d();
    if (j.contains("block_filters")) spec.block_filters = j.at("block_filters").get<std::vector<int>>();
    if (j.contains("head_units")) spec.head_units = j.at("head_units").get<int>();
    if (j.contains("dropout_p")) spec.dropout_p = j.at("dropout_p").get<double>();
    if (j.contains("input_shape")) spec.input_shape = j.at("input_shape").get<std::vector<int>>();
    if (j.contains("kernel")) spec.kernel = j.at("kernel").get<int>();
    if (j.contains("input_scale")) spec.input_scale = j.at("input_scale").get<double>();
    if (j.contains("target_offset")) spec.target_offset = j.at("target_offset").get<double>();
    if (j.contains("target_scale")) spec.target_scale = j.at("target_scale").get<double>();
    if (j.contains("input_downsample")) spec.input_downsample = j.at("input_downsample").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::BadSpec, std::string("model spec: ") + e.what());
  }
}

ShapeTrace trace_shapes(const ModelSpec& spec) {
  spec.validate();
  ShapeTrace trace;
  std::vector<Index> extents(spec.input_shape.begin(), spec.input_shape.end());
  for (std::size_t b = 0; b < spec.block_filters.size(); ++b) {
    for (auto& e : extents) e /= 2;
    trace.block_outputs.push_back(extents);
  }
  trace.gap_features = spec.block_filters.back();
  trace.head_units = spec.head_units;
  trace.outputs = 1;
  return trace;
}

double median(std::span<const double> values) {
  if (values.empty()) fail(ErrorKind::EmptyInput, "median of nothing");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  if (n % 2 == 1) return sorted[n / 2];
  return 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

SubjectPrediction predict_volume_3d(const Model& model, const Volume& volume, const std::string& subject_id) {
  const auto& spec = model.spec();
  if (spec.kind != ModelKind::BrainNet3D) fail(ErrorKind::BadSpec, "predict_volume_3d needs a brainnet3d model");
  const std::vector<int> dims(volume.dims.begin(), volume.dims.end());
  if (dims != spec.input_shape) fail(ErrorKind::ShapeMismatch, "volume is not on the model grid");
  Tensor<float> input({1, 1, volume.dims[0], volume.dims[1], volume.dims[2]},
                      Eigen::Map<const Eigen::VectorXf>(volume.data.data(), static_cast<Index>(volume.size())));
  const auto out = model.forward(input);
  SubjectPrediction pred;
  pred.subject_id = subject_id;
  pred.predicted_age = model.to_age(out.item());
  if (!std::isfinite(pred.predicted_age)) fail(ErrorKind::NonFinite, "non-finite prediction");
  return pred;
}

SubjectPrediction predict_subject_sliced(const Model& model, std::span<const Slice> slices, int expected_count,
                                         const std::string& subject_id) {
  const auto& spec = model.spec();
  if (spec.kind != ModelKind::SliceNet2D) fail(ErrorKind::BadSpec, "predict_subject_sliced needs a slicenet2d model");
  if (static_cast<int>(slices.size()) != expected_count)
    fail(ErrorKind::WrongSliceCount, "expected " + std::to_string(expected_count) + " slices, got " +
                                         std::to_string(slices.size()));
  const Index rows = spec.input_shape[0], cols = spec.input_shape[1];
  Tensor<float> input({static_cast<Index>(slices.size()), 1, rows, cols});
  for (std::size_t i = 0; i < slices.size(); ++i) {
    if (slices[i].rows != rows || slices[i].cols != cols)
      fail(ErrorKind::ShapeMismatch, "slice is not on the model grid");
    std::copy(slices[i].data.begin(), slices[i].data.end(), input.data().data() + i * rows * cols);
  }
  const auto out = model.forward(input);
  std::vector<double> per_slice(slices.size());
  for (std::size_t i = 0; i < slices.size(); ++i) per_slice[i] = model.to_age(out.data()(static_cast<Index>(i)));
  SubjectPrediction pred;
  pred.subject_id = subject_id;
  pred.predicted_age = median(per_slice);
  pred.slice_predictions = std::move(per_slice);
  if (!std::isfinite(pred.predicted_age)) fail(ErrorKind::NonFinite, "non-finite prediction");
  return pred;
}

Volume block_average(const Volume& volume, int factor) {
  if (factor < 1) fail(ErrorKind::BadConfig, "downsample factor must be >= 1");
  if (factor == 1) return volume;
  Volume out({volume.dims[0] / factor, volume.dims[1] / factor, volume.dims[2] / factor},
             {volume.spacing[0] * factor, volume.spacing[1] * factor, volume.spacing[2] * factor});
  const float norm = 1.0f / static_cast<float>(factor * factor * factor);
  for (int x = 0; x < out.dims[0]; ++x)
    for (int y = 0; y < out.dims[1]; ++y)
      for (int z = 0; z < out.dims[2]; ++z) {
        float sum = 0.0f;
        for (int a = 0; a < factor; ++a)
          for (int b = 0; b < factor; ++b)
            for (int c = 0; c < factor; ++c) sum += volume(x * factor + a, y * factor + b, z * factor + c);
        out(x, y, z) = sum * norm;
      }
  return out;
}

Slice block_average(const Slice& slice, int factor) {
  if (factor < 1) fail(ErrorKind::BadConfig, "downsample factor must be >= 1");
  if (factor == 1) return slice;
  Slice out;
  out.rows = slice.rows / factor;
  out.cols = slice.cols / factor;
  out.source_index = slice.source_index;
  out.subject_id = slice.subject_id;
  out.data.resize(static_cast<std::size_t>(out.rows) * out.cols);
  const float norm = 1.0f / static_cast<float>(factor * factor);
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c) {
      float sum = 0.0f;
      for (int a = 0; a < factor; ++a)
        for (int b = 0; b < factor; ++b) sum += slice(r * factor + a, c * factor + b);
      out(r, c) = sum * norm;
    }
  return out;
}

Volume prepare_volume_input(const ModelSpec& spec, const Volume& volume) {
  Volume out = block_average(volume, spec.input_downsample);
  const std::vector<int> dims(out.dims.begin(), out.dims.end());
  if (dims != spec.input_shape) fail(ErrorKind::ShapeMismatch, "volume does not reduce onto the model grid");
  return out;
}

std::vector<Slice> prepare_slice_inputs(const ModelSpec& spec, const Volume& volume, int slice_count,
                                        const std::string& subject_id) {
  const int f = spec.input_downsample;
  std::vector<Slice> out;
  for (const auto& s : extract_center_slices(volume, slice_count, subject_id))
    out.push_back(block_average(center_crop(s, spec.input_shape[0] * f, spec.input_shape[1] * f), f));
  return out;
}

}  // namespace brainage
