#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "brainage/ops.hpp"
#include "brainage/preprocess.hpp"
#include "brainage/volume.hpp"

namespace brainage {

enum class ModelKind { BrainNet3D, SliceNet2D };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

/// Declarative description of either network.
///
/// Both kinds are a stack of blocks [conv3 + ReLU, conv3 + ReLU, maxpool2] followed by global
/// average pooling, a dense head, dropout and a single linear output. The 3D head applies ReLU
/// after its dense layer; the 2D head does not.
///
/// input_scale multiplies raw intensities before the first convolution. Predictions are
/// target_offset + target_scale * raw_output, so the network regresses standardised ages.
struct ModelSpec {
  ModelKind kind = ModelKind::BrainNet3D;
  std::vector<int> block_filters{16, 32, 64, 128};
  int head_units = 128;
  double dropout_p = 0.5;
  std::vector<int> input_shape{91, 109, 91};
  int kernel = 3;
  double input_scale = 1.0 / 255.0;
  double target_offset = 0.0;
  double target_scale = 1.0;
  // Block-average factor applied to inputs before they reach the network (1 = native grid).
  int input_downsample = 1;

  static ModelSpec brainnet3d();
  static ModelSpec slicenet2d();

  int spatial_rank() const { return kind == ModelKind::BrainNet3D ? 3 : 2; }

  /// Throws BadSpec unless filters are nonempty and doubling, dropout lies in [0, 1), the input
  /// rank matches the kind and every block still sees a nonempty map.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelSpec& spec);
void from_json(const nlohmann::json& j, ModelSpec& spec);

/// Spatial extents after each block, plus the head widths.
struct ShapeTrace {
  std::vector<std::vector<Index>> block_outputs;
  Index gap_features = 0;
  Index head_units = 0;
  Index outputs = 0;
};

/// Shape arithmetic of the architecture without running it.
ShapeTrace trace_shapes(const ModelSpec& spec);

struct LayerInfo {
  std::string name;
  std::string type;
  Shape weight_shape;
  Shape bias_shape;
};

template <typename Scalar>
class BrainAgeModel {
 public:
  using TensorT = Tensor<Scalar>;

  BrainAgeModel() = default;

  /// Builds the layer stack with He-uniform weights (limit sqrt(6 / fan_in)) and zero biases.
  BrainAgeModel(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng(seed);
    const Index k = spec_.kernel;
    const int rank = spec_.spatial_rank();
    Index channels = 1;
    for (std::size_t b = 0; b < spec_.block_filters.size(); ++b) {
      const Index filters = spec_.block_filters[b];
      for (int c = 0; c < 2; ++c) {
        Shape w_shape{filters, channels};
        for (int r = 0; r < rank; ++r) w_shape.push_back(k);
        add_layer("block" + std::to_string(b + 1) + ".conv" + std::to_string(c + 1),
                  rank == 3 ? "conv3d" : "conv2d", std::move(w_shape), filters, rng);
        channels = filters;
      }
    }
    add_layer("head.dense", "dense", {channels, spec_.head_units}, spec_.head_units, rng);
    add_layer("out.dense", "dense", {spec_.head_units, 1}, 1, rng);
  }

  const ModelSpec& spec() const { return spec_; }
  ModelSpec& spec() { return spec_; }
  const std::vector<LayerInfo>& layers() const { return layers_; }

  /// Weight then bias for each layer, in layer order.
  std::vector<TensorT>& parameters() { return params_; }
  const std::vector<TensorT>& parameters() const { return params_; }

  Index parameter_count() const {
    Index total = 0;
    for (const auto& p : params_) total += p.size();
    return total;
  }

  void set_requires_grad(bool on) {
    for (auto& p : params_) p.set_requires_grad(on);
  }
  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// Raw network output [N, 1] for input [N, 1, spatial...] already scaled to the model grid.
  TensorT forward(const TensorT& input, Mode mode, Rng& rng, ShapeTrace* trace = nullptr) const {
    check_input(input);
    TensorT x = scale(input, static_cast<Scalar>(spec_.input_scale));
    std::size_t p = 0;
    for (std::size_t b = 0; b < spec_.block_filters.size(); ++b) {
      x = relu(conv(x, params_[p], params_[p + 1]));
      x = relu(conv(x, params_[p + 2], params_[p + 3]));
      x = max_pool(x);
      p += 4;
      if (trace) trace->block_outputs.emplace_back(x.shape().begin() + 2, x.shape().end());
    }
    x = global_avg_pool(x);
    if (trace) trace->gap_features = x.dim(1);
    x = dense(x, params_[p], params_[p + 1]);
    if (spec_.kind == ModelKind::BrainNet3D) x = relu(x);
    if (trace) trace->head_units = x.dim(1);
    x = dropout(x, spec_.dropout_p, mode, rng);
    x = dense(x, params_[p + 2], params_[p + 3]);
    if (trace) trace->outputs = x.dim(1);
    return x;
  }

  /// Inference-mode forward; dropout is off so no random state is consumed.
  TensorT forward(const TensorT& input) const {
    Rng unused(0);
    return forward(input, Mode::Infer, unused);
  }

  /// Maps a raw network output to years.
  double to_age(double raw) const { return spec_.target_offset + spec_.target_scale * raw; }
  /// Maps years to the standardised regression target.
  double to_target(double age) const { return (age - spec_.target_offset) / spec_.target_scale; }

  template <typename Other>
  BrainAgeModel<Other> cast() const {
    BrainAgeModel<Other> out;
    out.spec_ = spec_;
    out.layers_ = layers_;
    for (const auto& p : params_)
      out.params_.emplace_back(p.shape(), p.data().template cast<Other>().eval(), p.requires_grad());
    return out;
  }

 private:
  template <typename>
  friend class BrainAgeModel;

  void add_layer(std::string name, std::string type, Shape w_shape, Index bias, Rng& rng) {
    // conv weights are [F, C, k...]; dense weights are [D, U].
    const Index fan_in = type == "dense" ? w_shape[0] : numel(w_shape) / w_shape[0];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    TensorT w(w_shape, true);
    for (Index i = 0; i < w.size(); ++i) w.data()(i) = static_cast<Scalar>(dist(rng));
    TensorT b(Shape{bias}, true);
    layers_.push_back({std::move(name), std::move(type), std::move(w_shape), Shape{bias}});
    params_.push_back(std::move(w));
    params_.push_back(std::move(b));
  }

  void check_input(const TensorT& input) const {
    const auto rank = static_cast<std::size_t>(spec_.spatial_rank());
    bool ok = input.rank() == static_cast<Index>(rank + 2) && input.dim(1) == 1;
    for (std::size_t i = 0; ok && i < rank; ++i) ok = input.dim(i + 2) == spec_.input_shape[i];
    if (!ok) fail(ErrorKind::ShapeMismatch, "model expects [N,1," + shape_string({spec_.input_shape.begin(), spec_.input_shape.end()}).substr(1) + " but got " + shape_string(input.shape()));
  }

  ModelSpec spec_;
  std::vector<LayerInfo> layers_;
  std::vector<TensorT> params_;
};

using Model = BrainAgeModel<float>;

/// Subject-level output of either model.
struct SubjectPrediction {
  std::string subject_id;
  double predicted_age = 0.0;
  std::optional<std::vector<double>> slice_predictions;
  std::optional<double> true_age;
};

/// Median; even counts average the two central order statistics. Throws EmptyInput.
double median(std::span<const double> values);

/// Whole-volume regression. The volume must already be on the model grid.
SubjectPrediction predict_volume_3d(const Model& model, const Volume& volume, const std::string& subject_id = {});

/// Per-slice regression fused by the median. Each slice must match the model grid.
SubjectPrediction predict_subject_sliced(const Model& model, std::span<const Slice> slices, int expected_count,
                                         const std::string& subject_id = {});

/// Block-averages by factor along every axis (trailing remainders drop).
Volume block_average(const Volume& volume, int factor);
Slice block_average(const Slice& slice, int factor);

/// Resamples a preprocessed 91x109x91-style volume onto the 3D model grid.
Volume prepare_volume_input(const ModelSpec& spec, const Volume& volume);

/// Central slices, cropped to the 2D crop shape and block-averaged onto the 2D model grid.
std::vector<Slice> prepare_slice_inputs(const ModelSpec& spec, const Volume& volume, int slice_count,
                                        const std::string& subject_id = {});

}  // namespace brainage
