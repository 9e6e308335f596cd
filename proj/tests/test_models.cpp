#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "brainage/models.hpp"
#include "test_util.hpp"

using namespace brainage;
using brainage::testing::kind_of;

namespace {

ModelSpec tiny_3d() {
  ModelSpec spec;
  spec.block_filters = {2, 4, 8, 16};
  spec.head_units = 8;
  spec.input_shape = {16, 18, 16};
  return spec;
}

ModelSpec tiny_2d() {
  ModelSpec spec = ModelSpec::slicenet2d();
  spec.block_filters = {2, 4, 8, 16};
  spec.head_units = 16;
  spec.input_shape = {20, 24};
  return spec;
}

Volume random_volume(std::array<int, 3> dims, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 255.0f);
  Volume v(dims);
  for (auto& x : v.data) x = u(rng);
  return v;
}

Slice random_slice(int rows, int cols, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 255.0f);
  Slice s;
  s.rows = rows;
  s.cols = cols;
  s.data.resize(static_cast<std::size_t>(rows * cols));
  for (auto& x : s.data) x = u(rng);
  return s;
}

// Zeroes the output weights so every prediction is the output bias mapped to years.
void pin_output(Model& model, float bias) {
  auto& params = model.parameters();
  params[params.size() - 2].data().setZero();
  params.back().data()(0) = bias;
}

double sort_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

}  // namespace

TEST_CASE("3D architecture") {
  const ModelSpec spec = ModelSpec::brainnet3d();
  const ShapeTrace t = trace_shapes(spec);
  CHECK(t.block_outputs == std::vector<std::vector<Index>>{{45, 54, 45}, {22, 27, 22}, {11, 13, 11}, {5, 6, 5}});
  CHECK(t.gap_features == 128);
  CHECK(t.head_units == 128);
  CHECK(t.outputs == 1);

  const Model model(spec, 1);
  REQUIRE(model.layers().size() == 10);
  CHECK(model.layers()[0].name == "block1.conv1");
  CHECK(model.layers()[0].weight_shape == Shape{16, 1, 3, 3, 3});
  CHECK(model.parameters()[0].size() + model.parameters()[1].size() == 448);
  CHECK(model.layers()[7].weight_shape == Shape{128, 128, 3, 3, 3});
  CHECK(model.layers()[8].name == "head.dense");
  CHECK(model.layers()[8].weight_shape == Shape{128, 128});
  CHECK(model.layers()[9].weight_shape == Shape{128, 1});
  // 448 + 6928 + 13856 + 27680 + 55360 + 110656 + 221312 + 442496 + 16512 + 129
  CHECK(model.parameter_count() == 895377);
  for (std::size_t i = 1; i < model.parameters().size(); i += 2) CHECK(model.parameters()[i].data().isZero());
}

TEST_CASE("3D forward at full resolution") {
  const Model model(ModelSpec::brainnet3d(), 2);
  Tensor<float> x({1, 1, 91, 109, 91});
  const Volume v = random_volume({91, 109, 91}, 3);
  std::copy(v.data.begin(), v.data.end(), x.data().data());
  ShapeTrace trace;
  Rng rng(0);
  const auto out = model.forward(x, Mode::Infer, rng, &trace);
  CHECK(out.shape() == Shape{1, 1});
  CHECK(std::isfinite(out.item()));
  CHECK(trace.block_outputs == trace_shapes(model.spec()).block_outputs);
  CHECK(trace.gap_features == 128);
}

TEST_CASE("2D architecture") {
  const ModelSpec spec = ModelSpec::slicenet2d();
  const ShapeTrace t = trace_shapes(spec);
  CHECK(t.block_outputs == std::vector<std::vector<Index>>{{43, 52}, {21, 26}, {10, 13}, {5, 6}});
  CHECK(t.head_units == 1024);
  const Model model(spec, 1);
  CHECK(model.layers()[0].weight_shape == Shape{16, 1, 3, 3});
  CHECK(model.layers()[8].weight_shape == Shape{128, 1024});
  CHECK(model.layers()[9].weight_shape == Shape{1024, 1});
  CHECK(model.parameter_count() == 426353);

  Tensor<float> x({3, 1, 86, 104});
  Rng rng(0);
  ShapeTrace trace;
  const auto out = model.forward(x, Mode::Train, rng, &trace);
  CHECK(out.shape() == Shape{3, 1});
  CHECK(trace.head_units == 1024);
  CHECK(trace.block_outputs == t.block_outputs);
}

TEST_CASE("spec validation and JSON") {
  CHECK_NOTHROW(ModelSpec::brainnet3d().validate());
  CHECK_NOTHROW(ModelSpec::slicenet2d().validate());
  CHECK(model_kind_from_string("slicenet2d") == ModelKind::SliceNet2D);
  CHECK(to_string(ModelKind::BrainNet3D) == "brainnet3d");
  CHECK(kind_of([] { model_kind_from_string("resnet"); }) == ErrorKind::BadSpec);

  auto bad = [](auto mutate) {
    ModelSpec s;
    mutate(s);
    return kind_of([&] { s.validate(); });
  };
  CHECK(bad([](ModelSpec& s) { s.block_filters.clear(); }) == ErrorKind::BadSpec);
  CHECK(bad([](ModelSpec& s) { s.block_filters = {16, 24}; }) == ErrorKind::BadSpec);
  CHECK(bad([](ModelSpec& s) { s.dropout_p = 1.0; }) == ErrorKind::BadSpec);
  CHECK(bad([](ModelSpec& s) { s.head_units = 0; }) == ErrorKind::BadSpec);
  CHECK(bad([](ModelSpec& s) { s.kernel = 4; }) == ErrorKind::BadSpec);
  CHECK(bad([](ModelSpec& s) { s.input_shape = {86, 104}; }) == ErrorKind::BadSpec);
  CHECK(bad([](ModelSpec& s) { s.input_shape = {12, 12, 12}; }) == ErrorKind::BadSpec);
  CHECK(bad([](ModelSpec& s) { s.target_scale = 0.0; }) == ErrorKind::BadSpec);
  CHECK(bad([](ModelSpec& s) { s.input_downsample = 0; }) == ErrorKind::BadSpec);
  CHECK(kind_of([] { Model(ModelSpec{.kind = ModelKind::SliceNet2D}, 0); }) == ErrorKind::BadSpec);

  ModelSpec s = tiny_2d();
  s.target_offset = 73.25;
  s.target_scale = 8.5;
  s.input_downsample = 2;
  const ModelSpec back = nlohmann::json(s).get<ModelSpec>();
  CHECK(nlohmann::json(back) == nlohmann::json(s));
  CHECK(back.kind == ModelKind::SliceNet2D);
  CHECK(back.target_offset == 73.25);
  CHECK(nlohmann::json::parse(R"({"kind":"slicenet2d"})").get<ModelSpec>().head_units == 1024);
  CHECK(kind_of([] { nlohmann::json::parse(R"({"kind":"slicenet2d","head_units":"wide"})").get<ModelSpec>(); }) ==
        ErrorKind::BadSpec);
}

TEST_CASE("initialisation and determinism") {
  const Model a(tiny_3d(), 7), b(tiny_3d(), 7), c(tiny_3d(), 8);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) CHECK(a.parameters()[i].data() == b.parameters()[i].data());
  CHECK(a.parameters()[0].data() != c.parameters()[0].data());
  // He-uniform bound sqrt(6 / fan_in) for each weight tensor.
  for (std::size_t l = 0; l < a.layers().size(); ++l) {
    const auto& w = a.layers()[l].weight_shape;
    const double fan_in = a.layers()[l].type == "dense" ? static_cast<double>(w[0]) : static_cast<double>(numel(w) / w[0]);
    CHECK(a.parameters()[2 * l].data().cwiseAbs().maxCoeff() <= std::sqrt(6.0 / fan_in));
  }

  const Volume v = random_volume({16, 18, 16}, 4);
  const auto p1 = predict_volume_3d(a, v, "s");
  const auto p2 = predict_volume_3d(a, v, "s");
  CHECK(p1.predicted_age == p2.predicted_age);
  CHECK(std::isfinite(p1.predicted_age));
  CHECK(p1.subject_id == "s");
  CHECK_FALSE(p1.slice_predictions);

  Tensor<float> batch({3, 1, 16, 18, 16});
  for (Index i = 0; i < batch.size(); ++i) batch.data()(i) = v.data[static_cast<std::size_t>(i % v.size())];
  const auto out = a.forward(batch);
  CHECK(out.shape() == Shape{3, 1});
  CHECK(out.data()(0) == out.data()(1));
  CHECK(std::abs(out.data()(0) - p1.predicted_age) < 1e-4);

  const auto doubled = a.cast<double>();
  Tensor<double> xd(batch.shape(), batch.data().cast<double>());
  CHECK(std::abs(doubled.forward(xd).data()(0) - out.data()(0)) < 1e-4);
}

TEST_CASE("zero-weight output layer predicts its bias") {
  Model model(tiny_3d(), 9);
  pin_output(model, 42.5f);
  for (std::uint32_t s = 0; s < 3; ++s) CHECK(predict_volume_3d(model, random_volume({16, 18, 16}, s)).predicted_age == 42.5);
  model.spec().target_offset = 70.0;
  model.spec().target_scale = 10.0;
  pin_output(model, 0.25f);
  CHECK(predict_volume_3d(model, random_volume({16, 18, 16}, 5)).predicted_age == 72.5);
  CHECK(kind_of([&] { predict_volume_3d(model, random_volume({16, 16, 16}, 5)); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("median") {
  CHECK(median(std::vector<double>{5, 3, 4}) == 4.0);
  CHECK(median(std::vector<double>{1, 2, 3, 4}) == 2.5);
  CHECK(median(std::vector<double>(40, 70.0)) == 70.0);
  CHECK(kind_of([] { median(std::vector<double>{}); }) == ErrorKind::EmptyInput);

  SUBCASE("every sequence over a three-letter alphabet up to length 8") {
    int checked = 0;
    for (int n = 1; n <= 8; ++n) {
      const int total = static_cast<int>(std::pow(3, n));
      for (int code = 0; code < total; ++code) {
        std::vector<double> v;
        for (int i = 0, c = code; i < n; ++i, c /= 3) v.push_back(c % 3);
        CHECK(median(v) == sort_median(v));
        ++checked;
      }
    }
    CHECK(checked == 9840);
  }
  SUBCASE("every permutation of distinct values up to length 8") {
    for (int n = 1; n <= 8; ++n) {
      std::vector<double> v(static_cast<std::size_t>(n));
      std::iota(v.begin(), v.end(), 1.0);
      const double want = sort_median(v);
      do {
        REQUIRE(median(v) == want);
      } while (std::next_permutation(v.begin(), v.end()));
    }
  }
  SUBCASE("random 40-vectors, shifts and permutations") {
    std::mt19937_64 rng(10);
    std::uniform_int_distribution<int> age(40, 100);
    for (int trial = 0; trial < 10000; ++trial) {
      std::vector<double> v(40);
      for (auto& x : v) x = age(rng) + 0.25 * (rng() % 4);
      const double m = median(v);
      REQUIRE(m == sort_median(v));
      std::shuffle(v.begin(), v.end(), rng);
      REQUIRE(median(v) == m);
      for (auto& x : v) x += 3.5;
      REQUIRE(median(v) == m + 3.5);
    }
  }
}

TEST_CASE("sliced subject prediction") {
  Model model(tiny_2d(), 11);
  std::vector<Slice> slices;
  for (std::uint32_t i = 0; i < 6; ++i) slices.push_back(random_slice(20, 24, i));

  const auto p = predict_subject_sliced(model, slices, 6, "sub");
  REQUIRE(p.slice_predictions);
  CHECK(p.slice_predictions->size() == 6);
  CHECK(p.predicted_age == sort_median(*p.slice_predictions));
  CHECK(p.subject_id == "sub");
  for (std::size_t i = 0; i < slices.size(); ++i)
    CHECK((*p.slice_predictions)[i] ==
          doctest::Approx(predict_subject_sliced(model, std::span(slices).subspan(i, 1), 1).predicted_age).epsilon(1e-5));

  CHECK(kind_of([&] { predict_subject_sliced(model, slices, 40); }) == ErrorKind::WrongSliceCount);
  slices[2] = random_slice(20, 23, 2);
  CHECK(kind_of([&] { predict_subject_sliced(model, slices, 6); }) == ErrorKind::ShapeMismatch);

  pin_output(model, 70.0f);
  std::vector<Slice> forty;
  for (std::uint32_t i = 0; i < 40; ++i) forty.push_back(random_slice(20, 24, 100 + i));
  const auto flat = predict_subject_sliced(model, forty, 40);
  CHECK(flat.predicted_age == 70.0);
  CHECK(std::all_of(flat.slice_predictions->begin(), flat.slice_predictions->end(), [](double a) { return a == 70.0; }));
}

TEST_CASE("input preparation") {
  Volume v({4, 4, 4});
  std::iota(v.data.begin(), v.data.end(), 0.0f);
  const Volume half = block_average(v, 2);
  CHECK(half.dims == std::array<int, 3>{2, 2, 2});
  // Block (0,0,0) holds indices {0,1,4,5,16,17,20,21}.
  CHECK(half(0, 0, 0) == 10.5f);
  CHECK(half(1, 1, 1) == 10.5f + 32 + 8 + 2);
  CHECK(half.spacing[0] == 2 * v.spacing[0]);
  CHECK(block_average(Volume({91, 109, 91}), 4).dims == std::array<int, 3>{22, 27, 22});
  CHECK(block_average(v, 1).data == v.data);

  ModelSpec spec3 = ModelSpec::brainnet3d();
  spec3.input_downsample = 4;
  spec3.input_shape = {22, 27, 22};
  CHECK(prepare_volume_input(spec3, Volume({91, 109, 91})).dims == std::array<int, 3>{22, 27, 22});
  CHECK(kind_of([&] { prepare_volume_input(spec3, Volume({80, 109, 91})); }) == ErrorKind::ShapeMismatch);

  ModelSpec spec2 = ModelSpec::slicenet2d();
  spec2.input_downsample = 2;
  spec2.input_shape = {43, 52};
  const Volume brain = random_volume({91, 109, 91}, 12);
  const auto slices = prepare_slice_inputs(spec2, brain, 40, "b");
  REQUIRE(slices.size() == 40);
  CHECK(slices[0].rows == 43);
  CHECK(slices[0].cols == 52);
  CHECK(slices[0].subject_id == "b");
  // First output pixel averages crop rows 2-3, cols 2-3 of axial slice 25.
  const float want = (brain(2, 2, 25) + brain(2, 3, 25) + brain(3, 2, 25) + brain(3, 3, 25)) / 4;
  CHECK(slices[0](0, 0) == doctest::Approx(want));
  const auto native = prepare_slice_inputs(ModelSpec::slicenet2d(), brain, 40);
  CHECK(native[39].rows == 86);
  CHECK(native[39](0, 0) == brain(2, 2, 64));
}
