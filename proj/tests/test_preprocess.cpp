#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "brainage/preprocess.hpp"
#include "test_util.hpp"

using namespace brainage;
using brainage::testing::kind_of;

namespace {

Volume from_values(const std::vector<float>& values) {
  Volume v({static_cast<int>(values.size()), 1, 1});
  v.data = values;
  return v;
}

// Brute-force linear-interpolation quantile: position level * (n - 1) into the sorted sample.
double oracle_quantile(std::vector<double> sample, double level) {
  std::sort(sample.begin(), sample.end());
  const double pos = level * static_cast<double>(sample.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= sample.size()) return sample.back();
  return sample[lo] + (pos - static_cast<double>(lo)) * (sample[lo + 1] - sample[lo]);
}

// Brute-force inverse-CDF lookup by linear scan.
double oracle_interp(const QuantileTable& t, double level) {
  for (std::size_t i = 1; i < t.size(); ++i)
    if (level < t.levels[i]) {
      const double w = (level - t.levels[i - 1]) / (t.levels[i] - t.levels[i - 1]);
      return t.values[i - 1] + w * (t.values[i] - t.values[i - 1]);
    }
  return t.values.back();
}

// Brute-force matching: count ranks directly for each voxel.
std::vector<float> oracle_match(const std::vector<float>& fg, const QuantileTable& ref) {
  std::vector<float> out;
  const double n = static_cast<double>(fg.size());
  for (float v : fg) {
    const double below = static_cast<double>(std::count_if(fg.begin(), fg.end(), [&](float x) { return x < v; }));
    const double upto = static_cast<double>(std::count_if(fg.begin(), fg.end(), [&](float x) { return x <= v; }));
    const double level = (below + (upto - 1.0)) / (2.0 * (n - 1.0));
    out.push_back(static_cast<float>(oracle_interp(ref, level)));
  }
  return out;
}

Volume random_brain(std::mt19937& rng, std::array<int, 3> dims, double gain) {
  Volume v(dims);
  std::gamma_distribution<float> dist(4.0f, 20.0f);
  for (auto& x : v.data) x = (rng() % 4 == 0) ? 0.0f : static_cast<float>(1.0 + gain * dist(rng));
  return v;
}

}  // namespace

TEST_CASE("empirical quantiles of the tiny reference sets") {
  std::vector<float> a(10), b(10);
  std::iota(a.begin(), a.end(), 0.0f);
  std::iota(b.begin(), b.end(), 10.0f);
  const auto levels = uniform_levels(11);
  const auto qa = empirical_quantiles(a, levels);
  const auto qb = empirical_quantiles(b, levels);
  CHECK(qa[5] == 4.5);
  CHECK(qb[5] == 14.5);
  CHECK((qa[5] + qb[5]) / 2 == 9.5);
  for (std::size_t i = 0; i < levels.size(); ++i) {
    CHECK(qa[i] == doctest::Approx(oracle_quantile({a.begin(), a.end()}, levels[i])));
  }
}

TEST_CASE("reference table averages per-volume quantiles") {
  SUBCASE("constant foreground") {
    Volume v({3, 3, 3});
    std::fill(v.data.begin(), v.data.end(), 7.0f);
    v.data[4] = 0.0f;
    const auto t = build_reference_histogram(std::vector<Volume>{v}, 5);
    CHECK(t.levels == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
    for (double x : t.values) CHECK(x == 7.0);
  }
  SUBCASE("two volumes, medians average") {
    std::vector<float> a(10), b(10);
    std::iota(a.begin(), a.end(), 1.0f);
    std::iota(b.begin(), b.end(), 11.0f);
    const std::vector<Volume> vols{from_values(a), from_values(b)};
    const auto t = build_reference_histogram(vols, 11);
    CHECK(t.values[5] == 10.5);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double want = (oracle_quantile({a.begin(), a.end()}, t.levels[i]) +
                           oracle_quantile({b.begin(), b.end()}, t.levels[i])) / 2;
      CHECK(t.values[i] == doctest::Approx(want).epsilon(1e-12));
    }
  }
  SUBCASE("fifty volumes, a thousand levels") {
    std::mt19937 rng(11);
    std::vector<Volume> vols;
    for (int i = 0; i < 50; ++i) vols.push_back(random_brain(rng, {8, 8, 8}, 0.8 + 0.01 * i));
    const auto t = build_reference_histogram(vols, kDefaultQuantiles);
    REQUIRE(t.size() == 1000);
    CHECK(t.levels.front() == 0.0);
    CHECK(t.levels.back() == 1.0);
    CHECK(std::is_sorted(t.values.begin(), t.values.end()));
    CHECK(std::adjacent_find(t.levels.begin(), t.levels.end(), std::greater_equal<>()) == t.levels.end());
  }
  SUBCASE("errors") {
    CHECK(kind_of([] { build_reference_histogram(std::vector<Volume>{}, 10); }) == ErrorKind::EmptyInput);
    CHECK(kind_of([] { build_reference_histogram(std::vector<Volume>{Volume({2, 2, 2})}, 10); }) ==
          ErrorKind::AllZeroVolume);
  }
}

TEST_CASE("histogram matching of a four-element foreground") {
  const QuantileTable ref{uniform_levels(4), {10, 20, 30, 40}};
  const auto out = histogram_match(from_values({1, 2, 3, 4}), ref);
  CHECK(out.data == std::vector<float>{10, 20, 30, 40});
  const auto with_bg = histogram_match(from_values({3, 0, 1, 4, 0, 2}), ref);
  CHECK(with_bg.data == std::vector<float>{30, 0, 10, 40, 0, 20});
}

TEST_CASE("exhaustive small foregrounds agree with brute-force CDF mapping") {
  const std::vector<QuantileTable> refs{
      {uniform_levels(2), {5.0, 9.0}},
      {uniform_levels(3), {1.0, 1.0, 8.0}},
      {uniform_levels(4), {10, 20, 30, 40}},
      {{0.0, 0.1, 0.7, 1.0}, {-3.0, 2.5, 2.75, 100.0}},
  };
  int cases = 0;
  for (int n = 2; n <= 4; ++n) {
    const int combos = static_cast<int>(std::pow(4, n));
    for (int code = 0; code < combos; ++code) {
      std::vector<float> fg;
      for (int i = 0, c = code; i < n; ++i, c /= 4) fg.push_back(static_cast<float>(1 + c % 4));
      if (*std::min_element(fg.begin(), fg.end()) == *std::max_element(fg.begin(), fg.end())) {
        CHECK(kind_of([&] { histogram_match(from_values(fg), refs[0]); }) == ErrorKind::DegenerateVolume);
        continue;
      }
      for (const auto& ref : refs) {
        CHECK(histogram_match(from_values(fg), ref).data == oracle_match(fg, ref));
        ++cases;
      }
    }
  }
  CHECK(cases > 1000);
}

TEST_CASE("self-matching stays within one quantization step") {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Volume v({6, 5, 4});
    const int distinct = 2 + static_cast<int>(rng() % 12);
    for (auto& x : v.data) x = (rng() % 5 == 0) ? 0.0f : static_cast<float>(3 * (1 + rng() % distinct));
    const auto fg = sorted_foreground(v);
    std::vector<float> uniq = fg;
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    if (uniq.size() < 2) continue;
    const auto ref = build_reference_histogram(std::vector<Volume>{v}, static_cast<int>(uniq.size()));
    const auto out = histogram_match(v, ref);
    double step = 0.0;
    for (std::size_t i = 1; i < uniq.size(); ++i) step = std::max(step, static_cast<double>(uniq[i] - uniq[i - 1]));
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(out.data[i] - v.data[i]) <= step + 1e-4);
  }
}

TEST_CASE("matched quantiles follow the reference, monotonically and idempotently") {
  std::mt19937 rng(9);
  std::vector<Volume> refs;
  for (int i = 0; i < 5; ++i) refs.push_back(random_brain(rng, {10, 10, 10}, 1.0 + 0.1 * i));
  const auto ref = build_reference_histogram(refs, 200);
  for (int trial = 0; trial < 10; ++trial) {
    const Volume v = random_brain(rng, {9, 11, 7}, 0.5 + 0.2 * trial);
    const Volume out = histogram_match(v, ref);
    const auto got = empirical_quantiles(sorted_foreground(out), ref.levels);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(got[i] - ref.values[i]) <= 2 * ref.max_step());
    for (std::size_t i = 0; i < v.size(); ++i) {
      CHECK((v.data[i] == 0.0f) == (out.data[i] == 0.0f));
      const std::size_t j = rng() % v.size();
      if (v.data[i] <= v.data[j]) CHECK(out.data[i] <= out.data[j]);
    }
    const Volume again = histogram_match(out, ref);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(again.data[i] - out.data[i]) <= ref.max_step() + 1e-3);
  }
}

TEST_CASE("min-max scaling") {
  CHECK(minmax_normalize(from_values({2, 4, 6})).data == std::vector<float>{0.0f, 127.5f, 255.0f});
  std::vector<float> ramp(256);
  std::iota(ramp.begin(), ramp.end(), 0.0f);
  CHECK(minmax_normalize(from_values(ramp)).data == ramp);
  CHECK(kind_of([] { minmax_normalize(from_values({3, 3, 3})); }) == ErrorKind::DegenerateVolume);

  std::mt19937 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const Volume v = random_brain(rng, {7, 6, 5}, 1.0 + trial);
    const Volume once = minmax_normalize(v);
    const auto [lo, hi] = std::minmax_element(once.data.begin(), once.data.end());
    CHECK(*lo == 0.0f);
    CHECK(*hi == 255.0f);
    CHECK(minmax_normalize(once).data == once.data);
  }
}

TEST_CASE("central slice selection") {
  Volume v({3, 2, 91});
  for (int z = 0; z < 91; ++z) v(1, 1, z) = static_cast<float>(z);
  auto slices = extract_center_slices(v, 40, "s1");
  REQUIRE(slices.size() == 40);
  CHECK(slices.front().source_index == 25);
  CHECK(slices.back().source_index == 64);
  for (std::size_t i = 0; i < slices.size(); ++i) {
    CHECK(slices[i].source_index == 25 + static_cast<int>(i));
    CHECK(slices[i](1, 1) == static_cast<float>(25 + i));
    CHECK(slices[i].rows == 3);
    CHECK(slices[i].cols == 2);
    CHECK(slices[i].subject_id == "s1");
  }
  CHECK(extract_center_slices(v, 1).front().source_index == 45);
  Volume stack({2, 2, 40});
  const auto all = extract_center_slices(stack, 40);
  CHECK(all.front().source_index == 0);
  CHECK(all.back().source_index == 39);
  CHECK(kind_of([&] { extract_center_slices(stack, 41); }) == ErrorKind::KTooLarge);
  CHECK(kind_of([&] { extract_center_slices(stack, 0); }) == ErrorKind::KTooLarge);
}

TEST_CASE("center crop") {
  Slice s;
  s.rows = 91;
  s.cols = 109;
  s.data.resize(91 * 109);
  std::iota(s.data.begin(), s.data.end(), 0.0f);
  const Slice c = center_crop(s);
  CHECK(c.rows == 86);
  CHECK(c.cols == 104);
  for (int r = 0; r < 86; ++r)
    for (int k = 0; k < 104; ++k) CHECK(c(r, k) == s(r + 2, k + 2));
  CHECK(center_crop(s, 91, 109).data == s.data);

  Slice small;
  small.rows = small.cols = 3;
  small.data = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  CHECK(center_crop(small, 1, 1).data == std::vector<float>{5});
  CHECK(kind_of([&] { center_crop(small, 4, 1); }) == ErrorKind::TargetTooLarge);
}

TEST_CASE("quantile table CSV") {
  const QuantileTable t{uniform_levels(7), {0.5, 1, 1, 2.25, 3, 1e6, 1e6 + 0.1}};
  const auto path = std::filesystem::temp_directory_path() / "brainage_qt.csv";
  write_quantile_table(t, path);
  const auto back = read_quantile_table(path);
  CHECK(back.levels == t.levels);
  CHECK(back.values == t.values);
  std::filesystem::remove(path);
}
