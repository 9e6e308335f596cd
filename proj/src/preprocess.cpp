#include "brainage/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "brainage/error.hpp"
#include "brainage/io.hpp"

namespace brainage {

double QuantileTable::interp(double level) const {
  level = std::clamp(level, 0.0, 1.0);
  auto it = std::upper_bound(levels.begin(), levels.end(), level);
  if (it == levels.end()) return values.back();
  if (it == levels.begin()) return values.front();
  const auto hi = static_cast<std::size_t>(it - levels.begin());
  const std::size_t lo = hi - 1;
  const double t = (level - levels[lo]) / (levels[hi] - levels[lo]);
  return values[lo] + t * (values[hi] - values[lo]);
}

double QuantileTable::max_step() const {
  double step = 0.0;
  for (std::size_t i = 1; i < values.size(); ++i) step = std::max(step, values[i] - values[i - 1]);
  return step;
}

std::vector<double> uniform_levels(int q) {
  std::vector<double> levels(static_cast<std::size_t>(q));
  for (int i = 0; i < q; ++i) levels[i] = static_cast<double>(i) / (q - 1);
  levels.back() = 1.0;
  return levels;
}

std::vector<float> sorted_foreground(const Volume& v) {
  std::vector<float> fg;
  fg.reserve(v.size());
  for (float x : v.data)
    if (x != 0.0f) fg.push_back(x);
  std::sort(fg.begin(), fg.end());
  return fg;
}

std::vector<double> empirical_quantiles(std::span<const float> sorted, std::span<const double> levels) {
  if (sorted.empty()) fail(ErrorKind::EmptyInput, "quantiles of an empty sample");
  std::vector<double> out(levels.size());
  const double last = static_cast<double>(sorted.size() - 1);
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const double pos = std::clamp(levels[i], 0.0, 1.0) * last;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double t = pos - static_cast<double>(lo);
    out[i] = static_cast<double>(sorted[lo]) + t * (static_cast<double>(sorted[hi]) - sorted[lo]);
  }
  return out;
}

QuantileTable build_reference_histogram(std::span<const Volume> volumes, int q) {
  if (volumes.empty()) fail(ErrorKind::EmptyInput, "no reference volumes");
  if (q < 2) fail(ErrorKind::BadConfig, "quantile count must be >= 2");
  QuantileTable table;
  table.levels = uniform_levels(q);
  table.values.assign(table.levels.size(), 0.0);
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    const auto fg = sorted_foreground(volumes[i]);
    if (fg.empty()) fail(ErrorKind::AllZeroVolume, "reference volume " + std::to_string(i) + " has no foreground");
    const auto quantiles = empirical_quantiles(fg, table.levels);
    for (std::size_t j = 0; j < quantiles.size(); ++j) table.values[j] += quantiles[j];
  }
  for (double& value : table.values) value /= static_cast<double>(volumes.size());
  // Averages of monotone sequences are monotone up to rounding.
  for (std::size_t j = 1; j < table.values.size(); ++j)
    table.values[j] = std::max(table.values[j], table.values[j - 1]);
  return table;
}

Volume histogram_match(const Volume& volume, const QuantileTable& ref) {
  const auto fg = sorted_foreground(volume);
  if (fg.size() < 2 || fg.front() == fg.back())
    fail(ErrorKind::DegenerateVolume, "foreground needs at least two distinct values");

  std::vector<float> distinct;
  std::vector<float> mapped;
  const double denom = 2.0 * static_cast<double>(fg.size() - 1);
  for (std::size_t first = 0; first < fg.size();) {
    std::size_t last = first;
    while (last + 1 < fg.size() && fg[last + 1] == fg[first]) ++last;
    distinct.push_back(fg[first]);
    mapped.push_back(static_cast<float>(ref.interp(static_cast<double>(first + last) / denom)));
    first = last + 1;
  }

  Volume out = volume;
  out.intensity_range.reset();
  for (float& x : out.data) {
    if (x == 0.0f) continue;
    const auto it = std::lower_bound(distinct.begin(), distinct.end(), x);
    x = mapped[static_cast<std::size_t>(it - distinct.begin())];
  }
  return out;
}

Volume minmax_normalize(const Volume& volume) {
  const auto [lo_it, hi_it] = std::minmax_element(volume.data.begin(), volume.data.end());
  if (lo_it == volume.data.end() || *lo_it == *hi_it)
    fail(ErrorKind::DegenerateVolume, "volume has zero intensity range");
  const double lo = *lo_it;
  const double scale = 255.0 / (static_cast<double>(*hi_it) - lo);
  Volume out = volume;
  for (float& x : out.data) {
    if (x == 0.0f) continue;
    x = static_cast<float>((x - lo) * scale);
  }
  // Pin the endpoints exactly against rounding in the affine map.
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    if (volume.data[i] == *lo_it) out.data[i] = 0.0f;
    if (volume.data[i] == *hi_it) out.data[i] = 255.0f;
  }
  out.intensity_range = std::pair{0.0f, 255.0f};
  return out;
}

std::vector<Slice> extract_center_slices(const Volume& volume, int k, const std::string& subject_id) {
  const int depth = volume.dims[2];
  if (k < 1 || k > depth)
    fail(ErrorKind::KTooLarge, "cannot take " + std::to_string(k) + " slices from depth " + std::to_string(depth));
  const int start = (depth - k) / 2;
  std::vector<Slice> slices;
  slices.reserve(static_cast<std::size_t>(k));
  for (int z = start; z < start + k; ++z) {
    Slice s;
    s.rows = volume.dims[0];
    s.cols = volume.dims[1];
    s.data.resize(static_cast<std::size_t>(s.rows) * s.cols);
    s.source_index = z;
    s.subject_id = subject_id;
    for (int x = 0; x < s.rows; ++x)
      for (int y = 0; y < s.cols; ++y) s(x, y) = volume(x, y, z);
    slices.push_back(std::move(s));
  }
  return slices;
}

Slice center_crop(const Slice& slice, int rows, int cols) {
  if (rows < 1 || cols < 1 || rows > slice.rows || cols > slice.cols)
    fail(ErrorKind::TargetTooLarge, "crop target exceeds the slice");
  const int r0 = (slice.rows - rows) / 2;
  const int c0 = (slice.cols - cols) / 2;
  Slice out;
  out.rows = rows;
  out.cols = cols;
  out.source_index = slice.source_index;
  out.subject_id = slice.subject_id;
  out.data.resize(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out(r, c) = slice(r0 + r, c0 + c);
  return out;
}

void write_quantile_table(const QuantileTable& table, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "level,value\n";
  for (std::size_t i = 0; i < table.size(); ++i)
    os << format_double(table.levels[i]) << ',' << format_double(table.values[i]) << '\n';
  write_text_atomic(path, os.str());
}

QuantileTable read_quantile_table(const std::filesystem::path& path) {
  std::istringstream is(read_text(path));
  std::string line;
  if (!std::getline(is, line) || split_csv_line(line) != std::vector<std::string>{"level", "value"})
    fail(ErrorKind::BadConfig, "quantile table header must be level,value");
  QuantileTable table;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 2) fail(ErrorKind::BadConfig, "malformed quantile row: " + line);
    try {
      table.levels.push_back(std::stod(fields[0]));
      table.values.push_back(std::stod(fields[1]));
    } catch (const std::exception&) {
      fail(ErrorKind::BadConfig, "malformed quantile row: " + line);
    }
  }
  if (table.size() < 2 || table.levels.front() != 0.0 || table.levels.back() != 1.0)
    fail(ErrorKind::BadConfig, "quantile levels must run from 0 to 1");
  for (std::size_t i = 1; i < table.size(); ++i)
    if (!(table.levels[i] > table.levels[i - 1]) || table.values[i] < table.values[i - 1])
      fail(ErrorKind::BadConfig, "quantile table is not monotone");
  return table;
}

}  // namespace brainage
