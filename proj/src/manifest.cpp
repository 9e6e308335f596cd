#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "brainage/io.hpp"
#include "brainage/pipeline.hpp"

namespace brainage {

namespace fs = std::filesystem;

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  fail(ErrorKind::BadManifest, "unknown split '" + name + "'");
}

std::vector<SubjectRecord> Manifest::subset(Split split) const {
  std::vector<SubjectRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [split](const SubjectRecord& r) { return r.split == split; });
  return out;
}

fs::path Manifest::resolve(const SubjectRecord& record) const {
  return record.volume_path.is_absolute() ? record.volume_path : base_dir / record.volume_path;
}

Manifest read_manifest(const fs::path& path, bool check_paths) {
  std::istringstream is(read_text(path));
  std::string line;
  if (!std::getline(is, line) ||
      split_csv_line(line) != std::vector<std::string>{"subject_id", "age", "volume_path", "split"})
    fail(ErrorKind::BadManifest, path.string() + ": header must be subject_id,age,volume_path,split");
  Manifest manifest;
  manifest.base_dir = path.parent_path();
  std::set<std::string> ids;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() != 4) fail(ErrorKind::BadManifest, where + ": expected 4 fields");
    SubjectRecord r;
    r.subject_id = fields[0];
    try {
      std::size_t used = 0;
      r.age = std::stod(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("age");
    } catch (const std::exception&) {
      fail(ErrorKind::BadManifest, where + ": bad age '" + fields[1] + "'");
    }
    if (!(r.age >= 18.0 && r.age <= 120.0)) fail(ErrorKind::BadManifest, where + ": age outside [18, 120]");
    r.volume_path = fields[2];
    r.split = split_from_string(fields[3]);
    if (r.subject_id.empty() || !ids.insert(r.subject_id).second)
      fail(ErrorKind::BadManifest, where + ": empty or duplicate subject_id");
    if (check_paths && !fs::exists(manifest.resolve(r)))
      fail(ErrorKind::IoFailure, where + ": missing volume " + manifest.resolve(r).string());
    manifest.records.push_back(std::move(r));
  }
  if (manifest.records.empty()) fail(ErrorKind::EmptyManifest, path.string() + " lists no subjects");
  return manifest;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
  std::ostringstream os;
  os << "subject_id,age,volume_path,split\n";
  for (const auto& r : manifest.records)
    os << r.subject_id << ',' << format_double(r.age) << ',' << r.volume_path.generic_string() << ','
       << to_string(r.split) << '\n';
  write_text_atomic(path, os.str());
}

Manifest split_manifest(std::vector<SubjectRecord> records, double train_fraction, std::uint64_t seed) {
  if (records.empty()) fail(ErrorKind::EmptyManifest, "nothing to split");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail(ErrorKind::BadConfig, "train_fraction must lie in (0, 1)");
  for (const auto& r : records)
    if (r.split == Split::Test) fail(ErrorKind::BadManifest, "test-cohort subject " + r.subject_id + " cannot be split");

  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::lround(static_cast<double>(records.size()) * train_fraction));
  for (std::size_t i = 0; i < order.size(); ++i) records[order[i]].split = i < n_train ? Split::Train : Split::Val;

  Manifest manifest;
  manifest.records = std::move(records);
  return manifest;
}

}  // namespace brainage
