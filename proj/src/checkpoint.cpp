#include "brainage/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "brainage/io.hpp"

namespace brainage {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

Checkpoint Checkpoint::fresh(Model model, LrSchedule schedule) {
  Checkpoint ckpt;
  for (const auto& p : model.parameters()) ckpt.adam.emplace_back(p.size());
  ckpt.model = std::move(model);
  ckpt.schedule = schedule;
  return ckpt;
}

namespace {

void append_floats(std::vector<std::uint8_t>& out, const Eigen::VectorXf& values) {
  const auto offset = out.size();
  out.resize(offset + static_cast<std::size_t>(values.size()) * sizeof(float));
  std::memcpy(out.data() + offset, values.data(), static_cast<std::size_t>(values.size()) * sizeof(float));
}

nlohmann::json shape_json(const Shape& shape) {
  auto j = nlohmann::json::array();
  for (Index e : shape) j.push_back(e);
  return j;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  const auto& params = ckpt.model.parameters();
  if (ckpt.adam.size() != params.size()) fail(ErrorKind::BadCheckpoint, "Adam state count does not match parameters");

  nlohmann::json header;
  header["model"] = ckpt.model.spec();
  header["layers"] = nlohmann::json::array();
  header["tensors"] = nlohmann::json::array();
  for (const auto& layer : ckpt.model.layers()) {
    header["layers"].push_back({{"name", layer.name},
                                {"type", layer.type},
                                {"weight_shape", shape_json(layer.weight_shape)},
                                {"bias_shape", shape_json(layer.bias_shape)}});
    header["tensors"].push_back({{"name", layer.name + ".weight"}, {"shape", shape_json(layer.weight_shape)}});
    header["tensors"].push_back({{"name", layer.name + ".bias"}, {"shape", shape_json(layer.bias_shape)}});
  }
  header["schedule"] = {{"initial_lr", ckpt.schedule.initial_lr},
                        {"total_epochs", ckpt.schedule.total_epochs},
                        {"floor", ckpt.schedule.floor}};
  const AdamState<float> defaults;
  const auto& first = ckpt.adam.empty() ? defaults : ckpt.adam.front();
  header["adam"] = {{"beta1", first.beta1}, {"beta2", first.beta2}, {"epsilon", first.epsilon}, {"step", first.t}};
  header["epoch"] = ckpt.epoch;
  header["slices_per_subject"] = ckpt.slices_per_subject;
  header["best_val_mae"] = std::isfinite(ckpt.best_val_mae) ? nlohmann::json(ckpt.best_val_mae) : nlohmann::json(nullptr);

  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  const auto length = static_cast<std::uint32_t>(text.size());
  out.resize(8);
  std::memcpy(out.data() + 4, &length, 4);
  out.insert(out.end(), text.begin(), text.end());
  for (std::size_t i = 0; i < params.size(); ++i) {
    append_floats(out, params[i].data());
    append_floats(out, ckpt.adam[i].m);
    append_floats(out, ckpt.adam[i].v);
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    fail(ErrorKind::BadCheckpoint, "missing CXA1 magic");
  std::uint32_t length;
  std::memcpy(&length, bytes.data() + 4, 4);
  if (bytes.size() - 8 < length) fail(ErrorKind::BadCheckpoint, "header runs past the end of the file");

  Checkpoint ckpt;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + length);
    ckpt.model = Model(header.at("model").get<ModelSpec>(), 0);
    const auto& sched = header.at("schedule");
    ckpt.schedule = {sched.at("initial_lr").get<double>(), sched.at("total_epochs").get<int>(),
                     sched.at("floor").get<double>()};
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.slices_per_subject = header.at("slices_per_subject").get<int>();
    if (!header.at("best_val_mae").is_null()) ckpt.best_val_mae = header.at("best_val_mae").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::BadCheckpoint, std::string("header: ") + e.what());
  }

  auto& params = ckpt.model.parameters();
  const auto& tensors = header["tensors"];
  if (!tensors.is_array() || tensors.size() != params.size())
    fail(ErrorKind::BadCheckpoint, "tensor list does not match the model layers");
  const auto& adam = header["adam"];
  std::size_t offset = 8 + length;
  auto read_floats = [&](Eigen::VectorXf& dst, Index count) {
    const std::size_t nbytes = static_cast<std::size_t>(count) * sizeof(float);
    if (bytes.size() - offset < nbytes) fail(ErrorKind::BadCheckpoint, "payload is truncated");
    dst.resize(count);
    std::memcpy(dst.data(), bytes.data() + offset, nbytes);
    offset += nbytes;
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    Shape shape;
    try {
      shape = tensors[i].at("shape").get<Shape>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::BadCheckpoint, std::string("tensor entry: ") + e.what());
    }
    if (shape != params[i].shape()) fail(ErrorKind::BadCheckpoint, "tensor " + std::to_string(i) + " has the wrong shape");
    read_floats(params[i].data(), params[i].size());
    AdamState<float> state;
    read_floats(state.m, params[i].size());
    read_floats(state.v, params[i].size());
    state.beta1 = adam.value("beta1", 0.9);
    state.beta2 = adam.value("beta2", 0.999);
    state.epsilon = adam.value("epsilon", 1e-8);
    state.t = adam.value("step", 0LL);
    ckpt.adam.push_back(std::move(state));
  }
  if (offset != bytes.size()) fail(ErrorKind::BadCheckpoint, "trailing bytes after payload");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace brainage
