#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "brainage/io.hpp"
#include "brainage/nifti.hpp"
#include "brainage/pipeline.hpp"

namespace brainage {

TrainConfig TrainConfig::defaults_3d() {
  TrainConfig cfg;
  cfg.model = ModelSpec::brainnet3d();
  cfg.epochs = 80;
  cfg.batch_size = 10;
  cfg.schedule = {1e-3, 80, 0.0};
  return cfg;
}

TrainConfig TrainConfig::defaults_2d() {
  TrainConfig cfg;
  cfg.model = ModelSpec::slicenet2d();
  cfg.epochs = 50;
  cfg.batch_size = 32;
  cfg.schedule = {1e-4, 50, 0.0};
  cfg.augment_enabled = false;
  return cfg;
}

void TrainConfig::validate() const {
  model.validate();
  augment.validate();
  if (epochs < 1) fail(ErrorKind::BadConfig, "epochs must be >= 1");
  if (batch_size < 1) fail(ErrorKind::BadConfig, "batch_size must be >= 1");
  if (!(schedule.initial_lr > 0.0) || schedule.total_epochs < 1 || !(schedule.floor >= 0.0))
    fail(ErrorKind::BadConfig, "schedule needs initial_lr > 0, total_epochs >= 1, floor >= 0");
  if (epochs > schedule.total_epochs) fail(ErrorKind::BadConfig, "epochs exceed the schedule horizon");
  if (slices_per_subject < 1) fail(ErrorKind::BadConfig, "slices_per_subject must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& cfg) {
  j = nlohmann::json{{"model", cfg.model},
                     {"epochs", cfg.epochs},
                     {"batch_size", cfg.batch_size},
                     {"schedule",
                      {{"initial_lr", cfg.schedule.initial_lr},
                       {"total_epochs", cfg.schedule.total_epochs},
                       {"floor", cfg.schedule.floor}}},
                     {"augment", cfg.augment},
                     {"augment_enabled", cfg.augment_enabled},
                     {"seed", cfg.seed},
                     {"slices_per_subject", cfg.slices_per_subject}};
}

void from_json(const nlohmann::json& j, TrainConfig& cfg) {
  try {
    const auto kind = j.contains("model") ? model_kind_from_string(j.at("model").at("kind").get<std::string>())
                                          : ModelKind::BrainNet3D;
    cfg = kind == ModelKind::BrainNet3D ? TrainConfig::defaults_3d() : TrainConfig::defaults_2d();
    if (j.contains("model")) cfg.model = j.at("model").get<ModelSpec>();
    if (j.contains("epochs")) {
      cfg.epochs = j.at("epochs").get<int>();
      cfg.schedule.total_epochs = cfg.epochs;
    }
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      cfg.schedule.initial_lr = s.value("initial_lr", cfg.schedule.initial_lr);
      cfg.schedule.total_epochs = s.value("total_epochs", cfg.schedule.total_epochs);
      cfg.schedule.floor = s.value("floor", cfg.schedule.floor);
    }
    if (j.contains("augment")) cfg.augment = j.at("augment").get<AugmentConfig>();
    if (j.contains("augment_enabled")) cfg.augment_enabled = j.at("augment_enabled").get<bool>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("slices_per_subject")) cfg.slices_per_subject = j.at("slices_per_subject").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::BadConfig, std::string("train config: ") + e.what());
  }
  cfg.validate();
}

namespace {

Grid to_grid(const Volume& v) {
  return Grid({v.dims[0], v.dims[1], v.dims[2]},
              Eigen::Map<const Eigen::VectorXf>(v.data.data(), static_cast<Index>(v.size())));
}

Grid to_grid(const Slice& s) {
  return Grid({s.rows, s.cols}, Eigen::Map<const Eigen::VectorXf>(s.data.data(), static_cast<Index>(s.data.size())));
}

/// Model-grid inputs of one split: every grid of subject i sits in [first[i], first[i + 1]).
struct SplitData {
  std::vector<Grid> grids;
  std::vector<std::size_t> owner;  // subject index per grid
  std::vector<std::size_t> first;
  std::vector<double> ages;
  std::vector<std::string> ids;
};

SplitData load_split(const Manifest& manifest, Split split, const TrainConfig& cfg) {
  SplitData data;
  for (const auto& r : manifest.subset(split)) {
    const Volume volume = read_nifti(manifest.resolve(r)).volume;
    data.first.push_back(data.grids.size());
    const std::size_t subject = data.ages.size();
    if (cfg.model.kind == ModelKind::BrainNet3D) {
      data.grids.push_back(to_grid(prepare_volume_input(cfg.model, volume)));
      data.owner.push_back(subject);
    } else {
      for (const auto& s : prepare_slice_inputs(cfg.model, volume, cfg.slices_per_subject, r.subject_id)) {
        data.grids.push_back(to_grid(s));
        data.owner.push_back(subject);
      }
    }
    data.ages.push_back(r.age);
    data.ids.push_back(r.subject_id);
  }
  data.first.push_back(data.grids.size());
  return data;
}

Tensor<float> stack(const std::vector<Grid>& grids, std::span<const std::size_t> which) {
  Shape shape{static_cast<Index>(which.size()), 1};
  const auto& g0 = grids[which.front()].shape();
  shape.insert(shape.end(), g0.begin(), g0.end());
  Tensor<float> batch(shape);
  const Index stride = grids[which.front()].size();
  for (std::size_t i = 0; i < which.size(); ++i) batch.data().segment(static_cast<Index>(i) * stride, stride) = grids[which[i]].data();
  return batch;
}

/// Subject-level validation MAE (median-fused for the 2D model) and, for 2D, the per-slice MAE.
std::pair<double, std::optional<double>> validate_split(const Model& model, const SplitData& val) {
  double fused = 0.0, per_slice = 0.0;
  for (std::size_t s = 0; s + 1 < val.first.size(); ++s) {
    std::vector<std::size_t> idx(val.first[s + 1] - val.first[s]);
    std::iota(idx.begin(), idx.end(), val.first[s]);
    const auto out = model.forward(stack(val.grids, idx));
    std::vector<double> preds(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      preds[i] = model.to_age(out.data()(static_cast<Index>(i)));
      per_slice += std::abs(preds[i] - val.ages[s]);
    }
    fused += std::abs(median(preds) - val.ages[s]);
  }
  const double mae = fused / static_cast<double>(val.ages.size());
  if (model.spec().kind == ModelKind::BrainNet3D) return {mae, std::nullopt};
  return {mae, per_slice / static_cast<double>(val.grids.size())};
}

}  // namespace

TrainResult train_model(const Manifest& manifest, const TrainConfig& cfg, std::ostream* progress) {
  cfg.validate();
  const SplitData train = load_split(manifest, Split::Train, cfg);
  const SplitData val = load_split(manifest, Split::Val, cfg);
  if (train.ages.empty()) fail(ErrorKind::EmptySplit, "no training subjects");
  if (val.ages.empty()) fail(ErrorKind::EmptySplit, "no validation subjects");

  ModelSpec spec = cfg.model;
  const double mean = std::accumulate(train.ages.begin(), train.ages.end(), 0.0) / static_cast<double>(train.ages.size());
  double var = 0.0;
  for (double a : train.ages) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / static_cast<double>(train.ages.size()));
  spec.target_offset = mean;
  spec.target_scale = sd > 1e-6 ? sd : 1.0;

  Checkpoint ckpt = Checkpoint::fresh(Model(spec, cfg.seed), cfg.schedule);
  Model& model = ckpt.model;
  ckpt.slices_per_subject = cfg.slices_per_subject;

  std::vector<float> targets(train.grids.size());
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = static_cast<float>(model.to_target(train.ages[train.owner[i]]));

  std::seed_seq shuffle_seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 1u};
  std::seed_seq dropout_seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 2u};
  Rng shuffle_rng(shuffle_seq);
  Rng dropout_rng(dropout_seq);

  TrainResult result;
  result.samples_per_epoch = train.grids.size();
  std::vector<std::uint8_t> best;
  double best_mae = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train.grids.size());
  const auto n = static_cast<std::uint64_t>(order.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg.schedule, epoch);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::span<const std::size_t> which(order.data() + b0, std::min<std::size_t>(cfg.batch_size, order.size() - b0));
      std::vector<Grid> inputs;
      for (std::size_t i : which)
        inputs.push_back(cfg.augment_enabled ? apply_augmentation(train.grids[i], cfg.augment, static_cast<std::uint64_t>(epoch) * n + i)
                                             : train.grids[i]);
      std::vector<std::size_t> all(inputs.size());
      std::iota(all.begin(), all.end(), 0);
      Tensor<float> target({static_cast<Index>(which.size())});
      for (std::size_t i = 0; i < which.size(); ++i) target.data()(static_cast<Index>(i)) = targets[which[i]];

      const auto loss = mse_loss(model.forward(stack(inputs, all), Mode::Train, dropout_rng), target);
      if (!std::isfinite(loss.item())) fail(ErrorKind::DivergedLoss, "non-finite loss at epoch " + std::to_string(epoch));
      backward(loss);
      for (std::size_t p = 0; p < model.parameters().size(); ++p) adam_step(model.parameters()[p], ckpt.adam[p], lr);
      model.zero_grad();
      loss_sum += loss.item() * static_cast<double>(which.size());
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = lr;
    entry.train_loss = loss_sum / static_cast<double>(order.size()) * spec.target_scale * spec.target_scale;
    std::tie(entry.val_mae, entry.val_slice_mae) = validate_split(model, val);
    if (!std::isfinite(entry.val_mae)) fail(ErrorKind::DivergedLoss, "non-finite validation MAE");
    result.log.push_back(entry);
    if (progress)
      *progress << "epoch " << epoch << " lr " << lr << " train_loss " << entry.train_loss << " val_mae " << entry.val_mae
                << '\n';
    if (entry.val_mae < best_mae) {
      best_mae = entry.val_mae;
      ckpt.epoch = epoch;
      ckpt.best_val_mae = best_mae;
      best = encode_checkpoint(ckpt);
    }
  }
  result.checkpoint = decode_checkpoint(best);
  return result;
}

std::string format_train_log(std::span<const EpochLog> log) {
  std::ostringstream os;
  os << "epoch,lr,train_loss,val_mae,val_slice_mae\n";
  for (const auto& e : log)
    os << e.epoch << ',' << format_double(e.lr) << ',' << format_double(e.train_loss) << ','
       << format_double(e.val_mae) << ',' << (e.val_slice_mae ? format_double(*e.val_slice_mae) : "") << '\n';
  return os.str();
}

}  // namespace brainage
