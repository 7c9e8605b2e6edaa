#pragma once

#include <algorithm>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "srirgen/core/checkpoint.hpp"
#include "srirgen/encoder/encoder.hpp"
#include "srirgen/features/features.hpp"

namespace srirgen::encoder {

// Two scenes rendered in the same room.
struct ScenePair {
  std::string room_id;
  Tensor<float> a, b;  // 8 x t x f each
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double lr = 0;
};

struct TrainedEncoder {
  std::unique_ptr<RoomEncoder<float>> model;
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

// Stacks 2B scene tensors into (2B, 8, t, f), pairs adjacent.
inline Tensor<float> stack_pairs(const std::vector<ScenePair>& pairs, const std::vector<std::size_t>& idx) {
  const Tensor<float>& first = pairs.at(idx.at(0)).a;
  Shape shape{2 * idx.size()};
  for (std::size_t d : first.shape()) shape.push_back(d);
  Tensor<float> out(shape);
  const std::size_t n = first.size();
  std::size_t row = 0;
  for (std::size_t i : idx) {
    for (const Tensor<float>* t : {&pairs[i].a, &pairs[i].b}) {
      if (t->shape() != first.shape()) {
        throw ShapeError("scene " + pairs[i].room_id + " has shape " + shape_string(t->shape()) + ", expected " +
                         shape_string(first.shape()));
      }
      std::copy(t->begin(), t->end(), out.data() + row++ * n);
    }
  }
  return out;
}

inline double evaluate_loss(RoomEncoder<float>& model, const std::vector<ScenePair>& pairs) {
  if (pairs.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  std::vector<std::size_t> idx(pairs.size());
  std::iota(idx.begin(), idx.end(), 0);
  typename RoomEncoder<float>::State st;
  typename RoomEncoder<float>::ProjectionState ps;
  const auto h = model.embed(stack_pairs(pairs, idx), st, Mode::kEval);
  const auto z = model.project(h, ps, Mode::kEval, nullptr);
  return nt_xent_loss(z, model.config().temperature).loss;
}

// Adam on NT-Xent over shuffled room batches; returns the weights of the epoch
// with the lowest validation loss (training loss when fewer than 2 validation
// pairs are given).
inline TrainedEncoder train_encoder(const std::vector<ScenePair>& train, const std::vector<ScenePair>& val,
                                    const EncoderConfig& cfg, std::uint64_t seed,
                                    const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (train.size() < cfg.batch_size || cfg.batch_size < 1) {
    throw std::invalid_argument("train_encoder: " + std::to_string(train.size()) + " rooms is fewer than batch size " +
                                std::to_string(cfg.batch_size));
  }
  Rng init = Rng::derive(seed, "encoder/init");
  Rng shuffle = Rng::derive(seed, "encoder/shuffle");
  Rng drop = Rng::derive(seed, "encoder/dropout");
  TrainedEncoder out;
  out.model = std::make_unique<RoomEncoder<float>>(cfg, init);
  auto& model = *out.model;
  const auto params = model.params();
  const auto state = model.state_tensors();
  AdamState<float> adam;
  adam.schedule = cfg.lr;
  std::vector<Tensor<float>> best;
  double best_score = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    adam.lr = cfg.lr.at(epoch);
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    double sum = 0;
    int batches = 0;
    for (std::size_t start = 0; start + cfg.batch_size <= order.size(); start += cfg.batch_size) {
      std::vector<std::size_t> idx(order.begin() + static_cast<long>(start),
                                   order.begin() + static_cast<long>(start + cfg.batch_size));
      typename RoomEncoder<float>::State st;
      typename RoomEncoder<float>::ProjectionState ps;
      zero_grads(params);
      const auto h = model.embed(stack_pairs(train, idx), st, Mode::kTrain);
      const auto z = model.project(h, ps, Mode::kTrain, &drop);
      const NtXent loss = nt_xent_loss(z, cfg.temperature);
      model.embed_backward(st, model.project_backward(ps, loss.grad.cast<float>()));
      adam_step(adam, params);
      sum += loss.loss;
      ++batches;
    }
    EpochLog row{epoch + 1, sum / batches, evaluate_loss(model, val), adam.lr};
    out.log.push_back(row);
    if (on_epoch) on_epoch(row);
    const double score = std::isfinite(row.val_loss) ? row.val_loss : row.train_loss;
    if (score < best_score) {
      best_score = score;
      out.best_epoch = row.epoch;
      best.clear();
      for (auto* p : state) best.push_back(p->value);
    }
  }
  for (std::size_t i = 0; i < state.size(); ++i) state[i]->value = best[i];
  return out;
}

inline std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,lr\n";
  os.precision(9);
  for (const auto& r : log) {
    os << r.epoch << ',' << r.train_loss << ',';
    if (std::isfinite(r.val_loss)) {
      os << r.val_loss;
    } else {
      os << "nan";
    }
    os << ',' << r.lr << '\n';
  }
  return os.str();
}

// h for each scene, evaluated one at a time in eval mode.
inline std::vector<std::vector<float>> embed_scenes(RoomEncoder<float>& model, const std::vector<Tensor<float>>& scenes) {
  std::vector<std::vector<float>> out;
  for (const auto& x : scenes) {
    Shape shape{1};
    for (std::size_t d : x.shape()) shape.push_back(d);
    typename RoomEncoder<float>::State st;
    const auto h = model.embed(x.reshaped(shape), st, Mode::kEval);
    out.emplace_back(h.begin(), h.end());
  }
  return out;
}

inline void save_encoder(const std::filesystem::path& path, RoomEncoder<float>& model,
                         const features::NormStats& stats, const features::SceneConfig& scene,
                         nlohmann::json extra = nlohmann::json::object()) {
  Checkpoint ckpt;
  store_params(ckpt, model.state_tensors());
  extra["kind"] = "room-encoder";
  extra["config"] = to_json(model.config());
  extra["norm_stats"] = features::to_json(stats);
  extra["scene"] = {{"sample_rate", scene.sample_rate},
                    {"seconds", scene.seconds},
                    {"window", scene.stft.window},
                    {"hop", scene.stft.hop}};
  ckpt.metadata = std::move(extra);
  save_checkpoint(ckpt, path);
}

struct LoadedEncoder {
  std::unique_ptr<RoomEncoder<float>> model;
  features::NormStats stats;
  features::SceneConfig scene;
  nlohmann::json metadata;
};

inline LoadedEncoder load_encoder(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.metadata.value("kind", "") != "room-encoder") {
    throw CheckpointError(path.string() + " is not a room-encoder checkpoint");
  }
  LoadedEncoder out;
  const auto cfg = encoder_config_from_json(ckpt.metadata.at("config"));
  Rng unused(0);
  out.model = std::make_unique<RoomEncoder<float>>(cfg, unused);
  restore_params(ckpt, out.model->state_tensors());
  out.stats = features::norm_stats_from_json(ckpt.metadata.at("norm_stats"));
  const auto& sc = ckpt.metadata.at("scene");
  out.scene.sample_rate = sc.at("sample_rate").get<double>();
  out.scene.seconds = sc.at("seconds").get<double>();
  out.scene.stft.window = sc.at("window").get<std::size_t>();
  out.scene.stft.hop = sc.at("hop").get<std::size_t>();
  out.metadata = ckpt.metadata;
  return out;
}

}  // namespace srirgen::encoder
