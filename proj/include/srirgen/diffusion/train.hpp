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
#include "srirgen/core/optim.hpp"
#include "srirgen/diffusion/generator.hpp"

namespace srirgen::diffusion {

// One training target: a normalized SRIR with its conditioning, zero-padded
// to the network length when batched. Each scene of
// the room contributes one h; a step picks one at random.
struct SrirItem {
  std::string room_id;
  std::vector<std::vector<float>> h_options;
  std::array<double, 3> v{};
  Tensor<float> x0;  // (C, L)
};

struct GeneratorEpochLog {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double lr = 0;
};

struct TrainedGenerator {
  std::unique_ptr<Generator<float>> model;
  std::vector<GeneratorEpochLog> log;
  int best_epoch = 0;
};

// Population std over every sample of every target.
inline double estimate_sigma_data(const std::vector<SrirItem>& items) {
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (const auto& it : items) {
    for (float x : it.x0) {
      sum += x;
      sq += static_cast<double>(x) * x;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("estimate_sigma_data: no samples");
  const double mean = sum / n, var = sq / n - mean * mean;
  if (!(var > 0)) throw std::invalid_argument("estimate_sigma_data: targets have zero variance");
  return std::sqrt(var);
}

struct GeneratorBatch {
  Tensor<float> x0, h, v;
};

inline GeneratorBatch make_batch(const std::vector<SrirItem>& items, const std::vector<std::size_t>& idx,
                                 const DiffusionConfig& cfg, Rng* pick) {
  const std::size_t n = idx.size(), c = cfg.channels, len = cfg.length, padded = cfg.padded_length();
  GeneratorBatch b{Tensor<float>({n, c, padded}), Tensor<float>({n, cfg.h_dim}), Tensor<float>({n, 3})};
  for (std::size_t k = 0; k < n; ++k) {
    const SrirItem& it = items.at(idx[k]);
    if (it.x0.shape() != Shape{c, len}) {
      throw ShapeError("generator batch: item " + it.room_id + " has shape " + shape_string(it.x0.shape()) +
                       ", expected " + shape_string({c, len}));
    }
    if (it.h_options.empty()) throw std::invalid_argument("generator batch: item " + it.room_id + " has no h");
    const std::size_t choice =
        pick ? static_cast<std::size_t>(pick->integer(0, static_cast<std::int64_t>(it.h_options.size()) - 1)) : 0;
    const auto& h = it.h_options[choice];
    if (h.size() != cfg.h_dim) throw ShapeError("generator batch: h of item " + it.room_id + " has wrong size");
    for (std::size_t r = 0; r < c; ++r) {
      std::copy_n(it.x0.data() + r * len, len, b.x0.data() + (k * c + r) * padded);
    }
    std::copy(h.begin(), h.end(), b.h.data() + k * cfg.h_dim);
    for (std::size_t a = 0; a < 3; ++a) b.v[k * 3 + a] = static_cast<float>(it.v[a]);
  }
  return b;
}

inline std::vector<std::vector<std::size_t>> batches_of(const std::vector<std::size_t>& order, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < order.size(); s += size) {
    out.emplace_back(order.begin() + static_cast<long>(s),
                     order.begin() + static_cast<long>(std::min(order.size(), s + size)));
  }
  return out;
}

// Validation loss with a fixed noise stream so epochs are comparable.
inline double generator_val_loss(Generator<float>& g, const std::vector<SrirItem>& val, std::uint64_t seed) {
  if (val.empty()) return std::numeric_limits<double>::quiet_NaN();
  Rng rng = Rng::derive(seed, "generator/val");
  std::vector<std::size_t> idx(val.size());
  std::iota(idx.begin(), idx.end(), 0);
  double total = 0;
  for (const auto& b : batches_of(idx, g.config().batch_size)) {
    const auto batch = make_batch(val, b, g.config(), nullptr);
    total += training_loss(g, batch.x0, batch.h, batch.v, rng, /*backward=*/false).loss * b.size();
  }
  return total / val.size();
}

// Adam on the denoising loss. sigma_data is estimated from `train` when the
// config leaves it unset. Keeps the weights of the best validation epoch
// (training loss when there is no validation set).
inline TrainedGenerator train_generator(const std::vector<SrirItem>& train, const std::vector<SrirItem>& val,
                                        DiffusionConfig cfg, std::uint64_t seed,
                                        const std::function<void(const GeneratorEpochLog&)>& on_epoch = {}) {
  if (train.empty()) throw std::invalid_argument("train_generator: empty training set");
  if (!(cfg.sigma_data > 0)) cfg.sigma_data = estimate_sigma_data(train);
  cfg.validate();
  Rng init = Rng::derive(seed, "generator/init");
  Rng shuffle = Rng::derive(seed, "generator/shuffle");
  Rng noise = Rng::derive(seed, "generator/noise");
  TrainedGenerator out;
  out.model = std::make_unique<Generator<float>>(cfg, init);
  auto& g = *out.model;
  const auto params = g.params();
  const auto state = g.state_tensors();
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
    for (const auto& b : batches_of(order, cfg.batch_size)) {
      const auto batch = make_batch(train, b, cfg, &noise);
      zero_grads(params);
      sum += training_loss(g, batch.x0, batch.h, batch.v, noise).loss * b.size();
      adam_step(adam, params);
    }
    GeneratorEpochLog row{epoch + 1, sum / train.size(), generator_val_loss(g, val, seed), adam.lr};
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

inline std::string generator_log_csv(const std::vector<GeneratorEpochLog>& log) {
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

inline void save_generator(const std::filesystem::path& path, Generator<float>& g,
                           nlohmann::json extra = nlohmann::json::object()) {
  Checkpoint ckpt;
  store_params(ckpt, g.state_tensors());
  extra["kind"] = "srir-generator";
  extra["config"] = to_json(g.config());
  ckpt.metadata = std::move(extra);
  save_checkpoint(ckpt, path);
}

struct LoadedGenerator {
  std::unique_ptr<Generator<float>> model;
  nlohmann::json metadata;
};

inline LoadedGenerator load_generator(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.metadata.value("kind", "") != "srir-generator") {
    throw CheckpointError(path.string() + " is not an srir-generator checkpoint");
  }
  const auto cfg = diffusion_config_from_json(ckpt.metadata.at("config"));
  cfg.validate();
  Rng unused(0);
  LoadedGenerator out{std::make_unique<Generator<float>>(cfg, unused), ckpt.metadata};
  restore_params(ckpt, out.model->state_tensors());
  return out;
}

}  // namespace srirgen::diffusion
