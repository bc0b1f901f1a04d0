#pragma once

// Training loop (seeded shuffling, mini-batch Adam on the exact gradient),
// binary checkpoints, inference, the gradient-check harness and the
// convolutional ablation baseline.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "unicaclf/adam.hpp"
#include "unicaclf/gradcheck.hpp"
#include "unicaclf/json_io.hpp"
#include "unicaclf/model.hpp"

namespace unicaclf {

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ModelConfig config;
  Vector params;
  AdamState optimizer;
  int epoch = 0;  // completed epochs
  std::string rng_state;
  std::vector<double> loss_history;  // total loss per optimizer step
};

// ---------------------------------------------------------------------------
// Checkpoint container. Layout (all integers and doubles little-endian):
//   8 bytes  magic "UCLFCKPT"
//   u32      format version
//   u64 n, n bytes   resolved config as JSON text
//   u64 n, n f64     parameters in ParamLayout order
//   u64      optimizer step
//   u64 n, n f64     first moments
//   u64 n, n f64     second moments
//   i64      completed epochs
//   u64 n, n bytes   generator state (text)
//   u64 n, n f64     loss history

constexpr char kCheckpointMagic[8] = {'U', 'C', 'L', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > data_.size()) throw DataError("", "checkpoint truncated");
    unsigned char b[sizeof(T)];
    std::memcpy(b, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
  std::string bytes(std::size_t n) {
    if (pos_ + n > data_.size()) throw DataError("", "checkpoint truncated");
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles() {
    const auto n = get<std::uint64_t>();
    if (n > (data_.size() - pos_) / 8) throw DataError("", "checkpoint truncated");
    std::vector<double> v(n);
    for (auto& x : v) x = get<double>();
    return v;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

inline void put_doubles(std::string& out, const std::vector<double>& v) {
  put_le<std::uint64_t>(out, v.size());
  for (double x : v) put_le(out, x);
}

inline void put_string(std::string& out, const std::string& s) {
  put_le<std::uint64_t>(out, s.size());
  out += s;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le(out, kCheckpointVersion);
  detail::put_string(out, to_json(ck.config).dump());
  detail::put_doubles(out, ck.params);
  detail::put_le<std::uint64_t>(out, ck.optimizer.step);
  detail::put_doubles(out, ck.optimizer.m);
  detail::put_doubles(out, ck.optimizer.v);
  detail::put_le<std::int64_t>(out, ck.epoch);
  detail::put_string(out, ck.rng_state);
  detail::put_doubles(out, ck.loss_history);
  return out;
}

inline Checkpoint deserialize_checkpoint(std::string data) {
  if (data.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(data.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw DataError("", "not a checkpoint file (bad magic)");
  detail::Reader r(data.substr(sizeof(kCheckpointMagic)));
  if (r.get<std::uint32_t>() != kCheckpointVersion) throw DataError("", "unsupported checkpoint version");
  Checkpoint ck;
  const auto cfg_text = r.bytes(r.get<std::uint64_t>());
  try {
    ck.config = model_config_from_json(json::parse(cfg_text));
  } catch (const json::exception& e) {
    throw DataError("", std::string("checkpoint config: ") + e.what());
  }
  ck.params = r.doubles();
  ck.optimizer.step = r.get<std::uint64_t>();
  ck.optimizer.m = r.doubles();
  ck.optimizer.v = r.doubles();
  ck.epoch = static_cast<int>(r.get<std::int64_t>());
  ck.rng_state = r.bytes(r.get<std::uint64_t>());
  ck.loss_history = r.doubles();
  if (!r.done()) throw DataError("", "trailing bytes after checkpoint");
  if (ck.params.size() != ParamLayout(ck.config).total())
    throw DataError("", "checkpoint parameter count does not match its config");
  return ck;
}

inline void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  write_text_file(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw MissingFileError("checkpoint not found: " + path.string());
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize_checkpoint(ss.str());
}

// ---------------------------------------------------------------------------
// Training

struct BatchResult {
  LossBreakdown loss;
  Vector grad;
};

/// Exact gradient of the batch objective: cls and reg averaged over the
/// batch, the contrastive term averaged over samples that are not skipped.
/// Per-sample work may run on several threads; the reduction is ordered.
inline BatchResult batch_gradient(const ParamLayout& layout, std::span<const double> params,
                                  std::span<const PreparedSample* const> batch) {
  const auto& cfg = layout.config();
  const double b = static_cast<double>(batch.size());
  std::size_t cacl_used = 0;
  for (const auto* p : batch) cacl_used += p->cacl_skipped ? 0 : 1;
  const LossWeights weights{1.0 / b, cfg.phi1 / b,
                            cacl_used ? cfg.phi2 / static_cast<double>(cacl_used) : 0.0};

  std::vector<Vector> grads(batch.size());
  std::vector<SampleLoss> losses(batch.size());
  auto work = [&](std::size_t i) {
    ForwardPass fp(layout, params);
    losses[i] = fp.run(*batch[i]);
    grads[i].assign(layout.total(), 0.0);
    fp.backward(weights, grads[i]);
  };
  const std::size_t threads = std::min(cfg.threads, batch.size());
  if (threads <= 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) work(i);
  } else {
    std::vector<std::future<void>> jobs;
    for (std::size_t w = 0; w < threads; ++w)
      jobs.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t i = w; i < batch.size(); i += threads) work(i);
      }));
    for (auto& j : jobs) j.get();
  }

  BatchResult r;
  r.grad.assign(layout.total(), 0.0);
  double cls = 0.0, reg = 0.0, cacl = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t k = 0; k < r.grad.size(); ++k) r.grad[k] += grads[i][k];
    cls += losses[i].cls;
    reg += losses[i].reg;
    if (!losses[i].cacl_skipped) cacl += losses[i].cacl;
    r.loss.positives += losses[i].positives;
    r.loss.negatives += losses[i].negatives;
    if (!std::isfinite(sample_objective(losses[i], cfg))) {
      std::ostringstream os;
      os << "non-finite loss on sample '" << batch[i]->sample->sequence.id << "': cls=" << losses[i].cls
         << " reg=" << losses[i].reg << " cacl=" << losses[i].cacl;
      throw DivergenceError(os.str());
    }
  }
  const double cacl_mean = cacl_used ? cacl / static_cast<double>(cacl_used) : 0.0;
  r.loss = [&] {
    auto lb = total_loss(cls / b, reg / b, cacl_mean, cfg.phi1, cfg.phi2);
    lb.positives = r.loss.positives;
    lb.negatives = r.loss.negatives;
    lb.cacl_used = cacl_used;
    return lb;
  }();
  return r;
}

struct TrainOptions {
  fs::path out_dir;  // empty: no checkpoint files
  std::function<void(const Checkpoint&)> on_epoch;
  std::function<void(const std::string&)> log;
};

inline Checkpoint fresh_checkpoint(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  ParamLayout layout(cfg);
  Checkpoint ck;
  ck.config = cfg;
  ck.params = init_params(layout, rng);
  ck.optimizer.m.assign(ck.params.size(), 0.0);
  ck.optimizer.v.assign(ck.params.size(), 0.0);
  ck.rng_state = rng.state();
  return ck;
}

/// Runs epochs [ck.epoch, ck.config.epochs) starting from `ck`.
inline Checkpoint resume_training(Checkpoint ck, const std::vector<Sample>& dataset,
                                  const TrainOptions& opt = {}) {
  const auto& cfg = ck.config;
  cfg.validate();
  if (dataset.empty()) throw DataError("", "training dataset is empty");
  for (const auto& s : dataset)
    if (s.sequence.dim() != cfg.input_dim)
      throw DataError(s.sequence.id, "feature_dim " + std::to_string(s.sequence.dim()) +
                                         " does not match input_dim " + std::to_string(cfg.input_dim));
  ParamLayout layout(cfg);
  std::vector<PreparedSample> prepared;
  prepared.reserve(dataset.size());
  for (const auto& s : dataset) prepared.push_back(prepare_sample(s, cfg));

  Rng rng;
  rng.set_state(ck.rng_state);
  Adam adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, ck.params.size());
  adam.set_state(ck.optimizer);

  std::vector<double> epoch_means;
  while (ck.epoch < cfg.epochs) {
    std::vector<std::size_t> order(prepared.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const PreparedSample*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i)
        batch.push_back(&prepared[order[i]]);
      auto br = batch_gradient(layout, ck.params, batch);
      adam.update(ck.params, br.grad);
      ck.loss_history.push_back(br.loss.total);
      epoch_loss += br.loss.total;
      ++steps;
    }
    ++ck.epoch;
    ck.optimizer = adam.state();
    ck.rng_state = rng.state();
    epoch_means.push_back(epoch_loss / static_cast<double>(steps));
    if (opt.log) {
      std::ostringstream os;
      os << "epoch " << ck.epoch << "/" << cfg.epochs << " mean_loss=" << epoch_means.back();
      opt.log(os.str());
    }
    if (!opt.out_dir.empty()) save_checkpoint(opt.out_dir / "checkpoint.bin", ck);
    if (opt.on_epoch) opt.on_epoch(ck);

    // Early stop: trailing-window mean of per-epoch loss no longer improving.
    const auto w = static_cast<std::size_t>(cfg.early_stop_window);
    if (w > 0 && epoch_means.size() >= 2 * w) {
      auto mean = [&](std::size_t from) {
        return std::accumulate(epoch_means.begin() + static_cast<std::ptrdiff_t>(from),
                               epoch_means.begin() + static_cast<std::ptrdiff_t>(from + w), 0.0) /
               static_cast<double>(w);
      };
      const auto n = epoch_means.size();
      if (mean(n - 2 * w) - mean(n - w) < 1e-5) break;
    }
  }
  return ck;
}

inline Checkpoint train(const ModelConfig& cfg, const std::vector<Sample>& dataset,
                        const TrainOptions& opt = {}) {
  return resume_training(fresh_checkpoint(cfg), dataset, opt);
}

/// Same pipeline with every CaP layer replaced by a kernel-3 convolution
/// residual block and no contrastive term.
inline Checkpoint ablation_baseline(ModelConfig cfg, const std::vector<Sample>& dataset,
                                    const TrainOptions& opt = {}) {
  cfg.variant = PyramidVariant::kConvBaseline;
  cfg.phi2 = 0.0;
  return train(cfg, dataset, opt);
}

// ---------------------------------------------------------------------------
// Inference

inline PredictionMap infer(const Checkpoint& ck, const std::vector<Sample>& dataset) {
  ParamLayout layout(ck.config);
  PredictionMap out;
  for (const auto& s : dataset) {
    if (s.sequence.dim() != ck.config.input_dim)
      throw DataError(s.sequence.id, "feature_dim " + std::to_string(s.sequence.dim()) +
                                         " does not match model input_dim " +
                                         std::to_string(ck.config.input_dim));
    out[s.sequence.id] = predict_proposals(layout, ck.params, s.sequence);
  }
  return out;
}

/// Trained pyramid of one sample (for the similarity diagnostic).
inline std::vector<PyramidLevel> pyramid_for(const Checkpoint& ck, const FeatureSequence& seq) {
  ParamLayout layout(ck.config);
  ForwardPass fp(layout, ck.params);
  fp.run_features(seq.features);
  return fp.pyramid();
}

// ---------------------------------------------------------------------------
// Gradient check of the full per-sample objective

inline GradCheckReport grad_check_model(const ModelConfig& cfg, std::span<const double> params,
                                        const Sample& sample, const GradCheckOptions& opt) {
  ParamLayout layout(cfg);
  auto prep = prepare_sample(sample, cfg);
  ForwardPass fp(layout, params);
  const auto loss = fp.run(prep);
  Vector analytic(layout.total(), 0.0);
  fp.backward({1.0, cfg.phi1, loss.cacl_skipped ? 0.0 : cfg.phi2}, analytic);
  auto objective = [&](std::span<const double> x) {
    ForwardPass f(layout, x);
    return sample_objective(f.run(prep), cfg);
  };
  return grad_check(objective, Vector(params.begin(), params.end()), analytic, opt,
                    [&](std::size_t i) { return layout.describe(i); });
}

/// Small planted-anomaly sample used by the gradient-check command.
inline Sample gradcheck_sample(std::size_t instants, std::size_t dim, std::uint64_t seed) {
  SynthConfig sc;
  sc.num_samples = 1;
  sc.min_instants = sc.max_instants = instants;
  sc.feature_dim = dim;
  sc.instants_per_second = 1.0;
  sc.forged_fraction = 1.0;
  sc.min_segment_fraction = 0.25;
  sc.max_segment_fraction = 0.5;
  sc.anomaly_shift = 1.5;
  sc.noise_scale = 0.5;
  sc.seed = seed;
  sc.id_prefix = "gradcheck";
  return generate_synthetic(sc).front();
}

}  // namespace unicaclf
