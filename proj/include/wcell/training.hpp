#pragma once

#include "wcell/checkpoint.hpp"
#include "wcell/data.hpp"
#include "wcell/losses.hpp"
#include "wcell/metrics.hpp"
#include "wcell/model.hpp"
#include "wcell/optimizer.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

namespace wcell {

struct TrainConfig {
  std::int64_t iterations = 100000;
  std::size_t batch = 8;
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_interval = 0;  ///< 0: final checkpoint only
  std::int64_t eval_interval = 0;        ///< 0: no periodic validation
  bool augment = true;
  bool with_replacement = false;

  void validate() const {
    if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
    if (batch < 1) throw std::invalid_argument("batch size must be >= 1");
    adam.validate();
  }
};

/// Minibatch index stream. Without replacement, every epoch is a fresh permutation that
/// depends only on (seed, epoch); a trailing partial batch is dropped.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch, std::uint64_t seed, bool with_replacement = false);

  std::vector<std::size_t> next();
  std::uint64_t epoch() const { return epoch_; }

  /// The permutation used for `epoch`.
  static std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

 private:
  std::size_t n_, batch_;
  std::uint64_t seed_;
  bool with_replacement_;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
};

/// Network-scale tensors of one minibatch.
struct Batch {
  TensorF first;    ///< [m, 1, h, w]
  TensorF last;     ///< [m, 1, h, w]
  TensorF targets;  ///< [m, IF, h, w]
};

/// Stacks samples into network-scale ([-1, 1]) tensors.
Batch make_batch(const std::vector<FrameSample>& samples, const std::vector<std::size_t>& indices);

struct TrainLogRow {
  std::int64_t iter = 0;
  double total = 0, recon = 0, percep = 0, reg = 0;
};

void write_train_log(std::ostream& out, const std::vector<TrainLogRow>& rows);

struct TrainResult {
  WCellNet<float> net;
  AdamState<float> adam;
  std::vector<TrainLogRow> log;
};

struct TrainOutputs {
  std::optional<std::filesystem::path> out_dir;  ///< checkpoints + train_log.csv when set
  const std::vector<FrameSample>* validation = nullptr;
  std::function<void(const TrainLogRow&)> on_iteration;
};

/// Minibatch Adam training of a freshly initialized network on `train_set`.
TrainResult train(const ModelConfig& model, const LossConfig& loss, const TrainConfig& config,
                  const std::vector<FrameSample>& train_set, const TrainOutputs& outputs = {});

/// Continues training an existing network and optimizer state.
void train_steps(WCellNet<float>& net, AdamState<float>& adam, const LossConfig& loss, const TrainConfig& config,
                 const std::vector<FrameSample>& train_set, const TrainOutputs& outputs,
                 std::vector<TrainLogRow>& log);

/// Eval-mode forward over `samples`; MSE/PSNR on the [0, 255] scale, no augmentation.
MetricsReport evaluate(const WCellNet<float>& net, const std::vector<FrameSample>& samples, const std::string& split,
                       std::size_t batch = 8, double psnr_cap = kPsnrCap);

/// Predicted intermediate frames [IF, h, w] on the [0, 255] scale for two [h, w] frames.
TensorF interpolate(const WCellNet<float>& net, const TensorF& first, const TensorF& last);

/// Extractor selected by the loss config, or nullopt when λ1 == 0.
std::optional<FeatureExtractor<float>> make_extractor(const LossConfig& loss);

/// Checkpoint file name for an iteration, e.g. ckpt_000500.wcnc.
std::string checkpoint_name(std::int64_t iter);

}  // namespace wcell
