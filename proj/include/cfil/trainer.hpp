#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cfil/data.hpp"
#include "cfil/network.hpp"

/// Adam, the training loop over pair batches, and checkpoints.
namespace cfil::train {

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::int64_t t = 0;
  /// Keyed by parameter name, same order as ModelParams.
  std::vector<std::pair<std::string, Tensor<float>>> m;
  std::vector<std::pair<std::string, Tensor<float>>> v;

  static AdamState for_params(const net::ModelParams<float>& params);
};

/// One bias-corrected Adam update of every trainable tensor from its .grad().
/// Throws ContractError if a trainable tensor has no gradient.
void adam_step(net::ModelParams<float>& params, AdamState& state, double lr);

struct TrainConfig {
  int batch_size = 64;
  int epochs = 20;
  std::uint64_t seed = 42;
  double width_scale = 0.25;
  weighted::SignMode sign_mode = weighted::SignMode::Positive;
  bool zero_head = true;
  Index image_size = 64;

  void validate() const;
  net::NetworkConfig network() const;
};

/// 0.001 for epochs 1 and 2, 0.0005 from epoch 3 on.
double learning_rate(int epoch);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  double train_acc = 0.0;  // fraction in [0, 1]
};

struct Checkpoint {
  TrainConfig config;
  int fold = 0;  // 0 when not trained on a protocol split
  int epochs_done = 0;
  net::Model<float> model;
  AdamState adam;

  /// Deep copy; plain copies share tensor storage.
  Checkpoint clone() const;
};

/// Fresh model and optimizer state for `config`.
Checkpoint initial_checkpoint(const TrainConfig& config, int fold = 0);

/// Trains a deep copy of `start` until start.config.epochs epochs are done. Batch order
/// in epoch e comes from a stream derived from (seed, e), so resuming from a
/// saved checkpoint reproduces an uninterrupted run bitwise.
Checkpoint train(const std::vector<data::PairSample>& samples, const Checkpoint& start,
                 const std::function<void(const EpochLog&)>& on_epoch = {});

/// P(kin) for each sample, in order.
std::vector<double> predict(const net::Model<float>& model, const std::vector<data::PairSample>& samples,
                            int batch_size = 64);

/// Mean loss over `samples` without updating anything.
double evaluate_loss(const net::Model<float>& model, const std::vector<data::PairSample>& samples,
                     int batch_size = 64);

/// Layout: "CFCK", u8 version, u32 header length, header text (key=value
/// lines), then a named-tensor container holding the parameters,
/// adam.m.<name>, adam.v.<name> and backbone.<name>.
inline constexpr std::uint8_t kCheckpointVersion = 1;
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void write_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);
std::vector<EpochLog> read_log(const std::filesystem::path& path);

}  // namespace cfil::train
