// SPDX-License-Identifier: Apache-2.0
/**
 * @file   trainer.hpp
 * @brief  SGD training, evaluation, checkpoints, gradient-check suite,
 *         topology export and the application config file.
 */
#ifndef G3CN_TRAINER_HPP
#define G3CN_TRAINER_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "g3cn/data_io.hpp"
#include "g3cn/gradcheck.hpp"
#include "g3cn/network.hpp"

namespace g3cn {

struct TrainConfig {
  NetworkConfig network;
  double lr = 0.05;
  std::vector<std::size_t> lr_decay_epochs{120, 160};
  double lr_decay_factor = 0.1;
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  double weight_decay = 4e-4;
  double momentum = 0.9;
  bool nesterov = true;
  std::uint64_t seed = 0;
  /// Joint whose first-frame position becomes the origin during
  /// preprocessing.
  std::size_t center_joint = 0;

  bool operator==(const TrainConfig &) const = default;
};

/// 85 epochs, lr 0.05, decay by 0.1 entering epochs 45, 65 and 75.
void apply_paper_schedule(TrainConfig &cfg);

/// Throws ConfigError.
void validate(const TrainConfig &cfg);

/// Learning rate used while training epoch `epoch` (0-based):
/// lr * factor^|{d in decay_epochs : d <= epoch}|.
double learning_rate(const TrainConfig &cfg, std::size_t epoch);

std::string train_config_to_json(const TrainConfig &cfg);
TrainConfig train_config_from_json(const std::string &text);

/// Sequences resampled to the network's input length and stacked.
struct PreparedData {
  std::size_t n_frames = 0;
  std::size_t n_joints = 0;
  std::vector<double> x; ///< [S, T, N, 3]
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  /// Samples `indices` as one [B, T, N, 3] tensor.
  ad::Tensor batch(const std::vector<std::size_t> &indices) const;
  ad::Tensor sample(std::size_t index) const; ///< [T, N, 3]
};

/// Throws InvalidArgument (empty), ShapeMismatch (joint count) or
/// InvalidLabel (label >= n_classes).
PreparedData prepare_dataset(const std::vector<SkeletonSequence> &data,
                             const TrainConfig &cfg);

struct EpochMetrics {
  std::size_t epoch = 0; ///< 1-based
  double lr = 0.0;
  double loss = 0.0;
  double acc = 0.0;

  bool operator==(const EpochMetrics &) const = default;
};

/// Header `epoch,lr,loss,acc`, reals printed with 17 significant digits.
std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics &m);

struct EvalReport {
  std::size_t n_samples = 0;
  double accuracy = 0.0;
  std::vector<std::size_t> class_counts;
  std::vector<double> per_class_accuracy;
  /// confusion[true][predicted] as a fraction of the true class's samples.
  std::vector<std::vector<double>> confusion;
};

/// Builds the report from labels and predicted classes.
EvalReport summarize_predictions(const std::vector<std::size_t> &labels,
                                 const std::vector<std::size_t> &predicted,
                                 std::size_t n_classes);
std::string eval_report_json(const EvalReport &report);
std::string confusion_csv(const EvalReport &report);

/// Index of the largest logit in each row; ties go to the lowest index.
std::vector<std::size_t> argmax_rows(const ad::Tensor &logits);

class Trainer {
public:
  /// Network initialized from mix_seed(cfg.seed, init tag).
  explicit Trainer(TrainConfig cfg);

  const TrainConfig &config() const { return cfg_; }
  Network &network() { return net_; }
  const Network &network() const { return net_; }
  std::size_t epochs_done() const { return epoch_; }

  /// One pass over `data` in a per-epoch deterministic shuffle order.
  /// Throws DivergedLoss when the loss stops being finite.
  EpochMetrics train_epoch(const PreparedData &data);

  /// Runs the remaining epochs up to config().epochs.
  std::vector<EpochMetrics>
  fit(const PreparedData &data,
      const std::function<void(const EpochMetrics &)> &on_epoch = {});

  /// Evaluation-mode logits [S, K].
  ad::Tensor logits(const PreparedData &data);
  EvalReport evaluate(const PreparedData &data);

  /// Versioned little-endian named-tensor binary.
  std::string checkpoint_bytes() const;
  static Trainer from_checkpoint_bytes(std::string_view bytes);
  void save(const std::string &path) const;
  static Trainer load(const std::string &path);

private:
  TrainConfig cfg_;
  Network net_;
  std::vector<std::vector<double>> velocity_;
  std::size_t epoch_ = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// ---------------------------------------------------------------------------
// Gradient-check suite
// ---------------------------------------------------------------------------

enum class GradCheckScope { Ops, Unit, Network };

struct GradCheckCase {
  std::string name;
  std::uint64_t seed = 0;
  ad::GradCheckReport report;
};

struct GradCheckSuiteReport {
  std::vector<GradCheckCase> cases;
  bool passed = true;
  double max_rel_err = 0.0;
  double seconds = 0.0;
};

/// Five-joint skeleton used by the suite.
SkeletonGraph grad_check_skeleton();

/// Finite-difference checks at N = 5, T = 4 with input channels 3 and
/// hidden channels 8, for seeds first_seed .. first_seed + n_seeds - 1.
GradCheckSuiteReport run_grad_check_suite(GradCheckScope scope,
                                          std::uint64_t first_seed,
                                          std::size_t n_seeds,
                                          const ad::GradCheckOptions &opts = {});
std::string grad_check_report_text(const GradCheckSuiteReport &report);

// ---------------------------------------------------------------------------
// Topology export
// ---------------------------------------------------------------------------

struct TopologyExport {
  std::string matrix_csv;      ///< N x N averaged topology
  std::string pgm;             ///< binary 8-bit N x N heatmap
  std::string anchor_csv;      ///< `joint,value` row of the anchor joint
  std::string per_channel_csv; ///< every channel of the unit average
};

std::string matrix_to_csv(const FilterMatrix &m);
/// P5 image, pixel = round(255 * |a| / max |a|), all zero when max is 0.
std::string matrix_to_pgm(const FilterMatrix &m);

/// Throws InvalidBlock or InvalidArgument (anchor out of range).
TopologyExport export_topology(Network &net, const ad::Tensor &sample,
                               std::size_t block, std::size_t anchor_joint);

// ---------------------------------------------------------------------------
// Application config file
// ---------------------------------------------------------------------------

/// One JSON document with `skeleton` (path or inline object), `network`,
/// `train` and `synth` sections. Missing `network.blocks` selects the
/// default ten-block plan; `train.schedule = "paper-schedule"` applies the
/// 85-epoch preset before explicit train fields.
struct AppConfig {
  std::shared_ptr<const SkeletonGraph> skeleton;
  TrainConfig train;
  SynthConfig synth;
};

/// Applies `key.path=value` overrides; the value is parsed as JSON when
/// possible and taken as a string otherwise. Throws ConfigError.
std::string apply_overrides(const std::string &json_text,
                            const std::vector<std::string> &overrides);

/// Skeleton paths are resolved relative to `base_dir`.
AppConfig app_config_from_json(const std::string &json_text,
                               const std::string &base_dir);
AppConfig load_app_config(const std::string &path,
                          const std::vector<std::string> &overrides);
/// Fully resolved document with the skeleton inlined.
std::string app_config_to_json(const AppConfig &cfg);

} // namespace g3cn

#endif // G3CN_TRAINER_HPP
