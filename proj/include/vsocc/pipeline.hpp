#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vsocc/losses.hpp"
#include "vsocc/metrics.hpp"
#include "vsocc/synthscene.hpp"
#include "vsocc/vsf.hpp"

namespace vsocc {

// How the model's height partition is specified. Default is the six-way
// reference split of [-5,3] m; Uniform divides the scene's z range into n
// equal bands; Explicit lists meter intervals directly.
struct PartitionSpec {
  enum class Kind { Default, Uniform, Explicit };
  Kind kind = Kind::Default;
  i64 uniform_n = 8;
  std::vector<std::pair<double, double>> intervals;

  HeightPartition build(i64 Z, double z_min_m, double z_max_m) const;
  std::string str() const;
};

struct ModelConfig {
  i64 channels = 8;    // feature width C after the encoders
  i64 classes = 17;    // K including empty
  i64 reduction = 4;   // SE bottleneck ratio r
  i64 encoder_depth = 2;
  PartitionSpec partition;
  VsfMode vsf_mode = VsfMode::Full;
  AttentionVariant attention = AttentionVariant::SEAttention3D;
  std::uint64_t seed = 0;  // parameter-init seed
};

struct TrainConfig {
  i64 steps = 200;
  i64 batch_size = 1;
  Real learning_rate = 0.1;
  std::string optimizer = "gd";  // "gd" or "momentum"
  Real momentum = 0.9;           // used by "momentum" only
  Real clip_norm = 5.0;          // global gradient-norm ceiling; 0 disables
  i64 eval_every = 50;           // 0 = evaluate only at the end
  i64 n_train = 6;
  i64 n_val = 2;
  std::uint64_t data_seed = 1000;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};  // ablation replicates
};

// A built model: parameter store plus the wiring needed to run it. Movable,
// not copyable (params own storage; submodule structs point into it).
struct Model {
  ModelConfig cfg;
  i64 in_channels = 0;
  HeightPartition partition;
  ModuleParams params;

  struct ConvLayer {
    ParamTensor* w = nullptr;
    ParamTensor* b = nullptr;
  };
  std::vector<ConvLayer> enc_cam, enc_lidar;
  VSFParams vsf_cam, vsf_lidar;
  ConvLayer head_mix, head_cls;

  explicit Model(std::uint64_t seed) : params(seed) {}
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  // Registers all parameters (seeded by cfg.seed, keyed by name) and derives
  // the partition from the scene's z geometry.
  static Model build(const ModelConfig& cfg, const SceneConfig& scene);

  // Runs encoders -> per-modality VSF -> channel concat -> decoding head.
  // Output: class probabilities (B,K,X,Y,Z), softmax over channel 1.
  Tensor forward(Tape& tape, const DenseTensor& feat_cam,
                 const DenseTensor& feat_lidar);
};

// Stacks per-sample tensors (1,C,X,Y,Z) into a batch (N,C,X,Y,Z); same for
// label grids.
DenseTensor stack_features(const std::vector<const DenseTensor*>& parts);
OccupancyGrid stack_labels(const std::vector<const OccupancyGrid*>& parts);

// Argmax over the class axis with lowest-index tie-breaking.
OccupancyGrid argmax_channels(const Shape& probs_shape, const std::vector<Real>& probs);

struct EvalResult {
  MetricsReport report;
  Real mean_loss = 0.0;
};

EvalResult evaluate(Model& model, const std::vector<SceneSample>& samples,
                    const LossConfig& loss_cfg);
EvalResult evaluate(Model& model, const Dataset& data, const LossConfig& loss_cfg);

struct TrainResult {
  std::vector<Real> loss_history;  // combined objective per step
  Real loss_initial = 0.0;
  Real loss_final = 0.0;
  std::vector<std::pair<i64, EvalResult>> trace;  // (step, val eval)
  std::vector<Real> alpha_used;
};

// Plain (or momentum) gradient descent on the combined objective. If
// loss_cfg.alpha is empty, inverse-frequency weights are computed from the
// training split first. Throws DivergenceError when the loss goes
// non-finite.
TrainResult train(Model& model, const TrainConfig& tcfg, const Dataset& train_data,
                  const Dataset& val_data, const LossConfig& loss_cfg);

// --- ablation harness -----------------------------------------------------

struct AblateRow {
  std::string variant;
  std::uint64_t seed = 0;
  Real miou = 0.0;
  Real geo_iou = 0.0;
  Real loss_final = 0.0;
};

struct AblateResult {
  std::string suite;
  std::vector<std::string> variants;  // row-group order
  std::vector<AblateRow> rows;        // variant-major, seed-minor

  Real mean_miou(const std::string& variant) const;
  const AblateRow& row(const std::string& variant, std::uint64_t seed) const;
};

// suite is one of: slices (vsf mode sweep), strategy (partition sweep),
// attention (senet vs seattention3d), fusion (plain concat vs calibrated).
// Per seed, all variants share the same data stream and the same name-keyed
// parameter init, so comparisons are paired. jobs > 1 runs (variant, seed)
// cells on that many threads; results are slot-assigned, so the output is
// identical regardless of jobs.
AblateResult ablate(const std::string& suite, const ModelConfig& base,
                    const TrainConfig& tcfg, const SceneConfig& scene,
                    const LossConfig& loss_cfg, i64 jobs = 1);

// CSV with per-seed rows plus one mean row per variant.
std::string ablate_csv(const AblateResult& r);

}  // namespace vsocc
