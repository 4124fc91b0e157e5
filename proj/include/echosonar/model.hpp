#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "echosonar/dataset.hpp"

namespace echosonar {

// Convolutional-recurrent joint regressor. The 50-slice input splits into
// `folds` contiguous slices that share one conv backbone; the fold embeddings
// run through a recurrent cell in temporal order and the last hidden state
// feeds a linear head that emits 21 * 3 coordinates in millimetres.
struct ModelConfig {
    int channels = 7;
    int cells = 256;
    int window_len = 50;
    int folds = 10;
    int conv1_out = 16;
    int conv2_out = 32;
    int kernel = 3;  // square, stride 1, same padding
    int pool = 2;    // square, stride = pool
    int hidden = 128;
    int output = 63;
    std::uint64_t seed = 1;
    double learning_rate = 1e-3;
    int batch_size = 32;
    int epochs_per_stage = 4;
    int steps_per_stage = 0;  // overrides epochs_per_stage when positive
    double bn_momentum = 0.1;

    void validate() const;

    int fold_w() const { return window_len / folds; }
    int pooled1_h() const { return cells / pool; }
    int pooled1_w() const { return fold_w() / pool; }
    int pooled2_h() const { return pooled1_h() / pool; }
    int pooled2_w() const { return std::max(pooled1_w() / pool, 1); }
    int lstm_input() const { return conv2_out * pooled2_h() * pooled2_w(); }
};

// One named tensor inside the flat parameter (or buffer) storage.
struct ParamBlock {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::size_t offset = 0;
    std::size_t size = 0;
};

// Trainable parameters plus persistent buffers (normalization running
// statistics and the label affine fitted at training start).
struct ModelParams {
    std::vector<double> values;           // trainable, flat
    std::vector<ParamBlock> blocks;       // layout of `values`
    std::vector<double> buffer_values;    // non-trainable, flat
    std::vector<ParamBlock> buffer_blocks;

    double* block_data(const std::string& name);
    const double* block_data(const std::string& name) const;
    double* buffer_data(const std::string& name);
    const double* buffer_data(const std::string& name) const;
};

ModelParams make_params(const ModelConfig& config);      // zero-filled
ModelParams init_params(const ModelConfig& config);      // seeded init

class Regressor {
public:
    explicit Regressor(const ModelConfig& config);
    Regressor(const ModelConfig& config, ModelParams params);

    const ModelConfig& config() const { return config_; }
    ModelParams& params() { return params_; }
    const ModelParams& params() const { return params_; }

    // Evaluation-mode forward pass for one window: 63 coordinates in mm.
    // Pure function of (params, window). Throws ShapeError on a mismatched
    // tensor and NumericError naming the layer if an activation goes
    // non-finite.
    std::vector<double> forward(const FeatureWindow& window) const;

    // Batched evaluation-mode forward; one 63-row column per window.
    std::vector<std::vector<double>> forward_batch(
        const std::vector<const FeatureWindow*>& batch) const;

    // Mean loss and analytic gradients of every trainable parameter for a
    // labeled batch, using training-mode normalization statistics. Does not
    // mutate the model.
    struct GradientResult {
        double loss = 0.0;
        std::vector<double> gradients;
    };
    GradientResult gradients(
        const std::vector<const FeatureWindow*>& batch) const;

    // Training-mode loss only (same graph as gradients); used by the
    // finite-difference oracle.
    double batch_loss(const std::vector<const FeatureWindow*>& batch) const;

    // One optimizer step: gradients, Adam update, running-stat update.
    struct AdamState {
        std::vector<double> m;
        std::vector<double> v;
        long step = 0;
    };
    double train_step(const std::vector<const FeatureWindow*>& batch,
                      AdamState& adam);

    // Fits the label standardization buffers from a dataset.
    void fit_label_affine(const std::vector<const FeatureWindow*>& data);

private:
    ModelConfig config_;
    ModelParams params_;
};

// Mean of squared coordinate differences over the 63 entries, mm^2.
double loss_mse(const std::vector<double>& pred, const HandPose& label);

struct StageMetrics {
    std::string stage;
    int epoch = 0;
    double train_mse = 0.0;
    double val_mse = -1.0;  // -1 when no validation set was given
};

struct Checkpoint {
    std::uint16_t version = 1;
    ModelConfig config;
    ModelParams params;
    std::string stage_tag;
    std::vector<StageMetrics> history;
};

// "BVCK" container: version, config JSON, stage tag, metric history JSON,
// then named parameter blocks as (name, dims, little-endian float32 data).
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

struct StageData {
    std::string name;
    std::vector<const FeatureWindow*> windows;
};

// Curriculum training: stages run in the given order; each stage starts from
// the previous stage's checkpointed state (parameters pass through the
// float32 checkpoint encoding between stages, so a saved file reproduces the
// in-memory model exactly). Deterministic for a given config seed. Throws
// NumericError naming stage and step on divergence (loss above 1e8 or
// non-finite).
Checkpoint train_curriculum(const std::vector<StageData>& stages,
                            const ModelConfig& config,
                            const std::vector<const FeatureWindow*>& val,
                            const std::filesystem::path& checkpoint_dir = {});

// Per-coordinate mean absolute error plus grouped breakdowns.
struct EvalReport {
    double mae_mm = 0.0;          // mean over samples and 63 coordinates
    double median_mm = 0.0;       // median of per-sample MAE
    double p90_mm = 0.0;          // 90th percentile of per-sample MAE
    double mae_joint_mm = 0.0;    // mean per-joint Euclidean distance
    double mse_mm2 = 0.0;
    std::vector<double> per_joint_mm;   // 21 Euclidean means
    std::vector<double> per_finger_mm;  // thumb..pinky
    std::vector<double> per_bone_mm;    // metacarpal, proximal, intermediate, distal
    std::size_t samples = 0;
};

EvalReport evaluate(const Regressor& model,
                    const std::vector<const FeatureWindow*>& dataset);

std::vector<const FeatureWindow*> window_pointers(const FeatureSet& set);

}  // namespace echosonar
