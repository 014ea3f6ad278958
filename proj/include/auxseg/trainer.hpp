#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "auxseg/data.hpp"
#include "auxseg/models.hpp"
#include "auxseg/tasks.hpp"
#include "auxseg/tensor.hpp"
#include "auxseg/weighting.hpp"

namespace auxseg {

// Adam -------------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    AdamState(AdamConfig cfg, const NamedParams& params);
};

/// One update of every parameter from its accumulated gradient (absent
/// gradients count as zero). Gradients are left untouched.
void adam_step(AdamState& state, const NamedParams& params);

// Training ---------------------------------------------------------------------------

enum class Variant { segnet, aux400, aux1000, auxtwb, auxftwb, fusenet };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);
const std::vector<Variant>& all_variants();
ModelKind model_kind_for(Variant v);

struct TrainConfig {
    Variant variant = Variant::segnet;
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    AdamConfig adam;
    std::optional<double> ema_beta;
    WeightGradient weight_gradient = WeightGradient::detached;
    std::uint64_t seed = 1;
    std::size_t height = 32;
    std::size_t width = 48;
    std::size_t num_classes = kSceneClasses;
    /// Written every time validation segmentation loss improves; empty disables.
    std::filesystem::path checkpoint_path;

    void validate() const;
};

WeightingStrategy make_strategy(const TrainConfig& config);

struct BatchRecord {
    std::size_t epoch = 0;
    std::size_t batch = 0;
    double loss_seg = 0.0;
    double loss_depth = 0.0;
    double lambda_seg = 0.0;
    double lambda_depth = 0.0;
    double loss_total = 0.0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    // Unweighted means over the epoch's batches.
    double loss_seg = 0.0;
    double loss_depth = 0.0;
    double lambda_seg = 0.0;
    double lambda_depth = 0.0;
    double loss_total = 0.0;
    double val_loss_seg = 0.0;
    double val_miou = 0.0;
    std::vector<std::optional<double>> val_iou;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::vector<BatchRecord> batches;
    /// Index into `epochs` of the lowest validation segmentation loss (earliest on ties).
    std::size_t best_epoch = 0;
    std::size_t optimizer_steps = 0;

    const EpochRecord& best() const { return epochs.at(best_epoch); }
};

struct TrainResult {
    ModelGraph best_model;
    TrainReport report;
};

struct Batch {
    Tensor input;      // [B, C_in, H, W]; fusenet appends the depth map as a channel
    SegTarget seg;
    Tensor depth;      // [B, 1, H, W]
};

Batch make_batch(const Dataset& data, std::size_t begin, std::size_t end, ModelKind kind);

/// Batches are taken in dataset order without shuffling.
TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& val_set);

struct EvalResult {
    /// Pixel-weighted mean segmentation loss over the dataset.
    double loss_seg = 0.0;
    ConfusionMatrix confusion;
    IouReport iou;
};

/// Maps a batch to segmentation logits [B, C, H, W].
using Predictor = std::function<Tensor(const Batch&)>;

EvalResult evaluate(const ModelGraph& model, const Dataset& data, std::size_t batch_size = 16);
EvalResult evaluate(const Predictor& predict, const Dataset& data, ModelKind kind, std::size_t num_classes,
                    std::size_t batch_size = 16);

// CSV --------------------------------------------------------------------------------

/// f64 with 9 significant digits.
std::string format_number(double v);

/// epoch,L_seg,L_depth,lambda_seg,lambda_depth,L_total,val_L_seg,val_miou,val_iou_class0..k,best_flag
std::string report_csv(const TrainReport& report);
/// epoch,batch,L_seg,L_depth,lambda_seg,lambda_depth,L_total
std::string batch_log_csv(const TrainReport& report);

}  // namespace auxseg
