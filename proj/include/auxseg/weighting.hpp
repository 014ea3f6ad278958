#pragma once

// Combining the segmentation and depth losses into one training objective.
//
//   fixed:  L = w_seg * L_seg + w_depth * L_depth with constant weights.
//   twb:    w_seg = L_depth, w_depth = L_seg           ->  L = 2 * L_seg * L_depth
//   ftwb:   w_seg = L_seg * L_depth, w_depth = L_seg   ->  L = (L_seg + 1) * L_seg * L_depth
//
// Loss-derived weights are recomputed from every batch. By default they are
// constants of the batch (no gradient flows through them); the product form
// with gradients through both factors is available as WeightGradient::through.

#include <optional>

#include "auxseg/tensor.hpp"

namespace auxseg {

enum class WeightingKind { fixed, twb, ftwb };

/// Whether loss-derived weights are treated as constants or differentiated.
enum class WeightGradient { detached, through };

struct CombineResult {
    double lambda_seg = 0.0;
    double lambda_depth = 0.0;
    Tensor total;
    double loss_seg = 0.0;
    double loss_depth = 0.0;
};

CombineResult combine_fixed(const Tensor& loss_seg, const Tensor& loss_depth, double lambda_seg,
                            double lambda_depth);
CombineResult combine_twb(const Tensor& loss_seg, const Tensor& loss_depth,
                          WeightGradient mode = WeightGradient::detached);
CombineResult combine_ftwb(const Tensor& loss_seg, const Tensor& loss_depth,
                           WeightGradient mode = WeightGradient::detached);

/// Exponential moving average over per-batch weights. The first update sets
/// the state to the raw weights.
class WeightEma {
public:
    explicit WeightEma(double beta = 0.9);

    double beta() const { return beta_; }
    bool initialized() const { return state_.has_value(); }
    struct Weights {
        double seg;
        double depth;
    };
    Weights update(double raw_seg, double raw_depth);
    std::optional<Weights> state() const { return state_; }

private:
    double beta_;
    std::optional<Weights> state_;
};

class WeightingStrategy {
public:
    static WeightingStrategy fixed(double lambda_seg, double lambda_depth);
    static WeightingStrategy twb(WeightGradient mode = WeightGradient::detached);
    static WeightingStrategy ftwb(WeightGradient mode = WeightGradient::detached);

    /// Smooth loss-derived weights across batches. Ignored for fixed weights.
    WeightingStrategy& with_ema(double beta);

    WeightingKind kind() const { return kind_; }
    WeightGradient gradient_mode() const { return mode_; }
    const std::optional<WeightEma>& ema() const { return ema_; }

    /// Called once per batch; advances the EMA state when configured.
    CombineResult step(const Tensor& loss_seg, const Tensor& loss_depth);

private:
    WeightingStrategy(WeightingKind kind, double ls, double ld, WeightGradient mode)
        : kind_(kind), fixed_seg_(ls), fixed_depth_(ld), mode_(mode) {}

    WeightingKind kind_;
    double fixed_seg_;
    double fixed_depth_;
    WeightGradient mode_;
    std::optional<WeightEma> ema_;
};

}  // namespace auxseg
