#include "auxseg/weighting.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace auxseg {

namespace {

void require_scalar(const Tensor& t, const char* what) {
    if (t.numel() != 1) throw std::invalid_argument(std::string(what) + " must be a scalar tensor");
}

void require_loss(const Tensor& t, const char* what) {
    require_scalar(t, what);
    const double v = t.item();
    if (!std::isfinite(v)) throw std::domain_error(std::string(what) + " is not finite");
    if (v < 0.0) throw std::domain_error(std::string(what) + " is negative");
}

// lambda_seg * L_seg + lambda_depth * L_depth with both lambdas constant.
Tensor weighted_sum(const Tensor& ls, const Tensor& ld, double lambda_seg, double lambda_depth) {
    return add(scalar_mul(ls, lambda_seg), scalar_mul(ld, lambda_depth));
}

}  // namespace

CombineResult combine_fixed(const Tensor& loss_seg, const Tensor& loss_depth, double lambda_seg,
                            double lambda_depth) {
    require_scalar(loss_seg, "segmentation loss");
    require_scalar(loss_depth, "depth loss");
    if (!(lambda_seg > 0.0) || !(lambda_depth > 0.0)) {
        throw std::invalid_argument("fixed loss weights must be positive");
    }
    return {lambda_seg, lambda_depth, weighted_sum(loss_seg, loss_depth, lambda_seg, lambda_depth),
            loss_seg.item(), loss_depth.item()};
}

CombineResult combine_twb(const Tensor& loss_seg, const Tensor& loss_depth, WeightGradient mode) {
    require_loss(loss_seg, "segmentation loss");
    require_loss(loss_depth, "depth loss");
    const double ls = loss_seg.item();
    const double ld = loss_depth.item();
    CombineResult r{ld, ls, {}, ls, ld};
    if (mode == WeightGradient::detached) {
        r.total = weighted_sum(loss_seg, loss_depth, r.lambda_seg, r.lambda_depth);
    } else {
        r.total = scalar_mul(mul(loss_seg, loss_depth), 2.0);
    }
    return r;
}

CombineResult combine_ftwb(const Tensor& loss_seg, const Tensor& loss_depth, WeightGradient mode) {
    require_loss(loss_seg, "segmentation loss");
    require_loss(loss_depth, "depth loss");
    const double ls = loss_seg.item();
    const double ld = loss_depth.item();
    CombineResult r{ls * ld, ls, {}, ls, ld};
    if (mode == WeightGradient::detached) {
        r.total = weighted_sum(loss_seg, loss_depth, r.lambda_seg, r.lambda_depth);
    } else {
        r.total = mul(mul(add_scalar(loss_seg, 1.0), loss_seg), loss_depth);
    }
    return r;
}

WeightEma::WeightEma(double beta) : beta_(beta) {
    if (!(beta > 0.0 && beta < 1.0)) {
        throw std::invalid_argument("EMA decay must lie in (0, 1), got " + std::to_string(beta));
    }
}

WeightEma::Weights WeightEma::update(double raw_seg, double raw_depth) {
    if (!state_) {
        state_ = Weights{raw_seg, raw_depth};
    } else {
        state_->seg = beta_ * state_->seg + (1.0 - beta_) * raw_seg;
        state_->depth = beta_ * state_->depth + (1.0 - beta_) * raw_depth;
    }
    return *state_;
}

WeightingStrategy WeightingStrategy::fixed(double lambda_seg, double lambda_depth) {
    if (!(lambda_seg > 0.0) || !(lambda_depth > 0.0)) {
        throw std::invalid_argument("fixed loss weights must be positive");
    }
    return {WeightingKind::fixed, lambda_seg, lambda_depth, WeightGradient::detached};
}

WeightingStrategy WeightingStrategy::twb(WeightGradient mode) { return {WeightingKind::twb, 0.0, 0.0, mode}; }

WeightingStrategy WeightingStrategy::ftwb(WeightGradient mode) { return {WeightingKind::ftwb, 0.0, 0.0, mode}; }

WeightingStrategy& WeightingStrategy::with_ema(double beta) {
    if (mode_ == WeightGradient::through) {
        throw std::invalid_argument("EMA smoothing requires detached loss weights");
    }
    ema_.emplace(beta);
    return *this;
}

CombineResult WeightingStrategy::step(const Tensor& loss_seg, const Tensor& loss_depth) {
    switch (kind_) {
        case WeightingKind::fixed:
            return combine_fixed(loss_seg, loss_depth, fixed_seg_, fixed_depth_);
        case WeightingKind::twb:
        case WeightingKind::ftwb: {
            CombineResult r = kind_ == WeightingKind::twb ? combine_twb(loss_seg, loss_depth, mode_)
                                                          : combine_ftwb(loss_seg, loss_depth, mode_);
            if (ema_) {
                const auto smoothed = ema_->update(r.lambda_seg, r.lambda_depth);
                r.lambda_seg = smoothed.seg;
                r.lambda_depth = smoothed.depth;
                r.total = weighted_sum(loss_seg, loss_depth, r.lambda_seg, r.lambda_depth);
            }
            return r;
        }
    }
    throw std::logic_error("unhandled weighting kind");
}

}  // namespace auxseg
