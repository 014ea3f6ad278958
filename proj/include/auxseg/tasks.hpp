#pragma once

// Task losses and segmentation metrics.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "auxseg/tensor.hpp"

namespace auxseg {

/// Per-pixel class labels, [N, H, W] row-major. `ignore[i] != 0` drops pixel i.
struct SegTarget {
    std::size_t n = 0, height = 0, width = 0;
    std::vector<std::int32_t> labels;
    std::vector<std::uint8_t> ignore;

    std::size_t pixels() const { return n * height * width; }
    bool ignored(std::size_t i) const { return !ignore.empty() && ignore[i] != 0; }
};

/// Floor applied to probabilities before the log in seg_loss.
inline constexpr double kProbabilityFloor = 1e-12;

/// Mean over non-ignored pixels of -log(max(p_true, 1e-12)). `probs` is [N,C,H,W].
Tensor seg_loss(const Tensor& probs, const SegTarget& target);

/// Mean absolute error. `target` is a constant tensor of the same shape.
Tensor depth_loss(const Tensor& pred, const Tensor& target);

/// Per-pixel argmax over channels, ties to the lowest class. Returns [N*H*W].
std::vector<std::int32_t> argmax_channels(const Tensor& probs);

/// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes = 0);

    std::size_t num_classes() const { return num_classes_; }
    std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * num_classes_ + pred]; }
    void add(std::size_t truth, std::size_t pred, std::uint64_t count = 1);
    std::uint64_t total() const;

    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::size_t num_classes_;
    std::vector<std::uint64_t> counts_;
};

ConfusionMatrix confusion(const std::vector<std::int32_t>& pred_labels, const SegTarget& target,
                          std::size_t num_classes);

struct IouReport {
    /// Empty for classes that never occur in either truth or prediction.
    std::vector<std::optional<double>> per_class;
    /// Mean over classes with a nonzero union.
    double mean_iou = 0.0;
};

IouReport iou_metrics(const ConfusionMatrix& cm);

}  // namespace auxseg
