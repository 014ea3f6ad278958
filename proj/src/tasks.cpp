#include "auxseg/tasks.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace auxseg {

Tensor seg_loss(const Tensor& probs, const SegTarget& target) {
    if (probs.rank() != 4) {
        throw std::invalid_argument("seg_loss: expected [N,C,H,W] probabilities, got " +
                                    shape_to_string(probs.shape()));
    }
    const std::size_t n = probs.dim(0), c = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
    if (target.n != n || target.height != h || target.width != w || target.labels.size() != target.pixels()) {
        throw std::invalid_argument("seg_loss: target shape does not match probabilities " +
                                    shape_to_string(probs.shape()));
    }
    if (!target.ignore.empty() && target.ignore.size() != target.labels.size()) {
        throw std::invalid_argument("seg_loss: ignore mask size differs from label map");
    }
    const std::size_t plane = h * w;
    const auto p = probs.data();

    // Flat index into `probs` of each counted pixel's true-class probability.
    std::vector<std::size_t> picks;
    picks.reserve(target.labels.size());
    auto& branches = detail::branch_state();
    double total = 0.0;
    for (std::size_t i = 0; i < target.labels.size(); ++i) {
        const auto label = target.labels[i];
        if (label < 0 || static_cast<std::size_t>(label) >= c) {
            throw std::invalid_argument("seg_loss: label " + std::to_string(label) + " at pixel " +
                                        std::to_string(i) + " outside [0, " + std::to_string(c) + ")");
        }
        if (target.ignored(i)) continue;
        const std::size_t img = i / plane;
        const std::size_t idx = (img * c + static_cast<std::size_t>(label)) * plane + i % plane;
        const bool clamped = p[idx] < kProbabilityFloor;
        if (branches.active) detail::note_branch(branches, clamped ? 1 : 0);
        total += -std::log(clamped ? kProbabilityFloor : p[idx]);
        picks.push_back(idx);
    }
    if (picks.empty()) throw std::invalid_argument("seg_loss: every pixel is ignored");

    const double inv_count = 1.0 / static_cast<double>(picks.size());
    return Tensor::make_result({}, {total * inv_count}, "seg_loss", {probs},
                               [probs, picks = std::move(picks), inv_count](std::span<const double> g,
                                                                            std::span<const double>) {
                                   const auto p = probs.data();
                                   auto gp = probs.grad_buffer();
                                   for (std::size_t idx : picks) {
                                       if (p[idx] >= kProbabilityFloor) gp[idx] -= g[0] * inv_count / p[idx];
                                   }
                               });
}

Tensor depth_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw std::invalid_argument("depth_loss: shape mismatch " + shape_to_string(pred.shape()) + " vs " +
                                    shape_to_string(target.shape()));
    }
    return mean(abs(sub(pred, target)));
}

std::vector<std::int32_t> argmax_channels(const Tensor& probs) {
    if (probs.rank() != 4) throw std::invalid_argument("argmax_channels: expected NCHW input");
    const std::size_t n = probs.dim(0), c = probs.dim(1), plane = probs.dim(2) * probs.dim(3);
    const auto p = probs.data();
    std::vector<std::int32_t> out(n * plane);
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t i = 0; i < plane; ++i) {
            std::size_t best = 0;
            double best_v = p[b * c * plane + i];
            for (std::size_t k = 1; k < c; ++k) {
                const double v = p[(b * c + k) * plane + i];
                if (v > best_v) {
                    best = k;
                    best_v = v;
                }
            }
            out[b * plane + i] = static_cast<std::int32_t>(best);
        }
    }
    return out;
}

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : num_classes_(num_classes), counts_(num_classes * num_classes, 0) {}

void ConfusionMatrix::add(std::size_t truth, std::size_t pred, std::uint64_t count) {
    if (truth >= num_classes_ || pred >= num_classes_) {
        throw std::out_of_range("confusion matrix index (" + std::to_string(truth) + ", " + std::to_string(pred) +
                                ") outside " + std::to_string(num_classes_) + " classes");
    }
    counts_[truth * num_classes_ + pred] += count;
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t s = 0;
    for (auto v : counts_) s += v;
    return s;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.num_classes_ != num_classes_) throw std::invalid_argument("confusion matrix class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
}

ConfusionMatrix confusion(const std::vector<std::int32_t>& pred_labels, const SegTarget& target,
                          std::size_t num_classes) {
    if (pred_labels.size() != target.labels.size()) {
        throw std::invalid_argument("confusion: prediction and target sizes differ");
    }
    ConfusionMatrix cm(num_classes);
    for (std::size_t i = 0; i < pred_labels.size(); ++i) {
        const auto t = target.labels[i];
        const auto p = pred_labels[i];
        if (t < 0 || static_cast<std::size_t>(t) >= num_classes || p < 0 ||
            static_cast<std::size_t>(p) >= num_classes) {
            throw std::invalid_argument("confusion: label out of range at pixel " + std::to_string(i));
        }
        if (target.ignored(i)) continue;
        cm.add(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
    }
    return cm;
}

IouReport iou_metrics(const ConfusionMatrix& cm) {
    const std::size_t c = cm.num_classes();
    IouReport report;
    report.per_class.resize(c);
    double acc = 0.0;
    std::size_t present = 0;
    for (std::size_t k = 0; k < c; ++k) {
        const std::uint64_t tp = cm.at(k, k);
        std::uint64_t fp = 0, fn = 0;
        for (std::size_t j = 0; j < c; ++j) {
            if (j == k) continue;
            fp += cm.at(j, k);
            fn += cm.at(k, j);
        }
        const std::uint64_t uni = tp + fp + fn;
        if (uni == 0) continue;
        const double iou = static_cast<double>(tp) / static_cast<double>(uni);
        report.per_class[k] = iou;
        acc += iou;
        ++present;
    }
    if (present == 0) throw std::invalid_argument("iou_metrics: no class has a nonzero union");
    report.mean_iou = acc / static_cast<double>(present);
    return report;
}

}  // namespace auxseg
