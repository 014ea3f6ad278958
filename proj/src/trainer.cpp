#include "auxseg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>

#include "auxseg/layers.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace auxseg {

// Adam -------------------------------------------------------------------------------

AdamState::AdamState(AdamConfig cfg, const NamedParams& params) : config(cfg) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const auto& [name, t] : params) {
        m.emplace_back(t.numel(), 0.0);
        v.emplace_back(t.numel(), 0.0);
    }
}

void adam_step(AdamState& state, const NamedParams& params) {
    if (params.size() != state.m.size()) throw std::invalid_argument("adam_step: parameter list changed");
    for (std::size_t p = 0; p < params.size(); ++p) {
        const auto& [name, t] = params[p];
        if (t.numel() != state.m[p].size()) throw std::invalid_argument("adam_step: shape changed for " + name);
        for (double g : t.grad()) {
            if (!std::isfinite(g)) throw std::domain_error("adam_step: non-finite gradient in parameter " + name);
        }
    }

    const auto& c = state.config;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bias1 = 1.0 - std::pow(c.beta1, t);
    const double bias2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor param = params[p].second;
        const auto grad = param.grad();
        auto theta = param.mutable_data();
        auto& m = state.m[p];
        auto& v = state.v[p];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double g = grad.empty() ? 0.0 : grad[i];
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
            const double m_hat = m[i] / bias1;
            const double v_hat = v[i] / bias2;
            theta[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
        }
    }
}

// Variants ---------------------------------------------------------------------------

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::segnet: return "segnet";
        case Variant::aux400: return "aux400";
        case Variant::aux1000: return "aux1000";
        case Variant::auxtwb: return "auxtwb";
        case Variant::auxftwb: return "auxftwb";
        case Variant::fusenet: return "fusenet";
    }
    return "unknown";
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> all{Variant::segnet,  Variant::aux400,  Variant::aux1000,
                                          Variant::auxtwb,  Variant::auxftwb, Variant::fusenet};
    return all;
}

Variant parse_variant(std::string_view name) {
    for (Variant v : all_variants()) {
        if (to_string(v) == name) return v;
    }
    throw std::invalid_argument("unknown variant '" + std::string(name) + "'");
}

ModelKind model_kind_for(Variant v) {
    switch (v) {
        case Variant::segnet: return ModelKind::segnet;
        case Variant::fusenet: return ModelKind::fusenet;
        default: return ModelKind::auxnet;
    }
}

void TrainConfig::validate() const {
    if (epochs == 0) throw std::invalid_argument("epochs must be at least 1");
    if (batch_size == 0) throw std::invalid_argument("batch size must be at least 1");
    if (!(adam.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (height % 8 != 0 || height == 0) throw std::invalid_argument("height must be divisible by 8");
    if (width % 8 != 0 || width == 0) throw std::invalid_argument("width must be divisible by 8");
    if (ema_beta && !(*ema_beta > 0.0 && *ema_beta < 1.0)) throw std::invalid_argument("EMA decay must lie in (0, 1)");
}

WeightingStrategy make_strategy(const TrainConfig& config) {
    auto strategy = [&] {
        switch (config.variant) {
            case Variant::aux400: return WeightingStrategy::fixed(400.0, 1.0);
            case Variant::aux1000: return WeightingStrategy::fixed(1000.0, 1.0);
            case Variant::auxtwb: return WeightingStrategy::twb(config.weight_gradient);
            case Variant::auxftwb: return WeightingStrategy::ftwb(config.weight_gradient);
            default: return WeightingStrategy::fixed(1.0, 1.0);
        }
    }();
    if (config.ema_beta) strategy.with_ema(*config.ema_beta);
    return strategy;
}

// Batches ------------------------------------------------------------------------------

Batch make_batch(const Dataset& data, std::size_t begin, std::size_t end, ModelKind kind) {
    if (begin >= end || end > data.size()) throw std::out_of_range("make_batch: invalid sample range");
    const std::size_t b = end - begin;
    const std::size_t hw = data.height * data.width;
    const std::size_t channels = kind == ModelKind::fusenet ? 4 : 3;

    std::vector<double> input(b * channels * hw);
    std::vector<double> depth(b * hw);
    SegTarget seg{b, data.height, data.width, std::vector<std::int32_t>(b * hw), {}};
    for (std::size_t i = 0; i < b; ++i) {
        const Scene& s = data.samples[begin + i];
        std::copy(s.image.begin(), s.image.end(), input.begin() + static_cast<std::ptrdiff_t>(i * channels * hw));
        if (channels == 4) {
            std::copy(s.depth.begin(), s.depth.end(),
                      input.begin() + static_cast<std::ptrdiff_t>((i * channels + 3) * hw));
        }
        std::copy(s.depth.begin(), s.depth.end(), depth.begin() + static_cast<std::ptrdiff_t>(i * hw));
        for (std::size_t p = 0; p < hw; ++p) seg.labels[i * hw + p] = s.labels[p];
    }
    return {Tensor::from_data({b, channels, data.height, data.width}, std::move(input)), std::move(seg),
            Tensor::from_data({b, 1, data.height, data.width}, std::move(depth))};
}

// Evaluation ---------------------------------------------------------------------------

EvalResult evaluate(const Predictor& predict, const Dataset& data, ModelKind kind, std::size_t num_classes,
                    std::size_t batch_size) {
    if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    if (batch_size == 0) throw std::invalid_argument("evaluate: batch size must be positive");
    NoGradGuard no_grad;
    EvalResult result{0.0, ConfusionMatrix(num_classes), {}};
    double loss_sum = 0.0;
    std::size_t pixels = 0;
    for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
        const std::size_t end = std::min(data.size(), begin + batch_size);
        const Batch batch = make_batch(data, begin, end, kind);
        const Tensor probs = softmax_channels(predict(batch));
        const double loss = seg_loss(probs, batch.seg).item();
        loss_sum += loss * static_cast<double>(batch.seg.pixels());
        pixels += batch.seg.pixels();
        result.confusion += confusion(argmax_channels(probs), batch.seg, num_classes);
    }
    result.loss_seg = loss_sum / static_cast<double>(pixels);
    result.iou = iou_metrics(result.confusion);
    return result;
}

EvalResult evaluate(const ModelGraph& model, const Dataset& data, std::size_t batch_size) {
    if (data.num_classes != model.num_classes()) {
        throw std::invalid_argument("evaluate: dataset has " + std::to_string(data.num_classes) +
                                    " classes, model predicts " + std::to_string(model.num_classes()));
    }
    return evaluate([&model](const Batch& b) { return model.forward(b.input).seg_logits; }, data, model.kind(),
                    model.num_classes(), batch_size);
}

// Training -----------------------------------------------------------------------------

namespace {

// Activation buffers are multi-megabyte and short-lived. Keeping them on the heap
// instead of fresh mmap regions avoids a page-fault storm on every step.
void keep_large_blocks_on_heap() {
#if defined(__GLIBC__)
    static std::once_flag once;
    std::call_once(once, [] {
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        mallopt(M_TOP_PAD, 64 << 20);
    });
#endif
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& val_set) {
    config.validate();
    keep_large_blocks_on_heap();
    if (train_set.size() == 0 || val_set.size() == 0) throw std::invalid_argument("train: datasets must be nonempty");
    for (const Dataset* d : {&train_set, &val_set}) {
        if (d->height != config.height || d->width != config.width || d->num_classes != config.num_classes) {
            throw std::invalid_argument("train: dataset extents " + std::to_string(d->height) + "x" +
                                        std::to_string(d->width) + " with " + std::to_string(d->num_classes) +
                                        " classes do not match the configuration");
        }
    }

    const ModelKind kind = model_kind_for(config.variant);
    ModelGraph model = build_model(kind, 3, config.num_classes, config.height, config.width, config.seed);
    const NamedParams params = model.parameters();
    WeightingStrategy strategy = make_strategy(config);
    AdamState adam(config.adam, params);

    TrainReport report;
    std::optional<ModelGraph> best;
    double best_val = std::numeric_limits<double>::infinity();

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        EpochRecord row;
        row.epoch = epoch;
        std::size_t n_batches = 0;
        for (std::size_t begin = 0; begin < train_set.size(); begin += config.batch_size) {
            const std::size_t end = std::min(train_set.size(), begin + config.batch_size);
            const Batch batch = make_batch(train_set, begin, end, kind);
            const ForwardOutputs out = model.forward(batch.input);
            const Tensor loss_seg = seg_loss(softmax_channels(out.seg_logits), batch.seg);

            BatchRecord rec;
            rec.epoch = epoch;
            rec.batch = n_batches + 1;
            Tensor total;
            if (out.depth) {
                const Tensor loss_depth = depth_loss(*out.depth, batch.depth);
                const CombineResult combined = strategy.step(loss_seg, loss_depth);
                total = combined.total;
                rec.loss_seg = combined.loss_seg;
                rec.loss_depth = combined.loss_depth;
                rec.lambda_seg = combined.lambda_seg;
                rec.lambda_depth = combined.lambda_depth;
            } else {
                total = loss_seg;
                rec.loss_seg = loss_seg.item();
                rec.lambda_seg = 1.0;
                rec.lambda_depth = 0.0;
            }
            rec.loss_total = total.item();
            if (!std::isfinite(rec.loss_total)) {
                throw std::runtime_error("non-finite total loss at epoch " + std::to_string(epoch) + ", batch " +
                                         std::to_string(rec.batch));
            }

            total.backward();
            adam_step(adam, params);
            model.zero_grad();
            ++report.optimizer_steps;

            row.loss_seg += rec.loss_seg;
            row.loss_depth += rec.loss_depth;
            row.lambda_seg += rec.lambda_seg;
            row.lambda_depth += rec.lambda_depth;
            row.loss_total += rec.loss_total;
            report.batches.push_back(rec);
            ++n_batches;
        }
        const double inv = 1.0 / static_cast<double>(n_batches);
        row.loss_seg *= inv;
        row.loss_depth *= inv;
        row.lambda_seg *= inv;
        row.lambda_depth *= inv;
        row.loss_total *= inv;

        const EvalResult val = evaluate(model, val_set, config.batch_size);
        row.val_loss_seg = val.loss_seg;
        row.val_miou = val.iou.mean_iou;
        row.val_iou = val.iou.per_class;
        report.epochs.push_back(row);

        if (val.loss_seg < best_val) {
            best_val = val.loss_seg;
            report.best_epoch = report.epochs.size() - 1;
            best = model.clone();
            if (!config.checkpoint_path.empty()) save_checkpoint(*best, config.checkpoint_path);
        }
    }
    if (!best) {
        // Only reachable if every validation loss was NaN.
        throw std::runtime_error("train: validation loss never became finite");
    }
    return {std::move(*best), std::move(report)};
}

// CSV ----------------------------------------------------------------------------------

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string report_csv(const TrainReport& report) {
    std::ostringstream out;
    const std::size_t classes = report.epochs.empty() ? 0 : report.epochs.front().val_iou.size();
    out << "epoch,L_seg,L_depth,lambda_seg,lambda_depth,L_total,val_L_seg,val_miou";
    for (std::size_t c = 0; c < classes; ++c) out << ",val_iou_class" << c;
    out << ",best_flag\n";
    for (std::size_t i = 0; i < report.epochs.size(); ++i) {
        const auto& r = report.epochs[i];
        out << r.epoch << ',' << format_number(r.loss_seg) << ',' << format_number(r.loss_depth) << ','
            << format_number(r.lambda_seg) << ',' << format_number(r.lambda_depth) << ','
            << format_number(r.loss_total) << ',' << format_number(r.val_loss_seg) << ','
            << format_number(r.val_miou);
        for (const auto& iou : r.val_iou) out << ',' << (iou ? format_number(*iou) : "nan");
        out << ',' << (i == report.best_epoch ? 1 : 0) << '\n';
    }
    return out.str();
}

std::string batch_log_csv(const TrainReport& report) {
    std::ostringstream out;
    out << "epoch,batch,L_seg,L_depth,lambda_seg,lambda_depth,L_total\n";
    for (const auto& b : report.batches) {
        out << b.epoch << ',' << b.batch << ',' << format_number(b.loss_seg) << ',' << format_number(b.loss_depth)
            << ',' << format_number(b.lambda_seg) << ',' << format_number(b.lambda_depth) << ','
            << format_number(b.loss_total) << '\n';
    }
    return out.str();
}

}  // namespace auxseg
