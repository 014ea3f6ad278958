#include <algorithm>
#include <cmath>
#include <numeric>

#include "auxseg/grad_check.hpp"
#include "auxseg/layers.hpp"
#include "auxseg/tasks.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace auxseg;
using test::random_tensor;

namespace {

SegTarget random_target(std::size_t n, std::size_t h, std::size_t w, std::size_t classes, Rng& rng,
                        double ignore_rate = 0.0) {
    SegTarget t{n, h, w, {}, {}};
    for (std::size_t i = 0; i < n * h * w; ++i) {
        t.labels.push_back(static_cast<std::int32_t>(rng.uniform_int(0, classes - 1)));
        if (ignore_rate > 0) t.ignore.push_back(rng.uniform() < ignore_rate ? 1 : 0);
    }
    return t;
}

std::vector<std::int32_t> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
    std::vector<std::int32_t> v(n);
    for (auto& x : v) x = static_cast<std::int32_t>(rng.uniform_int(0, classes - 1));
    return v;
}

}  // namespace

TEST_SUITE("tasks") {

TEST_CASE("seg_loss hand values") {
    Rng rng(1);
    const SegTarget t = random_target(2, 3, 3, 4, rng);
    CHECK(seg_loss(Tensor::full({2, 4, 3, 3}, 0.25), t).item() == doctest::Approx(std::log(4.0)).epsilon(1e-15));

    std::vector<double> onehot(2 * 4 * 9, 0.0);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t p = 0; p < 9; ++p) onehot[(b * 4 + static_cast<std::size_t>(t.labels[b * 9 + p])) * 9 + p] = 1.0;
    CHECK(seg_loss(Tensor::from_data({2, 4, 3, 3}, onehot), t).item() == 0.0);

    // Two pixels, true class 0 with p = 0.5 and 0.25.
    const Tensor probs = Tensor::from_data({1, 2, 1, 2}, {0.5, 0.25, 0.5, 0.75});
    const SegTarget two{1, 1, 2, {0, 0}, {}};
    CHECK(seg_loss(probs, two).item() == doctest::Approx((std::log(2.0) + std::log(4.0)) / 2).epsilon(1e-15));
    CHECK(seg_loss(probs, two).item() == doctest::Approx(1.039720770839918).epsilon(1e-14));
}

TEST_CASE("seg_loss ignore mask and errors") {
    const Tensor probs = Tensor::from_data({1, 2, 1, 2}, {0.5, 0.25, 0.5, 0.75});
    const SegTarget masked{1, 1, 2, {0, 0}, {0, 1}};
    CHECK(seg_loss(probs, masked).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK_THROWS_AS(seg_loss(probs, SegTarget{1, 1, 2, {0, 0}, {1, 1}}), std::invalid_argument);
    CHECK_THROWS_AS(seg_loss(probs, SegTarget{1, 1, 2, {0, 2}, {}}), std::invalid_argument);
    CHECK_THROWS_AS(seg_loss(probs, SegTarget{1, 2, 1, {0, 0}, {}}), std::invalid_argument);
}

TEST_CASE("seg_loss clamps zero probabilities") {
    const Tensor probs = Tensor::from_data({1, 2, 1, 1}, {0.0, 1.0});
    const double v = seg_loss(probs, SegTarget{1, 1, 1, {0}, {}}).item();
    CHECK(v == doctest::Approx(-std::log(kProbabilityFloor)).epsilon(1e-15));
}

TEST_CASE("seg_loss is nonnegative") {
    Rng rng(2);
    for (int rep = 0; rep < 50; ++rep) {
        const Tensor probs = softmax_channels(random_tensor({1, 3, 2, 2}, rng, -4, 4));
        CHECK(seg_loss(probs, random_target(1, 2, 2, 3, rng)).item() >= 0.0);
    }
}

TEST_CASE("depth_loss values and properties") {
    const Tensor a = Tensor::from_data({1, 1, 1, 2}, {1, 2});
    CHECK(depth_loss(a, a).item() == 0.0);
    CHECK(depth_loss(a, Tensor::from_data({1, 1, 1, 2}, {1.5, 1.5})).item() == 0.5);
    const Tensor c = Tensor::full({1, 1, 2, 2}, 0.3);
    CHECK(depth_loss(add_scalar(c, -0.75), c).item() == doctest::Approx(0.75).epsilon(1e-15));

    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        const Tensor x = random_tensor({1, 1, 3, 3}, rng);
        const Tensor y = random_tensor({1, 1, 3, 3}, rng);
        const Tensor z = random_tensor({1, 1, 3, 3}, rng);
        CHECK(depth_loss(x, y).item() == depth_loss(y, x).item());
        CHECK(depth_loss(x, z).item() <= depth_loss(x, y).item() + depth_loss(y, z).item() + 1e-15);
    }
    CHECK_THROWS_AS(depth_loss(a, Tensor::zeros({1, 1, 2, 1})), std::invalid_argument);
}

TEST_CASE("losses pass gradient checks") {
    Rng rng(4);
    Tensor logits = random_tensor({2, 3, 2, 3}, rng, -2, 2, true);
    const SegTarget t = random_target(2, 2, 3, 3, rng, 0.2);
    Tensor pred = test::random_away_from_zero({2, 1, 2, 3}, rng);
    const Tensor zero = Tensor::zeros({2, 1, 2, 3});
    std::vector<Tensor> p1{logits};
    CHECK(grad_check([&] { return seg_loss(softmax_channels(logits), t); }, p1).passed);
    std::vector<Tensor> p2{pred};
    const auto r = grad_check([&] { return depth_loss(pred, zero); }, p2);
    CHECK(r.passed);
    CHECK(r.skipped == 0);
}

TEST_CASE("argmax ties go to the lowest class") {
    const Tensor p = Tensor::from_data({1, 3, 1, 2}, {0.2, 0.5, 0.4, 0.5, 0.4, 0.0});
    CHECK(argmax_channels(p) == std::vector<std::int32_t>{1, 0});
}

TEST_CASE("confusion counts") {
    const SegTarget t{1, 2, 5, std::vector<std::int32_t>(10, 2), {}};
    const ConfusionMatrix cm = confusion(std::vector<std::int32_t>(10, 2), t, 4);
    CHECK(cm.at(2, 2) == 10);
    CHECK(cm.total() == 10);

    const SegTarget all_ignored{1, 1, 3, {0, 1, 2}, {1, 1, 1}};
    const ConfusionMatrix empty = confusion({0, 1, 2}, all_ignored, 3);
    CHECK(empty.total() == 0);
    CHECK_THROWS_AS(iou_metrics(empty), std::invalid_argument);
    CHECK_THROWS_AS(confusion({0, 3}, SegTarget{1, 1, 2, {0, 0}, {}}, 3), std::invalid_argument);
}

TEST_CASE("confusion matches the tally oracle and merges additively") {
    Rng rng(5);
    for (int rep = 0; rep < 100; ++rep) {
        const SegTarget t = random_target(1, 8, 8, 4, rng, rep % 2 == 0 ? 0.1 : 0.0);
        const auto pred = random_labels(64, 4, rng);
        const ConfusionMatrix cm = confusion(pred, t, 4);
        const auto oracle = test::tally_oracle(pred, t, 4);
        for (std::size_t a = 0; a < 4; ++a)
            for (std::size_t b = 0; b < 4; ++b) CHECK(cm.at(a, b) == oracle[a * 4 + b]);

        const SegTarget u = random_target(1, 8, 8, 4, rng);
        const auto pred_u = random_labels(64, 4, rng);
        SegTarget both{2, 8, 8, t.labels, {}};
        both.labels.insert(both.labels.end(), u.labels.begin(), u.labels.end());
        if (!t.ignore.empty()) {
            both.ignore = t.ignore;
            both.ignore.resize(128, 0);
        }
        auto pred_both = pred;
        pred_both.insert(pred_both.end(), pred_u.begin(), pred_u.end());
        ConfusionMatrix merged = cm;
        merged += confusion(pred_u, u, 4);
        CHECK(merged == confusion(pred_both, both, 4));
    }
}

TEST_CASE("iou hand values") {
    ConfusionMatrix perfect(3);
    perfect.add(0, 0, 5);
    perfect.add(2, 2, 7);
    const IouReport p = iou_metrics(perfect);
    CHECK(p.per_class[0] == 1.0);
    CHECK_FALSE(p.per_class[1].has_value());
    CHECK(p.per_class[2] == 1.0);
    CHECK(p.mean_iou == 1.0);

    ConfusionMatrix disjoint(2);
    disjoint.add(0, 1, 4);
    disjoint.add(1, 1, 3);
    CHECK(iou_metrics(disjoint).per_class[0] == 0.0);

    // TP = 2, FP = 1, FN = 2 for class 0.
    ConfusionMatrix cm(2);
    cm.add(0, 0, 2);
    cm.add(1, 0, 1);
    cm.add(0, 1, 2);
    CHECK(iou_metrics(cm).per_class[0] == doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("iou is invariant under consistent relabeling") {
    Rng rng(6);
    for (int rep = 0; rep < 30; ++rep) {
        ConfusionMatrix cm(4);
        for (std::size_t a = 0; a < 4; ++a)
            for (std::size_t b = 0; b < 4; ++b) cm.add(a, b, rng.uniform_int(0, 5));
        if (cm.total() == 0) continue;
        std::vector<std::size_t> perm{0, 1, 2, 3};
        for (std::size_t i = 3; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);
        ConfusionMatrix permuted(4);
        for (std::size_t a = 0; a < 4; ++a)
            for (std::size_t b = 0; b < 4; ++b) permuted.add(perm[a], perm[b], cm.at(a, b));
        const IouReport x = iou_metrics(cm);
        const IouReport y = iou_metrics(permuted);
        for (std::size_t c = 0; c < 4; ++c) CHECK(x.per_class[c] == y.per_class[perm[c]]);
        CHECK(x.mean_iou == doctest::Approx(y.mean_iou).epsilon(1e-15));
    }
}

}  // TEST_SUITE
