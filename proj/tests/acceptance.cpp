// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails. `--only N` runs a single criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "auxseg/cli.hpp"
#include "auxseg/data.hpp"
#include "auxseg/grad_check.hpp"
#include "auxseg/manifest.hpp"
#include "auxseg/models.hpp"
#include "auxseg/tasks.hpp"
#include "auxseg/trainer.hpp"
#include "auxseg/weighting.hpp"

using namespace auxseg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / "auxseg_acceptance" / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "auxseg");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

// 1 -------------------------------------------------------------------------------------

Outcome loss_algebra() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(101);
    double worst = 0.0;
    std::size_t order_violations = 0;
    for (int i = 0; i < 10000; ++i) {
        const double s = rng.uniform(0, 10), d = rng.uniform(0, 10);
        const Tensor ls = Tensor::scalar(s), ld = Tensor::scalar(d);
        const double twb = combine_twb(ls, ld).total.item();
        const double ftwb = combine_ftwb(ls, ld).total.item();
        worst = std::max({worst, std::abs(twb - 2 * s * d), std::abs(ftwb - (s + 1) * s * d),
                          std::abs(ftwb - (s + 1) / 2 * twb)});
        if ((ftwb >= twb) != (s >= 1.0)) ++order_violations;
    }
    const double t = seconds_since(t0);
    return {worst <= 1e-12 && order_violations == 0 && t < 1.0,
            "max abs error " + fmt("%.3g", worst) + ", ordering violations " + std::to_string(order_violations) +
                ", " + fmt("%.3f", t) + " s"};
}

// 2 -------------------------------------------------------------------------------------

Outcome gradient_checks() {
    const auto t0 = std::chrono::steady_clock::now();
    const ModelGraph model = build_model(ModelKind::auxnet, 3, 4, 32, 48, 202);
    const auto [data, unused] = make_splits(7, 2, 1, 32, 48);
    const Batch batch = make_batch(data, 0, 2, ModelKind::auxnet);
    auto params = model.parameter_tensors();
    for (auto& p : params) p.set_requires_grad(true);

    auto losses = [&] {
        const auto out = model.forward(batch.input);
        return std::pair{seg_loss(softmax_channels(out.seg_logits), batch.seg), depth_loss(*out.depth, batch.depth)};
    };
    double lam_twb[2], lam_ftwb[2];
    {
        NoGradGuard no_grad;
        const auto [ls, ld] = losses();
        const auto t = combine_twb(ls, ld), f = combine_ftwb(ls, ld);
        lam_twb[0] = t.lambda_seg, lam_twb[1] = t.lambda_depth;
        lam_ftwb[0] = f.lambda_seg, lam_ftwb[1] = f.lambda_depth;
    }
    // Detached weights are constants of the batch, so their check freezes them at the base point.
    const std::vector<std::pair<std::string, std::function<Tensor()>>> objectives{
        {"fixed(400,1)", [&] { auto [s, d] = losses(); return combine_fixed(s, d, 400, 1).total; }},
        {"twb", [&] { auto [s, d] = losses(); return combine_twb(s, d, WeightGradient::through).total; }},
        {"ftwb", [&] { auto [s, d] = losses(); return combine_ftwb(s, d, WeightGradient::through).total; }},
        {"twb-detached", [&] { auto [s, d] = losses(); return combine_fixed(s, d, lam_twb[0], lam_twb[1]).total; }},
        {"ftwb-detached", [&] { auto [s, d] = losses(); return combine_fixed(s, d, lam_ftwb[0], lam_ftwb[1]).total; }},
    };
    bool pass = true;
    std::string detail;
    std::uint64_t seed = 1;
    for (const auto& [name, f] : objectives) {
        GradCheckOptions opt;
        opt.max_entries = 240;
        opt.sample_seed = seed++;
        const GradCheckReport r = grad_check(f, params, opt);
        pass = pass && r.passed && r.checked >= 200 && r.max_relative_error <= 1e-4;
        detail += name + " " + fmt("%.2e", r.max_relative_error) + " (" + std::to_string(r.checked) + " checked, " +
                  std::to_string(r.resolved) + " above floor " + fmt("%.1e", r.floor) + ") ";
    }
    const double t = seconds_since(t0);
    pass = pass && t < 120.0;
    return {pass, detail + fmt("%.1f s", t)};
}

// 3 -------------------------------------------------------------------------------------

Outcome detach_equivalence() {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const ModelGraph base = build_model(ModelKind::auxnet, 3, 4, 32, 48, 300 + seed);
        const auto [data, unused] = make_splits(seed, 2, 1, 32, 48);
        const Batch batch = make_batch(data, 0, 2, ModelKind::auxnet);
        auto grads = [&](WeightGradient mode) {
            ModelGraph m = base.clone();
            const auto out = m.forward(batch.input);
            combine_twb(seg_loss(softmax_channels(out.seg_logits), batch.seg), depth_loss(*out.depth, batch.depth), mode)
                .total.backward();
            std::vector<double> g;
            for (const auto& p : m.parameter_tensors()) g.insert(g.end(), p.grad().begin(), p.grad().end());
            return g;
        };
        const auto detached = grads(WeightGradient::detached);
        const auto through = grads(WeightGradient::through);
        for (std::size_t i = 0; i < detached.size(); ++i) {
            const double half = 0.5 * through[i];
            if (detached[i] == half) continue;
            worst = std::max(worst, std::abs(detached[i] - half) / std::max(std::abs(detached[i]), std::abs(half)));
        }
    }
    return {worst <= 1e-10, "max relative error " + fmt("%.3g", worst) + " over 5 nets"};
}

// 4 -------------------------------------------------------------------------------------

Outcome metric_oracle() {
    Rng rng(404);
    std::size_t mismatches = 0, merges_bad = 0;
    for (int rep = 0; rep < 100; ++rep) {
        SegTarget t{1, 8, 8, {}, {}};
        std::vector<std::int32_t> pred(64);
        for (int i = 0; i < 64; ++i) {
            t.labels.push_back(static_cast<std::int32_t>(rng.uniform_int(0, 3)));
            pred[i] = static_cast<std::int32_t>(rng.uniform_int(0, 3));
        }
        const IouReport got = iou_metrics(confusion(pred, t, 4));
        double sum = 0.0;
        std::size_t present = 0;
        for (std::int32_t c = 0; c < 4; ++c) {
            std::uint64_t tp = 0, fp = 0, fn = 0;
            for (int i = 0; i < 64; ++i) {
                tp += (pred[i] == c && t.labels[i] == c);
                fp += (pred[i] == c && t.labels[i] != c);
                fn += (pred[i] != c && t.labels[i] == c);
            }
            const std::uint64_t uni = tp + fp + fn;
            const std::optional<double> want =
                uni == 0 ? std::nullopt : std::optional<double>(static_cast<double>(tp) / static_cast<double>(uni));
            if (want) {
                sum += *want;
                ++present;
            }
            if (got.per_class[static_cast<std::size_t>(c)] != want) ++mismatches;
        }
        if (got.mean_iou != sum / static_cast<double>(present)) ++mismatches;

        // Merge additivity: split the 64 pixels into two halves.
        SegTarget a{1, 4, 8, {t.labels.begin(), t.labels.begin() + 32}, {}};
        SegTarget b{1, 4, 8, {t.labels.begin() + 32, t.labels.end()}, {}};
        ConfusionMatrix merged = confusion({pred.begin(), pred.begin() + 32}, a, 4);
        merged += confusion({pred.begin() + 32, pred.end()}, b, 4);
        if (!(merged == confusion(pred, t, 4))) ++merges_bad;
    }
    return {mismatches == 0 && merges_bad == 0,
            std::to_string(mismatches) + " IoU mismatches, " + std::to_string(merges_bad) + " merge mismatches"};
}

// 5 -------------------------------------------------------------------------------------

Outcome determinism() {
    const fs::path d1 = scratch("gen1"), d2 = scratch("gen2");
    const std::vector<std::string> gen{"gen-data", "--seed", "7", "--train", "512", "--val", "128", "--height", "32",
                                       "--width", "48", "--out"};
    auto with = [](std::vector<std::string> v, const fs::path& p) {
        v.push_back(p.string());
        return v;
    };
    const bool gen_ok = cli(with(gen, d1)) == 0 && cli(with(gen, d2)) == 0;
    const bool sha_equal = gen_ok && sha256_file(d1 / "train.auxd") == sha256_file(d2 / "train.auxd") &&
                           sha256_file(d1 / "val.auxd") == sha256_file(d2 / "val.auxd");

    const fs::path small = scratch("small");
    const bool small_ok = cli({"gen-data", "--seed", "7", "--train", "48", "--val", "16", "--out", small.string()}) == 0;
    const fs::path t1 = scratch("train1"), t2 = scratch("train2");
    const std::vector<std::string> tr{"train", "--variant", "auxftwb", "--epochs", "3", "--seed", "1",
                                      "--data", small.string(), "--out"};
    const bool train_ok = small_ok && cli(with(tr, t1)) == 0 && cli(with(tr, t2)) == 0;
    const bool same = train_ok && slurp(t1 / "report.csv") == slurp(t2 / "report.csv") &&
                      slurp(t1 / "checkpoint.auxc") == slurp(t2 / "checkpoint.auxc");
    return {sha_equal && same, std::string("dataset SHA-256 ") + (sha_equal ? "identical" : "DIFFERENT") +
                                   ", report+checkpoint " + (same ? "identical" : "DIFFERENT")};
}

// 6 -------------------------------------------------------------------------------------

Outcome checkpoint_round_trip() {
    bool pass = true;
    const auto [data, unused] = make_splits(9, 2, 1, 32, 48);
    for (ModelKind k : {ModelKind::segnet, ModelKind::auxnet, ModelKind::fusenet}) {
        const ModelGraph m = build_model(k, 3, 4, 32, 48, 606);
        const fs::path p = scratch("ckpt") / "m.auxc";
        save_checkpoint(m, p);
        const ModelGraph back = load_checkpoint(p, m);
        const Batch batch = make_batch(data, 0, 2, k);
        const auto a = m.forward(batch.input), b = back.forward(batch.input);
        const auto sa = a.seg_logits.data(), sb = b.seg_logits.data();
        pass = pass && std::equal(sa.begin(), sa.end(), sb.begin(), sb.end());
        if (a.depth) {
            const auto da = a.depth->data(), db = b.depth->data();
            pass = pass && std::equal(da.begin(), da.end(), db.begin(), db.end());
        }
    }
    return {pass, pass ? "segnet, auxnet, fusenet outputs bit-identical" : "outputs differ after reload"};
}

// 7 -------------------------------------------------------------------------------------

Outcome adam_unit() {
    Rng rng(707);
    double closed_worst = 0.0, scale_worst = 0.0, eps_term_worst = 0.0;
    auto step_once = [](const std::vector<double>& g, const AdamConfig& cfg) {
        Tensor t = Tensor::zeros({g.size()}, true);
        std::copy(g.begin(), g.end(), t.grad_buffer().begin());
        const NamedParams p{{"p", t}};
        AdamState st(cfg, p);
        adam_step(st, p);
        return std::vector<double>(t.data().begin(), t.data().end());
    };
    std::vector<double> g(64);
    for (double& x : g) x = rng.uniform(-3, 3);
    const AdamConfig cfg;
    const auto delta = step_once(g, cfg);
    for (std::size_t i = 0; i < g.size(); ++i) {
        closed_worst = std::max(closed_worst, std::abs(-delta[i] - cfg.lr * g[i] / (std::abs(g[i]) + cfg.eps)));
    }
    AdamConfig pure = cfg;
    pure.eps = 0.0;
    const auto base_pure = step_once(g, pure);
    for (double c : {1e-3, 0.1, 2.0, 37.0, 1e4}) {
        std::vector<double> gs = g;
        for (double& x : gs) x *= c;
        const auto scaled_pure = step_once(gs, pure);
        const auto scaled = step_once(gs, cfg);
        for (std::size_t i = 0; i < g.size(); ++i) {
            scale_worst = std::max(scale_worst, std::abs(scaled_pure[i] - base_pure[i]));
            // With eps the step-1 update is lr*g/(|g|+eps); compare the scaled run to that form too.
            eps_term_worst = std::max(eps_term_worst,
                                      std::abs(-scaled[i] - cfg.lr * gs[i] / (std::abs(gs[i]) + cfg.eps)));
        }
    }
    const bool pass = closed_worst <= 1e-12 && scale_worst <= 1e-12 && eps_term_worst <= 1e-12;
    return {pass, "closed form " + fmt("%.3g", closed_worst) + ", scale invariance (eps=0) " +
                      fmt("%.3g", scale_worst) + ", scaled closed form " + fmt("%.3g", eps_term_worst)};
}

// 8 -------------------------------------------------------------------------------------

Outcome parameter_accounting() {
    const ToyTopology topo;
    const ModelGraph seg = build_model(ModelKind::segnet, 3, 4, 32, 48, 1);
    const ModelGraph aux = build_model(ModelKind::auxnet, 3, 4, 32, 48, 1);
    const ModelGraph fuse = build_model(ModelKind::fusenet, 3, 4, 32, 48, 1);
    // Standalone depth decoder: three k=2 transposed convs over the skip widths, then a 1x1 head to one channel.
    const auto& e = topo.encoder_channels;
    const auto& d = topo.decoder_channels;
    const std::size_t depth_decoder = (e[2] * d[0] * 4 + d[0]) + ((d[0] + e[1]) * d[1] * 4 + d[1]) +
                                      ((d[1] + e[0]) * d[2] * 4 + d[2]) + (d[2] * 1 + 1);
    const double ratio = static_cast<double>(fuse.param_count(CountMode::training)) /
                         static_cast<double>(seg.param_count(CountMode::training));
    const bool pass = ratio >= 1.8 && aux.param_count(CountMode::inference) == seg.param_count(CountMode::training) &&
                      aux.param_count(CountMode::training) - aux.param_count(CountMode::inference) == depth_decoder;
    return {pass, "segnet " + std::to_string(seg.param_count(CountMode::training)) + ", auxnet " +
                      std::to_string(aux.param_count(CountMode::training)) + "/" +
                      std::to_string(aux.param_count(CountMode::inference)) + ", fusenet " +
                      std::to_string(fuse.param_count(CountMode::training)) + " (ratio " + fmt("%.3f", ratio) +
                      "), depth decoder " + std::to_string(depth_decoder)};
}

// 9 -------------------------------------------------------------------------------------

Outcome directional() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto [train_set, val_set] = make_splits(7, 512, 128, 32, 48);
    const std::vector<Variant> variants{Variant::segnet, Variant::auxtwb, Variant::auxftwb};
    std::map<Variant, std::vector<double>> miou;
    for (Variant v : variants) {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            TrainConfig cfg;
            cfg.variant = v;
            cfg.seed = seed;
            cfg.epochs = 30;
            cfg.batch_size = 16;
            cfg.adam.lr = 1e-3;
            const TrainResult r = train(cfg, train_set, val_set);
            miou[v].push_back(r.report.best().val_miou);
            std::printf("  %-8s seed %llu  best epoch %2zu  val mIoU %.4f\n", std::string(to_string(v)).c_str(),
                        static_cast<unsigned long long>(seed), r.report.best().epoch, r.report.best().val_miou);
            std::fflush(stdout);
        }
    }
    auto mean = [](const std::vector<double>& x) {
        double s = 0;
        for (double v : x) s += v;
        return s / static_cast<double>(x.size());
    };
    const double seg_mean = mean(miou[Variant::segnet]);
    bool pass = true;
    std::string detail = "segnet mean " + fmt("%.4f", seg_mean);
    for (Variant v : {Variant::auxtwb, Variant::auxftwb}) {
        int wins = 0;
        for (std::size_t k = 0; k < 5; ++k) wins += miou[v][k] > miou[Variant::segnet][k] ? 1 : 0;
        const double m = mean(miou[v]);
        pass = pass && m >= seg_mean - 0.005 && wins >= 3;
        detail += ", " + std::string(to_string(v)) + " mean " + fmt("%.4f", m) + " wins " + std::to_string(wins) + "/5";
    }
    const double t = seconds_since(t0);
    pass = pass && t <= 1200.0;
    return {pass, detail + ", " + fmt("%.0f s", t)};
}

// 10 ------------------------------------------------------------------------------------

Outcome ema_closed_form() {
    double worst = 0.0;
    for (double beta : {0.5, 0.9, 0.99}) {
        for (double start : {0.0, 4.5, -2.0}) {
            const double r = 1.25;
            WeightEma ema(beta);
            ema.update(start, start);
            for (int k = 1; k <= 500; ++k) {
                const auto w = ema.update(r, r);
                worst = std::max(worst, std::abs(w.seg - (r + std::pow(beta, k) * (start - r))));
            }
        }
    }
    return {worst <= 1e-12, "max deviation " + fmt("%.3g", worst) + " over 500 steps"};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"loss-algebra identities", loss_algebra},
        {"gradient checks", gradient_checks},
        {"detach-semantics equivalence", detach_equivalence},
        {"metric oracle", metric_oracle},
        {"determinism", determinism},
        {"checkpoint round-trip", checkpoint_round_trip},
        {"adam unit", adam_unit},
        {"parameter accounting", parameter_accounting},
        {"directional training result", directional},
        {"ema closed form", ema_closed_form},
    };
    std::size_t only = 0;
    if (argc == 3 && std::string(argv[1]) == "--only") only = std::stoul(argv[2]);

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (only != 0 && only != i + 1) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
