#include "auxseg/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "auxseg/data.hpp"
#include "auxseg/manifest.hpp"
#include "auxseg/models.hpp"
#include "auxseg/trainer.hpp"
#include "binary_io.hpp"
#include "json.hpp"

namespace auxseg {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

constexpr const char* kTrainFile = "train.auxd";
constexpr const char* kValFile = "val.auxd";
constexpr const char* kManifestFile = "manifest.json";

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::uint64_t seed = 1;
    std::size_t n_train = 512;
    std::size_t n_val = 128;
    std::size_t height = 32;
    std::size_t width = 48;
    std::string variant = "segnet";
    std::size_t epochs = 30;
    std::size_t batch = 16;
    double lr = 1e-3;
    std::string ema_beta = "off";
    std::string detach = "on";
    std::size_t seeds = 5;
    std::string data_dir = "data";
    std::string out_dir = "out";
    bool pretty = false;
    std::string manifest;
};

void check_extent(const char* name, std::size_t v) {
    if (v == 0 || v % 8 != 0) throw UsageError(std::string(name) + " must be divisible by 8");
    if (v < 16) throw UsageError(std::string(name) + " must be at least 16");
}

std::optional<double> parse_ema(const std::string& text) {
    if (text == "off") return std::nullopt;
    double beta = 0.0;
    std::istringstream in(text);
    if (!(in >> beta) || !in.eof() || !(beta > 0.0 && beta < 1.0)) {
        throw UsageError("--ema-beta expects a value in (0,1) or 'off', got '" + text + "'");
    }
    return beta;
}

void write_text(const fs::path& path, const std::string& text) {
    io::write_file(path, std::vector<char>(text.begin(), text.end()));
}

// Writes the manifest, then reads it back and recomputes every checksum.
void finalize_manifest(const RunManifest& manifest, const fs::path& path) {
    write_manifest(manifest, path);
    const auto problems = verify_manifest(path);
    if (!problems.empty()) throw std::runtime_error("manifest verification failed: " + problems.front());
}

struct Inputs {
    Dataset train;
    Dataset val;
    std::vector<ManifestEntry> entries;
};

Inputs load_inputs(const fs::path& data_dir, const fs::path& manifest_dir) {
    for (const char* name : {kTrainFile, kValFile}) {
        if (!fs::exists(data_dir / name)) throw std::runtime_error("missing dataset " + (data_dir / name).string());
    }
    const fs::path data_manifest = data_dir / kManifestFile;
    if (fs::exists(data_manifest)) {
        const auto problems = verify_manifest(data_manifest);
        if (!problems.empty()) throw std::runtime_error("dataset manifest " + data_manifest.string() + ": " + problems.front());
    }
    Inputs in{read_dataset(data_dir / kTrainFile), read_dataset(data_dir / kValFile), {}};
    // Recorded relative to the manifest so output directories stay relocatable.
    const fs::path base = fs::absolute(manifest_dir);
    for (const char* name : {kTrainFile, kValFile}) {
        in.entries.push_back(hash_entry(base, fs::relative(fs::absolute(data_dir / name), base).generic_string()));
    }
    return in;
}

TrainConfig train_config(const Options& o, const Dataset& data) {
    TrainConfig cfg;
    cfg.variant = parse_variant(o.variant);
    cfg.epochs = o.epochs;
    cfg.batch_size = o.batch;
    cfg.adam.lr = o.lr;
    cfg.ema_beta = parse_ema(o.ema_beta);
    cfg.weight_gradient = o.detach == "on" ? WeightGradient::detached : WeightGradient::through;
    cfg.seed = o.seed;
    cfg.height = data.height;
    cfg.width = data.width;
    cfg.num_classes = data.num_classes;
    if (cfg.ema_beta && cfg.weight_gradient == WeightGradient::through) {
        throw UsageError("--ema-beta requires --detach on");
    }
    if (cfg.height % 8 != 0) throw UsageError("height must be divisible by 8");
    if (cfg.width % 8 != 0) throw UsageError("width must be divisible by 8");
    return cfg;
}

Json config_echo(const TrainConfig& cfg, const std::string& data_dir) {
    Json j;
    j["data"] = data_dir;
    j["variant"] = std::string(to_string(cfg.variant));
    j["epochs"] = cfg.epochs;
    j["batch"] = cfg.batch_size;
    j["lr"] = cfg.adam.lr;
    j["beta1"] = cfg.adam.beta1;
    j["beta2"] = cfg.adam.beta2;
    j["eps"] = cfg.adam.eps;
    j["ema_beta"] = cfg.ema_beta ? Json(*cfg.ema_beta) : Json("off");
    j["detach"] = cfg.weight_gradient == WeightGradient::detached ? "on" : "off";
    j["seed"] = cfg.seed;
    j["height"] = cfg.height;
    j["width"] = cfg.width;
    j["num_classes"] = cfg.num_classes;
    return j;
}

// gen-data ---------------------------------------------------------------------------

int cmd_gen_data(const Options& o, std::ostream& out) {
    check_extent("height", o.height);
    check_extent("width", o.width);
    if (o.n_train == 0 || o.n_val == 0) throw UsageError("--train and --val must be at least 1");
    const fs::path dir(o.out_dir);
    fs::create_directories(dir);
    const auto [train_set, val_set] = make_splits(o.seed, o.n_train, o.n_val, o.height, o.width);
    write_dataset(train_set, dir / kTrainFile);
    write_dataset(val_set, dir / kValFile);

    RunManifest m;
    m.command = "gen-data";
    m.config_json = Json{{"seed", o.seed}, {"train", o.n_train}, {"val", o.n_val},
                         {"height", o.height}, {"width", o.width}}.dump();
    m.seeds = {o.seed};
    m.artifacts = {hash_entry(dir, kTrainFile), hash_entry(dir, kValFile)};
    finalize_manifest(m, dir / kManifestFile);
    out << (dir / kManifestFile).string() << "\n";
    return kExitOk;
}

// train ------------------------------------------------------------------------------

int cmd_train(const Options& o, std::ostream& out) {
    parse_ema(o.ema_beta);
    const fs::path dir(o.out_dir);
    fs::create_directories(dir);
    const Inputs in = load_inputs(o.data_dir, dir);
    TrainConfig cfg = train_config(o, in.train);
    cfg.checkpoint_path = dir / "checkpoint.auxc";

    const TrainResult result = train(cfg, in.train, in.val);
    write_text(dir / "report.csv", report_csv(result.report));
    write_text(dir / "batches.csv", batch_log_csv(result.report));

    RunManifest m;
    m.command = "train";
    m.config_json = config_echo(cfg, o.data_dir).dump();
    m.seeds = {cfg.seed};
    m.inputs = in.entries;
    m.artifacts = {hash_entry(dir, "checkpoint.auxc"), hash_entry(dir, "report.csv"), hash_entry(dir, "batches.csv")};
    finalize_manifest(m, dir / kManifestFile);

    const EpochRecord& best = result.report.best();
    out << "variant=" << to_string(cfg.variant) << " best_epoch=" << best.epoch
        << " val_L_seg=" << format_number(best.val_loss_seg) << " val_miou=" << format_number(best.val_miou) << "\n";
    out << (dir / kManifestFile).string() << "\n";
    return kExitOk;
}

// compare ----------------------------------------------------------------------------

struct RunResult {
    Variant variant = Variant::segnet;
    std::uint64_t seed = 0;
    TrainReport report;
};

std::size_t worker_count(std::size_t jobs) {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("AUXSEG_THREADS")) {
        char* end = nullptr;
        const unsigned long cap = std::strtoul(env, &end, 10);
        if (end == env || *end != '\0' || cap == 0) throw UsageError("AUXSEG_THREADS must be a positive integer");
        n = std::min<std::size_t>(n, cap);
    }
    return std::min(n, jobs);
}

// Trainings are independent; results land in a slot fixed by job index.
std::vector<RunResult> run_jobs(const std::vector<TrainConfig>& jobs, const Inputs& in) {
    std::vector<RunResult> results(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            try {
                results[i] = {jobs[i].variant, jobs[i].seed, train(jobs[i], in.train, in.val).report};
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t n = worker_count(jobs.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return results;
}

std::string iou_cell(const std::optional<double>& v) { return v ? format_number(*v) : "nan"; }

struct VariantSummary {
    std::vector<std::optional<double>> mean_iou;  // per class over seeds where present
    double mean_miou = 0.0;
};

VariantSummary summarize(const std::vector<const RunResult*>& runs, std::size_t classes) {
    VariantSummary s;
    s.mean_iou.assign(classes, std::nullopt);
    for (std::size_t c = 0; c < classes; ++c) {
        double total = 0.0;
        std::size_t n = 0;
        for (const auto* r : runs) {
            if (const auto& v = r->report.best().val_iou[c]) {
                total += *v;
                ++n;
            }
        }
        if (n > 0) s.mean_iou[c] = total / static_cast<double>(n);
    }
    for (const auto* r : runs) s.mean_miou += r->report.best().val_miou;
    s.mean_miou /= static_cast<double>(runs.size());
    return s;
}

void print_pretty(std::ostream& out, const std::vector<Variant>& variants,
                  const std::map<Variant, VariantSummary>& summary, const std::map<Variant, ModelGraph>& models,
                  std::size_t classes) {
    auto fixed4 = [](const std::optional<double>& v) {
        if (!v) return std::string("-");
        std::ostringstream s;
        s << std::fixed << std::setprecision(2) << 100.0 * *v;
        return s.str();
    };
    out << std::left << std::setw(10) << "model";
    for (std::size_t c = 0; c < classes; ++c) {
        out << std::right << std::setw(10) << (c < kSceneClassNames.size() ? std::string(kSceneClassNames[c]) : "class" + std::to_string(c));
    }
    out << std::right << std::setw(10) << "mean IoU" << std::setw(12) << "train par" << std::setw(12) << "infer par" << "\n";
    for (Variant v : variants) {
        const auto& s = summary.at(v);
        const auto& m = models.at(v);
        out << std::left << std::setw(10) << to_string(v) << std::right;
        for (std::size_t c = 0; c < classes; ++c) out << std::setw(10) << fixed4(s.mean_iou[c]);
        out << std::setw(10) << fixed4(s.mean_miou) << std::setw(12) << m.param_count(CountMode::training)
            << std::setw(12) << m.param_count(CountMode::inference) << "\n";
    }
}

int cmd_compare(const Options& o, std::ostream& out) {
    parse_ema(o.ema_beta);
    if (o.seeds == 0) throw UsageError("--seeds must be at least 1");
    const fs::path dir(o.out_dir);
    fs::create_directories(dir / "runs");
    const Inputs in = load_inputs(o.data_dir, dir);
    const TrainConfig base = train_config(o, in.train);
    const std::vector<Variant>& variants = all_variants();
    std::vector<std::uint64_t> seeds;
    for (std::size_t k = 0; k < o.seeds; ++k) seeds.push_back(o.seed + k);

    std::vector<TrainConfig> jobs;
    for (Variant v : variants) {
        for (std::uint64_t s : seeds) {
            TrainConfig cfg = base;
            cfg.variant = v;
            cfg.seed = s;
            jobs.push_back(cfg);
        }
    }
    const std::vector<RunResult> results = run_jobs(jobs, in);

    const std::size_t classes = base.num_classes;
    std::map<Variant, std::vector<const RunResult*>> by_variant;
    std::vector<std::string> artifacts;
    for (const auto& r : results) {
        by_variant[r.variant].push_back(&r);
        const std::string name = "runs/" + std::string(to_string(r.variant)) + "_seed" + std::to_string(r.seed) + ".csv";
        write_text(dir / name, report_csv(r.report));
        artifacts.push_back(name);
    }

    std::map<Variant, VariantSummary> summary;
    std::map<Variant, ModelGraph> models;
    for (Variant v : variants) {
        summary.emplace(v, summarize(by_variant[v], classes));
        models.emplace(v, build_model(model_kind_for(v), kSceneImageChannels, classes, base.height, base.width, 0));
    }

    std::ostringstream t1;
    t1 << "variant,seed,best_epoch";
    for (std::size_t c = 0; c < classes; ++c) t1 << ",iou_class" << c;
    t1 << ",miou\n";
    for (Variant v : variants) {
        for (const auto* r : by_variant[v]) {
            const EpochRecord& best = r->report.best();
            t1 << to_string(v) << "," << r->seed << "," << best.epoch;
            for (const auto& x : best.val_iou) t1 << "," << iou_cell(x);
            t1 << "," << format_number(best.val_miou) << "\n";
        }
        t1 << to_string(v) << ",mean,";
        for (const auto& x : summary[v].mean_iou) t1 << "," << iou_cell(x);
        t1 << "," << format_number(summary[v].mean_miou) << "\n";
    }
    write_text(dir / "table1.csv", t1.str());

    std::ostringstream t2;
    t2 << "variant,model,train_params,inference_params,mean_miou\n";
    for (Variant v : variants) {
        const auto& m = models.at(v);
        t2 << to_string(v) << "," << to_string(m.kind()) << "," << m.param_count(CountMode::training) << ","
           << m.param_count(CountMode::inference) << "," << format_number(summary[v].mean_miou) << "\n";
    }
    write_text(dir / "table2.csv", t2.str());

    std::ostringstream wins;
    wins << "variant,seed,miou,segnet_miou,win\n";
    std::ostringstream summary_lines;
    for (Variant v : variants) {
        if (model_kind_for(v) != ModelKind::auxnet) continue;
        std::size_t w = 0;
        for (std::size_t k = 0; k < seeds.size(); ++k) {
            const double mine = by_variant[v][k]->report.best().val_miou;
            const double base_miou = by_variant[Variant::segnet][k]->report.best().val_miou;
            const bool win = mine > base_miou;
            w += win ? 1 : 0;
            wins << to_string(v) << "," << seeds[k] << "," << format_number(mine) << "," << format_number(base_miou)
                 << "," << (win ? 1 : 0) << "\n";
        }
        summary_lines << to_string(v) << " aux_wins=" << w << "/" << seeds.size() << "\n";
    }
    write_text(dir / "wins.csv", wins.str());

    RunManifest m;
    m.command = "compare";
    Json cfg = config_echo(base, o.data_dir);
    cfg.erase("variant");
    cfg.erase("seed");
    Json names = Json::array();
    for (Variant v : variants) names.push_back(std::string(to_string(v)));
    cfg["variants"] = names;
    m.config_json = cfg.dump();
    m.seeds = std::vector<unsigned long long>(seeds.begin(), seeds.end());
    m.inputs = in.entries;
    for (const char* name : {"table1.csv", "table2.csv", "wins.csv"}) m.artifacts.push_back(hash_entry(dir, name));
    for (const auto& name : artifacts) m.artifacts.push_back(hash_entry(dir, name));
    finalize_manifest(m, dir / kManifestFile);

    if (o.pretty) print_pretty(out, variants, summary, models, classes);
    out << summary_lines.str();
    out << (dir / kManifestFile).string() << "\n";
    return kExitOk;
}

// verify -----------------------------------------------------------------------------

int cmd_verify(const Options& o, std::ostream& out, std::ostream& err) {
    const auto problems = verify_manifest(o.manifest);
    for (const auto& p : problems) err << p << "\n";
    if (!problems.empty()) return kExitRuntime;
    out << "ok " << o.manifest << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Segmentation with an auxiliary depth task: data generation, training, comparison", "auxseg"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);
    app.set_version_flag("--version", std::string(kToolVersion));

    std::vector<std::string> variant_names;
    for (Variant v : all_variants()) variant_names.emplace_back(to_string(v));

    auto* gen = app.add_subcommand("gen-data", "Generate train/val scene datasets");
    gen->add_option("--seed", o.seed, "Dataset seed")->capture_default_str();
    gen->add_option("--train", o.n_train, "Training samples")->capture_default_str();
    gen->add_option("--val", o.n_val, "Validation samples")->capture_default_str();
    gen->add_option("--height", o.height, "Image height")->capture_default_str();
    gen->add_option("--width", o.width, "Image width")->capture_default_str();
    gen->add_option("--out", o.out_dir, "Output directory")->capture_default_str();

    auto add_training_flags = [&](CLI::App* cmd) {
        cmd->add_option("--data", o.data_dir, "Directory holding train.auxd and val.auxd")->capture_default_str();
        cmd->add_option("--epochs", o.epochs, "Epochs")->capture_default_str()->check(CLI::PositiveNumber);
        cmd->add_option("--batch", o.batch, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
        cmd->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
        cmd->add_option("--ema-beta", o.ema_beta, "Loss-weight EMA factor in (0,1), or off")->capture_default_str();
        cmd->add_option("--detach", o.detach, "Treat loss-derived weights as constants")
            ->capture_default_str()
            ->check(CLI::IsMember({"on", "off"}));
        cmd->add_option("--out", o.out_dir, "Output directory")->capture_default_str();
    };

    auto* tr = app.add_subcommand("train", "Train one variant");
    tr->add_option("--variant", o.variant, "Model/weighting variant")
        ->capture_default_str()
        ->check(CLI::IsMember(variant_names));
    tr->add_option("--seed", o.seed, "Initialization seed")->capture_default_str();
    add_training_flags(tr);

    auto* cmp = app.add_subcommand("compare", "Train every variant over several seeds");
    cmp->add_option("--seeds", o.seeds, "Number of seeds")->capture_default_str();
    cmp->add_option("--seed", o.seed, "First seed")->capture_default_str();
    cmp->add_flag("--pretty", o.pretty, "Print an aligned summary table");
    add_training_flags(cmp);

    auto* ver = app.add_subcommand("verify", "Recompute the checksums listed in a manifest");
    ver->add_option("manifest", o.manifest, "Manifest path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*gen) return cmd_gen_data(o, out);
        if (*tr) return cmd_train(o, out);
        if (*cmp) return cmd_compare(o, out);
        return cmd_verify(o, out, err);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace auxseg
