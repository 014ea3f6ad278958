#include "auxseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "auxseg/rng.hpp"
#include "binary_io.hpp"

namespace auxseg {

namespace {

constexpr std::array<std::array<double, 3>, kSceneClasses> kBaseColor{{
    {0.62, 0.74, 0.90},  // sky
    {0.42, 0.42, 0.45},  // road
    {0.60, 0.52, 0.46},  // building
    {0.70, 0.22, 0.20},  // car
}};

constexpr double kNoiseAmplitude = 0.05;

std::size_t round_to_size(double v) { return static_cast<std::size_t>(std::lround(v)); }

struct Rect {
    std::size_t top, bottom, left, right;  // half-open [top, bottom) x [left, right)
    double depth;
};

void paint(Scene& s, const Rect& r, SceneClass cls) {
    for (std::size_t y = r.top; y < r.bottom; ++y) {
        for (std::size_t x = r.left; x < r.right; ++x) {
            s.labels[y * s.width + x] = cls;
            s.depth[y * s.width + x] = r.depth;
        }
    }
}

}  // namespace

// Draw order from Rng(seed):
//   horizon; building count; per building: height, width, left, depth;
//   car count; per car: base row, left; then one noise draw per image value in CHW order.
Scene gen_scene(std::uint64_t seed, std::size_t height, std::size_t width, SceneLayout* layout) {
    if (height < 16 || width < 16) {
        throw std::invalid_argument("scene extents must be at least 16x16, got " + std::to_string(height) + "x" +
                                    std::to_string(width));
    }
    Rng rng(seed);
    const auto H = static_cast<std::int64_t>(height);
    const auto W = static_cast<std::int64_t>(width);

    Scene s;
    s.height = height;
    s.width = width;
    s.labels.assign(height * width, kSky);
    s.depth.assign(height * width, 0.0);

    const auto horizon_lo = static_cast<std::int64_t>(std::ceil(0.35 * static_cast<double>(H)));
    const auto horizon_hi = static_cast<std::int64_t>(std::floor(0.55 * static_cast<double>(H)));
    const auto horizon = static_cast<std::size_t>(rng.uniform_int(horizon_lo, horizon_hi));
    const double road_span = static_cast<double>(height - 1 - horizon);
    for (std::size_t y = horizon; y < height; ++y) {
        const double near = static_cast<double>(y - horizon) / road_span;
        for (std::size_t x = 0; x < width; ++x) {
            s.labels[y * width + x] = kRoad;
            s.depth[y * width + x] = near;
        }
    }

    const auto n_buildings = static_cast<std::size_t>(rng.uniform_int(1, 3));
    std::vector<Rect> buildings;
    for (std::size_t i = 0; i < n_buildings; ++i) {
        const auto h = static_cast<double>(horizon);
        const auto bh = static_cast<std::size_t>(rng.uniform_int(std::max<std::int64_t>(2, std::llround(0.3 * h)),
                                                                  std::max<std::int64_t>(2, std::llround(0.9 * h))));
        const auto bw = rng.uniform_int(std::max<std::int64_t>(2, W / 8), std::max<std::int64_t>(2, W / 3));
        const auto left = static_cast<std::size_t>(rng.uniform_int(0, W - bw));
        const double depth = rng.uniform(0.1, 0.4);
        buildings.push_back({horizon - std::min(bh, horizon), horizon, left, left + static_cast<std::size_t>(bw), depth});
    }
    // Farther structures first so nearer ones occlude them.
    std::stable_sort(buildings.begin(), buildings.end(), [](const Rect& a, const Rect& b) { return a.depth < b.depth; });
    for (const auto& b : buildings) paint(s, b, kBuilding);

    const auto n_cars = static_cast<std::size_t>(rng.uniform_int(0, 2));
    std::vector<Rect> cars;
    for (std::size_t i = 0; i < n_cars; ++i) {
        const auto base = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(horizon) + 2, H - 1));
        const double near = static_cast<double>(base - horizon) / road_span;
        const std::size_t ch = std::max<std::size_t>(2, round_to_size((0.1 + 0.3 * near) * static_cast<double>(H)));
        const std::size_t cw = std::max<std::size_t>(3, round_to_size((0.15 + 0.35 * near) * static_cast<double>(W)));
        const auto left = static_cast<std::size_t>(rng.uniform_int(0, W - static_cast<std::int64_t>(cw)));
        const std::size_t top = base + 1 >= ch ? base + 1 - ch : 0;
        cars.push_back({top, base + 1, left, left + cw, near});
    }
    std::stable_sort(cars.begin(), cars.end(), [](const Rect& a, const Rect& b) { return a.depth < b.depth; });
    for (const auto& c : cars) paint(s, c, kCar);

    const std::size_t plane = height * width;
    s.image.resize(3 * plane);
    for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t i = 0; i < plane; ++i) {
            const double shade = 0.5 + 0.5 * s.depth[i];
            const double noise = rng.uniform(-kNoiseAmplitude, kNoiseAmplitude);
            s.image[ch * plane + i] = std::clamp(kBaseColor[s.labels[i]][ch] * shade + noise, 0.0, 1.0);
        }
    }

    if (layout) *layout = {horizon, n_buildings, n_cars};
    return s;
}

void quantize_to_f32(Scene& scene) {
    for (double& v : scene.image) v = static_cast<double>(static_cast<float>(v));
    for (double& v : scene.depth) v = static_cast<double>(static_cast<float>(v));
}

// Dataset files ---------------------------------------------------------------------

namespace {
constexpr std::string_view kDatasetMagic = "AUXD";
constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace

std::size_t dataset_file_size(std::size_t n_samples, std::size_t height, std::size_t width) {
    const std::size_t hw = height * width;
    return kDatasetHeaderBytes + n_samples * (hw * 4 * 3 + hw + hw * 4);
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    const std::size_t hw = dataset.height * dataset.width;
    io::ByteWriter out;
    out.bytes(kDatasetMagic);
    out.u32(kDatasetVersion);
    out.u32(static_cast<std::uint32_t>(dataset.samples.size()));
    out.u32(static_cast<std::uint32_t>(dataset.height));
    out.u32(static_cast<std::uint32_t>(dataset.width));
    out.u32(3);
    out.u32(static_cast<std::uint32_t>(dataset.num_classes));
    for (const auto& s : dataset.samples) {
        if (s.height != dataset.height || s.width != dataset.width || s.image.size() != 3 * hw ||
            s.labels.size() != hw || s.depth.size() != hw) {
            throw std::invalid_argument("write_dataset: sample extents differ from dataset extents");
        }
        for (double v : s.image) out.f32(static_cast<float>(v));
        for (auto l : s.labels) out.u8(l);
        for (double v : s.depth) out.f32(static_cast<float>(v));
    }
    io::write_file(path, out.buffer());
}

Dataset read_dataset(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    const std::string ctx = "dataset " + path.string();
    io::ByteReader in(bytes, ctx);
    if (in.remaining() < 4 || in.bytes(4) != kDatasetMagic) throw io::FormatError(ctx + ": bad magic (expected AUXD)");
    const auto version = in.u32();
    if (version != kDatasetVersion) throw io::FormatError(ctx + ": unsupported version " + std::to_string(version));
    Dataset d;
    const auto n = in.u32();
    d.height = in.u32();
    d.width = in.u32();
    const auto c_in = in.u32();
    d.num_classes = in.u32();
    if (c_in != 3) throw io::FormatError(ctx + ": expected 3 image channels, got " + std::to_string(c_in));
    if (d.height == 0 || d.width == 0) throw io::FormatError(ctx + ": zero extent");
    if (d.num_classes < 2 || d.num_classes > 256) {
        throw io::FormatError(ctx + ": invalid class count " + std::to_string(d.num_classes));
    }

    const std::size_t expected = dataset_file_size(n, d.height, d.width);
    if (bytes.size() < expected) throw io::FormatError(ctx + ": truncated payload");
    if (bytes.size() > expected) {
        throw io::FormatError(ctx + ": sample count mismatch (" + std::to_string(bytes.size() - expected) +
                              " unexpected trailing bytes)");
    }

    const std::size_t hw = d.height * d.width;
    d.samples.resize(n);
    for (auto& s : d.samples) {
        s.height = d.height;
        s.width = d.width;
        s.image.resize(3 * hw);
        s.labels.resize(hw);
        s.depth.resize(hw);
        for (double& v : s.image) v = in.f32();
        for (auto& l : s.labels) {
            l = in.u8();
            if (l >= d.num_classes) throw io::FormatError(ctx + ": label " + std::to_string(l) + " out of range");
        }
        for (double& v : s.depth) v = in.f32();
    }
    return d;
}

std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t split_tag, std::uint64_t index) {
    return Rng::hash(seed ^ split_tag ^ index);
}

Dataset make_split(std::uint64_t seed, std::uint64_t split_tag, std::size_t count, std::size_t height,
                   std::size_t width) {
    if (count == 0) throw std::invalid_argument("split size must be at least 1");
    Dataset d;
    d.height = height;
    d.width = width;
    d.samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Scene s = gen_scene(sample_seed(seed, split_tag, i), height, width);
        quantize_to_f32(s);
        d.samples.push_back(std::move(s));
    }
    return d;
}

std::pair<Dataset, Dataset> make_splits(std::uint64_t seed, std::size_t n_train, std::size_t n_val,
                                        std::size_t height, std::size_t width) {
    return {make_split(seed, kTrainSplitTag, n_train, height, width),
            make_split(seed, kValSplitTag, n_val, height, width)};
}

}  // namespace auxseg
