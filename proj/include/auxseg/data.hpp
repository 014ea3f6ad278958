#pragma once

// Procedural street scenes with aligned RGB, class labels and depth, and the
// on-disk dataset container.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

namespace auxseg {

enum SceneClass : std::uint8_t { kSky = 0, kRoad = 1, kBuilding = 2, kCar = 3 };
inline constexpr std::size_t kSceneClasses = 4;
inline constexpr std::size_t kSceneImageChannels = 3;
inline constexpr std::array<const char*, kSceneClasses> kSceneClassNames{"sky", "road", "building", "car"};

/// Depth is normalized nearness: 0 farthest (sky), 1 nearest.
struct Scene {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> image;          // [3, H, W] planar, values in [0, 1]
    std::vector<std::uint8_t> labels;   // [H, W]
    std::vector<double> depth;          // [H, W]

    bool operator==(const Scene&) const = default;
};

struct Dataset {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t num_classes = kSceneClasses;
    std::vector<Scene> samples;

    std::size_t size() const { return samples.size(); }
    bool operator==(const Dataset&) const = default;
};

/// Generation parameters that the scene layout exposes for tests.
struct SceneLayout {
    std::size_t horizon = 0;
    std::size_t buildings = 0;
    std::size_t cars = 0;
};

Scene gen_scene(std::uint64_t seed, std::size_t height, std::size_t width, SceneLayout* layout = nullptr);

/// Rounds image and depth to f32 precision, matching what a dataset file stores.
void quantize_to_f32(Scene& scene);

// Dataset file, little-endian, no padding:
//   "AUXD", u32 version=1, u32 n_samples, u32 H, u32 W, u32 c_in=3, u32 num_classes,
//   then per sample: image f32[3*H*W] (CHW), labels u8[H*W], depth f32[H*W].

inline constexpr std::size_t kDatasetHeaderBytes = 28;
std::size_t dataset_file_size(std::size_t n_samples, std::size_t height, std::size_t width);

void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

inline constexpr std::uint64_t kTrainSplitTag = 0x5452'4149'4E00'0000ULL;  // "TRAIN"
inline constexpr std::uint64_t kValSplitTag = 0x5641'4C00'0000'0000ULL;    // "VAL"

/// Per-sample seed: SplitMix64(seed ^ split_tag ^ index).
std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t split_tag, std::uint64_t index);

Dataset make_split(std::uint64_t seed, std::uint64_t split_tag, std::size_t count, std::size_t height,
                   std::size_t width);

/// Train and validation sets, already quantized to their stored f32 values.
std::pair<Dataset, Dataset> make_splits(std::uint64_t seed, std::size_t n_train, std::size_t n_val,
                                        std::size_t height, std::size_t width);

}  // namespace auxseg
