#pragma once

// The three comparison networks at toy scale:
//   segnet  - encoder + segmentation decoder
//   auxnet  - shared encoder + segmentation decoder + depth decoder
//   fusenet - RGB encoder with a depth-input encoder added stage-wise + segmentation decoder
//
// Encoder: three stages of conv3x3(pad 1) -> relu -> maxpool2, features at 1/2, 1/4, 1/8.
// Decoder: up0 (1/8 -> 1/4), concat stage-2 skip, up1 (1/4 -> 1/2), concat stage-1 skip,
// up2 (1/2 -> 1/1), then a 1x1 head. Transposed convs are k=2, s=2 followed by relu.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "auxseg/layers.hpp"
#include "auxseg/tensor.hpp"

namespace auxseg {

enum class ModelKind : std::uint32_t { segnet = 0, auxnet = 1, fusenet = 2 };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

struct ToyTopology {
    std::array<std::size_t, 3> encoder_channels{16, 32, 64};
    std::array<std::size_t, 3> decoder_channels{8, 8, 8};
};

struct Encoder {
    std::array<ConvSpec, 3> stages;
};

struct Decoder {
    std::array<TransposedConvSpec, 3> ups;
    ConvSpec head;
};

struct ForwardOutputs {
    Tensor seg_logits;
    std::optional<Tensor> depth;
};

enum class CountMode { training, inference };

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

class ModelGraph {
public:
    ModelKind kind() const { return kind_; }
    std::size_t image_channels() const { return image_channels_; }
    /// Channels expected in the forward batch (fusenet appends one depth channel).
    std::size_t input_channels() const;
    std::size_t num_classes() const { return num_classes_; }
    const ToyTopology& topology() const { return topology_; }
    bool has_depth_head() const { return depth_decoder_.has_value(); }

    ForwardOutputs forward(const Tensor& batch) const;

    /// Parameters in a fixed order with stable dotted names.
    NamedParams parameters() const;
    std::vector<Tensor> parameter_tensors() const;

    std::size_t param_count(CountMode mode) const;
    /// Parameters of the depth decoder alone (0 when absent).
    std::size_t depth_decoder_param_count() const;

    /// Same parameters (shared storage) with the depth decoder removed.
    ModelGraph without_depth_decoder() const;

    /// Independent copy of every parameter.
    ModelGraph clone() const;

    void zero_grad();

private:
    friend ModelGraph build_model(ModelKind, std::size_t, std::size_t, std::size_t, std::size_t, std::uint64_t,
                                  const ToyTopology&);
    friend ModelGraph load_checkpoint(const std::filesystem::path&);

    ModelKind kind_ = ModelKind::segnet;
    std::size_t image_channels_ = 3;
    std::size_t num_classes_ = 0;
    ToyTopology topology_;
    Encoder encoder_;
    std::optional<Encoder> depth_encoder_;
    Decoder seg_decoder_;
    std::optional<Decoder> depth_decoder_;
};

/// Deterministic in (arguments, seed). Parameters are drawn in the order
/// encoder, depth encoder, segmentation decoder, depth decoder, so segnet and
/// auxnet built from one seed share their encoder and segmentation decoder.
ModelGraph build_model(ModelKind kind, std::size_t image_channels, std::size_t num_classes, std::size_t height,
                       std::size_t width, std::uint64_t seed, const ToyTopology& topology = {});

/// Parameter count of one standalone decoder for the given topology.
std::size_t decoder_param_count(const ToyTopology& topology, std::size_t out_channels);

// Checkpoint file, little-endian, no padding:
//   "AUXC", u32 version=1, u32 kind, u32 tensor count,
//   per tensor: u16 name length, name bytes, u8 rank, u32 extents[rank], f64 data.

void save_checkpoint(const ModelGraph& model, const std::filesystem::path& path);
ModelGraph load_checkpoint(const std::filesystem::path& path);
/// Loads and requires the stored topology to match `expected` (kind, names, shapes).
ModelGraph load_checkpoint(const std::filesystem::path& path, const ModelGraph& expected);

}  // namespace auxseg
