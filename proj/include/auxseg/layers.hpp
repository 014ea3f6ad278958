#pragma once

// Convolutional building blocks for the encoder and the task decoders.
// Activations are NCHW, row-major.

#include <cstddef>

#include "auxseg/rng.hpp"
#include "auxseg/tensor.hpp"

namespace auxseg {

/// Cross-correlation layer. weight [out, in, k, k], bias [out].
struct ConvSpec {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    Tensor weight;
    Tensor bias;

    /// Kaiming-uniform weights (bound sqrt(6 / fan_in)) drawn from `rng`, zero bias.
    static ConvSpec make(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                         std::size_t padding, Rng& rng);

    std::size_t output_extent(std::size_t input_extent) const;
    std::size_t param_count() const { return out_channels * in_channels * kernel * kernel + out_channels; }
};

/// Upsampling layer, the adjoint of a strided convolution. weight [out, in, k, k], bias [out].
/// No output padding: output extent is (H - 1) * stride + k.
struct TransposedConvSpec {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 2;
    std::size_t stride = 2;
    Tensor weight;
    Tensor bias;

    static TransposedConvSpec make(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                                   Rng& rng);

    std::size_t output_extent(std::size_t input_extent) const { return (input_extent - 1) * stride + kernel; }
    std::size_t param_count() const { return out_channels * in_channels * kernel * kernel + out_channels; }
};

Tensor conv2d(const Tensor& input, const ConvSpec& spec);
Tensor transposed_conv2d(const Tensor& input, const TransposedConvSpec& spec);

/// 2x2 max pooling, stride 2. Gradient goes to the first maximum in
/// row-major window order.
Tensor maxpool2(const Tensor& input);

/// Per-pixel softmax over the channel axis, max-subtracted.
Tensor softmax_channels(const Tensor& input);

Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Channels [begin, end) of an NCHW tensor.
Tensor slice_channels(const Tensor& input, std::size_t begin, std::size_t end);

}  // namespace auxseg
