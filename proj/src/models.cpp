#include "auxseg/models.hpp"

#include <map>
#include <stdexcept>

#include "auxseg/rng.hpp"
#include "binary_io.hpp"

namespace auxseg {

namespace {

Encoder make_encoder(std::size_t in_channels, const ToyTopology& topo, Rng& rng) {
    Encoder enc;
    std::size_t prev = in_channels;
    for (std::size_t i = 0; i < 3; ++i) {
        enc.stages[i] = ConvSpec::make(prev, topo.encoder_channels[i], 3, 1, 1, rng);
        prev = topo.encoder_channels[i];
    }
    return enc;
}

Decoder make_decoder(std::size_t out_channels, const ToyTopology& topo, Rng& rng) {
    const auto& e = topo.encoder_channels;
    const auto& d = topo.decoder_channels;
    Decoder dec;
    dec.ups[0] = TransposedConvSpec::make(e[2], d[0], 2, 2, rng);
    dec.ups[1] = TransposedConvSpec::make(d[0] + e[1], d[1], 2, 2, rng);
    dec.ups[2] = TransposedConvSpec::make(d[1] + e[0], d[2], 2, 2, rng);
    dec.head = ConvSpec::make(d[2], out_channels, 1, 1, 0, rng);
    return dec;
}

Tensor encoder_stage(const ConvSpec& conv, const Tensor& x) { return maxpool2(relu(conv2d(x, conv))); }

Tensor run_decoder(const Decoder& dec, const std::array<Tensor, 3>& features) {
    Tensor u = relu(transposed_conv2d(features[2], dec.ups[0]));
    u = relu(transposed_conv2d(concat_channels(u, features[1]), dec.ups[1]));
    u = relu(transposed_conv2d(concat_channels(u, features[0]), dec.ups[2]));
    return conv2d(u, dec.head);
}

void append_encoder(NamedParams& out, const std::string& prefix, const Encoder& enc) {
    for (std::size_t i = 0; i < 3; ++i) {
        const std::string name = prefix + ".stage" + std::to_string(i);
        out.emplace_back(name + ".weight", enc.stages[i].weight);
        out.emplace_back(name + ".bias", enc.stages[i].bias);
    }
}

void append_decoder(NamedParams& out, const std::string& prefix, const Decoder& dec) {
    for (std::size_t i = 0; i < 3; ++i) {
        const std::string name = prefix + ".up" + std::to_string(i);
        out.emplace_back(name + ".weight", dec.ups[i].weight);
        out.emplace_back(name + ".bias", dec.ups[i].bias);
    }
    out.emplace_back(prefix + ".head.weight", dec.head.weight);
    out.emplace_back(prefix + ".head.bias", dec.head.bias);
}

std::size_t count_params(const NamedParams& params) {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

template <class Spec>
void clone_spec(Spec& spec) {
    spec.weight = spec.weight.clone();
    spec.bias = spec.bias.clone();
}

void clone_encoder(Encoder& enc) {
    for (auto& s : enc.stages) clone_spec(s);
}

void clone_decoder(Decoder& dec) {
    for (auto& u : dec.ups) clone_spec(u);
    clone_spec(dec.head);
}

}  // namespace

std::string_view to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::segnet: return "segnet";
        case ModelKind::auxnet: return "auxnet";
        case ModelKind::fusenet: return "fusenet";
    }
    return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
    if (name == "segnet") return ModelKind::segnet;
    if (name == "auxnet") return ModelKind::auxnet;
    if (name == "fusenet") return ModelKind::fusenet;
    throw std::invalid_argument("unknown model kind '" + std::string(name) + "'");
}

ModelGraph build_model(ModelKind kind, std::size_t image_channels, std::size_t num_classes, std::size_t height,
                       std::size_t width, std::uint64_t seed, const ToyTopology& topology) {
    if (height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0) {
        throw std::invalid_argument("input height and width must be positive multiples of 8, got " +
                                    std::to_string(height) + "x" + std::to_string(width));
    }
    if (num_classes < 2) throw std::invalid_argument("num_classes must be at least 2");
    if (image_channels == 0) throw std::invalid_argument("image_channels must be positive");

    Rng rng(seed);
    ModelGraph m;
    m.kind_ = kind;
    m.image_channels_ = image_channels;
    m.num_classes_ = num_classes;
    m.topology_ = topology;
    m.encoder_ = make_encoder(image_channels, topology, rng);
    if (kind == ModelKind::fusenet) m.depth_encoder_ = make_encoder(1, topology, rng);
    m.seg_decoder_ = make_decoder(num_classes, topology, rng);
    if (kind == ModelKind::auxnet) m.depth_decoder_ = make_decoder(1, topology, rng);
    return m;
}

std::size_t decoder_param_count(const ToyTopology& topology, std::size_t out_channels) {
    const auto& e = topology.encoder_channels;
    const auto& d = topology.decoder_channels;
    const std::size_t up0 = d[0] * e[2] * 4 + d[0];
    const std::size_t up1 = d[1] * (d[0] + e[1]) * 4 + d[1];
    const std::size_t up2 = d[2] * (d[1] + e[0]) * 4 + d[2];
    const std::size_t head = out_channels * d[2] + out_channels;
    return up0 + up1 + up2 + head;
}

std::size_t ModelGraph::input_channels() const {
    return kind_ == ModelKind::fusenet ? image_channels_ + 1 : image_channels_;
}

ForwardOutputs ModelGraph::forward(const Tensor& batch) const {
    if (batch.rank() != 4 || batch.dim(1) != input_channels()) {
        throw std::invalid_argument("forward: expected [N," + std::to_string(input_channels()) +
                                    ",H,W] batch, got " + shape_to_string(batch.shape()));
    }
    if (batch.dim(2) % 8 != 0 || batch.dim(3) % 8 != 0) {
        throw std::invalid_argument("forward: spatial extents must be multiples of 8, got " +
                                    shape_to_string(batch.shape()));
    }

    std::array<Tensor, 3> features;
    if (depth_encoder_) {
        Tensor rgb = slice_channels(batch, 0, image_channels_);
        Tensor depth = slice_channels(batch, image_channels_, image_channels_ + 1);
        for (std::size_t i = 0; i < 3; ++i) {
            rgb = encoder_stage(encoder_.stages[i], rgb);
            depth = encoder_stage(depth_encoder_->stages[i], depth);
            rgb = add(rgb, depth);
            features[i] = rgb;
        }
    } else {
        Tensor x = batch;
        for (std::size_t i = 0; i < 3; ++i) {
            x = encoder_stage(encoder_.stages[i], x);
            features[i] = x;
        }
    }

    ForwardOutputs out;
    out.seg_logits = run_decoder(seg_decoder_, features);
    if (depth_decoder_) out.depth = run_decoder(*depth_decoder_, features);
    return out;
}

NamedParams ModelGraph::parameters() const {
    NamedParams out;
    append_encoder(out, "encoder", encoder_);
    if (depth_encoder_) append_encoder(out, "depth_encoder", *depth_encoder_);
    append_decoder(out, "seg_decoder", seg_decoder_);
    if (depth_decoder_) append_decoder(out, "depth_decoder", *depth_decoder_);
    return out;
}

std::vector<Tensor> ModelGraph::parameter_tensors() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : parameters()) out.push_back(t);
    return out;
}

std::size_t ModelGraph::depth_decoder_param_count() const {
    if (!depth_decoder_) return 0;
    NamedParams p;
    append_decoder(p, "depth_decoder", *depth_decoder_);
    return count_params(p);
}

std::size_t ModelGraph::param_count(CountMode mode) const {
    const std::size_t all = count_params(parameters());
    return mode == CountMode::training ? all : all - depth_decoder_param_count();
}

ModelGraph ModelGraph::without_depth_decoder() const {
    ModelGraph m = *this;
    m.depth_decoder_.reset();
    return m;
}

ModelGraph ModelGraph::clone() const {
    ModelGraph m = *this;
    clone_encoder(m.encoder_);
    if (m.depth_encoder_) clone_encoder(*m.depth_encoder_);
    clone_decoder(m.seg_decoder_);
    if (m.depth_decoder_) clone_decoder(*m.depth_decoder_);
    return m;
}

void ModelGraph::zero_grad() {
    for (auto& t : parameter_tensors()) t.zero_grad();
}

// Checkpoints ------------------------------------------------------------------------

namespace {

constexpr std::string_view kCheckpointMagic = "AUXC";
constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
    Shape shape;
    std::vector<double> data;
};

struct StoredCheckpoint {
    ModelKind kind;
    std::vector<std::pair<std::string, StoredTensor>> tensors;
};

StoredCheckpoint parse_checkpoint(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    io::ByteReader in(bytes, "checkpoint " + path.string());
    if (in.remaining() < 4 || in.bytes(4) != kCheckpointMagic) {
        throw io::FormatError("checkpoint " + path.string() + ": bad magic (expected AUXC)");
    }
    const auto version = in.u32();
    if (version != kCheckpointVersion) {
        throw io::FormatError("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
    }
    const auto kind = in.u32();
    if (kind > static_cast<std::uint32_t>(ModelKind::fusenet)) {
        throw io::FormatError("checkpoint " + path.string() + ": unknown topology kind " + std::to_string(kind));
    }
    StoredCheckpoint ck{static_cast<ModelKind>(kind), {}};
    const auto count = in.u32();
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto name_len = in.u16();
        std::string name = in.bytes(name_len);
        const auto rank = in.u8();
        StoredTensor st;
        for (std::uint8_t r = 0; r < rank; ++r) {
            const auto extent = in.u32();
            if (extent == 0) throw io::FormatError("checkpoint " + path.string() + ": zero extent in " + name);
            st.shape.push_back(extent);
        }
        const std::size_t n = shape_numel(st.shape);
        in.need(n * 8);
        st.data.resize(n);
        for (auto& v : st.data) v = in.f64();
        ck.tensors.emplace_back(std::move(name), std::move(st));
    }
    if (in.remaining() != 0) {
        throw io::FormatError("checkpoint " + path.string() + ": " + std::to_string(in.remaining()) +
                              " trailing bytes");
    }
    return ck;
}

const StoredTensor& find_tensor(const StoredCheckpoint& ck, const std::string& name,
                                const std::filesystem::path& path) {
    for (const auto& [n, t] : ck.tensors) {
        if (n == name) return t;
    }
    throw io::FormatError("checkpoint " + path.string() + ": missing tensor " + name);
}

std::size_t extent_of(const StoredTensor& t, std::size_t axis, const std::string& name) {
    if (axis >= t.shape.size()) throw io::FormatError("checkpoint tensor " + name + " has unexpected rank");
    return t.shape[axis];
}

// Copies stored values into `model`, requiring an exact name/shape match.
void assign_parameters(ModelGraph& model, const StoredCheckpoint& ck, const std::filesystem::path& path) {
    auto params = model.parameters();
    if (params.size() != ck.tensors.size()) {
        throw io::FormatError("checkpoint " + path.string() + ": topology mismatch (" +
                              std::to_string(ck.tensors.size()) + " tensors stored, " +
                              std::to_string(params.size()) + " expected for " + std::string(to_string(model.kind())) +
                              ")");
    }
    for (auto& [name, tensor] : params) {
        const auto& stored = find_tensor(ck, name, path);
        if (stored.shape != tensor.shape()) {
            throw io::FormatError("checkpoint " + path.string() + ": topology mismatch for " + name + " (stored " +
                                  shape_to_string(stored.shape) + ", expected " + shape_to_string(tensor.shape()) +
                                  ")");
        }
        auto dst = tensor.mutable_data();
        std::copy(stored.data.begin(), stored.data.end(), dst.begin());
    }
}

}  // namespace

void save_checkpoint(const ModelGraph& model, const std::filesystem::path& path) {
    io::ByteWriter out;
    out.bytes(kCheckpointMagic);
    out.u32(kCheckpointVersion);
    out.u32(static_cast<std::uint32_t>(model.kind()));
    const auto params = model.parameters();
    out.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        out.u16(static_cast<std::uint16_t>(name.size()));
        out.bytes(name);
        out.u8(static_cast<std::uint8_t>(t.rank()));
        for (std::size_t e : t.shape()) out.u32(static_cast<std::uint32_t>(e));
        for (double v : t.data()) out.f64(v);
    }
    io::write_file(path, out.buffer());
}

ModelGraph load_checkpoint(const std::filesystem::path& path) {
    const StoredCheckpoint ck = parse_checkpoint(path);

    // Recover hyperparameters from the stored shapes, rebuild the skeleton,
    // then require every tensor to match it.
    const std::string enc0 = "encoder.stage0.weight";
    const std::string head = "seg_decoder.head.weight";
    const auto& first = find_tensor(ck, enc0, path);
    const std::size_t image_channels = extent_of(first, 1, enc0);
    const std::size_t num_classes = extent_of(find_tensor(ck, head, path), 0, head);
    ToyTopology topo;
    for (std::size_t i = 0; i < 3; ++i) {
        const std::string enc = "encoder.stage" + std::to_string(i) + ".weight";
        const std::string up = "seg_decoder.up" + std::to_string(i) + ".weight";
        topo.encoder_channels[i] = extent_of(find_tensor(ck, enc, path), 0, enc);
        topo.decoder_channels[i] = extent_of(find_tensor(ck, up, path), 0, up);
    }
    if (num_classes < 2) throw io::FormatError("checkpoint " + path.string() + ": fewer than 2 classes");

    ModelGraph model = build_model(ck.kind, image_channels, num_classes, 8, 8, 0, topo);
    assign_parameters(model, ck, path);
    return model;
}

ModelGraph load_checkpoint(const std::filesystem::path& path, const ModelGraph& expected) {
    const StoredCheckpoint ck = parse_checkpoint(path);
    if (ck.kind != expected.kind()) {
        throw io::FormatError("checkpoint " + path.string() + ": topology mismatch (stored " +
                              std::string(to_string(ck.kind)) + ", expected " +
                              std::string(to_string(expected.kind())) + ")");
    }
    ModelGraph model = expected.clone();
    assign_parameters(model, ck, path);
    return model;
}

}  // namespace auxseg
