#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dwiqc/core/error.hpp"
#include "dwiqc/core/hash.hpp"
#include "dwiqc/core/image.hpp"
#include "dwiqc/core/rng.hpp"
#include "dwiqc/core/slices.hpp"

namespace dwiqc {

/// A float32 tensor as stored in a safetensors file.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<float> data;

    std::size_t numel() const
    {
        std::size_t n = 1;
        for (auto d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }
};

struct TensorFile {
    std::map<std::string, std::string> metadata;
    std::map<std::string, Tensor> tensors;
};

namespace backbone_detail {

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

}  // namespace backbone_detail

/// safetensors container: u64 LE header size, JSON header, raw tensor bytes.
/// Tensors are laid out in name order, so equal content gives equal bytes.
inline void write_safetensors(const std::filesystem::path& path, const TensorFile& file)
{
    nlohmann::ordered_json header = nlohmann::ordered_json::object();
    if (!file.metadata.empty()) header["__metadata__"] = file.metadata;
    std::size_t offset = 0;
    for (const auto& [name, t] : file.tensors) {
        if (t.data.size() != t.numel()) throw Error("tensor '" + name + "' data does not match its shape");
        const std::size_t bytes = t.data.size() * sizeof(float);
        header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    std::string text = header.dump();
    while (text.size() % 8 != 0) text.push_back(' ');
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    const std::uint64_t n = text.size();
    out.write(reinterpret_cast<const char*>(&n), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : file.tensors) {
        out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    if (!out) throw Error("failed writing '" + path.string() + "'");
}

inline TensorFile read_safetensors(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open backbone weights '" + path.string() + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), {});
    if (bytes.size() < 8) throw Error("backbone weights '" + path.string() + "' are truncated");
    std::uint64_t n = 0;
    std::memcpy(&n, bytes.data(), 8);
    if (n > bytes.size() - 8) throw Error("backbone weights: header length exceeds file size");
    TensorFile file;
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(8, n));
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("backbone weights: malformed header: ") + e.what());
    }
    const std::size_t base = 8 + n;
    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            file.metadata = entry.get<std::map<std::string, std::string>>();
            continue;
        }
        if (entry.at("dtype") != "F32") throw Error("backbone weights: tensor '" + name + "' is not F32");
        Tensor t;
        t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
        const auto off = entry.at("data_offsets").get<std::vector<std::size_t>>();
        if (off.size() != 2 || off[1] < off[0] || base + off[1] > bytes.size() ||
            (off[1] - off[0]) != t.numel() * sizeof(float)) {
            throw Error("backbone weights: bad data offsets for '" + name + "'");
        }
        t.data.resize(t.numel());
        std::memcpy(t.data.data(), bytes.data() + base + off[0], off[1] - off[0]);
        file.tensors.emplace(name, std::move(t));
    }
    return file;
}

/// Declared backbone asset. An empty digest skips the checksum test; a zero
/// output_dim skips the dimension test.
struct FeatureBackbone {
    std::string name = "tinyvgg";
    std::filesystem::path weights_path;
    std::size_t output_dim = 0;
    std::string weights_digest;
};

/// Frozen convolutional feature extractor described by the file's "plan"
/// metadata, e.g. "conv:block1,relu,pool,conv:block2,relu,gap". Convolutions
/// are 3x3, stride 1, zero "same" padding, OIHW weights; pool is 2x2 max.
class Backbone {
public:
    Backbone(const TensorFile& file, std::string name) : name_(std::move(name))
    {
        auto meta = [&](const std::string& key) {
            auto it = file.metadata.find(key);
            if (it == file.metadata.end()) throw Error("backbone weights: missing metadata '" + key + "'");
            return it->second;
        };
        rows_ = std::stoul(meta("input_height"));
        cols_ = std::stoul(meta("input_width"));
        channels_ = std::stoul(meta("input_channels"));
        pooling_ = meta("pooling");
        std::stringstream ss(meta("plan"));
        std::string tok;
        std::size_t ch = channels_;
        Sha256 digest;
        while (std::getline(ss, tok, ',')) {
            Layer layer;
            if (tok.rfind("conv:", 0) == 0) {
                layer.kind = Layer::conv;
                const std::string base = tok.substr(5);
                const auto w = file.tensors.find(base + ".weight");
                const auto b = file.tensors.find(base + ".bias");
                if (w == file.tensors.end() || b == file.tensors.end()) {
                    throw Error("backbone weights: missing tensors for '" + base + "'");
                }
                const auto& s = w->second.shape;
                if (s.size() != 4 || s[2] != 3 || s[3] != 3 || static_cast<std::size_t>(s[1]) != ch ||
                    b->second.shape != std::vector<std::int64_t>{s[0]}) {
                    throw Error("backbone weights: shape mismatch in '" + base + "'");
                }
                const auto out = static_cast<Eigen::Index>(s[0]);
                layer.weight.resize(out, static_cast<Eigen::Index>(ch * 9));
                for (Eigen::Index o = 0; o < out; ++o)
                    for (Eigen::Index k = 0; k < layer.weight.cols(); ++k)
                        layer.weight(o, k) = w->second.data[static_cast<std::size_t>(o * layer.weight.cols() + k)];
                layer.bias.resize(out);
                for (Eigen::Index o = 0; o < out; ++o) layer.bias(o) = b->second.data[static_cast<std::size_t>(o)];
                digest.update(base).update(w->second.data.data(), w->second.data.size() * sizeof(float));
                digest.update(b->second.data.data(), b->second.data.size() * sizeof(float));
                ch = static_cast<std::size_t>(out);
            } else if (tok == "relu") {
                layer.kind = Layer::relu;
            } else if (tok == "pool") {
                layer.kind = Layer::pool;
            } else if (tok == "gap") {
                layer.kind = Layer::gap;
            } else {
                throw Error("backbone weights: unknown plan step '" + tok + "'");
            }
            layers_.push_back(std::move(layer));
        }
        if (layers_.empty() || layers_.back().kind != Layer::gap) throw Error("backbone plan must end with gap");
        output_dim_ = ch;
        digest_ = digest.hex();
    }

    const std::string& name() const { return name_; }
    std::size_t input_rows() const { return rows_; }
    std::size_t input_cols() const { return cols_; }
    std::size_t output_dim() const { return output_dim_; }
    const std::string& pooling() const { return pooling_; }
    /// SHA-256 over the in-memory weights; constant for a frozen backbone.
    const std::string& weights_digest() const { return digest_; }

    /// Penultimate features of one grayscale slice: z-scored, resized to the
    /// input geometry and replicated over the input channels.
    std::vector<double> features(const Image& gray) const
    {
        SliceSample s;
        s.pixels = normalize_image(gray);
        const Image in = prepare_input(s, rows_, cols_);
        std::size_t h = rows_, w = cols_;
        Eigen::MatrixXd act(static_cast<Eigen::Index>(channels_), static_cast<Eigen::Index>(h * w));
        for (std::size_t c = 0; c < channels_; ++c)
            for (std::size_t i = 0; i < h * w; ++i) act(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(i)) = in.pixels()[i];

        for (const auto& layer : layers_) {
            switch (layer.kind) {
            case Layer::conv: act = conv3x3(act, h, w, layer); break;
            case Layer::relu: act = act.cwiseMax(0.0); break;
            case Layer::pool: act = maxpool2(act, h, w); break;
            case Layer::gap: {
                Eigen::VectorXd pooled = act.rowwise().mean();
                return std::vector<double>(pooled.data(), pooled.data() + pooled.size());
            }
            }
        }
        throw Error("backbone plan must end with gap");
    }

private:
    struct Layer {
        enum Kind { conv, relu, pool, gap } kind = relu;
        Eigen::MatrixXd weight;  // out x (in * 9), columns ordered (in, ky, kx)
        Eigen::VectorXd bias;
    };

    static Eigen::MatrixXd conv3x3(const Eigen::MatrixXd& in, std::size_t h, std::size_t w, const Layer& layer)
    {
        const Eigen::Index ch = in.rows();
        Eigen::MatrixXd cols(ch * 9, static_cast<Eigen::Index>(h * w));
        for (Eigen::Index c = 0; c < ch; ++c) {
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const Eigen::Index row = c * 9 + ky * 3 + kx;
                    for (std::size_t y = 0; y < h; ++y) {
                        const long sy = static_cast<long>(y) + ky - 1;
                        for (std::size_t x = 0; x < w; ++x) {
                            const long sx = static_cast<long>(x) + kx - 1;
                            const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<long>(h) && sx < static_cast<long>(w);
                            cols(row, static_cast<Eigen::Index>(y * w + x)) =
                                inside ? in(c, static_cast<Eigen::Index>(static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx))) : 0.0;
                        }
                    }
                }
            }
        }
        Eigen::MatrixXd out = layer.weight * cols;
        out.colwise() += layer.bias;
        return out;
    }

    static Eigen::MatrixXd maxpool2(const Eigen::MatrixXd& in, std::size_t& h, std::size_t& w)
    {
        const std::size_t oh = h / 2, ow = w / 2;
        if (oh == 0 || ow == 0) throw Error("backbone: pooling below 1 pixel");
        Eigen::MatrixXd out(in.rows(), static_cast<Eigen::Index>(oh * ow));
        for (Eigen::Index c = 0; c < in.rows(); ++c)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t x = 0; x < ow; ++x) {
                    auto at = [&](std::size_t yy, std::size_t xx) { return in(c, static_cast<Eigen::Index>(yy * w + xx)); };
                    out(c, static_cast<Eigen::Index>(y * ow + x)) =
                        std::max({at(2 * y, 2 * x), at(2 * y, 2 * x + 1), at(2 * y + 1, 2 * x), at(2 * y + 1, 2 * x + 1)});
                }
        h = oh;
        w = ow;
        return out;
    }

    std::string name_;
    std::size_t rows_ = 0, cols_ = 0, channels_ = 0, output_dim_ = 0;
    std::string pooling_;
    std::vector<Layer> layers_;
    std::string digest_;
};

inline Backbone load_backbone(const FeatureBackbone& spec)
{
    if (!std::filesystem::exists(spec.weights_path)) {
        throw Error("backbone weights '" + spec.weights_path.string() + "' do not exist");
    }
    if (!spec.weights_digest.empty()) {
        const auto actual = sha256_file(spec.weights_path);
        if (actual != spec.weights_digest) {
            throw Error("backbone digest mismatch for '" + spec.weights_path.string() + "': expected " +
                        spec.weights_digest + ", got " + actual);
        }
    }
    Backbone bb(read_safetensors(spec.weights_path), spec.name);
    if (spec.output_dim != 0 && bb.output_dim() != spec.output_dim) {
        throw Error("backbone output dimension " + std::to_string(bb.output_dim()) + " does not match declared " +
                    std::to_string(spec.output_dim));
    }
    return bb;
}

/// Writes the reference asset: a small VGG-style stack (three 3x3 conv
/// blocks, 16/32/64 channels, max pooling, global average pooling) on
/// 64x64x3 inputs. The first block holds a fixed bank of signed derivative,
/// line and checker filters; deeper blocks are He-normal draws from `seed`.
inline TensorFile make_reference_backbone_weights(std::uint64_t seed = 2024)
{
    TensorFile f;
    f.metadata = {{"format", "pt"},
                  {"name", "tinyvgg"},
                  {"input_height", "64"},
                  {"input_width", "64"},
                  {"input_channels", "3"},
                  {"pooling", "gap"},
                  {"plan", "conv:block1,relu,pool,conv:block2,relu,pool,conv:block3,relu,gap"}};
    const std::vector<std::array<float, 9>> bank{
        {-1, 0, 1, -2, 0, 2, -1, 0, 1},    {-1, -2, -1, 0, 0, 0, 1, 2, 1},  {0, 1, 2, -1, 0, 1, -2, -1, 0},
        {2, 1, 0, 1, 0, -1, 0, -1, -2},    {0, 1, 0, 1, -4, 1, 0, 1, 0},    {-1, 2, -1, -1, 2, -1, -1, 2, -1},
        {-1, -1, -1, 2, 2, 2, -1, -1, -1}, {1, -1, 1, -1, 1, -1, 1, -1, 1},
    };
    Tensor w1{{16, 3, 3, 3}, std::vector<float>(16 * 27)};
    for (std::size_t o = 0; o < 16; ++o) {
        const auto& k = bank[o / 2];
        const float sign = (o % 2 == 0) ? 1.0f : -1.0f;
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < 9; ++i) w1.data[o * 27 + c * 9 + i] = sign * k[i] / 3.0f;
    }
    f.tensors["block1.weight"] = std::move(w1);
    f.tensors["block1.bias"] = Tensor{{16}, std::vector<float>(16, 0.0f)};
    Rng rng(seed);
    const std::array<std::pair<int, int>, 2> blocks{{{16, 32}, {32, 64}}};
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto [in, out] = blocks[b];
        Tensor w{{out, in, 3, 3}, std::vector<float>(static_cast<std::size_t>(out * in * 9))};
        const double sd = std::sqrt(2.0 / (in * 9.0));
        for (auto& v : w.data) v = static_cast<float>(sd * rng.normal());
        const std::string name = "block" + std::to_string(b + 2);
        f.tensors[name + ".weight"] = std::move(w);
        f.tensors[name + ".bias"] = Tensor{{out}, std::vector<float>(static_cast<std::size_t>(out), 0.0f)};
    }
    return f;
}

/// Writes the reference asset and returns its declaration (with digest).
inline FeatureBackbone make_reference_backbone(const std::filesystem::path& path, std::uint64_t seed = 2024)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    write_safetensors(path, make_reference_backbone_weights(seed));
    return {"tinyvgg", path, 64, sha256_file(path)};
}

}  // namespace dwiqc
