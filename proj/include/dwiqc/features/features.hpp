#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "dwiqc/core/error.hpp"
#include "dwiqc/core/image.hpp"
#include "dwiqc/core/parallel.hpp"
#include "dwiqc/core/slices.hpp"
#include "dwiqc/features/gabor.hpp"
#include "dwiqc/features/lbp.hpp"
#include "dwiqc/features/zernike.hpp"

namespace dwiqc {

enum class Descriptor { gabor, zernike, lbp };

inline std::string_view to_string(Descriptor d)
{
    switch (d) {
    case Descriptor::gabor: return "gabor";
    case Descriptor::zernike: return "zernike";
    case Descriptor::lbp: return "lbp";
    }
    return "?";
}

inline Descriptor parse_descriptor(std::string_view s)
{
    if (s == "gabor") return Descriptor::gabor;
    if (s == "zernike") return Descriptor::zernike;
    if (s == "lbp") return Descriptor::lbp;
    throw ConfigError("unknown descriptor '" + std::string(s) + "'");
}

struct FeatureConfig {
    Descriptor descriptor = Descriptor::gabor;
    GaborConfig gabor;
    ZernikeConfig zernike;
    LbpConfig lbp;

    friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

inline std::size_t feature_dim(const FeatureConfig& cfg)
{
    switch (cfg.descriptor) {
    case Descriptor::gabor: return cfg.gabor.feature_dim();
    case Descriptor::zernike: return zernike_indices(cfg.zernike).size();
    case Descriptor::lbp: return cfg.lbp.feature_dim();
    }
    return 0;
}

inline nlohmann::json to_json(const FeatureConfig& c)
{
    nlohmann::json j{{"descriptor", to_string(c.descriptor)}};
    switch (c.descriptor) {
    case Descriptor::gabor:
        j["gabor"] = {{"n_scales", c.gabor.n_scales},
                      {"n_orientations", c.gabor.n_orientations},
                      {"base_wavelength", c.gabor.base_wavelength},
                      {"scale_factor", c.gabor.scale_factor},
                      {"sigma_ratio", c.gabor.sigma_ratio},
                      {"zero_dc", c.gabor.zero_dc}};
        break;
    case Descriptor::zernike:
        j["zernike"] = {{"max_order", c.zernike.max_order}};
        if (c.zernike.only) j["zernike"]["only"] = {c.zernike.only->first, c.zernike.only->second};
        break;
    case Descriptor::lbp:
        j["lbp"] = {{"neighbors", c.lbp.neighbors}, {"radius", c.lbp.radius}};
        break;
    }
    return j;
}

inline FeatureConfig feature_config_from_json(const nlohmann::json& j)
{
    FeatureConfig c;
    c.descriptor = parse_descriptor(j.at("descriptor").get<std::string>());
    if (j.contains("gabor")) {
        const auto& g = j["gabor"];
        c.gabor = {g.at("n_scales").get<int>(),        g.at("n_orientations").get<int>(),
                   g.at("base_wavelength").get<double>(), g.at("scale_factor").get<double>(),
                   g.at("sigma_ratio").get<double>(),    g.at("zero_dc").get<bool>()};
    }
    if (j.contains("zernike")) {
        c.zernike.max_order = j["zernike"].at("max_order").get<int>();
        if (j["zernike"].contains("only")) {
            c.zernike.only = std::pair{j["zernike"]["only"][0].get<int>(), j["zernike"]["only"][1].get<int>()};
        }
    }
    if (j.contains("lbp")) c.lbp = {j["lbp"].at("neighbors").get<int>(), j["lbp"].at("radius").get<double>()};
    return c;
}

/// Thread-safe extractor for one descriptor configuration. Slices are
/// z-score normalized before extraction.
class FeatureExtractor {
public:
    explicit FeatureExtractor(FeatureConfig cfg = {}) : cfg_(std::move(cfg))
    {
        if (cfg_.descriptor == Descriptor::gabor) bank_ = std::make_shared<GaborBank>(cfg_.gabor);
        cfg_.zernike.validate();
        cfg_.lbp.validate();
    }

    const FeatureConfig& config() const { return cfg_; }
    std::size_t dim() const { return feature_dim(cfg_); }

    std::vector<double> extract(const Image& pixels) const
    {
        const Image img = normalize_image(pixels);
        std::vector<double> f;
        switch (cfg_.descriptor) {
        case Descriptor::gabor: f = gabor_features(img, *bank_); break;
        case Descriptor::zernike: f = zernike_features(img, cfg_.zernike); break;
        case Descriptor::lbp: f = lbp_features(img, cfg_.lbp); break;
        }
        if (f.size() != dim()) throw Error("feature dimension mismatch");
        return f;
    }

    std::vector<std::vector<double>> extract_all(const std::vector<SliceSample>& samples) const
    {
        std::vector<std::vector<double>> out(samples.size());
        parallel_for(samples.size(), [&](std::size_t i) { out[i] = extract(samples[i].pixels); });
        return out;
    }

private:
    FeatureConfig cfg_;
    std::shared_ptr<GaborBank> bank_;
};

/// Feature matrix on disk: `<stem>.bin` holds magic "DWIQCFEA", u64 rows,
/// u64 cols and row-major little-endian doubles; `<stem>.json` records the
/// descriptor config and the slice key of every row.
struct FeatureCache {
    FeatureConfig config;
    std::vector<std::string> keys;
    std::vector<std::vector<double>> rows;
};

namespace features_detail {

inline constexpr char cache_magic[8] = {'D', 'W', 'I', 'Q', 'C', 'F', 'E', 'A'};

template <class T>
void write_le(std::ostream& out, T v)
{
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_le(std::istream& in)
{
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw Error("feature cache: truncated file");
    return v;
}

}  // namespace features_detail

inline void write_feature_cache(const std::filesystem::path& stem, const FeatureCache& cache)
{
    if (cache.keys.size() != cache.rows.size()) throw Error("feature cache: key/row count mismatch");
    const std::size_t cols = feature_dim(cache.config);
    std::ofstream bin(std::filesystem::path(stem).concat(".bin"), std::ios::binary);
    if (!bin) throw Error("feature cache: cannot write " + stem.string() + ".bin");
    bin.write(features_detail::cache_magic, 8);
    features_detail::write_le<std::uint64_t>(bin, cache.rows.size());
    features_detail::write_le<std::uint64_t>(bin, cols);
    for (const auto& r : cache.rows) {
        if (r.size() != cols) throw Error("feature cache: row width mismatch");
        for (double v : r) features_detail::write_le(bin, v);
    }
    std::ofstream side(std::filesystem::path(stem).concat(".json"));
    side << nlohmann::json{{"version", 1}, {"config", to_json(cache.config)}, {"rows", cache.keys}}.dump(1) << "\n";
    if (!bin || !side) throw Error("feature cache: write failed");
}

inline FeatureCache read_feature_cache(const std::filesystem::path& stem)
{
    std::ifstream side(std::filesystem::path(stem).concat(".json"));
    std::ifstream bin(std::filesystem::path(stem).concat(".bin"), std::ios::binary);
    if (!side || !bin) throw Error("feature cache: missing files for " + stem.string());
    FeatureCache cache;
    try {
        const auto j = nlohmann::json::parse(side);
        if (j.at("version").get<int>() != 1) throw Error("feature cache: unsupported version");
        cache.config = feature_config_from_json(j.at("config"));
        cache.keys = j.at("rows").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("feature cache: bad sidecar: ") + e.what());
    }
    char magic[8];
    bin.read(magic, 8);
    if (!bin || std::memcmp(magic, features_detail::cache_magic, 8) != 0) throw Error("feature cache: bad magic");
    const auto n = features_detail::read_le<std::uint64_t>(bin);
    const auto cols = features_detail::read_le<std::uint64_t>(bin);
    if (n != cache.keys.size() || cols != feature_dim(cache.config)) throw Error("feature cache: shape mismatch");
    cache.rows.assign(n, std::vector<double>(cols));
    for (auto& r : cache.rows)
        for (auto& v : r) v = features_detail::read_le<double>(bin);
    return cache;
}

}  // namespace dwiqc
