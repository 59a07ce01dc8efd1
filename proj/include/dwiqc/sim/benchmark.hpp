#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dwiqc/core/labels.hpp"
#include "dwiqc/core/nifti.hpp"
#include "dwiqc/core/parallel.hpp"
#include "dwiqc/core/rng.hpp"
#include "dwiqc/core/slices.hpp"
#include "dwiqc/sim/artifact.hpp"
#include "dwiqc/sim/injectors.hpp"

namespace dwiqc {

struct SeverityRange {
    double lo = 0.3;
    double hi = 0.7;
};

struct BenchmarkConfig {
    /// Axial kinds: fraction of kept axial slices per gradient image.
    /// Sagittal kinds: probability that a gradient image is corrupted.
    std::map<ArtifactKind, double> mix;
    SeverityRange severity;
    std::uint64_t seed = 0;
    ExclusionRule rule;

    void validate() const
    {
        for (const auto& [kind, f] : mix) {
            if (!(f >= 0.0 && f <= 1.0)) {
                throw ConfigError("mix fraction for " + std::string(to_string(kind)) + " must be in [0, 1]");
            }
        }
        if (!(severity.lo > 0.0 && severity.lo <= severity.hi && severity.hi <= 1.0)) {
            throw ConfigError("severity range must satisfy 0 < lo <= hi <= 1");
        }
        rule.validate();
    }
};

/// Parses "ghosting=0.2,motion=0.1".
inline std::map<ArtifactKind, double> parse_mix(const std::string& spec)
{
    std::map<ArtifactKind, double> mix;
    std::istringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("mix entry '" + item + "' is not kind=fraction");
        const auto kind = parse_artifact_kind(item.substr(0, eq));
        double f;
        try {
            f = std::stod(item.substr(eq + 1));
        } catch (const std::exception&) {
            throw ConfigError("mix entry '" + item + "' has a non-numeric fraction");
        }
        mix[kind] = f;
    }
    return mix;
}

struct ArtifactRecord {
    ArtifactKind kind = ArtifactKind::ghosting;
    int gradient = 0;
    std::vector<int> slices;  // affected slice indices in the labeled view
    double severity = 0.0;
    nlohmann::json params;
};

struct AffectedSlices {
    View view = View::axial;
    int gradient = 0;
    std::vector<int> slices;
};

struct ManifestEntry {
    std::string volume_id;
    std::uint64_t seed = 0;
    std::vector<ArtifactRecord> artifacts;
    std::vector<AffectedSlices> affected;
};

struct BenchmarkManifest {
    std::vector<ManifestEntry> entries;
    std::size_t clean_count = 0;
    nlohmann::json config;

    /// Keys (volume:view:gradient:index) of every artifactual slice.
    std::set<std::string> positive_keys() const
    {
        std::set<std::string> keys;
        for (const auto& e : entries)
            for (const auto& a : e.affected)
                for (int s : a.slices)
                    keys.insert(e.volume_id + ":" + std::string(to_string(a.view)) + ":" + std::to_string(a.gradient) +
                                ":" + std::to_string(s));
        return keys;
    }
};

inline nlohmann::json to_json(const BenchmarkManifest& m)
{
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : m.entries) {
        nlohmann::json arts = nlohmann::json::array();
        for (const auto& a : e.artifacts) {
            arts.push_back({{"kind", to_string(a.kind)},
                            {"view", to_string(labeled_view(a.kind))},
                            {"gradient", a.gradient},
                            {"slices", a.slices},
                            {"severity", a.severity},
                            {"params", a.params}});
        }
        nlohmann::json aff = nlohmann::json::array();
        for (const auto& a : e.affected) {
            aff.push_back({{"view", to_string(a.view)}, {"gradient", a.gradient}, {"slices", a.slices}});
        }
        entries.push_back({{"volume_id", e.volume_id}, {"seed", e.seed}, {"artifacts", arts}, {"affected", aff}});
    }
    return {{"version", 1}, {"config", m.config}, {"clean_count", m.clean_count}, {"entries", entries}};
}

inline BenchmarkManifest manifest_from_json(const nlohmann::json& j)
{
    if (j.value("version", 0) != 1) throw Error("unsupported manifest version");
    BenchmarkManifest m;
    m.config = j.value("config", nlohmann::json::object());
    m.clean_count = j.at("clean_count").get<std::size_t>();
    for (const auto& je : j.at("entries")) {
        ManifestEntry e;
        e.volume_id = je.at("volume_id").get<std::string>();
        e.seed = je.at("seed").get<std::uint64_t>();
        for (const auto& ja : je.at("artifacts")) {
            ArtifactRecord a;
            a.kind = parse_artifact_kind(ja.at("kind").get<std::string>());
            a.gradient = ja.at("gradient").get<int>();
            a.slices = ja.at("slices").get<std::vector<int>>();
            a.severity = ja.at("severity").get<double>();
            a.params = ja.at("params");
            e.artifacts.push_back(std::move(a));
        }
        for (const auto& ja : je.at("affected")) {
            e.affected.push_back({parse_view(ja.at("view").get<std::string>()), ja.at("gradient").get<int>(),
                                  ja.at("slices").get<std::vector<int>>()});
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

inline BenchmarkManifest read_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open manifest '" + path.string() + "'");
    return manifest_from_json(nlohmann::json::parse(in));
}

/// Outcome of corrupting one clean volume.
struct CorruptedVolume {
    DWIVolume volume;
    ManifestEntry entry;
    std::vector<LabelRow> labels;
};

namespace benchmark_detail {

inline double mix_fraction(const BenchmarkConfig& cfg, ArtifactKind k)
{
    auto it = cfg.mix.find(k);
    return it == cfg.mix.end() ? 0.0 : it->second;
}

inline PixelCoord susceptibility_center(const BrainExtent& ext, std::size_t z, int radius, std::size_t rows,
                                        std::size_t cols, Rng& rng)
{
    std::vector<PixelCoord> candidates;
    for (int r = radius; r + radius < static_cast<int>(rows); ++r)
        for (int c = radius; c + radius < static_cast<int>(cols); ++c)
            if (ext.inside(static_cast<std::size_t>(c), static_cast<std::size_t>(r), z)) candidates.push_back({r, c});
    if (candidates.empty()) return {static_cast<int>(rows / 2), static_cast<int>(cols / 2)};
    return candidates[rng.index(candidates.size())];
}

/// Applies one axial-class artifact to slice z of gradient g.
inline nlohmann::json apply_axial(DWIVolume& vol, ArtifactKind kind, std::size_t z, std::size_t g, double severity,
                                  const BrainExtent& ext, Rng& rng)
{
    const Image in = vol.axial_slice(z, g);
    Image out;
    nlohmann::json params;
    switch (kind) {
    case ArtifactKind::ghosting: {
        const double alpha = 0.6 * severity;
        out = inject_ghosting(in, alpha);
        params = {{"alpha", alpha}};
        break;
    }
    case ArtifactKind::herringbone: {
        const int max_u = std::max<int>(4, static_cast<int>(in.cols()) / 4);
        const int max_v = std::max<int>(4, static_cast<int>(in.rows()) / 4);
        const int ku = (rng.bernoulli(0.5) ? 1 : -1) * (3 + static_cast<int>(rng.index(static_cast<std::size_t>(max_u - 2))));
        const int kv = 3 + static_cast<int>(rng.index(static_cast<std::size_t>(max_v - 2)));
        const auto [lo, hi] = std::minmax_element(in.pixels().begin(), in.pixels().end());
        const double amplitude = severity * (*hi - *lo) / 2.0;
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        out = inject_herringbone(in, {ku, kv}, amplitude, phase);
        params = {{"ku", ku}, {"kv", kv}, {"amplitude", amplitude}, {"phase", phase}};
        break;
    }
    case ArtifactKind::chemical_shift: {
        const int shift = (rng.bernoulli(0.5) ? 1 : -1) * (1 + static_cast<int>(std::lround(3.0 * severity)));
        const double quantile = 0.9;
        out = inject_chemical_shift(in, shift, quantile);
        params = {{"shift_px", shift}, {"rim_quantile", quantile}, {"blend", default_chemical_shift_blend}};
        break;
    }
    case ArtifactKind::susceptibility: {
        const int radius = 4 + static_cast<int>(std::lround(6.0 * severity));
        const double warp = 1.0 + 3.0 * severity;
        const auto center = susceptibility_center(ext, z, radius, in.rows(), in.cols(), rng);
        out = inject_susceptibility(in, center, radius, warp, severity);
        params = {{"center", {center.r, center.c}}, {"radius", radius}, {"warp_scale", warp}};
        break;
    }
    default: throw Error("not an axial artifact kind");
    }
    vol.set_axial_slice(z, g, out);
    return params;
}

}  // namespace benchmark_detail

/// Corrupts one clean volume. Sagittal-class artifacts are applied first,
/// then axial-class ones; each affected list holds exactly the slices whose
/// stored (float32) voxels changed at that step by more than 1e-9.
inline CorruptedVolume corrupt_volume(const DWIVolume& clean, const BenchmarkConfig& cfg, std::uint64_t volume_seed)
{
    using namespace benchmark_detail;
    Rng rng(volume_seed);
    const BrainExtent extent = compute_brain_extent(clean);
    const auto axial_kept = kept_indices(View::axial, extent, cfg.rule);
    const auto sagittal_kept = kept_indices(View::sagittal, extent, cfg.rule);

    CorruptedVolume out{clean, {clean.id(), volume_seed, {}, {}}, {}};
    DWIVolume& vol = out.volume;
    std::map<std::pair<View, int>, std::set<int>> affected;

    for (std::size_t g = 0; g < clean.gradient_count(); ++g) {
        const int gi = static_cast<int>(g);
        for (ArtifactKind kind : {ArtifactKind::motion, ArtifactKind::multiband}) {
            const double f = mix_fraction(cfg, kind);
            if (f <= 0.0 || !rng.bernoulli(f)) continue;
            const double severity = rng.uniform(cfg.severity.lo, cfg.severity.hi);
            VolumeInjection inj;
            nlohmann::json params;
            if (kind == ArtifactKind::motion) {
                const int period = 2 + static_cast<int>(rng.index(2));
                const double attenuation = std::min(0.95, 0.2 + 0.6 * severity);
                inj = inject_motion(vol, g, period, attenuation, extent, cfg.rule);
                params = {{"band_period", period}, {"attenuation", attenuation}};
            } else {
                const int period = 4 + 2 * static_cast<int>(rng.index(3));
                const double gain = 0.5 * severity;
                inj = inject_multiband(vol, g, period, gain, extent, cfg.rule);
                params = {{"mb_period", period}, {"gain", gain}};
            }
            vol = std::move(inj.volume);
            if (inj.affected_sagittal.empty()) continue;
            affected[{View::sagittal, gi}].insert(inj.affected_sagittal.begin(), inj.affected_sagittal.end());
            out.entry.artifacts.push_back({kind, gi, inj.affected_sagittal, severity, params});
        }
        for (ArtifactKind kind : {ArtifactKind::ghosting, ArtifactKind::herringbone, ArtifactKind::chemical_shift,
                                  ArtifactKind::susceptibility}) {
            const double f = mix_fraction(cfg, kind);
            if (f <= 0.0) continue;
            const auto n = static_cast<std::size_t>(std::lround(f * static_cast<double>(axial_kept.size())));
            std::vector<int> order = axial_kept;
            rng.shuffle(order);
            order.resize(n);
            std::sort(order.begin(), order.end());
            for (int z : order) {
                const double severity = rng.uniform(cfg.severity.lo, cfg.severity.hi);
                const Image before = vol.axial_slice(static_cast<std::size_t>(z), g);
                auto params = apply_axial(vol, kind, static_cast<std::size_t>(z), g, severity, extent, rng);
                if (max_abs_diff(before, vol.axial_slice(static_cast<std::size_t>(z), g)) <= 1e-9) continue;
                affected[{View::axial, gi}].insert(z);
                out.entry.artifacts.push_back({kind, gi, {z}, severity, std::move(params)});
            }
        }
    }

    for (const auto& [key, slices] : affected) {
        out.entry.affected.push_back({key.first, key.second, std::vector<int>(slices.begin(), slices.end())});
    }
    for (View view : {View::axial, View::sagittal}) {
        const auto& kept = view == View::axial ? axial_kept : sagittal_kept;
        for (std::size_t g = 0; g < clean.gradient_count(); ++g) {
            const auto it = affected.find({view, static_cast<int>(g)});
            for (int idx : kept) {
                const bool pos = it != affected.end() && it->second.count(idx);
                out.labels.push_back({clean.id(), view, static_cast<int>(g), idx,
                                      pos ? Label::artifactual : Label::artifact_free, ""});
            }
        }
    }
    return out;
}

inline nlohmann::json benchmark_config_json(const BenchmarkConfig& cfg)
{
    nlohmann::json mix = nlohmann::json::object();
    for (const auto& [k, f] : cfg.mix) mix[std::string(to_string(k))] = f;
    return {{"mix", mix},
            {"severity", {cfg.severity.lo, cfg.severity.hi}},
            {"seed", cfg.seed},
            {"exclusion",
             {{"sagittal_edge_trim", cfg.rule.sagittal_edge_trim},
              {"axial_top_trim", cfg.rule.axial_top_trim},
              {"drop_outside_brain", cfg.rule.drop_outside_brain}}}};
}

/// Sorted .nii / .nii.gz files directly under `dir`.
inline std::vector<std::filesystem::path> list_volumes(const std::filesystem::path& dir)
{
    if (!std::filesystem::is_directory(dir)) throw Error("'" + dir.string() + "' is not a directory");
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && is_nifti_path(e.path())) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Corrupts every clean volume in `clean_dir` and writes
/// `<out>/volumes/*.nii.gz`, `<out>/manifest.json` and `<out>/labels.csv`.
/// Deterministic given the seed: each volume draws from its own stream
/// keyed by (seed, volume id).
inline BenchmarkManifest make_benchmark(const std::filesystem::path& clean_dir, const std::filesystem::path& out_dir,
                                        const BenchmarkConfig& cfg)
{
    cfg.validate();
    const auto inputs = list_volumes(clean_dir);
    if (inputs.empty()) throw Error("no NIfTI volumes found in '" + clean_dir.string() + "'");
    std::filesystem::create_directories(out_dir / "volumes");

    std::vector<ManifestEntry> entries(inputs.size());
    std::vector<std::vector<LabelRow>> labels(inputs.size());
    parallel_for(inputs.size(), [&](std::size_t i) {
        const DWIVolume clean = load_dwi(inputs[i]);
        auto result = corrupt_volume(clean, cfg, stream_seed(cfg.seed, clean.id()));
        save_dwi(result.volume, out_dir / "volumes" / (clean.id() + ".nii.gz"));
        if (!clean.bvals().empty()) {
            std::ofstream bval(out_dir / "volumes" / (clean.id() + ".bval"));
            for (std::size_t g = 0; g < clean.bvals().size(); ++g) bval << (g ? " " : "") << clean.bvals()[g];
            bval << "\n";
        }
        entries[i] = std::move(result.entry);
        labels[i] = std::move(result.labels);
    });

    BenchmarkManifest manifest;
    manifest.config = benchmark_config_json(cfg);
    std::vector<LabelRow> all_labels;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (entries[i].artifacts.empty()) {
            ++manifest.clean_count;
        } else {
            manifest.entries.push_back(std::move(entries[i]));
        }
        all_labels.insert(all_labels.end(), labels[i].begin(), labels[i].end());
    }
    write_label_csv(out_dir / "labels.csv", all_labels);
    std::ofstream mf(out_dir / "manifest.json", std::ios::binary | std::ios::trunc);
    mf << to_json(manifest).dump(2) << "\n";
    if (!mf) throw Error("failed writing manifest");
    return manifest;
}

}  // namespace dwiqc
