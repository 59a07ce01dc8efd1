#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dwiqc/core/error.hpp"
#include "dwiqc/core/extent.hpp"
#include "dwiqc/core/fsutil.hpp"
#include "dwiqc/core/nifti.hpp"
#include "dwiqc/core/png.hpp"
#include "dwiqc/core/slices.hpp"
#include "dwiqc/core/volume.hpp"

namespace dwiqc {

/// Slice-count thresholds: a gradient volume is flagged in a view when it
/// has strictly more flagged slices than the view's threshold.
struct ThresholdConfig {
    int axial_slice_count = 3;
    int sagittal_slice_count = 7;

    void validate() const
    {
        if (axial_slice_count < 0 || sagittal_slice_count < 0) throw ConfigError("slice-count thresholds must be >= 0");
    }
    int for_view(View v) const { return v == View::axial ? axial_slice_count : sagittal_slice_count; }

    friend bool operator==(const ThresholdConfig&, const ThresholdConfig&) = default;
};

inline bool volume_flag(int flag_count, int threshold)
{
    if (flag_count < 0) throw Error("flag count must be >= 0");
    return flag_count > threshold;
}

struct SliceScore {
    View view = View::axial;
    int gradient = 0;
    int index = 0;
    double prob = 0.0;
    bool flag = false;

    friend bool operator==(const SliceScore&, const SliceScore&) = default;
};

struct VolumeVerdict {
    View view = View::axial;
    int gradient = 0;
    bool flag = false;

    friend bool operator==(const VolumeVerdict&, const VolumeVerdict&) = default;
};

inline constexpr int report_schema_version = 1;

struct QCReport {
    int version = report_schema_version;
    std::string volume_id;
    int gradient_count = 0;
    ThresholdConfig thresholds;
    nlohmann::json models = nlohmann::json::object();
    std::vector<SliceScore> slices;
    std::vector<VolumeVerdict> verdicts;
    std::string tool_version;
    std::string timestamp;

    int flag_count(View v, int gradient) const
    {
        int n = 0;
        for (const auto& s : slices) n += s.view == v && s.gradient == gradient && s.flag;
        return n;
    }

    /// Whole-acquisition verdict: any gradient flagged in any view.
    bool any_flag() const
    {
        return std::any_of(verdicts.begin(), verdicts.end(), [](const VolumeVerdict& v) { return v.flag; });
    }

    friend bool operator==(const QCReport&, const QCReport&) = default;
};

/// Per-(view, gradient) verdicts from the slice flags alone, axial first.
inline std::vector<VolumeVerdict> compute_verdicts(const std::vector<SliceScore>& slices, int gradient_count,
                                                   const ThresholdConfig& t)
{
    std::map<std::pair<int, int>, int> counts;
    for (const auto& s : slices) {
        if (s.gradient < 0 || s.gradient >= gradient_count) throw Error("slice score gradient out of range");
        counts[{static_cast<int>(s.view), s.gradient}] += s.flag;
    }
    std::vector<VolumeVerdict> out;
    for (View v : {View::axial, View::sagittal}) {
        for (int g = 0; g < gradient_count; ++g) {
            const auto it = counts.find({static_cast<int>(v), g});
            out.push_back({v, g, volume_flag(it == counts.end() ? 0 : it->second, t.for_view(v))});
        }
    }
    return out;
}

inline std::vector<VolumeVerdict> verdicts_at(const QCReport& r, const ThresholdConfig& t)
{
    return compute_verdicts(r.slices, r.gradient_count, t);
}

inline nlohmann::json to_json(const QCReport& r)
{
    nlohmann::json slices = nlohmann::json::array(), verdicts = nlohmann::json::array();
    for (const auto& s : r.slices) {
        slices.push_back({{"view", to_string(s.view)}, {"gradient", s.gradient}, {"index", s.index}, {"prob", s.prob}, {"flag", s.flag}});
    }
    for (const auto& v : r.verdicts) verdicts.push_back({{"view", to_string(v.view)}, {"gradient", v.gradient}, {"flag", v.flag}});
    return {{"version", r.version},
            {"volume_id", r.volume_id},
            {"gradient_count", r.gradient_count},
            {"thresholds", {{"axial", r.thresholds.axial_slice_count}, {"sagittal", r.thresholds.sagittal_slice_count}}},
            {"models", r.models},
            {"slices", slices},
            {"verdicts", verdicts},
            {"tool_version", r.tool_version},
            {"timestamp", r.timestamp}};
}

inline QCReport report_from_json(const nlohmann::json& j)
{
    try {
        QCReport r;
        r.version = j.at("version").get<int>();
        if (r.version != report_schema_version) throw Error("unsupported report version " + std::to_string(r.version));
        r.volume_id = j.at("volume_id").get<std::string>();
        r.gradient_count = j.at("gradient_count").get<int>();
        r.thresholds.axial_slice_count = j.at("thresholds").at("axial").get<int>();
        r.thresholds.sagittal_slice_count = j.at("thresholds").at("sagittal").get<int>();
        r.models = j.at("models");
        for (const auto& s : j.at("slices")) {
            r.slices.push_back({parse_view(s.at("view").get<std::string>()), s.at("gradient").get<int>(),
                                s.at("index").get<int>(), s.at("prob").get<double>(), s.at("flag").get<bool>()});
        }
        for (const auto& v : j.at("verdicts")) {
            r.verdicts.push_back({parse_view(v.at("view").get<std::string>()), v.at("gradient").get<int>(), v.at("flag").get<bool>()});
        }
        r.tool_version = j.value("tool_version", "");
        r.timestamp = j.value("timestamp", "");
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed report: ") + e.what());
    }
}

inline QCReport read_report(const std::filesystem::path& path)
{
    try {
        return report_from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("report '" + path.string() + "' is not valid JSON: " + e.what());
    }
}

inline std::string thumbnail_name(View v, int gradient, int index)
{
    return std::string(to_string(v)) + "_" + std::to_string(gradient) + "_" + std::to_string(index) + ".png";
}

/// Writes `report.json` into out_dir and, given the volume, one PNG per
/// flagged slice. Returns the written paths.
inline std::vector<std::filesystem::path> write_report(const QCReport& r, const std::filesystem::path& out_dir,
                                                       const DWIVolume* thumbnails_from = nullptr)
{
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> written;
    if (thumbnails_from) {
        for (const auto& s : r.slices) {
            if (!s.flag) continue;
            const auto path = out_dir / thumbnail_name(s.view, s.gradient, s.index);
            const auto tmp = std::filesystem::path(path).concat(".tmp.png");
            write_png(tmp, thumbnails_from->slice(s.view, static_cast<std::size_t>(s.index), static_cast<std::size_t>(s.gradient)));
            std::filesystem::rename(tmp, path);
            written.push_back(path);
        }
    }
    const auto json_path = out_dir / "report.json";
    write_file_atomic(json_path, to_json(r).dump(2) + "\n");
    written.insert(written.begin(), json_path);
    return written;
}

/// Scores every kept slice of both views and aggregates per-gradient
/// verdicts. Detectors are anything with view_of / predict_proba /
/// fingerprint_json overloads.
template <class AxialDetector, class SagittalDetector>
QCReport qc_volume(const DWIVolume& vol, const AxialDetector& axial, const SagittalDetector& sagittal,
                   const ExclusionRule& rule = {}, const ThresholdConfig& thresholds = {})
{
    thresholds.validate();
    rule.validate();
    if (view_of(axial) != View::axial) throw Error("axial detector slot holds a sagittal model");
    if (view_of(sagittal) != View::sagittal) throw Error("sagittal detector slot holds an axial model");
    const BrainExtent extent = compute_brain_extent(vol);

    QCReport r;
    r.volume_id = vol.id();
    r.gradient_count = static_cast<int>(vol.gradient_count());
    r.thresholds = thresholds;
    r.models = {{"axial", fingerprint_json(axial)}, {"sagittal", fingerprint_json(sagittal)}};
    auto score = [&](View v, const auto& detector) {
        const auto samples = extract_slices(vol, v, extent, rule);
        const auto probs = predict_proba(detector, samples);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            r.slices.push_back({v, samples[i].gradient_index, samples[i].slice_index, probs[i], probs[i] > 0.5});
        }
    };
    score(View::axial, axial);
    score(View::sagittal, sagittal);
    r.verdicts = compute_verdicts(r.slices, r.gradient_count, thresholds);
    r.tool_version = tool_version;
    r.timestamp = utc_timestamp();
    return r;
}

}  // namespace dwiqc
