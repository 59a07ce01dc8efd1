#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dwiqc/core/labels.hpp"
#include "dwiqc/core/nifti.hpp"

namespace dwiqc {

/// Labeled slices drawn from one acquisition protocol / site.
struct LabeledDataset {
    std::string id;
    std::vector<SliceSample> samples;
};

/// `<dir>/<volume_id>.nii.gz`, falling back to `.nii`.
inline std::filesystem::path volume_path(const std::filesystem::path& dir, const std::string& volume_id)
{
    auto p = dir / (volume_id + ".nii.gz");
    if (std::filesystem::exists(p)) return p;
    auto q = dir / (volume_id + ".nii");
    if (std::filesystem::exists(q)) return q;
    throw Error("no volume '" + volume_id + "' under '" + dir.string() + "'");
}

/// Cuts the slices named by label rows out of their volumes. Rows are
/// deduplicated (last wins) and optionally restricted to one view.
inline std::vector<SliceSample> load_labeled_slices(const std::filesystem::path& volumes_dir,
                                                    const std::vector<LabelRow>& rows,
                                                    std::optional<View> view = std::nullopt)
{
    std::map<std::string, std::shared_ptr<const DWIVolume>> cache;
    std::vector<SliceSample> out;
    for (const auto& row : deduplicate_labels(rows)) {
        if (view && row.view != *view) continue;
        auto& vol = cache[row.volume_id];
        if (!vol) vol = std::make_shared<const DWIVolume>(load_dwi(volume_path(volumes_dir, row.volume_id)));
        if (row.gradient_index < 0 || static_cast<std::size_t>(row.gradient_index) >= vol->gradient_count() ||
            row.slice_index < 0 || static_cast<std::size_t>(row.slice_index) >= vol->slice_count(row.view)) {
            throw Error("label row " + row.key() + " is outside the volume grid");
        }
        SliceSample s;
        s.volume_id = row.volume_id;
        s.view = row.view;
        s.gradient_index = row.gradient_index;
        s.slice_index = row.slice_index;
        s.pixels = vol->slice(row.view, static_cast<std::size_t>(row.slice_index),
                              static_cast<std::size_t>(row.gradient_index));
        s.label = row.label;
        out.push_back(std::move(s));
    }
    return out;
}

inline LabeledDataset load_dataset(const std::string& id, const std::filesystem::path& volumes_dir,
                                   const std::filesystem::path& labels_csv, std::optional<View> view = std::nullopt)
{
    return {id, load_labeled_slices(volumes_dir, read_label_csv(labels_csv), view)};
}

}  // namespace dwiqc
