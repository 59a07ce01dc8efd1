#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dwiqc/augment/augment.hpp"
#include "dwiqc/core/dataset.hpp"
#include "dwiqc/core/fsutil.hpp"
#include "dwiqc/core/json_util.hpp"
#include "dwiqc/core/slices.hpp"
#include "dwiqc/eval/evaluate.hpp"
#include "dwiqc/learn/model.hpp"
#include "dwiqc/pipeline/pipeline.hpp"

namespace dwiqc {

struct DatasetRef {
    std::string id;
    std::filesystem::path volumes;
    std::filesystem::path labels;
};

/// One JSON document describing an experiment. Relative paths are resolved
/// against the directory of the config file.
struct ExperimentConfig {
    std::vector<DatasetRef> datasets;
    std::optional<DatasetRef> test_dataset;
    View view = View::axial;
    ExclusionRule exclusion;
    AugmentConfig augment;
    BackendSpec backend;
    ThresholdConfig thresholds;
    FoldSpec folds;
    double finetune_fraction = 0.1;
    std::vector<int> sweep_thresholds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    std::uint64_t seed = 0;
};

namespace config_detail {

inline DatasetRef dataset_from_json(const nlohmann::json& j, const std::string& ctx, const std::filesystem::path& base)
{
    JsonSection sec(j, ctx);
    DatasetRef d;
    std::string volumes, labels;
    sec.read("id", d.id);
    sec.read("volumes", volumes);
    sec.read("labels", labels);
    sec.finish();
    if (d.id.empty() || volumes.empty() || labels.empty()) throw ConfigError(ctx + ": id, volumes and labels are required");
    d.volumes = std::filesystem::path(volumes).is_absolute() ? std::filesystem::path(volumes) : base / volumes;
    d.labels = std::filesystem::path(labels).is_absolute() ? std::filesystem::path(labels) : base / labels;
    return d;
}

inline nlohmann::json to_json(const DatasetRef& d)
{
    return {{"id", d.id}, {"volumes", d.volumes.string()}, {"labels", d.labels.string()}};
}

}  // namespace config_detail

inline nlohmann::json to_json(const AugmentConfig& a)
{
    return {{"max_translation", a.max_translation},
            {"max_rotation", a.max_rotation},
            {"zoom_range", a.zoom_range},
            {"max_shear", a.max_shear},
            {"allow_hflip", a.allow_hflip},
            {"allow_vflip", a.allow_vflip},
            {"multiplier", a.multiplier}};
}

/// Fully materialized form: every default is written out.
inline nlohmann::json to_json(const ExperimentConfig& c)
{
    nlohmann::json datasets = nlohmann::json::array();
    for (const auto& d : c.datasets) datasets.push_back(config_detail::to_json(d));
    return {{"datasets", datasets},
            {"test_dataset", c.test_dataset ? config_detail::to_json(*c.test_dataset) : nlohmann::json(nullptr)},
            {"view", to_string(c.view)},
            {"exclusion",
             {{"sagittal_edge_trim", c.exclusion.sagittal_edge_trim},
              {"axial_top_trim", c.exclusion.axial_top_trim},
              {"drop_outside_brain", c.exclusion.drop_outside_brain}}},
            {"augment", to_json(c.augment)},
            {"backend", to_json(c.backend)},
            {"thresholds", {{"axial", c.thresholds.axial_slice_count}, {"sagittal", c.thresholds.sagittal_slice_count}}},
            {"folds", {{"k", c.folds.k}, {"seed", c.folds.seed}, {"grouping", to_string(c.folds.grouping)}}},
            {"finetune", {{"fraction", c.finetune_fraction}}},
            {"sweep", {{"thresholds", c.sweep_thresholds}}},
            {"seed", c.seed}};
}

/// Strict parse: unknown keys and wrongly typed values are ConfigErrors.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = ".")
{
    using namespace config_detail;
    ExperimentConfig c;
    JsonSection top(j, "config");
    if (const auto* ds = top.section("datasets")) {
        if (!ds->is_array()) throw ConfigError("config.datasets: expected an array");
        for (std::size_t i = 0; i < ds->size(); ++i) {
            c.datasets.push_back(dataset_from_json((*ds)[i], "config.datasets[" + std::to_string(i) + "]", base));
        }
    }
    if (const auto* td = top.section("test_dataset"); td && !td->is_null()) {
        c.test_dataset = dataset_from_json(*td, "config.test_dataset", base);
    }
    std::string view = "axial";
    top.read("view", view);
    try {
        c.view = parse_view(view);
    } catch (const Error& e) {
        throw ConfigError(std::string("config.view: ") + e.what());
    }
    if (const auto* e = top.section("exclusion")) {
        JsonSection sec(*e, top.path("exclusion"));
        sec.read("sagittal_edge_trim", c.exclusion.sagittal_edge_trim);
        sec.read("axial_top_trim", c.exclusion.axial_top_trim);
        sec.read("drop_outside_brain", c.exclusion.drop_outside_brain);
        sec.finish();
    }
    if (const auto* a = top.section("augment")) {
        JsonSection sec(*a, top.path("augment"));
        sec.read("max_translation", c.augment.max_translation);
        sec.read("max_rotation", c.augment.max_rotation);
        sec.read("zoom_range", c.augment.zoom_range);
        sec.read("max_shear", c.augment.max_shear);
        sec.read("allow_hflip", c.augment.allow_hflip);
        sec.read("allow_vflip", c.augment.allow_vflip);
        sec.read("multiplier", c.augment.multiplier);
        sec.finish();
    }
    if (const auto* b = top.section("backend")) {
        nlohmann::json spec = *b;
        if (spec.contains("backbone") && spec["backbone"].contains("weights_path")) {
            const std::filesystem::path p = spec["backbone"]["weights_path"].get<std::string>();
            if (!p.empty() && p.is_relative()) spec["backbone"]["weights_path"] = (base / p).string();
        }
        c.backend = backend_spec_from_json(spec, "config.backend");
    }
    if (const auto* t = top.section("thresholds")) {
        JsonSection sec(*t, top.path("thresholds"));
        sec.read("axial", c.thresholds.axial_slice_count);
        sec.read("sagittal", c.thresholds.sagittal_slice_count);
        sec.finish();
    }
    if (const auto* f = top.section("folds")) {
        JsonSection sec(*f, top.path("folds"));
        sec.read("k", c.folds.k);
        sec.read("seed", c.folds.seed);
        std::string grouping = std::string(to_string(c.folds.grouping));
        sec.read("grouping", grouping);
        c.folds.grouping = parse_grouping(grouping);
        sec.finish();
    }
    if (const auto* f = top.section("finetune")) {
        JsonSection sec(*f, top.path("finetune"));
        sec.read("fraction", c.finetune_fraction);
        sec.finish();
    }
    if (const auto* s = top.section("sweep")) {
        JsonSection sec(*s, top.path("sweep"));
        sec.read("thresholds", c.sweep_thresholds);
        sec.finish();
    }
    top.read("seed", c.seed);
    top.finish();

    c.exclusion.validate();
    c.augment.validate();
    c.thresholds.validate();
    c.folds.validate();
    if (!(c.finetune_fraction > 0.0 && c.finetune_fraction <= 1.0)) throw ConfigError("config.finetune.fraction must be in (0, 1]");
    if (c.sweep_thresholds.empty()) throw ConfigError("config.sweep.thresholds must not be empty");
    return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) throw ConfigError("config file '" + path.string() + "' does not exist");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return experiment_config_from_json(j, std::filesystem::absolute(path).parent_path());
}

/// Loads a dataset's labeled slices for one view; missing files are
/// configuration errors.
inline LabeledDataset load_dataset_ref(const DatasetRef& d, View view)
{
    if (!std::filesystem::exists(d.labels)) throw ConfigError("dataset '" + d.id + "': label CSV '" + d.labels.string() + "' does not exist");
    if (!std::filesystem::is_directory(d.volumes)) {
        throw ConfigError("dataset '" + d.id + "': volume directory '" + d.volumes.string() + "' does not exist");
    }
    return load_dataset(d.id, d.volumes, d.labels, view);
}

}  // namespace dwiqc
