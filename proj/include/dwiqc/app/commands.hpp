#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dwiqc/app/config.hpp"
#include "dwiqc/augment/augment.hpp"
#include "dwiqc/core/fsutil.hpp"
#include "dwiqc/core/nifti.hpp"
#include "dwiqc/eval/evaluate.hpp"
#include "dwiqc/features/features.hpp"
#include "dwiqc/learn/model.hpp"
#include "dwiqc/pipeline/pipeline.hpp"
#include "dwiqc/sim/benchmark.hpp"
#include "dwiqc/sim/phantom.hpp"

namespace dwiqc {

inline void require_exists(const std::filesystem::path& p, const std::string& what)
{
    if (p.empty() || !std::filesystem::exists(p)) throw ConfigError(what + " '" + p.string() + "' does not exist");
}

/// "0.5" or "lo:hi" / "lo,hi".
inline SeverityRange parse_severity(const std::string& s)
{
    try {
        const auto sep = s.find_first_of(":,");
        if (sep == std::string::npos) {
            const double v = std::stod(s);
            return {v, v};
        }
        return {std::stod(s.substr(0, sep)), std::stod(s.substr(sep + 1))};
    } catch (const std::exception&) {
        throw ConfigError("severity '" + s + "' is not a number or lo:hi range");
    }
}

// ------------------------------------------------------------------ simulate

struct SimulateOptions {
    std::filesystem::path clean_dir;
    std::filesystem::path out;
    std::string mix;
    std::string severity = "0.3:0.7";
    std::uint64_t seed = 0;
};

inline BenchmarkManifest cmd_simulate(const SimulateOptions& o, std::ostream& log)
{
    require_exists(o.clean_dir, "clean directory");
    BenchmarkConfig cfg;
    cfg.mix = parse_mix(o.mix);
    cfg.severity = parse_severity(o.severity);
    cfg.seed = o.seed;
    cfg.validate();
    const auto manifest = make_benchmark(o.clean_dir, o.out, cfg);
    std::map<std::string, std::size_t> by_kind;
    for (const auto& e : manifest.entries)
        for (const auto& a : e.artifacts) ++by_kind[std::string(to_string(a.kind))];
    std::size_t axial = 0, sagittal = 0;
    for (const auto& k : manifest.positive_keys()) (k.find(":axial:") != std::string::npos ? axial : sagittal)++;
    log << "volumes: " << manifest.entries.size() + manifest.clean_count << " (" << manifest.clean_count << " clean)\n";
    for (const auto& [kind, n] : by_kind) log << "  " << kind << ": " << n << " injections\n";
    log << "artifactual slices: axial " << axial << ", sagittal " << sagittal << "\n";
    log << "labels: " << (o.out / "labels.csv").string() << "\n";
    return manifest;
}

// ------------------------------------------------------------------ phantom / backbone

struct PhantomOptions {
    std::filesystem::path out;
    std::size_t count = 20;
    std::uint64_t seed = 0;
    PhantomConfig phantom;
};

inline void cmd_phantom(const PhantomOptions& o, std::ostream& log)
{
    if (o.count == 0) throw ConfigError("phantom count must be >= 1");
    if (o.phantom.gradients < 1 || o.phantom.nx < 8 || o.phantom.ny < 8 || o.phantom.nz < 8) {
        throw ConfigError("phantom grid must be at least 8x8x8 with >= 1 gradient");
    }
    const auto paths = write_phantom_set(o.out, o.count, o.phantom, o.seed);
    log << "wrote " << paths.size() << " phantoms to " << o.out.string() << "\n";
}

inline FeatureBackbone cmd_make_backbone(const std::filesystem::path& out, std::uint64_t seed, std::ostream& log)
{
    const auto spec = make_reference_backbone(out, seed);
    log << nlohmann::json{{"name", spec.name},
                          {"weights_path", std::filesystem::absolute(spec.weights_path).string()},
                          {"output_dim", spec.output_dim},
                          {"weights_digest", spec.weights_digest}}
               .dump(2)
        << "\n";
    return spec;
}

// ------------------------------------------------------------------ train

struct TrainOptions {
    std::filesystem::path config;
    std::optional<View> view;
    std::optional<Backend> backend;
    std::filesystem::path out_model;
};

inline std::vector<LabeledDataset> load_datasets(const std::vector<DatasetRef>& refs, View view)
{
    if (refs.empty()) throw ConfigError("config lists no datasets");
    std::vector<LabeledDataset> out;
    for (const auto& r : refs) out.push_back(load_dataset_ref(r, view));
    return out;
}

/// Training slices of one view; volume ids are qualified by dataset only
/// when several datasets are combined.
inline std::vector<SliceSample> training_samples(const std::vector<LabeledDataset>& sets, View view)
{
    if (sets.size() > 1) return canonical_order(union_samples(sets, view));
    std::vector<SliceSample> out;
    for (const auto& s : sets.front().samples)
        if (s.view == view) out.push_back(s);
    return canonical_order(std::move(out));
}

inline DetectorModel cmd_train(const TrainOptions& o, std::ostream& log)
{
    ExperimentConfig cfg = load_experiment_config(o.config);
    if (o.view) cfg.view = *o.view;
    if (o.backend) cfg.backend.backend = *o.backend;
    cfg.backend.validate();
    if (o.out_model.empty()) throw ConfigError("--out-model is required");
    const auto sets = load_datasets(cfg.datasets, cfg.view);
    const auto samples = training_samples(sets, cfg.view);
    if (samples.empty()) throw Error("no labeled " + std::string(to_string(cfg.view)) + " slices in the datasets");
    const auto train_set = augment_dataset(samples, cfg.augment, stream_seed(cfg.seed, "augment"));
    const auto& t = cfg.backend.train;
    log << "backend=" << to_string(cfg.backend.backend) << " view=" << to_string(cfg.view) << " slices=" << samples.size()
        << " augmented=" << train_set.size() << "\n";
    log << "epochs=" << t.epochs << " learning_rate=" << t.learning_rate << " batch_size=" << t.batch_size
        << " class_balance=" << to_string(t.class_balance) << "\n";
    const auto model = train_detector(cfg.backend, cfg.view, train_set);
    for (std::size_t e = 0; e < model.training_log.size(); ++e) log << "epoch " << e + 1 << " loss " << model.training_log[e] << "\n";
    if (model.oob_accuracy) log << "oob_accuracy " << *model.oob_accuracy << "\n";
    if (model.pca_components()) log << "pca_components " << model.pca_components() << "\n";
    save_model(model, o.out_model);
    const nlohmann::json training_log{{"backend", to_string(cfg.backend.backend)},
                                      {"view", to_string(cfg.view)},
                                      {"epochs", t.epochs},
                                      {"learning_rate", t.learning_rate},
                                      {"samples", samples.size()},
                                      {"training_samples", train_set.size()},
                                      {"losses", model.training_log},
                                      {"oob_accuracy", model.oob_accuracy ? nlohmann::json(*model.oob_accuracy) : nlohmann::json(nullptr)},
                                      {"pca_components", model.pca_components()},
                                      {"fingerprint", to_json(model.fingerprint)},
                                      {"config", to_json(cfg)}};
    write_file_atomic(std::filesystem::path(o.out_model).concat(".log.json"), training_log.dump(2) + "\n");
    write_file_atomic(std::filesystem::path(o.out_model).concat(".config.json"), to_json(cfg).dump(2) + "\n");
    log << "model written to " << o.out_model.string() << "\n";
    return model;
}

// ------------------------------------------------------------------ qc

using AnyDetector = std::variant<DetectorModel, OracleDetector>;

/// A saved model path, or "oracle:<labels.csv>" for the ground-truth detector.
inline AnyDetector load_detector(const std::string& spec, View view)
{
    if (spec.rfind("oracle:", 0) == 0) {
        const std::filesystem::path labels = spec.substr(7);
        require_exists(labels, "oracle label CSV");
        return OracleDetector::from_labels(view, read_label_csv(labels));
    }
    require_exists(spec, std::string(to_string(view)) + " model");
    return load_model(spec, std::nullopt, view);
}

struct QcOptions {
    std::filesystem::path input;
    std::string axial_model;
    std::string sagittal_model;
    ThresholdConfig thresholds;
    ExclusionRule exclusion;
    std::filesystem::path report_dir;
    bool thumbnails = false;
};

inline std::vector<QCReport> cmd_qc(const QcOptions& o, std::ostream& log)
{
    require_exists(o.input, "input");
    if (o.axial_model.empty() || o.sagittal_model.empty()) throw ConfigError("both --axial-model and --sagittal-model are required");
    if (o.report_dir.empty()) throw ConfigError("--report-dir is required");
    o.thresholds.validate();
    o.exclusion.validate();
    std::vector<std::filesystem::path> inputs;
    if (std::filesystem::is_directory(o.input)) {
        inputs = list_volumes(o.input);
        if (inputs.empty()) throw ConfigError("no NIfTI volumes in '" + o.input.string() + "'");
    } else {
        inputs.push_back(o.input);
    }
    const auto axial = load_detector(o.axial_model, View::axial);
    const auto sagittal = load_detector(o.sagittal_model, View::sagittal);
    std::vector<QCReport> reports;
    for (const auto& path : inputs) {
        const DWIVolume vol = load_dwi(path);
        QCReport r = std::visit([&](const auto& a, const auto& s) { return qc_volume(vol, a, s, o.exclusion, o.thresholds); },
                                axial, sagittal);
        write_report(r, o.report_dir / vol.id(), o.thumbnails ? &vol : nullptr);
        std::size_t flags = 0;
        for (const auto& s : r.slices) flags += s.flag;
        log << vol.id() << ": " << flags << " flagged slices, volume " << (r.any_flag() ? "ARTIFACTUAL" : "ok") << "\n";
        reports.push_back(std::move(r));
    }
    return reports;
}

// ------------------------------------------------------------------ evaluate

enum class EvalMode { cv, cross_dataset, sweep, finetune };

inline EvalMode parse_eval_mode(std::string_view s)
{
    if (s == "cv") return EvalMode::cv;
    if (s == "cross-dataset") return EvalMode::cross_dataset;
    if (s == "sweep") return EvalMode::sweep;
    if (s == "finetune") return EvalMode::finetune;
    throw ConfigError("unknown evaluation mode '" + std::string(s) + "' (expected cv, cross-dataset, sweep or finetune)");
}

struct EvaluateOptions {
    std::filesystem::path config;
    std::string mode;
    std::filesystem::path out_dir;
};

inline void write_outputs(const std::filesystem::path& dir, const std::string& stem, const std::string& csv,
                          nlohmann::json summary, const ExperimentConfig& cfg)
{
    summary["config"] = to_json(cfg);
    summary["tool_version"] = tool_version;
    write_file_atomic(dir / (stem + ".csv"), csv);
    write_file_atomic(dir / (stem + ".json"), summary.dump(2) + "\n");
}

inline std::string format_rate(const std::optional<double>& v) { return v ? optional_csv(v) : "undefined"; }

/// Runs one evaluation mode and writes `<mode>.csv` and `<mode>.json` into
/// out_dir. Returns the JSON summary.
inline nlohmann::json cmd_evaluate(const EvaluateOptions& o, std::ostream& log)
{
    const EvalMode mode = parse_eval_mode(o.mode);
    const ExperimentConfig cfg = load_experiment_config(o.config);
    if (o.out_dir.empty()) throw ConfigError("--out is required");
    const View view = cfg.view;
    const auto sets = load_datasets(cfg.datasets, view);
    std::filesystem::create_directories(o.out_dir);
    write_file_atomic(o.out_dir / "config.resolved.json", to_json(cfg).dump(2) + "\n");

    switch (mode) {
    case EvalMode::cv:
    case EvalMode::sweep: {
        const auto samples = training_samples(sets, view);
        const auto cv = cross_validate(samples, cfg.backend, cfg.folds, cfg.backend.train, cfg.augment, view);
        for (const auto& w : cv.warnings) log << "warning: " << w << "\n";
        if (mode == EvalMode::cv) {
            for (const auto& f : cv.folds) {
                log << "fold " << f.fold << ": " << (f.skipped ? "skipped" : "accuracy " + format_rate(f.metrics.accuracy)) << "\n";
            }
            log << "mean accuracy " << format_rate(cv.mean.accuracy) << ", precision " << format_rate(cv.mean.precision)
                << ", recall " << format_rate(cv.mean.recall) << "\n";
            auto j = to_json(cv);
            write_outputs(o.out_dir, "cv", cv_csv(cv), j, cfg);
            return j;
        }
        const auto rows = threshold_sweep(volume_counts(samples, cv.oof_prob), cfg.sweep_thresholds);
        for (const auto& r : rows) {
            log << "T=" << r.threshold << " accuracy " << format_rate(r.metrics.accuracy) << " recall "
                << format_rate(r.metrics.recall) << "\n";
        }
        auto j = to_json(rows, view);
        write_outputs(o.out_dir, "sweep", sweep_csv(rows), j, cfg);
        return j;
    }
    case EvalMode::cross_dataset:
    case EvalMode::finetune: {
        if (!cfg.test_dataset) throw ConfigError("mode " + o.mode + " needs config.test_dataset");
        const auto test = load_dataset_ref(*cfg.test_dataset, view);
        if (mode == EvalMode::cross_dataset) {
            const auto r = cross_dataset_eval(sets, test, cfg.backend, cfg.backend.train, view);
            log << "train " << r.train_size << " slices, test " << r.test_size << " slices: accuracy "
                << format_rate(r.metrics.accuracy) << "\n";
            auto j = to_json(r);
            write_outputs(o.out_dir, "cross_dataset", cross_dataset_csv(r), j, cfg);
            return j;
        }
            const auto r = finetune_eval(sets, test, cfg.backend, cfg.backend.train, cfg.finetune_fraction, view);
        log << "sampled " << r.sampled.size() << " slices; evaluated on " << r.eval_size << ": accuracy "
            << format_rate(r.before.accuracy) << " -> " << format_rate(r.after.accuracy) << "\n";
        auto j = to_json(r);
        write_outputs(o.out_dir, "finetune", finetune_csv(r), j, cfg);
        return j;
    }
    }
    return {};
}

// ------------------------------------------------------------------ features

struct FeaturesOptions {
    std::filesystem::path volumes;
    std::filesystem::path labels;
    std::string descriptor = "gabor";
    View view = View::axial;
    std::filesystem::path out;
};

inline FeatureCache cmd_features(const FeaturesOptions& o, std::ostream& log)
{
    require_exists(o.volumes, "volume directory");
    require_exists(o.labels, "label CSV");
    if (o.out.empty()) throw ConfigError("--out is required");
    FeatureConfig fc;
    fc.descriptor = parse_descriptor(o.descriptor);
    const auto samples = canonical_order(load_labeled_slices(o.volumes, read_label_csv(o.labels), o.view));
    const FeatureExtractor fx(fc);
    FeatureCache cache{fc, key_vector(samples), fx.extract_all(samples)};
    write_feature_cache(o.out, cache);
    log << cache.rows.size() << " x " << fx.dim() << " " << o.descriptor << " features written to " << o.out.string() << "\n";
    return cache;
}

}  // namespace dwiqc
