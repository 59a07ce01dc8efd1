#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <numeric>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dwiqc/augment/augment.hpp"
#include "dwiqc/core/dataset.hpp"
#include "dwiqc/core/error.hpp"
#include "dwiqc/core/labels.hpp"
#include "dwiqc/core/rng.hpp"
#include "dwiqc/eval/metrics.hpp"
#include "dwiqc/learn/model.hpp"
#include "dwiqc/pipeline/pipeline.hpp"

namespace dwiqc {

enum class Grouping { slice, subject };

inline std::string_view to_string(Grouping g) { return g == Grouping::slice ? "slice" : "subject"; }

inline Grouping parse_grouping(std::string_view s)
{
    if (s == "slice") return Grouping::slice;
    if (s == "subject") return Grouping::subject;
    throw ConfigError("unknown fold grouping '" + std::string(s) + "'");
}

struct FoldSpec {
    int k = 5;
    std::uint64_t seed = 0;
    Grouping grouping = Grouping::subject;

    void validate() const
    {
        if (k < 2) throw ConfigError("folds: k must be >= 2");
    }
};

/// Partitions sample indices into k folds. Units (slices, or volumes when
/// grouping by subject) are sorted, shuffled by seed and dealt round-robin,
/// so fold sizes in units differ by at most one. Indices within a fold are
/// ascending.
inline std::vector<std::vector<std::size_t>> kfold_split(const std::vector<SliceSample>& samples, const FoldSpec& spec)
{
    spec.validate();
    auto unit = [&](const SliceSample& s) { return spec.grouping == Grouping::subject ? s.volume_id : s.key(); };
    std::set<std::string> unique;
    for (const auto& s : samples) unique.insert(unit(s));
    if (unique.size() < static_cast<std::size_t>(spec.k)) {
        throw Error("cannot split " + std::to_string(unique.size()) + " " +
                    (spec.grouping == Grouping::subject ? "subjects" : "slices") + " into " + std::to_string(spec.k) + " folds");
    }
    std::vector<std::string> units(unique.begin(), unique.end());
    Rng rng(stream_seed(spec.seed, "kfold"));
    rng.shuffle(units);
    std::map<std::string, std::size_t> fold_of;
    for (std::size_t i = 0; i < units.size(); ++i) fold_of[units[i]] = i % static_cast<std::size_t>(spec.k);
    std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(spec.k));
    for (std::size_t i = 0; i < samples.size(); ++i) folds[fold_of.at(unit(samples[i]))].push_back(i);
    return folds;
}

struct FoldResult {
    int fold = 0;
    std::size_t train_size = 0;
    std::size_t test_size = 0;
    Metrics metrics;
    bool skipped = false;
    std::string note;
};

struct CvResult {
    std::vector<FoldResult> folds;
    MacroMetrics mean;
    std::vector<std::string> warnings;
    /// Out-of-fold probability per input sample (NaN inside skipped folds).
    std::vector<double> oof_prob;
};

/// Signature: probabilities for `test` after fitting on `train` (indices
/// into the sample list).
using FoldFitPredict =
    std::function<std::vector<double>(const std::vector<std::size_t>& train, const std::vector<std::size_t>& test)>;

/// Runs k-fold CV with a caller-supplied learner. A fold whose training
/// part lacks a class is skipped with a warning.
inline CvResult cross_validate_with(const std::vector<SliceSample>& samples, const FoldSpec& spec,
                                    const FoldFitPredict& fit_predict)
{
    const auto folds = kfold_split(samples, spec);
    const auto y = label_vector(samples);
    CvResult out;
    out.oof_prob.assign(samples.size(), std::numeric_limits<double>::quiet_NaN());
    std::vector<Metrics> done;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<std::size_t> train;
        for (std::size_t g = 0; g < folds.size(); ++g)
            if (g != f) train.insert(train.end(), folds[g].begin(), folds[g].end());
        std::sort(train.begin(), train.end());
        FoldResult r{static_cast<int>(f), train.size(), folds[f].size(), {}, false, ""};
        std::size_t pos = 0;
        for (auto i : train) pos += static_cast<std::size_t>(y[i]);
        if (pos == 0 || pos == train.size()) {
            r.skipped = true;
            r.note = "training part has a single class";
            out.warnings.push_back("fold " + std::to_string(f) + " skipped: " + r.note);
            out.folds.push_back(r);
            continue;
        }
        const auto probs = fit_predict(train, folds[f]);
        if (probs.size() != folds[f].size()) throw Error("cross-validation learner returned the wrong number of predictions");
        std::vector<bool> pred, truth;
        for (std::size_t t = 0; t < probs.size(); ++t) {
            out.oof_prob[folds[f][t]] = probs[t];
            pred.push_back(slice_flag(probs[t]));
            truth.push_back(y[folds[f][t]] == 1);
        }
        r.metrics = compute_metrics(pred, truth);
        done.push_back(r.metrics);
        out.folds.push_back(r);
    }
    if (done.empty()) throw Error("every cross-validation fold was degenerate");
    out.mean = macro_mean(done);
    return out;
}

/// Sorts by key so results do not depend on input order.
inline std::vector<SliceSample> canonical_order(std::vector<SliceSample> samples)
{
    std::sort(samples.begin(), samples.end(), [](const SliceSample& a, const SliceSample& b) { return a.key() < b.key(); });
    return samples;
}

/// Cross-validation of a backend. Features of every slice and of its
/// augmented copies are computed once; a fold trains on its training
/// slices plus their copies and is tested on unaugmented held-out slices.
inline CvResult cross_validate(const std::vector<SliceSample>& input, const BackendSpec& backend, const FoldSpec& folds,
                               const TrainConfig& train, const AugmentConfig& augment, View view)
{
    BackendSpec spec = backend;
    spec.train = train;
    spec.validate();
    augment.validate();
    check_view(view, input);
    std::vector<std::size_t> order(input.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return input[a].key() < input[b].key(); });
    std::vector<SliceSample> samples;
    for (auto i : order) samples.push_back(input[i]);
    for (const auto& s : samples)
        if (s.augmentation) throw Error("cross-validation input must not contain augmented slices");
    const auto featurizer = Featurizer::make(spec);
    const auto X = featurizer->features(samples);
    const auto y = label_vector(samples);
    const auto keys = key_vector(samples);

    const auto m = static_cast<std::size_t>(augment.multiplier);
    std::vector<SliceSample> copies;
    if (m > 0) {
        auto all = augment_dataset(samples, augment, stream_seed(folds.seed, "augment"));
        copies.assign(std::make_move_iterator(all.begin() + static_cast<long>(samples.size())), std::make_move_iterator(all.end()));
    }
    const auto Xa = featurizer->features(copies);

    CvResult result = cross_validate_with(samples, folds, [&](const std::vector<std::size_t>& tr, const std::vector<std::size_t>& te) {
        FeatureRows rows;
        for (auto i : tr) {
            rows.keys.push_back(keys[i]);
            rows.X.push_back(X[i]);
            rows.y.push_back(y[i]);
            for (std::size_t j = 0; j < m; ++j) {
                const auto& c = copies[i * m + j];
                rows.keys.push_back(c.key());
                rows.X.push_back(Xa[i * m + j]);
                rows.y.push_back(y[i]);
            }
        }
        const auto model = fit_detector(spec, view, featurizer, rows.keys, rows.X, rows.y);
        std::vector<std::vector<double>> Xt;
        for (auto i : te) Xt.push_back(X[i]);
        return predict_features(model, Xt);
    });
    std::vector<double> oof(input.size());
    for (std::size_t i = 0; i < order.size(); ++i) oof[order[i]] = result.oof_prob[i];
    result.oof_prob = std::move(oof);
    return result;
}

// ------------------------------------------------------------------ sweep

/// One gradient volume in one view: how many slices were flagged and
/// whether it truly holds an artifactual slice.
struct VolumeCount {
    std::string volume_id;
    int gradient = 0;
    int flag_count = 0;
    bool truth = false;
};

struct SweepRow {
    int threshold = 0;
    Metrics metrics;
    std::set<std::string> flagged;  // "volume:gradient"
};

/// Volume-level metrics per slice-count threshold. Asserts that flagged
/// sets are nested and recall does not increase as the threshold grows.
inline std::vector<SweepRow> threshold_sweep(const std::vector<VolumeCount>& volumes, std::vector<int> thresholds)
{
    if (thresholds.empty()) throw ConfigError("threshold sweep needs at least one threshold");
    if (volumes.empty()) throw Error("threshold sweep has no volumes");
    std::vector<SweepRow> rows;
    for (int t : thresholds) {
        if (t < 0) throw ConfigError("thresholds must be >= 0");
        SweepRow row{t, {}, {}};
        std::vector<bool> pred, truth;
        for (const auto& v : volumes) {
            const bool f = volume_flag(v.flag_count, t);
            pred.push_back(f);
            truth.push_back(v.truth);
            if (f) row.flagged.insert(v.volume_id + ":" + std::to_string(v.gradient));
        }
        row.metrics = compute_metrics(pred, truth);
        rows.push_back(std::move(row));
    }
    std::vector<const SweepRow*> by_t;
    for (const auto& r : rows) by_t.push_back(&r);
    std::stable_sort(by_t.begin(), by_t.end(), [](const SweepRow* a, const SweepRow* b) { return a->threshold < b->threshold; });
    for (std::size_t i = 1; i < by_t.size(); ++i) {
        const auto& lo = *by_t[i - 1];
        const auto& hi = *by_t[i];
        if (!std::includes(lo.flagged.begin(), lo.flagged.end(), hi.flagged.begin(), hi.flagged.end())) {
            throw Error("threshold sweep: flagged volumes are not nested");
        }
        if (lo.metrics.recall && hi.metrics.recall && *hi.metrics.recall > *lo.metrics.recall) {
            throw Error("threshold sweep: recall increased with the threshold");
        }
    }
    return rows;
}

/// Ground truth per (volume, gradient) in a view: artifactual iff at least
/// one of its slices in that view is labeled artifactual.
inline std::map<std::pair<std::string, int>, bool> volume_truth(const std::vector<LabelRow>& labels, View view)
{
    std::map<std::pair<std::string, int>, bool> truth;
    for (const auto& r : deduplicate_labels(labels)) {
        if (r.view != view) continue;
        auto& t = truth[{r.volume_id, r.gradient_index}];
        t = t || r.label == Label::artifactual;
    }
    return truth;
}

inline std::vector<VolumeCount> volume_counts(const std::vector<QCReport>& reports, const std::vector<LabelRow>& labels,
                                              View view)
{
    const auto truth = volume_truth(labels, view);
    std::vector<VolumeCount> out;
    for (const auto& r : reports) {
        for (int g = 0; g < r.gradient_count; ++g) {
            const auto it = truth.find({r.volume_id, g});
            out.push_back({r.volume_id, g, r.flag_count(view, g), it != truth.end() && it->second});
        }
    }
    return out;
}

/// Volume counts from per-slice probabilities of labeled slices (e.g.
/// out-of-fold predictions); slices without a probability are ignored.
inline std::vector<VolumeCount> volume_counts(const std::vector<SliceSample>& samples, const std::vector<double>& probs)
{
    if (samples.size() != probs.size()) throw Error("volume counts: sample/probability count mismatch");
    std::map<std::pair<std::string, int>, VolumeCount> by_volume;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (std::isnan(probs[i])) continue;
        const auto& s = samples[i];
        auto& v = by_volume[{s.volume_id, s.gradient_index}];
        v.volume_id = s.volume_id;
        v.gradient = s.gradient_index;
        v.flag_count += slice_flag(probs[i]);
        if (!s.label) throw Error("slice " + s.key() + " has no label");
        v.truth = v.truth || *s.label == Label::artifactual;
    }
    std::vector<VolumeCount> out;
    for (auto& [k, v] : by_volume) out.push_back(v);
    return out;
}

// ------------------------------------------------------------ cross-dataset

inline void check_disjoint_ids(const std::vector<LabeledDataset>& train_sets, const LabeledDataset& test_set)
{
    if (train_sets.empty()) throw ConfigError("cross-dataset evaluation needs at least one training dataset");
    for (const auto& d : train_sets) {
        if (d.id == test_set.id) throw LeakageError("dataset '" + d.id + "' is used for both training and testing");
    }
}

/// Slices of one view from several datasets; volume ids are qualified as
/// "<dataset>/<volume>" so equally named volumes of different datasets
/// stay distinct.
inline std::vector<SliceSample> union_samples(const std::vector<LabeledDataset>& sets, View view)
{
    std::vector<SliceSample> all;
    for (const auto& d : sets)
        for (const auto& s : d.samples)
            if (s.view == view) {
                all.push_back(s);
                all.back().volume_id = d.id + "/" + s.volume_id;
            }
    return all;
}

inline std::vector<SliceSample> view_samples(const LabeledDataset& d, View view)
{
    return union_samples({d}, view);
}

struct CrossDatasetResult {
    std::vector<std::string> train_ids;
    std::string test_id;
    std::size_t train_size = 0;
    std::size_t test_size = 0;
    Metrics metrics;
};

template <class Detector>
Metrics evaluate_detector(const Detector& detector, const std::vector<SliceSample>& samples)
{
    const auto probs = predict_proba(detector, samples);
    const auto y = label_vector(samples);
    std::vector<bool> pred, truth;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        pred.push_back(slice_flag(probs[i]));
        truth.push_back(y[i] == 1);
    }
    return compute_metrics(pred, truth);
}

inline Metrics evaluate_rows(const DetectorModel& m, const FeatureRows& rows)
{
    const auto probs = predict_features(m, rows.X);
    std::vector<bool> pred, truth;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        pred.push_back(slice_flag(probs[i]));
        truth.push_back(rows.y[i] == 1);
    }
    return compute_metrics(pred, truth);
}

/// Trains on the union of the training datasets and tests on the other.
inline CrossDatasetResult cross_dataset_eval(const std::vector<LabeledDataset>& train_sets, const LabeledDataset& test_set,
                                             const BackendSpec& backend, const TrainConfig& train, View view)
{
    check_disjoint_ids(train_sets, test_set);
    BackendSpec spec = backend;
    spec.train = train;
    CrossDatasetResult r;
    for (const auto& d : train_sets) r.train_ids.push_back(d.id);
    r.test_id = test_set.id;
    const auto tr = union_samples(train_sets, view);
    const auto te = view_samples(test_set, view);
    r.train_size = tr.size();
    r.test_size = te.size();
    const auto model = train_detector(spec, view, tr);
    r.metrics = evaluate_detector(model, te);
    return r;
}

struct FinetuneResult {
    std::vector<std::string> train_ids;
    std::string test_id;
    double fraction = 0.1;
    std::vector<std::string> sampled;
    std::size_t eval_size = 0;
    Metrics before;
    Metrics after;
};

/// Cross-dataset accuracy before and after fine-tuning on a stratified
/// fraction of the test dataset. Both are measured on the test slices that
/// were not sampled.
inline FinetuneResult finetune_eval(const std::vector<LabeledDataset>& train_sets, const LabeledDataset& test_set,
                                    const BackendSpec& backend, const TrainConfig& train, double fraction, View view)
{
    check_disjoint_ids(train_sets, test_set);
    BackendSpec spec = backend;
    spec.train = train;
    spec.validate();
    const auto featurizer = Featurizer::make(spec);
    const auto base = featurize(*featurizer, canonical_order(union_samples(train_sets, view)));
    const auto fresh = featurize(*featurizer, canonical_order(view_samples(test_set, view)));
    if (base.size() == 0 || fresh.size() == 0) throw Error("finetune evaluation: empty training or test data");
    const auto model = fit_detector(spec, view, featurizer, base.keys, base.X, base.y);
    const auto tuned = finetune_rows(model, base, fresh, fraction, train);

    FinetuneResult r;
    for (const auto& d : train_sets) r.train_ids.push_back(d.id);
    r.test_id = test_set.id;
    r.fraction = fraction;
    r.sampled = tuned.finetune_sampled;
    const std::set<std::string> sampled(r.sampled.begin(), r.sampled.end());
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < fresh.size(); ++i)
        if (!sampled.count(fresh.keys[i])) keep.push_back(i);
    const auto eval = fresh.subset(keep);
    for (const auto& k : eval.keys)
        if (sampled.count(k)) throw LeakageError("fine-tune sample '" + k + "' found in the evaluation set");
    if (eval.size() == 0) throw Error("finetune evaluation: nothing left to evaluate after sampling");
    r.eval_size = eval.size();
    r.before = evaluate_rows(model, eval);
    r.after = evaluate_rows(tuned, eval);
    return r;
}

// ------------------------------------------------------------------ output

inline constexpr int eval_schema_version = 1;

inline std::string cv_csv(const CvResult& r)
{
    std::string s = std::string("fold,train_size,test_size,skipped,") + metrics_csv_columns + "\n";
    for (const auto& f : r.folds) {
        s += std::to_string(f.fold) + "," + std::to_string(f.train_size) + "," + std::to_string(f.test_size) + "," +
             (f.skipped ? "1" : "0") + "," + (f.skipped ? ",,,,,," : metrics_csv(f.metrics)) + "\n";
    }
    return s;
}

inline nlohmann::json to_json(const CvResult& r)
{
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : r.folds) {
        folds.push_back({{"fold", f.fold},
                         {"train_size", f.train_size},
                         {"test_size", f.test_size},
                         {"skipped", f.skipped},
                         {"note", f.note},
                         {"metrics", to_json(f.metrics)}});
    }
    return {{"schema_version", eval_schema_version}, {"mode", "cv"}, {"folds", folds}, {"mean", to_json(r.mean)}, {"warnings", r.warnings}};
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows)
{
    std::string s = std::string("threshold,") + metrics_csv_columns + "\n";
    for (const auto& r : rows) s += std::to_string(r.threshold) + "," + metrics_csv(r.metrics) + "\n";
    return s;
}

inline nlohmann::json to_json(const std::vector<SweepRow>& rows, View view)
{
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows) out.push_back({{"threshold", r.threshold}, {"metrics", to_json(r.metrics)}, {"flagged_volumes", r.flagged.size()}});
    return {{"schema_version", eval_schema_version}, {"mode", "sweep"}, {"view", to_string(view)}, {"rows", out}};
}

inline std::string cross_dataset_csv(const CrossDatasetResult& r)
{
    std::string ids;
    for (const auto& id : r.train_ids) ids += (ids.empty() ? "" : ";") + id;
    return std::string("train_ids,test_id,train_size,test_size,") + metrics_csv_columns + "\n" + ids + "," + r.test_id +
           "," + std::to_string(r.train_size) + "," + std::to_string(r.test_size) + "," + metrics_csv(r.metrics) + "\n";
}

inline nlohmann::json to_json(const CrossDatasetResult& r)
{
    return {{"schema_version", eval_schema_version},
            {"mode", "cross-dataset"},
            {"train_ids", r.train_ids},
            {"test_id", r.test_id},
            {"train_size", r.train_size},
            {"test_size", r.test_size},
            {"metrics", to_json(r.metrics)}};
}

inline std::string finetune_csv(const FinetuneResult& r)
{
    return std::string("stage,") + metrics_csv_columns + "\nbefore," + metrics_csv(r.before) + "\nafter," +
           metrics_csv(r.after) + "\n";
}

inline nlohmann::json to_json(const FinetuneResult& r)
{
    return {{"schema_version", eval_schema_version},
            {"mode", "finetune"},
            {"train_ids", r.train_ids},
            {"test_id", r.test_id},
            {"fraction", r.fraction},
            {"sampled", r.sampled},
            {"eval_size", r.eval_size},
            {"before", to_json(r.before)},
            {"after", to_json(r.after)}};
}

}  // namespace dwiqc
