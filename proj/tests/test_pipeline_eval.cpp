#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "dwiqc/eval/evaluate.hpp"
#include "dwiqc/pipeline/pipeline.hpp"
#include "dwiqc/sim/injectors.hpp"
#include "dwiqc/sim/phantom.hpp"
#include "test_util.hpp"

using namespace dwiqc;
using dwiqc::testing::TempDir;

namespace {

DWIVolume small_phantom(const std::string& id, std::uint64_t seed, std::size_t gradients = 2)
{
    PhantomConfig pc;
    pc.nx = 48;
    pc.ny = 48;
    pc.nz = 30;
    pc.gradients = gradients;
    return make_phantom(pc, id, seed);
}

/// Phantom with Nyquist ghosting on the first `n` kept axial slices of gradient 1.
std::pair<DWIVolume, std::vector<LabelRow>> ghosted(std::size_t n)
{
    DWIVolume vol = small_phantom("ghost", 3);
    const auto kept = kept_indices(View::axial, compute_brain_extent(vol), {});
    std::vector<LabelRow> rows;
    for (std::size_t i = 0; i < n; ++i) {
        const auto z = static_cast<std::size_t>(kept[i]);
        vol.set_axial_slice(z, 1, inject_ghosting(vol.axial_slice(z, 1), 0.4));
        rows.push_back({vol.id(), View::axial, 1, kept[i], Label::artifactual, ""});
    }
    return {vol, rows};
}

std::vector<SliceSample> labeled(std::size_t n, std::size_t volumes, std::uint64_t seed, double positive_rate = 0.5)
{
    Rng rng(seed);
    std::vector<SliceSample> out;
    for (std::size_t i = 0; i < n; ++i) {
        SliceSample s;
        s.volume_id = "v" + std::to_string(i % volumes);
        s.gradient_index = 0;
        s.slice_index = static_cast<int>(i);
        s.pixels = Image(4, 4);
        s.label = rng.bernoulli(positive_rate) ? Label::artifactual : Label::artifact_free;
        out.push_back(s);
    }
    return out;
}

struct ConstantDetector {
    View view = View::axial;
    double p = 0.0;
};
View view_of(const ConstantDetector& d) { return d.view; }
std::vector<double> predict_proba(const ConstantDetector& d, const std::vector<SliceSample>& s)
{
    return std::vector<double>(s.size(), d.p);
}
nlohmann::json fingerprint_json(const ConstantDetector& d) { return {{"backend", "constant"}, {"p", d.p}}; }

}  // namespace

TEST(Pipeline, VolumeFlagIsStrict)
{
    EXPECT_TRUE(volume_flag(4, 3));
    EXPECT_FALSE(volume_flag(3, 3));
    EXPECT_FALSE(volume_flag(0, 0));
    EXPECT_TRUE(volume_flag(1, 0));
    EXPECT_THROW(volume_flag(-1, 0), Error);
    const ThresholdConfig t;
    EXPECT_EQ(t.axial_slice_count, 3);
    EXPECT_EQ(t.sagittal_slice_count, 7);
}

TEST(Pipeline, CleanVolumeHasNoFlags)
{
    const auto vol = small_phantom("clean", 1);
    const OracleDetector ax{View::axial, {}}, sag{View::sagittal, {}};
    const auto r = qc_volume(vol, ax, sag);
    const auto ext = compute_brain_extent(vol);
    const std::size_t na = kept_indices(View::axial, ext, {}).size(), ns = kept_indices(View::sagittal, ext, {}).size();
    EXPECT_EQ(r.slices.size(), (na + ns) * 2);
    std::size_t axial = 0;
    std::set<std::tuple<int, int, int>> seen;
    for (const auto& s : r.slices) {
        EXPECT_FALSE(s.flag);
        axial += s.view == View::axial;
        EXPECT_TRUE(seen.insert({static_cast<int>(s.view), s.gradient, s.index}).second);
    }
    EXPECT_EQ(axial, na * 2);
    ASSERT_EQ(r.verdicts.size(), 4u);
    for (const auto& v : r.verdicts) EXPECT_FALSE(v.flag);
    EXPECT_FALSE(r.any_flag());
    EXPECT_EQ(r.models["axial"]["backend"], "oracle");
}

TEST(Pipeline, OracleOnGhostedVolume)
{
    auto [vol, rows] = ghosted(6);
    const auto ax = OracleDetector::from_labels(View::axial, rows);
    const auto sag = OracleDetector::from_labels(View::sagittal, rows);
    auto r = qc_volume(vol, ax, sag, {}, {3, 7});
    EXPECT_EQ(r.flag_count(View::axial, 1), 6);
    EXPECT_EQ(r.flag_count(View::axial, 0), 0);
    auto verdict = [](const QCReport& rep, View v, int g) {
        for (const auto& x : rep.verdicts)
            if (x.view == v && x.gradient == g) return x.flag;
        throw std::runtime_error("missing verdict");
    };
    EXPECT_TRUE(verdict(r, View::axial, 1));
    EXPECT_FALSE(verdict(r, View::axial, 0));
    EXPECT_FALSE(verdict(r, View::sagittal, 1));
    r = qc_volume(vol, ax, sag, {}, {7, 7});
    EXPECT_FALSE(verdict(r, View::axial, 1));
    EXPECT_THROW(qc_volume(vol, sag, sag), Error);
    EXPECT_THROW(qc_volume(vol, ax, ax), Error);
}

TEST(Pipeline, VerdictsRecomputeFromSliceFlags)
{
    auto [vol, rows] = ghosted(5);
    const auto r = qc_volume(vol, OracleDetector::from_labels(View::axial, rows), ConstantDetector{View::sagittal, 0.9});
    for (int ta = 0; ta <= 10; ++ta) {
        for (int ts = 0; ts <= 10; ++ts) {
            const auto v = verdicts_at(r, {ta, ts});
            for (const auto& x : v) {
                int count = 0;
                for (const auto& s : r.slices) count += s.view == x.view && s.gradient == x.gradient && s.flag;
                EXPECT_EQ(x.flag, count > (x.view == View::axial ? ta : ts));
            }
        }
    }
    EXPECT_EQ(verdicts_at(r, r.thresholds), r.verdicts);
}

TEST(Pipeline, ReportFilesAndRoundTrip)
{
    TempDir dir;
    auto [vol, rows] = ghosted(2);
    const auto r = qc_volume(vol, OracleDetector::from_labels(View::axial, rows), OracleDetector{View::sagittal, {}});
    const auto files = write_report(r, dir / "with", &vol);
    ASSERT_EQ(files.size(), 3u);
    EXPECT_EQ(files[0].filename(), "report.json");
    for (const auto& row : rows) {
        const auto png = dir / "with" / thumbnail_name(View::axial, 1, row.slice_index);
        ASSERT_TRUE(std::filesystem::exists(png));
        const auto img = read_png_gray8(png);
        EXPECT_EQ(img.rows, vol.ny());
        EXPECT_EQ(img.cols, vol.nx());
        EXPECT_EQ(*std::max_element(img.pixels.begin(), img.pixels.end()), 255);
        EXPECT_EQ(*std::min_element(img.pixels.begin(), img.pixels.end()), 0);
    }
    EXPECT_EQ(write_report(r, dir / "without").size(), 1u);
    std::size_t n = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir / "without")) n += e.is_regular_file();
    EXPECT_EQ(n, 1u);
    const auto back = read_report(dir / "with" / "report.json");
    EXPECT_EQ(back, r);
    const auto j = nlohmann::json::parse(read_file(dir / "with" / "report.json"));
    EXPECT_EQ(j["version"], 1);
    EXPECT_EQ(j["thresholds"]["axial"], 3);
    EXPECT_EQ(j["thresholds"]["sagittal"], 7);
    EXPECT_TRUE(j["slices"][0].contains("prob"));
}

TEST(Metrics, WorkedExample)
{
    const auto m = metrics_from_counts(94, 6, 891, 9);
    EXPECT_DOUBLE_EQ(*m.precision, 0.94);
    EXPECT_NEAR(*m.recall, 0.9126, 1e-4);
    EXPECT_DOUBLE_EQ(*m.accuracy, 0.985);
    const auto d = metrics_from_counts(0, 0, 5, 3);
    EXPECT_FALSE(d.precision.has_value());
    EXPECT_DOUBLE_EQ(*d.recall, 0.0);
    EXPECT_FALSE(metrics_from_counts(0, 2, 3, 0).recall.has_value());
    const auto perfect = compute_metrics({true, false, true}, {true, false, true});
    EXPECT_EQ(*perfect.precision, 1.0);
    EXPECT_EQ(*perfect.recall, 1.0);
    EXPECT_EQ(*perfect.accuracy, 1.0);
    EXPECT_THROW(compute_metrics({true}, {true, false}), Error);
    EXPECT_THROW(compute_metrics({}, {}), Error);
    EXPECT_TRUE(to_json(d)["precision"].is_null());
}

TEST(Metrics, MatchesBruteForceCounting)
{
    Rng rng(2024);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t n = 1 + rng.index(40);
        std::vector<bool> p(n), t(n);
        const double bias = rng.uniform();
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = rng.bernoulli(bias);
            t[i] = rng.bernoulli(1 - bias);
        }
        std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (p[i] && t[i]) ++tp;
            if (p[i] && !t[i]) ++fp;
            if (!p[i] && !t[i]) ++tn;
            if (!p[i] && t[i]) ++fn;
        }
        const auto m = compute_metrics(p, t);
        ASSERT_EQ(m.tp, tp);
        ASSERT_EQ(m.fp, fp);
        ASSERT_EQ(m.tn, tn);
        ASSERT_EQ(m.fn, fn);
        ASSERT_EQ(m.precision.has_value(), tp + fp > 0);
        ASSERT_EQ(m.recall.has_value(), tp + fn > 0);
        if (m.precision) ASSERT_EQ(*m.precision, double(tp) / double(tp + fp));
        if (m.recall) ASSERT_EQ(*m.recall, double(tp) / double(tp + fn));
        ASSERT_EQ(*m.accuracy, double(tp + tn) / double(n));
    }
}

TEST(Folds, EqualSlicesPerFold)
{
    const auto s = labeled(10, 10, 1);
    const auto folds = kfold_split(s, {5, 3, Grouping::slice});
    ASSERT_EQ(folds.size(), 5u);
    for (const auto& f : folds) EXPECT_EQ(f.size(), 2u);
}

TEST(Folds, PartitionProperties)
{
    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 10 + rng.index(90);
        const std::size_t vols = 5 + rng.index(10);
        const auto s = labeled(n, vols, trial);
        const int k = 2 + static_cast<int>(rng.index(4));
        for (Grouping g : {Grouping::slice, Grouping::subject}) {
            const auto folds = kfold_split(s, {k, static_cast<std::uint64_t>(trial), g});
            std::vector<int> seen(n, 0);
            std::vector<std::set<std::string>> ids(folds.size());
            for (std::size_t f = 0; f < folds.size(); ++f)
                for (auto i : folds[f]) {
                    ++seen[i];
                    ids[f].insert(s[i].volume_id);
                }
            for (int c : seen) ASSERT_EQ(c, 1);
            std::vector<std::size_t> units;
            for (std::size_t f = 0; f < folds.size(); ++f) units.push_back(g == Grouping::slice ? folds[f].size() : ids[f].size());
            ASSERT_LE(*std::max_element(units.begin(), units.end()) - *std::min_element(units.begin(), units.end()), 1u);
            if (g == Grouping::subject) {
                for (std::size_t a = 0; a < ids.size(); ++a)
                    for (std::size_t b = a + 1; b < ids.size(); ++b)
                        for (const auto& id : ids[a]) ASSERT_EQ(ids[b].count(id), 0u);
            }
            ASSERT_EQ(kfold_split(s, {k, static_cast<std::uint64_t>(trial), g}), folds);
        }
    }
}

TEST(Folds, Errors)
{
    const auto s = labeled(20, 3, 1);
    EXPECT_THROW(kfold_split(s, {5, 0, Grouping::subject}), Error);
    EXPECT_THROW(kfold_split(s, {1, 0, Grouping::slice}), ConfigError);
    EXPECT_THROW(kfold_split(labeled(3, 3, 1), {5, 0, Grouping::slice}), Error);
}

TEST(CrossValidation, OracleAndConstantModels)
{
    auto s = labeled(100, 20, 9);
    for (std::size_t i = 0; i < s.size(); ++i) s[i].label = i % 2 ? Label::artifactual : Label::artifact_free;
    std::vector<LabelRow> rows;
    for (const auto& x : s) rows.push_back({x.volume_id, x.view, x.gradient_index, x.slice_index, *x.label, ""});
    const auto oracle = OracleDetector::from_labels(View::axial, rows);
    auto run = [&](auto detector) {
        return cross_validate_with(s, {}, [&](const std::vector<std::size_t>&, const std::vector<std::size_t>& te) {
            std::vector<SliceSample> t;
            for (auto i : te) t.push_back(s[i]);
            return predict_proba(detector, t);
        });
    };
    const auto o = run(oracle);
    EXPECT_EQ(o.folds.size(), 5u);
    EXPECT_DOUBLE_EQ(*o.mean.accuracy, 1.0);
    const auto c = run(ConstantDetector{View::axial, 0.0});
    EXPECT_DOUBLE_EQ(*c.mean.accuracy, 0.5);
    EXPECT_DOUBLE_EQ(*c.mean.recall, 0.0);
    EXPECT_FALSE(c.mean.precision.has_value());
    const auto csv = cv_csv(c);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
    EXPECT_EQ(to_json(c)["folds"].size(), 5u);
}

TEST(CrossValidation, SingleClassFoldSkipped)
{
    auto s = labeled(30, 6, 2);
    for (auto& x : s) x.label = x.volume_id == "v0" ? Label::artifactual : Label::artifact_free;
    // With 2 folds over 6 subjects the positive subject sits in one test fold,
    // so the other fold's training part holds only negatives.
    const auto r = cross_validate_with(s, {2, 1, Grouping::subject},
                                       [](const std::vector<std::size_t>&, const std::vector<std::size_t>& te) {
                                           return std::vector<double>(te.size(), 0.0);
                                       });
    std::size_t skipped = 0;
    for (const auto& f : r.folds) skipped += f.skipped;
    EXPECT_EQ(skipped, 1u);
    EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(CrossValidation, BackendWithAugmentation)
{
    Rng rng(4);
    std::vector<SliceSample> s;
    for (int i = 0; i < 60; ++i) {
        SliceSample x;
        x.volume_id = "v" + std::to_string(i % 10);
        x.slice_index = i;
        x.pixels = dwiqc::testing::random_image(24, 24, rng, 0, 1);
        const bool pos = i % 3 == 0;
        if (pos)
            for (std::size_t r = 0; r < 24; ++r)
                for (std::size_t c = 0; c < 24; c += 2) x.pixels(r, c) += 3.0;
        x.label = pos ? Label::artifactual : Label::artifact_free;
        s.push_back(x);
    }
    BackendSpec spec;
    spec.forest.n_trees = 20;
    AugmentConfig aug;
    aug.multiplier = 1;
    const auto r = cross_validate(s, spec, {3, 5, Grouping::subject}, {}, aug, View::axial);
    ASSERT_EQ(r.folds.size(), 3u);
    for (const auto& f : r.folds) EXPECT_EQ(f.train_size + f.test_size, 60u);
    EXPECT_GE(*r.mean.accuracy, 0.9);
    std::vector<SliceSample> reversed(s.rbegin(), s.rend());
    const auto again = cross_validate(reversed, spec, {3, 5, Grouping::subject}, {}, aug, View::axial);
    for (std::size_t f = 0; f < 3; ++f) EXPECT_EQ(again.folds[f].metrics, r.folds[f].metrics);
    ASSERT_EQ(r.oof_prob.size(), 60u);
    for (std::size_t i = 0; i < 60; ++i) EXPECT_EQ(again.oof_prob[59 - i], r.oof_prob[i]);
    std::size_t flagged = 0;
    for (const auto& v : volume_counts(s, r.oof_prob)) flagged += static_cast<std::size_t>(v.flag_count);
    std::size_t direct = 0;
    for (double p : r.oof_prob) direct += slice_flag(p);
    EXPECT_EQ(flagged, direct);
}

TEST(Sweep, MonotoneRecall)
{
    Rng rng(5);
    std::vector<VolumeCount> v;
    for (int i = 0; i < 200; ++i) {
        const bool truth = rng.bernoulli(0.4);
        v.push_back({"v" + std::to_string(i), 0, static_cast<int>(rng.index(truth ? 15 : 5)), truth});
    }
    std::vector<int> ts{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    const auto rows = threshold_sweep(v, ts);
    ASSERT_EQ(rows.size(), 10u);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_LE(*rows[i].metrics.recall, *rows[i - 1].metrics.recall);
        EXPECT_TRUE(std::includes(rows[i - 1].flagged.begin(), rows[i - 1].flagged.end(), rows[i].flagged.begin(), rows[i].flagged.end()));
    }
    EXPECT_GE(*rows.front().metrics.recall, *rows.back().metrics.recall);
    EXPECT_THROW(threshold_sweep(v, {}), ConfigError);
    for (auto& x : v) x.flag_count = 0;
    for (const auto& r : threshold_sweep(v, ts)) EXPECT_TRUE(!r.metrics.recall || *r.metrics.recall == 0.0);
    const auto csv = sweep_csv(rows);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 11);
}

TEST(Sweep, CountsFromReports)
{
    auto [vol, rows] = ghosted(4);
    const auto r = qc_volume(vol, OracleDetector::from_labels(View::axial, rows), OracleDetector{View::sagittal, {}});
    const auto counts = volume_counts({r}, rows, View::axial);
    ASSERT_EQ(counts.size(), 2u);
    EXPECT_EQ(counts[1].flag_count, 4);
    EXPECT_TRUE(counts[1].truth);
    EXPECT_FALSE(counts[0].truth);
    const auto sweep = threshold_sweep(counts, {1, 2, 3, 4, 5});
    EXPECT_DOUBLE_EQ(*sweep[2].metrics.recall, 1.0);
    EXPECT_DOUBLE_EQ(*sweep[3].metrics.recall, 0.0);
}

TEST(CrossDataset, LeakageAndOracle)
{
    const LabeledDataset a{"A", labeled(20, 4, 1)}, b{"B", labeled(20, 4, 2)};
    EXPECT_THROW(cross_dataset_eval({a, b}, a, {}, {}, View::axial), LeakageError);
    EXPECT_THROW(finetune_eval({a}, a, {}, {}, 0.1, View::axial), LeakageError);
    std::vector<LabelRow> rows;
    for (const auto& x : b.samples) rows.push_back({x.volume_id, x.view, x.gradient_index, x.slice_index, *x.label, ""});
    EXPECT_DOUBLE_EQ(*evaluate_detector(OracleDetector::from_labels(View::axial, rows), b.samples).accuracy, 1.0);
}

TEST(CrossDataset, FinetuneExcludesSampledSlices)
{
    Rng rng(8);
    auto make = [&](const std::string& prefix, double amp) {
        std::vector<SliceSample> out;
        for (int i = 0; i < 60; ++i) {
            SliceSample x;
            x.volume_id = prefix + std::to_string(i % 6);
            x.slice_index = i;
            x.pixels = dwiqc::testing::random_image(24, 24, rng, 0, 1);
            const bool pos = i % 2 == 0;
            if (pos)
                for (std::size_t r = 0; r < 24; ++r)
                    for (std::size_t c = 0; c < 24; c += 3) x.pixels(r, c) += amp;
            x.label = pos ? Label::artifactual : Label::artifact_free;
            out.push_back(x);
        }
        return out;
    };
    const LabeledDataset a{"A", make("a", 3.0)}, b{"B", make("b", 1.0)};
    BackendSpec spec;
    spec.forest.n_trees = 20;
    const auto r = finetune_eval({a}, b, spec, {}, 0.1, View::axial);
    EXPECT_EQ(r.sampled.size(), 6u);
    EXPECT_EQ(r.eval_size, 54u);
    EXPECT_EQ(r.before.total(), 54u);
    EXPECT_EQ(r.after.total(), 54u);
    const auto cd = cross_dataset_eval({a}, b, spec, {}, View::axial);
    EXPECT_EQ(cd.test_size, 60u);
    EXPECT_EQ(to_json(cd)["train_ids"], nlohmann::json({"A"}));
    EXPECT_EQ(to_json(r)["sampled"].size(), 6u);
}
