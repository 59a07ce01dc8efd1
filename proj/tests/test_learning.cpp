#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <gtest/gtest.h>

#include "dwiqc/learn/model.hpp"
#include "test_util.hpp"

using namespace dwiqc;
using dwiqc::testing::TempDir;

namespace {

// Vertical stripes (label 1) against a smooth blob (label 0), with noise.
SliceSample toy_slice(std::size_t i, bool stripes, Rng& rng, View view = View::axial, std::size_t n = 48)
{
    SliceSample s;
    s.volume_id = "toy" + std::to_string(i / 8);
    s.view = view;
    s.gradient_index = static_cast<int>(i % 8);
    s.slice_index = static_cast<int>(i);
    s.pixels = Image(n, n);
    const double period = rng.uniform(4.0, 8.0), phase = rng.uniform(0.0, 6.28);
    const double br = rng.uniform(14.0, 34.0), bc = rng.uniform(14.0, 34.0), bw = rng.uniform(5.0, 9.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
            const double blob = std::exp(-((r - br) * (r - br) + (c - bc) * (c - bc)) / (2 * bw * bw));
            double v = 100.0 * blob + 3.0 * rng.normal();
            if (stripes) v += 40.0 * std::sin(2 * std::numbers::pi * c / period + phase);
            s.pixels(r, c) = v;
        }
    }
    s.label = stripes ? Label::artifactual : Label::artifact_free;
    return s;
}

std::vector<SliceSample> toy_set(std::size_t n, std::uint64_t seed, View view = View::axial)
{
    Rng rng(seed);
    std::vector<SliceSample> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(toy_slice(i, i % 2 == 1, rng, view));
    return out;
}

double accuracy(const std::vector<double>& p, const std::vector<SliceSample>& s)
{
    std::size_t ok = 0;
    for (std::size_t i = 0; i < p.size(); ++i) ok += slice_flag(p[i]) == (*s[i].label == Label::artifactual);
    return static_cast<double>(ok) / static_cast<double>(p.size());
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::filesystem::path& p, const std::string& bytes)
{
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

struct SharedBackbone {
    TempDir dir{"dwiqc_bb"};
    FeatureBackbone spec = make_reference_backbone(dir / "tinyvgg.safetensors");
};

const FeatureBackbone& backbone()
{
    static SharedBackbone shared;
    return shared.spec;
}

}  // namespace

TEST(Backbone, SafetensorsRoundTrip)
{
    TempDir dir;
    TensorFile f;
    f.metadata = {{"k", "v"}};
    f.tensors["b"] = Tensor{{2, 3}, {1, 2, 3, 4, 5, 6}};
    f.tensors["a"] = Tensor{{1}, {-0.5f}};
    write_safetensors(dir / "t.safetensors", f);
    const auto g = read_safetensors(dir / "t.safetensors");
    EXPECT_EQ(g.metadata.at("k"), "v");
    EXPECT_EQ(g.tensors.at("b").shape, (std::vector<std::int64_t>{2, 3}));
    EXPECT_EQ(g.tensors.at("b").data, f.tensors["b"].data);
    EXPECT_EQ(g.tensors.at("a").data, f.tensors["a"].data);
    const auto bytes = slurp(dir / "t.safetensors");
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data(), 8);
    EXPECT_EQ(len % 8, 0u);
    EXPECT_EQ(bytes.size(), 8 + len + 7 * sizeof(float));
}

TEST(Backbone, ReferenceAssetIsDeterministic)
{
    TempDir dir;
    const auto a = make_reference_backbone(dir / "a.safetensors", 7);
    const auto b = make_reference_backbone(dir / "b.safetensors", 7);
    const auto c = make_reference_backbone(dir / "c.safetensors", 8);
    EXPECT_EQ(a.weights_digest, b.weights_digest);
    EXPECT_NE(a.weights_digest, c.weights_digest);
    EXPECT_EQ(a.weights_digest, sha256_file(dir / "a.safetensors"));
    const auto bb = load_backbone(a);
    EXPECT_EQ(bb.output_dim(), 64u);
    EXPECT_EQ(bb.pooling(), "gap");
    EXPECT_EQ(bb.input_rows(), 64u);
    Rng rng(1);
    const auto img = dwiqc::testing::random_image(50, 41, rng);
    const auto f1 = bb.features(img);
    const auto f2 = load_backbone(a).features(img);
    ASSERT_EQ(f1.size(), 64u);
    EXPECT_EQ(f1, f2);
    for (double v : f1) EXPECT_TRUE(std::isfinite(v));
}

TEST(Backbone, CorruptedWeightsRejected)
{
    TempDir dir;
    auto spec = make_reference_backbone(dir / "w.safetensors");
    auto bytes = slurp(spec.weights_path);
    bytes[bytes.size() - 3] ^= 0x40;
    spit(spec.weights_path, bytes);
    try {
        load_backbone(spec);
        FAIL() << "expected digest error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("digest mismatch"), std::string::npos);
    }
    spec.weights_path = dir / "missing.safetensors";
    EXPECT_THROW(load_backbone(spec), Error);
}

TEST(Backbone, DeclaredDimensionChecked)
{
    auto spec = backbone();
    spec.output_dim = 512;
    EXPECT_THROW(load_backbone(spec), Error);
}

TEST(Backbone, ForwardMatchesDirectSum)
{
    // conv (2 outputs) -> relu -> pool -> gap on a 6x6x3 input, against loops.
    Rng rng(3);
    TensorFile f;
    f.metadata = {{"input_height", "6"}, {"input_width", "6"}, {"input_channels", "3"}, {"pooling", "gap"},
                  {"plan", "conv:c,relu,pool,gap"}};
    Tensor w{{2, 3, 3, 3}, std::vector<float>(54)};
    for (auto& v : w.data) v = static_cast<float>(rng.uniform(-1, 1));
    f.tensors["c.weight"] = w;
    f.tensors["c.bias"] = Tensor{{2}, {0.25f, -0.1f}};
    const Backbone bb(f, "t");
    const auto img = dwiqc::testing::random_image(6, 6, rng, 0, 10);
    const auto got = bb.features(img);

    double mean = 0, var = 0;
    for (double v : img.pixels()) mean += v;
    mean /= 36;
    for (double v : img.pixels()) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / 36);
    auto z = [&](int r, int c) { return (r < 0 || c < 0 || r >= 6 || c >= 6) ? 0.0 : (img(r, c) - mean) / sd; };
    ASSERT_EQ(got.size(), 2u);
    for (int o = 0; o < 2; ++o) {
        double conv[6][6];
        for (int r = 0; r < 6; ++r)
            for (int c = 0; c < 6; ++c) {
                double s = f.tensors["c.bias"].data[o];
                for (int ch = 0; ch < 3; ++ch)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) s += w.data[o * 27 + ch * 9 + ky * 3 + kx] * z(r + ky - 1, c + kx - 1);
                conv[r][c] = std::max(0.0, s);
            }
        double gap = 0;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                gap += std::max({conv[2 * r][2 * c], conv[2 * r][2 * c + 1], conv[2 * r + 1][2 * c], conv[2 * r + 1][2 * c + 1]});
        EXPECT_NEAR(got[o], gap / 9, 1e-6);
    }
}

TEST(MlpHead, Defaults)
{
    const HeadConfig h;
    const TrainConfig t;
    EXPECT_EQ(h.hidden_units, 256);
    EXPECT_DOUBLE_EQ(h.dropout_rate, 0.5);
    EXPECT_EQ(t.epochs, 20);
    EXPECT_DOUBLE_EQ(t.learning_rate, 2e-4);
    EXPECT_EQ(t.batch_size, 32);
    EXPECT_EQ(t.class_balance, ClassBalance::weighted);
}

TEST(MlpHead, LearnsSeparableDataAndLossDecreases)
{
    Rng rng(5);
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    for (int i = 0; i < 200; ++i) {
        const int label = i % 2;
        X.push_back({rng.normal() + (label ? 2.5 : -2.5), rng.normal(), rng.normal()});
        y.push_back(label);
    }
    MlpHead head;
    TrainConfig t;
    t.seed = 11;
    const auto losses = head.fit(X, y, {}, t, false);
    ASSERT_EQ(losses.size(), 20u);
    EXPECT_LT(losses.back(), losses.front());
    const auto p = head.predict_proba(X);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        EXPECT_GE(p[i], 0.0);
        EXPECT_LE(p[i], 1.0);
        ok += (p[i] > 0.5) == (y[i] == 1);
    }
    EXPECT_GE(ok, 196u);
    MlpHead again;
    again.fit(X, y, {}, t, false);
    EXPECT_EQ(again.predict_proba(X), p);
}

TEST(MlpHead, RejectsBadInput)
{
    MlpHead head;
    EXPECT_THROW(head.fit({{1.0}, {2.0}}, {0, 0}, {}, {}, false), Error);
    EXPECT_THROW(head.fit({{1.0}, {2.0}}, {0}, {}, {}, false), Error);
    EXPECT_THROW(head.fit({{NAN, 0}, {1, 1}, {3, 2}, {2, 0}}, {0, 1, 0, 1}, {}, {}, false), Error);
}

TEST(Forest, SignSeparatedFeature)
{
    Rng rng(9);
    std::vector<std::vector<double>> X, T;
    std::vector<int> y, ty;
    for (int i = 0; i < 100; ++i) {
        const int label = i % 2;
        X.push_back({label ? rng.uniform(0.1, 1.0) : rng.uniform(-1.0, -0.1)});
        y.push_back(label);
        T.push_back({label ? rng.uniform(0.1, 1.0) : rng.uniform(-1.0, -0.1)});
        ty.push_back(label);
    }
    RandomForest rf;
    rf.fit(X, y, {});
    EXPECT_EQ(rf.tree_count(), 100u);
    const auto p = rf.predict_proba(T);
    for (std::size_t i = 0; i < T.size(); ++i) EXPECT_EQ(p[i] > 0.5, ty[i] == 1);
    ASSERT_TRUE(rf.oob_accuracy().has_value());
    EXPECT_DOUBLE_EQ(*rf.oob_accuracy(), 1.0);
}

TEST(Forest, SingleClassRejected)
{
    RandomForest rf;
    EXPECT_THROW(rf.fit({{1.0}, {2.0}, {3.0}}, {0, 0, 0}, {}), Error);
    std::vector<std::string> keys{"a", "b", "c"};
    EXPECT_THROW(train_feature_rf(Descriptor::gabor, keys, {{1.0}, {2.0}, {3.0}}, {0, 0, 0}, {}), Error);
}

TEST(Forest, TrainingOrderDoesNotMatter)
{
    Rng rng(12);
    std::vector<std::string> keys;
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    for (int i = 0; i < 80; ++i) {
        keys.push_back("v:axial:0:" + std::to_string(i));
        const int label = rng.bernoulli(0.4) ? 1 : 0;
        X.push_back({rng.normal() + label, rng.normal(), rng.normal() - label});
        y.push_back(label);
    }
    ForestConfig cfg;
    cfg.n_trees = 25;
    cfg.seed = 4;
    const auto m1 = train_feature_rf(Descriptor::zernike, keys, X, y, cfg);
    std::vector<std::size_t> perm(keys.size());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<std::string> k2;
    std::vector<std::vector<double>> X2;
    std::vector<int> y2;
    for (auto i : perm) {
        k2.push_back(keys[i]);
        X2.push_back(X[i]);
        y2.push_back(y[i]);
    }
    const auto m2 = train_feature_rf(Descriptor::zernike, k2, X2, y2, cfg);
    EXPECT_EQ(predict_features(m1, X), predict_features(m2, X));
    EXPECT_EQ(m1.fingerprint, m2.fingerprint);
    EXPECT_EQ(m1.spec.backend, Backend::zernike_rf);
}

TEST(Pca, SingleDirectionNeedsOneComponent)
{
    Rng rng(2);
    std::vector<std::vector<double>> X;
    for (int i = 0; i < 200; ++i) {
        const double t = rng.normal();
        X.push_back({3 * t, -2 * t, t, 0.5 * t});
    }
    Pca pca;
    pca.fit(X, {0.98});
    EXPECT_EQ(pca.components(), 1u);
    EXPECT_NEAR(pca.cumulative_ratio(1), 1.0, 1e-9);
}

TEST(Pca, IsotropicComponentCountMatchesOracle)
{
    const int d = 50, n = 5000;
    Rng rng(77);
    std::vector<std::vector<double>> X(n, std::vector<double>(d));
    Eigen::MatrixXd M(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) M(i, j) = X[i][j] = rng.normal();
    Pca pca;
    pca.fit(X, {0.98});

    // Oracle: singular values of the centered data matrix.
    const Eigen::MatrixXd C = M.rowwise() - M.colwise().mean();
    const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(C).singularValues();
    const Eigen::VectorXd ev = sv.array().square();
    const double total = ev.sum();
    std::size_t k = 0;
    double acc = 0;
    while (acc < 0.98 * total) acc += ev(static_cast<Eigen::Index>(k++));
    EXPECT_EQ(pca.components(), k);
    EXPECT_LE(std::abs(static_cast<int>(pca.components()) - 49), 1);
    EXPECT_GE(pca.cumulative_ratio(pca.components()), 0.98);
    EXPECT_LT(pca.cumulative_ratio(pca.components() - 1), 0.98);
    for (int j = 0; j < d; ++j) EXPECT_NEAR(pca.explained_ratio()(j), ev(j) / total, 1e-9);
}

TEST(Pca, DegenerateInputRejected)
{
    Pca pca;
    EXPECT_THROW(pca.fit({{1, 2}, {1, 2}, {1, 2}}, {0.98}), Error);
    EXPECT_THROW(pca.fit({{1, 2}, {3, 4}}, {1.5}), ConfigError);
}

TEST(Svm, LinearHardMarginSolution)
{
    // Points -2, -1 | 1, 2: the maximum-margin separator is f(x) = x.
    SvmConfig cfg;
    cfg.kernel = SvmKernel::linear;
    cfg.C = 10;
    Svm svm;
    svm.fit({{-2}, {-1}, {1}, {2}}, {0, 0, 1, 1}, cfg);
    for (double x : {-3.0, -0.5, 0.0, 0.5, 3.0}) EXPECT_NEAR(svm.decision({x}), x, 1e-3);
    EXPECT_EQ(svm.support_count(), 2u);
    EXPECT_GT(svm.predict_one({3}), 0.5);
    EXPECT_LT(svm.predict_one({-3}), 0.5);
}

TEST(Svm, RbfScaleGammaAndNonlinearSeparation)
{
    Rng rng(8);
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    for (int i = 0; i < 200; ++i) {
        const double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1);
        if (std::abs(a * b) < 0.05) continue;
        X.push_back({a, b});
        y.push_back(a * b > 0 ? 1 : 0);
    }
    Svm svm;
    svm.fit(X, y, {});
    double mean = 0, sq = 0;
    for (const auto& r : X)
        for (double v : r) mean += v;
    mean /= 2.0 * X.size();
    for (const auto& r : X)
        for (double v : r) sq += (v - mean) * (v - mean);
    const double var = sq / (2.0 * X.size());
    EXPECT_NEAR(svm.gamma(), 1.0 / (2.0 * var), 1e-12);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < X.size(); ++i) ok += (svm.decision(X[i]) > 0) == (y[i] == 1);
    EXPECT_GE(static_cast<double>(ok) / X.size(), 0.95);
}

TEST(Detector, CnnHeadFitsToyData)
{
    const auto train = toy_set(64, 1);
    TrainConfig t;
    t.seed = 3;
    t.epochs = 60;
    t.learning_rate = 1e-3;
    const auto m = train_cnn_head(backbone(), train, {}, t);
    EXPECT_EQ(m.spec.backend, Backend::cnn_head);
    EXPECT_EQ(m.training_log.size(), 60u);
    EXPECT_LT(m.training_log.back(), m.training_log.front());
    EXPECT_DOUBLE_EQ(accuracy(predict_proba(m, train), train), 1.0);
    EXPECT_EQ(m.fingerprint.pooling, "gap");
    EXPECT_FALSE(m.fingerprint.backbone_digest.empty());
}

TEST(Detector, GaborFcOnToyData)
{
    const auto train = toy_set(80, 2);
    const auto test = toy_set(40, 3);
    TrainConfig t;
    t.seed = 1;
    t.epochs = 40;
    t.learning_rate = 1e-3;
    const auto m = train_gabor_fc(train, {}, t);
    ASSERT_NE(m.featurizer, nullptr);
    EXPECT_EQ(m.featurizer->dim(), 32u);
    const auto p = predict_proba(m, test);
    EXPECT_GE(accuracy(p, test), 0.95);
    EXPECT_EQ(predict_proba(m, test), p);
}

TEST(Detector, SliceDecisionIsStrict)
{
    EXPECT_FALSE(slice_flag(0.5));
    EXPECT_TRUE(slice_flag(std::nextafter(0.5, 1.0)));
    EXPECT_FALSE(slice_flag(0.0));
}

TEST(Detector, ViewMismatchRejected)
{
    const auto train = toy_set(24, 4);
    BackendSpec spec;
    spec.forest.n_trees = 10;
    const auto m = train_detector(spec, View::axial, train);
    EXPECT_EQ(view_of(m), View::axial);
    EXPECT_EQ(m.artifacts_covered, artifacts_for_view(View::axial));
    const auto sag = toy_set(2, 5, View::sagittal);
    EXPECT_THROW(predict_slice(m, sag[0]), Error);
    EXPECT_THROW(train_detector(spec, View::sagittal, train), Error);
    const auto one = predict_slice(m, train[1]);
    EXPECT_EQ(one.flag, slice_flag(one.prob_artifact));
}

TEST(Finetune, StratifiedSubsampleQuotas)
{
    std::vector<int> labels(1000, 0);
    for (int i = 0; i < 300; ++i) labels[static_cast<std::size_t>(i * 3)] = 1;
    const auto idx = stratified_subsample(labels, 0.1, 5);
    ASSERT_EQ(idx.size(), 100u);
    std::size_t pos = 0;
    for (auto i : idx) pos += static_cast<std::size_t>(labels[i]);
    EXPECT_EQ(pos, 30u);
    EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
    EXPECT_EQ(std::adjacent_find(idx.begin(), idx.end()), idx.end());
    EXPECT_EQ(stratified_subsample(labels, 0.1, 5), idx);
    EXPECT_EQ(stratified_subsample(labels, 1.0, 5).size(), 1000u);
    EXPECT_THROW(stratified_subsample(labels, 0.0004, 5), Error);
    EXPECT_THROW(stratified_subsample(labels, 0.0, 5), ConfigError);
    EXPECT_THROW(stratified_subsample(labels, 1.5, 5), ConfigError);

    // 7 samples, 3 positive, fraction 0.5 -> m = 4: exact quotas 2.29 / 1.71.
    const auto small = stratified_subsample({0, 1, 0, 1, 0, 1, 0}, 0.5, 1);
    ASSERT_EQ(small.size(), 4u);
    int p = 0;
    for (auto i : small) p += std::vector<int>{0, 1, 0, 1, 0, 1, 0}[i];
    EXPECT_EQ(p, 2);
}

TEST(Finetune, RecordsSampledKeys)
{
    const auto base = toy_set(40, 6);
    auto fresh = toy_set(40, 7);
    for (auto& s : fresh) s.volume_id = "new_" + s.volume_id;
    BackendSpec spec;
    spec.backend = Backend::gabor_fc;
    spec.train.epochs = 5;
    const auto m = train_detector(spec, View::axial, base);
    TrainConfig t = spec.train;
    t.seed = 9;
    const auto ft = finetune(m, base, fresh, 0.25, t);
    EXPECT_EQ(ft.finetune_sampled.size(), 10u);
    for (const auto& k : ft.finetune_sampled) EXPECT_EQ(k.rfind("new_", 0), 0u);
    const auto all = finetune(m, base, fresh, 1.0, t);
    EXPECT_EQ(all.finetune_sampled.size(), 40u);
    EXPECT_NE(ft.fingerprint.data_hash, m.fingerprint.data_hash);
    EXPECT_THROW(finetune(m, base, fresh, 0.001, t), Error);
}

TEST(Storage, RoundTripAllBackendFamilies)
{
    TempDir dir;
    const auto train = toy_set(40, 10);
    const auto probes = toy_set(64, 11);
    std::vector<BackendSpec> specs(4);
    specs[0].backend = Backend::gabor_rf;
    specs[0].forest.n_trees = 15;
    specs[1].backend = Backend::gabor_fc;
    specs[1].train.epochs = 3;
    specs[2].backend = Backend::cnn_head;
    specs[2].backbone = backbone();
    specs[2].train.epochs = 3;
    specs[3].backend = Backend::cnn_pca_svm;
    specs[3].backbone = backbone();
    for (const auto& spec : specs) {
        SCOPED_TRACE(std::string(to_string(spec.backend)));
        const auto m = train_detector(spec, View::axial, train);
        const auto path = dir / (std::string(to_string(spec.backend)) + ".dwiqc");
        save_model(m, path);
        const auto l = load_model(path, spec.backend, View::axial);
        EXPECT_EQ(predict_proba(l, probes), predict_proba(m, probes));
        EXPECT_EQ(l.fingerprint, m.fingerprint);
        EXPECT_EQ(to_json(l.spec), to_json(m.spec));
        EXPECT_EQ(l.training_log, m.training_log);
        EXPECT_EQ(l.oob_accuracy, m.oob_accuracy);
        save_model(l, dir / "again.dwiqc");
        EXPECT_EQ(slurp(path), slurp(dir / "again.dwiqc"));
        const Backend other = spec.backend == Backend::gabor_rf ? Backend::lbp_rf : Backend::gabor_rf;
        EXPECT_THROW(load_model(path, other), Error);
        EXPECT_THROW(load_model(path, std::nullopt, View::sagittal), Error);
    }
}

TEST(Storage, TamperingDetected)
{
    TempDir dir;
    BackendSpec spec;
    spec.forest.n_trees = 5;
    const auto m = train_detector(spec, View::axial, toy_set(20, 12));
    save_model(m, dir / "m.dwiqc");
    const auto good = slurp(dir / "m.dwiqc");

    auto bad = good;
    bad[8] = 2;
    spit(dir / "v.dwiqc", bad);
    try {
        load_model(dir / "v.dwiqc");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
    }
    bad = good;
    bad[bad.size() - 1] ^= 1;
    spit(dir / "b.dwiqc", bad);
    EXPECT_THROW(load_model(dir / "b.dwiqc"), Error);
    spit(dir / "x.dwiqc", "not a model");
    EXPECT_THROW(load_model(dir / "x.dwiqc"), Error);
    EXPECT_THROW(load_model(dir / "none.dwiqc"), Error);
}

TEST(Storage, SwappedBackboneRejected)
{
    TempDir dir;
    BackendSpec spec;
    spec.backend = Backend::cnn_head;
    spec.backbone = make_reference_backbone(dir / "bb.safetensors", 1);
    spec.train.epochs = 2;
    const auto m = train_detector(spec, View::axial, toy_set(20, 13));
    save_model(m, dir / "m.dwiqc");
    make_reference_backbone(dir / "bb.safetensors", 2);
    EXPECT_THROW(load_model(dir / "m.dwiqc"), Error);
}

TEST(Spec, JsonRoundTripAndStrictness)
{
    BackendSpec s;
    s.backend = Backend::lbp_rf;
    s.forest.max_depth = 7;
    s.zernike.only = std::pair{4, 2};
    s.svm.C = 3.5;
    const auto j = to_json(s);
    EXPECT_EQ(to_json(backend_spec_from_json(j)), j);
    auto bad = j;
    bad["forest"]["n_tree"] = 5;
    EXPECT_THROW(backend_spec_from_json(bad), ConfigError);
    bad = j;
    bad["backend"] = "resnet";
    EXPECT_THROW(backend_spec_from_json(bad), ConfigError);
    bad = j;
    bad["train"]["epochs"] = "many";
    EXPECT_THROW(backend_spec_from_json(bad), ConfigError);
    EXPECT_THROW(backend_spec_from_json({{"backend", "cnn_head"}}), ConfigError);
}

TEST(Oracle, AnswersFromLabels)
{
    const auto s = toy_set(4, 14);
    std::vector<LabelRow> rows;
    for (const auto& x : s) rows.push_back({x.volume_id, x.view, x.gradient_index, x.slice_index, *x.label, ""});
    const auto o = OracleDetector::from_labels(View::axial, rows);
    EXPECT_EQ(predict_proba(o, s), (std::vector<double>{0, 1, 0, 1}));
    auto aug = s[1];
    aug.augmentation = 1;
    EXPECT_EQ(predict_proba(o, {aug}).front(), 1.0);
    EXPECT_THROW(predict_proba(o, toy_set(1, 1, View::sagittal)), Error);
}
