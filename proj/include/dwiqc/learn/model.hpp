#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dwiqc/core/error.hpp"
#include "dwiqc/core/hash.hpp"
#include "dwiqc/core/image.hpp"
#include "dwiqc/core/json_util.hpp"
#include "dwiqc/core/labels.hpp"
#include "dwiqc/core/parallel.hpp"
#include "dwiqc/core/rng.hpp"
#include "dwiqc/features/features.hpp"
#include "dwiqc/learn/backbone.hpp"
#include "dwiqc/learn/forest.hpp"
#include "dwiqc/learn/mlp.hpp"
#include "dwiqc/learn/pca.hpp"
#include "dwiqc/learn/svm.hpp"
#include "dwiqc/sim/artifact.hpp"

namespace dwiqc {

enum class Backend { cnn_head, gabor_rf, zernike_rf, lbp_rf, gabor_fc, cnn_pca_svm };

inline constexpr std::array<Backend, 6> all_backends{Backend::cnn_head, Backend::gabor_rf,  Backend::zernike_rf,
                                                     Backend::lbp_rf,   Backend::gabor_fc, Backend::cnn_pca_svm};

inline std::string_view to_string(Backend b)
{
    switch (b) {
    case Backend::cnn_head: return "cnn_head";
    case Backend::gabor_rf: return "gabor_rf";
    case Backend::zernike_rf: return "zernike_rf";
    case Backend::lbp_rf: return "lbp_rf";
    case Backend::gabor_fc: return "gabor_fc";
    case Backend::cnn_pca_svm: return "cnn_pca_svm";
    }
    return "?";
}

inline Backend parse_backend(std::string_view s)
{
    for (auto b : all_backends)
        if (to_string(b) == s) return b;
    throw ConfigError("unknown backend '" + std::string(s) + "'");
}

inline bool uses_backbone(Backend b) { return b == Backend::cnn_head || b == Backend::cnn_pca_svm; }

/// Everything needed to build and train one detector.
struct BackendSpec {
    Backend backend = Backend::gabor_rf;
    FeatureBackbone backbone;
    GaborConfig gabor;
    ZernikeConfig zernike;
    LbpConfig lbp;
    HeadConfig head;
    TrainConfig train;
    ForestConfig forest;
    PcaConfig pca;
    SvmConfig svm;

    FeatureConfig feature_config() const
    {
        FeatureConfig f{Descriptor::gabor, gabor, zernike, lbp};
        if (backend == Backend::zernike_rf) f.descriptor = Descriptor::zernike;
        if (backend == Backend::lbp_rf) f.descriptor = Descriptor::lbp;
        return f;
    }

    void validate() const
    {
        head.validate();
        train.validate();
        forest.validate();
        pca.validate();
        svm.validate();
        gabor.validate();
        zernike.validate();
        lbp.validate();
        if (uses_backbone(backend) && backbone.weights_path.empty()) {
            throw ConfigError("backend " + std::string(to_string(backend)) + " needs backbone.weights_path");
        }
    }
};

inline nlohmann::json to_json(const BackendSpec& s)
{
    nlohmann::json zern{{"max_order", s.zernike.max_order}, {"only", nullptr}};
    if (s.zernike.only) zern["only"] = {s.zernike.only->first, s.zernike.only->second};
    return {
        {"backend", to_string(s.backend)},
        {"backbone",
         {{"name", s.backbone.name},
          {"weights_path", s.backbone.weights_path.string()},
          {"output_dim", s.backbone.output_dim},
          {"weights_digest", s.backbone.weights_digest}}},
        {"gabor",
         {{"n_scales", s.gabor.n_scales},
          {"n_orientations", s.gabor.n_orientations},
          {"base_wavelength", s.gabor.base_wavelength},
          {"scale_factor", s.gabor.scale_factor},
          {"sigma_ratio", s.gabor.sigma_ratio},
          {"zero_dc", s.gabor.zero_dc}}},
        {"zernike", zern},
        {"lbp", {{"neighbors", s.lbp.neighbors}, {"radius", s.lbp.radius}}},
        {"head", {{"hidden_units", s.head.hidden_units}, {"dropout_rate", s.head.dropout_rate}}},
        {"train",
         {{"epochs", s.train.epochs},
          {"learning_rate", s.train.learning_rate},
          {"rho", s.train.rho},
          {"epsilon", s.train.epsilon},
          {"batch_size", s.train.batch_size},
          {"class_balance", to_string(s.train.class_balance)},
          {"seed", s.train.seed}}},
        {"forest",
         {{"n_trees", s.forest.n_trees},
          {"max_depth", s.forest.max_depth ? nlohmann::json(*s.forest.max_depth) : nlohmann::json(nullptr)},
          {"min_samples_split", s.forest.min_samples_split},
          {"max_features", s.forest.max_features},
          {"bootstrap", s.forest.bootstrap},
          {"seed", s.forest.seed}}},
        {"pca", {{"variance_target", s.pca.variance_target}}},
        {"svm",
         {{"kernel", to_string(s.svm.kernel)},
          {"C", s.svm.C},
          {"gamma", s.svm.gamma},
          {"tolerance", s.svm.tolerance},
          {"cache_mb", s.svm.cache_mb}}},
    };
}

/// Strict parse: unknown keys are rejected, absent keys keep defaults.
inline BackendSpec backend_spec_from_json(const nlohmann::json& j, const std::string& ctx = "backend")
{
    BackendSpec s;
    JsonSection top(j, ctx);
    std::string name = std::string(to_string(s.backend));
    top.read("backend", name);
    s.backend = parse_backend(name);
    if (const auto* b = top.section("backbone")) {
        JsonSection sec(*b, top.path("backbone"));
        std::string path;
        sec.read("name", s.backbone.name);
        if (sec.read("weights_path", path)) s.backbone.weights_path = path;
        sec.read("output_dim", s.backbone.output_dim);
        sec.read("weights_digest", s.backbone.weights_digest);
        sec.finish();
    }
    if (const auto* g = top.section("gabor")) {
        JsonSection sec(*g, top.path("gabor"));
        sec.read("n_scales", s.gabor.n_scales);
        sec.read("n_orientations", s.gabor.n_orientations);
        sec.read("base_wavelength", s.gabor.base_wavelength);
        sec.read("scale_factor", s.gabor.scale_factor);
        sec.read("sigma_ratio", s.gabor.sigma_ratio);
        sec.read("zero_dc", s.gabor.zero_dc);
        sec.finish();
    }
    if (const auto* z = top.section("zernike")) {
        JsonSection sec(*z, top.path("zernike"));
        sec.read("max_order", s.zernike.max_order);
        if (const auto* only = sec.section("only"); only && !only->is_null()) {
            if (!only->is_array() || only->size() != 2) throw ConfigError(sec.path("only") + ": expected [n, m]");
            s.zernike.only = std::pair{(*only)[0].get<int>(), (*only)[1].get<int>()};
        }
        sec.finish();
    }
    if (const auto* l = top.section("lbp")) {
        JsonSection sec(*l, top.path("lbp"));
        sec.read("neighbors", s.lbp.neighbors);
        sec.read("radius", s.lbp.radius);
        sec.finish();
    }
    if (const auto* h = top.section("head")) {
        JsonSection sec(*h, top.path("head"));
        sec.read("hidden_units", s.head.hidden_units);
        sec.read("dropout_rate", s.head.dropout_rate);
        sec.finish();
    }
    if (const auto* t = top.section("train")) {
        JsonSection sec(*t, top.path("train"));
        sec.read("epochs", s.train.epochs);
        sec.read("learning_rate", s.train.learning_rate);
        sec.read("rho", s.train.rho);
        sec.read("epsilon", s.train.epsilon);
        sec.read("batch_size", s.train.batch_size);
        std::string balance = std::string(to_string(s.train.class_balance));
        sec.read("class_balance", balance);
        s.train.class_balance = parse_class_balance(balance);
        sec.read("seed", s.train.seed);
        sec.finish();
    }
    if (const auto* f = top.section("forest")) {
        JsonSection sec(*f, top.path("forest"));
        sec.read("n_trees", s.forest.n_trees);
        if (const auto* d = sec.section("max_depth"); d && !d->is_null()) {
            if (!d->is_number_integer()) throw ConfigError(sec.path("max_depth") + ": expected an integer or null");
            s.forest.max_depth = d->get<int>();
        }
        sec.read("min_samples_split", s.forest.min_samples_split);
        sec.read("max_features", s.forest.max_features);
        sec.read("bootstrap", s.forest.bootstrap);
        sec.read("seed", s.forest.seed);
        sec.finish();
    }
    if (const auto* p = top.section("pca")) {
        JsonSection sec(*p, top.path("pca"));
        sec.read("variance_target", s.pca.variance_target);
        sec.finish();
    }
    if (const auto* v = top.section("svm")) {
        JsonSection sec(*v, top.path("svm"));
        std::string kernel = std::string(to_string(s.svm.kernel));
        sec.read("kernel", kernel);
        s.svm.kernel = parse_svm_kernel(kernel);
        sec.read("C", s.svm.C);
        sec.read("gamma", s.svm.gamma);
        sec.read("tolerance", s.svm.tolerance);
        sec.read("cache_mb", s.svm.cache_mb);
        sec.finish();
    }
    top.finish();
    s.validate();
    return s;
}

/// Maps slices to feature rows: a classic descriptor or a frozen backbone.
class Featurizer {
public:
    static std::shared_ptr<const Featurizer> make(const BackendSpec& spec)
    {
        auto f = std::shared_ptr<Featurizer>(new Featurizer());
        if (uses_backbone(spec.backend)) {
            f->backbone_ = std::make_shared<Backbone>(load_backbone(spec.backbone));
        } else {
            f->extractor_ = std::make_shared<FeatureExtractor>(spec.feature_config());
        }
        return f;
    }

    std::size_t dim() const { return backbone_ ? backbone_->output_dim() : extractor_->dim(); }
    const Backbone* backbone() const { return backbone_.get(); }

    std::vector<double> features(const Image& img) const
    {
        return backbone_ ? backbone_->features(img) : extractor_->extract(img);
    }

    std::vector<std::vector<double>> features(const std::vector<SliceSample>& samples) const
    {
        std::vector<std::vector<double>> out(samples.size());
        parallel_for(samples.size(), [&](std::size_t i) { out[i] = features(samples[i].pixels); });
        return out;
    }

private:
    Featurizer() = default;
    std::shared_ptr<const Backbone> backbone_;
    std::shared_ptr<const FeatureExtractor> extractor_;
};

struct PcaSvm {
    Pca pca;
    Svm svm;
};

using Classifier = std::variant<MlpHead, RandomForest, PcaSvm>;

struct Fingerprint {
    std::string config_hash;
    std::string data_hash;
    std::uint64_t seed = 0;
    std::string pooling;  // backbone feature pooling; empty for classic descriptors
    std::string backbone_digest;

    friend bool operator==(const Fingerprint&, const Fingerprint&) = default;
};

inline nlohmann::json to_json(const Fingerprint& f)
{
    return {{"config_hash", f.config_hash},
            {"data_hash", f.data_hash},
            {"seed", f.seed},
            {"pooling", f.pooling},
            {"backbone_digest", f.backbone_digest}};
}

inline Fingerprint fingerprint_from_json(const nlohmann::json& j)
{
    return {j.at("config_hash").get<std::string>(), j.at("data_hash").get<std::string>(), j.at("seed").get<std::uint64_t>(),
            j.at("pooling").get<std::string>(), j.at("backbone_digest").get<std::string>()};
}

/// A trained view-specific slice classifier.
struct DetectorModel {
    BackendSpec spec;
    View view = View::axial;
    std::vector<ArtifactKind> artifacts_covered;
    Fingerprint fingerprint;
    Classifier classifier;
    std::vector<std::string> finetune_sampled;
    std::vector<double> training_log;
    std::optional<double> oob_accuracy;
    std::shared_ptr<const Featurizer> featurizer;

    std::size_t pca_components() const
    {
        const auto* p = std::get_if<PcaSvm>(&classifier);
        return p ? p->pca.components() : 0;
    }
};

inline std::vector<ArtifactKind> artifacts_for_view(View v)
{
    std::vector<ArtifactKind> out;
    for (auto k : all_artifact_kinds)
        if (labeled_view(k) == v) out.push_back(k);
    return out;
}

/// P(artifactual) for feature rows already produced by the model's featurizer.
inline std::vector<double> predict_features(const DetectorModel& m, const std::vector<std::vector<double>>& X)
{
    std::vector<double> p = std::visit(
        [&](const auto& c) {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, PcaSvm>) {
                std::vector<double> out(X.size());
                for (std::size_t i = 0; i < X.size(); ++i) out[i] = c.svm.predict_one(c.pca.transform(X[i]));
                return out;
            } else {
                return c.predict_proba(X);
            }
        },
        m.classifier);
    for (double& v : p) v = std::clamp(v, 0.0, 1.0);
    return p;
}

inline View view_of(const DetectorModel& m) { return m.view; }

inline void check_view(View model_view, const std::vector<SliceSample>& samples)
{
    for (const auto& s : samples) {
        if (s.view != model_view) {
            throw Error("view mismatch: " + std::string(to_string(s.view)) + " slice " + s.key() + " given to a " +
                        std::string(to_string(model_view)) + " detector");
        }
    }
}

inline std::vector<double> predict_proba(const DetectorModel& m, const std::vector<SliceSample>& samples)
{
    check_view(m.view, samples);
    if (!m.featurizer) throw Error("detector has no featurizer");
    return predict_features(m, m.featurizer->features(samples));
}

/// Slice decision rule: artifactual iff probability strictly above 0.5.
inline bool slice_flag(double prob) { return prob > 0.5; }

struct SlicePrediction {
    double prob_artifact = 0.0;
    bool flag = false;
};

inline SlicePrediction predict_slice(const DetectorModel& m, const SliceSample& s)
{
    const double p = predict_proba(m, std::vector<SliceSample>{s}).front();
    return {p, slice_flag(p)};
}

inline nlohmann::json fingerprint_json(const DetectorModel& m)
{
    auto j = to_json(m.fingerprint);
    j["backend"] = to_string(m.spec.backend);
    return j;
}

namespace model_detail {

inline std::string data_hash(const std::vector<std::string>& keys, const std::vector<int>& y,
                             const std::vector<std::vector<double>>& X)
{
    Sha256 h;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        h.update(keys[i]).update("|").update(std::to_string(y[i])).update("|");
        h.update(X[i].data(), X[i].size() * sizeof(double));
    }
    return h.hex();
}

inline std::vector<std::size_t> key_order(const std::vector<std::string>& keys)
{
    std::vector<std::size_t> order(keys.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
    for (std::size_t i = 1; i < order.size(); ++i)
        if (keys[order[i]] == keys[order[i - 1]]) throw Error("duplicate training slice '" + keys[order[i]] + "'");
    return order;
}

inline void fit_classifier(DetectorModel& m, const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                           const TrainConfig& train, bool warm)
{
    m.oob_accuracy.reset();
    switch (m.spec.backend) {
    case Backend::cnn_head:
    case Backend::gabor_fc: {
        MlpHead head = warm ? std::get<MlpHead>(m.classifier) : MlpHead{};
        m.training_log = head.fit(X, y, m.spec.head, train, warm);
        m.classifier = std::move(head);
        break;
    }
    case Backend::gabor_rf:
    case Backend::zernike_rf:
    case Backend::lbp_rf: {
        RandomForest rf;
        rf.fit(X, y, m.spec.forest);
        m.oob_accuracy = rf.oob_accuracy();
        m.training_log.clear();
        m.classifier = std::move(rf);
        break;
    }
    case Backend::cnn_pca_svm: {
        std::size_t pos = 0;
        for (int v : y) pos += static_cast<std::size_t>(v);
        if (pos < 2 || y.size() - pos < 2) throw Error("cnn_pca_svm: need at least two samples per class");
        PcaSvm ps;
        ps.pca.fit(X, m.spec.pca);
        std::vector<std::vector<double>> Z(X.size());
        for (std::size_t i = 0; i < X.size(); ++i) Z[i] = ps.pca.transform(X[i]);
        ps.svm.fit(Z, y, m.spec.svm);
        m.training_log.clear();
        m.classifier = std::move(ps);
        break;
    }
    }
}

inline std::uint64_t effective_seed(const BackendSpec& s)
{
    switch (s.backend) {
    case Backend::gabor_rf:
    case Backend::zernike_rf:
    case Backend::lbp_rf: return s.forest.seed;
    default: return s.train.seed;
    }
}

}  // namespace model_detail

/// Trains on precomputed feature rows. Rows are canonicalized by key first,
/// so the result does not depend on input order.
inline DetectorModel fit_detector(const BackendSpec& spec, View view, std::shared_ptr<const Featurizer> featurizer,
                                  const std::vector<std::string>& keys, const std::vector<std::vector<double>>& X,
                                  const std::vector<int>& y)
{
    spec.validate();
    if (keys.size() != X.size() || X.size() != y.size()) throw Error("training keys, features and labels differ in length");
    if (X.empty()) throw Error("no training samples");
    const auto order = model_detail::key_order(keys);
    std::vector<std::string> k2;
    std::vector<std::vector<double>> X2;
    std::vector<int> y2;
    for (auto i : order) {
        k2.push_back(keys[i]);
        X2.push_back(X[i]);
        y2.push_back(y[i]);
    }
    std::size_t pos = 0;
    for (int v : y2) pos += static_cast<std::size_t>(v == 1);
    if (pos == 0 || pos == y2.size()) throw Error("training data has a single class");

    DetectorModel m;
    m.spec = spec;
    if (uses_backbone(spec.backend) && !spec.backbone.weights_path.empty()) {
        m.spec.backbone.weights_path = std::filesystem::absolute(spec.backbone.weights_path);
    }
    m.view = view;
    m.artifacts_covered = artifacts_for_view(view);
    m.featurizer = std::move(featurizer);
    m.fingerprint.config_hash = sha256_hex(to_json(m.spec).dump() + "|" + std::string(to_string(view)));
    m.fingerprint.data_hash = model_detail::data_hash(k2, y2, X2);
    m.fingerprint.seed = model_detail::effective_seed(spec);
    if (const auto* bb = m.featurizer ? m.featurizer->backbone() : nullptr) {
        m.fingerprint.pooling = bb->pooling();
        m.fingerprint.backbone_digest = bb->weights_digest();
    }
    model_detail::fit_classifier(m, X2, y2, spec.train, false);
    return m;
}

inline std::vector<int> label_vector(const std::vector<SliceSample>& samples)
{
    std::vector<int> y;
    y.reserve(samples.size());
    for (const auto& s : samples) {
        if (!s.label) throw Error("slice " + s.key() + " has no label");
        y.push_back(to_int(*s.label));
    }
    return y;
}

inline std::vector<std::string> key_vector(const std::vector<SliceSample>& samples)
{
    std::vector<std::string> k;
    k.reserve(samples.size());
    for (const auto& s : samples) k.push_back(s.key());
    return k;
}

/// Featurizes labeled slices of one view and trains the spec's classifier.
inline DetectorModel train_detector(const BackendSpec& spec, View view, const std::vector<SliceSample>& samples)
{
    spec.validate();
    check_view(view, samples);
    const auto y = label_vector(samples);
    auto featurizer = Featurizer::make(spec);
    const auto X = featurizer->features(samples);
    return fit_detector(spec, view, featurizer, key_vector(samples), X, y);
}

inline DetectorModel train_cnn_head(const FeatureBackbone& backbone, const std::vector<SliceSample>& samples,
                                    const HeadConfig& head, const TrainConfig& train, View view = View::axial)
{
    BackendSpec spec;
    spec.backend = Backend::cnn_head;
    spec.backbone = backbone;
    spec.head = head;
    spec.train = train;
    return train_detector(spec, view, samples);
}

inline DetectorModel train_gabor_fc(const std::vector<SliceSample>& samples, const HeadConfig& head,
                                    const TrainConfig& train, View view = View::axial, const GaborConfig& gabor = {})
{
    BackendSpec spec;
    spec.backend = Backend::gabor_fc;
    spec.gabor = gabor;
    spec.head = head;
    spec.train = train;
    return train_detector(spec, view, samples);
}

inline DetectorModel train_cnn_pca_svm(const FeatureBackbone& backbone, const std::vector<SliceSample>& samples,
                                       const PcaConfig& pca, const SvmConfig& svm, View view = View::axial)
{
    BackendSpec spec;
    spec.backend = Backend::cnn_pca_svm;
    spec.backbone = backbone;
    spec.pca = pca;
    spec.svm = svm;
    return train_detector(spec, view, samples);
}

/// Random forest over a descriptor's feature matrix (keys identify rows).
inline DetectorModel train_feature_rf(Descriptor descriptor, const std::vector<std::string>& keys,
                                      const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                                      const ForestConfig& rf, View view = View::axial)
{
    BackendSpec spec;
    spec.backend = descriptor == Descriptor::gabor ? Backend::gabor_rf
                   : descriptor == Descriptor::zernike ? Backend::zernike_rf
                                                       : Backend::lbp_rf;
    spec.forest = rf;
    return fit_detector(spec, view, Featurizer::make(spec), keys, X, y);
}

/// Class-stratified draw of round(fraction * n) indices; per-class quotas by
/// largest remainder. Returned indices are ascending.
inline std::vector<std::size_t> stratified_subsample(const std::vector<int>& labels, double fraction,
                                                     std::uint64_t seed)
{
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fraction must be in (0, 1]");
    const std::size_t n = labels.size();
    const auto m = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (m < 1) throw Error("fraction " + std::to_string(fraction) + " of " + std::to_string(n) + " samples yields no sample");
    std::vector<std::size_t> idx[2];
    for (std::size_t i = 0; i < n; ++i) idx[labels[i] == 1 ? 1 : 0].push_back(i);
    std::size_t quota[2];
    double rem[2];
    std::size_t assigned = 0;
    for (int c = 0; c < 2; ++c) {
        const double exact = static_cast<double>(m) * static_cast<double>(idx[c].size()) / static_cast<double>(n);
        quota[c] = static_cast<std::size_t>(std::floor(exact));
        rem[c] = exact - static_cast<double>(quota[c]);
        assigned += quota[c];
    }
    while (assigned < m) {
        const int c = rem[1] > rem[0] ? 1 : 0;
        ++quota[c];
        rem[c] = -1.0;
        ++assigned;
    }
    Rng rng(stream_seed(seed, "finetune-subsample"));
    std::vector<std::size_t> out;
    for (int c = 0; c < 2; ++c) {
        auto pool = idx[c];
        rng.shuffle(pool);
        out.insert(out.end(), pool.begin(), pool.begin() + static_cast<long>(std::min(quota[c], pool.size())));
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Labeled feature rows with their slice keys.
struct FeatureRows {
    std::vector<std::string> keys;
    std::vector<std::vector<double>> X;
    std::vector<int> y;

    std::size_t size() const { return keys.size(); }
    void append(const FeatureRows& o)
    {
        keys.insert(keys.end(), o.keys.begin(), o.keys.end());
        X.insert(X.end(), o.X.begin(), o.X.end());
        y.insert(y.end(), o.y.begin(), o.y.end());
    }
    FeatureRows subset(const std::vector<std::size_t>& idx) const
    {
        FeatureRows r;
        for (auto i : idx) {
            r.keys.push_back(keys[i]);
            r.X.push_back(X[i]);
            r.y.push_back(y[i]);
        }
        return r;
    }
};

inline FeatureRows featurize(const Featurizer& f, const std::vector<SliceSample>& samples)
{
    return {key_vector(samples), f.features(samples), label_vector(samples)};
}

/// Fine-tunes on base rows plus a stratified fraction of the new rows (drawn
/// after sorting the new rows by key). Gradient heads warm-start from the
/// current weights; forests and PCA+SVM are refit on the union. The drawn
/// keys are recorded in finetune_sampled.
inline DetectorModel finetune_rows(const DetectorModel& model, const FeatureRows& base, const FeatureRows& fresh,
                                   double fraction, const TrainConfig& train)
{
    train.validate();
    const auto order = model_detail::key_order(fresh.keys);
    const FeatureRows sorted = fresh.subset(order);
    const auto picked = stratified_subsample(sorted.y, fraction, train.seed);
    const FeatureRows sampled = sorted.subset(picked);

    FeatureRows all = base;
    all.append(sampled);
    const auto all_order = model_detail::key_order(all.keys);
    const FeatureRows canon = all.subset(all_order);

    DetectorModel m = model;
    m.spec.train = train;
    m.fingerprint.config_hash = sha256_hex(to_json(m.spec).dump() + "|" + std::string(to_string(m.view)) + "|finetune");
    m.fingerprint.data_hash = model_detail::data_hash(canon.keys, canon.y, canon.X);
    const bool warm = m.spec.backend == Backend::cnn_head || m.spec.backend == Backend::gabor_fc;
    model_detail::fit_classifier(m, canon.X, canon.y, train, warm);
    m.finetune_sampled = sampled.keys;
    return m;
}

inline DetectorModel finetune(const DetectorModel& model, const std::vector<SliceSample>& base_samples,
                              const std::vector<SliceSample>& new_samples, double fraction, const TrainConfig& train)
{
    check_view(model.view, base_samples);
    check_view(model.view, new_samples);
    if (!model.featurizer) throw Error("detector has no featurizer");
    return finetune_rows(model, featurize(*model.featurizer, base_samples), featurize(*model.featurizer, new_samples),
                         fraction, train);
}

// ------------------------------------------------------------------ storage

inline constexpr std::uint32_t model_format_version = 1;

namespace model_detail {

inline constexpr char magic[8] = {'D', 'W', 'I', 'Q', 'C', 'M', 'O', 'D'};

inline ParamSet classifier_state(const Classifier& c)
{
    return std::visit(
        [](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, PcaSvm>) {
                ParamSet p = v.pca.state();
                const ParamSet s = v.svm.state();
                p.arrays.insert(p.arrays.end(), s.arrays.begin(), s.arrays.end());
                return p;
            } else {
                return v.state();
            }
        },
        c);
}

inline Classifier classifier_from_state(Backend b, const ParamSet& p)
{
    switch (b) {
    case Backend::cnn_head:
    case Backend::gabor_fc: return MlpHead::from_state(p);
    case Backend::cnn_pca_svm: return PcaSvm{Pca::from_state(p), Svm::from_state(p)};
    default: return RandomForest::from_state(p);
    }
}

}  // namespace model_detail

/// Single-file container: magic "DWIQCMOD", u32 format version, u64 header
/// length, JSON header, then the parameter arrays as little-endian doubles.
/// The header carries the blob's SHA-256. No timestamps: equal models give
/// equal bytes.
inline void save_model(const DetectorModel& m, const std::filesystem::path& path)
{
    const ParamSet state = model_detail::classifier_state(m.classifier);
    std::string blob;
    nlohmann::json arrays = nlohmann::json::array();
    for (const auto& [name, values] : state.arrays) {
        arrays.push_back({{"name", name}, {"length", values.size()}});
        blob.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
    }
    std::vector<std::string> covered;
    for (auto k : m.artifacts_covered) covered.emplace_back(to_string(k));
    nlohmann::json header{{"backend", to_string(m.spec.backend)},
                          {"view", to_string(m.view)},
                          {"artifacts_covered", covered},
                          {"fingerprint", to_json(m.fingerprint)},
                          {"config", to_json(m.spec)},
                          {"finetune_sampled", m.finetune_sampled},
                          {"training_log", m.training_log},
                          {"oob_accuracy", m.oob_accuracy ? nlohmann::json(*m.oob_accuracy) : nlohmann::json(nullptr)},
                          {"arrays", arrays},
                          {"blob_sha256", sha256_hex(blob)}};
    const std::string text = header.dump();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path).concat(".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write model '" + path.string() + "'");
        out.write(model_detail::magic, 8);
        const std::uint32_t version = model_format_version;
        const std::uint64_t len = text.size();
        out.write(reinterpret_cast<const char*>(&version), 4);
        out.write(reinterpret_cast<const char*>(&len), 8);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        if (!out) throw Error("failed writing model '" + path.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

/// Loads a model, optionally insisting on a backend and view. The backbone
/// asset of CNN backends is reloaded and checked against its recorded digest.
inline DetectorModel load_model(const std::filesystem::path& path, std::optional<Backend> expected_backend = {},
                                std::optional<View> expected_view = {})
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open model '" + path.string() + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), {});
    if (bytes.size() < 20 || std::memcmp(bytes.data(), model_detail::magic, 8) != 0) {
        throw Error("'" + path.string() + "' is not a detector model file");
    }
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    std::memcpy(&version, bytes.data() + 8, 4);
    std::memcpy(&len, bytes.data() + 12, 8);
    if (version != model_format_version) {
        throw Error("model format version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(model_format_version) + ")");
    }
    if (len > bytes.size() - 20) throw Error("model header is truncated");
    DetectorModel m;
    ParamSet state;
    try {
        const auto header = nlohmann::json::parse(bytes.substr(20, len));
        const std::string blob = bytes.substr(20 + len);
        if (sha256_hex(blob) != header.at("blob_sha256").get<std::string>()) {
            throw Error("model parameter digest mismatch in '" + path.string() + "'");
        }
        m.spec = backend_spec_from_json(header.at("config"), "model.config");
        if (parse_backend(header.at("backend").get<std::string>()) != m.spec.backend) {
            throw Error("model header backend disagrees with its config");
        }
        m.view = parse_view(header.at("view").get<std::string>());
        for (const auto& k : header.at("artifacts_covered")) m.artifacts_covered.push_back(parse_artifact_kind(k.get<std::string>()));
        m.fingerprint = fingerprint_from_json(header.at("fingerprint"));
        m.finetune_sampled = header.at("finetune_sampled").get<std::vector<std::string>>();
        m.training_log = header.at("training_log").get<std::vector<double>>();
        if (!header.at("oob_accuracy").is_null()) m.oob_accuracy = header["oob_accuracy"].get<double>();
        std::size_t offset = 0;
        for (const auto& a : header.at("arrays")) {
            const auto n = a.at("length").get<std::size_t>();
            if ((offset + n) * sizeof(double) > blob.size()) throw Error("model parameter blob is truncated");
            std::vector<double> v(n);
            std::memcpy(v.data(), blob.data() + offset * sizeof(double), n * sizeof(double));
            offset += n;
            state.add(a.at("name").get<std::string>(), std::move(v));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("model '" + path.string() + "' has a malformed header: " + e.what());
    }
    if (expected_backend && *expected_backend != m.spec.backend) {
        throw Error("model '" + path.string() + "' holds backend " + std::string(to_string(m.spec.backend)) +
                    ", expected " + std::string(to_string(*expected_backend)));
    }
    if (expected_view && *expected_view != m.view) {
        throw Error("model '" + path.string() + "' is a " + std::string(to_string(m.view)) + " detector, expected " +
                    std::string(to_string(*expected_view)));
    }
    m.classifier = model_detail::classifier_from_state(m.spec.backend, state);
    m.featurizer = Featurizer::make(m.spec);
    if (const auto* bb = m.featurizer->backbone(); bb && bb->weights_digest() != m.fingerprint.backbone_digest) {
        throw Error("backbone weights digest differs from the one the model was trained with");
    }
    return m;
}

// ------------------------------------------------------------------ oracle

/// Test detector that answers from ground truth: probability 1 for slices
/// whose source key is listed as artifactual, else 0.
struct OracleDetector {
    View view = View::axial;
    std::set<std::string> positives;

    static OracleDetector from_labels(View v, const std::vector<LabelRow>& rows)
    {
        OracleDetector o{v, {}};
        for (const auto& r : rows) {
            if (r.view == v && r.label == Label::artifactual) {
                o.positives.insert(r.key());
            }
        }
        return o;
    }
};

inline View view_of(const OracleDetector& o) { return o.view; }

inline std::vector<double> predict_proba(const OracleDetector& o, const std::vector<SliceSample>& samples)
{
    check_view(o.view, samples);
    std::vector<double> p;
    for (const auto& s : samples) p.push_back(o.positives.count(s.source_key()) ? 1.0 : 0.0);
    return p;
}

inline nlohmann::json fingerprint_json(const OracleDetector& o)
{
    return {{"backend", "oracle"}, {"positives", o.positives.size()}};
}

}  // namespace dwiqc
