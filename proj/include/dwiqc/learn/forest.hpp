#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "dwiqc/core/error.hpp"
#include "dwiqc/core/parallel.hpp"
#include "dwiqc/core/rng.hpp"
#include "dwiqc/learn/params.hpp"

namespace dwiqc {

struct ForestConfig {
    int n_trees = 100;
    std::optional<int> max_depth;  // unlimited when empty
    int min_samples_split = 2;
    /// Features tried per split; 0 means floor(sqrt(d)).
    int max_features = 0;
    bool bootstrap = true;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (n_trees < 1) throw ConfigError("forest: n_trees must be >= 1");
        if (max_depth && *max_depth < 1) throw ConfigError("forest: max_depth must be >= 1");
        if (min_samples_split < 2) throw ConfigError("forest: min_samples_split must be >= 2");
        if (max_features < 0) throw ConfigError("forest: max_features must be >= 0");
    }

    friend bool operator==(const ForestConfig&, const ForestConfig&) = default;
};

/// Binary CART tree (Gini). Leaves hold P(class 1) of their training samples.
struct DecisionTree {
    struct Node {
        int feature = -1;  // -1 marks a leaf
        double threshold = 0.0;
        int left = -1;
        int right = -1;
        double prob = 0.0;
    };
    std::vector<Node> nodes;

    double predict(const std::vector<double>& x) const
    {
        int i = 0;
        while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
            const auto& n = nodes[static_cast<std::size_t>(i)];
            i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
        }
        return nodes[static_cast<std::size_t>(i)].prob;
    }
};

namespace forest_detail {

struct Builder {
    const std::vector<std::vector<double>>& X;
    const std::vector<int>& y;
    const ForestConfig& cfg;
    std::size_t mtry;
    Rng& rng;
    DecisionTree tree;

    int build(std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi, int depth)
    {
        const std::size_t n = hi - lo;
        double pos = 0.0;
        for (std::size_t k = lo; k < hi; ++k) pos += y[idx[k]];
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({-1, 0.0, -1, -1, pos / static_cast<double>(n)});
        if (pos == 0.0 || pos == static_cast<double>(n) || n < static_cast<std::size_t>(cfg.min_samples_split) ||
            (cfg.max_depth && depth >= *cfg.max_depth)) {
            return id;
        }

        const std::size_t d = X[idx[lo]].size();
        std::vector<std::size_t> features(d);
        std::iota(features.begin(), features.end(), 0);
        // Partial Fisher-Yates: first mtry entries are a uniform draw.
        for (std::size_t i = 0; i < mtry; ++i) std::swap(features[i], features[i + rng.index(d - i)]);

        const double parent_gini = 1.0 - std::pow(pos / n, 2) - std::pow(1.0 - pos / n, 2);
        double best_gain = 1e-12;
        int best_feature = -1;
        double best_threshold = 0.0;
        std::vector<std::pair<double, int>> column(n);
        for (std::size_t f = 0; f < mtry; ++f) {
            const std::size_t feat = features[f];
            for (std::size_t k = 0; k < n; ++k) column[k] = {X[idx[lo + k]][feat], y[idx[lo + k]]};
            std::sort(column.begin(), column.end());
            double left_pos = 0.0;
            for (std::size_t k = 1; k < n; ++k) {
                left_pos += column[k - 1].second;
                if (column[k].first <= column[k - 1].first) continue;
                const double nl = static_cast<double>(k), nr = static_cast<double>(n - k);
                const double pl = left_pos / nl, pr = (pos - left_pos) / nr;
                const double gini = (nl * (2.0 * pl * (1.0 - pl)) + nr * (2.0 * pr * (1.0 - pr))) / static_cast<double>(n);
                const double gain = parent_gini - gini;
                if (gain > best_gain) {
                    best_gain = gain;
                    best_feature = static_cast<int>(feat);
                    best_threshold = column[k - 1].first + (column[k].first - column[k - 1].first) / 2.0;
                    if (!(best_threshold < column[k].first)) best_threshold = column[k - 1].first;
                }
            }
        }
        if (best_feature < 0) return id;

        const auto mid = std::stable_partition(idx.begin() + static_cast<long>(lo), idx.begin() + static_cast<long>(hi),
                                               [&](std::size_t i) { return X[i][static_cast<std::size_t>(best_feature)] <= best_threshold; });
        const std::size_t split = static_cast<std::size_t>(mid - idx.begin());
        const int left = build(idx, lo, split, depth + 1);
        const int right = build(idx, split, hi, depth + 1);
        auto& node = tree.nodes[static_cast<std::size_t>(id)];
        node.feature = best_feature;
        node.threshold = best_threshold;
        node.left = left;
        node.right = right;
        return id;
    }
};

}  // namespace forest_detail

/// Bagged Gini trees with per-split feature subsampling. Tree t draws from
/// the stream (seed, t), so training is deterministic and parallel.
class RandomForest {
public:
    void fit(const std::vector<std::vector<double>>& X, const std::vector<int>& y, const ForestConfig& cfg)
    {
        cfg.validate();
        if (X.empty() || X.size() != y.size()) throw Error("forest: feature/label count mismatch");
        std::size_t pos = 0;
        for (int v : y) {
            if (v != 0 && v != 1) throw Error("forest: labels must be 0 or 1");
            pos += static_cast<std::size_t>(v);
        }
        if (pos == 0 || pos == y.size()) throw Error("forest: training data has a single class");
        const std::size_t d = X.front().size();
        for (const auto& row : X)
            if (row.size() != d) throw Error("forest: ragged feature rows");
        dim_ = d;
        const std::size_t mtry = std::clamp<std::size_t>(
            cfg.max_features > 0 ? static_cast<std::size_t>(cfg.max_features)
                                 : static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(d)))),
            1, d);

        const std::size_t n = X.size();
        trees_.assign(static_cast<std::size_t>(cfg.n_trees), {});
        std::vector<std::vector<char>> in_bag(trees_.size(), std::vector<char>(n, 0));
        parallel_for(trees_.size(), [&](std::size_t t) {
            Rng rng(stream_seed(cfg.seed, t, 0x7265));
            std::vector<std::size_t> idx(n);
            if (cfg.bootstrap) {
                for (auto& i : idx) i = rng.index(n);
            } else {
                std::iota(idx.begin(), idx.end(), 0);
            }
            std::sort(idx.begin(), idx.end());
            for (auto i : idx) in_bag[t][i] = 1;
            forest_detail::Builder b{X, y, cfg, mtry, rng, {}};
            b.build(idx, 0, n, 0);
            trees_[t] = std::move(b.tree);
        });

        std::size_t oob_n = 0, oob_correct = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            std::size_t votes = 0;
            for (std::size_t t = 0; t < trees_.size(); ++t) {
                if (in_bag[t][i]) continue;
                s += trees_[t].predict(X[i]);
                ++votes;
            }
            if (votes == 0) continue;
            ++oob_n;
            oob_correct += ((s / static_cast<double>(votes)) > 0.5) == (y[i] == 1);
        }
        oob_accuracy_ = oob_n ? std::optional<double>(static_cast<double>(oob_correct) / static_cast<double>(oob_n)) : std::nullopt;
    }

    /// Mean of the trees' leaf probabilities.
    double predict_one(const std::vector<double>& x) const
    {
        if (x.size() != dim_) throw Error("forest: input dimension mismatch");
        double s = 0.0;
        for (const auto& t : trees_) s += t.predict(x);
        return s / static_cast<double>(trees_.size());
    }

    std::vector<double> predict_proba(const std::vector<std::vector<double>>& X) const
    {
        std::vector<double> out(X.size());
        for (std::size_t i = 0; i < X.size(); ++i) out[i] = predict_one(X[i]);
        return out;
    }

    std::optional<double> oob_accuracy() const { return oob_accuracy_; }
    std::size_t tree_count() const { return trees_.size(); }
    std::size_t input_dim() const { return dim_; }

    ParamSet state() const
    {
        ParamSet p;
        p.add("forest.shape", {static_cast<double>(dim_), static_cast<double>(trees_.size()),
                               oob_accuracy_ ? *oob_accuracy_ : -1.0});
        std::vector<double> sizes, flat;
        for (const auto& t : trees_) {
            sizes.push_back(static_cast<double>(t.nodes.size()));
            for (const auto& n : t.nodes) {
                flat.insert(flat.end(), {static_cast<double>(n.feature), n.threshold, static_cast<double>(n.left),
                                         static_cast<double>(n.right), n.prob});
            }
        }
        p.add("forest.sizes", std::move(sizes));
        p.add("forest.nodes", std::move(flat));
        return p;
    }

    static RandomForest from_state(const ParamSet& p)
    {
        const auto& shape = p.get("forest.shape");
        const auto& sizes = p.get("forest.sizes");
        const auto& flat = p.get("forest.nodes");
        if (shape.size() != 3 || sizes.size() != static_cast<std::size_t>(shape[1])) throw Error("forest: bad state");
        RandomForest f;
        f.dim_ = static_cast<std::size_t>(shape[0]);
        if (shape[2] >= 0.0) f.oob_accuracy_ = shape[2];
        std::size_t k = 0;
        for (double s : sizes) {
            DecisionTree t;
            for (std::size_t i = 0; i < static_cast<std::size_t>(s); ++i, k += 5) {
                if (k + 5 > flat.size()) throw Error("forest: truncated node array");
                t.nodes.push_back({static_cast<int>(flat[k]), flat[k + 1], static_cast<int>(flat[k + 2]),
                                   static_cast<int>(flat[k + 3]), flat[k + 4]});
            }
            f.trees_.push_back(std::move(t));
        }
        return f;
    }

private:
    std::vector<DecisionTree> trees_;
    std::size_t dim_ = 0;
    std::optional<double> oob_accuracy_;
};

}  // namespace dwiqc
