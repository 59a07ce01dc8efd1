#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dwiqc/core/error.hpp"
#include "dwiqc/core/rng.hpp"
#include "dwiqc/learn/params.hpp"

namespace dwiqc {

struct HeadConfig {
    int hidden_units = 256;
    double dropout_rate = 0.5;

    void validate() const
    {
        if (hidden_units < 1) throw ConfigError("head: hidden_units must be >= 1");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("head: dropout_rate must be in [0, 1)");
    }

    friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

enum class ClassBalance { none, weighted, oversample };

inline std::string_view to_string(ClassBalance b)
{
    switch (b) {
    case ClassBalance::none: return "none";
    case ClassBalance::weighted: return "weighted";
    case ClassBalance::oversample: return "oversample";
    }
    return "?";
}

inline ClassBalance parse_class_balance(std::string_view s)
{
    if (s == "none") return ClassBalance::none;
    if (s == "weighted") return ClassBalance::weighted;
    if (s == "oversample") return ClassBalance::oversample;
    throw ConfigError("unknown class_balance '" + std::string(s) + "'");
}

/// RMSprop training of the head with (optionally class-weighted) cross-entropy.
struct TrainConfig {
    int epochs = 20;
    double learning_rate = 2e-4;
    double rho = 0.9;
    double epsilon = 1e-7;
    int batch_size = 32;
    ClassBalance class_balance = ClassBalance::weighted;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (!(rho >= 0.0 && rho < 1.0) || !(epsilon > 0.0)) throw ConfigError("train: bad RMSprop constants");
    }

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Dense(hidden, ReLU) -> dropout -> Dense(2) -> softmax on standardized inputs.
class MlpHead {
public:
    MlpHead() = default;

    std::size_t input_dim() const { return static_cast<std::size_t>(mean_.size()); }
    const HeadConfig& config() const { return cfg_; }

    /// Trains on rows of X (one sample per row) with labels y in {0, 1};
    /// returns the mean training loss of every epoch. When `warm` is set the
    /// current weights and input standardization are kept as the start point.
    std::vector<double> fit(const std::vector<std::vector<double>>& X, const std::vector<int>& y, const HeadConfig& head,
                            const TrainConfig& train, bool warm = false)
    {
        head.validate();
        train.validate();
        if (X.empty() || X.size() != y.size()) throw Error("head: feature/label count mismatch");
        const auto d = static_cast<Eigen::Index>(X.front().size());
        std::size_t counts[2] = {0, 0};
        for (int v : y) {
            if (v != 0 && v != 1) throw Error("head: labels must be 0 or 1");
            ++counts[v];
        }
        if (counts[0] == 0 || counts[1] == 0) throw Error("head: training data has a single class");

        Eigen::MatrixXd data(d, static_cast<Eigen::Index>(X.size()));
        for (std::size_t i = 0; i < X.size(); ++i) {
            if (static_cast<Eigen::Index>(X[i].size()) != d) throw Error("head: ragged feature rows");
            for (Eigen::Index j = 0; j < d; ++j) data(j, static_cast<Eigen::Index>(i)) = X[i][static_cast<std::size_t>(j)];
        }
        if (warm) {
            if (input_dim() != static_cast<std::size_t>(d) || cfg_ != head) throw Error("head: warm start with a different shape");
        } else {
            init(data, head, train.seed);
        }
        const Eigen::MatrixXd z = standardize(data);

        double class_w[2] = {1.0, 1.0};
        if (train.class_balance == ClassBalance::weighted) {
            for (int c = 0; c < 2; ++c) class_w[c] = static_cast<double>(X.size()) / (2.0 * static_cast<double>(counts[c]));
        }
        std::vector<std::size_t> base(X.size());
        for (std::size_t i = 0; i < base.size(); ++i) base[i] = i;
        if (train.class_balance == ClassBalance::oversample) {
            const int minority = counts[0] < counts[1] ? 0 : 1;
            std::vector<std::size_t> pool;
            for (std::size_t i = 0; i < y.size(); ++i)
                if (y[i] == minority) pool.push_back(i);
            Rng rng(stream_seed(train.seed, "oversample"));
            for (std::size_t k = counts[minority]; k < counts[1 - minority]; ++k) base.push_back(pool[rng.index(pool.size())]);
        }

        Eigen::MatrixXd sW1 = Eigen::MatrixXd::Zero(W1_.rows(), W1_.cols()), sW2 = Eigen::MatrixXd::Zero(W2_.rows(), W2_.cols());
        Eigen::VectorXd sb1 = Eigen::VectorXd::Zero(b1_.size()), sb2 = Eigen::VectorXd::Zero(b2_.size());
        auto rms = [&](auto& param, auto& sq, const auto& grad) {
            sq = train.rho * sq + (1.0 - train.rho) * grad.cwiseProduct(grad);
            param.array() -= train.learning_rate * grad.array() / (sq.array().sqrt() + train.epsilon);
        };

        std::vector<double> losses;
        const double keep = 1.0 - head.dropout_rate;
        for (int epoch = 0; epoch < train.epochs; ++epoch) {
            std::vector<std::size_t> order = base;
            Rng shuffle_rng(stream_seed(train.seed, static_cast<std::uint64_t>(epoch), 1));
            shuffle_rng.shuffle(order);
            double epoch_loss = 0.0;
            std::size_t batches = 0;
            for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(train.batch_size)) {
                const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(train.batch_size));
                const auto bsz = static_cast<Eigen::Index>(end - start);
                Eigen::MatrixXd xb(d, bsz);
                Eigen::VectorXd wb(bsz);
                std::vector<int> yb(static_cast<std::size_t>(bsz));
                for (Eigen::Index k = 0; k < bsz; ++k) {
                    const std::size_t i = order[start + static_cast<std::size_t>(k)];
                    xb.col(k) = z.col(static_cast<Eigen::Index>(i));
                    yb[static_cast<std::size_t>(k)] = y[i];
                    wb(k) = class_w[y[i]];
                }
                Eigen::MatrixXd pre = (W1_ * xb).colwise() + b1_;
                Eigen::MatrixXd h = pre.cwiseMax(0.0);
                Eigen::MatrixXd mask = Eigen::MatrixXd::Ones(h.rows(), h.cols());
                if (head.dropout_rate > 0.0) {
                    Rng drop(stream_seed(train.seed, static_cast<std::uint64_t>(epoch) + 1, batches + 1));
                    for (Eigen::Index j = 0; j < mask.size(); ++j) mask.data()[j] = drop.uniform() < keep ? 1.0 / keep : 0.0;
                    h = h.cwiseProduct(mask);
                }
                Eigen::MatrixXd logits = (W2_ * h).colwise() + b2_;
                Eigen::MatrixXd grad_logits(2, bsz);
                double loss = 0.0;
                for (Eigen::Index k = 0; k < bsz; ++k) {
                    const double m = logits.col(k).maxCoeff();
                    const double e0 = std::exp(logits(0, k) - m), e1 = std::exp(logits(1, k) - m);
                    const double p1 = e1 / (e0 + e1);
                    const double p[2] = {1.0 - p1, p1};
                    const int t = yb[static_cast<std::size_t>(k)];
                    loss += wb(k) * (std::log(e0 + e1) + m - logits(t, k));
                    grad_logits(0, k) = wb(k) * (p[0] - (t == 0 ? 1.0 : 0.0));
                    grad_logits(1, k) = wb(k) * (p[1] - (t == 1 ? 1.0 : 0.0));
                }
                loss /= static_cast<double>(bsz);
                if (!std::isfinite(loss)) {
                    throw Error("head: non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                std::to_string(batches + 1) + " (check inputs for NaN/Inf or lower the learning rate)");
                }
                grad_logits /= static_cast<double>(bsz);
                const Eigen::MatrixXd gW2 = grad_logits * h.transpose();
                const Eigen::VectorXd gb2 = grad_logits.rowwise().sum();
                Eigen::MatrixXd gh = (W2_.transpose() * grad_logits).cwiseProduct(mask);
                for (Eigen::Index j = 0; j < gh.size(); ++j)
                    if (pre.data()[j] <= 0.0) gh.data()[j] = 0.0;
                const Eigen::MatrixXd gW1 = gh * xb.transpose();
                const Eigen::VectorXd gb1 = gh.rowwise().sum();
                rms(W2_, sW2, gW2);
                rms(b2_, sb2, gb2);
                rms(W1_, sW1, gW1);
                rms(b1_, sb1, gb1);
                epoch_loss += loss;
                ++batches;
            }
            losses.push_back(epoch_loss / static_cast<double>(batches));
        }
        return losses;
    }

    /// P(artifactual) per row; dropout is inactive.
    std::vector<double> predict_proba(const std::vector<std::vector<double>>& X) const
    {
        std::vector<double> out(X.size());
        for (std::size_t i = 0; i < X.size(); ++i) out[i] = predict_one(X[i]);
        return out;
    }

    double predict_one(const std::vector<double>& x) const
    {
        if (x.size() != input_dim()) throw Error("head: input dimension mismatch");
        Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
        v = (v - mean_).cwiseQuotient(scale_);
        const Eigen::VectorXd h = ((W1_ * v) + b1_).cwiseMax(0.0);
        const Eigen::Vector2d logits = W2_ * h + b2_;
        return 1.0 / (1.0 + std::exp(logits(0) - logits(1)));
    }

    ParamSet state() const
    {
        ParamSet p;
        p.add("head.shape", {static_cast<double>(W1_.cols()), static_cast<double>(W1_.rows()), cfg_.dropout_rate});
        p.add_matrix("head.mean", Eigen::MatrixXd(mean_));
        p.add_matrix("head.scale", Eigen::MatrixXd(scale_));
        p.add_matrix("head.w1", W1_);
        p.add_matrix("head.b1", Eigen::MatrixXd(b1_));
        p.add_matrix("head.w2", W2_);
        p.add_matrix("head.b2", Eigen::MatrixXd(b2_));
        return p;
    }

    static MlpHead from_state(const ParamSet& p)
    {
        const auto& shape = p.get("head.shape");
        if (shape.size() != 3) throw Error("head: bad shape record");
        const auto d = static_cast<Eigen::Index>(shape[0]), hdim = static_cast<Eigen::Index>(shape[1]);
        MlpHead m;
        m.cfg_ = {static_cast<int>(hdim), shape[2]};
        m.mean_ = p.matrix("head.mean", d, 1);
        m.scale_ = p.matrix("head.scale", d, 1);
        m.W1_ = p.matrix("head.w1", hdim, d);
        m.b1_ = p.matrix("head.b1", hdim, 1);
        m.W2_ = p.matrix("head.w2", 2, hdim);
        m.b2_ = p.matrix("head.b2", 2, 1);
        return m;
    }

private:
    void init(const Eigen::MatrixXd& data, const HeadConfig& head, std::uint64_t seed)
    {
        cfg_ = head;
        const Eigen::Index d = data.rows();
        mean_ = data.rowwise().mean();
        scale_.resize(d);
        for (Eigen::Index j = 0; j < d; ++j) {
            const double var = (data.row(j).array() - mean_(j)).square().mean();
            scale_(j) = var > 1e-24 ? std::sqrt(var) : 1.0;
        }
        Rng rng(stream_seed(seed, "glorot"));
        auto glorot = [&](Eigen::Index rows, Eigen::Index cols) {
            const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
            Eigen::MatrixXd w(rows, cols);
            for (Eigen::Index j = 0; j < w.size(); ++j) w.data()[j] = rng.uniform(-limit, limit);
            return w;
        };
        W1_ = glorot(head.hidden_units, d);
        b1_ = Eigen::VectorXd::Zero(head.hidden_units);
        W2_ = glorot(2, head.hidden_units);
        b2_ = Eigen::VectorXd::Zero(2);
    }

    Eigen::MatrixXd standardize(const Eigen::MatrixXd& data) const
    {
        return (data.colwise() - mean_).array().colwise() / scale_.array();
    }

    HeadConfig cfg_;
    Eigen::VectorXd mean_, scale_;
    Eigen::MatrixXd W1_, W2_;
    Eigen::VectorXd b1_, b2_;
};

}  // namespace dwiqc
