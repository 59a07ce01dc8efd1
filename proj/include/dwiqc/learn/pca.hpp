#pragma once

#include <vector>

#include <Eigen/Dense>

#include "dwiqc/core/error.hpp"
#include "dwiqc/learn/params.hpp"

namespace dwiqc {

struct PcaConfig {
    double variance_target = 0.98;

    void validate() const
    {
        if (!(variance_target > 0.0 && variance_target <= 1.0)) throw ConfigError("pca: variance_target must be in (0, 1]");
    }

    friend bool operator==(const PcaConfig&, const PcaConfig&) = default;
};

/// Principal components of the sample covariance, keeping the smallest k
/// whose cumulative explained variance reaches the target.
class Pca {
public:
    void fit(const std::vector<std::vector<double>>& X, const PcaConfig& cfg)
    {
        cfg.validate();
        if (X.size() < 2) throw Error("pca: need at least two samples");
        const auto d = static_cast<Eigen::Index>(X.front().size());
        Eigen::MatrixXd data(static_cast<Eigen::Index>(X.size()), d);
        for (std::size_t i = 0; i < X.size(); ++i) {
            if (static_cast<Eigen::Index>(X[i].size()) != d) throw Error("pca: ragged feature rows");
            for (Eigen::Index j = 0; j < d; ++j) data(static_cast<Eigen::Index>(i), j) = X[i][static_cast<std::size_t>(j)];
        }
        mean_ = data.colwise().mean().transpose();
        const Eigen::MatrixXd centered = data.rowwise() - mean_.transpose();
        const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(X.size() - 1);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
        if (eig.info() != Eigen::Success) throw Error("pca: eigen decomposition failed");
        // Ascending order from Eigen; reverse and clamp round-off negatives.
        const Eigen::VectorXd values = eig.eigenvalues().reverse().cwiseMax(0.0);
        const Eigen::MatrixXd vectors = eig.eigenvectors().rowwise().reverse();
        const double total = values.sum();
        const double scale = std::max(1.0, cov.diagonal().cwiseAbs().maxCoeff());
        if (!(total > 1e-12 * scale)) throw Error("pca: degenerate covariance (features have no variance)");

        explained_ = values / total;
        std::size_t k = 0;
        double cum = 0.0;
        while (k < static_cast<std::size_t>(d)) {
            cum += explained_(static_cast<Eigen::Index>(k));
            ++k;
            if (cum >= cfg.variance_target) break;
        }
        components_ = vectors.leftCols(static_cast<Eigen::Index>(k));
    }

    std::size_t components() const { return static_cast<std::size_t>(components_.cols()); }
    std::size_t input_dim() const { return static_cast<std::size_t>(mean_.size()); }

    /// Explained-variance ratios of all d directions, descending.
    const Eigen::VectorXd& explained_ratio() const { return explained_; }

    double cumulative_ratio(std::size_t k) const { return explained_.head(static_cast<Eigen::Index>(k)).sum(); }

    std::vector<double> transform(const std::vector<double>& x) const
    {
        if (x.size() != input_dim()) throw Error("pca: input dimension mismatch");
        const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size())) - mean_;
        const Eigen::VectorXd p = components_.transpose() * v;
        return {p.data(), p.data() + p.size()};
    }

    ParamSet state() const
    {
        ParamSet p;
        p.add("pca.shape", {static_cast<double>(mean_.size()), static_cast<double>(components_.cols())});
        p.add_matrix("pca.mean", Eigen::MatrixXd(mean_));
        p.add_matrix("pca.components", components_);
        p.add_matrix("pca.explained", Eigen::MatrixXd(explained_));
        return p;
    }

    static Pca from_state(const ParamSet& p)
    {
        const auto& shape = p.get("pca.shape");
        if (shape.size() != 2) throw Error("pca: bad state");
        const auto d = static_cast<Eigen::Index>(shape[0]), k = static_cast<Eigen::Index>(shape[1]);
        Pca out;
        out.mean_ = p.matrix("pca.mean", d, 1);
        out.components_ = p.matrix("pca.components", d, k);
        out.explained_ = p.matrix("pca.explained", d, 1);
        return out;
    }

private:
    Eigen::VectorXd mean_;
    Eigen::MatrixXd components_;
    Eigen::VectorXd explained_;
};

}  // namespace dwiqc
