#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "dwiqc/core/error.hpp"
#include "dwiqc/learn/params.hpp"

namespace dwiqc {

enum class SvmKernel { rbf, linear };

inline std::string_view to_string(SvmKernel k) { return k == SvmKernel::rbf ? "rbf" : "linear"; }

inline SvmKernel parse_svm_kernel(std::string_view s)
{
    if (s == "rbf") return SvmKernel::rbf;
    if (s == "linear") return SvmKernel::linear;
    throw ConfigError("unknown svm kernel '" + std::string(s) + "'");
}

struct SvmConfig {
    SvmKernel kernel = SvmKernel::rbf;
    double C = 1.0;
    /// RBF width; 0 selects 1 / (d * var(X)).
    double gamma = 0.0;
    double tolerance = 1e-3;
    std::size_t cache_mb = 200;

    void validate() const
    {
        if (!(C > 0.0)) throw ConfigError("svm: C must be > 0");
        if (!(gamma >= 0.0)) throw ConfigError("svm: gamma must be >= 0");
        if (!(tolerance > 0.0)) throw ConfigError("svm: tolerance must be > 0");
    }

    friend bool operator==(const SvmConfig&, const SvmConfig&) = default;
};

/// C-SVC solved by SMO with second-order working-set selection, followed by
/// Platt scaling of the decision values for class probabilities.
class Svm {
public:
    void fit(const std::vector<std::vector<double>>& X, const std::vector<int>& labels, const SvmConfig& cfg)
    {
        cfg.validate();
        const std::size_t n = X.size();
        if (n == 0 || n != labels.size()) throw Error("svm: feature/label count mismatch");
        std::size_t pos = 0;
        for (int v : labels) {
            if (v != 0 && v != 1) throw Error("svm: labels must be 0 or 1");
            pos += static_cast<std::size_t>(v);
        }
        if (pos < 2 || n - pos < 2) throw Error("svm: need at least two samples per class");
        kernel_ = cfg.kernel;
        dim_ = X.front().size();
        gamma_ = cfg.gamma;
        if (gamma_ == 0.0) {
            double sum = 0.0, sq = 0.0;
            for (const auto& r : X)
                for (double v : r) {
                    sum += v;
                    sq += v * v;
                }
            const double cnt = static_cast<double>(n * dim_);
            const double var = sq / cnt - (sum / cnt) * (sum / cnt);
            gamma_ = var > 0.0 ? 1.0 / (static_cast<double>(dim_) * var) : 1.0;
        }

        std::vector<double> y(n), alpha(n, 0.0), G(n, -1.0), QD(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = labels[i] == 1 ? 1.0 : -1.0;
            QD[i] = kernel(X[i], X[i]);
        }
        const double C = cfg.C;
        const double tau = 1e-12;
        const std::size_t capacity = std::max<std::size_t>(2, cfg.cache_mb * 1024 * 1024 / (sizeof(double) * n));
        std::unordered_map<std::size_t, std::vector<double>> cache;
        std::deque<std::size_t> fifo;
        auto row = [&](std::size_t i) -> const std::vector<double>& {
            if (auto it = cache.find(i); it != cache.end()) return it->second;
            if (cache.size() >= capacity) {
                cache.erase(fifo.front());
                fifo.pop_front();
            }
            std::vector<double> r(n);
            for (std::size_t j = 0; j < n; ++j) r[j] = y[i] * y[j] * kernel(X[i], X[j]);
            fifo.push_back(i);
            return cache.emplace(i, std::move(r)).first->second;
        };
        auto upper = [&](std::size_t t) { return alpha[t] >= C; };
        auto lower = [&](std::size_t t) { return alpha[t] <= 0.0; };

        const std::size_t max_iter = std::max<std::size_t>(10000000, n > SIZE_MAX / 100 ? SIZE_MAX : 100 * n);
        for (std::size_t iter = 0; iter < max_iter; ++iter) {
            double gmax = -std::numeric_limits<double>::infinity();
            std::size_t i = n;
            for (std::size_t t = 0; t < n; ++t) {
                if (y[t] > 0 ? !upper(t) : !lower(t)) {
                    const double v = -y[t] * G[t];
                    if (v >= gmax) {
                        gmax = v;
                        i = t;
                    }
                }
            }
            if (i == n) break;
            const auto Qi = row(i);
            double gmax2 = -std::numeric_limits<double>::infinity();
            double obj_min = std::numeric_limits<double>::infinity();
            std::size_t j = n;
            for (std::size_t t = 0; t < n; ++t) {
                if (y[t] > 0 ? lower(t) : upper(t)) continue;
                const double v = y[t] * G[t];
                gmax2 = std::max(gmax2, v);
                const double grad_diff = gmax + v;
                if (grad_diff > 0) {
                    const double quad = QD[i] + QD[t] - 2.0 * y[i] * y[t] * Qi[t];
                    const double obj = -(grad_diff * grad_diff) / (quad > 0 ? quad : tau);
                    if (obj <= obj_min) {
                        obj_min = obj;
                        j = t;
                    }
                }
            }
            if (gmax + gmax2 < cfg.tolerance || j == n) break;
            const auto& Qj = row(j);

            const double ai = alpha[i], aj = alpha[j];
            if (y[i] != y[j]) {
                double quad = QD[i] + QD[j] + 2.0 * Qi[j];
                if (quad <= 0) quad = tau;
                const double delta = (-G[i] - G[j]) / quad;
                const double diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if (diff > 0) {
                    if (alpha[j] < 0) {
                        alpha[j] = 0;
                        alpha[i] = diff;
                    }
                } else if (alpha[i] < 0) {
                    alpha[i] = 0;
                    alpha[j] = -diff;
                }
                if (diff > 0) {
                    if (alpha[i] > C) {
                        alpha[i] = C;
                        alpha[j] = C - diff;
                    }
                } else if (alpha[j] > C) {
                    alpha[j] = C;
                    alpha[i] = C + diff;
                }
            } else {
                double quad = QD[i] + QD[j] - 2.0 * Qi[j];
                if (quad <= 0) quad = tau;
                const double delta = (G[i] - G[j]) / quad;
                const double sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if (sum > C) {
                    if (alpha[i] > C) {
                        alpha[i] = C;
                        alpha[j] = sum - C;
                    }
                } else if (alpha[j] < 0) {
                    alpha[j] = 0;
                    alpha[i] = sum;
                }
                if (sum > C) {
                    if (alpha[j] > C) {
                        alpha[j] = C;
                        alpha[i] = sum - C;
                    }
                } else if (alpha[i] < 0) {
                    alpha[i] = 0;
                    alpha[j] = sum;
                }
            }
            const double di = alpha[i] - ai, dj = alpha[j] - aj;
            for (std::size_t k = 0; k < n; ++k) G[k] += Qi[k] * di + Qj[k] * dj;
        }

        double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum_free = 0.0;
        std::size_t nr_free = 0;
        for (std::size_t t = 0; t < n; ++t) {
            const double yg = y[t] * G[t];
            if (upper(t)) {
                if (y[t] < 0) ub = std::min(ub, yg);
                else lb = std::max(lb, yg);
            } else if (lower(t)) {
                if (y[t] > 0) ub = std::min(ub, yg);
                else lb = std::max(lb, yg);
            } else {
                ++nr_free;
                sum_free += yg;
            }
        }
        rho_ = nr_free > 0 ? sum_free / static_cast<double>(nr_free) : (ub + lb) / 2.0;

        support_.clear();
        coef_.clear();
        for (std::size_t t = 0; t < n; ++t) {
            if (alpha[t] > 0.0) {
                support_.push_back(X[t]);
                coef_.push_back(alpha[t] * y[t]);
            }
        }
        std::vector<double> dec(n);
        for (std::size_t t = 0; t < n; ++t) dec[t] = decision(X[t]);
        fit_platt(dec, labels);
    }

    double decision(const std::vector<double>& x) const
    {
        if (x.size() != dim_) throw Error("svm: input dimension mismatch");
        double f = -rho_;
        for (std::size_t s = 0; s < support_.size(); ++s) f += coef_[s] * kernel(support_[s], x);
        return f;
    }

    /// Platt-scaled P(artifactual).
    double predict_one(const std::vector<double>& x) const
    {
        const double z = platt_a_ * decision(x) + platt_b_;
        return z >= 0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
    }

    std::vector<double> predict_proba(const std::vector<std::vector<double>>& X) const
    {
        std::vector<double> out(X.size());
        for (std::size_t i = 0; i < X.size(); ++i) out[i] = predict_one(X[i]);
        return out;
    }

    std::size_t support_count() const { return support_.size(); }
    double gamma() const { return gamma_; }

    ParamSet state() const
    {
        ParamSet p;
        p.add("svm.scalars", {static_cast<double>(dim_), static_cast<double>(support_.size()),
                              kernel_ == SvmKernel::rbf ? 0.0 : 1.0, gamma_, rho_, platt_a_, platt_b_});
        std::vector<double> flat;
        for (const auto& s : support_) flat.insert(flat.end(), s.begin(), s.end());
        p.add("svm.support", std::move(flat));
        p.add("svm.coef", coef_);
        return p;
    }

    static Svm from_state(const ParamSet& p)
    {
        const auto& s = p.get("svm.scalars");
        if (s.size() != 7) throw Error("svm: bad state");
        Svm m;
        m.dim_ = static_cast<std::size_t>(s[0]);
        const auto count = static_cast<std::size_t>(s[1]);
        m.kernel_ = s[2] == 0.0 ? SvmKernel::rbf : SvmKernel::linear;
        m.gamma_ = s[3];
        m.rho_ = s[4];
        m.platt_a_ = s[5];
        m.platt_b_ = s[6];
        const auto& flat = p.get("svm.support");
        m.coef_ = p.get("svm.coef");
        if (flat.size() != count * m.dim_ || m.coef_.size() != count) throw Error("svm: support vector size mismatch");
        for (std::size_t i = 0; i < count; ++i)
            m.support_.emplace_back(flat.begin() + static_cast<long>(i * m.dim_), flat.begin() + static_cast<long>((i + 1) * m.dim_));
        return m;
    }

private:
    double kernel(const std::vector<double>& a, const std::vector<double>& b) const
    {
        double s = 0.0;
        if (kernel_ == SvmKernel::linear) {
            for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
            return s;
        }
        for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
        return std::exp(-gamma_ * s);
    }

    // Newton iteration with backtracking on the regularized targets.
    void fit_platt(const std::vector<double>& dec, const std::vector<int>& labels)
    {
        double prior1 = 0, prior0 = 0;
        for (int l : labels) (l == 1 ? prior1 : prior0) += 1;
        const double hi = (prior1 + 1.0) / (prior1 + 2.0), lo = 1.0 / (prior0 + 2.0);
        std::vector<double> t(dec.size());
        for (std::size_t i = 0; i < dec.size(); ++i) t[i] = labels[i] == 1 ? hi : lo;
        double A = 0.0, B = std::log((prior0 + 1.0) / (prior1 + 1.0));
        auto objective = [&](double a, double b) {
            double f = 0.0;
            for (std::size_t i = 0; i < dec.size(); ++i) {
                const double z = dec[i] * a + b;
                f += z >= 0 ? t[i] * z + std::log1p(std::exp(-z)) : (t[i] - 1.0) * z + std::log1p(std::exp(z));
            }
            return f;
        };
        double fval = objective(A, B);
        for (int it = 0; it < 100; ++it) {
            double h11 = 1e-12, h22 = 1e-12, h21 = 0.0, g1 = 0.0, g2 = 0.0;
            for (std::size_t i = 0; i < dec.size(); ++i) {
                const double z = dec[i] * A + B;
                double p, q;
                if (z >= 0) {
                    p = std::exp(-z) / (1.0 + std::exp(-z));
                    q = 1.0 / (1.0 + std::exp(-z));
                } else {
                    p = 1.0 / (1.0 + std::exp(z));
                    q = std::exp(z) / (1.0 + std::exp(z));
                }
                const double d2 = p * q;
                h11 += dec[i] * dec[i] * d2;
                h22 += d2;
                h21 += dec[i] * d2;
                const double d1 = t[i] - p;
                g1 += dec[i] * d1;
                g2 += d1;
            }
            if (std::abs(g1) < 1e-5 && std::abs(g2) < 1e-5) break;
            const double det = h11 * h22 - h21 * h21;
            const double dA = -(h22 * g1 - h21 * g2) / det, dB = -(-h21 * g1 + h11 * g2) / det;
            const double gd = g1 * dA + g2 * dB;
            double step = 1.0;
            while (step >= 1e-10) {
                const double na = A + step * dA, nb = B + step * dB;
                const double nf = objective(na, nb);
                if (nf < fval + 1e-4 * step * gd) {
                    A = na;
                    B = nb;
                    fval = nf;
                    break;
                }
                step /= 2.0;
            }
            if (step < 1e-10) break;
        }
        platt_a_ = A;
        platt_b_ = B;
    }

    SvmKernel kernel_ = SvmKernel::rbf;
    std::size_t dim_ = 0;
    double gamma_ = 1.0;
    double rho_ = 0.0;
    double platt_a_ = -1.0, platt_b_ = 0.0;
    std::vector<std::vector<double>> support_;
    std::vector<double> coef_;
};

}  // namespace dwiqc
