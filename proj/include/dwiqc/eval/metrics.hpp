#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dwiqc/core/error.hpp"

namespace dwiqc {

/// Confusion counts with derived rates; a rate with a zero denominator is
/// left empty rather than reported as 0 or 1.
struct Metrics {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::optional<double> precision, recall, accuracy;

    std::size_t total() const { return tp + fp + tn + fn; }

    friend bool operator==(const Metrics&, const Metrics&) = default;
};

inline Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn)
{
    Metrics m{tp, fp, tn, fn, {}, {}, {}};
    if (tp + fp > 0) m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (tp + fn > 0) m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (m.total() > 0) m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(m.total());
    return m;
}

inline Metrics compute_metrics(const std::vector<bool>& predicted, const std::vector<bool>& truth)
{
    if (predicted.size() != truth.size()) {
        throw Error("metrics: " + std::to_string(predicted.size()) + " predictions for " + std::to_string(truth.size()) + " labels");
    }
    if (predicted.empty()) throw Error("metrics: no samples");
    std::size_t c[2][2] = {{0, 0}, {0, 0}};
    for (std::size_t i = 0; i < truth.size(); ++i) ++c[truth[i]][predicted[i]];
    return metrics_from_counts(c[1][1], c[0][1], c[0][0], c[1][0]);
}

/// Macro (unweighted) mean of rates over runs; a rate is averaged over the
/// runs where it is defined.
struct MacroMetrics {
    std::optional<double> precision, recall, accuracy;
    std::size_t runs = 0;
};

inline MacroMetrics macro_mean(const std::vector<Metrics>& runs)
{
    MacroMetrics out;
    out.runs = runs.size();
    auto mean = [&](std::optional<double> Metrics::*field) -> std::optional<double> {
        double s = 0;
        std::size_t n = 0;
        for (const auto& r : runs)
            if (r.*field) {
                s += *(r.*field);
                ++n;
            }
        return n ? std::optional<double>(s / static_cast<double>(n)) : std::nullopt;
    };
    out.precision = mean(&Metrics::precision);
    out.recall = mean(&Metrics::recall);
    out.accuracy = mean(&Metrics::accuracy);
    return out;
}

inline nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

inline std::string optional_csv(const std::optional<double>& v)
{
    if (!v) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

inline nlohmann::json to_json(const Metrics& m)
{
    return {{"tp", m.tp},
            {"fp", m.fp},
            {"tn", m.tn},
            {"fn", m.fn},
            {"precision", optional_json(m.precision)},
            {"recall", optional_json(m.recall)},
            {"accuracy", optional_json(m.accuracy)}};
}

inline nlohmann::json to_json(const MacroMetrics& m)
{
    return {{"precision", optional_json(m.precision)},
            {"recall", optional_json(m.recall)},
            {"accuracy", optional_json(m.accuracy)},
            {"runs", m.runs}};
}

inline constexpr const char* metrics_csv_columns = "tp,fp,tn,fn,precision,recall,accuracy";

inline std::string metrics_csv(const Metrics& m)
{
    return std::to_string(m.tp) + "," + std::to_string(m.fp) + "," + std::to_string(m.tn) + "," + std::to_string(m.fn) +
           "," + optional_csv(m.precision) + "," + optional_csv(m.recall) + "," + optional_csv(m.accuracy);
}

}  // namespace dwiqc
