#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dwiqc/core/error.hpp"

namespace dwiqc {

/// Named flat arrays of doubles: the serialized form of trained state.
struct ParamSet {
    std::vector<std::pair<std::string, std::vector<double>>> arrays;

    void add(std::string name, std::vector<double> values) { arrays.emplace_back(std::move(name), std::move(values)); }

    void add_matrix(const std::string& name, const Eigen::MatrixXd& m)
    {
        std::vector<double> v(static_cast<std::size_t>(m.size()));
        Eigen::Map<Eigen::MatrixXd>(v.data(), m.rows(), m.cols()) = m;
        add(name, std::move(v));
    }

    const std::vector<double>& get(const std::string& name) const
    {
        for (const auto& [n, v] : arrays)
            if (n == name) return v;
        throw Error("model state is missing array '" + name + "'");
    }

    Eigen::MatrixXd matrix(const std::string& name, Eigen::Index rows, Eigen::Index cols) const
    {
        const auto& v = get(name);
        if (static_cast<Eigen::Index>(v.size()) != rows * cols) throw Error("model state array '" + name + "' has wrong size");
        return Eigen::Map<const Eigen::MatrixXd>(v.data(), rows, cols);
    }

    friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

}  // namespace dwiqc
