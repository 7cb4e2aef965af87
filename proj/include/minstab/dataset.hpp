#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "minstab/error.hpp"
#include "minstab/matrix.hpp"

namespace minstab {

/// Labelled training data: inputs in the closed unit ball, labels with |y| ≥ 1.
struct Dataset {
    std::vector<Vector> inputs;
    Vector labels;

    static constexpr double kBallSlack = 1e-12;

    std::size_t size() const noexcept { return inputs.size(); }
    std::size_t input_dim() const noexcept { return inputs.empty() ? 0 : inputs.front().size(); }

    void push_back(Vector x, double y) {
        inputs.push_back(std::move(x));
        labels.push_back(y);
    }

    /// Throws InputError when any Dataset invariant is violated.
    void validate() const {
        if (inputs.empty()) throw InputError("Dataset: empty");
        if (inputs.size() != labels.size()) throw InputError("Dataset: inputs and labels differ in count");
        const std::size_t d0 = inputs.front().size();
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            const auto& x = inputs[i];
            if (x.size() != d0 || d0 == 0) throw InputError("Dataset: inconsistent input dimension at row " + std::to_string(i));
            if (!all_finite(x) || !std::isfinite(labels[i])) throw InputError("Dataset: non-finite value at row " + std::to_string(i));
            if (norm2(x) > 1.0 + kBallSlack) throw InputError("Dataset: input " + std::to_string(i) + " lies outside the unit ball");
            if (std::abs(labels[i]) < 1.0) throw InputError("Dataset: label " + std::to_string(i) + " has magnitude below 1");
        }
        std::vector<std::size_t> order(inputs.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return inputs[a] < inputs[b]; });
        for (std::size_t i = 1; i < order.size(); ++i)
            if (inputs[order[i]] == inputs[order[i - 1]])
                throw InputError("Dataset: duplicate inputs at rows " + std::to_string(order[i - 1]) + " and " +
                                 std::to_string(order[i]));
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

}  // namespace minstab
