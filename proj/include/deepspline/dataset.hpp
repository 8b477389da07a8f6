#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepspline {

/// Paired input/target vectors. All inputs share one length, all targets another.
struct Dataset {
    std::vector<Eigen::VectorXd> inputs;
    std::vector<Eigen::VectorXd> targets;
    std::vector<std::string> names;  // optional column names, inputs first

    std::size_t size() const noexcept { return inputs.size(); }
    bool empty() const noexcept { return inputs.empty(); }
    Eigen::Index input_dim() const { return inputs.empty() ? 0 : inputs.front().size(); }
    Eigen::Index target_dim() const { return targets.empty() ? 0 : targets.front().size(); }

    void validate() const {
        if (inputs.size() != targets.size()) throw std::invalid_argument("Dataset: input/target count mismatch");
        for (std::size_t m = 0; m < inputs.size(); ++m) {
            if (inputs[m].size() != input_dim() || targets[m].size() != target_dim()) {
                throw std::invalid_argument("Dataset: sample " + std::to_string(m + 1) + " has inconsistent arity");
            }
            if (!inputs[m].allFinite() || !targets[m].allFinite()) {
                throw std::invalid_argument("Dataset: sample " + std::to_string(m + 1) + " is not finite");
            }
        }
    }
};

} // namespace deepspline
