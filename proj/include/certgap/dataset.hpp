#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "certgap/linalg.hpp"

namespace certgap {

/// Rows of `inputs` are examples; `labels[i]` is the class id of row i.
struct LabeledSet {
    RowMat inputs;
    std::vector<int> labels;
    int num_classes = 2;

    std::size_t size() const { return labels.size(); }
    int dim() const { return static_cast<int>(inputs.cols()); }
    Vec row(std::size_t i) const { return inputs.row(static_cast<Eigen::Index>(i)).transpose(); }

    /// Throws std::invalid_argument when the invariants are broken.
    void validate() const;
};

LabeledSet subset(const LabeledSet& data, const std::vector<std::size_t>& indices);

/// CSV with d feature columns followed by the integer label column, no header.
void write_csv(const LabeledSet& data, const std::string& path);
LabeledSet read_csv(const std::string& path, int num_classes = 2);

}  // namespace certgap
