#include "certgap/dataset.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace certgap {

void LabeledSet::validate() const {
    if (static_cast<std::size_t>(inputs.rows()) != labels.size()) {
        throw std::invalid_argument("LabeledSet: row count does not match label count");
    }
    if (num_classes < 1) {
        throw std::invalid_argument("LabeledSet: num_classes must be positive");
    }
    for (int y : labels) {
        if (y < 0 || y >= num_classes) {
            throw std::invalid_argument("LabeledSet: label out of range");
        }
    }
}

LabeledSet subset(const LabeledSet& data, const std::vector<std::size_t>& indices) {
    LabeledSet out;
    out.num_classes = data.num_classes;
    out.inputs.resize(static_cast<Eigen::Index>(indices.size()), data.inputs.cols());
    out.labels.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        out.inputs.row(static_cast<Eigen::Index>(r)) = data.inputs.row(static_cast<Eigen::Index>(indices[r]));
        out.labels.push_back(data.labels[indices[r]]);
    }
    return out;
}

void write_csv(const LabeledSet& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    out << std::setprecision(17);
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (Eigen::Index j = 0; j < data.inputs.cols(); ++j) {
            out << data.inputs(static_cast<Eigen::Index>(i), j) << ',';
        }
        out << data.labels[i] << '\n';
    }
}

LabeledSet read_csv(const std::string& path, int num_classes) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            cells.push_back(std::stod(cell));
        }
        if (!rows.empty() && cells.size() != rows.front().size()) {
            throw std::runtime_error(path + ": ragged CSV row");
        }
        rows.push_back(std::move(cells));
    }
    LabeledSet data;
    data.num_classes = num_classes;
    if (rows.empty()) return data;
    const auto d = static_cast<Eigen::Index>(rows.front().size() - 1);
    data.inputs.resize(static_cast<Eigen::Index>(rows.size()), d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            data.inputs(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
        }
        data.labels.push_back(static_cast<int>(rows[i].back()));
    }
    data.validate();
    return data;
}

}  // namespace certgap
