#pragma once

// Synthetic source/target domain-shift generators and CSV ingestion.
// All randomness flows from one std::mt19937_64 stream per generator call,
// seeded from the spec, so generation is a pure function of its arguments.

#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lftl/tensor.hpp"

namespace lftl {

struct LabeledSet {
    Tensor features;          // n x input_dim
    std::vector<int> labels;  // class indices in [0, C)
    std::vector<int> ids;     // stable, unique

    int size() const { return features.rows(); }
    int dim() const { return features.cols(); }
};

struct DomainSpec {
    int classes = 2;
    int n_source = 100;
    int n_target = 100;
    double rotation = 0.0;  // radians applied to the target domain
    double noise_scale_source = 0.1;
    double noise_scale_target = 0.1;
    std::vector<double> class_priors_target;  // empty = uniform
    uint64_t seed = 0;

    void validate() const {
        if (classes < 1) throw std::invalid_argument("DomainSpec: classes < 1");
        if (n_source < 1 || n_target < 1)
            throw std::invalid_argument("DomainSpec: sample counts must be positive");
        if (noise_scale_source <= 0.0 || noise_scale_target <= 0.0)
            throw std::invalid_argument("DomainSpec: noise scales must be positive");
        if (!class_priors_target.empty()) {
            if (static_cast<int>(class_priors_target.size()) != classes)
                throw std::invalid_argument("DomainSpec: priors length != classes");
            double s = 0.0;
            for (double p : class_priors_target) {
                if (p < 0.0) throw std::invalid_argument("DomainSpec: negative prior");
                s += p;
            }
            if (std::abs(s - 1.0) > 1e-9)
                throw std::invalid_argument("DomainSpec: priors must sum to 1");
        }
    }
};

namespace detail {

inline std::vector<double> resolved_priors(const DomainSpec& spec) {
    if (!spec.class_priors_target.empty()) return spec.class_priors_target;
    return std::vector<double>(spec.classes, 1.0 / spec.classes);
}

inline void rotate2(double& x, double& y, double theta) {
    double c = std::cos(theta), s = std::sin(theta);
    double nx = c * x - s * y;
    double ny = s * x + c * y;
    x = nx;
    y = ny;
}

}  // namespace detail

// C class means evenly spaced on the unit circle; target means rotated by
// spec.rotation and target class counts drawn under class_priors_target.
inline std::pair<LabeledSet, LabeledSet> gen_gaussian_ring(const DomainSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise_s(0.0, spec.noise_scale_source);
    std::normal_distribution<double> noise_t(0.0, spec.noise_scale_target);
    auto priors = detail::resolved_priors(spec);
    std::discrete_distribution<int> target_class(priors.begin(), priors.end());

    auto mean_of = [&](int c, bool target) {
        double angle = 2.0 * std::numbers::pi * c / spec.classes;
        double x = std::cos(angle), y = std::sin(angle);
        if (target) detail::rotate2(x, y, spec.rotation);
        return std::pair{x, y};
    };

    LabeledSet source;
    source.features = Tensor(spec.n_source, 2);
    for (int i = 0; i < spec.n_source; ++i) {
        int c = i % spec.classes;  // balanced source
        auto [mx, my] = mean_of(c, false);
        source.features.at(i, 0) = mx + noise_s(rng);
        source.features.at(i, 1) = my + noise_s(rng);
        source.labels.push_back(c);
        source.ids.push_back(i);
    }

    LabeledSet target;
    target.features = Tensor(spec.n_target, 2);
    for (int i = 0; i < spec.n_target; ++i) {
        int c = target_class(rng);
        auto [mx, my] = mean_of(c, true);
        target.features.at(i, 0) = mx + noise_t(rng);
        target.features.at(i, 1) = my + noise_t(rng);
        target.labels.push_back(c);
        target.ids.push_back(i);
    }
    return {std::move(source), std::move(target)};
}

// Two interleaved half circles; the target domain is rotated by spec.rotation
// about the origin and shifted by a small fixed offset proportional to it.
inline std::pair<LabeledSet, LabeledSet> gen_two_moons_shift(const DomainSpec& spec) {
    spec.validate();
    if (spec.classes != 2)
        throw std::invalid_argument("gen_two_moons_shift: requires exactly 2 classes");
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise_s(0.0, spec.noise_scale_source);
    std::normal_distribution<double> noise_t(0.0, spec.noise_scale_target);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    auto make = [&](int n, bool target, std::normal_distribution<double>& noise) {
        LabeledSet set;
        set.features = Tensor(n, 2);
        int n_upper = (n + 1) / 2;  // moon 0 gets ceil(n/2)
        for (int i = 0; i < n; ++i) {
            int c = i < n_upper ? 0 : 1;
            double t = unit(rng) * std::numbers::pi;
            double x, y;
            if (c == 0) {
                x = std::cos(t);
                y = std::sin(t);
            } else {
                x = 1.0 - std::cos(t);
                y = 0.5 - std::sin(t);
            }
            x += noise(rng);
            y += noise(rng);
            if (target) {
                detail::rotate2(x, y, spec.rotation);
                x += 0.5 * spec.rotation / std::numbers::pi;
                y += 0.25 * spec.rotation / std::numbers::pi;
            }
            set.features.at(i, 0) = x;
            set.features.at(i, 1) = y;
            set.labels.push_back(c);
            set.ids.push_back(i);
        }
        return set;
    };

    LabeledSet source = make(spec.n_source, false, noise_s);
    LabeledSet target = make(spec.n_target, true, noise_t);
    return {std::move(source), std::move(target)};
}

struct CsvSchema {
    int classes = 0;          // labels must fall in [0, classes)
    bool has_header = false;
};

class CsvError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// rows = feature columns followed by one integer label column
inline LabeledSet load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream is(path);
    if (!is) throw CsvError("cannot open: " + path);
    LabeledSet set;
    std::vector<std::vector<double>> rows;
    std::string line;
    int lineno = 0;
    int width = -1;
    while (std::getline(is, line)) {
        ++lineno;
        if (lineno == 1 && schema.has_header) continue;
        if (line.empty()) continue;
        std::vector<double> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                size_t pos = 0;
                double v = std::stod(cell, &pos);
                while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos])))
                    ++pos;
                if (pos != cell.size()) throw std::invalid_argument("trailing");
                cells.push_back(v);
            } catch (const std::exception&) {
                throw CsvError("line " + std::to_string(lineno) +
                               ": non-numeric cell '" + cell + "'");
            }
        }
        if (cells.size() < 2)
            throw CsvError("line " + std::to_string(lineno) + ": need >= 2 columns");
        if (width == -1)
            width = static_cast<int>(cells.size());
        else if (static_cast<int>(cells.size()) != width)
            throw CsvError("line " + std::to_string(lineno) + ": ragged row");
        double lab = cells.back();
        if (lab != std::floor(lab))
            throw CsvError("line " + std::to_string(lineno) + ": non-integer label");
        int label = static_cast<int>(lab);
        if (label < 0 || (schema.classes > 0 && label >= schema.classes))
            throw CsvError("line " + std::to_string(lineno) + ": label " +
                           std::to_string(label) + " out of range");
        set.labels.push_back(label);
        cells.pop_back();
        rows.push_back(std::move(cells));
    }
    int n = static_cast<int>(rows.size());
    int d = n > 0 ? static_cast<int>(rows[0].size()) : 0;
    set.features = Tensor(n, d);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) set.features.at(i, j) = rows[i][j];
        set.ids.push_back(i);
    }
    return set;
}

inline void save_csv(const LabeledSet& set, const std::string& path,
                     bool header = false) {
    std::ofstream os(path);
    if (!os) throw CsvError("cannot open for write: " + path);
    os.precision(17);
    if (header) {
        for (int j = 0; j < set.dim(); ++j) os << "f" << j << ",";
        os << "label\n";
    }
    for (int i = 0; i < set.size(); ++i) {
        for (int j = 0; j < set.dim(); ++j) os << set.features.at(i, j) << ",";
        os << set.labels[i] << "\n";
    }
}

}  // namespace lftl
