#pragma once

#include <utility>
#include <vector>

#include "sl1max/types.hpp"

namespace sl1max {

enum class ExpansionMode {
    Duplicate, // every projected copy keeps the original weight
    InverseK,  // copies carry weight/K so each original keeps total mass 1
};

inline const char* to_string(ExpansionMode m) {
    return m == ExpansionMode::Duplicate ? "duplicate" : "inversek";
}

struct ExpansionReport {
    std::size_t original_count = 0;
    std::size_t expanded_count = 0;
    std::size_t dropped_zero_label = 0;
    ExpansionMode mode = ExpansionMode::InverseK;
};

// Projects a multi-label dataset into the single-label sample space: an
// example with K labels becomes K single-label examples. Duplicate mode
// skews the input marginal toward multi-label rows (an example with K
// labels ends up with K times the mass); InverseK divides the weight by K
// so every kept original keeps its mass. Zero-label rows have nothing to
// project and are dropped.
inline std::pair<Dataset, ExpansionReport> expand(const Dataset& data,
                                                  ExpansionMode mode) {
    Dataset out;
    out.num_classes = data.num_classes;
    out.num_features = data.num_features;
    out.class_names = data.class_names;

    ExpansionReport report;
    report.original_count = data.size();
    report.mode = mode;

    for (const auto& e : data.examples) {
        std::size_t k = e.labels.size();
        if (k == 0) {
            ++report.dropped_zero_label;
            continue;
        }
        double w = mode == ExpansionMode::InverseK
                       ? e.weight / static_cast<double>(k)
                       : e.weight;
        for (ClassIndex c : e.labels) {
            out.examples.emplace_back(e.x, std::vector<ClassIndex>{c}, w);
            ++report.expanded_count;
        }
    }
    return {std::move(out), report};
}

// Two-class view for the per-class binary reduction: label 1 iff the example
// carries class c, label 0 otherwise. Every row is kept (zero-label rows are
// legitimate negatives) and weights are preserved.
inline Dataset binary_targets(const Dataset& data, ClassIndex c) {
    Dataset out;
    out.num_classes = 2;
    out.num_features = data.num_features;
    out.examples.reserve(data.size());
    for (const auto& e : data.examples) {
        ClassIndex y = e.has_label(c) ? 1 : 0;
        out.examples.emplace_back(e.x, std::vector<ClassIndex>{y}, e.weight);
    }
    return out;
}

// Per-class occurrence rates. With overlapping label sets these sum to more
// than 1, so they are rates, not a distribution over classes.
inline std::vector<double> class_priors_multilabel(const Dataset& data) {
    std::vector<double> prior(static_cast<std::size_t>(data.num_classes), 0.0);
    double total = 0.0;
    for (const auto& e : data.examples) {
        total += e.weight;
        for (ClassIndex c : e.labels) prior[static_cast<std::size_t>(c)] += e.weight;
    }
    if (total > 0.0)
        for (auto& p : prior) p /= total;
    return prior;
}

} // namespace sl1max
