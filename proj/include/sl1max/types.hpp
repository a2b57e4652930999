#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sl1max/errors.hpp"

namespace sl1max {

using FeatureIndex = std::int32_t;
using ClassIndex = std::int32_t;

// Hard cap on the magnitude of any stored weight. Unregularized directions
// would otherwise run off to infinity (e.g. a feature the model never
// expects but the data contains); clamping keeps every score finite.
inline constexpr double kLambdaMax = 30.0;

// A sparse input vector. Indices are strictly increasing and values lie in
// (0, 1]; zero-valued entries are never stored.
class SparseVector {
public:
    using Entry = std::pair<FeatureIndex, double>;

    SparseVector() = default;

    // Entries must already be sorted by index, unique, with values in (0,1].
    static SparseVector from_sorted(std::vector<Entry> entries) {
        validate(entries);
        SparseVector v;
        v.entries_ = std::move(entries);
        return v;
    }

    // Sorts, drops explicit zeros, then validates. Duplicate indices and
    // values outside [0,1] are rejected.
    static SparseVector from_unsorted(std::vector<Entry> entries) {
        std::sort(entries.begin(), entries.end(),
                  [](const Entry& a, const Entry& b) { return a.first < b.first; });
        entries.erase(std::remove_if(entries.begin(), entries.end(),
                                     [](const Entry& e) { return e.second == 0.0; }),
                      entries.end());
        return from_sorted(std::move(entries));
    }

    const std::vector<Entry>& entries() const noexcept { return entries_; }
    bool empty() const noexcept { return entries_.empty(); }
    std::size_t size() const noexcept { return entries_.size(); }

    FeatureIndex max_index() const noexcept {
        return entries_.empty() ? -1 : entries_.back().first;
    }

    // True when every stored value is exactly 1 (presence features).
    bool is_binary() const noexcept {
        for (const auto& [j, v] : entries_)
            if (v != 1.0) return false;
        return true;
    }

private:
    static void validate(const std::vector<Entry>& entries) {
        FeatureIndex prev = -1;
        for (const auto& [j, v] : entries) {
            if (j < 0)
                fail(ErrorCode::ValueOutOfRange, "negative feature index");
            if (j <= prev)
                fail(ErrorCode::MalformedLine,
                     "duplicate or out-of-order feature index " + std::to_string(j));
            if (!(v > 0.0 && v <= 1.0))
                fail(ErrorCode::ValueOutOfRange,
                     "feature value " + std::to_string(v) + " outside (0,1]");
            prev = j;
        }
    }

    std::vector<Entry> entries_;
};

// One training or test row: a sparse input, a label set (possibly empty for
// unlabeled or zero-label multi-label rows), and a positive weight.
struct Example {
    SparseVector x;
    std::vector<ClassIndex> labels; // sorted, unique
    double weight = 1.0;

    Example() = default;
    Example(SparseVector input, std::vector<ClassIndex> label_set, double w = 1.0)
        : x(std::move(input)), labels(std::move(label_set)), weight(w) {
        std::sort(labels.begin(), labels.end());
        labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
        if (!(weight > 0.0))
            fail(ErrorCode::ValueOutOfRange, "example weight must be > 0");
    }

    bool has_label(ClassIndex c) const noexcept {
        return std::binary_search(labels.begin(), labels.end(), c);
    }
};

struct Dataset {
    std::vector<Example> examples;
    ClassIndex num_classes = 0;
    FeatureIndex num_features = 0;
    std::vector<std::string> class_names; // optional; empty or size num_classes

    std::size_t size() const noexcept { return examples.size(); }

    bool is_single_label() const noexcept {
        for (const auto& e : examples)
            if (e.labels.size() != 1) return false;
        return true;
    }

    double total_weight() const noexcept {
        double w = 0.0;
        for (const auto& e : examples) w += e.weight;
        return w;
    }

    // Checks label/feature ranges. Throws on violation.
    void validate() const {
        for (const auto& e : examples) {
            for (ClassIndex c : e.labels)
                if (c < 0 || c >= num_classes)
                    fail(ErrorCode::ValueOutOfRange,
                         "label " + std::to_string(c) + " outside [0," +
                             std::to_string(num_classes) + ")");
            if (e.x.max_index() >= num_features)
                fail(ErrorCode::ValueOutOfRange,
                     "feature index " + std::to_string(e.x.max_index()) +
                         " outside [0," + std::to_string(num_features) + ")");
        }
    }
};

enum class DistributionKind {
    Joint,            // one normalizer over all (example, class) pairs
    ClassConditional, // one normalizer per class, over all examples
    Conditional,      // one normalizer per example, over all classes
};

inline const char* to_string(DistributionKind k) {
    switch (k) {
    case DistributionKind::Joint: return "joint";
    case DistributionKind::ClassConditional: return "classcond";
    case DistributionKind::Conditional: return "cond";
    }
    return "?";
}

// The parameter vector, one sparse row per class. Absent entries are zero.
class WeightMatrix {
public:
    using Row = std::map<FeatureIndex, double>;

    WeightMatrix() = default;
    WeightMatrix(ClassIndex num_rows, DistributionKind kind)
        : rows_(static_cast<std::size_t>(num_rows)), kind_(kind) {}

    ClassIndex num_rows() const noexcept { return static_cast<ClassIndex>(rows_.size()); }
    DistributionKind kind() const noexcept { return kind_; }

    double get(ClassIndex d, FeatureIndex j) const {
        const Row& r = rows_[static_cast<std::size_t>(d)];
        auto it = r.find(j);
        return it == r.end() ? 0.0 : it->second;
    }

    void set(ClassIndex d, FeatureIndex j, double value) {
        if (std::abs(value) > kLambdaMax * (1.0 + 1e-12))
            fail(ErrorCode::NonFiniteState, "weight exceeds clamp bound");
        Row& r = rows_[static_cast<std::size_t>(d)];
        if (value == 0.0)
            r.erase(j);
        else
            r[j] = value;
    }

    void add(ClassIndex d, FeatureIndex j, double delta) {
        set(d, j, get(d, j) + delta);
    }

    const Row& row(ClassIndex d) const { return rows_[static_cast<std::size_t>(d)]; }

    std::size_t nonzero_count() const noexcept {
        std::size_t n = 0;
        for (const auto& r : rows_)
            for (const auto& [j, v] : r)
                if (v != 0.0) ++n;
        return n;
    }

    bool operator==(const WeightMatrix& other) const {
        return kind_ == other.kind_ && rows_ == other.rows_;
    }

private:
    std::vector<Row> rows_;
    DistributionKind kind_ = DistributionKind::Conditional;
};

// Sparse inner product between a weight row and an input. Both operands are
// sorted by index, so this is a linear merge.
inline double dot(const WeightMatrix::Row& lambda_row, const SparseVector& x) {
    double s = 0.0;
    auto it = lambda_row.begin();
    for (const auto& [j, v] : x.entries()) {
        while (it != lambda_row.end() && it->first < j) ++it;
        if (it == lambda_row.end()) break;
        if (it->first == j) s += it->second * v;
    }
    return s;
}

} // namespace sl1max
