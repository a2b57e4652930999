#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "sl1max/types.hpp"

namespace sl1max {

// Weighted empirical statistics of a dataset: per-(class, feature) means,
// class priors and counts. All means are weight-weighted; in multi-label
// mode an example contributes to every class in its label set, so priors
// may sum to more than 1.
class EmpiricalStats {
public:
    EmpiricalStats() = default;

    ClassIndex num_classes() const noexcept { return static_cast<ClassIndex>(prior_.size()); }
    FeatureIndex num_features() const noexcept { return num_features_; }
    std::size_t num_examples() const noexcept { return num_examples_; }
    double total_weight() const noexcept { return total_weight_; }

    // p~[f_{d,j}]: weighted mean of feature j over examples labeled d,
    // normalized by the total weight of the whole dataset.
    double feature_mean(ClassIndex d, FeatureIndex j) const {
        const auto& row = mean_[static_cast<std::size_t>(d)];
        auto it = row.find(j);
        return it == row.end() ? 0.0 : it->second;
    }

    double class_prior(ClassIndex c) const { return prior_[static_cast<std::size_t>(c)]; }
    double class_weight(ClassIndex c) const { return class_weight_[static_cast<std::size_t>(c)]; }
    std::size_t class_count(ClassIndex c) const { return count_[static_cast<std::size_t>(c)]; }

    // p~_c[f_{c,j}] = feature_mean(c,j) / class_prior(c), the mean of
    // feature j conditioned on class c.
    double class_cond_mean(ClassIndex c, FeatureIndex j) const {
        double p = class_prior(c);
        if (p <= 0.0) return 0.0;
        return feature_mean(c, j) / p;
    }

    // Bernoulli standard deviation of the class-dependent feature.
    double feature_std(ClassIndex d, FeatureIndex j) const {
        double p = feature_mean(d, j);
        return std::sqrt(std::max(0.0, p * (1.0 - p)));
    }

    const std::map<FeatureIndex, double>& mean_row(ClassIndex d) const {
        return mean_[static_cast<std::size_t>(d)];
    }

    static EmpiricalStats compute(const Dataset& data, bool multi_label_mode);

private:
    std::vector<std::map<FeatureIndex, double>> mean_; // (d,j) -> p~[f_{d,j}]
    std::vector<double> prior_;
    std::vector<double> class_weight_;
    std::vector<std::size_t> count_;
    FeatureIndex num_features_ = 0;
    std::size_t num_examples_ = 0;
    double total_weight_ = 0.0;
};

inline EmpiricalStats EmpiricalStats::compute(const Dataset& data, bool multi_label_mode) {
    if (data.examples.empty())
        fail(ErrorCode::EmptyDataset, "empirical statistics need at least one example");

    EmpiricalStats s;
    s.num_features_ = data.num_features;
    s.num_examples_ = data.examples.size();
    s.mean_.resize(static_cast<std::size_t>(data.num_classes));
    s.prior_.assign(static_cast<std::size_t>(data.num_classes), 0.0);
    s.class_weight_.assign(static_cast<std::size_t>(data.num_classes), 0.0);
    s.count_.assign(static_cast<std::size_t>(data.num_classes), 0);

    double total = 0.0;
    for (const auto& e : data.examples) total += e.weight;
    s.total_weight_ = total;

    for (const auto& e : data.examples) {
        if (!multi_label_mode && e.labels.size() != 1)
            fail(ErrorCode::SingleLabelViolation,
                 "example carries " + std::to_string(e.labels.size()) +
                     " labels in single-label mode");
        for (ClassIndex c : e.labels) {
            auto ci = static_cast<std::size_t>(c);
            s.class_weight_[ci] += e.weight;
            s.count_[ci] += 1;
            auto& row = s.mean_[ci];
            for (const auto& [j, v] : e.x.entries())
                row[j] += e.weight * v;
        }
    }
    for (std::size_t c = 0; c < s.prior_.size(); ++c) {
        s.prior_[c] = s.class_weight_[c] / total;
        for (auto& [j, v] : s.mean_[c]) v /= total;
    }
    return s;
}

inline EmpiricalStats empirical_stats(const Dataset& data, bool multi_label_mode = false) {
    return EmpiricalStats::compute(data, multi_label_mode);
}

enum class BetaScaling { Uniform, Stddev };

inline const char* to_string(BetaScaling s) {
    return s == BetaScaling::Uniform ? "uniform" : "stddev";
}

// Per-coordinate regularization strength derived from the scalar beta.
//   uniform: beta / sqrt(m)
//   stddev:  beta * max(sigma, sigma_floor) / sqrt(m),
// where sigma is the Bernoulli stddev of the coordinate's empirical mean
// and sigma_floor = sqrt((1/m)(1 - 1/m)) keeps never-seen features from
// getting a zero penalty.
inline double scaled_beta(double beta, BetaScaling mode, double target_mean,
                          std::size_t num_examples) {
    double m = static_cast<double>(num_examples);
    if (mode == BetaScaling::Uniform) return beta / std::sqrt(m);
    double sigma = std::sqrt(std::max(0.0, target_mean * (1.0 - target_mean)));
    double floor = std::sqrt(std::max(0.0, (1.0 / m) * (1.0 - 1.0 / m)));
    return beta * std::max(sigma, floor) / std::sqrt(m);
}

} // namespace sl1max
