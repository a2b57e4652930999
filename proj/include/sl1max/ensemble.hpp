#pragma once

#include <cmath>
#include <iostream>
#include <mutex>
#include <vector>

#include "sl1max/multilabel.hpp"
#include "sl1max/train.hpp"
#include "sl1max/types.hpp"

namespace sl1max {

// One member of the per-class binary reduction: a two-row maxent model
// separating class c from its complement. For each feature the member keeps
// a weight in the positive model and one in the negative model; conditional
// members decide through the sigmoid of the row difference.
struct BinaryPairModel {
    ClassIndex class_index = 0;
    WeightMatrix::Row lambda_pos; // weights of the y = 1 model
    WeightMatrix::Row lambda_neg; // weights of the y = 0 model
    DistributionKind kind = DistributionKind::Conditional;
    // Set when the class had no positive training examples; such a member
    // always reports (near-)zero probability.
    bool constant_negative = false;

    double difference_score(const SparseVector& x) const {
        return dot(lambda_pos, x) - dot(lambda_neg, x);
    }

    std::size_t nonzero_count() const {
        std::size_t n = 0;
        for (const auto& [j, v] : lambda_pos)
            if (v != 0.0) ++n;
        for (const auto& [j, v] : lambda_neg)
            if (v != 0.0) ++n;
        return n;
    }
};

struct EnsembleModel {
    std::vector<BinaryPairModel> members; // exactly one per class
    double threshold = 0.5;
    FeatureIndex num_features = 0;
    double beta = 0.5;
    BetaScaling scaling = BetaScaling::Stddev;
    std::int64_t rounds_done = 0;
    std::vector<std::string> class_names;

    ClassIndex num_classes() const noexcept {
        return static_cast<ClassIndex>(members.size());
    }
    DistributionKind member_kind() const {
        return members.empty() ? DistributionKind::Conditional : members[0].kind;
    }

    std::size_t nonzero_count() const {
        std::size_t n = 0;
        for (const auto& m : members) n += m.nonzero_count();
        return n;
    }
};

// Probability that x belongs to the member's class: the sigmoid of the
// difference between the positive and negative row scores. Only conditional
// members normalize per example; joint members report unnormalized scores
// through difference_score instead.
inline double binary_prob(const BinaryPairModel& member, const SparseVector& x) {
    if (member.kind != DistributionKind::Conditional)
        fail(ErrorCode::Unsupported,
             "binary probabilities require a conditional member");
    double s = member.constant_negative ? -kLambdaMax : member.difference_score(x);
    return 1.0 / (1.0 + std::exp(-s));
}

// Trains the l independent binary problems. Each member is exactly the
// two-class trainer run on binary_targets(data, c); classes never interact,
// so any thread count produces identical members. A class with no positive
// examples yields a constant-negative member and a warning.
inline EnsembleModel train_ensemble(const Dataset& data, DistributionKind kind,
                                    const TrainOptions& opt = {}) {
    if (kind == DistributionKind::ClassConditional)
        fail(ErrorCode::Unsupported,
             "the binary reduction supports joint and conditional members");
    data.validate();
    if (data.examples.empty())
        fail(ErrorCode::EmptyDataset, "cannot train on an empty dataset");

    EnsembleModel model;
    model.members.resize(static_cast<std::size_t>(data.num_classes));
    model.num_features = data.num_features;
    model.beta = opt.beta;
    model.scaling = opt.scaling;
    model.class_names = data.class_names;

    std::vector<std::int64_t> rounds(static_cast<std::size_t>(data.num_classes), 0);
    std::mutex io_mutex;

    detail::for_each_class(data.num_classes, opt.parallel_classes, [&](ClassIndex c) {
        BinaryPairModel member;
        member.class_index = c;
        member.kind = kind;

        Dataset two_class = binary_targets(data, c);
        bool has_positive = false;
        for (const auto& e : two_class.examples)
            if (e.labels[0] == 1) {
                has_positive = true;
                break;
            }
        if (!has_positive) {
            member.constant_negative = true;
            std::lock_guard<std::mutex> lock(io_mutex);
            std::cerr << "warning: class " << c
                      << " has no positive examples; member is constant-negative\n";
            model.members[static_cast<std::size_t>(c)] = std::move(member);
            return;
        }

        TrainOptions member_opt = opt;
        member_opt.parallel_classes = 1;
        Dataset member_validation;
        if (opt.validation) {
            member_validation = binary_targets(*opt.validation, c);
            member_opt.validation = &member_validation;
        }
        TrainedModel two = train(two_class, kind, member_opt);
        member.lambda_neg = two.weights.row(0);
        member.lambda_pos = two.weights.row(1);
        rounds[static_cast<std::size_t>(c)] = two.rounds_done;
        model.members[static_cast<std::size_t>(c)] = std::move(member);
    });
    for (auto r : rounds) model.rounds_done += r;
    return model;
}

// Code vector: bit c is set iff member c reports probability strictly above
// the threshold. All-zero codes are legal (the ensemble may abstain).
inline std::vector<int> predict_code(const EnsembleModel& model, const SparseVector& x) {
    std::vector<int> code(model.members.size(), 0);
    for (std::size_t c = 0; c < model.members.size(); ++c)
        code[c] = binary_prob(model.members[c], x) > model.threshold ? 1 : 0;
    return code;
}

// Per-class membership scores: sigmoid probabilities for conditional
// members, raw difference scores for joint members.
inline std::vector<double> member_scores(const EnsembleModel& model,
                                         const SparseVector& x) {
    std::vector<double> s(model.members.size(), 0.0);
    for (std::size_t c = 0; c < model.members.size(); ++c) {
        const auto& member = model.members[c];
        if (member.kind == DistributionKind::Conditional)
            s[c] = binary_prob(member, x);
        else
            s[c] = member.constant_negative ? -kLambdaMax
                                            : member.difference_score(x);
    }
    return s;
}

// Highest scoring class across members; ties break toward the lowest index.
inline ClassIndex predict_top(const EnsembleModel& model, const SparseVector& x) {
    std::vector<double> s = member_scores(model, x);
    ClassIndex best = 0;
    for (ClassIndex c = 1; c < model.num_classes(); ++c)
        if (s[static_cast<std::size_t>(c)] > s[static_cast<std::size_t>(best)])
            best = c;
    return best;
}

} // namespace sl1max
