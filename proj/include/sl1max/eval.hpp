#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "sl1max/ensemble.hpp"
#include "sl1max/train.hpp"
#include "sl1max/types.hpp"

namespace sl1max {

// One pooled (example, class) decision for threshold sweeps.
struct ScoredItem {
    double score = 0.0;
    bool is_positive = false;
    std::size_t example_index = 0;
    ClassIndex class_index = 0;
};

// Fraction of rows whose predicted class is not among the target labels.
// A multi-label row counts as correct when any of its labels wins.
inline double top_class_error(const std::vector<ClassIndex>& predictions,
                              const std::vector<std::vector<ClassIndex>>& truth) {
    if (predictions.size() != truth.size())
        fail(ErrorCode::LengthMismatch, "predictions and truth differ in length");
    if (predictions.empty()) return 0.0;
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const auto& labels = truth[i];
        if (std::find(labels.begin(), labels.end(), predictions[i]) == labels.end())
            ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(predictions.size());
}

struct MicroFResult {
    double f = 0.0;
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

// Best micro-averaged F-measure over a single global threshold. All
// (example, class) decisions are pooled; an item is predicted positive when
// its score is strictly above the threshold. Candidate thresholds are the
// midpoints between adjacent distinct scores plus the two infinities, which
// covers every achievable confusion matrix.
inline MicroFResult micro_f_optimal(std::vector<ScoredItem> items) {
    std::size_t total_pos = 0;
    for (const auto& it : items) total_pos += it.is_positive ? 1 : 0;
    if (total_pos == 0)
        fail(ErrorCode::NoPositives, "micro F needs at least one positive item");

    std::sort(items.begin(), items.end(),
              [](const ScoredItem& a, const ScoredItem& b) { return a.score < b.score; });

    auto f_at = [&](std::size_t tp, std::size_t fp) {
        std::size_t fn = total_pos - tp;
        double denom = static_cast<double>(2 * tp + fp + fn);
        return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
    };

    MicroFResult best;
    best.threshold = -std::numeric_limits<double>::infinity();
    // threshold below everything: every item predicted positive
    std::size_t tp = total_pos;
    std::size_t fp = items.size() - total_pos;
    best.f = f_at(tp, fp);
    best.precision = items.empty() ? 0.0
                                   : static_cast<double>(tp) /
                                         static_cast<double>(tp + fp);
    best.recall = 1.0;

    std::size_t i = 0;
    while (i < items.size()) {
        double s = items[i].score;
        // every item at this score flips to predicted-negative
        while (i < items.size() && items[i].score == s) {
            if (items[i].is_positive)
                --tp;
            else
                --fp;
            ++i;
        }
        double threshold = i < items.size()
                               ? s + (items[i].score - s) / 2.0
                               : std::numeric_limits<double>::infinity();
        double f = f_at(tp, fp);
        if (f > best.f) {
            best.f = f;
            best.threshold = threshold;
            best.precision = (tp + fp) == 0
                                 ? 0.0
                                 : static_cast<double>(tp) /
                                       static_cast<double>(tp + fp);
            best.recall = static_cast<double>(tp) / static_cast<double>(total_pos);
        }
    }
    return best;
}

struct Fold {
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> test_indices;
};

// Deterministic k-fold split: indices are shuffled by the seed and dealt
// into k test folds whose sizes differ by at most one.
inline std::vector<Fold> kfold(std::size_t num_examples, int k, std::uint64_t seed) {
    if (k < 2 || static_cast<std::size_t>(k) > num_examples)
        fail(ErrorCode::BadK,
             "k must satisfy 2 <= k <= m (k=" + std::to_string(k) +
                 ", m=" + std::to_string(num_examples) + ")");
    std::vector<std::size_t> order(num_examples);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<Fold> folds(static_cast<std::size_t>(k));
    std::size_t base = num_examples / static_cast<std::size_t>(k);
    std::size_t extra = num_examples % static_cast<std::size_t>(k);
    std::size_t pos = 0;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::size_t len = base + (f < extra ? 1 : 0);
        folds[f].test_indices.assign(order.begin() + pos, order.begin() + pos + len);
        pos += len;
    }
    for (std::size_t f = 0; f < folds.size(); ++f) {
        for (std::size_t g = 0; g < folds.size(); ++g) {
            if (g == f) continue;
            folds[f].train_indices.insert(folds[f].train_indices.end(),
                                          folds[g].test_indices.begin(),
                                          folds[g].test_indices.end());
        }
        std::sort(folds[f].train_indices.begin(), folds[f].train_indices.end());
        std::sort(folds[f].test_indices.begin(), folds[f].test_indices.end());
    }
    return folds;
}

inline Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices) {
    Dataset out;
    out.num_classes = data.num_classes;
    out.num_features = data.num_features;
    out.class_names = data.class_names;
    out.examples.reserve(indices.size());
    for (std::size_t i : indices) out.examples.push_back(data.examples[i]);
    return out;
}

inline std::size_t count_nonzero(const TrainedModel& model) {
    return model.weights.nonzero_count();
}

inline std::size_t count_nonzero(const EnsembleModel& model) {
    return model.nonzero_count();
}

struct SynthSpec {
    std::size_t num_examples = 0;
    FeatureIndex num_features = 0;
    ClassIndex num_classes = 0;
    double noise_rate = 0.0;
    std::uint64_t seed = 0;
};

// Desk-scale synthetic corpus: feature c is the indicator of class c. Each
// example fires its own indicator with probability 1 - noise, a wrong one
// otherwise, plus background features at rate 0.05. Noise 0 is perfectly
// separable.
inline Dataset synth_generate(const SynthSpec& spec) {
    if (spec.num_classes < 1 || spec.num_examples < 1 ||
        spec.num_features < spec.num_classes || spec.noise_rate < 0.0 ||
        spec.noise_rate > 1.0)
        fail(ErrorCode::BadSpec,
             "synthetic spec needs m >= 1, l >= 1, n >= l, noise in [0,1]");

    std::mt19937_64 rng(spec.seed);
    std::uniform_int_distribution<ClassIndex> pick_class(0, spec.num_classes - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Dataset data;
    data.num_classes = spec.num_classes;
    data.num_features = spec.num_features;
    data.examples.reserve(spec.num_examples);

    for (std::size_t i = 0; i < spec.num_examples; ++i) {
        ClassIndex c = pick_class(rng);
        std::vector<SparseVector::Entry> entries;
        FeatureIndex indicator = c;
        if (unit(rng) < spec.noise_rate && spec.num_classes > 1) {
            ClassIndex wrong = pick_class(rng);
            while (wrong == c) wrong = pick_class(rng);
            indicator = wrong;
        }
        entries.emplace_back(indicator, 1.0);
        for (FeatureIndex j = spec.num_classes; j < spec.num_features; ++j)
            if (unit(rng) < 0.05) entries.emplace_back(j, 1.0);
        data.examples.emplace_back(SparseVector::from_sorted(std::move(entries)),
                                   std::vector<ClassIndex>{c});
    }
    return data;
}

// Pooled per-(example, class) scores for F sweeps. Conditional models score
// by per-example softmax, class-conditional by the full decision value,
// joint by the raw row score; ensembles use member scores (sigmoid for
// conditional members).
inline std::vector<ScoredItem> collect_scored_items(const TrainedModel& model,
                                                    const Dataset& data) {
    std::vector<ScoredItem> items;
    items.reserve(data.size() * static_cast<std::size_t>(model.num_classes()));
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& e = data.examples[i];
        std::vector<double> scores;
        if (model.kind() == DistributionKind::Conditional)
            scores = predict_proba(model, e.x);
        else
            scores = predict(model, e.x).scores;
        for (ClassIndex c = 0; c < model.num_classes(); ++c)
            items.push_back(ScoredItem{scores[static_cast<std::size_t>(c)],
                                       e.has_label(c), i, c});
    }
    return items;
}

inline std::vector<ScoredItem> collect_scored_items(const EnsembleModel& model,
                                                    const Dataset& data) {
    std::vector<ScoredItem> items;
    items.reserve(data.size() * static_cast<std::size_t>(model.num_classes()));
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& e = data.examples[i];
        std::vector<double> scores = member_scores(model, e.x);
        for (ClassIndex c = 0; c < model.num_classes(); ++c)
            items.push_back(ScoredItem{scores[static_cast<std::size_t>(c)],
                                       e.has_label(c), i, c});
    }
    return items;
}

} // namespace sl1max
