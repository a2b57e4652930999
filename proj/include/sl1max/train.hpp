#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <thread>
#include <utility>
#include <vector>

#include "sl1max/stats.hpp"
#include "sl1max/types.hpp"
#include "sl1max/update.hpp"

namespace sl1max {

// Normalization scope of one optimization problem. The per-class variant is
// realized as a Global problem with a single weight row, one per class.
enum class NormKind { Global, PerExample };

// One optimization problem over a fixed dataset:
//  - `rows` weight rows to learn;
//  - target_row/target_mass: the empirical distribution the model must match
//    (mass sums to 1; row -1 means the example carries no target mass);
//  - example_weight: under Global normalization, how many copies of the
//    example the model's sample space contains; under PerExample, the
//    example's share in the averaged expectation.
struct ProblemSpec {
    NormKind norm = NormKind::Global;
    ClassIndex rows = 0;
    std::vector<ClassIndex> target_row;
    std::vector<double> target_mass;
    std::vector<double> example_weight;
};

// Tied problem over all classes: joint (global normalizer) or conditional
// (per-example normalizer). Requires single-label data.
inline ProblemSpec tied_problem(const Dataset& data, DistributionKind kind) {
    if (data.examples.empty())
        fail(ErrorCode::EmptyDataset, "cannot train on an empty dataset");
    if (kind == DistributionKind::ClassConditional)
        fail(ErrorCode::InternalError, "class-conditional uses class_problem");
    ProblemSpec spec;
    spec.norm = kind == DistributionKind::Conditional ? NormKind::PerExample
                                                      : NormKind::Global;
    spec.rows = data.num_classes;
    double total = data.total_weight();
    spec.target_row.reserve(data.size());
    spec.target_mass.reserve(data.size());
    spec.example_weight.reserve(data.size());
    for (const auto& e : data.examples) {
        if (e.labels.size() != 1)
            fail(ErrorCode::SingleLabelViolation,
                 "tied training requires exactly one label per example");
        spec.target_row.push_back(e.labels[0]);
        spec.target_mass.push_back(e.weight / total);
        spec.example_weight.push_back(spec.norm == NormKind::Global
                                          ? e.weight
                                          : e.weight / total);
    }
    return spec;
}

// Per-class problem: single weight row, normalizer over every example,
// empirical target restricted to examples of class c.
inline ProblemSpec class_problem(const Dataset& data, ClassIndex c) {
    if (data.examples.empty())
        fail(ErrorCode::EmptyDataset, "cannot train on an empty dataset");
    ProblemSpec spec;
    spec.norm = NormKind::Global;
    spec.rows = 1;
    double class_weight = 0.0;
    for (const auto& e : data.examples) {
        if (e.labels.size() != 1)
            fail(ErrorCode::SingleLabelViolation,
                 "class-conditional training requires exactly one label per example");
        if (e.labels[0] == c) class_weight += e.weight;
    }
    if (class_weight <= 0.0)
        fail(ErrorCode::EmptyClass,
             "class " + std::to_string(c) + " has no training examples");
    for (const auto& e : data.examples) {
        bool hit = e.labels[0] == c;
        spec.target_row.push_back(hit ? 0 : -1);
        spec.target_mass.push_back(hit ? e.weight / class_weight : 0.0);
        spec.example_weight.push_back(e.weight);
    }
    return spec;
}

namespace detail {

// Sum of w * exp(s) terms kept as sum * exp(shift); supports O(1)
// replacement of one term and cheap re-shifting when exponents grow.
class ScaledSum {
public:
    void reset(double shift) {
        shift_ = shift;
        sum_ = 0.0;
    }
    void add_term(double w, double s) { sum_ += w * std::exp(s - shift_); }
    void replace_term(double w, double s_old, double s_new) {
        if (s_new - shift_ > 500.0) rescale(s_new);
        sum_ += w * (std::exp(s_new - shift_) - std::exp(s_old - shift_));
    }
    void rescale(double new_shift) {
        sum_ *= std::exp(shift_ - new_shift);
        shift_ = new_shift;
    }
    double log_value() const { return shift_ + std::log(sum_); }
    bool valid() const { return sum_ > 0.0 && std::isfinite(sum_); }

private:
    double shift_ = 0.0;
    double sum_ = 0.0;
};

} // namespace detail

struct StateOptions {
    double beta = 0.5;
    BetaScaling scaling = BetaScaling::Stddev;
    int recompute_every = 1000; // full normalizer recomputation cadence
    bool trace_loss = true;
};

// Mutable optimization state: dense scores, incrementally maintained
// normalizers and loss, the weight rows being learned, and the precomputed
// empirical targets and penalties. Owned by exactly one training loop.
class TrainState {
public:
    TrainState(const Dataset& data, ProblemSpec spec, WeightMatrix weights,
               StateOptions opt = {})
        : data_(&data), spec_(std::move(spec)), weights_(std::move(weights)),
          opt_(opt) {
        if (weights_.num_rows() != spec_.rows)
            fail(ErrorCode::InternalError, "weight rows do not match problem rows");
        m_ = data.size();
        rows_ = spec_.rows;
        n_ = data.num_features;
        build_columns();
        build_targets();
        rebuild_scores();
        recompute_normalizers();
        reg_ = full_regularizer();
        if (opt_.trace_loss) trace_.emplace_back(0, loss());
    }

    NormKind norm_kind() const noexcept { return spec_.norm; }
    ClassIndex num_rows() const noexcept { return rows_; }
    FeatureIndex num_features() const noexcept { return n_; }
    std::size_t num_examples() const noexcept { return m_; }
    const Dataset& data() const noexcept { return *data_; }
    const WeightMatrix& weights() const noexcept { return weights_; }
    std::int64_t rounds_done() const noexcept { return rounds_; }

    double score(std::size_t i, ClassIndex d) const {
        return scores_[i * static_cast<std::size_t>(rows_) + static_cast<std::size_t>(d)];
    }

    // Empirical target mean of coordinate (d, j).
    double target(ClassIndex d, FeatureIndex j) const {
        return targets_[static_cast<std::size_t>(d) * static_cast<std::size_t>(n_) +
                        static_cast<std::size_t>(j)];
    }

    double beta_of(ClassIndex d, FeatureIndex j) const {
        return scaled_beta(opt_.beta, opt_.scaling, target(d, j), m_);
    }

    double log_norm_global() const { return z_global_.log_value(); }
    double log_norm_example(std::size_t i) const { return z_example_[i].log_value(); }

    // Model expectation q[f_{d,j}] (q'[f_{d,j}] under per-example
    // normalization) computed from the current scores and normalizers.
    double expected_feature(ClassIndex d, FeatureIndex j) const {
        const auto& col = columns_[static_cast<std::size_t>(j)];
        double acc = 0.0;
        if (spec_.norm == NormKind::Global) {
            double log_z = z_global_.log_value();
            for (const auto& [i, v] : col)
                acc += spec_.example_weight[i] * std::exp(score(i, d) - log_z) * v;
        } else {
            for (const auto& [i, v] : col)
                acc += spec_.example_weight[i] *
                       std::exp(score(i, d) - z_example_[i].log_value()) * v;
        }
        return acc;
    }

    // Per-(example, row) expectation weights; expected_feature factors
    // through them. Used to batch the full pricing scans.
    std::vector<double> expectation_weights() const {
        std::vector<double> u(m_ * static_cast<std::size_t>(rows_));
        if (spec_.norm == NormKind::Global) {
            double log_z = z_global_.log_value();
            for (std::size_t i = 0; i < m_; ++i)
                for (ClassIndex d = 0; d < rows_; ++d)
                    u[i * rows_ + d] =
                        spec_.example_weight[i] * std::exp(score(i, d) - log_z);
        } else {
            for (std::size_t i = 0; i < m_; ++i) {
                double log_zi = z_example_[i].log_value();
                for (ClassIndex d = 0; d < rows_; ++d)
                    u[i * rows_ + d] =
                        spec_.example_weight[i] * std::exp(score(i, d) - log_zi);
            }
        }
        return u;
    }

    double expected_feature_cached(const std::vector<double>& u, ClassIndex d,
                                   FeatureIndex j) const {
        const auto& col = columns_[static_cast<std::size_t>(j)];
        double acc = 0.0;
        for (const auto& [i, v] : col) acc += u[i * rows_ + d] * v;
        return acc;
    }

    // Negative log-likelihood part of the loss, from the incremental state.
    double likelihood_loss() const {
        if (spec_.norm == NormKind::Global) return -linear_ + z_global_.log_value();
        return -linear_ + norm_acc_;
    }

    double regularizer() const { return reg_; }
    double loss() const { return likelihood_loss() + reg_; }

    const std::vector<std::pair<std::int64_t, double>>& loss_trace() const {
        return trace_;
    }

    // Applies a proposed step: adjusts the weight, the touched scores, and
    // the affected normalizers incrementally. Examples without the feature
    // are untouched.
    void apply(const UpdateProposal& prop) {
        if (prop.round >= 0 && prop.round != rounds_)
            fail(ErrorCode::StaleProposal,
                 "proposal was scored against round " + std::to_string(prop.round) +
                     " but state is at round " + std::to_string(rounds_));
        const ClassIndex d = prop.class_index;
        const FeatureIndex j = prop.feature_index;
        const double delta = prop.delta;
        if (delta != 0.0) {
            double lambda_old = weights_.get(d, j);
            double lambda_new = lambda_old + delta;
            if (std::abs(lambda_new) > kLambdaMax * (1.0 + 1e-12))
                fail(ErrorCode::NonFiniteState, "update exceeds weight clamp");
            double beta = beta_of(d, j);
            reg_ += beta * (std::abs(lambda_new) - std::abs(lambda_old));
            weights_.set(d, j, lambda_new);

            for (const auto& [i, v] : columns_[static_cast<std::size_t>(j)]) {
                std::size_t idx =
                    i * static_cast<std::size_t>(rows_) + static_cast<std::size_t>(d);
                double s_old = scores_[idx];
                double s_new = s_old + delta * v;
                scores_[idx] = s_new;
                if (spec_.target_row[i] == d) linear_ += spec_.target_mass[i] * delta * v;
                if (spec_.norm == NormKind::Global) {
                    z_global_.replace_term(spec_.example_weight[i], s_old, s_new);
                } else {
                    auto& zi = z_example_[i];
                    double t = spec_.target_mass[i];
                    double before = t != 0.0 ? zi.log_value() : 0.0;
                    zi.replace_term(1.0, s_old, s_new);
                    if (!zi.valid()) recompute_example_norm(i);
                    if (t != 0.0) norm_acc_ += t * (zi.log_value() - before);
                }
            }
            if (spec_.norm == NormKind::Global && !z_global_.valid())
                recompute_global_norm();
        }
        ++rounds_;
        if (opt_.recompute_every > 0 && rounds_ % opt_.recompute_every == 0)
            refresh_incremental_state();
        if (opt_.trace_loss) trace_.emplace_back(rounds_, loss());
        if (!std::isfinite(loss()))
            fail(ErrorCode::NonFiniteState, "loss became non-finite");
    }

    // Relative disagreement between the incremental normalizers and a full
    // recomputation; the incremental path is expected to stay within 1e-9.
    double normalizer_drift() const {
        double worst = 0.0;
        if (spec_.norm == NormKind::Global) {
            double exact = full_log_norm_global();
            worst = std::abs(z_global_.log_value() - exact) /
                    std::max(1.0, std::abs(exact));
        } else {
            for (std::size_t i = 0; i < m_; ++i) {
                double exact = full_log_norm_example(i);
                worst = std::max(worst, std::abs(z_example_[i].log_value() - exact) /
                                            std::max(1.0, std::abs(exact)));
            }
        }
        return worst;
    }

    void recompute_normalizers() {
        if (spec_.norm == NormKind::Global) {
            recompute_global_norm();
        } else {
            z_example_.resize(m_);
            norm_acc_ = 0.0;
            for (std::size_t i = 0; i < m_; ++i) {
                recompute_example_norm(i);
                norm_acc_ += spec_.target_mass[i] * z_example_[i].log_value();
            }
        }
        linear_ = 0.0;
        for (std::size_t i = 0; i < m_; ++i) {
            ClassIndex t = spec_.target_row[i];
            if (t >= 0) linear_ += spec_.target_mass[i] * score(i, t);
        }
    }

    const ProblemSpec& spec() const noexcept { return spec_; }

private:
    void build_columns() {
        columns_.assign(static_cast<std::size_t>(n_), {});
        for (std::size_t i = 0; i < m_; ++i)
            for (const auto& [j, v] : data_->examples[i].x.entries())
                columns_[static_cast<std::size_t>(j)].emplace_back(i, v);
    }

    void build_targets() {
        targets_.assign(static_cast<std::size_t>(rows_) * static_cast<std::size_t>(n_),
                        0.0);
        for (std::size_t i = 0; i < m_; ++i) {
            ClassIndex t = spec_.target_row[i];
            if (t < 0) continue;
            double mass = spec_.target_mass[i];
            for (const auto& [j, v] : data_->examples[i].x.entries())
                targets_[static_cast<std::size_t>(t) * static_cast<std::size_t>(n_) +
                         static_cast<std::size_t>(j)] += mass * v;
        }
    }

    void rebuild_scores() {
        scores_.assign(m_ * static_cast<std::size_t>(rows_), 0.0);
        for (ClassIndex d = 0; d < rows_; ++d) {
            const auto& row = weights_.row(d);
            if (row.empty()) continue;
            for (std::size_t i = 0; i < m_; ++i)
                scores_[i * rows_ + d] = dot(row, data_->examples[i].x);
        }
    }

    void recompute_global_norm() {
        double shift = scores_.empty() ? 0.0 : scores_[0];
        for (std::size_t i = 0; i < m_; ++i)
            for (ClassIndex d = 0; d < rows_; ++d)
                shift = std::max(shift, score(i, d));
        z_global_.reset(shift);
        for (std::size_t i = 0; i < m_; ++i)
            for (ClassIndex d = 0; d < rows_; ++d)
                z_global_.add_term(spec_.example_weight[i], score(i, d));
        if (!z_global_.valid())
            fail(ErrorCode::NonFiniteState, "global normalizer not positive");
    }

    void recompute_example_norm(std::size_t i) {
        double shift = score(i, 0);
        for (ClassIndex d = 1; d < rows_; ++d) shift = std::max(shift, score(i, d));
        z_example_[i].reset(shift);
        for (ClassIndex d = 0; d < rows_; ++d)
            z_example_[i].add_term(1.0, score(i, d));
        if (!z_example_[i].valid())
            fail(ErrorCode::NonFiniteState, "per-example normalizer not positive");
    }

    double full_log_norm_global() const {
        double shift = scores_.empty() ? 0.0 : scores_[0];
        for (std::size_t i = 0; i < m_; ++i)
            for (ClassIndex d = 0; d < rows_; ++d)
                shift = std::max(shift, score(i, d));
        double sum = 0.0;
        for (std::size_t i = 0; i < m_; ++i)
            for (ClassIndex d = 0; d < rows_; ++d)
                sum += spec_.example_weight[i] * std::exp(score(i, d) - shift);
        return shift + std::log(sum);
    }

    double full_log_norm_example(std::size_t i) const {
        double shift = score(i, 0);
        for (ClassIndex d = 1; d < rows_; ++d) shift = std::max(shift, score(i, d));
        double sum = 0.0;
        for (ClassIndex d = 0; d < rows_; ++d) sum += std::exp(score(i, d) - shift);
        return shift + std::log(sum);
    }

    double full_regularizer() const {
        double reg = 0.0;
        for (ClassIndex d = 0; d < rows_; ++d)
            for (const auto& [j, v] : weights_.row(d))
                reg += beta_of(d, j) * std::abs(v);
        return reg;
    }

    void refresh_incremental_state() {
        recompute_normalizers();
        reg_ = full_regularizer();
    }

    const Dataset* data_;
    ProblemSpec spec_;
    WeightMatrix weights_;
    StateOptions opt_;

    std::size_t m_ = 0;
    ClassIndex rows_ = 0;
    FeatureIndex n_ = 0;

    std::vector<std::vector<std::pair<std::size_t, double>>> columns_; // CSC view
    std::vector<double> targets_;  // rows x n empirical means
    std::vector<double> scores_;   // m x rows
    detail::ScaledSum z_global_;
    std::vector<detail::ScaledSum> z_example_;
    double linear_ = 0.0;   // sum_i t_i * score(i, target_i)
    double norm_acc_ = 0.0; // sum_i t_i * log Z(x_i), per-example norm only
    double reg_ = 0.0;
    std::int64_t rounds_ = 0;
    std::vector<std::pair<std::int64_t, double>> trace_;
};

inline double expected_feature(const TrainState& state, ClassIndex d, FeatureIndex j) {
    return state.expected_feature(d, j);
}

inline void apply_update(TrainState& state, const UpdateProposal& prop) {
    state.apply(prop);
}

struct TrainOptions {
    double beta = 0.5;
    BetaScaling scaling = BetaScaling::Stddev;
    std::int64_t max_rounds = 0; // 0: stop on the candidate-evaluation budget
    double eps_loss = 1e-6;
    double lambda_max = kLambdaMax;
    int shortlist_size = 0;  // 0: max(64, n/50)
    int refresh_period = 0;  // 0: equal to shortlist size
    int recompute_every = 1000;
    // With max_rounds == 0 a problem stops after roughly
    // budget_factor * num_features * num_rows candidate evaluations.
    std::int64_t budget_factor = 50;
    const Dataset* validation = nullptr;
    int patience = 10;   // early-stop after this many flat checkpoints
    int eval_every = 200; // rounds between validation checkpoints
    int parallel_classes = 1;
    bool trace_loss = true;

    StateOptions state_options() const {
        return StateOptions{beta, scaling, recompute_every, trace_loss};
    }
};

struct TrainedModel {
    WeightMatrix weights;
    std::vector<double> log_norm_per_class; // class-conditional only
    std::vector<double> log_prior;          // ln p~(c)
    double beta = 0.5;
    BetaScaling scaling = BetaScaling::Stddev;
    std::int64_t rounds_done = 0;
    FeatureIndex num_features = 0;
    std::vector<std::string> class_names;

    DistributionKind kind() const noexcept { return weights.kind(); }
    ClassIndex num_classes() const noexcept { return weights.num_rows(); }
};

namespace detail {

struct RunResult {
    std::int64_t rounds = 0;
    WeightMatrix weights;
};

// Sequential single-coordinate descent until convergence, the round cap or
// evaluation budget, or validation early stopping. Returns the weights to
// keep (the best validation checkpoint when a validation score is given).
inline RunResult run_updates(TrainState& st, const TrainOptions& opt,
                             const std::function<double(const WeightMatrix&)>& val_score) {
    PricingState pricing;
    int k = opt.shortlist_size > 0
                ? opt.shortlist_size
                : std::max(64, static_cast<int>(st.num_features()) / 50);
    pricing.refresh_period = opt.refresh_period > 0 ? opt.refresh_period : k;
    SelectOptions sel{opt.eps_loss, opt.lambda_max};

    const std::int64_t full_cost =
        static_cast<std::int64_t>(st.num_rows()) * st.num_features();
    const std::int64_t budget = opt.budget_factor * full_cost;

    std::int64_t evals = 0;
    double best_val = std::numeric_limits<double>::infinity();
    WeightMatrix best_weights;
    int flat_checkpoints = 0;

    auto target = [&](ClassIndex d, FeatureIndex j) { return st.target(d, j); };
    auto beta_fn = [&](ClassIndex d, FeatureIndex j) { return st.beta_of(d, j); };

    while (true) {
        if (opt.max_rounds > 0 && st.rounds_done() >= opt.max_rounds) break;
        if (opt.max_rounds == 0 && evals >= budget) break;

        bool refresh = pricing.refresh_due();
        std::vector<double> cache;
        if (refresh) cache = st.expectation_weights();
        auto q = [&](ClassIndex d, FeatureIndex j) {
            return cache.empty() ? st.expected_feature(d, j)
                                 : st.expected_feature_cached(cache, d, j);
        };
        evals += refresh ? full_cost
                         : static_cast<std::int64_t>(pricing.shortlist.size());

        auto prop = select_update(st.num_rows(), st.num_features(), target, q,
                                  st.weights(), beta_fn, pricing, sel);
        if (!prop) break; // converged
        prop->round = st.rounds_done();
        st.apply(*prop);

        if (val_score && opt.eval_every > 0 &&
            st.rounds_done() % opt.eval_every == 0) {
            double v = val_score(st.weights());
            if (v < best_val - 1e-12) {
                best_val = v;
                best_weights = st.weights();
                flat_checkpoints = 0;
            } else if (++flat_checkpoints >= opt.patience) {
                break;
            }
        }
    }

    RunResult res;
    res.rounds = st.rounds_done();
    if (val_score && std::isfinite(best_val)) {
        double final_v = val_score(st.weights());
        res.weights = final_v < best_val ? st.weights() : best_weights;
    } else {
        res.weights = st.weights();
    }
    return res;
}

// Runs fn(c) for every class, optionally across threads. Class problems are
// independent, so the result set is identical regardless of thread count.
template <typename Fn>
void for_each_class(ClassIndex num_classes, int threads, Fn&& fn) {
    if (threads <= 1 || num_classes <= 1) {
        for (ClassIndex c = 0; c < num_classes; ++c) fn(c);
        return;
    }
    std::atomic<ClassIndex> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&]() {
        while (true) {
            ClassIndex c = next.fetch_add(1);
            if (c >= num_classes) return;
            try {
                fn(c);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    int count = std::min<int>(threads, num_classes);
    pool.reserve(static_cast<std::size_t>(count));
    for (int t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline double top_class_error_on(const WeightMatrix& weights, const Dataset& data) {
    if (data.examples.empty()) return 0.0;
    std::size_t wrong = 0;
    for (const auto& e : data.examples) {
        ClassIndex best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (ClassIndex c = 0; c < weights.num_rows(); ++c) {
            double s = dot(weights.row(c), e.x);
            if (s > best_score) {
                best_score = s;
                best = c;
            }
        }
        if (!e.has_label(best)) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(data.size());
}

// Validation likelihood of one class-conditional subproblem, for early
// stopping of separately trained classes (no joint error signal exists).
inline double class_validation_loss(const WeightMatrix& weights, const Dataset& valid,
                                    ClassIndex c) {
    double shift = 0.0;
    std::vector<double> scores(valid.size());
    for (std::size_t i = 0; i < valid.size(); ++i) {
        scores[i] = dot(weights.row(0), valid.examples[i].x);
        shift = std::max(shift, scores[i]);
    }
    double z = 0.0;
    for (std::size_t i = 0; i < valid.size(); ++i)
        z += valid.examples[i].weight * std::exp(scores[i] - shift);
    double log_z = shift + std::log(z);
    double acc = 0.0, w_class = 0.0;
    for (std::size_t i = 0; i < valid.size(); ++i) {
        const auto& e = valid.examples[i];
        if (!e.has_label(c)) continue;
        acc += e.weight * (scores[i] - log_z);
        w_class += e.weight;
    }
    if (w_class <= 0.0) return 0.0; // class absent from validation: no signal
    return -acc / w_class;
}

} // namespace detail

// Trains one model of the given kind. Multi-label data must be reduced to
// single-label form first (expand) -- this layer requires one label per
// example. Class-conditional training solves one independent problem per
// class, optionally in parallel; the result is identical either way.
inline TrainedModel train(const Dataset& data, DistributionKind kind,
                          const TrainOptions& opt = {}) {
    data.validate();
    if (data.examples.empty())
        fail(ErrorCode::EmptyDataset, "cannot train on an empty dataset");
    EmpiricalStats stats = empirical_stats(data, /*multi_label_mode=*/false);

    TrainedModel model;
    model.beta = opt.beta;
    model.scaling = opt.scaling;
    model.num_features = data.num_features;
    model.class_names = data.class_names;
    model.log_prior.resize(static_cast<std::size_t>(data.num_classes));
    for (ClassIndex c = 0; c < data.num_classes; ++c)
        model.log_prior[static_cast<std::size_t>(c)] =
            stats.class_prior(c) > 0.0 ? std::log(stats.class_prior(c))
                                       : -std::numeric_limits<double>::infinity();

    if (kind == DistributionKind::ClassConditional) {
        for (ClassIndex c = 0; c < data.num_classes; ++c)
            if (stats.class_weight(c) <= 0.0)
                fail(ErrorCode::EmptyClass,
                     "class " + std::to_string(c) + " has no training examples");

        model.weights = WeightMatrix(data.num_classes, kind);
        model.log_norm_per_class.resize(static_cast<std::size_t>(data.num_classes));
        std::vector<std::int64_t> rounds(static_cast<std::size_t>(data.num_classes), 0);
        std::mutex model_mutex;

        detail::for_each_class(data.num_classes, opt.parallel_classes, [&](ClassIndex c) {
            TrainState st(data, class_problem(data, c),
                          WeightMatrix(1, DistributionKind::ClassConditional),
                          opt.state_options());
            std::function<double(const WeightMatrix&)> val;
            if (opt.validation)
                val = [&, c](const WeightMatrix& w) {
                    return detail::class_validation_loss(w, *opt.validation, c);
                };
            auto res = detail::run_updates(st, opt, val);
            // log Z(c) of the weights actually kept
            TrainState final_state(data, class_problem(data, c), res.weights,
                                   StateOptions{opt.beta, opt.scaling, 0, false});
            double log_z = final_state.log_norm_global();
            std::lock_guard<std::mutex> lock(model_mutex);
            for (const auto& [j, v] : res.weights.row(0)) model.weights.set(c, j, v);
            model.log_norm_per_class[static_cast<std::size_t>(c)] = log_z;
            rounds[static_cast<std::size_t>(c)] = res.rounds;
        });
        for (auto r : rounds) model.rounds_done += r;
        return model;
    }

    TrainState st(data, tied_problem(data, kind), WeightMatrix(data.num_classes, kind),
                  opt.state_options());
    std::function<double(const WeightMatrix&)> val;
    if (opt.validation)
        val = [&](const WeightMatrix& w) {
            return detail::top_class_error_on(w, *opt.validation);
        };
    auto res = detail::run_updates(st, opt, val);
    model.weights = res.weights;
    model.rounds_done = res.rounds;
    return model;
}

// Regularized loss of a trained model on a dataset. Class-conditional models
// report the sum of the per-class problem losses.
inline double loss(const TrainedModel& model, const Dataset& data) {
    StateOptions sopt{model.beta, model.scaling, 0, false};
    if (model.kind() == DistributionKind::ClassConditional) {
        double total = 0.0;
        for (ClassIndex c = 0; c < model.num_classes(); ++c) {
            WeightMatrix row(1, DistributionKind::ClassConditional);
            for (const auto& [j, v] : model.weights.row(c)) row.set(0, j, v);
            TrainState st(data, class_problem(data, c), row, sopt);
            total += st.loss();
        }
        return total;
    }
    TrainState st(data, tied_problem(data, model.kind()), model.weights, sopt);
    return st.loss();
}

struct Prediction {
    ClassIndex top = 0;
    std::vector<double> scores; // per-class decision values
};

// Joint and conditional models decide by the raw score; class-conditional
// models need the per-class normalizer and the prior. Ties break toward the
// lowest class index.
inline Prediction predict(const TrainedModel& model, const SparseVector& x) {
    Prediction pred;
    ClassIndex l = model.num_classes();
    pred.scores.resize(static_cast<std::size_t>(l));
    for (ClassIndex c = 0; c < l; ++c) {
        double s = dot(model.weights.row(c), x);
        if (model.kind() == DistributionKind::ClassConditional)
            s += -model.log_norm_per_class[static_cast<std::size_t>(c)] +
                 model.log_prior[static_cast<std::size_t>(c)];
        pred.scores[static_cast<std::size_t>(c)] = s;
    }
    pred.top = 0;
    for (ClassIndex c = 1; c < l; ++c)
        if (pred.scores[static_cast<std::size_t>(c)] >
            pred.scores[static_cast<std::size_t>(pred.top)])
            pred.top = c;
    return pred;
}

// Per-class posterior; only the conditional variant normalizes per example,
// the other kinds cannot produce one from their stored quantities.
inline std::vector<double> predict_proba(const TrainedModel& model,
                                         const SparseVector& x) {
    if (model.kind() != DistributionKind::Conditional)
        fail(ErrorCode::Unsupported,
             "per-example class posteriors require a conditional model");
    ClassIndex l = model.num_classes();
    std::vector<double> p(static_cast<std::size_t>(l));
    double shift = -std::numeric_limits<double>::infinity();
    for (ClassIndex c = 0; c < l; ++c) {
        p[static_cast<std::size_t>(c)] = dot(model.weights.row(c), x);
        shift = std::max(shift, p[static_cast<std::size_t>(c)]);
    }
    double z = 0.0;
    for (auto& v : p) {
        v = std::exp(v - shift);
        z += v;
    }
    for (auto& v : p) v /= z;
    return p;
}

} // namespace sl1max
