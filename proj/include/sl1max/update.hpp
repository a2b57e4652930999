#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "sl1max/stats.hpp"
#include "sl1max/types.hpp"

namespace sl1max {

// A single-coordinate step: add `delta` to weight (class_index, feature_index).
// `predicted_decrease` is the bound value at `delta`; only improving
// proposals (predicted_decrease <= 0) are ever emitted by selection.
struct UpdateProposal {
    ClassIndex class_index = 0;
    FeatureIndex feature_index = 0;
    double delta = 0.0;
    double predicted_decrease = 0.0;
    // Round counter of the state the proposal was scored against; -1 skips
    // the staleness check (free-standing use).
    std::int64_t round = -1;

    bool improving() const noexcept { return delta != 0.0 && predicted_decrease < 0.0; }
};

// Upper bound on the change of the regularized loss when a single weight
// moves by delta:
//   -delta * p~[f] + ln(1 + (e^delta - 1) * q[f]) + beta * (|lambda+delta| - |lambda|)
// Exact for binary features under joint/class-conditional normalization;
// an upper bound otherwise (the conditional variant plugs in q'[f]).
inline double bound_decrease(double delta, double p_tilde_f, double q_f,
                             double lambda, double beta) {
    if (!(q_f >= 0.0 && q_f <= 1.0))
        fail(ErrorCode::DomainError, "model expectation outside [0,1]");
    // ln((1-q) + q e^delta), written to survive large |delta|.
    double log_term;
    if (delta > 0.0) {
        // factor out e^delta: delta + ln((1-q) e^-delta + q)
        log_term = delta + std::log((1.0 - q_f) * std::exp(-delta) + q_f);
    } else {
        double inner = (1.0 - q_f) + q_f * std::exp(delta);
        if (inner <= 0.0)
            fail(ErrorCode::DomainError, "log argument not positive");
        log_term = std::log(inner);
    }
    return -delta * p_tilde_f + log_term +
           beta * (std::abs(lambda + delta) - std::abs(lambda));
}

namespace detail {

// Stationary point of the smooth part of the bound on one side of the kink:
// solves q e^d / (1 + (e^d - 1) q) = r. Returns +/-inf when the root runs
// away (handled by clamping).
inline double one_sided_root(double r, double q) {
    if (q <= 0.0) return std::numeric_limits<double>::infinity();
    if (q >= 1.0) return -std::numeric_limits<double>::infinity();
    if (r >= 1.0) return std::numeric_limits<double>::infinity();
    return std::log(r * (1.0 - q) / ((1.0 - r) * q));
}

} // namespace detail

// Closed-form minimizer of bound_decrease over delta, clamped so the updated
// weight stays within [-lambda_max, lambda_max]. With r+ = p~ - beta the
// positive-side root is valid iff r+ in (0,1) and lambda + delta >= 0;
// symmetrically for r- = p~ + beta on the negative side. When neither root
// is valid the subgradient interval at the kink contains zero and the step
// snaps the weight to zero. Degenerate expectations (q in {0,1}) with no
// finite improving step yield delta = 0.
inline UpdateProposal propose_delta(double p_tilde_f, double q_f, double lambda,
                                    double beta, double lambda_max = kLambdaMax) {
    UpdateProposal prop;
    double lo = -lambda_max - lambda; // delta range keeping |lambda+delta| <= lambda_max
    double hi = lambda_max - lambda;

    double best_delta = -lambda; // kink: snap to zero
    bool have_candidate = false;
    double best_value = 0.0;

    auto consider = [&](double delta) {
        delta = std::clamp(delta, lo, hi);
        double value = bound_decrease(delta, p_tilde_f, q_f, lambda, beta);
        if (!have_candidate || value < best_value) {
            best_delta = delta;
            best_value = value;
            have_candidate = true;
        }
    };

    double r_pos = p_tilde_f - beta;
    if (r_pos > 0.0) {
        double d = detail::one_sided_root(r_pos, q_f);
        if (std::isinf(d) && d > 0.0) {
            consider(hi); // infinite ascent direction, stop at the clamp
        } else if (std::isfinite(d) && lambda + d >= 0.0) {
            consider(d);
        }
    }
    double r_neg = p_tilde_f + beta;
    if (r_neg > 0.0 && r_neg < 1.0) {
        double d = detail::one_sided_root(r_neg, q_f);
        if (std::isinf(d) && d < 0.0) {
            consider(lo);
        } else if (std::isfinite(d) && lambda + d <= 0.0) {
            consider(d);
        }
    }
    if (!have_candidate) consider(-lambda);

    prop.delta = best_delta;
    prop.predicted_decrease = best_value;
    if (prop.predicted_decrease > 0.0 || prop.delta == 0.0) {
        prop.delta = 0.0;
        prop.predicted_decrease = 0.0;
    }
    return prop;
}

// Candidate cache for partial pricing: between full scans only the shortlist
// is re-scored. `rounds_since_refresh` never exceeds `refresh_period`.
struct PricingState {
    std::vector<std::pair<ClassIndex, FeatureIndex>> shortlist;
    int refresh_period = 0;
    int rounds_since_refresh = 0;

    static PricingState with_defaults(FeatureIndex num_features) {
        PricingState p;
        int k = std::max(64, static_cast<int>(num_features) / 50);
        p.refresh_period = k;
        p.shortlist.reserve(static_cast<std::size_t>(k));
        return p;
    }

    int shortlist_capacity() const noexcept { return refresh_period; }

    bool refresh_due() const noexcept {
        return shortlist.empty() || rounds_since_refresh >= refresh_period;
    }
};

struct SelectOptions {
    double eps_loss = 1e-6;      // convergence threshold on best predicted decrease
    double lambda_max = kLambdaMax;
};

// Picks the coordinate whose closed-form step promises the greatest loss
// decrease. On refresh rounds all (d, j) pairs are scanned and the shortlist
// is rebuilt from the best candidates; otherwise only the shortlist is
// re-scored. Ties break toward the lexicographically smallest (d, j).
// Returns nullopt when no candidate improves by more than eps_loss
// (convergence); a shortlist miss forces a full scan before giving up.
//
// `target` and `beta_of` are invocables (d, j) -> double giving the
// empirical mean and the per-coordinate penalty; `expectation` gives the
// current model expectation q[f_{d,j}] (or q'[f_{d,j}] for the conditional
// variant). They must be valid over the full candidate space on refresh
// rounds and over the shortlist otherwise.
template <typename TargetFn, typename ExpectationFn, typename BetaFn>
std::optional<UpdateProposal>
select_update(ClassIndex num_rows, FeatureIndex num_features, TargetFn&& target,
              ExpectationFn&& expectation, const WeightMatrix& weights,
              BetaFn&& beta_of, PricingState& pricing,
              const SelectOptions& opt = {}) {
    UpdateProposal best;
    bool found = false;

    auto score_candidate = [&](ClassIndex d, FeatureIndex j) -> UpdateProposal {
        double p = target(d, j);
        double lambda = weights.get(d, j);
        double beta = beta_of(d, j);
        UpdateProposal prop;
        if (p == 0.0 && beta == 0.0 && lambda == 0.0)
            return prop; // unconstrained dead coordinate, never move it
        prop = propose_delta(p, expectation(d, j), lambda, beta, opt.lambda_max);
        prop.class_index = d;
        prop.feature_index = j;
        return prop;
    };

    auto full_scan = [&]() {
        // candidates better than eps_loss, for shortlist rebuild
        std::vector<std::pair<double, std::pair<ClassIndex, FeatureIndex>>> improving;
        best = UpdateProposal{};
        found = false;
        for (ClassIndex d = 0; d < num_rows; ++d) {
            for (FeatureIndex j = 0; j < num_features; ++j) {
                UpdateProposal prop = score_candidate(d, j);
                if (!prop.improving()) continue;
                if (prop.predicted_decrease < -opt.eps_loss)
                    improving.emplace_back(prop.predicted_decrease,
                                           std::make_pair(d, j));
                if (!found || prop.predicted_decrease < best.predicted_decrease) {
                    best = prop;
                    found = true;
                }
            }
        }
        std::size_t k = static_cast<std::size_t>(
            std::max(1, pricing.shortlist_capacity()));
        if (improving.size() > k) {
            std::nth_element(improving.begin(), improving.begin() + k,
                             improving.end());
            improving.resize(k);
        }
        pricing.shortlist.clear();
        for (const auto& [pd, key] : improving) pricing.shortlist.push_back(key);
        std::sort(pricing.shortlist.begin(), pricing.shortlist.end());
        pricing.rounds_since_refresh = 0;
    };

    if (pricing.refresh_due()) {
        full_scan();
    } else {
        for (const auto& [d, j] : pricing.shortlist) {
            UpdateProposal prop = score_candidate(d, j);
            if (!prop.improving()) continue;
            if (!found || prop.predicted_decrease < best.predicted_decrease) {
                best = prop;
                found = true;
            }
        }
        pricing.rounds_since_refresh += 1;
        if (!found || best.predicted_decrease > -opt.eps_loss) {
            // the cached candidates died down; confirm against a full scan
            full_scan();
        }
    }

    if (!found || best.predicted_decrease > -opt.eps_loss) return std::nullopt;
    return best;
}

} // namespace sl1max
