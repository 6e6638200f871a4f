#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "augment.hpp"
#include "core.hpp"
#include "csv.hpp"
#include "error.hpp"
#include "features.hpp"

namespace robust_bandit {

inline double sigmoid(double z) noexcept {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw bandit_error("dimension_mismatch", "vector lengths differ");
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// Weight smoothing toward the average of recent runs.
struct SmoothingConfig {
    double lambda = 0.25;
    int q = 5;

    void validate() const {
        if (!(lambda >= 0.0)) throw bandit_error("invalid_config", "lambda must be non-negative");
        if (q < 1) throw bandit_error("invalid_config", "q must be at least 1");
    }
};

struct TrainConfig {
    int epochs = 3;
    double learning_rate = 0.05;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::size_t batch_size = 256;  // 0 = full batch
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (epochs < 1) throw bandit_error("invalid_config", "epochs must be at least 1");
        if (!(learning_rate > 0.0)) throw bandit_error("invalid_config", "learning rate must be positive");
        if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
            throw bandit_error("invalid_config", "Adam moment parameters must lie in [0, 1)");
    }
};

struct WeightSnapshot {
    int run_index = 0;
    std::vector<double> weights;

    friend bool operator==(const WeightSnapshot&, const WeightSnapshot&) = default;
};

struct ArmPosterior {
    std::vector<double> variance;
    ArmState state = ArmState::active;

    friend bool operator==(const ArmPosterior&, const ArmPosterior&) = default;
};

// Shared mean weights, one diagonal variance vector per arm, and the recent
// mean-weight trajectory used as the smoothing reference.
class ModelState {
public:
    ModelState() = default;
    ModelState(FeatureSchema schema, double prior_variance = 1.0, std::size_t history_depth = 10)
        : schema_(std::move(schema)),
          mean_(schema_.dim(), 0.0),
          prior_variance_(prior_variance),
          history_depth_(std::max<std::size_t>(history_depth, 1)) {
        if (!(prior_variance_ > 0.0)) throw bandit_error("invalid_config", "prior variance must be positive");
    }

    const FeatureSchema& schema() const noexcept { return schema_; }
    std::string fingerprint() const { return schema_.fingerprint(); }
    std::size_t dim() const noexcept { return mean_.size(); }

    const std::vector<double>& mean() const noexcept { return mean_; }
    void set_mean(std::vector<double> w) {
        if (w.size() != dim()) throw bandit_error("dimension_mismatch", "mean weight length differs from schema");
        mean_ = std::move(w);
    }

    double prior_variance() const noexcept { return prior_variance_; }

    // Index of the last trained run; -1 before any training.
    int run_index() const noexcept { return run_index_; }

    const std::deque<WeightSnapshot>& history() const noexcept { return history_; }
    std::size_t history_depth() const noexcept { return history_depth_; }

    const std::map<std::string, ArmPosterior>& arms() const noexcept { return arms_; }

    const ArmPosterior& arm(std::string_view id) const {
        auto it = arms_.find(std::string(id));
        if (it == arms_.end()) throw bandit_error("unknown_arm", "no posterior for title '" + std::string(id) + "'");
        return it->second;
    }

    const ArmPosterior& active_arm(std::string_view id) const {
        const auto& a = arm(id);
        if (a.state != ArmState::active)
            throw bandit_error("arm_not_active", "title '" + std::string(id) + "' has exited");
        return a;
    }

    // Fresh prior variance for a new arm; a returning arm keeps its posterior.
    void provision_arm(const std::string& id) {
        auto [it, inserted] = arms_.try_emplace(id);
        if (inserted) it->second.variance.assign(dim(), prior_variance_);
        it->second.state = ArmState::active;
    }

    void retire_arm(const std::string& id) {
        auto it = arms_.find(id);
        if (it == arms_.end()) throw bandit_error("unknown_arm", "no posterior for title '" + id + "'");
        it->second.state = ArmState::exited;
    }

    // Matches arm lifecycle to the catalog: provisions new actives, retires exits.
    void sync_arms(const Catalog& catalog) {
        for (const auto& a : catalog.arms()) {
            if (a.is_active()) provision_arm(a.title_id);
            else if (arms_.count(a.title_id)) arms_[a.title_id].state = ArmState::exited;
        }
    }

    void set_arm_variance(const std::string& id, std::vector<double> variance) {
        if (variance.size() != dim()) throw bandit_error("dimension_mismatch", "variance length differs from schema");
        for (double v : variance)
            if (!(v > 0.0)) throw bandit_error("invalid_variance", "variances must be positive");
        arms_[id].variance = std::move(variance);
    }

    void push_history(int run_index, std::vector<double> weights) {
        if (!history_.empty() && run_index != history_.back().run_index + 1)
            throw bandit_error("history_gap", "weight history must advance one run at a time");
        history_.push_back(WeightSnapshot{run_index, std::move(weights)});
        while (history_.size() > history_depth_) history_.pop_front();
        run_index_ = run_index;
    }

    friend bool operator==(const ModelState&, const ModelState&) = default;

private:
    friend ModelState restore(const json& doc);

    FeatureSchema schema_;
    std::vector<double> mean_;
    double prior_variance_ = 1.0;
    std::map<std::string, ArmPosterior> arms_;
    std::deque<WeightSnapshot> history_;
    std::size_t history_depth_ = 10;
    int run_index_ = -1;
};

// Elementwise mean of the last min(q, |history|) weight vectors; nullopt on
// an empty history, in which case smoothing is skipped for the run.
inline std::optional<std::vector<double>> smooth_reference(const std::deque<WeightSnapshot>& history, int q) {
    if (history.empty()) return std::nullopt;
    if (q < 1) throw bandit_error("invalid_config", "q must be at least 1");
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(q), history.size());
    std::vector<double> out(history.back().weights.size(), 0.0);
    for (auto it = history.end() - static_cast<std::ptrdiff_t>(take); it != history.end(); ++it) {
        if (it->weights.size() != out.size()) throw bandit_error("dimension_mismatch", "history entries differ in length");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += it->weights[i];
    }
    for (auto& v : out) v /= static_cast<double>(take);
    return out;
}

// lambda * || mask .* (w - reference) ||_2, unsquared.
inline double l2_smoothing_loss(std::span<const double> w, std::span<const double> reference, double lambda,
                                std::span<const double> mask) {
    if (w.size() != reference.size() || w.size() != mask.size())
        throw bandit_error("dimension_mismatch", "smoothing loss inputs differ in length");
    double sq = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = mask[i] * (w[i] - reference[i]);
        sq += d * d;
    }
    return lambda * std::sqrt(sq);
}

// Gradient of l2_smoothing_loss; the zero vector at w == reference.
inline std::vector<double> l2_smoothing_subgradient(std::span<const double> w, std::span<const double> reference,
                                                    double lambda, std::span<const double> mask) {
    if (w.size() != reference.size() || w.size() != mask.size())
        throw bandit_error("dimension_mismatch", "smoothing loss inputs differ in length");
    std::vector<double> g(w.size(), 0.0);
    double sq = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = mask[i] * (w[i] - reference[i]);
        sq += d * d;
    }
    if (sq == 0.0 || lambda == 0.0) return g;
    const double scale = lambda / std::sqrt(sq);
    for (std::size_t i = 0; i < w.size(); ++i) g[i] = scale * mask[i] * (w[i] - reference[i]);
    return g;
}

// Proximal map of lambda * || mask .* (w - reference) ||_2 in the diagonal
// metric `metric`: argmin_u lambda ||mask (u - ref)|| + 1/2 sum metric_i (u_i - y_i)^2.
// Unmasked coordinates are returned unchanged. The masked offset either
// collapses onto the reference or solves a one-dimensional equation in the
// shrink factor, found by bisection.
inline std::vector<double> l2_smoothing_prox(std::span<const double> y, std::span<const double> reference, double lambda,
                                             std::span<const double> mask, std::span<const double> metric) {
    if (y.size() != reference.size() || y.size() != mask.size() || y.size() != metric.size())
        throw bandit_error("dimension_mismatch", "smoothing prox inputs differ in length");
    std::vector<double> out(y.begin(), y.end());
    if (lambda <= 0.0) return out;
    std::vector<std::size_t> idx;
    double pull = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (mask[i] != 0.0) {
            idx.push_back(i);
            const double t = metric[i] * (y[i] - reference[i]);
            pull += t * t;
        }
    if (std::sqrt(pull) <= lambda) {
        for (auto i : idx) out[i] = reference[i];
        return out;
    }
    // offset_i(s) = metric_i e_i / (metric_i + s); find s with s * ||offset(s)|| = lambda
    auto excess = [&](double s) {
        double sq = 0.0;
        for (auto i : idx) {
            const double d = metric[i] * (y[i] - reference[i]) / (metric[i] + s);
            sq += d * d;
        }
        return s * std::sqrt(sq) - lambda;
    };
    double lo = 0.0, hi = 1.0;
    while (excess(hi) < 0.0) hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (excess(mid) < 0.0 ? lo : hi) = mid;
    }
    const double s = 0.5 * (lo + hi);
    for (auto i : idx) out[i] = reference[i] + metric[i] * (y[i] - reference[i]) / (metric[i] + s);
    return out;
}

// Dense row-major design matrix with binary labels.
struct EncodedRows {
    std::size_t dim = 0;
    std::vector<double> x;
    std::vector<double> y;

    std::size_t size() const noexcept { return y.size(); }
    std::span<const double> row(std::size_t i) const { return {x.data() + i * dim, dim}; }
};

inline EncodedRows encode_rows(const std::vector<TrainingExample>& examples, const FeatureSchema& schema) {
    EncodedRows rows;
    rows.dim = schema.dim();
    rows.x.reserve(examples.size() * rows.dim);
    rows.y.reserve(examples.size());
    for (const auto& e : examples) {
        auto v = encode(e.fields, schema);
        rows.x.insert(rows.x.end(), v.begin(), v.end());
        rows.y.push_back(e.reward ? 1.0 : 0.0);
    }
    return rows;
}

inline double mean_bce(std::span<const double> w, const EncodedRows& rows) {
    if (rows.size() == 0) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double z = dot(w, rows.row(i));
        // log(1 + e^z) - y z, stable for both signs of z
        const double softplus = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        total += softplus - rows.y[i] * z;
    }
    return total / static_cast<double>(rows.size());
}

// A training set bound to the schema it was featurized against.
struct TrainingSet {
    std::string schema_fingerprint;
    std::vector<TrainingExample> examples;
};

struct TrainDiagnostics {
    std::vector<double> epoch_loss;  // mean BCE over all rows after each epoch
    double smoothing_loss = 0.0;     // at the final weights; 0 without a reference
    bool regularized = false;
    std::size_t variance_rows = 0;
};

// Precision update over the rows that are allowed to touch variances:
// 1/var_i += sum x_i^2 p (1 - p) with p = sigmoid(w . x).
inline std::vector<double> update_variance(std::span<const double> variance, std::span<const double> w,
                                           const EncodedRows& rows) {
    std::vector<double> precision(variance.size());
    for (std::size_t i = 0; i < variance.size(); ++i) precision[i] = 1.0 / variance[i];
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto x = rows.row(r);
        const double p = sigmoid(dot(w, x));
        const double curvature = p * (1.0 - p);
        for (std::size_t i = 0; i < x.size(); ++i) precision[i] += x[i] * x[i] * curvature;
    }
    std::vector<double> out(variance.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / precision[i];
    return out;
}

// Applies the variance step for every arm present in `examples`, skipping
// rows flagged variance_excluded.
inline void update_arm_variances(ModelState& state, const std::vector<TrainingExample>& examples, std::size_t* used = nullptr) {
    std::map<std::string, std::vector<TrainingExample>> by_arm;
    std::size_t count = 0;
    for (const auto& e : examples) {
        if (e.variance_excluded) continue;
        by_arm[e.title_id].push_back(e);
        ++count;
    }
    for (const auto& [id, rows] : by_arm) {
        const auto& posterior = state.active_arm(id);
        state.set_arm_variance(id, update_variance(posterior.variance, state.mean(), encode_rows(rows, state.schema())));
    }
    if (used) *used = count;
}

// One incremental run: Adam over mean BCE plus the smoothing loss (as a
// proximal step), starting from the current mean; then the per-arm variance step; then the new mean
// is appended to the history.
inline ModelState train_incremental(const ModelState& state, const TrainingSet& set, const TrainConfig& train_cfg,
                                    const SmoothingConfig& smooth_cfg, TrainDiagnostics* diag = nullptr) {
    train_cfg.validate();
    smooth_cfg.validate();
    if (set.schema_fingerprint != state.fingerprint())
        throw bandit_error("schema_mismatch", "training set schema " + set.schema_fingerprint +
                                                  " does not match model schema " + state.fingerprint());
    for (const auto& e : set.examples) state.active_arm(e.title_id);

    ModelState next = state;
    TrainDiagnostics local;
    const auto rows = encode_rows(set.examples, state.schema());
    const std::size_t d = state.dim();
    std::vector<double> w = state.mean();

    std::optional<std::vector<double>> reference;
    if (smooth_cfg.lambda > 0.0) reference = smooth_reference(state.history(), smooth_cfg.q);
    const auto mask = state.schema().regularization_mask();
    local.regularized = reference.has_value();

    if (rows.size() > 0) {
        std::mt19937_64 rng(train_cfg.rng_seed);
        std::vector<std::size_t> order(rows.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        const std::size_t batch = train_cfg.batch_size == 0 ? rows.size() : std::min(train_cfg.batch_size, rows.size());
        std::vector<double> m(d, 0.0), v(d, 0.0), grad(d), metric(d, 1.0);
        double beta1_pow = 1.0, beta2_pow = 1.0;

        for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
            if (batch < rows.size()) std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t start = 0; start < rows.size(); start += batch) {
                const std::size_t stop = std::min(start + batch, rows.size());
                std::fill(grad.begin(), grad.end(), 0.0);
                for (std::size_t k = start; k < stop; ++k) {
                    auto x = rows.row(order[k]);
                    const double residual = sigmoid(dot(w, x)) - rows.y[order[k]];
                    for (std::size_t i = 0; i < d; ++i) grad[i] += residual * x[i];
                }
                const double inv = 1.0 / static_cast<double>(stop - start);
                for (auto& g : grad) g *= inv;
                beta1_pow *= train_cfg.adam_beta1;
                beta2_pow *= train_cfg.adam_beta2;
                for (std::size_t i = 0; i < d; ++i) {
                    m[i] = train_cfg.adam_beta1 * m[i] + (1.0 - train_cfg.adam_beta1) * grad[i];
                    v[i] = train_cfg.adam_beta2 * v[i] + (1.0 - train_cfg.adam_beta2) * grad[i] * grad[i];
                    const double m_hat = m[i] / (1.0 - beta1_pow);
                    const double v_hat = v[i] / (1.0 - beta2_pow);
                    metric[i] = (std::sqrt(v_hat) + train_cfg.adam_epsilon) / train_cfg.learning_rate;
                    w[i] -= m_hat / metric[i];
                }
                // the norm is not differentiable at the reference; a prox step in
                // Adam's own scaling settles on it instead of oscillating around it
                if (reference) w = l2_smoothing_prox(w, *reference, smooth_cfg.lambda, mask, metric);
            }
            const double loss = mean_bce(w, rows);
            if (!std::isfinite(loss))
                throw bandit_error("nan_loss", "training loss became non-finite at epoch " + std::to_string(epoch));
            local.epoch_loss.push_back(loss);
        }
    }
    if (reference) local.smoothing_loss = l2_smoothing_loss(w, *reference, smooth_cfg.lambda, mask);

    next.set_mean(w);
    update_arm_variances(next, set.examples, &local.variance_rows);
    next.push_history(state.run_index() + 1, w);
    if (diag) *diag = std::move(local);
    return next;
}

// Posterior-mean click probability, no sampling.
inline double mean_score(const ModelState& state, std::string_view arm, std::span<const double> x) {
    state.active_arm(arm);
    return sigmoid(dot(state.mean(), x));
}

// Draws w ~ N(mean, diag(var_arm)) and returns sigmoid(w . x). The logit
// w . x is Gaussian with mean mean.x and variance sum var_i x_i^2, so one
// normal draw samples it exactly.
template <class Rng>
double thompson_score(const ModelState& state, std::string_view arm, std::span<const double> x, Rng& rng) {
    const auto& posterior = state.active_arm(arm);
    if (x.size() != state.dim()) throw bandit_error("dimension_mismatch", "feature vector length differs from schema");
    double mu = 0.0, var = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mu += state.mean()[i] * x[i];
        var += posterior.variance[i] * x[i] * x[i];
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    return sigmoid(mu + std::sqrt(var) * normal(rng));
}

enum class ScoringMode { thompson, posterior_mean };

struct ScoredTitle {
    std::string title_id;
    double score = 0.0;
};

// Scores and ranks the active titles of one catalog snapshot. Feature
// vectors only change with the recency bin and the cold-start window, so
// logit moments are cached per (title, bin, cold) state.
class Ranker {
public:
    Ranker(const ModelState& state, const Catalog& catalog, const NdsTable& nds, ScoringMode mode = ScoringMode::thompson)
        : state_(state), nds_(nds), mode_(mode), arms_(catalog.active_arms()) {
        if (arms_.empty()) throw bandit_error("empty_catalog", "no active titles to rank");
        for (const auto& a : arms_) state_.active_arm(a.title_id);
        cache_.resize(arms_.size());
    }

    const std::vector<TitleArm>& arms() const noexcept { return arms_; }

    template <class Rng>
    std::vector<ScoredTitle> rank(double now, Rng& rng) {
        std::vector<ScoredTitle> out;
        out.reserve(arms_.size());
        for (std::size_t i = 0; i < arms_.size(); ++i) {
            const auto& moments = moments_for(i, now);
            double z = moments.mean;
            // fresh distribution per arm: same draws as thompson_score
            if (mode_ == ScoringMode::thompson) z += moments.sd * std::normal_distribution<double>(0.0, 1.0)(rng);
            out.push_back(ScoredTitle{arms_[i].title_id, sigmoid(z)});
        }
        std::sort(out.begin(), out.end(), [](const ScoredTitle& a, const ScoredTitle& b) {
            return a.score != b.score ? a.score > b.score : a.title_id < b.title_id;
        });
        return out;
    }

private:
    struct Moments {
        double mean = 0.0;
        double sd = 0.0;
    };

    const Moments& moments_for(std::size_t i, double now) {
        const auto& arm = arms_[i];
        const auto& binning = state_.schema().binning();
        const double age = arm.hours_since_launch(now);
        const int key = recency_bin(age, binning) * 2 + (arm.is_high_priority() && age < binning.first_bin_hours());
        auto& slot = cache_[i];
        auto it = slot.find(key);
        if (it != slot.end()) return it->second;
        const auto x = featurize(arm, now, nds_, state_.schema());
        const auto& var = state_.arm(arm.title_id).variance;
        Moments mo;
        double s2 = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) {
            mo.mean += state_.mean()[k] * x[k];
            s2 += var[k] * x[k] * x[k];
        }
        mo.sd = std::sqrt(s2);
        return slot.emplace(key, mo).first->second;
    }

    const ModelState& state_;
    const NdsTable& nds_;
    ScoringMode mode_;
    std::vector<TitleArm> arms_;
    std::vector<std::unordered_map<int, Moments>> cache_;
};

// Descending by score, ties by title id.
template <class Rng>
std::vector<ScoredTitle> rank_titles(const ModelState& state, const Catalog& catalog, const NdsTable& nds, double now,
                                     Rng& rng, ScoringMode mode = ScoringMode::thompson) {
    Ranker ranker(state, catalog, nds, mode);
    return ranker.rank(now, rng);
}

inline constexpr const char* checkpoint_format = "robust_bandit.checkpoint/1";

inline json checkpoint(const ModelState& state, const json& config_echo = json::object()) {
    json arms = json::object();
    for (const auto& [id, p] : state.arms()) arms[id] = json{{"state", p.state}, {"variance", p.variance}};
    json history = json::array();
    for (const auto& h : state.history()) history.push_back(json{{"run_index", h.run_index}, {"weights", h.weights}});
    return json{{"format", checkpoint_format},
                {"run_index", state.run_index()},
                {"schema", state.schema()},
                {"prior_variance", state.prior_variance()},
                {"W", state.mean()},
                {"arms", arms},
                {"history", history},
                {"history_depth", state.history_depth()},
                {"config", config_echo}};
}

inline ModelState restore(const json& doc) {
    if (doc.value("format", std::string{}) != checkpoint_format)
        throw bandit_error("bad_checkpoint", "not a model checkpoint document");
    ModelState state(doc.at("schema").get<FeatureSchema>(), doc.at("prior_variance").get<double>(),
                     doc.at("history_depth").get<std::size_t>());
    state.set_mean(doc.at("W").get<std::vector<double>>());
    for (const auto& [id, a] : doc.at("arms").items()) {
        state.set_arm_variance(id, a.at("variance").get<std::vector<double>>());
        state.arms_[id].state = a.at("state").get<ArmState>();
    }
    for (const auto& h : doc.at("history")) {
        auto weights = h.at("weights").get<std::vector<double>>();
        if (weights.size() != state.dim()) throw bandit_error("bad_checkpoint", "history entry length differs from schema");
        const int run = h.at("run_index").get<int>();
        if (!state.history_.empty() && run != state.history_.back().run_index + 1)
            throw bandit_error("bad_checkpoint", "weight history has gaps");
        state.history_.push_back(WeightSnapshot{run, std::move(weights)});
    }
    state.run_index_ = doc.at("run_index").get<int>();
    return state;
}

// Restores into an experiment whose schema is fixed; rejects any other schema.
inline ModelState restore(const json& doc, const FeatureSchema& expected) {
    auto state = restore(doc);
    if (state.fingerprint() != expected.fingerprint())
        throw bandit_error("schema_mismatch", "checkpoint schema " + state.fingerprint() +
                                                  " does not match experiment schema " + expected.fingerprint());
    return state;
}

inline const std::vector<std::string>& weight_history_header() {
    static const std::vector<std::string> header{"run_index", "feature_name", "weight"};
    return header;
}

inline void write_weight_rows(csv::Writer& w, const FeatureSchema& schema, const WeightSnapshot& snap) {
    const auto names = schema.feature_names();
    for (std::size_t i = 0; i < names.size(); ++i)
        w.row({std::to_string(snap.run_index), names[i], csv::format(snap.weights.at(i))});
}

inline void write_weight_history_csv(std::ostream& out, const ModelState& state) {
    csv::Writer w(out);
    w.row(weight_history_header());
    for (const auto& snap : state.history()) write_weight_rows(w, state.schema(), snap);
}

}  // namespace robust_bandit
