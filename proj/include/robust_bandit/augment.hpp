#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "csv.hpp"
#include "error.hpp"
#include "features.hpp"

namespace robust_bandit {

enum class ExampleOrigin { organic, alpha_copy, beta_copy };

inline const char* to_string(ExampleOrigin o) {
    switch (o) {
        case ExampleOrigin::organic: return "organic";
        case ExampleOrigin::alpha_copy: return "alpha_copy";
        case ExampleOrigin::beta_copy: return "beta_copy";
    }
    return "?";
}

// One featurized (request, title) pair. Encoding into a dense vector is
// deferred until training so augmentation can rewrite the recency bin.
struct TrainingExample {
    std::string title_id;
    std::int64_t request_id = 0;
    TitleFields fields;
    int reward = 0;
    bool variance_excluded = false;
    ExampleOrigin origin = ExampleOrigin::organic;

    friend bool operator==(const TrainingExample&, const TrainingExample&) = default;
};

struct AugmentConfig {
    double alpha = 0.15;
    double beta = 0.10;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (!(alpha >= 0.0 && alpha < 1.0)) throw bandit_error("invalid_config", "alpha must lie in [0, 1)");
        if (!(beta >= 0.0 && beta < 1.0)) throw bandit_error("invalid_config", "beta must lie in [0, 1)");
    }
};

namespace detail {
// Guards against products like 0.1 * 30 landing a hair above an integer.
inline constexpr double count_slack = 1e-9;
}  // namespace detail

// Number of alpha copies for a title with n rows (round half up).
inline std::size_t alpha_copy_count(double alpha, std::size_t n) {
    return static_cast<std::size_t>(std::floor(alpha * static_cast<double>(n) + 0.5 + detail::count_slack));
}

// Minimum per-bin count guaranteed by stage 2 over a set of n rows.
inline std::size_t beta_target(double beta, std::size_t n) {
    return static_cast<std::size_t>(std::ceil(beta * static_cast<double>(n) - detail::count_slack));
}

inline std::array<std::size_t, num_recency_bins> bin_counts(const std::vector<TrainingExample>& examples) {
    std::array<std::size_t, num_recency_bins> counts{};
    for (const auto& e : examples) ++counts.at(static_cast<std::size_t>(e.fields.recency_bin));
    return counts;
}

// Per title, copies round(alpha * n_title) uniformly chosen rows with the
// recency bin moved one step later (the last bin stays put). Originals come
// first and are untouched; copies follow grouped by title id.
template <class Rng>
std::vector<TrainingExample> augment_stage1(const std::vector<TrainingExample>& examples, double alpha, Rng& rng) {
    std::vector<TrainingExample> out(examples);
    if (alpha <= 0.0) return out;
    std::map<std::string, std::vector<std::size_t>> by_title;
    for (std::size_t i = 0; i < examples.size(); ++i) by_title[examples[i].title_id].push_back(i);
    for (const auto& [title, rows] : by_title) {
        const auto k = std::min(alpha_copy_count(alpha, rows.size()), rows.size());
        std::vector<std::size_t> chosen;
        chosen.reserve(k);
        std::sample(rows.begin(), rows.end(), std::back_inserter(chosen), k, rng);
        for (auto idx : chosen) {
            TrainingExample copy = examples[idx];
            copy.fields.recency_bin = std::min(copy.fields.recency_bin + 1, num_recency_bins - 1);
            copy.origin = ExampleOrigin::alpha_copy;
            copy.variance_excluded = false;
            out.push_back(std::move(copy));
        }
    }
    return out;
}

// Tops every recency bin up to ceil(beta * N) rows, N the input size, with
// copies of uniformly drawn rows (any title, any bin) rewritten into the
// deficient bin. These copies never update arm variances.
template <class Rng>
std::vector<TrainingExample> augment_stage2(const std::vector<TrainingExample>& examples, double beta, Rng& rng) {
    std::vector<TrainingExample> out(examples);
    if (beta <= 0.0 || examples.empty()) return out;
    const auto target = beta_target(beta, examples.size());
    const auto counts = bin_counts(examples);
    std::uniform_int_distribution<std::size_t> pick(0, examples.size() - 1);
    for (int bin = 0; bin < num_recency_bins; ++bin) {
        const auto have = counts[static_cast<std::size_t>(bin)];
        for (std::size_t n = have; n < target; ++n) {
            TrainingExample copy = examples[pick(rng)];
            copy.fields.recency_bin = bin;
            copy.origin = ExampleOrigin::beta_copy;
            copy.variance_excluded = true;
            out.push_back(std::move(copy));
        }
    }
    return out;
}

inline std::vector<TrainingExample> augment(const std::vector<TrainingExample>& examples, const AugmentConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.rng_seed);
    auto stage1 = augment_stage1(examples, config.alpha, rng);
    return augment_stage2(stage1, config.beta, rng);
}

inline const std::vector<std::string>& augmented_csv_header() {
    static const std::vector<std::string> header{"title_id", "bin", "marketing_class", "content_category",
                                                 "nds1", "nds2", "nds3", "reward", "origin", "variance_excluded"};
    return header;
}

inline void write_augmented_csv(std::ostream& out, const std::vector<TrainingExample>& examples) {
    csv::Writer w(out);
    w.row(augmented_csv_header());
    for (const auto& e : examples)
        w.row({e.title_id, std::to_string(e.fields.recency_bin), e.fields.marketing_class, e.fields.content_category,
               csv::format(e.fields.nds[0]), csv::format(e.fields.nds[1]), csv::format(e.fields.nds[2]),
               std::to_string(e.reward), to_string(e.origin), e.variance_excluded ? "1" : "0"});
}

}  // namespace robust_bandit
