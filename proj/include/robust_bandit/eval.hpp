#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "core.hpp"
#include "error.hpp"

namespace robust_bandit {

// Metrics return std::nullopt when undefined for the input (single class,
// zero relevance, zero baseline).

// Mann-Whitney form: P(score+ > score-) with ties counted one half.
template <class Score = double, class Label = int>
std::optional<double> roc_auc(std::span<const Score> scores, std::span<const Label> labels) {
    if (scores.size() != labels.size()) throw bandit_error("dimension_mismatch", "scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double positives = 0.0, rank_sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]]) {
                positives += 1.0;
                rank_sum += avg_rank;
            }
        i = j;
    }
    const double negatives = static_cast<double>(scores.size()) - positives;
    if (positives == 0.0 || negatives == 0.0) return std::nullopt;
    return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

// Step-wise area under the precision-recall curve: one point per distinct
// score threshold, sum of (recall gain) * precision.
template <class Score = double, class Label = int>
std::optional<double> pr_auc(std::span<const Score> scores, std::span<const Label> labels) {
    if (scores.size() != labels.size()) throw bandit_error("dimension_mismatch", "scores and labels differ in length");
    const auto total_pos = static_cast<double>(std::count_if(labels.begin(), labels.end(), [](Label l) { return l != 0; }));
    if (total_pos == 0.0) return std::nullopt;
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double tp = 0.0, fp = 0.0, prev_recall = 0.0, area = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] ? tp : fp) += 1.0;
            ++j;
        }
        const double recall = tp / total_pos;
        area += (recall - prev_recall) * (tp / (tp + fp));
        prev_recall = recall;
        i = j;
    }
    return area;
}

using Ranking = std::vector<std::string>;

// Fraction of users whose ranking starts with each title. Titles listed in
// `universe` but never on top get 0.
inline std::map<std::string, double> top1_sov(const std::vector<Ranking>& rankings,
                                              const std::vector<std::string>& universe = {}) {
    std::map<std::string, double> counts;
    for (const auto& t : universe) counts[t] = 0.0;
    for (const auto& r : rankings) {
        if (r.empty()) throw bandit_error("empty_ranking", "every user ranking must be non-empty");
        for (const auto& t : r) counts.try_emplace(t, 0.0);
        counts[r.front()] += 1.0;
    }
    if (rankings.empty()) return counts;
    const double n = static_cast<double>(rankings.size());
    for (auto& [t, c] : counts) c /= n;
    return counts;
}

// Mean 1-based position of `title`; it must appear in every ranking.
inline double avg_rank(const std::vector<Ranking>& rankings, const std::string& title) {
    if (rankings.empty()) throw bandit_error("empty_ranking", "no rankings to average");
    double total = 0.0;
    for (const auto& r : rankings) {
        auto it = std::find(r.begin(), r.end(), title);
        if (it == r.end()) throw bandit_error("title_not_ranked", "title '" + title + "' missing from a ranking");
        total += static_cast<double>(it - r.begin() + 1);
    }
    return total / static_cast<double>(rankings.size());
}

// Orders titles by predicted SOV (descending, ties by title id) and scores
// that order against graded relevance with a log2 discount.
inline std::optional<double> ndcg_sov_alignment(const std::map<std::string, double>& predicted_sov,
                                                const std::map<std::string, double>& relevance) {
    if (predicted_sov.size() != relevance.size())
        throw bandit_error("title_set_mismatch", "predicted SOV and relevance cover different titles");
    std::vector<std::pair<std::string, double>> order(predicted_sov.begin(), predicted_sov.end());
    std::vector<double> rel;
    for (const auto& [t, v] : relevance) {
        if (!predicted_sov.count(t)) throw bandit_error("title_set_mismatch", "title '" + t + "' has no predicted SOV");
        if (v < 0.0) throw bandit_error("invalid_relevance", "relevance must be non-negative");
        rel.push_back(v);
    }
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    double dcg = 0.0, ideal = 0.0;
    std::sort(rel.begin(), rel.end(), std::greater<>());
    for (std::size_t i = 0; i < order.size(); ++i) {
        const double discount = std::log2(static_cast<double>(i) + 2.0);
        dcg += relevance.at(order[i].first) / discount;
        ideal += rel[i] / discount;
    }
    if (ideal == 0.0) return std::nullopt;
    return dcg / ideal;
}

struct MetricPoint {
    int run_index = 0;
    std::optional<double> value;
};

using MetricSeries = std::vector<MetricPoint>;
using RelativeGainSeries = std::vector<MetricPoint>;

inline std::optional<double> relative_gain(std::optional<double> a, std::optional<double> b) {
    if (!a || !b || *b <= 0.0) return std::nullopt;
    return (*a - *b) / *b;
}

// Per-run (a - b) / b; runs must line up one to one.
inline RelativeGainSeries relative_gain(const MetricSeries& a, const MetricSeries& b) {
    if (a.size() != b.size()) throw bandit_error("misaligned_runs", "series cover different numbers of runs");
    RelativeGainSeries out;
    out.reserve(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].run_index != b[i].run_index) throw bandit_error("misaligned_runs", "series run indices differ");
        out.push_back(MetricPoint{a[i].run_index, relative_gain(a[i].value, b[i].value)});
    }
    return out;
}

struct TitleReport {
    double top1_sov = 0.0;
    double avg_rank = 0.0;
    double conversion_rate = 0.0;
    double positive_rewards = 0.0;
    double impressions = 0.0;

    friend bool operator==(const TitleReport&, const TitleReport&) = default;
};

inline void to_json(json& j, const TitleReport& t) {
    j = json{{"top1_sov", t.top1_sov},
             {"avg_rank", t.avg_rank},
             {"conversion_rate", t.conversion_rate},
             {"positive_rewards", t.positive_rewards},
             {"impressions", t.impressions}};
}

inline void from_json(const json& j, TitleReport& t) {
    j.at("top1_sov").get_to(t.top1_sov);
    j.at("avg_rank").get_to(t.avg_rank);
    j.at("conversion_rate").get_to(t.conversion_rate);
    j.at("positive_rewards").get_to(t.positive_rewards);
    j.at("impressions").get_to(t.impressions);
}

inline const std::vector<std::string>& report_metrics() {
    static const std::vector<std::string> names{"roc_auc", "pr_auc", "ndcg_conversion", "ndcg_positive_rewards"};
    return names;
}

struct RunReport {
    int run_index = 0;
    std::string config_id;
    std::optional<double> roc_auc;
    std::optional<double> pr_auc;
    std::optional<double> ndcg_conversion;
    std::optional<double> ndcg_positive_rewards;
    std::map<std::string, TitleReport> titles;
    std::vector<std::string> warnings;

    std::optional<double> metric(std::string_view name) const {
        if (name == "roc_auc") return roc_auc;
        if (name == "pr_auc") return pr_auc;
        if (name == "ndcg_conversion") return ndcg_conversion;
        if (name == "ndcg_positive_rewards") return ndcg_positive_rewards;
        throw bandit_error("unknown_metric", "unknown metric '" + std::string(name) + "'");
    }

    friend bool operator==(const RunReport&, const RunReport&) = default;
};

namespace detail {
inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
inline std::optional<double> json_optional(const json& j) {
    return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}
}  // namespace detail

inline void to_json(json& j, const RunReport& r) {
    j = json{{"run_index", r.run_index},
             {"config_id", r.config_id},
             {"roc_auc", detail::optional_json(r.roc_auc)},
             {"pr_auc", detail::optional_json(r.pr_auc)},
             {"ndcg_conversion", detail::optional_json(r.ndcg_conversion)},
             {"ndcg_positive_rewards", detail::optional_json(r.ndcg_positive_rewards)},
             {"titles", r.titles},
             {"warnings", r.warnings}};
}

inline void from_json(const json& j, RunReport& r) {
    r.run_index = j.at("run_index").get<int>();
    r.config_id = j.at("config_id").get<std::string>();
    r.roc_auc = detail::json_optional(j.at("roc_auc"));
    r.pr_auc = detail::json_optional(j.at("pr_auc"));
    r.ndcg_conversion = detail::json_optional(j.at("ndcg_conversion"));
    r.ndcg_positive_rewards = detail::json_optional(j.at("ndcg_positive_rewards"));
    r.titles = j.at("titles").get<std::map<std::string, TitleReport>>();
    r.warnings = j.value("warnings", std::vector<std::string>{});
}

inline MetricSeries metric_series(const std::vector<RunReport>& reports, std::string_view metric) {
    MetricSeries out;
    for (const auto& r : reports) out.push_back(MetricPoint{r.run_index, r.metric(metric)});
    return out;
}

}  // namespace robust_bandit
