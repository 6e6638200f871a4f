#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "core.hpp"
#include "csv.hpp"
#include "error.hpp"
#include "features.hpp"
#include "random.hpp"

namespace robust_bandit {

// Ground-truth stream propensity of one title.
struct TitleDynamics {
    double base_conversion = 0.05;
    std::array<double, num_recency_bins> launch_decay{1.0, 1.0, 1.0, 1.0};
    double category_effect = 1.0;
    double drift_sigma = 0.0;  // log-normal per-run popularity noise

    friend bool operator==(const TitleDynamics&, const TitleDynamics&) = default;
};

inline void to_json(json& j, const TitleDynamics& d) {
    j = json{{"base_conversion", d.base_conversion},
             {"launch_decay", d.launch_decay},
             {"category_effect", d.category_effect},
             {"drift_sigma", d.drift_sigma}};
}

inline void from_json(const json& j, TitleDynamics& d) {
    d.base_conversion = j.at("base_conversion").get<double>();
    d.launch_decay = j.value("launch_decay", std::array<double, num_recency_bins>{1.0, 1.0, 1.0, 1.0});
    d.category_effect = j.value("category_effect", 1.0);
    d.drift_sigma = j.value("drift_sigma", 0.0);
}

struct ScriptedTitle {
    TitleArm arm;
    std::optional<double> exit_time;  // leaves the catalog at this hour
    TitleDynamics dynamics;
};

inline void to_json(json& j, const ScriptedTitle& t) {
    j = json{{"arm", t.arm}, {"dynamics", t.dynamics}};
    j["exit_time"] = t.exit_time ? json(*t.exit_time) : json(nullptr);
}

inline void from_json(const json& j, ScriptedTitle& t) {
    t.arm = j.at("arm").get<TitleArm>();
    t.dynamics = j.at("dynamics").get<TitleDynamics>();
    t.exit_time.reset();
    if (j.contains("exit_time") && !j.at("exit_time").is_null()) t.exit_time = j.at("exit_time").get<double>();
}

// A scripted synthetic market: catalog entries/exits and ground-truth
// conversion curves. Everything random is derived from `seed`.
struct SimScenario {
    std::string id = "stationary";
    std::uint64_t seed = 0;
    double start_hour = 0.0;
    double period = 24.0;
    std::size_t users_per_window = 10000;
    std::size_t eval_users_per_window = 2000;
    std::size_t slate_size = 0;  // titles shown per request; 0 shows the whole ranking
    RecencyBinning binning;
    std::vector<std::string> marketing_classes;
    std::vector<std::string> content_categories;
    std::vector<ScriptedTitle> titles;
    // Case-study annotations: titles to tabulate and the report runs to look at.
    std::vector<std::string> focus_titles;
    std::vector<int> study_runs;

    const ScriptedTitle& title(std::string_view id_) const {
        for (const auto& t : titles)
            if (t.arm.title_id == id_) return t;
        throw bandit_error("unknown_arm", "scenario has no title '" + std::string(id_) + "'");
    }

    // Titles launched at or before `t` and not yet exited.
    Catalog catalog_at(double t) const {
        Catalog c(t);
        for (const auto& s : titles) {
            if (s.arm.launch_time > t) continue;
            if (s.exit_time && *s.exit_time <= t) continue;
            c = register_arm(std::move(c), s.arm);
        }
        return c;
    }

    // Multiplicative popularity drift of a title during run `run_index`.
    double drift(const ScriptedTitle& s, int run_index) const {
        if (s.dynamics.drift_sigma <= 0.0) return 1.0;
        SplitMix64 rng(derive_seed(seed, {stream::dynamics, stable_hash(s.arm.title_id),
                                          static_cast<std::uint64_t>(run_index)}));
        std::normal_distribution<double> normal(0.0, 1.0);
        const double sigma = s.dynamics.drift_sigma;
        return std::exp(sigma * normal(rng) - 0.5 * sigma * sigma);
    }

    // Ground-truth per-impression stream probability.
    double conversion(const ScriptedTitle& s, double now, int run_index) const {
        return conversion_with_drift(s, now, drift(s, run_index));
    }

    double conversion_with_drift(const ScriptedTitle& s, double now, double drift_multiplier) const {
        const int bin = recency_bin(s.arm.hours_since_launch(now), binning);
        const double p = s.dynamics.base_conversion * s.dynamics.launch_decay[static_cast<std::size_t>(bin)] *
                         s.dynamics.category_effect * drift_multiplier;
        return std::clamp(p, 0.0, 1.0);
    }

    void validate() const {
        binning.validate();
        if (!(period > 0.0)) throw bandit_error("invalid_scenario", "period must be positive");
        if (users_per_window >= 5'000'000 || eval_users_per_window >= 5'000'000)
            throw bandit_error("invalid_scenario", "at most 4,999,999 users per pool and window");
        std::set<std::string> ids;
        for (const auto& t : titles) {
            if (!csv::is_plain_token(t.arm.title_id) || t.arm.title_id.empty())
                throw bandit_error("invalid_scenario", "title ids must be non-empty plain tokens");
            if (!ids.insert(t.arm.title_id).second)
                throw bandit_error("invalid_scenario", "duplicate title '" + t.arm.title_id + "'");
            if (std::find(marketing_classes.begin(), marketing_classes.end(), t.arm.marketing_class) ==
                    marketing_classes.end() ||
                std::find(content_categories.begin(), content_categories.end(), t.arm.content_category) ==
                    content_categories.end())
                throw bandit_error("invalid_scenario", "title '" + t.arm.title_id + "' uses a label outside the vocabulary");
            if (t.dynamics.base_conversion < 0.0 || t.dynamics.category_effect < 0.0)
                throw bandit_error("invalid_scenario", "conversion parameters must be non-negative");
        }
    }
};

inline void to_json(json& j, const SimScenario& s) {
    j = json{{"id", s.id},
             {"seed", s.seed},
             {"start_hour", s.start_hour},
             {"period", s.period},
             {"users_per_window", s.users_per_window},
             {"eval_users_per_window", s.eval_users_per_window},
             {"slate_size", s.slate_size},
             {"recency_boundaries", s.binning.boundaries},
             {"marketing_classes", s.marketing_classes},
             {"content_categories", s.content_categories},
             {"titles", s.titles},
             {"focus_titles", s.focus_titles},
             {"study_runs", s.study_runs}};
}

inline void from_json(const json& j, SimScenario& s) {
    s.id = j.at("id").get<std::string>();
    s.seed = j.value("seed", std::uint64_t{0});
    s.start_hour = j.value("start_hour", 0.0);
    s.period = j.value("period", 24.0);
    s.users_per_window = j.value("users_per_window", std::size_t{10000});
    s.eval_users_per_window = j.value("eval_users_per_window", std::size_t{2000});
    s.slate_size = j.value("slate_size", std::size_t{0});
    s.binning.boundaries = j.value("recency_boundaries", std::array<double, 3>{24.0, 72.0, 168.0});
    s.marketing_classes = j.at("marketing_classes").get<std::vector<std::string>>();
    s.content_categories = j.at("content_categories").get<std::vector<std::string>>();
    s.titles = j.at("titles").get<std::vector<ScriptedTitle>>();
    s.focus_titles = j.value("focus_titles", std::vector<std::string>{});
    s.study_runs = j.value("study_runs", std::vector<int>{});
    s.validate();
}

// One shown (request, title) pair.
struct Impression {
    double timestamp = 0.0;
    std::int64_t request_id = 0;
    std::string title_id;
    int rank = 1;  // 1-based
    bool streamed = false;

    friend bool operator==(const Impression&, const Impression&) = default;
};

// Impressions of one window, ordered by request id then rank.
struct InteractionLog {
    double window_start = 0.0;
    double window_end = 0.0;
    std::vector<Impression> rows;

    friend bool operator==(const InteractionLog&, const InteractionLog&) = default;
};

// Ranks the active titles of a catalog for one request.
using RankingPolicy = std::function<std::vector<std::string>(double now, SplitMix64& rng)>;

inline RankingPolicy uniform_random_policy(const Catalog& catalog) {
    std::vector<std::string> ids;
    for (const auto& a : catalog.active_arms()) ids.push_back(a.title_id);
    return [ids](double, SplitMix64& rng) {
        auto order = ids;
        std::shuffle(order.begin(), order.end(), rng);
        return order;
    };
}

enum class UserPool { train, eval };

// Request ids are unique across runs and pools.
inline std::int64_t request_id_for(int run_index, UserPool pool, std::size_t user) {
    return static_cast<std::int64_t>(run_index) * 10'000'000 + (pool == UserPool::eval ? 5'000'000 : 0) +
           static_cast<std::int64_t>(user);
}

// Simulates the requests of one window. Each user draws a timestamp and one
// uniform per active title (in title order, so every policy faces the same
// user outcomes); a shown title streams iff its uniform falls under the
// title's conversion probability.
inline InteractionLog generate_window(const SimScenario& scenario, const RunClock& clock, const Catalog& catalog,
                                      const RankingPolicy& policy, UserPool pool = UserPool::train) {
    InteractionLog log{clock.window_start(), clock.run_hour, {}};
    const auto arms = catalog.active_arms();
    if (arms.empty()) return log;
    std::map<std::string, std::size_t> slot;
    std::vector<const ScriptedTitle*> scripted;
    std::vector<double> drifts;
    for (std::size_t i = 0; i < arms.size(); ++i) {
        slot.emplace(arms[i].title_id, i);
        scripted.push_back(&scenario.title(arms[i].title_id));
        drifts.push_back(scenario.drift(*scripted.back(), clock.run_index));
    }
    const std::size_t users = pool == UserPool::train ? scenario.users_per_window : scenario.eval_users_per_window;
    const std::size_t shown = scenario.slate_size == 0 ? arms.size() : std::min(scenario.slate_size, arms.size());
    const auto pool_tag = pool == UserPool::train ? stream::train_users : stream::eval_users;
    const auto run_tag = static_cast<std::uint64_t>(clock.run_index);
    std::vector<double> draws(arms.size());
    log.rows.reserve(users * shown);
    for (std::size_t u = 0; u < users; ++u) {
        SplitMix64 user_rng(derive_seed(scenario.seed, {pool_tag, run_tag, u}));
        SplitMix64 policy_rng(derive_seed(scenario.seed, {stream::policy, pool_tag, run_tag, u}));
        const double now = clock.run_hour - clock.period * user_rng.uniform();
        for (auto& d : draws) d = user_rng.uniform();
        const auto ranking = policy(now, policy_rng);
        const auto id = request_id_for(clock.run_index, pool, u);
        for (std::size_t r = 0; r < shown && r < ranking.size(); ++r) {
            auto it = slot.find(ranking[r]);
            if (it == slot.end()) throw bandit_error("unknown_arm", "policy ranked an inactive title '" + ranking[r] + "'");
            const double p = scenario.conversion_with_drift(*scripted[it->second], now, drifts[it->second]);
            log.rows.push_back(Impression{now, id, ranking[r], static_cast<int>(r) + 1, draws[it->second] < p});
        }
    }
    return log;
}

struct Downsampled {
    std::vector<Impression> pairs;
    bool no_positives = false;
};

// Keeps every positive and min(X * positives, negatives) uniformly chosen
// negatives, preserving log order.
template <class Rng>
Downsampled downsample(const std::vector<Impression>& rows, int negatives_per_positive, Rng& rng) {
    if (negatives_per_positive < 1) throw bandit_error("invalid_config", "X must be at least 1");
    std::vector<std::size_t> positives, negatives;
    for (std::size_t i = 0; i < rows.size(); ++i) (rows[i].streamed ? positives : negatives).push_back(i);
    Downsampled out;
    if (positives.empty()) {
        out.no_positives = true;
        return out;
    }
    const std::size_t keep = std::min(negatives.size(), positives.size() * static_cast<std::size_t>(negatives_per_positive));
    std::vector<std::size_t> kept;
    kept.reserve(keep);
    std::sample(negatives.begin(), negatives.end(), std::back_inserter(kept), keep, rng);
    std::vector<std::size_t> all(positives);
    all.insert(all.end(), kept.begin(), kept.end());
    std::sort(all.begin(), all.end());
    out.pairs.reserve(all.size());
    for (auto i : all) out.pairs.push_back(rows[i]);
    return out;
}

// Time window (lo, hi] in absolute hours.
struct TimeWindow {
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double t) const noexcept { return t > lo && t <= hi; }
};

inline std::int64_t distinct_streams(const std::vector<Impression>& rows, std::string_view title, TimeWindow window) {
    if (!(window.hi >= window.lo)) throw bandit_error("invalid_window", "window end precedes its start");
    std::set<std::int64_t> requests;
    for (const auto& r : rows)
        if (r.streamed && r.title_id == title && window.contains(r.timestamp)) requests.insert(r.request_id);
    return static_cast<std::int64_t>(requests.size());
}

// Distinct streaming requests per title inside `window`, over several logs.
inline std::map<std::string, std::int64_t> distinct_stream_counts(const std::vector<const InteractionLog*>& archive,
                                                                  TimeWindow window) {
    std::map<std::string, std::set<std::int64_t>> seen;
    for (const auto* log : archive)
        for (const auto& r : log->rows)
            if (r.streamed && window.contains(r.timestamp)) seen[r.title_id].insert(r.request_id);
    std::map<std::string, std::int64_t> out;
    for (const auto& [title, ids] : seen) out.emplace(title, static_cast<std::int64_t>(ids.size()));
    return out;
}

// NDS table at `run_hour` from the logged streams of the active titles.
inline NdsTable build_nds_table(const std::vector<const InteractionLog*>& archive, const Catalog& catalog,
                                double run_hour, double slot_hours) {
    std::array<std::map<std::string, std::int64_t>, num_nds_columns> counts;
    for (int c = 0; c < num_nds_columns; ++c) {
        TimeWindow w{run_hour - (c + 1) * slot_hours, run_hour - c * slot_hours};
        for (auto& [title, n] : distinct_stream_counts(archive, w))
            if (catalog.is_active(title)) counts[static_cast<std::size_t>(c)].emplace(title, n);
    }
    return NdsTable::from_slot_counts(run_hour, slot_hours, counts);
}

inline const std::vector<std::string>& log_csv_header() {
    static const std::vector<std::string> header{"timestamp", "request_id", "title_id", "rank", "streamed"};
    return header;
}

inline void write_log_csv(std::ostream& out, const std::vector<Impression>& rows) {
    csv::Writer w(out);
    w.row(log_csv_header());
    for (const auto& r : rows)
        w.row({csv::format(r.timestamp), std::to_string(r.request_id), r.title_id, std::to_string(r.rank),
               r.streamed ? "1" : "0"});
}

inline std::vector<Impression> read_log_csv(const std::string& path) {
    std::vector<Impression> rows;
    for (const auto& f : csv::read_file(path, log_csv_header()))
        rows.push_back(Impression{csv::parse_double(f[0]), csv::parse_int(f[1]), f[2], static_cast<int>(csv::parse_int(f[3])),
                                  csv::parse_int(f[4]) != 0});
    return rows;
}

}  // namespace robust_bandit
