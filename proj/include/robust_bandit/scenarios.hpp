#pragma once

#include <random>
#include <string>
#include <vector>

#include "error.hpp"
#include "random.hpp"
#include "simulator.hpp"

namespace robust_bandit {

// Overrides applied on top of a canned scenario; unset values keep the
// scenario's own defaults.
struct ScenarioOptions {
    std::optional<std::size_t> users_per_window;
    std::optional<std::size_t> eval_users_per_window;
    std::optional<std::size_t> slate_size;
    std::optional<std::size_t> n_titles;
    std::optional<double> period;
    std::optional<RecencyBinning> binning;
};

inline const std::vector<std::string>& scenario_names() {
    static const std::vector<std::string> names{"stationary",   "two_arm",        "recency_sparsity",
                                                "category_cannibalization", "over_exposure", "under_exposure",
                                                "mixed"};
    return names;
}

namespace scenario_detail {

inline const std::vector<std::string> marketing{"high_priority", "standard", "library"};
inline const std::vector<std::string> categories{"drama", "comedy", "action", "kids", "documentary"};

// Hours at which run k's window opens.
inline double run_start(const SimScenario& s, int k) { return s.start_hour + k * s.period; }

inline SimScenario blank(std::string id, std::uint64_t seed) {
    SimScenario s;
    s.id = std::move(id);
    s.seed = seed;
    s.marketing_classes = marketing;
    s.content_categories = categories;
    return s;
}

inline ScriptedTitle title(std::string id, double launch, std::string mclass, std::string category, double conversion,
                           std::array<double, num_recency_bins> decay = {1.0, 1.0, 1.0, 1.0}, double drift = 0.0,
                           std::optional<double> exit = std::nullopt) {
    ScriptedTitle t;
    t.arm = TitleArm{std::move(id), launch, std::move(mclass), std::move(category), ArmState::active};
    t.dynamics.base_conversion = conversion;
    t.dynamics.launch_decay = decay;
    t.dynamics.drift_sigma = drift;
    t.exit_time = exit;
    return t;
}

inline std::string name(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%02zu", prefix, i);
    return buf;
}

inline constexpr std::array<double, num_recency_bins> launch_curve{1.0, 0.75, 0.55, 0.4};

// Long-running catalog titles, all in the last recency bin from the start.
inline double catalog_launch(const SimScenario& s) { return s.start_hour - 2000.0; }

}  // namespace scenario_detail

// Every title in the last recency bin with fixed conversion.
inline SimScenario stationary_scenario(std::uint64_t seed, std::size_t n_titles = 50) {
    using namespace scenario_detail;
    auto s = blank("stationary", seed);
    SplitMix64 rng(derive_seed(seed, {stream::catalog}));
    for (std::size_t i = 0; i < n_titles; ++i) {
        const auto& mclass = marketing[1 + i % 2];
        const auto& cat = categories[i % categories.size()];
        s.titles.push_back(title(name("t", i), catalog_launch(s), mclass, cat, 0.02 + 0.2 * rng.uniform()));
    }
    return s;
}

// Plain two-armed stationary bandit: each title has its own category, so
// the arms are separable from labels alone.
inline SimScenario two_arm_scenario(std::uint64_t seed, double good_rate = 0.8, double bad_rate = 0.2) {
    using namespace scenario_detail;
    auto s = blank("two_arm", seed);
    s.users_per_window = 200;
    s.eval_users_per_window = 200;
    s.titles.push_back(title("good", catalog_launch(s), "standard", "drama", good_rate));
    s.titles.push_back(title("bad", catalog_launch(s), "standard", "comedy", bad_rate));
    s.focus_titles = {"good", "bad"};
    return s;
}

// A long-tail catalog plus a trickle of new releases: the early recency
// bins hold one title or none for most windows.
inline SimScenario recency_sparsity_scenario(std::uint64_t seed, std::size_t n_catalog = 20, int n_runs = 40) {
    using namespace scenario_detail;
    auto s = blank("recency_sparsity", seed);
    SplitMix64 rng(derive_seed(seed, {stream::catalog}));
    for (std::size_t i = 0; i < n_catalog; ++i)
        s.titles.push_back(title(name("c", i), catalog_launch(s), "library", categories[i % categories.size()],
                                 0.03 + 0.09 * rng.uniform()));
    std::size_t n = 0;
    for (int k = 1; k < n_runs + 2; k += 5, ++n) {
        const double launch = run_start(s, k);
        s.titles.push_back(title(name("new", n), launch, n % 2 == 0 ? "high_priority" : "standard",
                                 categories[(n * 3) % categories.size()], 0.15 + 0.15 * rng.uniform(), launch_curve,
                                 0.0, launch + 15 * s.period));
    }
    return s;
}

// Each category has one strong title and several weak ones sharing its labels.
inline SimScenario category_cannibalization_scenario(std::uint64_t seed, std::size_t per_category = 5) {
    using namespace scenario_detail;
    auto s = blank("category_cannibalization", seed);
    SplitMix64 rng(derive_seed(seed, {stream::catalog}));
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t i = 0; i < per_category; ++i) {
            const double conv = i == 0 ? 0.22 + 0.08 * rng.uniform() : 0.02 + 0.04 * rng.uniform();
            s.titles.push_back(title(name(categories[c].substr(0, 3).c_str(), i), catalog_launch(s), "standard",
                                     categories[c], conv));
        }
    return s;
}

// A popular release launches alongside two weak titles with the same labels,
// so its recency bin is carried by them; a mediocre title launched later
// follows it into the bin it vacates. Study runs are the reports whose
// evaluation windows have the popular title in its third bin.
inline SimScenario over_exposure_scenario(std::uint64_t seed) {
    using namespace scenario_detail;
    auto s = blank("over_exposure", seed);
    SplitMix64 rng(derive_seed(seed, {stream::catalog}));
    for (std::size_t i = 0; i < 5; ++i)
        s.titles.push_back(title(name("c", i), catalog_launch(s), "library", categories[i % 2 == 0 ? 0 : 1],
                                 0.06 + 0.06 * rng.uniform()));
    constexpr std::array<double, num_recency_bins> curve{1.0, 0.9, 0.85, 0.8};
    const double release = run_start(s, 2);
    s.titles.push_back(title("popular", release, "standard", "action", 0.30, curve));
    s.titles.push_back(title("weak_a", release, "standard", "action", 0.03, curve));
    s.titles.push_back(title("weak_b", release, "standard", "action", 0.03, curve));
    s.titles.push_back(title("overexposed", run_start(s, 4), "standard", "action", 0.07, curve));
    s.focus_titles = {"popular", "overexposed"};
    // "popular" is in bin 2 during windows 5..8; report k scores window k+1.
    s.study_runs = {4, 5, 6};
    return s;
}

// The best title shares its category with low performers, so category
// averages favor a mediocre title in a stronger category.
inline SimScenario under_exposure_scenario(std::uint64_t seed) {
    using namespace scenario_detail;
    auto s = blank("under_exposure", seed);
    SplitMix64 rng(derive_seed(seed, {stream::catalog}));
    s.titles.push_back(title("popular", catalog_launch(s), "standard", "action", 0.18));
    for (std::size_t i = 0; i < 2; ++i)
        s.titles.push_back(title(name("act", i), catalog_launch(s), "standard", "action", 0.14));
    s.titles.push_back(title("underexposed", catalog_launch(s), "standard", "documentary", 0.30));
    for (std::size_t i = 0; i < 3; ++i)
        s.titles.push_back(title(name("docu", i), catalog_launch(s), "standard", "documentary", 0.02));
    for (std::size_t i = 0; i < 4; ++i)
        s.titles.push_back(title(name("c", i), catalog_launch(s), "library", categories[i % 2],
                                 0.06 + 0.04 * rng.uniform()));
    s.focus_titles = {"popular", "underexposed"};
    s.study_runs = {3, 4, 5};
    return s;
}

// Cannibalizing categories, popularity drift and a steady flow of releases.
inline SimScenario mixed_scenario(std::uint64_t seed, int n_runs = 40) {
    using namespace scenario_detail;
    auto s = blank("mixed", seed);
    SplitMix64 rng(derive_seed(seed, {stream::catalog}));
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t i = 0; i < 4; ++i) {
            const double conv = i == 0 ? 0.18 + 0.08 * rng.uniform() : 0.03 + 0.05 * rng.uniform();
            s.titles.push_back(title(name(categories[c].substr(0, 3).c_str(), i), catalog_launch(s),
                                     i % 2 ? "library" : "standard", categories[c], conv, {1.0, 1.0, 1.0, 1.0}, 0.15));
        }
    std::size_t n = 0;
    for (int k = 1; k < n_runs + 2; k += 4, ++n) {
        const double launch = run_start(s, k);
        s.titles.push_back(title(name("new", n), launch, n % 3 == 0 ? "high_priority" : "standard",
                                 categories[n % categories.size()], 0.08 + 0.22 * rng.uniform(), launch_curve, 0.15,
                                 launch + 16 * s.period));
    }
    return s;
}

inline SimScenario make_scenario(const std::string& id, std::uint64_t seed, int n_runs = 40,
                                 const ScenarioOptions& opts = {}) {
    SimScenario s;
    if (id == "stationary") s = stationary_scenario(seed, opts.n_titles.value_or(50));
    else if (id == "two_arm") s = two_arm_scenario(seed);
    else if (id == "recency_sparsity") s = recency_sparsity_scenario(seed, opts.n_titles.value_or(20), n_runs);
    else if (id == "category_cannibalization") s = category_cannibalization_scenario(seed);
    else if (id == "over_exposure") s = over_exposure_scenario(seed);
    else if (id == "under_exposure") s = under_exposure_scenario(seed);
    else if (id == "mixed") s = mixed_scenario(seed, n_runs);
    else throw bandit_error("unknown_scenario", "unknown scenario '" + id + "'");
    if (opts.users_per_window) s.users_per_window = *opts.users_per_window;
    if (opts.eval_users_per_window) s.eval_users_per_window = *opts.eval_users_per_window;
    if (opts.slate_size) s.slate_size = *opts.slate_size;
    if (opts.binning) s.binning = *opts.binning;
    if (opts.period) {
        // keep launches aligned to run boundaries
        const double scale = *opts.period / s.period;
        for (auto& t : s.titles) {
            t.arm.launch_time = s.start_hour + (t.arm.launch_time - s.start_hour) * scale;
            if (t.exit_time) *t.exit_time = s.start_hour + (*t.exit_time - s.start_hour) * scale;
        }
        s.period = *opts.period;
    }
    s.validate();
    return s;
}

}  // namespace robust_bandit
