#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"

namespace robust_bandit {

using json = nlohmann::json;

// Marketing class that receives the cold-start boost on temporal signals.
inline constexpr std::string_view high_priority_class = "high_priority";

enum class ArmState { active, exited };

NLOHMANN_JSON_SERIALIZE_ENUM(ArmState, {{ArmState::active, "active"}, {ArmState::exited, "exited"}})

// A catalog title acting as one bandit arm. Times are absolute hours.
struct TitleArm {
    std::string title_id;
    double launch_time = 0.0;
    std::string marketing_class;
    std::string content_category;
    ArmState state = ArmState::active;

    bool is_active() const noexcept { return state == ArmState::active; }
    bool is_high_priority() const noexcept { return marketing_class == high_priority_class; }
    double hours_since_launch(double now) const noexcept { return now - launch_time; }

    friend bool operator==(const TitleArm&, const TitleArm&) = default;
};

inline void to_json(json& j, const TitleArm& a) {
    j = json{{"title_id", a.title_id},
             {"launch_time", a.launch_time},
             {"marketing_class", a.marketing_class},
             {"content_category", a.content_category},
             {"state", a.state}};
}

inline void from_json(const json& j, TitleArm& a) {
    j.at("title_id").get_to(a.title_id);
    j.at("launch_time").get_to(a.launch_time);
    j.at("marketing_class").get_to(a.marketing_class);
    j.at("content_category").get_to(a.content_category);
    a.state = j.value("state", ArmState::active);
}

// Training cadence. Run k closes the window (run_hour - period, run_hour].
struct RunClock {
    int run_index = 0;
    double run_hour = 0.0;
    double period = 24.0;

    // Clock of run 0 whose window starts at `origin`.
    static RunClock first(double origin, double period) {
        if (!(period > 0.0)) throw bandit_error("invalid_config", "training period must be positive");
        return RunClock{0, origin + period, period};
    }

    RunClock next() const { return RunClock{run_index + 1, run_hour + period, period}; }
    RunClock at(int run) const { return RunClock{run, run_hour + (run - run_index) * period, period}; }
    double window_start() const noexcept { return run_hour - period; }
    bool in_window(double t) const noexcept { return t > window_start() && t <= run_hour; }
};

// Arm registry. Arms are kept sorted by title_id so iteration order is
// deterministic; exited arms stay in the registry for audit.
class Catalog {
public:
    Catalog() = default;
    explicit Catalog(double as_of) : as_of_(as_of) {}

    double as_of() const noexcept { return as_of_; }
    void set_as_of(double t) noexcept { as_of_ = t; }

    const std::vector<TitleArm>& arms() const noexcept { return arms_; }

    const TitleArm* find(std::string_view id) const {
        auto it = lower(id);
        return (it != arms_.end() && it->title_id == id) ? &*it : nullptr;
    }

    const TitleArm& at(std::string_view id) const {
        if (auto* a = find(id)) return *a;
        throw bandit_error("unknown_arm", "unknown title '" + std::string(id) + "'");
    }

    bool is_active(std::string_view id) const {
        auto* a = find(id);
        return a && a->is_active();
    }

    std::vector<TitleArm> active_arms() const {
        std::vector<TitleArm> out;
        std::copy_if(arms_.begin(), arms_.end(), std::back_inserter(out),
                     [](const TitleArm& a) { return a.is_active(); });
        return out;
    }

    std::size_t active_count() const {
        return static_cast<std::size_t>(
            std::count_if(arms_.begin(), arms_.end(), [](const TitleArm& a) { return a.is_active(); }));
    }

    std::size_t size() const noexcept { return arms_.size(); }

    friend Catalog register_arm(Catalog catalog, TitleArm arm);
    friend Catalog retire_arm(Catalog catalog, std::string_view title_id);

    friend bool operator==(const Catalog&, const Catalog&) = default;

private:
    std::vector<TitleArm>::const_iterator lower(std::string_view id) const {
        return std::lower_bound(arms_.begin(), arms_.end(), id,
                                [](const TitleArm& a, std::string_view v) { return a.title_id < v; });
    }

    double as_of_ = 0.0;
    std::vector<TitleArm> arms_;
};

// Adds `arm` as active. An exited title may re-enter; an active one may not.
inline Catalog register_arm(Catalog catalog, TitleArm arm) {
    if (arm.title_id.empty()) throw bandit_error("invalid_arm", "title_id must be non-empty");
    arm.state = ArmState::active;
    auto it = std::lower_bound(catalog.arms_.begin(), catalog.arms_.end(), arm.title_id,
                               [](const TitleArm& a, const std::string& v) { return a.title_id < v; });
    if (it != catalog.arms_.end() && it->title_id == arm.title_id) {
        if (it->is_active())
            throw bandit_error("duplicate_arm", "title '" + arm.title_id + "' is already active");
        *it = std::move(arm);
    } else {
        catalog.arms_.insert(it, std::move(arm));
    }
    return catalog;
}

inline Catalog retire_arm(Catalog catalog, std::string_view title_id) {
    auto it = std::lower_bound(catalog.arms_.begin(), catalog.arms_.end(), title_id,
                               [](const TitleArm& a, std::string_view v) { return a.title_id < v; });
    if (it == catalog.arms_.end() || it->title_id != title_id)
        throw bandit_error("unknown_arm", "cannot retire unknown title '" + std::string(title_id) + "'");
    if (!it->is_active())
        throw bandit_error("arm_not_active", "title '" + std::string(title_id) + "' already exited");
    it->state = ArmState::exited;
    return catalog;
}

inline void to_json(json& j, const Catalog& c) {
    j = json{{"as_of", c.as_of()}, {"arms", c.arms()}};
}

inline void from_json(const json& j, Catalog& c) {
    Catalog out(j.value("as_of", 0.0));
    for (const auto& item : j.at("arms")) {
        auto arm = item.get<TitleArm>();
        const bool exited = arm.state == ArmState::exited;
        out = register_arm(std::move(out), arm);
        if (exited) out = retire_arm(std::move(out), arm.title_id);
    }
    c = std::move(out);
}

}  // namespace robust_bandit
