#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "core.hpp"
#include "error.hpp"

namespace robust_bandit {

inline constexpr int num_recency_bins = 4;
inline constexpr int num_nds_columns = 3;

using NdsColumns = std::array<double, num_nds_columns>;

// Hours-since-launch buckets [0,hr1) [hr1,hr2) [hr2,hr3) [hr3,inf).
struct RecencyBinning {
    std::array<double, 3> boundaries{24.0, 72.0, 168.0};

    void validate() const {
        if (!(boundaries[0] > 0.0 && boundaries[0] < boundaries[1] && boundaries[1] < boundaries[2]))
            throw bandit_error("invalid_binning", "recency boundaries must satisfy 0 < hr1 < hr2 < hr3");
    }

    double first_bin_hours() const noexcept { return boundaries[0]; }

    friend bool operator==(const RecencyBinning&, const RecencyBinning&) = default;
};

inline int recency_bin(double hours_since_launch, const RecencyBinning& binning) {
    if (hours_since_launch < 0.0)
        throw bandit_error("event_before_launch", "hours since launch is negative");
    int bin = 0;
    while (bin < 3 && hours_since_launch >= binning.boundaries[static_cast<std::size_t>(bin)]) ++bin;
    return bin;
}

// Share of distinct streams per title within one time slot.
struct NdsShares {
    bool no_data = true;
    std::map<std::string, double> values;
};

inline NdsShares compute_nds(const std::map<std::string, std::int64_t>& distinct_streams) {
    std::int64_t total = 0;
    for (const auto& [title, count] : distinct_streams) {
        if (count < 0) throw bandit_error("invalid_counts", "negative stream count for '" + title + "'");
        total += count;
    }
    NdsShares out;
    if (total == 0) return out;
    out.no_data = false;
    const double denom = static_cast<double>(total);
    for (const auto& [title, count] : distinct_streams)
        if (count > 0) out.values.emplace(title, static_cast<double>(count) / denom);
    return out;
}

// Per-run table of temporal title signals. Slot j covers
// (run_hour - (j+1)p, run_hour - jp]. A title without streams in a slot has
// no observed value there and is filled at featurization time.
class NdsTable {
public:
    NdsTable() = default;
    NdsTable(double run_hour, double slot_hours) : run_hour_(run_hour), slot_hours_(slot_hours) {}

    // Builds the table from per-slot distinct stream counts over the active titles.
    static NdsTable from_slot_counts(double run_hour, double slot_hours,
                                     const std::array<std::map<std::string, std::int64_t>, num_nds_columns>& counts) {
        NdsTable table(run_hour, slot_hours);
        for (int c = 0; c < num_nds_columns; ++c) {
            auto shares = compute_nds(counts[static_cast<std::size_t>(c)]);
            for (const auto& [title, v] : shares.values) table.values_[title][static_cast<std::size_t>(c)] = v;
        }
        return table;
    }

    double run_hour() const noexcept { return run_hour_; }
    double slot_hours() const noexcept { return slot_hours_; }

    std::optional<double> value(std::string_view title, int column) const {
        auto it = values_.find(std::string(title));
        if (it == values_.end()) return std::nullopt;
        return it->second[static_cast<std::size_t>(column)];
    }

    void set_value(const std::string& title, int column, double v) {
        values_[title][static_cast<std::size_t>(column)] = v;
    }

    const std::map<std::string, std::array<std::optional<double>, num_nds_columns>>& values() const noexcept {
        return values_;
    }

    // Statistics over the training rows of the current run.
    const NdsColumns& column_average() const noexcept { return column_average_; }
    double train_max() const noexcept { return train_max_; }
    bool has_training_stats() const noexcept { return has_training_stats_; }

    void set_training_stats(const NdsColumns& averages, double train_max) {
        column_average_ = averages;
        train_max_ = train_max;
        has_training_stats_ = true;
    }

    friend bool operator==(const NdsTable&, const NdsTable&) = default;

    friend void to_json(json& j, const NdsTable& t) {
        json values = json::object();
        for (const auto& [title, cols] : t.values_) {
            json row = json::array();
            for (const auto& c : cols) row.push_back(c ? json(*c) : json(nullptr));
            values[title] = row;
        }
        j = json{{"run_hour", t.run_hour_},
                 {"slot_hours", t.slot_hours_},
                 {"values", values},
                 {"column_average", t.column_average_},
                 {"train_max", t.train_max_},
                 {"has_training_stats", t.has_training_stats_}};
    }

    friend void from_json(const json& j, NdsTable& t) {
        t = NdsTable(j.at("run_hour").get<double>(), j.at("slot_hours").get<double>());
        for (const auto& [title, row] : j.at("values").items())
            for (int c = 0; c < num_nds_columns; ++c)
                if (!row.at(static_cast<std::size_t>(c)).is_null())
                    t.values_[title][static_cast<std::size_t>(c)] = row.at(static_cast<std::size_t>(c)).get<double>();
        t.column_average_ = j.at("column_average").get<NdsColumns>();
        t.train_max_ = j.at("train_max").get<double>();
        t.has_training_stats_ = j.at("has_training_stats").get<bool>();
    }

private:
    double run_hour_ = 0.0;
    double slot_hours_ = 8.0;
    std::map<std::string, std::array<std::optional<double>, num_nds_columns>> values_;
    NdsColumns column_average_{};
    double train_max_ = 0.0;
    bool has_training_stats_ = false;
};

struct NdsFill {
    NdsColumns values{};
    std::array<bool, num_nds_columns> observed{};
};

// Resolves the three signal columns for `arm` at `now`, with cold-start fills.
// High-priority titles inside their first hr1 hours get the train-time maximum
// in every column; any other missing column gets its training average.
inline NdsFill resolve_nds(const NdsTable& nds, const TitleArm& arm, double now, const RecencyBinning& binning) {
    NdsFill fill;
    if (arm.is_high_priority() && arm.hours_since_launch(now) < binning.first_bin_hours()) {
        fill.values.fill(nds.train_max());
        return fill;
    }
    for (int c = 0; c < num_nds_columns; ++c) {
        const auto idx = static_cast<std::size_t>(c);
        if (auto v = nds.value(arm.title_id, c)) {
            fill.values[idx] = *v;
            fill.observed[idx] = true;
        } else {
            fill.values[idx] = nds.column_average()[idx];
        }
    }
    return fill;
}

inline NdsColumns fill_cold_start(const NdsTable& nds, const TitleArm& arm, double now, const RecencyBinning& binning) {
    return resolve_nds(nds, arm, now, binning).values;
}

enum class FeatureGroup { marketing_class, content_category, recency_bin, nds, bias };

inline constexpr std::array<FeatureGroup, 4> regularized_groups{
    FeatureGroup::marketing_class, FeatureGroup::content_category, FeatureGroup::recency_bin, FeatureGroup::nds};

// Column layout: marketing one-hot | category one-hot | recency one-hot (4)
// | nds (3, only with temporal signals) | bias.
class FeatureSchema {
public:
    FeatureSchema() = default;
    FeatureSchema(std::vector<std::string> marketing_classes, std::vector<std::string> content_categories,
                  RecencyBinning binning, bool temporal_signals)
        : marketing_classes_(std::move(marketing_classes)),
          content_categories_(std::move(content_categories)),
          binning_(binning),
          temporal_signals_(temporal_signals) {
        binning_.validate();
        if (marketing_classes_.empty() || content_categories_.empty())
            throw bandit_error("invalid_schema", "label vocabularies must be non-empty");
    }

    const std::vector<std::string>& marketing_classes() const noexcept { return marketing_classes_; }
    const std::vector<std::string>& content_categories() const noexcept { return content_categories_; }
    const RecencyBinning& binning() const noexcept { return binning_; }
    bool temporal_signals() const noexcept { return temporal_signals_; }

    std::size_t marketing_offset() const noexcept { return 0; }
    std::size_t category_offset() const noexcept { return marketing_classes_.size(); }
    std::size_t recency_offset() const noexcept { return category_offset() + content_categories_.size(); }
    std::size_t nds_offset() const noexcept { return recency_offset() + num_recency_bins; }
    std::size_t bias_index() const noexcept { return nds_offset() + (temporal_signals_ ? num_nds_columns : 0); }
    std::size_t dim() const noexcept { return bias_index() + 1; }

    std::size_t marketing_index(std::string_view label) const {
        return marketing_offset() + index_of(marketing_classes_, label, "marketing_class");
    }
    std::size_t category_index(std::string_view label) const {
        return category_offset() + index_of(content_categories_, label, "content_category");
    }

    FeatureGroup group_of(std::size_t column) const {
        if (column < category_offset()) return FeatureGroup::marketing_class;
        if (column < recency_offset()) return FeatureGroup::content_category;
        if (column < nds_offset()) return FeatureGroup::recency_bin;
        if (column < bias_index()) return FeatureGroup::nds;
        return FeatureGroup::bias;
    }

    std::vector<std::string> feature_names() const {
        std::vector<std::string> names;
        names.reserve(dim());
        for (const auto& v : marketing_classes_) names.push_back("marketing_class=" + v);
        for (const auto& v : content_categories_) names.push_back("content_category=" + v);
        for (int b = 0; b < num_recency_bins; ++b) names.push_back("recency_bin=" + std::to_string(b));
        if (temporal_signals_)
            for (int c = 0; c < num_nds_columns; ++c) names.push_back("nds_slot_" + std::to_string(c));
        names.push_back("bias");
        return names;
    }

    // 1.0 on the columns of the listed groups, 0.0 elsewhere.
    template <class Groups>
    std::vector<double> group_mask(const Groups& groups) const {
        std::vector<double> mask(dim(), 0.0);
        for (std::size_t i = 0; i < mask.size(); ++i)
            for (FeatureGroup g : groups)
                if (group_of(i) == g) mask[i] = 1.0;
        return mask;
    }

    std::vector<double> regularization_mask() const { return group_mask(regularized_groups); }

    // FNV-1a over the column names and bin boundaries, as 16 hex digits.
    std::string fingerprint() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto feed = [&h](std::string_view s) {
            for (unsigned char ch : s) {
                h ^= ch;
                h *= 0x100000001b3ULL;
            }
            h ^= 0xff;
            h *= 0x100000001b3ULL;
        };
        for (const auto& n : feature_names()) feed(n);
        for (double b : binning_.boundaries) feed(std::to_string(b));
        static constexpr char digits[] = "0123456789abcdef";
        std::string out(16, '0');
        for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        return out;
    }

    friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;

    friend void to_json(json& j, const FeatureSchema& s) {
        j = json{{"marketing_classes", s.marketing_classes_},
                 {"content_categories", s.content_categories_},
                 {"recency_boundaries", s.binning_.boundaries},
                 {"temporal_signals", s.temporal_signals_},
                 {"feature_names", s.feature_names()},
                 {"fingerprint", s.fingerprint()}};
    }

    friend void from_json(const json& j, FeatureSchema& s) {
        RecencyBinning binning;
        binning.boundaries = j.at("recency_boundaries").get<std::array<double, 3>>();
        s = FeatureSchema(j.at("marketing_classes").get<std::vector<std::string>>(),
                          j.at("content_categories").get<std::vector<std::string>>(), binning,
                          j.at("temporal_signals").get<bool>());
        if (j.contains("fingerprint") && j.at("fingerprint").get<std::string>() != s.fingerprint())
            throw bandit_error("schema_mismatch", "schema fingerprint does not match its columns");
    }

private:
    static std::size_t index_of(const std::vector<std::string>& vocab, std::string_view label, const char* what) {
        for (std::size_t i = 0; i < vocab.size(); ++i)
            if (vocab[i] == label) return i;
        throw bandit_error("unknown_label", std::string("unknown ") + what + " '" + std::string(label) + "'");
    }

    std::vector<std::string> marketing_classes_;
    std::vector<std::string> content_categories_;
    RecencyBinning binning_;
    bool temporal_signals_ = true;
};

// Pre-encoding view of one (title, time) pair. Kept on training rows so that
// augmentation can rewrite the recency bin before encoding.
struct TitleFields {
    std::string marketing_class;
    std::string content_category;
    int recency_bin = 0;
    NdsColumns nds{};
    std::array<bool, num_nds_columns> nds_observed{};

    friend bool operator==(const TitleFields&, const TitleFields&) = default;
};

inline TitleFields describe(const TitleArm& arm, double now, const NdsTable& nds, const RecencyBinning& binning) {
    auto fill = resolve_nds(nds, arm, now, binning);
    return TitleFields{arm.marketing_class, arm.content_category, recency_bin(arm.hours_since_launch(now), binning),
                       fill.values, fill.observed};
}

inline std::vector<double> encode(const TitleFields& fields, const FeatureSchema& schema) {
    if (fields.recency_bin < 0 || fields.recency_bin >= num_recency_bins)
        throw bandit_error("invalid_bin", "recency bin out of range");
    std::vector<double> x(schema.dim(), 0.0);
    x[schema.marketing_index(fields.marketing_class)] = 1.0;
    x[schema.category_index(fields.content_category)] = 1.0;
    x[schema.recency_offset() + static_cast<std::size_t>(fields.recency_bin)] = 1.0;
    if (schema.temporal_signals())
        for (std::size_t c = 0; c < num_nds_columns; ++c) x[schema.nds_offset() + c] = fields.nds[c];
    x[schema.bias_index()] = 1.0;
    return x;
}

inline std::vector<double> featurize(const TitleArm& arm, double now, const NdsTable& nds, const FeatureSchema& schema) {
    if (!arm.is_active()) throw bandit_error("arm_not_active", "cannot featurize exited title '" + arm.title_id + "'");
    return encode(describe(arm, now, nds, schema.binning()), schema);
}

}  // namespace robust_bandit
