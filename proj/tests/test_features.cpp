#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include <robust_bandit/features.hpp>

using namespace robust_bandit;

namespace {

template <class F>
std::string error_code(F&& f) {
    try {
        f();
    } catch (const bandit_error& e) {
        return e.code();
    }
    return "";
}

FeatureSchema schema(bool ts = true) {
    return FeatureSchema({"high_priority", "standard"}, {"drama", "comedy"}, RecencyBinning{}, ts);
}

TitleArm arm(const std::string& id, double launch, const std::string& mclass = "standard") {
    return TitleArm{id, launch, mclass, "comedy", ArmState::active};
}

NdsTable table_with_stats() {
    NdsTable t(1000.0, 8.0);
    t.set_training_stats({0.02, 0.03, 0.04}, 0.4);
    return t;
}

}  // namespace

TEST(Nds, DirectRatio) {
    auto s = compute_nds({{"A", 30}, {"B", 70}});
    EXPECT_FALSE(s.no_data);
    EXPECT_NEAR(s.values.at("A"), 0.30, 1e-12);
    EXPECT_NEAR(s.values.at("B"), 0.70, 1e-12);
}

TEST(Nds, SingleTitle) {
    auto s = compute_nds({{"A", 5}});
    EXPECT_EQ(s.values.at("A"), 1.0);
}

TEST(Nds, ZeroTotalIsNoData) {
    auto s = compute_nds({{"A", 0}, {"B", 0}});
    EXPECT_TRUE(s.no_data);
    EXPECT_TRUE(s.values.empty());
}

TEST(Nds, SumsToOneOnRandomCounts) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        std::map<std::string, std::int64_t> counts;
        const int n = 1 + static_cast<int>(rng() % 60);
        for (int i = 0; i < n; ++i) counts["t" + std::to_string(i)] = static_cast<std::int64_t>(rng() % 1000);
        auto s = compute_nds(counts);
        if (s.no_data) continue;
        double sum = 0.0;
        for (const auto& [k, v] : s.values) {
            EXPECT_GT(v, 0.0);
            EXPECT_LE(v, 1.0);
            sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Nds, NegativeCountRejected) {
    EXPECT_EQ(error_code([] { compute_nds({{"A", -1}}); }), "invalid_counts");
}

TEST(Recency, Bins) {
    RecencyBinning b;
    EXPECT_EQ(recency_bin(10, b), 0);
    EXPECT_EQ(recency_bin(72, b), 2);
    EXPECT_EQ(recency_bin(10000, b), 3);
    EXPECT_EQ(recency_bin(0, b), 0);
    EXPECT_EQ(recency_bin(24, b), 1);
    EXPECT_EQ(recency_bin(167.999, b), 2);
    EXPECT_EQ(recency_bin(168, b), 3);
}

TEST(Recency, NegativeIsError) {
    EXPECT_EQ(error_code([] { recency_bin(-1, RecencyBinning{}); }), "event_before_launch");
}

TEST(Recency, InvalidBoundaries) {
    EXPECT_EQ(error_code([] { RecencyBinning{{24, 24, 168}}.validate(); }), "invalid_binning");
    EXPECT_EQ(error_code([] { RecencyBinning{{0, 24, 168}}.validate(); }), "invalid_binning");
}

TEST(ColdStart, AveragesForNormalClass) {
    auto v = fill_cold_start(table_with_stats(), arm("A", 0.0), 500.0, RecencyBinning{});
    EXPECT_EQ(v, (NdsColumns{0.02, 0.03, 0.04}));
}

TEST(ColdStart, HighPriorityEarlyGetsMax) {
    auto v = fill_cold_start(table_with_stats(), arm("A", 995.0, "high_priority"), 1000.0, RecencyBinning{});
    EXPECT_EQ(v, (NdsColumns{0.4, 0.4, 0.4}));
}

TEST(ColdStart, HighPriorityAfterFirstBinGetsAverages) {
    auto v = fill_cold_start(table_with_stats(), arm("A", 1000.0 - 25.0, "high_priority"), 1000.0, RecencyBinning{});
    EXPECT_EQ(v, (NdsColumns{0.02, 0.03, 0.04}));
}

TEST(ColdStart, ObservedColumnsKept) {
    auto t = table_with_stats();
    t.set_value("A", 1, 0.5);
    auto f = resolve_nds(t, arm("A", 0.0), 500.0, RecencyBinning{});
    EXPECT_EQ(f.values, (NdsColumns{0.02, 0.5, 0.04}));
    EXPECT_EQ(f.observed, (std::array<bool, 3>{false, true, false}));
}

TEST(Featurize, ShapeWithFullNds) {
    auto s = schema();
    NdsTable t(1000.0, 8.0);
    t.set_value("A", 0, 0.1);
    t.set_value("A", 1, 0.2);
    t.set_value("A", 2, 0.3);
    auto x = featurize(arm("A", 900.0), 1000.0, t, s);
    ASSERT_EQ(x.size(), s.dim());
    EXPECT_EQ(s.dim(), 2u + 2u + 4u + 3u + 1u);
    int ones = 0;
    for (std::size_t i = 0; i < s.bias_index(); ++i)
        if (s.group_of(i) != FeatureGroup::nds && x[i] == 1.0) ++ones;
    EXPECT_EQ(ones, 3);
    EXPECT_EQ(x[s.nds_offset()], 0.1);
    EXPECT_EQ(x[s.nds_offset() + 1], 0.2);
    EXPECT_EQ(x[s.nds_offset() + 2], 0.3);
    EXPECT_EQ(x[s.bias_index()], 1.0);
    for (auto g : {FeatureGroup::marketing_class, FeatureGroup::content_category, FeatureGroup::recency_bin}) {
        double sum = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (s.group_of(i) == g) sum += x[i];
        EXPECT_EQ(sum, 1.0);
    }
}

TEST(Featurize, StraddlingFirstBoundaryChangesOnlyRecency) {
    auto s = schema();
    auto t = table_with_stats();
    auto a = arm("A", 0.0);
    auto x1 = featurize(a, 23.0, t, s);
    auto x2 = featurize(a, 25.0, t, s);
    for (std::size_t i = 0; i < x1.size(); ++i) {
        if (s.group_of(i) == FeatureGroup::recency_bin) continue;
        EXPECT_EQ(x1[i], x2[i]) << s.feature_names()[i];
    }
    EXPECT_NE(x1, x2);
}

TEST(Featurize, ZeroCountSlotsUseColdStart) {
    auto s = schema();
    auto t = table_with_stats();
    auto a = arm("A", 0.0);
    auto x = featurize(a, 500.0, t, s);
    auto fill = fill_cold_start(t, a, 500.0, s.binning());
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(x[s.nds_offset() + c], fill[c]);
}

TEST(Featurize, UnknownLabelRejected) {
    auto a = arm("A", 0.0);
    a.content_category = "horror";
    EXPECT_EQ(error_code([&] { featurize(a, 10.0, NdsTable{}, schema()); }), "unknown_label");
}

TEST(Featurize, ExitedArmRejected) {
    auto a = arm("A", 0.0);
    a.state = ArmState::exited;
    EXPECT_EQ(error_code([&] { featurize(a, 10.0, NdsTable{}, schema()); }), "arm_not_active");
}

TEST(Featurize, EventBeforeLaunch) {
    EXPECT_EQ(error_code([&] { featurize(arm("A", 100.0), 10.0, NdsTable{}, schema()); }), "event_before_launch");
}

TEST(Schema, WithoutTemporalSignals) {
    auto s = schema(false);
    EXPECT_EQ(s.dim(), 2u + 2u + 4u + 1u);
    auto x = featurize(arm("A", 0.0), 10.0, table_with_stats(), s);
    EXPECT_EQ(std::accumulate(x.begin(), x.end(), 0.0), 4.0);
}

TEST(Schema, MaskCoversRegularizedGroupsOnly) {
    auto s = schema();
    auto m = s.regularization_mask();
    for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(m[i], i == s.bias_index() ? 0.0 : 1.0);
}

TEST(Schema, JsonRoundTripAndFingerprint) {
    auto s = schema();
    json j = s;
    auto back = j.get<FeatureSchema>();
    EXPECT_EQ(back.fingerprint(), s.fingerprint());
    EXPECT_NE(schema(false).fingerprint(), s.fingerprint());
    j["feature_names"][0] = "marketing_class=other";
    j["marketing_classes"][0] = "other";
    EXPECT_EQ(error_code([&] { j.get<FeatureSchema>(); }), "schema_mismatch");
}

TEST(NdsTableJson, RoundTripKeepsMissing) {
    auto t = table_with_stats();
    t.set_value("A", 2, 0.25);
    json j = t;
    auto back = j.get<NdsTable>();
    EXPECT_EQ(back, t);
    EXPECT_FALSE(back.value("A", 0).has_value());
}
