#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <robust_bandit/bandit.hpp>
#include <robust_bandit/random.hpp>

#include "oracles.hpp"

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

FeatureSchema schema() { return FeatureSchema({"standard", "high_priority"}, {"drama", "comedy"}, RecencyBinning{}, true); }

Catalog catalog(std::initializer_list<const char*> ids, double launch = 0.0) {
    Catalog c(0.0);
    for (auto id : ids) c = register_arm(c, TitleArm{id, launch, "standard", "drama", ArmState::active});
    return c;
}

ModelState state_for(const Catalog& c, double prior = 1.0) {
    ModelState s(schema(), prior);
    s.sync_arms(c);
    return s;
}

TrainingExample row(const std::string& title, const std::string& category, int bin, int reward, NdsColumns nds = {}) {
    TrainingExample e;
    e.title_id = title;
    e.fields = TitleFields{"standard", category, bin, nds, {}};
    e.reward = reward;
    return e;
}

// Rows where comedy streams and drama does not, plus noise in the nds block.
std::vector<TrainingExample> toy_rows(std::mt19937_64& rng, std::size_t n) {
    std::vector<TrainingExample> out;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const bool comedy = i % 2 == 0;
        const double p = comedy ? 0.7 : 0.1;
        out.push_back(row(comedy ? "A" : "B", comedy ? "comedy" : "drama", static_cast<int>(i % 4), u(rng) < p,
                          {u(rng) * 0.2, u(rng) * 0.2, u(rng) * 0.2}));
    }
    return out;
}

}  // namespace

TEST(SmoothReference, Mean) {
    std::deque<WeightSnapshot> h{{0, {1, 2}}, {1, {3, 4}}};
    EXPECT_EQ(*smooth_reference(h, 2), (std::vector<double>{2, 3}));
    EXPECT_EQ(*smooth_reference(h, 1), (std::vector<double>{3, 4}));
}

TEST(SmoothReference, ShortHistoryUsesAll) {
    std::deque<WeightSnapshot> h{{0, {3}}, {1, {6}}, {2, {9}}};
    EXPECT_NEAR((*smooth_reference(h, 5))[0], 6.0, 1e-12);
}

TEST(SmoothReference, EmptyHistoryNoReference) { EXPECT_FALSE(smooth_reference({}, 5).has_value()); }

TEST(SmoothingLoss, Values) {
    std::vector<double> w{3, 0}, ref{0, 4}, mask{1, 1};
    EXPECT_NEAR(l2_smoothing_loss(w, ref, 0.25, mask), 1.25, 1e-12);
    EXPECT_EQ(l2_smoothing_loss(w, w, 0.25, mask), 0.0);
    EXPECT_EQ(l2_smoothing_subgradient(w, w, 0.25, mask), (std::vector<double>{0, 0}));
    EXPECT_EQ(l2_smoothing_loss(w, ref, 0.0, mask), 0.0);
}

TEST(SmoothingLoss, MaskedCoordinatesIgnored) {
    std::vector<double> w{3, 100}, ref{0, 0}, mask{1, 0};
    EXPECT_NEAR(l2_smoothing_loss(w, ref, 1.0, mask), 3.0, 1e-12);
    EXPECT_EQ(l2_smoothing_subgradient(w, ref, 1.0, mask)[1], 0.0);
}

TEST(SmoothingLoss, LengthMismatch) {
    std::vector<double> a{1, 2}, b{1}, m{1, 1};
    EXPECT_EQ(error_code([&] { l2_smoothing_loss(a, b, 1.0, m); }), "dimension_mismatch");
}

TEST(SmoothingLoss, SubgradientMatchesFiniteDifference) {
    std::vector<double> w{0.3, -0.2, 0.5}, ref{0.1, 0.1, 0.1}, mask{1, 1, 0};
    auto g = l2_smoothing_subgradient(w, ref, 0.7, mask);
    for (std::size_t i = 0; i < w.size(); ++i) {
        auto hi = w, lo = w;
        hi[i] += 1e-6;
        lo[i] -= 1e-6;
        const double fd = (l2_smoothing_loss(hi, ref, 0.7, mask) - l2_smoothing_loss(lo, ref, 0.7, mask)) / 2e-6;
        EXPECT_NEAR(g[i], fd, 1e-6);
    }
}

TEST(Train, ZeroExamplesKeepsWeights) {
    auto c = catalog({"A"});
    auto s = state_for(c);
    auto w = s.mean();
    w[0] = 0.5;
    s.set_mean(w);
    auto next = train_incremental(s, TrainingSet{s.fingerprint(), {}}, TrainConfig{}, SmoothingConfig{});
    EXPECT_EQ(next.mean(), w);
    ASSERT_EQ(next.history().size(), 1u);
    EXPECT_EQ(next.history().back().weights, w);
    EXPECT_EQ(next.run_index(), 0);
}

TEST(Train, FullBatchLossDecreasesOnSeparableSet) {
    FeatureSchema two({"m"}, {"c"}, RecencyBinning{}, false);
    ModelState s(two);
    s.sync_arms(register_arm(Catalog(0.0), TitleArm{"A", 0.0, "m", "c", ArmState::active}));
    // 20 rows; the label is decided by the recency bin
    std::vector<TrainingExample> rows;
    for (int i = 0; i < 20; ++i) {
        TrainingExample e;
        e.title_id = "A";
        e.fields = TitleFields{"m", "c", i % 2 == 0 ? 0 : 3, {}, {}};
        e.reward = i % 2 == 0;
        rows.push_back(e);
    }
    TrainConfig cfg;
    cfg.batch_size = 0;
    cfg.epochs = 30;
    TrainDiagnostics d;
    train_incremental(s, TrainingSet{s.fingerprint(), rows}, cfg, SmoothingConfig{0.0, 5}, &d);
    ASSERT_EQ(d.epoch_loss.size(), 30u);
    const auto enc = encode_rows(rows, two);
    EXPECT_LT(d.epoch_loss.front(), mean_bce(s.mean(), enc));
    for (std::size_t i = 1; i < d.epoch_loss.size(); ++i) EXPECT_LT(d.epoch_loss[i], d.epoch_loss[i - 1]);
}

TEST(Train, LargeLambdaHoldsMaskedWeightsAtReference) {
    std::mt19937_64 rng(4);
    auto c = catalog({"A", "B"});
    auto s = state_for(c);
    TrainConfig cfg;
    cfg.rng_seed = 17;
    // build a history away from zero
    for (int k = 0; k < 3; ++k) s = train_incremental(s, TrainingSet{s.fingerprint(), toy_rows(rng, 400)}, cfg, SmoothingConfig{0.0, 5});
    const auto ref = *smooth_reference(s.history(), 5);
    const auto data = toy_rows(rng, 400);
    auto strong = train_incremental(s, TrainingSet{s.fingerprint(), data}, cfg, SmoothingConfig{1e3, 5});
    auto free = train_incremental(s, TrainingSet{s.fingerprint(), data}, cfg, SmoothingConfig{0.0, 5});
    const auto mask = s.schema().regularization_mask();
    double free_move = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] == 0.0) continue;
        EXPECT_LT(std::abs(strong.mean()[i] - ref[i]), 1e-2) << s.schema().feature_names()[i];
        free_move = std::max(free_move, std::abs(free.mean()[i] - ref[i]));
    }
    EXPECT_GT(free_move, 1e-2);
}

TEST(Train, SchemaMismatch) {
    auto s = state_for(catalog({"A"}));
    EXPECT_EQ(error_code([&] { train_incremental(s, TrainingSet{"0000", {}}, TrainConfig{}, SmoothingConfig{}); }),
              "schema_mismatch");
}

TEST(Train, ExitedArmNotTrained) {
    auto c = catalog({"A", "B"});
    auto s = state_for(c);
    s.sync_arms(retire_arm(c, "B"));
    std::vector<TrainingExample> rows{row("B", "drama", 0, 1)};
    EXPECT_EQ(error_code([&] { train_incremental(s, TrainingSet{s.fingerprint(), rows}, TrainConfig{}, SmoothingConfig{}); }),
              "arm_not_active");
}

TEST(Train, NanLossAborts) {
    auto s = state_for(catalog({"A"}));
    std::vector<TrainingExample> rows{row("A", "drama", 0, 1, {std::nan(""), 0.0, 0.0})};
    EXPECT_EQ(error_code([&] { train_incremental(s, TrainingSet{s.fingerprint(), rows}, TrainConfig{}, SmoothingConfig{}); }),
              "nan_loss");
}

TEST(Train, Deterministic) {
    std::mt19937_64 rng(8);
    auto s = state_for(catalog({"A", "B"}));
    auto data = toy_rows(rng, 500);
    TrainConfig cfg;
    cfg.rng_seed = 3;
    auto a = train_incremental(s, TrainingSet{s.fingerprint(), data}, cfg, SmoothingConfig{});
    auto b = train_incremental(s, TrainingSet{s.fingerprint(), data}, cfg, SmoothingConfig{});
    EXPECT_EQ(a, b);
}

TEST(Train, HistoryRingAndRunIndex) {
    std::mt19937_64 rng(8);
    ModelState s(schema(), 1.0, 3);
    s.sync_arms(catalog({"A", "B"}));
    for (int k = 0; k < 6; ++k) s = train_incremental(s, TrainingSet{s.fingerprint(), toy_rows(rng, 50)}, TrainConfig{}, SmoothingConfig{});
    EXPECT_EQ(s.run_index(), 5);
    ASSERT_EQ(s.history().size(), 3u);
    EXPECT_EQ(s.history().front().run_index, 3);
    EXPECT_EQ(s.history().back().weights, s.mean());
    EXPECT_EQ(error_code([&] { s.push_history(9, s.mean()); }), "history_gap");
}

TEST(Variance, NoRowsUnchanged) {
    std::vector<double> var{1.0, 2.0}, w{0.0, 0.0};
    EncodedRows rows;
    rows.dim = 2;
    EXPECT_EQ(update_variance(var, w, rows), var);
}

TEST(Variance, QuarterPrecisionAtHalf) {
    std::vector<double> var{1.0, 1.0}, w{0.0, 0.0};
    EncodedRows rows{2, {1.0, 0.0}, {1.0}};
    auto out = update_variance(var, w, rows);
    EXPECT_NEAR(1.0 / out[0], 1.25, 1e-12);
    EXPECT_EQ(out[1], 1.0);
}

TEST(Variance, NonzeroCoordinatesShrink) {
    std::vector<double> var{0.5, 0.5, 0.5}, w{0.3, -1.0, 2.0};
    EncodedRows rows{3, {0.2, 0.0, 1.0}, {0.0}};
    auto out = update_variance(var, w, rows);
    EXPECT_LT(out[0], 0.5);
    EXPECT_EQ(out[1], 0.5);
    EXPECT_LT(out[2], 0.5);
}

TEST(Variance, MonotoneAcrossRuns) {
    std::mt19937_64 rng(21);
    auto s = state_for(catalog({"A", "B"}));
    TrainConfig cfg;
    for (int k = 0; k < 100; ++k) {
        auto before = s.arms();
        cfg.rng_seed = static_cast<std::uint64_t>(k);
        s = train_incremental(s, TrainingSet{s.fingerprint(), toy_rows(rng, 40)}, cfg, SmoothingConfig{});
        for (const auto& [id, a] : s.arms())
            for (std::size_t i = 0; i < a.variance.size(); ++i) ASSERT_LE(a.variance[i], before.at(id).variance[i]);
    }
}

TEST(Variance, BetaCopiesIgnored) {
    std::mt19937_64 rng(5);
    auto s = state_for(catalog({"A", "B"}));
    auto organic = toy_rows(rng, 200);
    auto with_copies = augment(organic, AugmentConfig{0.15, 0.3, 9});
    ASSERT_GT(std::count_if(with_copies.begin(), with_copies.end(), [](auto& e) { return e.variance_excluded; }), 0);
    std::vector<TrainingExample> without;
    for (const auto& e : with_copies)
        if (!e.variance_excluded) without.push_back(e);
    auto a = s, b = s;
    update_arm_variances(a, with_copies);
    update_arm_variances(b, without);
    EXPECT_EQ(a.arms(), b.arms());
}

TEST(Thompson, ZeroVarianceIsDeterministic) {
    auto s = state_for(catalog({"A"}));
    std::vector<double> w(s.dim(), 0.1), x(s.dim(), 1.0);
    s.set_mean(w);
    s.set_arm_variance("A", std::vector<double>(s.dim(), 1e-300));
    SplitMix64 rng(1);
    EXPECT_NEAR(thompson_score(s, "A", x, rng), sigmoid(0.1 * static_cast<double>(s.dim())), 1e-12);
}

TEST(Thompson, ZeroMeanZeroVarianceIsHalf) {
    auto s = state_for(catalog({"A"}));
    s.set_arm_variance("A", std::vector<double>(s.dim(), 1e-300));
    std::vector<double> x(s.dim(), 0.37);
    SplitMix64 rng(1);
    EXPECT_NEAR(thompson_score(s, "A", x, rng), 0.5, 1e-12);
}

TEST(Thompson, MonteCarloMatchesSigmoidOfNormal) {
    auto s = state_for(catalog({"A"}));
    std::vector<double> x(s.dim(), 0.0);
    x[0] = 1.0;
    SplitMix64 rng(12345);
    const int n = 100000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = thompson_score(s, "A", x, rng);
        sum += v;
        sum_sq += v * v;
    }
    EXPECT_NEAR(sum / n, 0.5, 0.005);
    // E[sigmoid(Z)^2] for standard normal Z, by quadrature
    double second = 0.0;
    const double h = 1e-3;
    for (double z = -10.0; z < 10.0; z += h)
        second += sigmoid(z) * sigmoid(z) * std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI) * h;
    EXPECT_NEAR(sum_sq / n, second, 0.005);
}

TEST(Rank, SingleArm) {
    auto c = catalog({"A"});
    auto s = state_for(c);
    SplitMix64 rng(1);
    auto r = rank_titles(s, c, NdsTable{}, 10.0, rng);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].title_id, "A");
}

TEST(Rank, HigherMeanFirstWithoutVariance) {
    Catalog c(0.0);
    c = register_arm(c, TitleArm{"A", 0.0, "standard", "drama", ArmState::active});
    c = register_arm(c, TitleArm{"B", 0.0, "standard", "comedy", ArmState::active});
    auto s = state_for(c);
    auto w = s.mean();
    w[s.schema().category_index("comedy")] = 1.0;
    s.set_mean(w);
    for (auto id : {"A", "B"}) s.set_arm_variance(id, std::vector<double>(s.dim(), 1e-300));
    SplitMix64 rng(1);
    auto r = rank_titles(s, c, NdsTable{}, 10.0, rng);
    EXPECT_EQ(r[0].title_id, "B");
    EXPECT_GT(r[0].score, r[1].score);
}

TEST(Rank, SeededRepeatable) {
    auto c = catalog({"A", "B", "C", "D"});
    auto s = state_for(c);
    SplitMix64 r1(77), r2(77);
    auto a = rank_titles(s, c, NdsTable{}, 10.0, r1);
    auto b = rank_titles(s, c, NdsTable{}, 10.0, r2);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].title_id, b[i].title_id);
        EXPECT_EQ(a[i].score, b[i].score);
    }
}

TEST(Rank, MatchesPerArmThompsonScores) {
    auto c = catalog({"A", "B", "C"});
    auto s = state_for(c, 0.3);
    NdsTable nds(10.0, 8.0);
    nds.set_value("B", 0, 0.4);
    nds.set_training_stats({0.1, 0.1, 0.1}, 0.5);
    SplitMix64 r1(5), r2(5);
    auto ranked = rank_titles(s, c, nds, 10.0, r1);
    std::map<std::string, double> direct;
    for (const auto& a : c.active_arms()) direct[a.title_id] = thompson_score(s, a.title_id, featurize(a, 10.0, nds, s.schema()), r2);
    for (const auto& t : ranked) EXPECT_NEAR(t.score, direct.at(t.title_id), 1e-12);
}

TEST(Rank, EmptyCatalog) {
    auto s = state_for(Catalog(0.0));
    SplitMix64 rng(1);
    EXPECT_EQ(error_code([&] { rank_titles(s, Catalog(0.0), NdsTable{}, 1.0, rng); }), "empty_catalog");
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
    std::mt19937_64 rng(2);
    auto c = catalog({"A", "B"});
    auto s = state_for(c);
    for (int k = 0; k < 3; ++k) s = train_incremental(s, TrainingSet{s.fingerprint(), toy_rows(rng, 60)}, TrainConfig{}, SmoothingConfig{});
    s.sync_arms(retire_arm(c, "B"));
    const auto doc = checkpoint(s, json{{"note", "x"}}).dump();
    auto back = restore(json::parse(doc));
    EXPECT_EQ(back, s);
    EXPECT_EQ(checkpoint(back, json{{"note", "x"}}).dump(), doc);
}

TEST(Checkpoint, AlteredSchemaRejected) {
    auto s = state_for(catalog({"A"}));
    auto doc = checkpoint(s);
    FeatureSchema other({"standard", "high_priority"}, {"drama", "comedy"}, RecencyBinning{}, false);
    EXPECT_EQ(error_code([&] { restore(doc, other); }), "schema_mismatch");
    EXPECT_NO_THROW(restore(doc, schema()));
}

TEST(WeightExport, CsvRows) {
    auto s = state_for(catalog({"A"}));
    s = train_incremental(s, TrainingSet{s.fingerprint(), {}}, TrainConfig{}, SmoothingConfig{});
    std::ostringstream out;
    write_weight_history_csv(out, s);
    const auto text = out.str();
    EXPECT_EQ(text.substr(0, text.find('\n')), "run_index,feature_name,weight");
    EXPECT_NE(text.find("0,marketing_class=standard,0\n"), std::string::npos);
    EXPECT_NE(text.find("0,bias,0\n"), std::string::npos);
}

TEST(SmoothingProx, SatisfiesOptimality) {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.1, 5.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng() % 6;
        std::vector<double> y(n), ref(n), mask(n), metric(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = u(rng);
            ref[i] = u(rng);
            mask[i] = i + 1 == n ? 0.0 : 1.0;
            metric[i] = pos(rng);
        }
        const double lambda = pos(rng) * 0.5;
        auto x = l2_smoothing_prox(y, ref, lambda, mask, metric);
        EXPECT_EQ(x[n - 1], y[n - 1]);
        // objective at x is no worse than at nearby points
        auto objective = [&](const std::vector<double>& z) {
            double q = 0.0;
            for (std::size_t i = 0; i < n; ++i) q += 0.5 * metric[i] * (z[i] - y[i]) * (z[i] - y[i]);
            return l2_smoothing_loss(z, ref, lambda, mask) + q;
        };
        const double best = objective(x);
        for (int k = 0; k < 50; ++k) {
            auto z = x;
            for (std::size_t i = 0; i + 1 < n; ++i) z[i] += 1e-3 * u(rng);
            ASSERT_GE(objective(z), best - 1e-12);
        }
    }
}

TEST(SmoothingProx, CollapsesUnderStrongPull) {
    std::vector<double> y{1.0, 2.0, 3.0}, ref{0.0, 0.0, 0.0}, mask{1, 1, 0}, metric{1, 1, 1};
    EXPECT_EQ(l2_smoothing_prox(y, ref, 10.0, mask, metric), (std::vector<double>{0.0, 0.0, 3.0}));
    EXPECT_EQ(l2_smoothing_prox(y, ref, 0.0, mask, metric), y);
}
