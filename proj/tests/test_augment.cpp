#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include <robust_bandit/augment.hpp>

#include "oracles.hpp"

using namespace robust_bandit;

namespace {

std::size_t count_origin(const std::vector<TrainingExample>& v, ExampleOrigin o) {
    return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [&](const auto& e) { return e.origin == o; }));
}

}  // namespace

TEST(Stage1, FifteenPercentOfHundred) {
    auto in = fixture::with_bins({0, 100, 0, 0});
    std::mt19937_64 rng(1);
    auto out = augment_stage1(in, 0.15, rng);
    EXPECT_EQ(out.size(), 115u);
    EXPECT_EQ(count_origin(out, ExampleOrigin::alpha_copy), 15u);
    EXPECT_EQ(bin_counts(out)[2], 15u);
    EXPECT_EQ(oracle::check_augmentation(in, out, 0.15, 0.0), "");
}

TEST(Stage1, LastBinStays) {
    auto in = fixture::with_bins({0, 0, 0, 10});
    std::mt19937_64 rng(1);
    auto out = augment_stage1(in, 0.15, rng);
    EXPECT_EQ(out.size(), 12u);
    EXPECT_EQ(bin_counts(out)[3], 12u);
}

TEST(Stage1, ZeroAlphaIsIdentity) {
    auto in = fixture::with_bins({3, 4, 5, 6});
    std::mt19937_64 rng(1);
    EXPECT_EQ(augment_stage1(in, 0.0, rng), in);
}

TEST(Stage1, CopiesAreDistinctRowsPerTitle) {
    auto in = fixture::with_bins({0, 40, 0, 0});
    std::mt19937_64 rng(5);
    auto out = augment_stage1(in, 0.5, rng);
    std::set<std::int64_t> ids;
    for (std::size_t i = in.size(); i < out.size(); ++i) ids.insert(out[i].request_id);
    EXPECT_EQ(ids.size(), 20u);
}

TEST(Stage1, RewardsCopied) {
    auto in = fixture::with_bins({0, 50, 0, 0});
    std::mt19937_64 rng(2);
    auto out = augment_stage1(in, 0.2, rng);
    for (std::size_t i = in.size(); i < out.size(); ++i)
        EXPECT_EQ(out[i].reward, in[static_cast<std::size_t>(out[i].request_id)].reward);
}

TEST(Stage2, TopsUpDeficientBin) {
    auto in = fixture::with_bins({500, 300, 180, 20});
    std::mt19937_64 rng(3);
    auto out = augment_stage2(in, 0.10, rng);
    EXPECT_EQ(out.size(), 1080u);
    EXPECT_EQ(bin_counts(out), (std::array<std::size_t, 4>{500, 300, 180, 100}));
    EXPECT_EQ(count_origin(out, ExampleOrigin::beta_copy), 80u);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i].variance_excluded, i >= in.size());
    EXPECT_EQ(oracle::check_augmentation(in, out, 0.0, 0.10), "");
}

TEST(Stage2, NoDeficitIsIdentity) {
    auto in = fixture::with_bins({30, 30, 20, 20});
    std::mt19937_64 rng(3);
    EXPECT_EQ(augment_stage2(in, 0.10, rng), in);
}

TEST(Stage2, ZeroBetaIsIdentity) {
    auto in = fixture::with_bins({100, 0, 0, 1});
    std::mt19937_64 rng(3);
    EXPECT_EQ(augment_stage2(in, 0.0, rng), in);
}

TEST(Augment, Deterministic) {
    std::mt19937_64 gen(9);
    auto in = fixture::random_examples(gen);
    AugmentConfig cfg{0.15, 0.10, 42};
    EXPECT_EQ(augment(in, cfg), augment(in, cfg));
}

TEST(Augment, ZeroIsIdentity) {
    std::mt19937_64 gen(9);
    auto in = fixture::random_examples(gen);
    EXPECT_EQ(augment(in, AugmentConfig{0.0, 0.0, 1}), in);
}

TEST(Augment, StageTwoDeficitsUseStageOneOutput) {
    auto in = fixture::with_bins({500, 300, 180, 20});
    auto out = augment(in, AugmentConfig{0.15, 0.10, 7});
    // brute-force recount: 150 alpha copies, N = 1150, target 115 per bin
    std::array<std::size_t, 4> alpha{}, beta{}, all{};
    for (const auto& e : out) {
        ++all[static_cast<std::size_t>(e.fields.recency_bin)];
        if (e.origin == ExampleOrigin::alpha_copy) ++alpha[static_cast<std::size_t>(e.fields.recency_bin)];
        if (e.origin == ExampleOrigin::beta_copy) ++beta[static_cast<std::size_t>(e.fields.recency_bin)];
    }
    EXPECT_EQ(alpha[0] + alpha[1] + alpha[2] + alpha[3], 150u);
    EXPECT_EQ(alpha[0], 0u);
    const std::size_t bin3_before = 20 + alpha[3];
    EXPECT_EQ(beta[3], bin3_before < 115 ? 115 - bin3_before : 0u);
    EXPECT_EQ(beta[0] + beta[1] + beta[2], 0u);
    EXPECT_GE(all[3], 115u);
    EXPECT_EQ(oracle::check_augmentation(in, out, 0.15, 0.10), "");
}

TEST(Augment, RandomSetsSatisfyProperties) {
    std::mt19937_64 gen(2024);
    std::uniform_real_distribution<double> a(0.0, 0.5), b(0.0, 0.3);
    for (int trial = 0; trial < 200; ++trial) {
        auto in = fixture::random_examples(gen);
        const double alpha = a(gen), beta = b(gen);
        auto out = augment(in, AugmentConfig{alpha, beta, gen()});
        ASSERT_EQ(oracle::check_augmentation(in, out, alpha, beta), "") << "trial " << trial;
    }
}

TEST(Augment, InvalidConfig) {
    EXPECT_THROW(augment({}, AugmentConfig{-0.1, 0.1, 0}), bandit_error);
    EXPECT_THROW(augment({}, AugmentConfig{0.1, 1.0, 0}), bandit_error);
}

TEST(Augment, CsvExport) {
    auto in = fixture::with_bins({1, 0, 0, 0});
    in[0].fields.nds = {0.5, 0.25, 0.125};
    auto out = augment(in, AugmentConfig{0.0, 0.5, 1});
    std::ostringstream s;
    write_augmented_csv(s, out);
    EXPECT_EQ(s.str(),
              "title_id,bin,marketing_class,content_category,nds1,nds2,nds3,reward,origin,variance_excluded\n"
              "A,0,standard,drama,0.5,0.25,0.125,1,organic,0\n"
              "A,1,standard,drama,0.5,0.25,0.125,1,beta_copy,1\n"
              "A,2,standard,drama,0.5,0.25,0.125,1,beta_copy,1\n"
              "A,3,standard,drama,0.5,0.25,0.125,1,beta_copy,1\n");
}
