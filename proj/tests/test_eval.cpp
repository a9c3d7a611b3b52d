#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "mcl/eval.hpp"
#include "mcl/synth.hpp"

using namespace mcl;

TEST(Report, PerfectPredictor) {
    const auto r = make_report({0.0, 0.0, 0.0});
    EXPECT_EQ(r.mean_error, 0.0);
    EXPECT_EQ(r.failure_rate, 0.0);
    EXPECT_EQ(r.n_samples, 3u);
}

TEST(Report, HandExample) {
    const auto r = make_report({0.05, 0.15});
    EXPECT_NEAR(r.mean_error, 10.0, 1e-12);
    EXPECT_EQ(r.failure_rate, 50.0);
}

TEST(Report, ExactlyTenPercentIsNotAFailure) {
    EXPECT_EQ(make_report({0.10}).failure_rate, 0.0);
    EXPECT_EQ(make_report({std::nextafter(0.10, 1.0)}).failure_rate, 100.0);
}

TEST(Report, EmptyIsError) {
    EXPECT_THROW(make_report({}), ContractError);
}

TEST(Ced, HandExample) {
    const auto c = ced_curve({0.05, 0.15}, {0.10});
    EXPECT_EQ(c.fractions[0], 0.5);
}

TEST(Ced, Extremes) {
    const auto c = ced_curve({0.05, 0.15}, {0.01, 0.5});
    EXPECT_EQ(c.fractions[0], 0.0);
    EXPECT_EQ(c.fractions[1], 1.0);
    EXPECT_THROW(ced_curve({0.1}, {0.2, 0.1}), ContractError);
}

TEST(Ced, DefaultGrid) {
    const auto t = default_ced_thresholds();
    ASSERT_EQ(t.size(), 101u);
    EXPECT_EQ(t.front(), 0.0);
    EXPECT_NEAR(t.back(), 0.2, 1e-15);
}

TEST(Ced, MonotoneAndConsistentWithFailureRate) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 0.25);
    std::uniform_int_distribution<int> len(1, 60);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> e(static_cast<std::size_t>(len(rng)));
        for (auto& v : e) v = u(rng);
        if (trial % 7 == 0) e[0] = 0.10;
        const auto c = ced_curve(e, default_ced_thresholds());
        for (std::size_t k = 1; k < c.fractions.size(); ++k) ASSERT_GE(c.fractions[k], c.fractions[k - 1]);
        const double at10 = ced_curve(e, {failure_threshold}).fractions[0];
        const auto r = make_report(e);
        const auto failures = std::count_if(e.begin(), e.end(), [](double v) { return v > failure_threshold; });
        ASSERT_EQ(static_cast<std::size_t>(failures) + static_cast<std::size_t>(std::llround(at10 * static_cast<double>(e.size()))), e.size());
        ASSERT_NEAR(r.failure_rate, 100.0 * (1.0 - at10), 1e-9);
    }
}

TEST(Fps, Arithmetic) {
    EXPECT_DOUBLE_EQ(fps_from(10, 0.5), 20.0);
    EXPECT_THROW(fps_from(10, 0.0), ContractError);
}

TEST(Fps, BenchRunsSingleImages) {
    NetworkSpec s = NetworkSpec::for_pattern(5);
    s.widths = {2, 2, 2, 2};
    s.feature_dim = 4;
    const auto p = init_params<float>(s, 1);
    std::vector<Tensor<float>> imgs{Tensor<float>(Dims{50, 50, 1})};
    EXPECT_GT(fps_bench(p, 0, imgs, 3), 0.0);
    EXPECT_THROW(fps_bench(p, 0, imgs, 0), ContractError);
}

TEST(Occlusion, TableHasEightCells) {
    NetworkSpec s = NetworkSpec::for_pattern(68);
    s.widths = {2, 2, 4, 4};
    s.feature_dim = 6;
    const auto wm = init_params<float>(s, 1);
    auto am = wm;
    am.set_single_head(init_params<float>(s, 2).head(0).value);
    const auto test = synth_generate(pattern_for(68), 4, 3, {}, "test");
    const auto cp = clusters_for_pattern(test.pattern);
    const auto t = occlusion_report(wm, am, test, cp.index_of("left_eye"));
    EXPECT_EQ(t.cluster, "left_eye");
    EXPECT_EQ(t.cells.size(), 8u);
    for (const auto& c : t.cells) EXPECT_TRUE(std::isfinite(c.mean_error));
    EXPECT_NO_THROW(t.at("AM", "occluded", "others"));
    EXPECT_THROW(t.at("BM", "clean", "others"), ContractError);
    EXPECT_THROW(occlusion_report(wm, am, test, 7), ContractError);

    std::ostringstream csv;
    write_occlusion_csv(csv, t);
    const std::string text = csv.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 9);
}

TEST(Occlusion, NoOpFillGivesIdenticalErrors) {
    NetworkSpec s = NetworkSpec::for_pattern(5);
    s.widths = {2, 2, 4, 4};
    s.feature_dim = 6;
    const auto wm = init_params<float>(s, 1);
    auto test = synth_generate(pattern_for(5), 3, 3, {}, "test");
    for (auto& smp : test.samples) smp.image = Image(50, 50, 128);
    const auto t = occlusion_report(wm, wm, test, 0);
    EXPECT_EQ(t.at("WM", "clean", "left_eye"), t.at("WM", "occluded", "left_eye"));
    EXPECT_EQ(t.at("WM", "clean", "others"), t.at("WM", "occluded", "others"));
}

TEST(Csv, ReportAndCedFormats) {
    std::ostringstream r;
    write_report_csv(r, {{"AM", "val", 5.25, 0.0}});
    EXPECT_EQ(r.str(), "model,dataset,mean_error,failure_rate\nAM,val,5.25,0\n");
    std::ostringstream c;
    write_ced_csv(c, ced_curve({0.05}, {0.0, 0.1}));
    EXPECT_EQ(c.str(), "threshold,fraction\n0,0\n0.1,1\n");
    std::ostringstream p;
    write_perturbation_csv(p, {{0.4, 3, 6.5}});
    EXPECT_EQ(p.str(), "delta,seed,mean_error\n0.4,3,6.5\n");
}

TEST(Predictions, SelectedLandmarkSubset) {
    Shape gt(5);
    gt.set(0, {0.3, 0.4});
    gt.set(1, {0.7, 0.4});
    Shape pred = gt;
    pred.set(4, {0.4, 0.0});
    const auto all = per_sample_errors({pred}, {gt});
    const auto sub = per_sample_errors({pred}, {gt}, {3, 4});
    EXPECT_NEAR(sub[0], all[0] * 5.0 / 2.0, 1e-12);
    EXPECT_THROW(per_sample_errors({pred}, {}), ContractError);
}
