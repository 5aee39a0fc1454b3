#include <hrsa/sweep.hpp>

#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace hrsa;
using namespace hrsa::testing;

namespace {

using K = MetricSpec::Kind;

std::vector<Eigen::MatrixXd> random_layers(int count, Eigen::Index n, Eigen::Index d, std::mt19937_64& rng) {
    std::vector<Eigen::MatrixXd> out;
    for (int l = 0; l < count; ++l) out.push_back(gaussian(n, d, rng));
    return out;
}

SweepOptions serial() {
    SweepOptions o;
    o.jobs = 1;
    return o;
}

} // namespace

TEST(MetricSpecs, Parsing) {
    const auto specs = parse_metric_specs("cka,knn:5,dimwise,procrustes", {5, 10, 50});
    ASSERT_EQ(specs.size(), 4u);
    EXPECT_EQ(specs[0].kind, K::cka);
    EXPECT_EQ(specs[1].kind, K::knn);
    EXPECT_EQ(specs[1].k, 5);
    EXPECT_EQ(specs[1].name(), "knn:5");
    EXPECT_EQ(specs[3].name(), "procrustes");

    const auto expanded = parse_metric_specs("knn", {5, 10, 50});
    ASSERT_EQ(expanded.size(), 3u);
    EXPECT_EQ(expanded[2].k, 50);

    EXPECT_THROW(parse_metric_specs("cka,bogus", {5}), ValidationError);
    EXPECT_THROW(parse_metric_specs("knn:abc", {5}), ValidationError);
    EXPECT_THROW(parse_metric_specs("", {5}), ValidationError);
}

TEST(LayerGrid, SingleIdenticalLayer) {
    std::mt19937_64 rng(60);
    const auto s = make_set({gaussian(20, 4, rng)});
    const MetricGrid g = layer_grid(s, s, {K::cka}, serial());
    ASSERT_EQ(g.rows, 1u);
    ASSERT_EQ(g.cols, 1u);
    EXPECT_NEAR(*g.at(0, 0), 1.0, 1e-12);
}

TEST(LayerGrid, IdenticalSetsHaveUnitDiagonal) {
    std::mt19937_64 rng(61);
    const auto s = make_set(random_layers(3, 40, 6, rng));
    for (const MetricSpec& m : {MetricSpec{K::cka}, MetricSpec{K::knn, 5}, MetricSpec{K::dimwise}, MetricSpec{K::procrustes}}) {
        const MetricGrid g = layer_grid(s, s, m, serial());
        for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(*g.at(i, i), 1.0, 1e-12) << m.name();
        EXPECT_TRUE(g.nulls.empty());
    }
}

TEST(LayerGrid, DimensionMismatchYieldsNullCells) {
    std::mt19937_64 rng(62);
    const auto a = make_set({gaussian(30, 6, rng), gaussian(30, 4, rng)});
    const auto b = make_set({gaussian(30, 4, rng), gaussian(30, 4, rng)});
    const MetricGrid g = layer_grid(a, b, {K::dimwise}, serial());
    EXPECT_FALSE(g.at(0, 0));
    EXPECT_FALSE(g.at(0, 1));
    EXPECT_TRUE(g.at(1, 0));
    EXPECT_TRUE(g.at(1, 1));
    ASSERT_EQ(g.nulls.size(), 2u);
    EXPECT_EQ(g.nulls[0].reason, "D mismatch (6 vs 4)");

    // CKA compares across hidden sizes
    const MetricGrid c = layer_grid(a, b, {K::cka}, serial());
    EXPECT_TRUE(c.nulls.empty());
}

TEST(LayerGrid, ConstantLayerBecomesNullWithReason) {
    std::mt19937_64 rng(63);
    const auto a = make_set({Eigen::MatrixXd::Constant(10, 3, 1.0), gaussian(10, 3, rng)});
    const MetricGrid g = layer_grid(a, a, {K::cka}, serial());
    EXPECT_FALSE(g.at(0, 1));
    EXPECT_TRUE(g.at(1, 1));
    ASSERT_FALSE(g.nulls.empty());
    EXPECT_NE(g.nulls[0].reason.find("constant representation"), std::string::npos);
}

TEST(LayerGrid, GridWideErrors) {
    std::mt19937_64 rng(64);
    const auto a = make_set({gaussian(10, 3, rng)});
    const auto b = make_set({gaussian(11, 3, rng)});
    EXPECT_THROW(layer_grid(a, b, {K::cka}, serial()), ValidationError);
    EXPECT_THROW(layer_grid(a, a, {K::knn, 10}, serial()), ValidationError);
    EXPECT_THROW(layer_grid(a, a, {K::knn, 0}, serial()), ValidationError);
    EXPECT_THROW(layer_grid(a, a, {K::probe}, serial()), ValidationError);
    const auto c = make_set({gaussian(10, 3, rng)}, "c", "other");
    EXPECT_THROW(layer_grid(a, c, {K::cka}, serial()), ValidationError);
    SweepOptions allow = serial();
    allow.allow_fingerprint_mismatch = true;
    EXPECT_NO_THROW(layer_grid(a, c, {K::cka}, allow));
}

TEST(LayerGrid, SwappingInputsTransposes) {
    std::mt19937_64 rng(65);
    const auto a = make_set(random_layers(3, 50, 5, rng));
    const auto b = make_set(random_layers(2, 50, 5, rng));
    for (const MetricSpec& m : {MetricSpec{K::cka}, MetricSpec{K::knn, 4}, MetricSpec{K::dimwise}}) {
        const MetricGrid ab = layer_grid(a, b, m, serial());
        const MetricGrid ba = layer_grid(b, a, m, serial());
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(*ab.at(i, j), *ba.at(j, i), 1e-12) << m.name();
    }
}

TEST(LayerGrid, ParallelMatchesSerialExactly) {
    std::mt19937_64 rng(66);
    const auto a = make_set(random_layers(4, 60, 80, rng));
    const auto b = make_set(random_layers(4, 60, 80, rng));
    SweepOptions par;
    par.jobs = 4;
    par.max_parallel_gram = 2;
    for (const MetricSpec& m : {MetricSpec{K::cka}, MetricSpec{K::knn, 5}, MetricSpec{K::dimwise}, MetricSpec{K::procrustes}})
        EXPECT_EQ(layer_grid(a, b, m, serial()), layer_grid(a, b, m, par)) << m.name();
}

TEST(LayerGrid, ProbeCellsHoldCrossScore) {
    std::mt19937_64 rng(67);
    LabelSet ls;
    ls.num_classes = 2;
    ls.labels.resize(40);
    for (int i = 0; i < 40; ++i) {
        ls.labels[i] = i % 2;
        (i < 24 ? ls.splits.train : ls.splits.test).push_back(static_cast<std::size_t>(i));
    }
    Eigen::MatrixXd x = gaussian(40, 3, rng);
    for (int i = 0; i < 40; ++i) x(i, 0) += ls.labels[i] > 0 ? 4.0 : -4.0;
    const auto a = make_set({x, gaussian(40, 3, rng)});
    SweepOptions o = serial();
    o.labels = &ls;
    const MetricGrid g = layer_grid(a, a, {K::probe}, o);
    EXPECT_EQ(*g.at(0, 0), cross_transfer(x, x, ls).cross_score);
    EXPECT_EQ(*g.at(0, 0), 1.0);
}

TEST(Subsample, CapAndDeterminism) {
    std::mt19937_64 rng(68);
    const auto small = make_set({gaussian(10, 3, rng)});
    const auto kept = subsample_tokens(small, small, 100, 0);
    EXPECT_FALSE(kept.subsampled);
    EXPECT_EQ(kept.a.layer(0).data(), small.layer(0).data());

    const auto a = make_set(random_layers(2, 1000, 3, rng));
    const auto b = make_set(random_layers(2, 1000, 3, rng));
    const auto s1 = subsample_tokens(a, b, 100, 7);
    const auto s2 = subsample_tokens(a, b, 100, 7);
    const auto s3 = subsample_tokens(a, b, 100, 8);
    EXPECT_TRUE(s1.subsampled);
    EXPECT_EQ(s1.rows.size(), 100u);
    EXPECT_TRUE(std::is_sorted(s1.rows.begin(), s1.rows.end()));
    EXPECT_EQ(s1.rows, s2.rows);
    EXPECT_NE(s1.rows, s3.rows);
    for (std::size_t l = 0; l < 2; ++l)
        for (std::size_t r = 0; r < s1.rows.size(); ++r) {
            EXPECT_EQ(s1.a.layer(l).data().row(static_cast<Eigen::Index>(r)),
                      a.layer(l).data().row(static_cast<Eigen::Index>(s1.rows[r])));
            EXPECT_EQ(s1.b.layer(l).data().row(static_cast<Eigen::Index>(r)),
                      b.layer(l).data().row(static_cast<Eigen::Index>(s1.rows[r])));
        }
    EXPECT_EQ(layer_grid(s1.a, s1.b, {K::cka}, serial()), layer_grid(s2.a, s2.b, {K::cka}, serial()));
}

TEST(Subsample, LabelsFollowKeptRows) {
    LabelSet ls;
    ls.num_classes = 2;
    ls.labels.resize(6);
    ls.labels << 0, 1, 0, 1, 1, 0;
    ls.splits.train = {0, 1, 2};
    ls.splits.test = {3, 4, 5};
    const LabelSet sub = subsample_labels(ls, {1, 2, 5});
    EXPECT_EQ(sub.labels, (Eigen::VectorXd(3) << 1, 0, 0).finished());
    EXPECT_EQ(sub.splits.train, (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(sub.splits.test, (std::vector<std::size_t>{2}));
}

TEST(DiagonalSummary, MeansNonNullDiagonal) {
    MetricGrid g("cka", 3, 3);
    g.values = {0.4, 0.9, 0.9, 0.9, 0.5, 0.9, 0.9, 0.9, 0.6};
    EXPECT_NEAR(*diagonal_summary(g).mean, 0.5, 1e-15);
    g.values[4].reset();
    EXPECT_NEAR(*diagonal_summary(g).mean, 0.5, 1e-15);
    EXPECT_FALSE(diagonal_summary(g).per_layer[1]);
    EXPECT_THROW(diagonal_summary(MetricGrid("cka", 2, 3)), ValidationError);
}

TEST(CheckpointSeries, FlatForIdenticalSteps) {
    std::mt19937_64 rng(69);
    const auto s = make_set(random_layers(2, 30, 4, rng));
    SeriesOptions opt;
    opt.sweep = serial();
    const auto one = checkpoint_series({{s, s}}, {0}, {{K::cka}}, opt);
    EXPECT_NEAR(*one.per_metric.at("cka")[0], 1.0, 1e-12);
    const auto two = checkpoint_series({{s, s}, {s, s}}, {0, 10}, {{K::cka}, {K::dimwise}}, opt);
    EXPECT_EQ(two.per_metric.at("cka")[0], two.per_metric.at("cka")[1]);
    EXPECT_EQ(two.per_metric.at("dimwise")[0], two.per_metric.at("dimwise")[1]);
}

TEST(CheckpointSeries, RealignmentTrajectory) {
    std::mt19937_64 rng(70);
    const Eigen::MatrixXd x0 = gaussian(80, 6, rng), x1 = gaussian(80, 6, rng);
    const auto x = make_set({x0, x1});
    const RotationPath path(6, rng);
    std::vector<std::pair<ActivationSet, ActivationSet>> pairs;
    std::vector<double> oracle;
    for (double t : {0.0, 0.5, 1.0}) {
        const Eigen::MatrixXd qt = path.at(t);
        pairs.emplace_back(x, make_set({x0 * qt, x1 * qt}));
        oracle.push_back(0.5 * (dimwise_correlation(x0, x0 * qt).mean + dimwise_correlation(x1, x1 * qt).mean));
    }
    SeriesOptions opt;
    opt.sweep = serial();
    const auto series = checkpoint_series(pairs, {100, 200, 300}, {{K::knn, 5}, {K::dimwise}}, opt);
    const auto& dim = series.per_metric.at("dimwise");
    for (std::size_t s = 0; s < 3; ++s) {
        EXPECT_EQ(*series.per_metric.at("knn:5")[s], 1.0);
        EXPECT_NEAR(*dim[s], oracle[s], 1e-12);
    }
    EXPECT_LT(*dim[0], *dim[1]);
    EXPECT_LT(*dim[1], *dim[2]);
}

TEST(CheckpointSeries, Errors) {
    std::mt19937_64 rng(71);
    const auto s = make_set({gaussian(10, 3, rng)});
    const auto t = make_set({gaussian(11, 3, rng)});
    EXPECT_THROW(checkpoint_series({{s, s}, {s, s}}, {5, 5}, {{K::cka}}), ValidationError);
    EXPECT_THROW(checkpoint_series({{s, s}}, {1, 2}, {{K::cka}}), ValidationError);
    try {
        checkpoint_series({{s, s}, {s, t}}, {3, 7}, {{K::cka}});
        FAIL() << "expected a validation error";
    } catch (const ValidationError& e) {
        EXPECT_EQ(std::string(e.what()).rfind("step 7:", 0), 0u) << e.what();
    }
}
