#include <gtest/gtest.h>

#include <set>

#include "test_util.hpp"

using namespace bcosgnn;

namespace {

AttributedGraph cycle(std::size_t n) {
    AttributedGraph g;
    g.x = Matrix(n, 1, 1.0);
    for (std::size_t i = 0; i < n; ++i) add_undirected_edge(g.edges, nullptr, i, (i + 1) % n);
    return g;
}

Dataset labelled(std::size_t per_class, std::size_t classes) {
    Dataset d{{}, classes, 1, std::nullopt};
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t i = 0; i < per_class; ++i) {
            AttributedGraph g = cycle(3);
            g.label = c;
            d.graphs.push_back(g);
        }
    return d;
}

}  // namespace

TEST(Neighbors, IsolatedTriangleAndCycle) {
    AttributedGraph iso;
    iso.x = Matrix(1, 1);
    EXPECT_TRUE(neighbors(iso, 0).empty());
    EXPECT_EQ(neighbors(cycle(3), 0), (std::vector<std::size_t>{1, 2}));
    EXPECT_EQ(neighbors(cycle(5), 2), (std::vector<std::size_t>{1, 3}));
    EXPECT_THROW(neighbors(cycle(3), 3), ContractViolation);
}

TEST(GraphValidate, RejectsBrokenInvariants) {
    AttributedGraph g = cycle(4);
    EXPECT_NO_THROW(g.validate());
    g.edges.emplace_back(0, 2);
    EXPECT_THROW(g.validate(), ContractViolation);
    g = cycle(4);
    g.edges.emplace_back(0, 7);
    EXPECT_THROW(g.validate(), ContractViolation);
    g = cycle(4);
    g.gt_mask = std::vector<bool>(4, false);
    EXPECT_THROW(g.validate(), ContractViolation);
}

TEST(StratifiedSplit, BaSizesAndBalance) {
    const Dataset d = labelled(500, 2);
    Rng rng(1);
    const DatasetSplit s = stratified_split(d, {0.7, 0.2, 0.1}, rng);
    EXPECT_EQ(s.train.size(), 700u);
    EXPECT_EQ(s.val.size(), 200u);
    EXPECT_EQ(s.test.size(), 100u);
    EXPECT_EQ(s.train.class_histogram(), (std::vector<std::size_t>{350, 350}));
    EXPECT_EQ(s.val.class_histogram(), (std::vector<std::size_t>{100, 100}));
    EXPECT_EQ(s.test.class_histogram(), (std::vector<std::size_t>{50, 50}));
}

TEST(StratifiedSplit, HaloSizes) {
    const Dataset d = labelled(1000, 9);
    Rng rng(2);
    const SplitIndices s = stratified_split_indices(d, {0.8, 0.1, 0.1}, rng);
    EXPECT_EQ(s.train.size(), 7200u);
    EXPECT_EQ(s.val.size(), 900u);
    EXPECT_EQ(s.test.size(), 900u);
}

TEST(StratifiedSplit, SingleClassKeepsFractions) {
    const Dataset d = labelled(100, 1);
    Rng rng(3);
    const SplitIndices s = stratified_split_indices(d, {0.7, 0.2, 0.1}, rng);
    EXPECT_EQ(s.train.size(), 70u);
    EXPECT_EQ(s.val.size(), 20u);
    EXPECT_EQ(s.test.size(), 10u);
}

TEST(StratifiedSplit, DisjointCoveringDeterministicAndNearTarget) {
    Dataset d = labelled(37, 3);
    d.graphs.resize(100);  // uneven classes: 37, 37, 26
    for (std::uint64_t seed : {4u, 5u, 6u}) {
        Rng a(seed), b(seed);
        const SplitIndices s = stratified_split_indices(d, {0.7, 0.2, 0.1}, a);
        const SplitIndices t = stratified_split_indices(d, {0.7, 0.2, 0.1}, b);
        EXPECT_EQ(s.train, t.train);
        EXPECT_EQ(s.val, t.val);
        EXPECT_EQ(s.test, t.test);
        std::set<std::size_t> all;
        for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(part->begin(), part->end());
        EXPECT_EQ(all.size(), 100u);
        EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), 100u);
        const std::vector<std::size_t> total = d.class_histogram();
        const double fr[] = {0.7, 0.2, 0.1};
        const std::vector<std::size_t>* parts[] = {&s.train, &s.val, &s.test};
        for (int p = 0; p < 3; ++p) {
            const std::vector<std::size_t> h = d.subset(*parts[p]).class_histogram();
            for (std::size_t c = 0; c < 3; ++c)
                EXPECT_LE(std::abs(static_cast<double>(h[c]) - fr[p] * static_cast<double>(total[c])), 1.0);
        }
    }
}

TEST(StratifiedSplit, Errors) {
    Rng rng(7);
    EXPECT_THROW(stratified_split_indices(labelled(2, 2), {0.7, 0.2, 0.1}, rng), ContractViolation);
    EXPECT_THROW(stratified_split_indices(labelled(10, 2), {0.7, 0.2, 0.2}, rng), ContractViolation);
    EXPECT_THROW(stratified_split_indices(labelled(10, 2), {1.0, 0.0, 0.0}, rng), ContractViolation);
}

TEST(DatasetJson, RoundTripAndFieldOrder) {
    Rng rng(8);
    Dataset d{{}, 3, 2, 4};
    for (int i = 0; i < 3; ++i) {
        AttributedGraph g = testutil::random_graph(5, 2, rng, 2, 4);
        g.label = static_cast<std::size_t>(i);
        g.gt_mask = std::vector<bool>{true, false, true, false, false};
        d.graphs.push_back(g);
    }
    const std::string text = to_json_text(dataset_to_json(d));
    EXPECT_LT(text.find("\"num_classes\""), text.find("\"feature_dim\""));
    EXPECT_LT(text.find("\"feature_dim\""), text.find("\"edge_feature_dim\""));
    EXPECT_LT(text.find("\"edge_feature_dim\""), text.find("\"graphs\""));
    const Dataset back = dataset_from_json(nlohmann::json::parse(text));
    ASSERT_EQ(back.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back.graphs[i].x, d.graphs[i].x);
        EXPECT_EQ(back.graphs[i].edges, d.graphs[i].edges);
        EXPECT_EQ(*back.graphs[i].edge_features, *d.graphs[i].edge_features);
        EXPECT_EQ(*back.graphs[i].gt_mask, *d.graphs[i].gt_mask);
        EXPECT_EQ(back.graphs[i].label, d.graphs[i].label);
    }
    EXPECT_EQ(to_json_text(dataset_to_json(back)), text);
}

TEST(DatasetJson, MalformedInputIsFormatError) {
    EXPECT_THROW(dataset_from_json(nlohmann::json::parse(R"({"num_classes": 2})")), FormatError);
    EXPECT_THROW(
        dataset_from_json(nlohmann::json::parse(
            R"({"num_classes":2,"feature_dim":1,"graphs":[{"n":2,"x":[[1],[1]],"edges":[[0,1]],"label":0}]})")),
        FormatError);
}

TEST(JsonText, SeventeenDigitFloats) {
    ojson j;
    j["v"] = 0.1;
    EXPECT_EQ(to_json_text(j), "{\"v\":0.10000000000000001}");
}
