#include <gtest/gtest.h>

#include <numeric>

#include "test_util.hpp"

using namespace bcosgnn;
using testutil::random_graph;
using testutil::small_config;

namespace {

GinConfig medium_config(std::size_t p0, std::size_t c, std::size_t edge_dim = 0, double b = 2.0) {
    GinConfig cfg = small_config(p0, c, Variant::bcos, b, edge_dim);
    cfg.hidden = 6;
    cfg.num_layers = 3;
    cfg.readout_depth = 2;
    cfg.epsilon = 0.25;
    return cfg;
}

double residual(const DynamicLinearForm& f, const Matrix& x) {
    Vector r = matvec(f.weights, x.data());
    for (std::size_t k = 0; k < r.size(); ++k) r[k] += f.offset[k] - f.outputs[k];
    return norm(r);
}

}  // namespace

TEST(DynamicWeights, SingleNodeLinearCaseIsProductOfNormalizedWeights) {
    GinConfig cfg = small_config(3, 2, Variant::bcos, 1.0);
    cfg.num_layers = 1;
    cfg.mlp_depth = 1;
    cfg.readout_depth = 1;
    Rng rng(1);
    const GnnModel m = GnnModel::init(cfg, rng);
    AttributedGraph g;
    g.x = testutil::random_matrix(1, 3, rng);
    const Matrix expect = matmul(m.bcos_readout().layers()[0].normalized_weights(),
                                 m.bcos_updates()[0].layers()[0].normalized_weights());
    EXPECT_LE(max_abs_diff(dynamic_weights_graph(m, g).weights, expect), 1e-14);
}

TEST(DynamicWeights, ReproduceLogitsOnRandomInstances) {
    Rng rng(2);
    for (int t = 0; t < 60; ++t) {
        const std::size_t ed = t % 2 ? 3 : 0;
        const GnnModel m = GnnModel::init(medium_config(4, 3, ed, 1.0 + 0.5 * (t % 5)), rng);
        const AttributedGraph g = random_graph(3 + rng.uniform_index(12), 4, rng, 3, ed);
        const DynamicLinearForm f = dynamic_weights_graph(m, g);
        EXPECT_EQ(f.weights.rows(), 3u);
        EXPECT_EQ(f.weights.cols(), g.num_nodes() * 4);
        ASSERT_LE(residual(f, g.x), 1e-8 * (1.0 + norm(f.outputs)));
        if (ed == 0) {
            for (double b : f.offset) EXPECT_EQ(b, 0.0);
        }
    }
}

TEST(DynamicWeights, PerNodeTargetsReproduceNodeOutputs) {
    Rng rng(3);
    GinConfig cfg = medium_config(4, 2, 2);
    cfg.readout = ReadoutMode::per_node;
    const GnnModel m = GnnModel::init(cfg, rng);
    const AttributedGraph g = random_graph(7, 4, rng, 2, 2);
    for (std::size_t i = 0; i < g.num_nodes(); ++i) {
        const DynamicLinearForm f = dynamic_weights_graph(m, g, i);
        EXPECT_LE(residual(f, g.x), 1e-8 * (1.0 + norm(f.outputs)));
    }
    EXPECT_THROW(dynamic_weights_graph(m, g), ContractViolation);
}

TEST(DynamicWeights, ZeroFeaturesGiveZeroLogits) {
    Rng rng(4);
    const GnnModel m = GnnModel::init(medium_config(4, 2), rng);
    AttributedGraph g = random_graph(6, 4, rng);
    g.x.fill(0.0);
    const DynamicLinearForm f = dynamic_weights_graph(m, g);
    for (double v : f.outputs) EXPECT_EQ(v, 0.0);
    for (double v : matvec(f.weights, g.x.data())) EXPECT_EQ(v, 0.0);
}

TEST(DynamicWeights, ReluModelIsUnsupported) {
    Rng rng(5);
    const GnnModel m = GnnModel::init(small_config(3, 2, Variant::relu), rng);
    const AttributedGraph g = random_graph(4, 3, rng);
    EXPECT_THROW(dynamic_weights_graph(m, g), UnsupportedVariant);
    EXPECT_THROW(contribution_map(m, g), UnsupportedVariant);
}

TEST(DynamicWeights, SizeGuard) {
    Rng rng(6);
    const GnnModel m = GnnModel::init(small_config(3, 2), rng);
    const AttributedGraph g = random_graph(12, 3, rng);
    EXPECT_THROW(dynamic_weights_graph(m, g, std::nullopt, ExplainLimits{10}), ContractViolation);
    EXPECT_NO_THROW(dynamic_weights_graph(m, g, std::nullopt, ExplainLimits{12}));
}

TEST(LayerwiseDynamicWeights, EmbeddingsMatchCachedForwardPass) {
    Rng rng(7);
    for (int t = 0; t < 30; ++t) {
        const std::size_t ed = t % 2 ? 2 : 0;
        const GnnModel m = GnnModel::init(medium_config(3, 2, ed), rng);
        const AttributedGraph g = random_graph(3 + rng.uniform_index(6), 3, rng, 2, ed);
        const LayerwiseDynamicWeights lw = layerwise_dynamic_weights(m, g);
        for (std::size_t k = 1; k <= m.config().num_layers; ++k) {
            const Matrix& cached = k < m.config().num_layers ? lw.trace.layers[k].input : lw.trace.embeddings;
            Vector x = matvec(lw.weights[k], g.x.data());
            for (std::size_t r = 0; r < x.size(); ++r) x[r] += lw.offsets[k][r];
            for (std::size_t r = 0; r < x.size(); ++r) ASSERT_NEAR(x[r], cached.data()[r], 1e-8);
        }
        // The two composition orders agree.
        const DynamicLinearForm f = dynamic_weights_graph(m, g);
        EXPECT_LE(max_abs_diff(lw.readout_weights, f.weights), 1e-10);
        for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(lw.readout_offset[c], f.offset[c], 1e-10);
    }
}

TEST(LayerOperator, OneLayerReproducesForwardOutput) {
    Rng rng(8);
    for (int t = 0; t < 30; ++t) {
        const std::size_t ed = t % 2 ? 2 : 0;
        const GnnModel m = GnnModel::init(medium_config(3, 2, ed), rng);
        const AttributedGraph g = random_graph(3 + rng.uniform_index(6), 3, rng, 2, ed);
        const ForwardTrace tr = gin_forward(m, g);
        for (std::size_t k = 0; k < m.config().num_layers; ++k) {
            const LayerOperator lo = layer_operator(m, tr, k);
            const Matrix& out = k + 1 < m.config().num_layers ? tr.layers[k + 1].input : tr.embeddings;
            Vector y = matvec(lo.op, tr.layers[k].input.data());
            for (std::size_t r = 0; r < y.size(); ++r) ASSERT_NEAR(y[r] + lo.offset[r], out.data()[r], 1e-8);
        }
    }
}

TEST(ContributionMap, CompletenessPerClass) {
    Rng rng(9);
    for (int t = 0; t < 40; ++t) {
        const std::size_t ed = t % 2 ? 3 : 0;
        const GnnModel m = GnnModel::init(medium_config(4, 3, ed), rng);
        const AttributedGraph g = random_graph(5 + rng.uniform_index(10), 4, rng, 3, ed);
        const ContributionMap cm = contribution_map(m, g);
        ASSERT_EQ(cm.contributions.rows(), 3u);
        ASSERT_EQ(cm.contributions.cols(), g.num_nodes() * 4);
        for (std::size_t r = 0; r < 3; ++r)
            EXPECT_LE(std::abs(cm.row_sum(r) + cm.offset[r] - cm.logits[r]), 1e-6 * std::max(1.0, std::abs(cm.logits[r])));
    }
}

TEST(ContributionMap, ZeroFeatureNodeHasZeroColumns) {
    Rng rng(10);
    const GnnModel m = GnnModel::init(medium_config(4, 2), rng);
    AttributedGraph g = random_graph(6, 4, rng);
    for (std::size_t c = 0; c < 4; ++c) g.x(2, c) = 0.0;
    const ContributionMap cm = contribution_map(m, g);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(cm.contributions(r, 2 * 4 + c), 0.0);
}

TEST(ContributionMap, DisjointDuplicateReplicatesScores) {
    Rng rng(11);
    const GnnModel m = GnnModel::init(medium_config(4, 2), rng);
    const AttributedGraph g = random_graph(6, 4, rng);
    const ContributionMap one = contribution_map(m, g);
    const ContributionMap two = contribution_map(m, disjoint_union(g, g));
    const NodeScores s1 = node_scores(one, 0), s2 = node_scores(two, 0);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_NEAR(s2.scores[i], s1.scores[i], 1e-12);
        EXPECT_NEAR(s2.scores[i + 6], s1.scores[i], 1e-12);
    }
}

TEST(NodeScores, SingleNodeEqualsLogitAndSumsToLogit) {
    Rng rng(12);
    const GnnModel m = GnnModel::init(medium_config(4, 2), rng);
    AttributedGraph g;
    g.x = testutil::random_matrix(1, 4, rng);
    const ContributionMap cm = contribution_map(m, g);
    EXPECT_NEAR(node_scores(cm, 1).scores[0], cm.logits[1], 1e-12);
    const AttributedGraph h = random_graph(9, 4, rng);
    const ContributionMap ch = contribution_map(m, h);
    const NodeScores ns = node_scores(ch, ch.predicted_class);
    const double total = std::accumulate(ns.scores.begin(), ns.scores.end(), 0.0);
    EXPECT_LE(std::abs(total - ch.logits[ch.predicted_class]), 1e-6 * std::max(1.0, std::abs(total)));
    EXPECT_THROW(node_scores(ch, 2), ContractViolation);
}

TEST(NodeScores, SymmetricGraphGivesEqualScores) {
    Rng rng(13);
    const GnnModel m = GnnModel::init(medium_config(3, 2), rng);
    AttributedGraph g;
    g.x = Matrix(5, 3);
    for (std::size_t i = 0; i < 5; ++i) {
        g.x(i, 0) = 0.7;
        g.x(i, 2) = -0.2;
        add_undirected_edge(g.edges, nullptr, i, (i + 1) % 5);
    }
    const NodeScores ns = node_scores(contribution_map(m, g), 0);
    for (std::size_t i = 1; i < 5; ++i) EXPECT_NEAR(ns.scores[i], ns.scores[0], 1e-12);
}

TEST(NodeScores, PermutationEquivarianceAndRescalingConsistency) {
    Rng rng(14);
    for (int t = 0; t < 20; ++t) {
        const GnnModel m = GnnModel::init(medium_config(4, 2), rng);
        const AttributedGraph g = random_graph(8, 4, rng, 3);
        std::vector<std::size_t> perm(8);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(perm);
        const ContributionMap cm = contribution_map(m, g);
        const NodeScores a = node_scores(cm, cm.predicted_class);
        const NodeScores b = node_scores(contribution_map(m, permute_nodes(g, perm)), cm.predicted_class);
        for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(b.scores[perm[i]], a.scores[i], 1e-9);
        // Positive input scaling rescales every logit; the ranking must not move.
        AttributedGraph scaled = g;
        scaled.x *= 3.5;
        const ContributionMap cs = contribution_map(m, scaled);
        EXPECT_EQ(node_scores(cs, cm.predicted_class).ranking, a.ranking);
    }
}

TEST(Selection, TopKHandExampleAndBounds) {
    const NodeScores ns = make_node_scores({0.9, 0.1, 0.8, 0.7, 0.2, 0.6, 0.0});
    EXPECT_EQ(top_k(ns, 5).selected, (std::vector<std::size_t>{0, 2, 3, 5, 4}));
    EXPECT_EQ(top_k(ns, 1).selected, std::vector<std::size_t>{0});
    EXPECT_EQ(top_k(ns, 7).selected.size(), 7u);
    EXPECT_THROW(top_k(ns, 0), ContractViolation);
    EXPECT_THROW(top_k(ns, 8), ContractViolation);
}

TEST(Selection, TiesBreakByAscendingIndex) {
    const NodeScores ns = make_node_scores({0.5, 1.0, 0.5, 1.0});
    EXPECT_EQ(ns.ranking, (std::vector<std::size_t>{1, 3, 0, 2}));
}

TEST(Selection, MassFractionCountsPositiveMassOnly) {
    const NodeScores ns = make_node_scores({4.0, -10.0, 3.0, 2.0, 1.0});
    EXPECT_EQ(mass_fraction(ns, 0.4).selected, std::vector<std::size_t>{0});
    EXPECT_EQ(mass_fraction(ns, 0.5).selected, (std::vector<std::size_t>{0, 2}));
    EXPECT_EQ(mass_fraction(ns, 1.0).selected, (std::vector<std::size_t>{0, 2, 3, 4}));
    EXPECT_THROW(mass_fraction(ns, 0.0), ContractViolation);
}

TEST(IntegratedGradients, ExactOnLinearModel) {
    Rng rng(15);
    const GnnModel m = GnnModel::init(medium_config(4, 3, 0, 1.0), rng);
    const AttributedGraph g = random_graph(7, 4, rng, 2);
    const ContributionMap cm = contribution_map(m, g);
    for (std::size_t steps : {1u, 7u}) {
        const NodeScores ig = integrated_gradients(m, g, steps, 1);
        const NodeScores bc = node_scores(cm, 1);
        for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(ig.scores[i], bc.scores[i], 1e-10);
    }
}

TEST(IntegratedGradients, ZeroFeaturesAndBadSteps) {
    Rng rng(16);
    const GnnModel m = GnnModel::init(small_config(3, 2, Variant::relu), rng);
    AttributedGraph g = random_graph(5, 3, rng);
    g.x.fill(0.0);
    for (double v : integrated_gradients(m, g, 10, 0).scores) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(integrated_gradients(m, g, 0, 0), ContractViolation);
    EXPECT_THROW(integrated_gradients(m, g, 5, 2), ContractViolation);
}

TEST(IntegratedGradients, CompletenessGapShrinksWithSteps) {
    Rng rng(17);
    const GnnModel m = GnnModel::init(medium_config(4, 2, 0, 2.0), rng);
    const AttributedGraph g = random_graph(8, 4, rng, 3, 0, true);
    const double target = graph_logits(m, g)[0];  // logit at the zero baseline is 0
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t steps : {8u, 32u, 128u}) {
        const Matrix attr = integrated_gradients_attributions(m, g, steps, 0);
        const double total = std::accumulate(attr.data().begin(), attr.data().end(), 0.0);
        const double gap = std::abs(total - target);
        EXPECT_LE(gap, prev * 1.05 + 1e-12);
        prev = gap;
    }
}

TEST(IntegratedGradients, BatchedPathMatchesSingleGraphGradients) {
    Rng rng(18);
    const GnnModel m = GnnModel::init(small_config(3, 2, Variant::relu, 1.0, 2), rng);
    const AttributedGraph g = random_graph(6, 3, rng, 2, 2);
    const std::size_t steps = 70;  // spans two batched chunks
    Matrix expect(6, 3);
    for (std::size_t t = 0; t < steps; ++t) {
        AttributedGraph gt = g;
        gt.x *= (static_cast<double>(t) + 0.5) / static_cast<double>(steps);
        const ModelGradients gr = gin_backward(m, gin_forward(m, gt), Matrix{{0.0, 1.0}});
        expect += gr.input;
    }
    const Matrix attr = integrated_gradients_attributions(m, g, steps, 1);
    for (std::size_t k = 0; k < expect.size(); ++k)
        EXPECT_NEAR(attr.data()[k], g.x.data()[k] * expect.data()[k] / steps, 1e-12);
}

TEST(Export, JsonFieldsAndDot) {
    ExplanationRecord r;
    r.graph_id = 4;
    r.predicted_class = 1;
    r.logits = {0.5, 2.0};
    r.scores = make_node_scores({0.2, -1.0, 0.8});
    r.explanation = top_k(r.scores, 2);
    r.jaccard = 0.5;
    const std::string text = to_json_text(explanation_to_json(r));
    EXPECT_EQ(text,
              "{\"graph_id\":4,\"predicted_class\":1,\"logits\":[0.5,2],\"node_scores\":[0.20000000000000001,-1,"
              "0.80000000000000004],\"selected_nodes\":[2,0],\"jaccard\":0.5,\"mode\":\"top_k\"}");
    AttributedGraph g;
    g.x = Matrix(3, 1, 1.0);
    add_undirected_edge(g.edges, nullptr, 0, 1);
    add_undirected_edge(g.edges, nullptr, 1, 2);
    g.gt_mask = std::vector<bool>{false, false, true};
    const std::string dot = explanation_to_dot(g, r.scores);
    EXPECT_NE(dot.find("2 [fillcolor=\"#ff0000\", color="), std::string::npos);
    EXPECT_NE(dot.find("1 [fillcolor=\"#ffffff\"]"), std::string::npos);
    EXPECT_NE(dot.find("0 -- 1;"), std::string::npos);
    EXPECT_EQ(dot.find("1 -- 0;"), std::string::npos);
}
