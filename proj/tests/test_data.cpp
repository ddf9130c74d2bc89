#include <gtest/gtest.h>

#include <algorithm>
#include <deque>
#include <map>
#include <numeric>
#include <set>

#include "test_util.hpp"

using namespace bcosgnn;

namespace {

using EdgeSet = std::set<std::pair<std::size_t, std::size_t>>;

EdgeSet induced(const AttributedGraph& g, const std::vector<std::size_t>& nodes) {
    EdgeSet out;
    for (const auto& [s, t] : g.edges)
        if (s < t && std::ranges::count(nodes, s) && std::ranges::count(nodes, t)) out.insert({s, t});
    return out;
}

/// Brute force over all bijections onto {0..4}.
bool isomorphic_to(const EdgeSet& edges, const std::vector<std::size_t>& nodes, const EdgeSet& pattern) {
    if (edges.size() != pattern.size()) return false;
    std::vector<std::size_t> perm{0, 1, 2, 3, 4};
    do {
        bool ok = true;
        for (const auto& [a, b] : edges) {
            const auto ia = static_cast<std::size_t>(std::ranges::find(nodes, a) - nodes.begin());
            const auto ib = static_cast<std::size_t>(std::ranges::find(nodes, b) - nodes.begin());
            std::size_t u = perm[ia], v = perm[ib];
            if (u > v) std::swap(u, v);
            if (!pattern.contains({u, v})) {
                ok = false;
                break;
            }
        }
        if (ok) return true;
    } while (std::ranges::next_permutation(perm).found);
    return false;
}

const EdgeSet kHouse{{0, 1}, {1, 2}, {2, 3}, {0, 3}, {2, 4}, {3, 4}};
const EdgeSet kCycle{{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 4}};

bool connected(const AttributedGraph& g, const std::vector<std::size_t>& nodes) {
    std::set<std::size_t> seen{nodes.front()};
    std::deque<std::size_t> q{nodes.front()};
    while (!q.empty()) {
        const std::size_t u = q.front();
        q.pop_front();
        for (const auto& [s, t] : g.edges)
            if (s == u && std::ranges::count(nodes, t) && seen.insert(t).second) q.push_back(t);
    }
    return seen.size() == nodes.size();
}

std::size_t column_of(const AttributedGraph& g, std::size_t i) {
    for (std::size_t c = 0; c < g.feature_dim(); ++c)
        if (g.x(i, c) == 1.0) return c;
    return g.feature_dim();
}

struct HaloDecoded {
    std::size_t halogen = 0, position = 0;
};

/// Reads the label back from the graph: halogen from node features, position from ring distance.
HaloDecoded decode_halo(const AttributedGraph& g) {
    const std::vector<std::size_t> mask = g.gt_nodes();
    std::vector<std::size_t> ring, halogens;
    for (std::size_t i : mask) (column_of(g, i) == atom_C ? ring : halogens).push_back(i);
    EXPECT_EQ(ring.size(), 6u);
    EXPECT_EQ(halogens.size(), 2u);
    std::vector<std::size_t> anchors;
    for (std::size_t h : halogens)
        for (const auto& [s, t] : g.edges)
            if (s == h) anchors.push_back(t);
    // BFS inside the ring.
    std::map<std::size_t, std::size_t> dist{{anchors[0], 0}};
    std::deque<std::size_t> q{anchors[0]};
    while (!q.empty()) {
        const std::size_t u = q.front();
        q.pop_front();
        for (const auto& [s, t] : g.edges)
            if (s == u && std::ranges::count(ring, t) && !dist.contains(t)) {
                dist[t] = dist[u] + 1;
                q.push_back(t);
            }
    }
    const std::size_t col = column_of(g, halogens[0]);
    const std::size_t h = col == atom_Cl ? 0 : (col == atom_F ? 1 : 2);
    return {h, dist.at(anchors[1]) - 1};
}

}  // namespace

TEST(Ba2Motif, SizesBalanceAndMasks) {
    const Dataset d = generate_ba2motif({1000, 20, 1, 10, 7});
    EXPECT_EQ(d.size(), 1000u);
    EXPECT_EQ(d.class_histogram(), (std::vector<std::size_t>{500, 500}));
    EXPECT_EQ(d.feature_dim, 11u);
    EXPECT_NO_THROW(d.validate());
    for (const auto& g : d.graphs) {
        EXPECT_EQ(g.gt_nodes().size(), 5u);
        EXPECT_EQ(g.num_nodes(), 25u);
        std::vector<std::size_t> all(g.num_nodes());
        std::iota(all.begin(), all.end(), std::size_t{0});
        EXPECT_TRUE(connected(g, all));
        for (std::size_t i = 0; i < g.num_nodes(); ++i) {
            const auto row = g.x.row(i);
            EXPECT_EQ(std::accumulate(row.begin(), row.end(), 0.0), 1.0);
            EXPECT_EQ(column_of(g, i), std::min<std::size_t>(neighbors(g, i).size(), 10));
        }
    }
}

TEST(Ba2Motif, MaskedNodesFormTheLabelledMotif) {
    const Dataset d = generate_ba2motif({200, 20, 1, 10, 3});
    for (const auto& g : d.graphs) {
        const std::vector<std::size_t> nodes = g.gt_nodes();
        const EdgeSet e = induced(g, nodes);
        EXPECT_TRUE(isomorphic_to(e, nodes, g.label == 0 ? kHouse : kCycle));
        EXPECT_FALSE(isomorphic_to(e, nodes, g.label == 0 ? kCycle : kHouse));
        EXPECT_TRUE(connected(g, nodes));
    }
}

TEST(Ba2Motif, SameSpecSameBytes) {
    const Ba2MotifSpec spec{40, 20, 1, 10, 11};
    EXPECT_EQ(to_json_text(dataset_to_json(generate_ba2motif(spec))), to_json_text(dataset_to_json(generate_ba2motif(spec))));
    Ba2MotifSpec other = spec;
    other.seed = 12;
    EXPECT_NE(to_json_text(dataset_to_json(generate_ba2motif(spec))), to_json_text(dataset_to_json(generate_ba2motif(other))));
}

TEST(Ba2Motif, CapWarningCountsHighDegreeNodes) {
    GenerationReport rep;
    generate_ba2motif({50, 60, 2, 3, 1}, &rep);
    EXPECT_GT(rep.capped_degrees, 0u);
}

TEST(Ba2Motif, InvalidSpecs) {
    EXPECT_THROW(generate_ba2motif({0, 20, 1, 10, 0}), ContractViolation);
    EXPECT_THROW(generate_ba2motif({3, 20, 1, 10, 0}), ContractViolation);
    EXPECT_THROW(generate_ba2motif({10, 4, 1, 10, 0}), ContractViolation);
}

TEST(HaloBenzene, SizesBalanceAndMasks) {
    const Dataset d = generate_halobenzene({9000, 30, 56, 0.15, 5});
    EXPECT_EQ(d.size(), 9000u);
    EXPECT_EQ(d.class_histogram(), std::vector<std::size_t>(9, 1000));
    EXPECT_NO_THROW(d.validate());
    for (const auto& g : d.graphs) EXPECT_EQ(g.gt_nodes().size(), 8u);
}

TEST(HaloBenzene, StructureMatchesLabel) {
    const Dataset d = generate_halobenzene({900, 10, 30, 0.15, 9});
    for (const auto& g : d.graphs) {
        const std::vector<std::size_t> mask = g.gt_nodes();
        // Halogen columns only on masked nodes.
        for (std::size_t i = 0; i < g.num_nodes(); ++i) {
            const std::size_t c = column_of(g, i);
            if (c == atom_F || c == atom_Cl || c == atom_Br) {
                EXPECT_TRUE((*g.gt_mask)[i]);
            }
        }
        const HaloDecoded h = decode_halo(g);
        EXPECT_EQ(3 * h.halogen + h.position, g.label);
        EXPECT_TRUE(connected(g, mask));
        // Ring: six carbons, chordless cycle, every ring edge aromatic.
        std::vector<std::size_t> ring;
        for (std::size_t i : mask)
            if (column_of(g, i) == atom_C) ring.push_back(i);
        std::size_t ring_edges = 0;
        for (std::size_t e = 0; e < g.edges.size(); ++e) {
            const auto [s, t] = g.edges[e];
            const bool inside = std::ranges::count(ring, s) && std::ranges::count(ring, t);
            if (inside) {
                ++ring_edges;
                EXPECT_EQ((*g.edge_features)(e, bond_aromatic), 1.0);
            } else {
                EXPECT_EQ((*g.edge_features)(e, bond_aromatic), 0.0);
            }
        }
        EXPECT_EQ(ring_edges, 12u);
        for (std::size_t r : ring) {
            std::size_t deg = 0;
            for (const auto& [s, t] : g.edges) deg += s == r && std::ranges::count(ring, t);
            EXPECT_EQ(deg, 2u);
        }
    }
}

TEST(HaloBenzene, FeatureTopologyFactorization) {
    const Dataset d = generate_halobenzene({90, 10, 20, 0.15, 21});
    for (const auto& g : d.graphs) {
        const HaloDecoded before = decode_halo(g);
        // Swap the halogen identity: only the halogen component changes.
        AttributedGraph swapped = g;
        const std::size_t from = column_of(g, g.gt_nodes().back());
        const std::size_t to = from == atom_F ? atom_Br : atom_F;
        for (std::size_t i = 0; i < g.num_nodes(); ++i)
            if (column_of(g, i) == from) {
                swapped.x(i, from) = 0.0;
                swapped.x(i, to) = 1.0;
            }
        const HaloDecoded after = decode_halo(swapped);
        EXPECT_NE(after.halogen, before.halogen);
        EXPECT_EQ(after.position, before.position);
    }
}

TEST(HaloBenzene, DeterministicAndValidated) {
    const HaloBenzeneSpec spec{18, 10, 15, 0.15, 4};
    EXPECT_EQ(to_json_text(dataset_to_json(generate_halobenzene(spec))),
              to_json_text(dataset_to_json(generate_halobenzene(spec))));
    EXPECT_THROW(generate_halobenzene({18, 9, 15, 0.15, 4}), ContractViolation);
    EXPECT_THROW(generate_halobenzene({10, 10, 15, 0.15, 4}), ContractViolation);
    EXPECT_THROW(generate_halobenzene({18, 20, 15, 0.15, 4}), ContractViolation);
}

TEST(Stats, SidecarFields) {
    const Dataset d = generate_ba2motif({10, 20, 1, 10, 1});
    const ojson s = dataset_stats_json(d);
    EXPECT_EQ(s["num_graphs"].get<std::size_t>(), 10u);
    EXPECT_DOUBLE_EQ(s["avg_nodes"].get<double>(), 25.0);
    // BA tree (19 edges) + 5-cycle (5) + roof (1, house only) + bridge (1), both directions.
    EXPECT_DOUBLE_EQ(s["avg_edges"].get<double>(), 2.0 * (19 + 5 + 1) + 1.0);
    EXPECT_EQ(s["class_histogram"].get<std::vector<std::size_t>>(), (std::vector<std::size_t>{5, 5}));
}
