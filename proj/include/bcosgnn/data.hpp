#pragma once

// Ground-truth explainability benchmarks: BA-2Motif and a synthetic Di-Halo-Benzene.
// Graph g of a dataset is generated from its own stream Rng::derive(seed, g), so graphs can be
// produced in any order or in parallel.

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bcosgnn/error.hpp"
#include "bcosgnn/graph.hpp"
#include "bcosgnn/json_io.hpp"
#include "bcosgnn/linalg.hpp"

namespace bcosgnn {

struct Ba2MotifSpec {
    std::size_t num_graphs = 1000;
    std::size_t base_nodes = 20;
    std::size_t attach = 1;       // edges per new BA node
    std::size_t degree_cap = 10;  // one-hot width is degree_cap + 1
    std::uint64_t seed = 0;

    void validate() const {
        detail::require(num_graphs > 0, "ba2motif: num_graphs must be positive");
        detail::require(num_graphs % 2 == 0, "ba2motif: num_graphs must be even");
        detail::require(base_nodes >= 5, "ba2motif: base_nodes must be at least the motif size (5)");
        detail::require(attach >= 1 && attach < base_nodes, "ba2motif: attach must be in [1, base_nodes)");
        detail::require(degree_cap >= 1, "ba2motif: degree_cap must be positive");
    }
};

enum class Halogen : std::size_t { Cl = 0, F = 1, Br = 2 };
enum class RingPosition : std::size_t { ortho = 0, meta = 1, para = 2 };

// Node vocabulary and bond types (one-hot columns).
inline constexpr std::array<const char*, 6> kAtomVocabulary{"C", "N", "O", "F", "Cl", "Br"};
inline constexpr std::array<const char*, 4> kBondTypes{"single", "double", "triple", "aromatic"};
enum Atom : std::size_t { atom_C = 0, atom_N, atom_O, atom_F, atom_Cl, atom_Br };
enum Bond : std::size_t { bond_single = 0, bond_double, bond_triple, bond_aromatic };

inline std::size_t halogen_atom(Halogen h) {
    switch (h) {
        case Halogen::Cl: return atom_Cl;
        case Halogen::F: return atom_F;
        case Halogen::Br: return atom_Br;
    }
    return atom_Cl;
}

struct HaloBenzeneSpec {
    std::size_t num_graphs = 9000;
    std::size_t scaffold_min = 30;
    std::size_t scaffold_max = 56;
    double double_bond_prob = 0.15;
    std::uint64_t seed = 0;

    void validate() const {
        detail::require(num_graphs > 0, "halobenzene: num_graphs must be positive");
        detail::require(num_graphs % 9 == 0, "halobenzene: num_graphs must be a multiple of 9");
        detail::require(scaffold_min >= 10, "halobenzene: scaffold range must start at 10 or more nodes");
        detail::require(scaffold_min <= scaffold_max, "halobenzene: scaffold_min > scaffold_max");
        detail::require(double_bond_prob >= 0.0 && double_bond_prob <= 1.0,
                        "halobenzene: double_bond_prob must be a probability");
    }
};

struct GenerationReport {
    std::size_t capped_degrees = 0;  // nodes whose degree hit the one-hot cap
};

namespace detail {

inline Vector one_hot(std::size_t dim, std::size_t index) {
    Vector v(dim, 0.0);
    v.at(index) = 1.0;
    return v;
}

/// Preferential attachment: star on attach+1 nodes, then each new node links to `attach`
/// distinct targets drawn proportionally to degree.
inline std::vector<Edge> barabasi_albert(std::size_t n, std::size_t attach, Rng& rng) {
    std::vector<Edge> edges;
    std::vector<std::size_t> repeated;
    for (std::size_t v = 1; v <= attach; ++v) {
        add_undirected_edge(edges, nullptr, 0, v);
        repeated.push_back(0);
        repeated.push_back(v);
    }
    for (std::size_t src = attach + 1; src < n; ++src) {
        std::vector<std::size_t> targets;
        while (targets.size() < attach) {
            const std::size_t t = repeated[rng.uniform_index(repeated.size())];
            if (std::ranges::find(targets, t) == targets.end()) targets.push_back(t);
        }
        for (std::size_t t : targets) {
            add_undirected_edge(edges, nullptr, src, t);
            repeated.push_back(t);
            repeated.push_back(src);
        }
    }
    return edges;
}

inline AttributedGraph make_ba2motif_graph(const Ba2MotifSpec& spec, std::size_t index, GenerationReport& report) {
    Rng rng(Rng::derive(spec.seed, index));
    const std::size_t label = index % 2;  // 0 = house, 1 = cycle
    const std::size_t nb = spec.base_nodes, n = nb + 5;
    std::vector<Edge> edges = barabasi_albert(nb, spec.attach, rng);
    const std::size_t m0 = nb;
    // Motif nodes m0..m0+4. Both motifs share the 4-cycle path m0-m1-m2-m3.
    for (std::size_t k = 0; k < 3; ++k) add_undirected_edge(edges, nullptr, m0 + k, m0 + k + 1);
    if (label == 0) {
        add_undirected_edge(edges, nullptr, m0 + 3, m0);      // floor closes the square
        add_undirected_edge(edges, nullptr, m0 + 4, m0 + 2);  // roof
        add_undirected_edge(edges, nullptr, m0 + 4, m0 + 3);
    } else {
        add_undirected_edge(edges, nullptr, m0 + 3, m0 + 4);
        add_undirected_edge(edges, nullptr, m0 + 4, m0);
    }
    add_undirected_edge(edges, nullptr, rng.uniform_index(nb), m0 + rng.uniform_index(5));

    AttributedGraph g;
    std::vector<std::size_t> degree(n, 0);
    for (const auto& e : edges) ++degree[e.second];
    g.x = Matrix(n, spec.degree_cap + 1);
    for (std::size_t i = 0; i < n; ++i) {
        if (degree[i] >= spec.degree_cap) ++report.capped_degrees;
        g.x(i, std::min(degree[i], spec.degree_cap)) = 1.0;
    }
    g.edges = std::move(edges);
    g.label = label;
    g.gt_mask = std::vector<bool>(n, false);
    for (std::size_t k = 0; k < 5; ++k) (*g.gt_mask)[m0 + k] = true;
    return g;
}

inline AttributedGraph make_halobenzene_graph(const HaloBenzeneSpec& spec, std::size_t index) {
    Rng rng(Rng::derive(spec.seed, index));
    const std::size_t label = index % 9;
    const auto halogen = static_cast<Halogen>(label / 3);
    const std::size_t position = label % 3;
    const std::size_t s = spec.scaffold_min + rng.uniform_index(spec.scaffold_max - spec.scaffold_min + 1);
    const std::size_t n = s + 8;

    std::vector<std::size_t> atoms(n, atom_C);
    std::vector<Edge> edges;
    std::vector<Vector> efeat;
    std::vector<std::size_t> degree(n, 0);
    auto bond = [&](std::size_t a, std::size_t b, std::size_t type) {
        add_undirected_edge(edges, &efeat, a, b, one_hot(kBondTypes.size(), type));
        ++degree[a];
        ++degree[b];
    };

    // Scaffold: random tree, each new atom hangs off an existing atom with fewer than 4 bonds.
    auto draw_atom = [&] {
        const double u = rng.uniform();
        return u < 0.7 ? atom_C : (u < 0.85 ? atom_N : atom_O);
    };
    atoms[0] = draw_atom();
    for (std::size_t v = 1; v < s; ++v) {
        atoms[v] = draw_atom();
        std::vector<std::size_t> open;
        for (std::size_t u = 0; u < v; ++u)
            if (degree[u] < 4) open.push_back(u);
        const std::size_t parent = open.empty() ? rng.uniform_index(v) : open[rng.uniform_index(open.size())];
        bond(parent, v, rng.bernoulli(spec.double_bond_prob) ? bond_double : bond_single);
    }

    // Ring carbons s..s+5, halogens s+6 (at ring 0) and s+7 (at ring position+1).
    const std::size_t r0 = s;
    for (std::size_t k = 0; k < 6; ++k) bond(r0 + k, r0 + (k + 1) % 6, bond_aromatic);
    const std::size_t h1 = s + 6, h2 = s + 7, second = position + 1;
    atoms[h1] = atoms[h2] = halogen_atom(halogen);
    bond(r0, h1, bond_single);
    bond(r0 + second, h2, bond_single);

    std::vector<std::size_t> free_ring;
    for (std::size_t k = 1; k < 6; ++k)
        if (k != second) free_ring.push_back(r0 + k);
    std::vector<std::size_t> open;
    for (std::size_t u = 0; u < s; ++u)
        if (degree[u] < 4) open.push_back(u);
    const std::size_t anchor = open.empty() ? rng.uniform_index(s) : open[rng.uniform_index(open.size())];
    bond(free_ring[rng.uniform_index(free_ring.size())], anchor, bond_single);

    AttributedGraph g;
    g.x = Matrix(n, kAtomVocabulary.size());
    for (std::size_t i = 0; i < n; ++i) g.x(i, atoms[i]) = 1.0;
    g.edges = std::move(edges);
    g.edge_features = Matrix(efeat.size(), kBondTypes.size());
    for (std::size_t e = 0; e < efeat.size(); ++e)
        std::ranges::copy(efeat[e], g.edge_features->row(e).begin());
    g.label = label;
    g.gt_mask = std::vector<bool>(n, false);
    for (std::size_t i = s; i < n; ++i) (*g.gt_mask)[i] = true;
    return g;
}

}  // namespace detail

inline Dataset generate_ba2motif(const Ba2MotifSpec& spec, GenerationReport* report = nullptr) {
    spec.validate();
    Dataset d{{}, 2, spec.degree_cap + 1, std::nullopt};
    GenerationReport local;
    d.graphs.reserve(spec.num_graphs);
    for (std::size_t i = 0; i < spec.num_graphs; ++i) d.graphs.push_back(detail::make_ba2motif_graph(spec, i, local));
    if (report) *report = local;
    return d;
}

inline Dataset generate_halobenzene(const HaloBenzeneSpec& spec) {
    spec.validate();
    Dataset d{{}, 9, kAtomVocabulary.size(), kBondTypes.size()};
    d.graphs.reserve(spec.num_graphs);
    for (std::size_t i = 0; i < spec.num_graphs; ++i) d.graphs.push_back(detail::make_halobenzene_graph(spec, i));
    return d;
}

/// Sidecar statistics; avg_edges counts directed edges (both directions of each bond).
inline ojson dataset_stats_json(const Dataset& d) {
    double nodes = 0.0, edges = 0.0;
    for (const auto& g : d.graphs) {
        nodes += static_cast<double>(g.num_nodes());
        edges += static_cast<double>(g.edges.size());
    }
    const double count = d.empty() ? 1.0 : static_cast<double>(d.size());
    ojson j;
    j["num_graphs"] = d.size();
    j["avg_nodes"] = nodes / count;
    j["avg_edges"] = edges / count;
    j["class_histogram"] = d.class_histogram();
    return j;
}

}  // namespace bcosgnn
