#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bcosgnn/error.hpp"
#include "bcosgnn/json_io.hpp"
#include "bcosgnn/linalg.hpp"

namespace bcosgnn {

using Edge = std::pair<std::size_t, std::size_t>;

/// Node-attributed graph with directed edge list (undirected graphs store both directions).
struct AttributedGraph {
    Matrix x;                              // n x p0
    std::vector<Edge> edges;               // (source, target)
    std::optional<Matrix> edge_features;   // one row per directed edge
    std::size_t label = 0;
    std::optional<std::vector<bool>> gt_mask;

    std::size_t num_nodes() const noexcept { return x.rows(); }
    std::size_t feature_dim() const noexcept { return x.cols(); }
    std::size_t edge_feature_dim() const noexcept { return edge_features ? edge_features->cols() : 0; }

    /// Throws ContractViolation on any broken invariant.
    void validate() const {
        const std::size_t n = num_nodes();
        for (const auto& [s, t] : edges)
            detail::require(s < n && t < n, "graph: edge endpoint out of range");
        if (edge_features)
            detail::require(edge_features->rows() == edges.size(), "graph: edge feature rows != edge count");
        std::map<Edge, std::size_t> index;
        for (std::size_t e = 0; e < edges.size(); ++e) index.emplace(edges[e], e);
        for (std::size_t e = 0; e < edges.size(); ++e) {
            auto it = index.find({edges[e].second, edges[e].first});
            detail::require(it != index.end(), "graph: edge list is not symmetric");
            if (edge_features)
                detail::require(std::ranges::equal(edge_features->row(e), edge_features->row(it->second)),
                                "graph: reverse edge carries different features");
        }
        if (gt_mask) {
            detail::require(gt_mask->size() == n, "graph: gt_mask length != node count");
            detail::require(std::ranges::any_of(*gt_mask, [](bool b) { return b; }),
                            "graph: gt_mask has no true entry");
        }
    }

    /// Mask nodes as indices, ascending.
    std::vector<std::size_t> gt_nodes() const {
        std::vector<std::size_t> out;
        if (gt_mask)
            for (std::size_t i = 0; i < gt_mask->size(); ++i)
                if ((*gt_mask)[i]) out.push_back(i);
        return out;
    }
};

/// All j with (j, i) in the edge list, sorted.
inline std::vector<std::size_t> neighbors(const AttributedGraph& g, std::size_t i) {
    if (i >= g.num_nodes())
        throw ContractViolation("neighbors: node " + std::to_string(i) + " out of range");
    std::vector<std::size_t> out;
    for (const auto& [s, t] : g.edges)
        if (t == i) out.push_back(s);
    std::ranges::sort(out);
    return out;
}

/// Adds both (a, b) and (b, a), with the same feature row when given.
inline void add_undirected_edge(std::vector<Edge>& edges, std::vector<Vector>* features, std::size_t a,
                                std::size_t b, const Vector& feature = {}) {
    edges.emplace_back(a, b);
    edges.emplace_back(b, a);
    if (features) {
        features->push_back(feature);
        features->push_back(feature);
    }
}

struct Dataset {
    std::vector<AttributedGraph> graphs;
    std::size_t num_classes = 0;
    std::size_t feature_dim = 0;
    std::optional<std::size_t> edge_feature_dim;

    std::size_t size() const noexcept { return graphs.size(); }
    bool empty() const noexcept { return graphs.empty(); }

    void validate() const {
        for (std::size_t k = 0; k < graphs.size(); ++k) {
            const auto& g = graphs[k];
            const std::string where = "dataset graph " + std::to_string(k) + ": ";
            detail::require(g.feature_dim() == feature_dim, where + "feature dim mismatch");
            detail::require(g.label < num_classes, where + "label out of range");
            if (edge_feature_dim)
                detail::require(g.edge_features && g.edge_feature_dim() == *edge_feature_dim,
                                where + "edge feature dim mismatch");
            else
                detail::require(!g.edge_features, where + "unexpected edge features");
            try {
                g.validate();
            } catch (const ContractViolation& e) {
                throw ContractViolation(where + e.what());
            }
        }
    }

    Dataset subset(const std::vector<std::size_t>& indices) const {
        Dataset d{{}, num_classes, feature_dim, edge_feature_dim};
        d.graphs.reserve(indices.size());
        for (std::size_t i : indices) d.graphs.push_back(graphs.at(i));
        return d;
    }

    std::vector<std::size_t> class_histogram() const {
        std::vector<std::size_t> h(num_classes, 0);
        for (const auto& g : graphs) ++h.at(g.label);
        return h;
    }
};

struct SplitFractions {
    double train = 0.7, val = 0.2, test = 0.1;
};

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

/// Per-class largest-remainder apportionment, class members shuffled by `rng`.
inline SplitIndices stratified_split_indices(const Dataset& d, SplitFractions f, Rng& rng) {
    const std::array<double, 3> fr{f.train, f.val, f.test};
    for (double v : fr)
        if (!(v > 0.0)) throw ContractViolation("stratified_split: fractions must be positive");
    const double total = fr[0] + fr[1] + fr[2];
    if (std::abs(total - 1.0) > 1e-6) throw ContractViolation("stratified_split: fractions must sum to 1");

    std::vector<std::vector<std::size_t>> by_class(d.num_classes);
    for (std::size_t i = 0; i < d.graphs.size(); ++i) by_class.at(d.graphs[i].label).push_back(i);

    SplitIndices out;
    std::array<std::vector<std::size_t>*, 3> parts{&out.train, &out.val, &out.test};
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& members = by_class[c];
        if (members.empty()) continue;
        if (members.size() < 3)
            throw ContractViolation("stratified_split: class " + std::to_string(c) + " has fewer graphs than splits");
        const double m = static_cast<double>(members.size());
        std::array<std::size_t, 3> count{};
        std::array<double, 3> rem{};
        std::size_t assigned = 0;
        for (int s = 0; s < 3; ++s) {
            const double quota = fr[s] / total * m;
            count[s] = static_cast<std::size_t>(std::floor(quota));
            rem[s] = quota - std::floor(quota);
            assigned += count[s];
        }
        std::array<int, 3> order{0, 1, 2};
        std::ranges::stable_sort(order, [&](int a, int b) { return rem[a] > rem[b]; });
        for (std::size_t k = 0; assigned < members.size(); ++k, ++assigned) ++count[order[k % 3]];

        rng.shuffle(members);
        std::size_t pos = 0;
        for (int s = 0; s < 3; ++s)
            for (std::size_t k = 0; k < count[s]; ++k) parts[s]->push_back(members[pos++]);
    }
    for (auto* p : parts) std::ranges::sort(*p);
    return out;
}

struct DatasetSplit {
    Dataset train, val, test;
};

inline DatasetSplit stratified_split(const Dataset& d, SplitFractions f, Rng& rng) {
    const auto idx = stratified_split_indices(d, f, rng);
    return {d.subset(idx.train), d.subset(idx.val), d.subset(idx.test)};
}

// ---------------------------------------------------------------------------------------------
// JSON: {num_classes, feature_dim, edge_feature_dim?, graphs:[{n, x, edges, edge_attr?, label, gt_mask?}]}

namespace detail {

inline ojson matrix_rows_json(const Matrix& m) {
    ojson rows = ojson::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        ojson row = ojson::array();
        for (double v : m.row(r)) row.push_back(v);
        rows.push_back(std::move(row));
    }
    return rows;
}

template <typename Json>
Matrix matrix_from_rows_json(const Json& j, std::size_t cols) {
    Matrix m(j.size(), cols);
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (j[r].size() != cols) throw FormatError("matrix row " + std::to_string(r) + " has wrong length");
        for (std::size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].template get<double>();
    }
    return m;
}

}  // namespace detail

inline ojson graph_to_json(const AttributedGraph& g) {
    ojson j;
    j["n"] = g.num_nodes();
    j["x"] = detail::matrix_rows_json(g.x);
    ojson edges = ojson::array();
    for (const auto& [s, t] : g.edges) edges.push_back({s, t});
    j["edges"] = std::move(edges);
    if (g.edge_features) j["edge_attr"] = detail::matrix_rows_json(*g.edge_features);
    j["label"] = g.label;
    if (g.gt_mask) {
        ojson mask = ojson::array();
        for (bool b : *g.gt_mask) mask.push_back(b);
        j["gt_mask"] = std::move(mask);
    }
    return j;
}

inline ojson dataset_to_json(const Dataset& d) {
    ojson j;
    j["num_classes"] = d.num_classes;
    j["feature_dim"] = d.feature_dim;
    if (d.edge_feature_dim) j["edge_feature_dim"] = *d.edge_feature_dim;
    ojson graphs = ojson::array();
    for (const auto& g : d.graphs) graphs.push_back(graph_to_json(g));
    j["graphs"] = std::move(graphs);
    return j;
}

inline Dataset dataset_from_json(const nlohmann::json& j) {
    try {
        Dataset d;
        d.num_classes = j.at("num_classes").get<std::size_t>();
        d.feature_dim = j.at("feature_dim").get<std::size_t>();
        if (j.contains("edge_feature_dim")) d.edge_feature_dim = j.at("edge_feature_dim").get<std::size_t>();
        for (const auto& gj : j.at("graphs")) {
            AttributedGraph g;
            const auto n = gj.at("n").get<std::size_t>();
            g.x = detail::matrix_from_rows_json(gj.at("x"), d.feature_dim);
            if (g.x.rows() != n) throw FormatError("graph x has " + std::to_string(g.x.rows()) + " rows, n = " + std::to_string(n));
            for (const auto& e : gj.at("edges")) g.edges.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>());
            if (gj.contains("edge_attr"))
                g.edge_features = detail::matrix_from_rows_json(gj.at("edge_attr"), d.edge_feature_dim.value_or(0));
            g.label = gj.at("label").get<std::size_t>();
            if (gj.contains("gt_mask")) {
                std::vector<bool> mask;
                for (const auto& b : gj.at("gt_mask")) mask.push_back(b.get<bool>());
                g.gt_mask = std::move(mask);
            }
            d.graphs.push_back(std::move(g));
        }
        d.validate();
        return d;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset JSON: ") + e.what());
    } catch (const ContractViolation& e) {
        throw FormatError(std::string("dataset JSON: ") + e.what());
    }
}

inline void save_dataset(const Dataset& d, const std::string& path) { write_text_file(path, to_json_text(dataset_to_json(d))); }

inline Dataset load_dataset(const std::string& path) { return dataset_from_json(parse_json_file(path)); }

/// Disjoint union; node indices of `b` are shifted by a's node count.
inline AttributedGraph disjoint_union(const AttributedGraph& a, const AttributedGraph& b) {
    detail::require(a.feature_dim() == b.feature_dim(), "disjoint_union: feature dim mismatch");
    AttributedGraph u;
    const std::size_t na = a.num_nodes();
    u.x = Matrix(na + b.num_nodes(), a.feature_dim());
    std::copy(a.x.data().begin(), a.x.data().end(), u.x.data().begin());
    std::copy(b.x.data().begin(), b.x.data().end(), u.x.data().begin() + static_cast<std::ptrdiff_t>(a.x.size()));
    u.edges = a.edges;
    for (const auto& [s, t] : b.edges) u.edges.emplace_back(s + na, t + na);
    if (a.edge_features || b.edge_features) {
        detail::require(a.edge_features && b.edge_features, "disjoint_union: edge features on one side only");
        Matrix ef(a.edges.size() + b.edges.size(), a.edge_feature_dim());
        std::copy(a.edge_features->data().begin(), a.edge_features->data().end(), ef.data().begin());
        std::copy(b.edge_features->data().begin(), b.edge_features->data().end(),
                  ef.data().begin() + static_cast<std::ptrdiff_t>(a.edge_features->size()));
        u.edge_features = std::move(ef);
    }
    u.label = a.label;
    if (a.gt_mask && b.gt_mask) {
        std::vector<bool> m = *a.gt_mask;
        m.insert(m.end(), b.gt_mask->begin(), b.gt_mask->end());
        u.gt_mask = std::move(m);
    }
    return u;
}

/// Relabel nodes: node i of `g` becomes node perm[i].
inline AttributedGraph permute_nodes(const AttributedGraph& g, const std::vector<std::size_t>& perm) {
    detail::require(perm.size() == g.num_nodes(), "permute_nodes: permutation size mismatch");
    AttributedGraph p = g;
    for (std::size_t i = 0; i < perm.size(); ++i)
        std::ranges::copy(g.x.row(i), p.x.row(perm[i]).begin());
    for (auto& [s, t] : p.edges) {
        s = perm[s];
        t = perm[t];
    }
    if (g.gt_mask)
        for (std::size_t i = 0; i < perm.size(); ++i) (*p.gt_mask)[perm[i]] = (*g.gt_mask)[i];
    return p;
}

}  // namespace bcosgnn
