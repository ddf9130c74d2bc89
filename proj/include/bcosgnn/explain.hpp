#pragma once

// Exact explanations of B-cos GNN predictions.
//
// Every embedding is an input-dependent linear map of the stacked input features x = vec(X)
// (node-major, index i * p0 + j). Two independent routes build those maps:
//
//  * forward (layerwise_dynamic_weights): W^(k) = L_k W^(k-1), one block operator L_k per GIN
//    layer. Materializes (n p_k) x (n p0) matrices; used to check every intermediate embedding.
//  * pull-back (dynamic_weights_graph): starts from the readout rows and multiplies dynamic
//    weights from the left, so the cost is O(c) times a forward pass.
//
// With additive edge features the map is affine: logits = W* x + b*, where b* collects the
// propagated edge offsets. Node contributions only cover W* x.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bcosgnn/error.hpp"
#include "bcosgnn/graph.hpp"
#include "bcosgnn/json_io.hpp"
#include "bcosgnn/linalg.hpp"
#include "bcosgnn/model.hpp"

namespace bcosgnn {

struct ExplainLimits {
    std::size_t max_nodes = 200;
};

/// logits (or one node's outputs) = weights * vec(X) + offset.
struct DynamicLinearForm {
    Matrix weights;  // c x (n * p0)
    Vector offset;   // c; nonzero only with additive edge features
    Vector outputs;  // the forward-pass values being decomposed
};

namespace detail {

inline void require_bcos(const GnnModel& m) {
    if (m.config().variant != Variant::bcos)
        throw UnsupportedVariant("unsupported-variant: dynamic weights exist only for B-cos models");
}

inline void require_size(const AttributedGraph& g, const ExplainLimits& lim) {
    if (g.num_nodes() > lim.max_nodes)
        throw ContractViolation("graph has " + std::to_string(g.num_nodes()) + " nodes, above the explanation limit of " +
                                std::to_string(lim.max_nodes));
}

}  // namespace detail

/// W* via pull-back. `target_node` selects one node's outputs (per-node readout); otherwise the
/// summed graph logits.
inline DynamicLinearForm dynamic_weights_graph(const GnnModel& m, const AttributedGraph& g,
                                               std::optional<std::size_t> target_node = std::nullopt,
                                               const ExplainLimits& lim = {}) {
    detail::require_bcos(m);
    detail::require_size(g, lim);
    const GinConfig& cfg = m.config();
    const ForwardTrace tr = gin_forward(m, g);
    const std::size_t n = g.num_nodes(), c = cfg.num_classes, p0 = cfg.input_dim;
    if (target_node && *target_node >= n) throw ContractViolation("dynamic_weights_graph: target node out of range");
    const bool additive = cfg.edge_mode == EdgeMode::additive;

    DynamicLinearForm out;
    out.offset.assign(c, 0.0);
    std::vector<Matrix> coeff(n);  // d output / d x_i^(k), c x p_k
    std::vector<bool> active(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        if (target_node && *target_node != i) continue;
        coeff[i] = mlp_pullback_row(m.bcos_readout(), tr.readout_bcos, i, Matrix::identity(c));
        active[i] = true;
    }
    for (std::size_t k = cfg.num_layers; k-- > 0;) {
        const LayerTrace& lt = tr.layers[k];
        const std::size_t p = cfg.layer_in_dim(k);
        std::vector<Matrix> z_coeff(n);
        for (std::size_t i = 0; i < n; ++i)
            if (active[i]) z_coeff[i] = mlp_pullback_row(m.bcos_updates()[k], lt.bcos, i, std::move(coeff[i]));
        std::vector<Matrix> next(n);
        std::vector<bool> next_active(n, false);
        const double self = 1.0 + m.epsilon(k);
        for (std::size_t i = 0; i < n; ++i) {
            if (!active[i]) continue;
            next[i] = z_coeff[i] * self;
            next_active[i] = true;
        }
        for (std::size_t e = 0; e < g.edges.size(); ++e) {
            const auto [s, t] = g.edges[e];
            if (!active[t]) continue;
            if (!next_active[s]) {
                next[s] = Matrix(c, p);
                next_active[s] = true;
            }
            next[s] += z_coeff[t];
            if (additive) {
                const Vector o = matvec(z_coeff[t], lt.edge_embed->row(e));
                for (std::size_t r = 0; r < c; ++r) out.offset[r] += o[r];
            }
        }
        coeff = std::move(next);
        active = std::move(next_active);
    }
    out.weights = Matrix(c, n * p0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!active[i]) continue;
        for (std::size_t r = 0; r < c; ++r)
            for (std::size_t j = 0; j < p0; ++j) out.weights(r, i * p0 + j) = coeff[i](r, j);
    }
    if (target_node)
        out.outputs.assign(tr.node_outputs.row(*target_node).begin(), tr.node_outputs.row(*target_node).end());
    else if (cfg.readout == ReadoutMode::per_node)
        throw ContractViolation("dynamic_weights_graph: per-node readout needs a target node");
    else
        out.outputs = tr.logits.data();
    return out;
}

/// One GIN layer (aggregation + update MLP) as a block operator on the previous embeddings:
/// x^(k) = op * x^(k-1) + offset.
struct LayerOperator {
    Matrix op;      // (n p_k) x (n p_{k-1})
    Vector offset;  // n p_k
};

inline LayerOperator layer_operator(const GnnModel& m, const ForwardTrace& tr, std::size_t k) {
    detail::require_bcos(m);
    detail::require(tr.batch.num_graphs() == 1, "layer_operator: trace must hold a single graph");
    const GinConfig& cfg = m.config();
    const LayerTrace& lt = tr.layers.at(k);
    const std::size_t n = tr.batch.x.rows(), p_in = cfg.layer_in_dim(k), p_out = cfg.hidden;
    const bool additive = cfg.edge_mode == EdgeMode::additive;

    // Aggregation as a (n p_in) x (n p_in) operator and offset, then per-node MLP dynamic weights.
    std::vector<std::vector<std::pair<std::size_t, double>>> incoming(n);
    for (std::size_t i = 0; i < n; ++i) incoming[i].emplace_back(i, 1.0 + m.epsilon(k));
    std::vector<Vector> z_offset(n, Vector(p_in, 0.0));
    for (std::size_t e = 0; e < tr.batch.edges.size(); ++e) {
        const auto [s, t] = tr.batch.edges[e];
        incoming[t].emplace_back(s, 1.0);
        if (additive)
            for (std::size_t c = 0; c < p_in; ++c) z_offset[t][c] += (*lt.edge_embed)(e, c);
    }
    LayerOperator lo{Matrix(n * p_out, n * p_in), Vector(n * p_out, 0.0)};
    for (std::size_t i = 0; i < n; ++i) {
        const Matrix d = mlp_pullback_row(m.bcos_updates()[k], lt.bcos, i, Matrix::identity(p_out));
        for (const auto& [j, alpha] : incoming[i])
            for (std::size_t r = 0; r < p_out; ++r)
                for (std::size_t c = 0; c < p_in; ++c) lo.op(i * p_out + r, j * p_in + c) += alpha * d(r, c);
        if (additive) {
            const Vector o = matvec(d, z_offset[i]);
            std::copy(o.begin(), o.end(), lo.offset.begin() + static_cast<std::ptrdiff_t>(i * p_out));
        }
    }
    return lo;
}

/// Per-layer maps x^(k) = weights[k] * x + offsets[k] for k = 0..L, plus the composed readout.
struct LayerwiseDynamicWeights {
    std::vector<Matrix> weights;
    std::vector<Vector> offsets;
    Matrix readout_weights;  // c x (n p0), graph-sum readout
    Vector readout_offset;
    ForwardTrace trace;
};

inline LayerwiseDynamicWeights layerwise_dynamic_weights(const GnnModel& m, const AttributedGraph& g,
                                                         const ExplainLimits& lim = {}) {
    detail::require_bcos(m);
    detail::require_size(g, lim);
    const GinConfig& cfg = m.config();
    LayerwiseDynamicWeights out;
    out.trace = gin_forward(m, g);
    const std::size_t n = g.num_nodes(), c = cfg.num_classes;
    out.weights.push_back(Matrix::identity(n * cfg.input_dim));
    out.offsets.emplace_back(n * cfg.input_dim, 0.0);
    for (std::size_t k = 0; k < cfg.num_layers; ++k) {
        const LayerOperator lo = layer_operator(m, out.trace, k);
        out.weights.push_back(matmul(lo.op, out.weights.back()));
        Vector b = matvec(lo.op, out.offsets.back());
        for (std::size_t r = 0; r < b.size(); ++r) b[r] += lo.offset[r];
        out.offsets.push_back(std::move(b));
    }
    const Matrix& last = out.weights.back();
    const std::size_t p = cfg.hidden;
    out.readout_weights = Matrix(c, last.cols());
    out.readout_offset.assign(c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const Matrix r = mlp_pullback_row(m.bcos_readout(), out.trace.readout_bcos, i, Matrix::identity(c));
        Matrix block(p, last.cols());
        std::copy(last.data().begin() + static_cast<std::ptrdiff_t>(i * p * last.cols()),
                  last.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * p * last.cols()), block.data().begin());
        out.readout_weights += matmul(r, block);
        const Vector ro = matvec(r, std::span<const double>(out.offsets.back()).subspan(i * p, p));
        for (std::size_t k = 0; k < c; ++k) out.readout_offset[k] += ro[k];
    }
    return out;
}

// ---------------------------------------------------------------------------------------------

struct ContributionMap {
    Matrix contributions;  // c x (n p0): W* .* vec(X) row-wise
    Vector logits;
    Vector offset;         // edge-offset part of each logit (zero without edge features)
    std::size_t num_nodes = 0;
    std::size_t feature_dim = 0;
    std::size_t predicted_class = 0;

    double row_sum(std::size_t r) const {
        const auto row = contributions.row(r);
        return std::accumulate(row.begin(), row.end(), 0.0);
    }
};

inline ContributionMap contribution_map(const GnnModel& m, const AttributedGraph& g, const ExplainLimits& lim = {}) {
    DynamicLinearForm f = dynamic_weights_graph(m, g, std::nullopt, lim);
    ContributionMap cm;
    cm.num_nodes = g.num_nodes();
    cm.feature_dim = g.feature_dim();
    const auto& x = g.x.data();
    for (std::size_t r = 0; r < f.weights.rows(); ++r) {
        auto row = f.weights.row(r);
        for (std::size_t k = 0; k < row.size(); ++k) row[k] *= x[k];
    }
    cm.contributions = std::move(f.weights);
    cm.logits = std::move(f.outputs);
    cm.offset = std::move(f.offset);
    cm.predicted_class = argmax(cm.logits);
    return cm;
}

struct NodeScores {
    Vector scores;
    std::vector<std::size_t> ranking;  // descending score, ties by ascending node index
};

inline NodeScores make_node_scores(Vector s) {
    NodeScores ns{std::move(s), {}};
    ns.ranking.resize(ns.scores.size());
    std::iota(ns.ranking.begin(), ns.ranking.end(), std::size_t{0});
    std::ranges::stable_sort(ns.ranking, [&](std::size_t a, std::size_t b) { return ns.scores[a] > ns.scores[b]; });
    return ns;
}

inline NodeScores node_scores(const ContributionMap& cm, std::size_t class_row) {
    if (class_row >= cm.contributions.rows())
        throw ContractViolation("node_scores: class index " + std::to_string(class_row) + " out of range");
    Vector s(cm.num_nodes, 0.0);
    const auto row = cm.contributions.row(class_row);
    for (std::size_t i = 0; i < cm.num_nodes; ++i)
        for (std::size_t j = 0; j < cm.feature_dim; ++j) s[i] += row[i * cm.feature_dim + j];
    return make_node_scores(std::move(s));
}

enum class SelectionMode { top_k, mass_fraction };

struct Explanation {
    std::vector<std::size_t> selected;  // in rank order
    SelectionMode mode = SelectionMode::top_k;
    double parameter = 0.0;             // k or fraction
};

inline Explanation top_k(const NodeScores& ns, std::size_t k) {
    if (k < 1 || k > ns.scores.size())
        throw ContractViolation("top_k: k = " + std::to_string(k) + " outside [1, " + std::to_string(ns.scores.size()) + "]");
    return {{ns.ranking.begin(), ns.ranking.begin() + static_cast<std::ptrdiff_t>(k)},
            SelectionMode::top_k,
            static_cast<double>(k)};
}

/// Smallest rank prefix whose positive contributions reach `fraction` of the total positive mass.
inline Explanation mass_fraction(const NodeScores& ns, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ContractViolation("mass_fraction: fraction must be in (0, 1]");
    double total = 0.0;
    for (double v : ns.scores) total += std::max(v, 0.0);
    Explanation ex{{}, SelectionMode::mass_fraction, fraction};
    const double target = fraction * total;
    double acc = 0.0;
    for (std::size_t i : ns.ranking) {
        if (acc >= target && !ex.selected.empty()) break;
        if (ns.scores[i] <= 0.0) break;
        ex.selected.push_back(i);
        acc += ns.scores[i];
    }
    return ex;
}

// ---------------------------------------------------------------------------------------------
// Integrated Gradients from the all-zero feature baseline, midpoint Riemann rule.

inline constexpr std::size_t kDefaultIgSteps = 50;

/// Per-feature attributions (n x p0).
inline Matrix integrated_gradients_attributions(const GnnModel& m, const AttributedGraph& g, std::size_t steps,
                                                std::size_t class_row) {
    if (steps < 1) throw ContractViolation("integrated_gradients: steps must be >= 1");
    const GinConfig& cfg = m.config();
    if (cfg.readout != ReadoutMode::graph_sum)
        throw ContractViolation("integrated_gradients: graph-sum readout required");
    if (class_row >= cfg.num_classes) throw ContractViolation("integrated_gradients: class index out of range");
    const std::size_t n = g.num_nodes(), p = g.feature_dim();
    Matrix grad_sum(n, p);
    constexpr std::size_t kChunk = 64;  // path points per batched pass
    for (std::size_t start = 0; start < steps; start += kChunk) {
        const std::size_t count = std::min(kChunk, steps - start);
        std::vector<AttributedGraph> path(count, g);
        std::vector<const AttributedGraph*> ptrs;
        for (std::size_t t = 0; t < count; ++t) {
            path[t].x *= (static_cast<double>(start + t) + 0.5) / static_cast<double>(steps);
            ptrs.push_back(&path[t]);
        }
        const ForwardTrace tr = gin_forward_batch(m, make_batch(ptrs));
        Matrix gl(count, cfg.num_classes);
        for (std::size_t t = 0; t < count; ++t) gl(t, class_row) = 1.0;
        const ModelGradients grads = gin_backward(m, tr, gl);
        for (std::size_t t = 0; t < count; ++t)
            for (std::size_t k = 0; k < n * p; ++k) grad_sum.data()[k] += grads.input.data()[t * n * p + k];
    }
    Matrix attr(n, p);
    for (std::size_t k = 0; k < n * p; ++k)
        attr.data()[k] = g.x.data()[k] * grad_sum.data()[k] / static_cast<double>(steps);
    return attr;
}

inline NodeScores integrated_gradients(const GnnModel& m, const AttributedGraph& g, std::size_t steps,
                                       std::size_t class_row) {
    const Matrix attr = integrated_gradients_attributions(m, g, steps, class_row);
    Vector s(g.num_nodes(), 0.0);
    for (std::size_t i = 0; i < attr.rows(); ++i)
        for (double v : attr.row(i)) s[i] += v;
    return make_node_scores(std::move(s));
}

// ---------------------------------------------------------------------------------------------
// Export.

enum class ExplainMethod { bcos, ig };

inline std::string to_string(ExplainMethod m) { return m == ExplainMethod::bcos ? "bcos" : "ig"; }
inline ExplainMethod parse_explain_method(const std::string& s) {
    if (s == "bcos") return ExplainMethod::bcos;
    if (s == "ig") return ExplainMethod::ig;
    throw FormatError("unknown explanation method '" + s + "' (expected bcos or ig)");
}

struct ExplanationRecord {
    std::size_t graph_id = 0;
    std::size_t predicted_class = 0;
    Vector logits;
    NodeScores scores;
    Explanation explanation;
    std::optional<double> jaccard;
};

inline ojson explanation_to_json(const ExplanationRecord& r) {
    ojson j;
    j["graph_id"] = r.graph_id;
    j["predicted_class"] = r.predicted_class;
    j["logits"] = r.logits;
    j["node_scores"] = r.scores.scores;
    j["selected_nodes"] = r.explanation.selected;
    if (r.jaccard) j["jaccard"] = *r.jaccard;
    j["mode"] = r.explanation.mode == SelectionMode::top_k ? "top_k" : "mass_fraction";
    return j;
}

/// Graphviz: fill intensity max(s, 0) / max(s); ground-truth nodes outlined.
inline std::string explanation_to_dot(const AttributedGraph& g, const NodeScores& ns, const std::string& name = "G") {
    std::ostringstream out;
    double top = 0.0;
    for (double v : ns.scores) top = std::max(top, v);
    out << "graph " << name << " {\n  node [shape=circle, style=filled];\n";
    for (std::size_t i = 0; i < g.num_nodes(); ++i) {
        const double intensity = top > 0.0 ? std::max(ns.scores[i], 0.0) / top : 0.0;
        const int gb = static_cast<int>(std::lround(255.0 * (1.0 - intensity)));
        char color[16];
        std::snprintf(color, sizeof color, "#ff%02x%02x", gb, gb);
        out << "  " << i << " [fillcolor=\"" << color << "\"";
        if (g.gt_mask && (*g.gt_mask)[i]) out << ", color=\"#1f4fd8\", penwidth=3";
        out << "];\n";
    }
    for (const auto& [s, t] : g.edges)
        if (s < t) out << "  " << s << " -- " << t << ";\n";
    out << "}\n";
    return out.str();
}

}  // namespace bcosgnn
