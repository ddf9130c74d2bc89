#pragma once

// GIN / GINE with B-cos or ReLU update MLPs and a readout-then-aggregate head.
//
//   z_i   = (1 + eps) x_i + sum_{j in N(i)} msg(x_j, e_ji)
//   x_i'  = Psi(z_i)
//   logits = sum_i Theta(x_i^(L))
//
// msg is x_j (GIN), x_j + E e_ji (B-cos GINE) or relu(x_j + E e_ji) (ReLU GINE), where E is a
// per-layer bias-free linear map from raw edge features to the current embedding width.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bcosgnn/bcos.hpp"
#include "bcosgnn/error.hpp"
#include "bcosgnn/graph.hpp"
#include "bcosgnn/json_io.hpp"
#include "bcosgnn/linalg.hpp"

namespace bcosgnn {

enum class Variant { bcos, relu };
enum class EdgeMode { none, additive };
enum class ReadoutMode { graph_sum, per_node };

inline std::string to_string(Variant v) { return v == Variant::bcos ? "bcos" : "relu"; }
inline std::string to_string(EdgeMode m) { return m == EdgeMode::none ? "none" : "additive"; }
inline std::string to_string(ReadoutMode m) { return m == ReadoutMode::graph_sum ? "graph_sum" : "per_node"; }

inline Variant parse_variant(const std::string& s) {
    if (s == "bcos") return Variant::bcos;
    if (s == "relu") return Variant::relu;
    throw FormatError("unknown variant '" + s + "' (expected bcos or relu)");
}
inline EdgeMode parse_edge_mode(const std::string& s) {
    if (s == "none") return EdgeMode::none;
    if (s == "additive") return EdgeMode::additive;
    throw FormatError("unknown edge mode '" + s + "' (expected none or additive)");
}
inline ReadoutMode parse_readout_mode(const std::string& s) {
    if (s == "graph_sum") return ReadoutMode::graph_sum;
    if (s == "per_node") return ReadoutMode::per_node;
    throw FormatError("unknown readout mode '" + s + "'");
}

struct GinConfig {
    std::size_t input_dim = 0;
    std::size_t num_layers = 3;
    std::size_t hidden = 64;
    std::size_t mlp_depth = 2;       // layers per update MLP
    std::size_t readout_depth = 3;   // layers in the readout MLP
    std::size_t num_classes = 2;
    double epsilon = 0.0;            // fixed for B-cos; initial value for ReLU
    double b = 2.0;
    Variant variant = Variant::bcos;
    EdgeMode edge_mode = EdgeMode::none;
    std::size_t edge_dim = 0;
    double dropout = 0.0;            // on node embeddings before the readout, train time only
    ReadoutMode readout = ReadoutMode::graph_sum;

    /// B-cos GIN defaults: hidden 64, three layers, 3-layer readout.
    static GinConfig gin(std::size_t input_dim, std::size_t num_classes) {
        GinConfig c;
        c.input_dim = input_dim;
        c.num_classes = num_classes;
        return c;
    }
    /// GINE defaults: wider, deeper, 2-layer readout, dropout 0.5.
    static GinConfig gine(std::size_t input_dim, std::size_t edge_dim, std::size_t num_classes) {
        GinConfig c;
        c.input_dim = input_dim;
        c.num_classes = num_classes;
        c.hidden = 128;
        c.num_layers = 4;
        c.readout_depth = 2;
        c.dropout = 0.5;
        c.edge_mode = EdgeMode::additive;
        c.edge_dim = edge_dim;
        return c;
    }

    std::size_t layer_in_dim(std::size_t k) const { return k == 0 ? input_dim : hidden; }

    void validate() const {
        detail::require(input_dim > 0, "GinConfig: input_dim must be positive");
        detail::require(num_layers > 0 && hidden > 0 && mlp_depth > 0 && readout_depth > 0,
                        "GinConfig: layer counts and widths must be positive");
        detail::require(num_classes > 0, "GinConfig: num_classes must be positive");
        detail::require(b >= 1.0, "GinConfig: B must be >= 1");
        detail::require(dropout >= 0.0 && dropout < 1.0, "GinConfig: dropout must be in [0, 1)");
        detail::require(edge_mode == EdgeMode::none || edge_dim > 0, "GinConfig: additive edge mode needs edge_dim > 0");
    }

    friend bool operator==(const GinConfig&, const GinConfig&) = default;
};

// ---------------------------------------------------------------------------------------------
// Conventional affine + ReLU MLP.

struct ReluMlp {
    std::vector<Matrix> weights;  // out x in
    std::vector<Matrix> biases;   // 1 x out
    bool relu_last = true;

    static ReluMlp init(const std::vector<std::size_t>& dims, bool relu_last, Rng& rng) {
        ReluMlp m;
        m.relu_last = relu_last;
        for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
            const double a = 1.0 / std::sqrt(static_cast<double>(dims[k]));
            m.weights.push_back(random_uniform(dims[k + 1], dims[k], a, rng));
            m.biases.push_back(random_uniform(1, dims[k + 1], a, rng));
        }
        return m;
    }
    std::size_t depth() const noexcept { return weights.size(); }
    bool activates(std::size_t k) const noexcept { return relu_last || k + 1 < depth(); }
};

struct ReluCache {
    std::vector<Matrix> inputs;  // per layer
    std::vector<Matrix> pre;     // per layer pre-activation
};

inline Matrix relu_mlp_forward_batch(const ReluMlp& mlp, const Matrix& x, ReluCache* cache = nullptr) {
    if (cache) {
        cache->inputs.clear();
        cache->pre.clear();
    }
    Matrix h = x;
    for (std::size_t k = 0; k < mlp.depth(); ++k) {
        if (h.cols() != mlp.weights[k].cols()) throw ContractViolation("relu_mlp_forward: dimension mismatch");
        Matrix z = matmul_bt(h, mlp.weights[k]);
        for (std::size_t i = 0; i < z.rows(); ++i) {
            auto zr = z.row(i);
            for (std::size_t j = 0; j < zr.size(); ++j) zr[j] += mlp.biases[k](0, j);
        }
        if (cache) {
            cache->inputs.push_back(std::move(h));
            cache->pre.push_back(z);
        }
        if (mlp.activates(k))
            for (double& v : z.data()) v = v > 0.0 ? v : 0.0;
        h = std::move(z);
    }
    return h;
}

/// Returns dL/dx; grad_w[k], grad_b[k] accumulate.
inline Matrix relu_mlp_backward_batch(const ReluMlp& mlp, const ReluCache& cache, Matrix g,
                                      std::span<Matrix> grad_w, std::span<Matrix> grad_b) {
    for (std::size_t k = mlp.depth(); k-- > 0;) {
        if (mlp.activates(k))
            for (std::size_t i = 0; i < g.size(); ++i)
                if (!(cache.pre[k].data()[i] > 0.0)) g.data()[i] = 0.0;
        grad_w[k] += matmul_at(g, cache.inputs[k]);
        for (std::size_t i = 0; i < g.rows(); ++i) {
            auto gr = g.row(i);
            for (std::size_t j = 0; j < gr.size(); ++j) grad_b[k](0, j) += gr[j];
        }
        g = matmul(g, mlp.weights[k]);
    }
    return g;
}

inline Vector relu_mlp_forward(const ReluMlp& mlp, std::span<const double> x) {
    return relu_mlp_forward_batch(mlp, Matrix(1, x.size(), Vector(x.begin(), x.end()))).data();
}

struct ReluMlpGradient {
    Vector grad_x;
    std::vector<Matrix> grad_w, grad_b;
};

inline ReluMlpGradient relu_mlp_backward(const ReluMlp& mlp, std::span<const double> x, std::span<const double> upstream) {
    ReluCache cache;
    relu_mlp_forward_batch(mlp, Matrix(1, x.size(), Vector(x.begin(), x.end())), &cache);
    ReluMlpGradient g;
    for (std::size_t k = 0; k < mlp.depth(); ++k) {
        g.grad_w.emplace_back(mlp.weights[k].rows(), mlp.weights[k].cols());
        g.grad_b.emplace_back(1, mlp.weights[k].rows());
    }
    g.grad_x = relu_mlp_backward_batch(mlp, cache, Matrix(1, upstream.size(), Vector(upstream.begin(), upstream.end())),
                                       g.grad_w, g.grad_b)
                   .data();
    return g;
}

// ---------------------------------------------------------------------------------------------

/// Disjoint union of graphs as one node matrix, with a node -> graph map.
struct GraphBatch {
    Matrix x;
    std::vector<Edge> edges;
    std::optional<Matrix> edge_features;
    std::vector<std::size_t> graph_of_node;
    std::vector<std::size_t> node_offset;  // num_graphs + 1 entries
    std::size_t num_graphs() const noexcept { return node_offset.empty() ? 0 : node_offset.size() - 1; }
};

inline GraphBatch make_batch(std::span<const AttributedGraph* const> graphs) {
    detail::require(!graphs.empty(), "make_batch: no graphs");
    GraphBatch b;
    const std::size_t p = graphs[0]->feature_dim();
    std::size_t total_nodes = 0, total_edges = 0;
    for (const auto* g : graphs) {
        detail::require(g->feature_dim() == p, "make_batch: feature dim mismatch");
        total_nodes += g->num_nodes();
        total_edges += g->edges.size();
    }
    const bool with_edges = graphs[0]->edge_features.has_value();
    const std::size_t pe = graphs[0]->edge_feature_dim();
    b.x = Matrix(total_nodes, p);
    if (with_edges) b.edge_features = Matrix(total_edges, pe);
    b.edges.reserve(total_edges);
    b.graph_of_node.reserve(total_nodes);
    b.node_offset.push_back(0);
    std::size_t node = 0, edge = 0;
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
        const auto& g = *graphs[gi];
        detail::require(g.edge_features.has_value() == with_edges, "make_batch: mixed edge-feature presence");
        std::copy(g.x.data().begin(), g.x.data().end(), b.x.data().begin() + static_cast<std::ptrdiff_t>(node * p));
        for (const auto& [s, t] : g.edges) b.edges.emplace_back(s + node, t + node);
        if (with_edges) {
            detail::require(g.edge_feature_dim() == pe, "make_batch: edge feature dim mismatch");
            std::copy(g.edge_features->data().begin(), g.edge_features->data().end(),
                      b.edge_features->data().begin() + static_cast<std::ptrdiff_t>(edge * pe));
        }
        for (std::size_t i = 0; i < g.num_nodes(); ++i) b.graph_of_node.push_back(gi);
        node += g.num_nodes();
        edge += g.edges.size();
        b.node_offset.push_back(node);
    }
    return b;
}

inline GraphBatch make_batch(const AttributedGraph& g) {
    const AttributedGraph* p = &g;
    return make_batch(std::span<const AttributedGraph* const>(&p, 1));
}

class GnnModel;

struct LayerTrace {
    Matrix input;                     // x^(k-1), N x p
    std::optional<Matrix> edge_embed; // E e, |E| x p
    std::optional<Matrix> message_pre;// x_j + E e_ji before the ReLU (ReLU GINE only)
    Matrix aggregated;                // z, N x p
    BcosMlpCache bcos;
    ReluCache relu;
};

struct ForwardTrace {
    std::uint64_t model_id = 0;
    std::uint64_t model_version = 0;
    GraphBatch batch;
    std::vector<LayerTrace> layers;
    Matrix embeddings;                // x^(L)
    std::optional<Matrix> dropout_mask;
    BcosMlpCache readout_bcos;
    ReluCache readout_relu;
    Matrix node_outputs;              // N x c
    Matrix logits;                    // graphs x c (graph_sum) or N x c (per_node)
};

struct ForwardOptions {
    bool train = false;
    Rng* rng = nullptr;  // needed for dropout when train
};

/// Parameter gradients in GnnModel::parameters() order, plus dL/dX.
struct ModelGradients {
    std::vector<Matrix> params;
    Matrix input;
};

namespace detail {
inline std::uint64_t next_model_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter++;
}
}  // namespace detail

class GnnModel {
public:
    GnnModel() = default;

    static GnnModel init(const GinConfig& cfg, Rng& rng) {
        cfg.validate();
        GnnModel m;
        m.cfg_ = cfg;
        for (std::size_t k = 0; k < cfg.num_layers; ++k) {
            std::vector<std::size_t> dims{cfg.layer_in_dim(k)};
            for (std::size_t l = 0; l < cfg.mlp_depth; ++l) dims.push_back(cfg.hidden);
            if (cfg.variant == Variant::bcos)
                m.bcos_updates_.push_back(BcosMlp::init(dims, cfg.b, rng));
            else
                m.relu_updates_.push_back(ReluMlp::init(dims, true, rng));
            m.epsilons_.emplace_back(1, 1, cfg.epsilon);
            if (cfg.edge_mode == EdgeMode::additive) {
                const double a = 1.0 / std::sqrt(static_cast<double>(cfg.edge_dim));
                m.edge_embeds_.push_back(random_uniform(cfg.layer_in_dim(k), cfg.edge_dim, a, rng));
            }
        }
        std::vector<std::size_t> rdims{cfg.hidden};
        for (std::size_t l = 0; l + 1 < cfg.readout_depth; ++l) rdims.push_back(cfg.hidden);
        rdims.push_back(cfg.num_classes);
        if (cfg.variant == Variant::bcos)
            m.bcos_readout_ = BcosMlp::init(rdims, cfg.b, rng);
        else
            m.relu_readout_ = ReluMlp::init(rdims, false, rng);
        m.id_ = detail::next_model_id();
        return m;
    }

    GnnModel(const GnnModel& o) : GnnModel(o, 0) { id_ = detail::next_model_id(); }
    GnnModel& operator=(const GnnModel& o) {
        if (this != &o) {
            *this = GnnModel(o);
        }
        return *this;
    }
    GnnModel(GnnModel&&) noexcept = default;
    GnnModel& operator=(GnnModel&&) noexcept = default;

    const GinConfig& config() const noexcept { return cfg_; }
    std::uint64_t version() const noexcept { return version_; }
    std::uint64_t id() const noexcept { return id_; }

    const std::vector<BcosMlp>& bcos_updates() const noexcept { return bcos_updates_; }
    const BcosMlp& bcos_readout() const noexcept { return bcos_readout_; }
    const std::vector<ReluMlp>& relu_updates() const noexcept { return relu_updates_; }
    const ReluMlp& relu_readout() const noexcept { return relu_readout_; }
    const std::vector<Matrix>& edge_embeds() const noexcept { return edge_embeds_; }
    double epsilon(std::size_t k) const { return epsilons_.at(k)(0, 0); }

    /// Trainable parameters, fixed order: per GIN layer [mlp weights, (relu) biases, (relu) eps,
    /// (additive) edge map], then readout [weights, (relu) biases]. Bumps the version, so traces
    /// taken before any mutation become stale.
    std::vector<Matrix*> parameters() {
        ++version_;
        return collect<Matrix>(*this);
    }
    std::vector<const Matrix*> parameters() const { return collect<const Matrix>(*this); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto* p : parameters()) n += p->size();
        return n;
    }

    /// Zero-filled gradient buffers matching parameters().
    std::vector<Matrix> zero_gradients() const {
        std::vector<Matrix> g;
        for (const auto* p : parameters()) g.emplace_back(p->rows(), p->cols());
        return g;
    }

    /// Index of the first parameter of GIN layer k, and of the readout block.
    std::size_t layer_param_offset(std::size_t k) const {
        return k * per_layer_param_count();
    }
    std::size_t readout_param_offset() const { return cfg_.num_layers * per_layer_param_count(); }

    /// Throws with a diagnostic if any B-cos weight row dropped under the norm floor.
    void check_weight_rows() const {
        if (cfg_.variant != Variant::bcos) return;
        auto check = [](const BcosMlp& mlp, const std::string& where) {
            for (std::size_t l = 0; l < mlp.depth(); ++l) {
                try {
                    mlp.layers()[l].check_rows();
                } catch (const ZeroRowError& e) {
                    throw ContractViolation(where + " layer " + std::to_string(l) + ": " + e.what());
                }
            }
        };
        for (std::size_t k = 0; k < bcos_updates_.size(); ++k) check(bcos_updates_[k], "update MLP " + std::to_string(k));
        check(bcos_readout_, "readout MLP");
    }

private:
    GnnModel(const GnnModel& o, int)
        : cfg_(o.cfg_), bcos_updates_(o.bcos_updates_), bcos_readout_(o.bcos_readout_),
          relu_updates_(o.relu_updates_), relu_readout_(o.relu_readout_), epsilons_(o.epsilons_),
          edge_embeds_(o.edge_embeds_), version_(o.version_), id_(o.id_) {}

    static std::vector<BcosLayer>& layers_of(BcosMlp& m) { return m.mutable_layers(); }
    static const std::vector<BcosLayer>& layers_of(const BcosMlp& m) { return m.layers(); }
    static Matrix& weights_of(BcosLayer& l) { return l.mutable_weights(); }
    static const Matrix& weights_of(const BcosLayer& l) { return l.weights(); }

    template <typename M, typename Self>
    static std::vector<M*> collect(Self& self) {
        std::vector<M*> out;
        const GinConfig& cfg = self.cfg_;
        const bool relu = cfg.variant == Variant::relu;
        for (std::size_t k = 0; k < cfg.num_layers; ++k) {
            if (relu) {
                for (auto& w : self.relu_updates_[k].weights) out.push_back(&w);
                for (auto& b : self.relu_updates_[k].biases) out.push_back(&b);
                out.push_back(&self.epsilons_[k]);
            } else {
                for (auto& l : layers_of(self.bcos_updates_[k])) out.push_back(&weights_of(l));
            }
            if (cfg.edge_mode == EdgeMode::additive) out.push_back(&self.edge_embeds_[k]);
        }
        if (relu) {
            for (auto& w : self.relu_readout_.weights) out.push_back(&w);
            for (auto& b : self.relu_readout_.biases) out.push_back(&b);
        } else {
            for (auto& l : layers_of(self.bcos_readout_)) out.push_back(&weights_of(l));
        }
        return out;
    }

    std::size_t per_layer_param_count() const {
        std::size_t n = cfg_.variant == Variant::relu ? 2 * cfg_.mlp_depth + 1 : cfg_.mlp_depth;
        if (cfg_.edge_mode == EdgeMode::additive) ++n;
        return n;
    }

    friend GnnModel model_from_json(const nlohmann::json&);

    GinConfig cfg_;
    std::vector<BcosMlp> bcos_updates_;
    BcosMlp bcos_readout_;
    std::vector<ReluMlp> relu_updates_;
    ReluMlp relu_readout_;
    std::vector<Matrix> epsilons_;     // 1 x 1 each; trainable only for ReLU
    std::vector<Matrix> edge_embeds_;  // p_{k-1} x edge_dim
    std::uint64_t version_ = 0;
    std::uint64_t id_ = 0;
};

// ---------------------------------------------------------------------------------------------

inline ForwardTrace gin_forward_batch(const GnnModel& m, GraphBatch batch, ForwardOptions opt = {}) {
    const GinConfig& cfg = m.config();
    if (batch.x.cols() != cfg.input_dim)
        throw ContractViolation("gin_forward: feature dim " + std::to_string(batch.x.cols()) +
                                " != model input dim " + std::to_string(cfg.input_dim));
    const bool additive = cfg.edge_mode == EdgeMode::additive;
    if (additive && !batch.edge_features)
        throw ContractViolation("gin_forward: additive edge mode needs edge features");
    if (additive && batch.edge_features->cols() != cfg.edge_dim)
        throw ContractViolation("gin_forward: edge feature dim mismatch");
    const bool relu = cfg.variant == Variant::relu;

    ForwardTrace tr;
    tr.model_id = m.id();
    tr.model_version = m.version();
    Matrix h = batch.x;
    tr.layers.resize(cfg.num_layers);
    for (std::size_t k = 0; k < cfg.num_layers; ++k) {
        LayerTrace& lt = tr.layers[k];
        Matrix z = h;
        z *= 1.0 + m.epsilon(k);
        if (additive) lt.edge_embed = matmul_bt(*batch.edge_features, m.edge_embeds()[k]);
        const std::size_t p = h.cols();
        if (relu && additive) lt.message_pre = Matrix(batch.edges.size(), p);
        for (std::size_t e = 0; e < batch.edges.size(); ++e) {
            const auto [s, t] = batch.edges[e];
            auto zt = z.row(t);
            auto hs = h.row(s);
            if (!additive) {
                for (std::size_t c = 0; c < p; ++c) zt[c] += hs[c];
                continue;
            }
            auto emb = lt.edge_embed->row(e);
            if (relu) {
                auto pre = lt.message_pre->row(e);
                for (std::size_t c = 0; c < p; ++c) {
                    pre[c] = hs[c] + emb[c];
                    zt[c] += pre[c] > 0.0 ? pre[c] : 0.0;
                }
            } else {
                for (std::size_t c = 0; c < p; ++c) zt[c] += hs[c] + emb[c];
            }
        }
        lt.input = std::move(h);
        h = relu ? relu_mlp_forward_batch(m.relu_updates()[k], z, &lt.relu)
                 : mlp_forward_batch(m.bcos_updates()[k], z, &lt.bcos);
        lt.aggregated = std::move(z);
    }
    tr.embeddings = h;
    Matrix readout_in = std::move(h);
    if (opt.train && cfg.dropout > 0.0) {
        detail::require(opt.rng != nullptr, "gin_forward: dropout needs an rng");
        Matrix mask(readout_in.rows(), readout_in.cols());
        const double keep = 1.0 - cfg.dropout;
        for (double& v : mask.data()) v = opt.rng->bernoulli(keep) ? 1.0 / keep : 0.0;
        for (std::size_t i = 0; i < readout_in.size(); ++i) readout_in.data()[i] *= mask.data()[i];
        tr.dropout_mask = std::move(mask);
    }
    tr.node_outputs = relu ? relu_mlp_forward_batch(m.relu_readout(), readout_in, &tr.readout_relu)
                           : mlp_forward_batch(m.bcos_readout(), readout_in, &tr.readout_bcos);
    if (cfg.readout == ReadoutMode::per_node) {
        tr.logits = tr.node_outputs;
    } else {
        tr.logits = Matrix(batch.num_graphs(), cfg.num_classes);
        for (std::size_t i = 0; i < tr.node_outputs.rows(); ++i) {
            auto lr = tr.logits.row(batch.graph_of_node[i]);
            auto nr = tr.node_outputs.row(i);
            for (std::size_t c = 0; c < lr.size(); ++c) lr[c] += nr[c];
        }
    }
    tr.batch = std::move(batch);
    return tr;
}

inline ForwardTrace gin_forward(const GnnModel& m, const AttributedGraph& g, ForwardOptions opt = {}) {
    return gin_forward_batch(m, make_batch(g), opt);
}

/// Logits of one graph (graph_sum mode) as a vector.
inline Vector graph_logits(const GnnModel& m, const AttributedGraph& g) {
    return gin_forward(m, g).logits.data();
}

/// Exact gradients of sum(grad_logits .* logits) w.r.t. every parameter and the input features.
inline ModelGradients gin_backward(const GnnModel& m, const ForwardTrace& tr, const Matrix& grad_logits) {
    if (tr.model_id != m.id() || tr.model_version != m.version())
        throw ContractViolation("gin_backward: trace is stale (model changed since forward)");
    detail::require(grad_logits.same_shape(tr.logits), "gin_backward: grad_logits shape mismatch");
    const GinConfig& cfg = m.config();
    const bool relu = cfg.variant == Variant::relu;
    const bool additive = cfg.edge_mode == EdgeMode::additive;

    ModelGradients out{m.zero_gradients(), {}};
    auto& gp = out.params;

    Matrix g_nodes;
    if (cfg.readout == ReadoutMode::per_node) {
        g_nodes = grad_logits;
    } else {
        g_nodes = Matrix(tr.node_outputs.rows(), tr.node_outputs.cols());
        for (std::size_t i = 0; i < g_nodes.rows(); ++i)
            std::ranges::copy(grad_logits.row(tr.batch.graph_of_node[i]), g_nodes.row(i).begin());
    }
    const std::size_t ro = m.readout_param_offset();
    Matrix g = relu ? relu_mlp_backward_batch(m.relu_readout(), tr.readout_relu, std::move(g_nodes),
                                              std::span<Matrix>(gp).subspan(ro, cfg.readout_depth),
                                              std::span<Matrix>(gp).subspan(ro + cfg.readout_depth, cfg.readout_depth))
                    : mlp_backward_batch(m.bcos_readout(), tr.readout_bcos, std::move(g_nodes),
                                         std::span<Matrix>(gp).subspan(ro, cfg.readout_depth));
    if (tr.dropout_mask)
        for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] *= tr.dropout_mask->data()[i];

    for (std::size_t k = cfg.num_layers; k-- > 0;) {
        const LayerTrace& lt = tr.layers[k];
        const std::size_t off = m.layer_param_offset(k);
        Matrix gz = relu ? relu_mlp_backward_batch(m.relu_updates()[k], lt.relu, std::move(g),
                                                   std::span<Matrix>(gp).subspan(off, cfg.mlp_depth),
                                                   std::span<Matrix>(gp).subspan(off + cfg.mlp_depth, cfg.mlp_depth))
                         : mlp_backward_batch(m.bcos_updates()[k], lt.bcos, std::move(g),
                                              std::span<Matrix>(gp).subspan(off, cfg.mlp_depth));
        if (relu) gp[off + 2 * cfg.mlp_depth](0, 0) += dot(gz.data(), lt.input.data());
        Matrix gh = gz;
        gh *= 1.0 + m.epsilon(k);
        const std::size_t p = gh.cols();
        Matrix g_emb;
        if (additive) g_emb = Matrix(tr.batch.edges.size(), p);
        for (std::size_t e = 0; e < tr.batch.edges.size(); ++e) {
            const auto [s, t] = tr.batch.edges[e];
            auto gzt = gz.row(t);
            auto ghs = gh.row(s);
            if (!additive) {
                for (std::size_t c = 0; c < p; ++c) ghs[c] += gzt[c];
                continue;
            }
            auto ge = g_emb.row(e);
            for (std::size_t c = 0; c < p; ++c) {
                const double v = (relu && !(lt.message_pre->row(e)[c] > 0.0)) ? 0.0 : gzt[c];
                ghs[c] += v;
                ge[c] = v;
            }
        }
        if (additive) {
            const std::size_t ei = off + (relu ? 2 * cfg.mlp_depth + 1 : cfg.mlp_depth);
            gp[ei] += matmul_at(g_emb, *tr.batch.edge_features);
        }
        g = std::move(gh);
    }
    out.input = std::move(g);
    return out;
}

// ---------------------------------------------------------------------------------------------
// Loss.

struct LossResult {
    double loss = 0.0;   // mean over rows
    Matrix grad_logits;  // d loss / d logits
};

/// Mean softmax cross-entropy over rows of `logits`.
inline LossResult softmax_cross_entropy(const Matrix& logits, std::span<const std::size_t> labels) {
    detail::require(logits.rows() == labels.size(), "softmax_cross_entropy: label count mismatch");
    LossResult r{0.0, Matrix(logits.rows(), logits.cols())};
    const double inv_n = 1.0 / static_cast<double>(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto z = logits.row(i);
        detail::require(labels[i] < z.size(), "softmax_cross_entropy: label out of range");
        const double mx = *std::ranges::max_element(z);
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - mx);
        const double lse = mx + std::log(sum);
        r.loss += (lse - z[labels[i]]) * inv_n;
        auto gr = r.grad_logits.row(i);
        for (std::size_t c = 0; c < z.size(); ++c) gr[c] = std::exp(z[c] - lse) * inv_n;
        gr[labels[i]] -= inv_n;
    }
    return r;
}

/// One-vs-rest sigmoid cross-entropy, averaged over all logits.
inline LossResult sigmoid_cross_entropy(const Matrix& logits, std::span<const std::size_t> labels) {
    detail::require(logits.rows() == labels.size(), "sigmoid_cross_entropy: label count mismatch");
    LossResult r{0.0, Matrix(logits.rows(), logits.cols())};
    const double inv = 1.0 / static_cast<double>(logits.rows() * logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto z = logits.row(i);
        detail::require(labels[i] < z.size(), "sigmoid_cross_entropy: label out of range");
        auto gr = r.grad_logits.row(i);
        for (std::size_t c = 0; c < z.size(); ++c) {
            const double y = c == labels[i] ? 1.0 : 0.0;
            r.loss += (std::max(z[c], 0.0) - z[c] * y + std::log1p(std::exp(-std::abs(z[c])))) * inv;
            gr[c] = (1.0 / (1.0 + std::exp(-z[c])) - y) * inv;
        }
    }
    return r;
}

enum class LossKind { softmax, sigmoid };

inline std::string to_string(LossKind k) { return k == LossKind::softmax ? "softmax" : "sigmoid"; }

inline LossKind parse_loss_kind(const std::string& s) {
    if (s == "softmax") return LossKind::softmax;
    if (s == "sigmoid") return LossKind::sigmoid;
    throw FormatError("unknown loss '" + s + "' (expected softmax or sigmoid)");
}

inline LossResult classification_loss(LossKind k, const Matrix& logits, std::span<const std::size_t> labels) {
    return k == LossKind::softmax ? softmax_cross_entropy(logits, labels) : sigmoid_cross_entropy(logits, labels);
}

inline std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::ranges::max_element(v) - v.begin());
}

// ---------------------------------------------------------------------------------------------
// Checkpoints: {"version": "bcosgnn-ckpt-1", config, parameters, meta}

inline constexpr const char* kCheckpointVersion = "bcosgnn-ckpt-1";

inline ojson config_to_json(const GinConfig& c) {
    ojson j;
    j["input_dim"] = c.input_dim;
    j["num_layers"] = c.num_layers;
    j["hidden"] = c.hidden;
    j["mlp_depth"] = c.mlp_depth;
    j["readout_depth"] = c.readout_depth;
    j["num_classes"] = c.num_classes;
    j["epsilon"] = c.epsilon;
    j["b"] = c.b;
    j["variant"] = to_string(c.variant);
    j["edge_mode"] = to_string(c.edge_mode);
    j["edge_dim"] = c.edge_dim;
    j["dropout"] = c.dropout;
    j["readout"] = to_string(c.readout);
    return j;
}

inline GinConfig config_from_json(const nlohmann::json& j) {
    GinConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.mlp_depth = j.at("mlp_depth").get<std::size_t>();
    c.readout_depth = j.at("readout_depth").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.epsilon = j.at("epsilon").get<double>();
    c.b = j.at("b").get<double>();
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.edge_mode = parse_edge_mode(j.at("edge_mode").get<std::string>());
    c.edge_dim = j.at("edge_dim").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.readout = parse_readout_mode(j.value("readout", std::string("graph_sum")));
    return c;
}

inline ojson model_to_json(const GnnModel& m, const ojson& meta = ojson::object()) {
    ojson j;
    j["version"] = kCheckpointVersion;
    j["config"] = config_to_json(m.config());
    ojson params = ojson::array();
    for (const auto* p : m.parameters()) {
        ojson pj;
        pj["rows"] = p->rows();
        pj["cols"] = p->cols();
        ojson data = ojson::array();
        for (double v : p->data()) data.push_back(v);
        pj["data"] = std::move(data);
        params.push_back(std::move(pj));
    }
    j["parameters"] = std::move(params);
    j["meta"] = meta;
    return j;
}

inline GnnModel model_from_json(const nlohmann::json& j) {
    try {
        if (j.at("version").get<std::string>() != kCheckpointVersion)
            throw FormatError("checkpoint: unsupported version " + j.at("version").dump());
        GinConfig cfg = config_from_json(j.at("config"));
        Rng dummy(0);
        GnnModel m = GnnModel::init(cfg, dummy);
        auto params = m.parameters();
        const auto& pj = j.at("parameters");
        if (pj.size() != params.size()) throw FormatError("checkpoint: parameter count mismatch");
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto rows = pj[i].at("rows").get<std::size_t>();
            const auto cols = pj[i].at("cols").get<std::size_t>();
            if (rows != params[i]->rows() || cols != params[i]->cols())
                throw FormatError("checkpoint: parameter " + std::to_string(i) + " has wrong shape");
            const auto& data = pj[i].at("data");
            if (data.size() != rows * cols) throw FormatError("checkpoint: parameter " + std::to_string(i) + " data length");
            for (std::size_t k = 0; k < data.size(); ++k) params[i]->data()[k] = data[k].get<double>();
        }
        m.check_weight_rows();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    } catch (const ContractViolation& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const GnnModel& m, const std::string& path, const ojson& meta = ojson::object()) {
    write_text_file(path, to_json_text(model_to_json(m, meta)));
}

inline GnnModel load_checkpoint(const std::string& path) { return model_from_json(parse_json_file(path)); }

}  // namespace bcosgnn
