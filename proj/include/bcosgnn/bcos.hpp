#pragma once

// B-cos transform: out_j = |x| * |c_j|^B * sgn(c_j), c_j = cos(x, w_j).
// Weights are normalized on the fly; the raw matrix is what the optimizer trains.

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "bcosgnn/error.hpp"
#include "bcosgnn/linalg.hpp"

namespace bcosgnn {

/// Smoothing width for |c| in the gradient path only.
inline constexpr double kCosineSmoothing = 1e-6;

namespace detail {

/// |c|^e with the common exponents special-cased (pow dominates otherwise). 0^0 == 1.
inline double abs_pow(double abs_c, double e) {
    if (e == 0.0) return 1.0;
    if (e == 1.0) return abs_c;
    if (e == 2.0) return abs_c * abs_c;
    if (e == 0.5) return std::sqrt(abs_c);
    return std::pow(abs_c, e);
}

/// (c^2 + eps^2)^(e/2): |c|^e with the kink at zero smoothed.
inline double smoothed_abs_pow(double c, double e, double eps2) {
    if (e == 0.0) return 1.0;
    const double sq = c * c + eps2;
    if (e == 1.0) return std::sqrt(sq);
    if (e == 2.0) return sq;
    return std::pow(sq, 0.5 * e);
}

}  // namespace detail

class BcosLayer {
public:
    BcosLayer() = default;
    BcosLayer(Matrix weights, double b) : w_(std::move(weights)), b_(b) {
        if (!(b_ >= 1.0)) throw ContractViolation("BcosLayer: B must be >= 1");
        check_rows();
    }

    /// Uniform(-a, a) with a = sqrt(6 / (in + out)). No pre-normalization.
    static BcosLayer init(std::size_t in_dim, std::size_t out_dim, double b, Rng& rng) {
        const double a = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
        return BcosLayer(random_uniform(out_dim, in_dim, a, rng), b);
    }

    std::size_t in_dim() const noexcept { return w_.cols(); }
    std::size_t out_dim() const noexcept { return w_.rows(); }
    double b() const noexcept { return b_; }
    const Matrix& weights() const noexcept { return w_; }
    Matrix& mutable_weights() noexcept { return w_; }

    Matrix normalized_weights() const { return row_l2_normalize(w_); }

    /// Throws ZeroRowError if any weight row fell below the norm floor.
    void check_rows() const {
        for (std::size_t r = 0; r < w_.rows(); ++r)
            if (!(norm(w_.row(r)) >= kRowNormFloor)) throw ZeroRowError(r);
    }

private:
    Matrix w_;
    double b_ = 1.0;
};

/// Everything the backward pass and the dynamic-weight path need from one batched forward.
struct BcosCache {
    Matrix input;   // N x p
    Matrix w_hat;   // q x p
    Vector w_norm;  // q
    Vector in_norm; // N
    Matrix cosine;  // N x q, clamped
    Matrix output;  // N x q
};

/// Forward over the rows of `x` (one sample per row).
inline Matrix bcos_forward_batch(const BcosLayer& layer, const Matrix& x, BcosCache* cache = nullptr) {
    if (x.cols() != layer.in_dim())
        throw ContractViolation("bcos_forward: input dim " + std::to_string(x.cols()) +
                                " != layer input dim " + std::to_string(layer.in_dim()));
    const Matrix& w = layer.weights();
    Vector w_norm(w.rows());
    Matrix w_hat = w;
    for (std::size_t r = 0; r < w.rows(); ++r) {
        w_norm[r] = norm(w.row(r));
        if (!(w_norm[r] >= kRowNormFloor)) throw ZeroRowError(r);
        for (double& v : w_hat.row(r)) v /= w_norm[r];
    }
    Matrix out = matmul_bt(x, w_hat);
    Matrix cosine(x.rows(), w.rows());
    Vector in_norm(x.rows());
    const double e = layer.b() - 1.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double r = norm(x.row(i));
        in_norm[i] = r;
        auto orow = out.row(i);
        auto crow = cosine.row(i);
        if (r == 0.0) {
            std::fill(orow.begin(), orow.end(), 0.0);
            continue;
        }
        for (std::size_t j = 0; j < orow.size(); ++j) {
            const double c = std::clamp(orow[j] / r, -1.0, 1.0);
            crow[j] = c;
            orow[j] = r * c * detail::abs_pow(std::abs(c), e);
        }
    }
    if (cache) {
        cache->input = x;
        cache->w_hat = std::move(w_hat);
        cache->w_norm = std::move(w_norm);
        cache->in_norm = std::move(in_norm);
        cache->cosine = std::move(cosine);
        cache->output = out;
    }
    return out;
}

/// Per-row dynamic scale |c|^(B-1) (N x q) from a cache.
inline Matrix bcos_dynamic_scales(const BcosCache& cache, double b) {
    Matrix s(cache.cosine.rows(), cache.cosine.cols());
    for (std::size_t i = 0; i < s.rows(); ++i) {
        if (cache.in_norm[i] == 0.0) continue;  // zero input: zero activation, zero weights
        for (std::size_t j = 0; j < s.cols(); ++j)
            s(i, j) = detail::abs_pow(std::abs(cache.cosine(i, j)), b - 1.0);
    }
    return s;
}

/// Backward over a batch. Returns dL/dx (N x p) and accumulates dL/dW into `grad_w` (q x p).
inline Matrix bcos_backward_batch(const BcosLayer& layer, const BcosCache& cache, const Matrix& upstream,
                                  Matrix& grad_w) {
    detail::require(upstream.rows() == cache.input.rows() && upstream.cols() == layer.out_dim(),
                    "bcos_backward: upstream gradient shape mismatch");
    detail::require(grad_w.rows() == layer.out_dim() && grad_w.cols() == layer.in_dim(),
                    "bcos_backward: grad_w shape mismatch");
    const double b = layer.b();
    const double e = b - 1.0;
    const double eps2 = kCosineSmoothing * kCosineSmoothing;
    const std::size_t n = cache.input.rows(), q = layer.out_dim();

    // a_ij = g_ij * d out_ij / d (w_hat_j . x_i) = g_ij * B * |c_ij|^(B-1), smoothed.
    Matrix a(n, q);
    Matrix grad_x(n, layer.in_dim());
    Vector radial(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = cache.in_norm[i];
        if (r == 0.0) continue;
        double g_dot_out = 0.0;
        for (std::size_t j = 0; j < q; ++j) {
            const double g = upstream(i, j);
            if (g == 0.0) continue;
            const double c = cache.cosine(i, j);
            const double smooth = detail::smoothed_abs_pow(c, e, eps2);
            a(i, j) = g * b * smooth;
            g_dot_out += g * cache.output(i, j);
        }
        // d out / d |x| = (1 - B) out / |x|, and d|x|/dx = x / |x|.
        radial[i] = (1.0 - b) * g_dot_out / (r * r);
    }
    matmul_accumulate(a, cache.w_hat, grad_x);
    for (std::size_t i = 0; i < n; ++i) {
        if (radial[i] == 0.0) continue;
        auto gx = grad_x.row(i);
        auto xi = cache.input.row(i);
        for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += radial[i] * xi[k];
    }

    // Through the row normalization: dw = (I - w_hat w_hat^T) d w_hat / |w|.
    Matrix grad_w_hat = matmul_at(a, cache.input);
    for (std::size_t j = 0; j < q; ++j) {
        auto gh = grad_w_hat.row(j);
        auto wh = cache.w_hat.row(j);
        const double proj = dot(gh, wh);
        auto gw = grad_w.row(j);
        const double inv = 1.0 / cache.w_norm[j];
        for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += (gh[k] - wh[k] * proj) * inv;
    }
    return grad_x;
}

inline Vector bcos_forward(const BcosLayer& layer, std::span<const double> x) {
    return bcos_forward_batch(layer, Matrix(1, x.size(), Vector(x.begin(), x.end()))).data();
}

/// diag(|c(x, W_hat)|^(B-1)) * W_hat
inline Matrix bcos_dynamic_weights(const BcosLayer& layer, std::span<const double> x) {
    if (x.size() != layer.in_dim()) throw ContractViolation("bcos_dynamic_weights: dimension mismatch");
    Matrix w_hat = layer.normalized_weights();
    const Vector c = cosine_rows(x, w_hat);
    const bool zero = norm(x) == 0.0;
    for (std::size_t j = 0; j < w_hat.rows(); ++j) {
        const double s = zero ? 0.0 : detail::abs_pow(std::abs(c[j]), layer.b() - 1.0);
        for (double& v : w_hat.row(j)) v *= s;
    }
    return w_hat;
}

struct BcosGradient {
    Vector grad_x;
    Matrix grad_w;
};

inline BcosGradient bcos_backward(const BcosLayer& layer, std::span<const double> x,
                                  std::span<const double> upstream) {
    if (upstream.size() != layer.out_dim()) throw ContractViolation("bcos_backward: upstream size mismatch");
    BcosCache cache;
    bcos_forward_batch(layer, Matrix(1, x.size(), Vector(x.begin(), x.end())), &cache);
    BcosGradient g{{}, Matrix(layer.out_dim(), layer.in_dim())};
    g.grad_x = bcos_backward_batch(layer, cache, Matrix(1, upstream.size(), Vector(upstream.begin(), upstream.end())),
                                   g.grad_w)
                   .data();
    return g;
}

/// A stack of B-cos layers with no biases and nothing in between.
class BcosMlp {
public:
    BcosMlp() = default;
    explicit BcosMlp(std::vector<BcosLayer> layers) : layers_(std::move(layers)) {
        for (std::size_t k = 1; k < layers_.size(); ++k)
            if (layers_[k].in_dim() != layers_[k - 1].out_dim())
                throw ContractViolation("BcosMlp: layer " + std::to_string(k) + " input dim does not chain");
    }

    /// dims = {in, h1, ..., out}
    static BcosMlp init(const std::vector<std::size_t>& dims, double b, Rng& rng) {
        detail::require(dims.size() >= 2, "BcosMlp::init: need at least input and output dims");
        std::vector<BcosLayer> layers;
        for (std::size_t k = 0; k + 1 < dims.size(); ++k) layers.push_back(BcosLayer::init(dims[k], dims[k + 1], b, rng));
        return BcosMlp(std::move(layers));
    }

    std::size_t depth() const noexcept { return layers_.size(); }
    std::size_t in_dim() const { return layers_.front().in_dim(); }
    std::size_t out_dim() const { return layers_.back().out_dim(); }
    const std::vector<BcosLayer>& layers() const noexcept { return layers_; }
    std::vector<BcosLayer>& mutable_layers() noexcept { return layers_; }

private:
    std::vector<BcosLayer> layers_;
};

using BcosMlpCache = std::vector<BcosCache>;

inline Matrix mlp_forward_batch(const BcosMlp& mlp, const Matrix& x, BcosMlpCache* cache = nullptr) {
    if (cache) cache->assign(mlp.depth(), {});
    Matrix h = x;
    for (std::size_t k = 0; k < mlp.depth(); ++k)
        h = bcos_forward_batch(mlp.layers()[k], h, cache ? &(*cache)[k] : nullptr);
    return h;
}

/// Returns dL/dx; grads[k] accumulates dL/dW of layer k.
inline Matrix mlp_backward_batch(const BcosMlp& mlp, const BcosMlpCache& cache, Matrix upstream,
                                 std::span<Matrix> grads) {
    for (std::size_t k = mlp.depth(); k-- > 0;)
        upstream = bcos_backward_batch(mlp.layers()[k], cache[k], upstream, grads[k]);
    return upstream;
}

/// Left-multiplies `coeff` (m x q_L) through the dynamic weights of row `row` of a batched forward:
/// returns coeff * W~_L(a_L) ... W~_1(a_1)  (m x p).
inline Matrix mlp_pullback_row(const BcosMlp& mlp, const BcosMlpCache& cache, std::size_t row, Matrix coeff) {
    for (std::size_t k = mlp.depth(); k-- > 0;) {
        const BcosCache& c = cache[k];
        const double e = mlp.layers()[k].b() - 1.0;
        const bool zero = c.in_norm[row] == 0.0;
        for (std::size_t j = 0; j < coeff.cols(); ++j) {
            const double s = zero ? 0.0 : detail::abs_pow(std::abs(c.cosine(row, j)), e);
            for (std::size_t i = 0; i < coeff.rows(); ++i) coeff(i, j) *= s;
        }
        coeff = matmul(coeff, c.w_hat);
    }
    return coeff;
}

struct MlpForwardResult {
    Vector out;
    std::vector<Vector> layer_inputs;  // a_1 ... a_L
};

inline MlpForwardResult mlp_forward(const BcosMlp& mlp, std::span<const double> x) {
    if (mlp.depth() == 0) throw ContractViolation("mlp_forward: empty MLP");
    MlpForwardResult res;
    Vector h(x.begin(), x.end());
    for (const auto& layer : mlp.layers()) {
        res.layer_inputs.push_back(h);
        h = bcos_forward(layer, h);
    }
    res.out = std::move(h);
    return res;
}

/// Product W~_L(a_L) ... W~_1(a_1).
inline Matrix mlp_dynamic_weights(const BcosMlp& mlp, std::span<const double> x) {
    const auto fwd = mlp_forward(mlp, x);
    Matrix w = bcos_dynamic_weights(mlp.layers()[0], fwd.layer_inputs[0]);
    for (std::size_t k = 1; k < mlp.depth(); ++k)
        w = matmul(bcos_dynamic_weights(mlp.layers()[k], fwd.layer_inputs[k]), w);
    return w;
}

}  // namespace bcosgnn
