#pragma once

// Stage 2 forward model: triple encoding, dual cross-attention with top-p
// sparsification, aggregation, and gated fusion. Everything here is pure
// given (params, inputs) and templated on the scalar type: float for
// training and serving, double for finite-difference verification.
//
// Per item with text embedding T, image embedding V and k triples (R, O):
//   Z~_i = O_i + mlp([O_i ; R_i])
//   s    = softmax((beta Z~ T + (1-beta) Z~ V) / tau_att)
//   s^   = top-p mask of s, no renormalization
//   Z    = sum_i s^_i Z~_i
//   X    = g_T W_T T + g_V W_V V + W_Z Z,  g = sigma(w . x + b)

#include "kgmel/errors.hpp"
#include "kgmel/util.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

namespace kgmel {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

struct HyperParams {
    double beta = 0.5;
    double tau_att = 0.1;
    double tau_cl = 0.1;
    double lambda_mm = 0.1;
    double lambda_ee = 0.1;
    int p = 3;
    int topk = 16;
    int n = 15;
    int dprime = 512;
    int d = 512;

    void validate() const {
        if (beta < 0.0 || beta > 1.0) throw ConfigError("beta must lie in [0,1]");
        if (tau_att <= 0.0) throw ConfigError("tau_att must be positive");
        if (tau_cl <= 0.0) throw ConfigError("tau_cl must be positive");
        if (lambda_mm < 0.0) throw ConfigError("lambda_mm must be non-negative");
        if (lambda_ee < 0.0) throw ConfigError("lambda_ee must be non-negative");
        if (p < 1) throw ConfigError("p must be >= 1");
        if (topk < 1) throw ConfigError("topk must be >= 1");
        if (n < 1) throw ConfigError("n must be >= 1");
        if (dprime < 1 || d < 1) throw ConfigError("embedding dims must be >= 1");
    }
};

// All learned tensors. Kept as matrices uniformly (vectors are single-column,
// scalars 1x1) so the named-tensor registry below covers every parameter.
template <typename S>
struct Params {
    Mat<S> W1, b1, W2, b2;    // mlp: 2d' -> d' -> d', b as [d',1]
    Mat<S> W_T, W_V, W_Z;     // projections [d,d']
    Mat<S> w_T_g, w_V_g;      // gate weights [1,d']
    Mat<S> b_T_g, b_V_g;      // gate biases [1,1]

    // Canonical visitation order; checkpointing, optimizers and grad checks
    // all iterate through here.
    template <typename F>
    void for_each(F&& f) {
        f("mlp.W1", W1); f("mlp.b1", b1); f("mlp.W2", W2); f("mlp.b2", b2);
        f("proj.W_T", W_T); f("proj.W_V", W_V); f("proj.W_Z", W_Z);
        f("gate.w_T", w_T_g); f("gate.b_T", b_T_g); f("gate.w_V", w_V_g); f("gate.b_V", b_V_g);
    }
    template <typename F>
    void for_each(F&& f) const {
        const_cast<Params*>(this)->for_each([&](const char* name, Mat<S>& t) { f(name, std::as_const(t)); });
    }

    static Params zeros(const HyperParams& h) {
        Params p;
        const int dp = h.dprime, d = h.d;
        p.W1 = Mat<S>::Zero(dp, 2 * dp);
        p.b1 = Mat<S>::Zero(dp, 1);
        p.W2 = Mat<S>::Zero(dp, dp);
        p.b2 = Mat<S>::Zero(dp, 1);
        p.W_T = Mat<S>::Zero(d, dp);
        p.W_V = Mat<S>::Zero(d, dp);
        p.W_Z = Mat<S>::Zero(d, dp);
        p.w_T_g = Mat<S>::Zero(1, dp);
        p.w_V_g = Mat<S>::Zero(1, dp);
        p.b_T_g = Mat<S>::Zero(1, 1);
        p.b_V_g = Mat<S>::Zero(1, 1);
        return p;
    }

    // Seeded init: projections orthogonal scaled 1/sqrt(d'), MLP Kaiming,
    // gates zero so both gates start at 0.5. Computed in double regardless
    // of S so float and double instantiations agree to rounding.
    static Params init(uint64_t seed, const HyperParams& h);

    bool operator==(const Params& o) const {
        bool eq = true;
        std::vector<const Mat<S>*> other;
        o.for_each([&](const char*, const Mat<S>& t) { other.push_back(&t); });
        size_t i = 0;
        for_each([&](const char*, const Mat<S>& t) {
            const Mat<S>& u = *other[i++];
            if (t.rows() != u.rows() || t.cols() != u.cols() || !(t.array() == u.array()).all()) eq = false;
        });
        return eq;
    }

    template <typename S2>
    Params<S2> cast() const {
        Params<S2> out;
        const_cast<Params*>(this)->for_each([&](const char* name, Mat<S>& t) {
            Mat<S2>* dst = nullptr;
            out.for_each([&](const char* name2, Mat<S2>& t2) {
                if (std::string_view(name) == name2) dst = &t2;
            });
            *dst = t.template cast<S2>();
        });
        return out;
    }

    void check_shapes(const HyperParams& h) const {
        const int dp = h.dprime, d = h.d;
        auto want = [](const Mat<S>& t, int r, int c, const char* name) {
            if (t.rows() != r || t.cols() != c)
                throw ConfigError(std::string("tensor ") + name + " has shape " + std::to_string(t.rows()) + "x" +
                                  std::to_string(t.cols()) + ", expected " + std::to_string(r) + "x" +
                                  std::to_string(c));
        };
        want(W1, dp, 2 * dp, "mlp.W1");
        want(b1, dp, 1, "mlp.b1");
        want(W2, dp, dp, "mlp.W2");
        want(b2, dp, 1, "mlp.b2");
        want(W_T, d, dp, "proj.W_T");
        want(W_V, d, dp, "proj.W_V");
        want(W_Z, d, dp, "proj.W_Z");
        want(w_T_g, 1, dp, "gate.w_T");
        want(w_V_g, 1, dp, "gate.w_V");
        want(b_T_g, 1, 1, "gate.b_T");
        want(b_V_g, 1, 1, "gate.b_V");
    }

    void check_finite(const char* context) const {
        for_each([&](const char* name, const Mat<S>& t) {
            if (!t.allFinite())
                throw DivergenceError(std::string(context) + ": tensor " + name + " has non-finite values");
        });
    }
};

// One mention's or entity's frozen base embeddings: text T, image V, and the
// per-triple relation/tail matrices R, O (k rows each).
template <typename S>
struct SideEncoding {
    Vec<S> T;
    Vec<S> V;
    Mat<S> R;
    Mat<S> O;

    int k() const { return static_cast<int>(R.rows()); }
};

namespace detail {
// Shared double-precision seat of Params<S>::init so float and double
// instantiations of the same seed agree to rounding.
Params<double> init_params_double(uint64_t seed, const HyperParams& h);
} // namespace detail

template <typename S>
Params<S> Params<S>::init(uint64_t seed, const HyperParams& h) {
    return detail::init_params_double(seed, h).template cast<S>();
}

template <typename S>
S sigmoid(S x) {
    return S(1) / (S(1) + std::exp(-x));
}

template <typename S>
S silu(S x) {
    return x * sigmoid(x);
}

template <typename S>
S silu_grad(S x) {
    const S sg = sigmoid(x);
    return sg * (S(1) + x * (S(1) - sg));
}

// Intermediate activations of one full item forward pass, retained for the
// reverse sweep.
template <typename S>
struct ItemTrace {
    Mat<S> X_in;            // [k x 2d'] concatenated [O ; R]
    Mat<S> H;               // pre-activation of mlp layer 1
    Mat<S> A;               // silu(H)
    Mat<S> Zt;              // triple embeddings Z~
    Vec<S> s;               // attention
    Vec<S> shat;            // masked attention
    Vec<S> Z;               // aggregated triple vector [d']
    S u_T, u_V;             // gate pre-activations
    S g_T, g_V;             // gates
    Vec<S> PT, PV;          // W_T T, W_V V
    Vec<S> X;               // fused output [d]
};

template <typename S>
Mat<S> encode_triples(const SideEncoding<S>& enc, const Params<S>& params) {
    const int k = enc.k();
    if (k < 1) throw DataError("encode_triples requires at least one triple");
    const int dp = static_cast<int>(enc.O.cols());
    Mat<S> X_in(k, 2 * dp);
    X_in << enc.O, enc.R;
    Mat<S> H = X_in * params.W1.transpose();
    H.rowwise() += params.b1.col(0).transpose();
    Mat<S> A = H.unaryExpr([](S x) { return silu(x); });
    Mat<S> Zt = A * params.W2.transpose();
    Zt.rowwise() += params.b2.col(0).transpose();
    Zt += enc.O;
    if (!Zt.allFinite()) throw DataError("encode_triples produced non-finite values");
    return Zt;
}

template <typename S>
Vec<S> attention_scores(const Mat<S>& Zt, const Vec<S>& T, const Vec<S>& V, const HyperParams& h) {
    if (Zt.rows() < 1) throw DataError("attention requires at least one triple");
    const S beta = static_cast<S>(h.beta);
    const S tau = static_cast<S>(h.tau_att);
    Vec<S> logits = (beta * (Zt * T) + (S(1) - beta) * (Zt * V)) / tau;
    if (!logits.allFinite()) throw DataError("non-finite attention logits");
    const S m = logits.maxCoeff();
    Vec<S> e = (logits.array() - m).exp();
    return e / e.sum();
}

// Indices of the min(p, k) largest components, ties resolved toward the
// lowest index, in ascending index order.
template <typename S>
std::vector<int> top_p_indices(const Vec<S>& s, int p) {
    const int k = static_cast<int>(s.size());
    std::vector<int> idx(static_cast<size_t>(k));
    std::iota(idx.begin(), idx.end(), 0);
    const int keep = std::min(p, k);
    std::partial_sort(idx.begin(), idx.begin() + keep, idx.end(),
                      [&](int a, int b) { return s[a] != s[b] ? s[a] > s[b] : a < b; });
    idx.resize(static_cast<size_t>(keep));
    std::sort(idx.begin(), idx.end());
    return idx;
}

template <typename S>
Vec<S> top_p_mask(const Vec<S>& s, int p) {
    if (p < 1) throw ConfigError("p must be >= 1");
    Vec<S> out = Vec<S>::Zero(s.size());
    for (int i : top_p_indices(s, p)) out[i] = s[i];
    return out;
}

template <typename S>
Vec<S> aggregate_triples(const Vec<S>& shat, const Mat<S>& Zt) {
    if (shat.size() != Zt.rows()) throw DataError("attention/triple shape mismatch");
    return Zt.transpose() * shat;
}

template <typename S>
Vec<S> gated_fusion(const Vec<S>& T, const Vec<S>& V, const Vec<S>& Z, const Params<S>& params) {
    const S u_T = (params.w_T_g.row(0) * T)(0) + params.b_T_g(0, 0);
    const S u_V = (params.w_V_g.row(0) * V)(0) + params.b_V_g(0, 0);
    const S g_T = sigmoid(u_T);
    const S g_V = sigmoid(u_V);
    return g_T * (params.W_T * T) + g_V * (params.W_V * V) + params.W_Z * Z;
}

// Full composition with trace. k = 0 short-circuits to Z = 0.
template <typename S>
ItemTrace<S> forward_item(const SideEncoding<S>& enc, const Params<S>& params, const HyperParams& h) {
    ItemTrace<S> t;
    const int dp = static_cast<int>(enc.T.size());
    if (enc.k() > 0) {
        const int k = enc.k();
        t.X_in.resize(k, 2 * dp);
        t.X_in << enc.O, enc.R;
        t.H = t.X_in * params.W1.transpose();
        t.H.rowwise() += params.b1.col(0).transpose();
        t.A = t.H.unaryExpr([](S x) { return silu(x); });
        t.Zt = t.A * params.W2.transpose();
        t.Zt.rowwise() += params.b2.col(0).transpose();
        t.Zt += enc.O;
        t.s = attention_scores(t.Zt, enc.T, enc.V, h);
        t.shat = top_p_mask(t.s, h.p);
        t.Z = aggregate_triples(t.shat, t.Zt);
    } else {
        t.Z = Vec<S>::Zero(dp);
    }
    t.u_T = (params.w_T_g.row(0) * enc.T)(0) + params.b_T_g(0, 0);
    t.u_V = (params.w_V_g.row(0) * enc.V)(0) + params.b_V_g(0, 0);
    t.g_T = sigmoid(t.u_T);
    t.g_V = sigmoid(t.u_V);
    t.PT = params.W_T * enc.T;
    t.PV = params.W_V * enc.V;
    t.X = t.g_T * t.PT + t.g_V * t.PV + params.W_Z * t.Z;
    return t;
}

template <typename S>
Vec<S> embed_side(const SideEncoding<S>& enc, const Params<S>& params, const HyperParams& h) {
    return forward_item(enc, params, h).X;
}

// Reverse sweep for one item: accumulates parameter gradients for upstream
// gradient dX. Base embeddings are frozen, so no input gradients exist. The
// top-p mask is a constant subgradient: gradient flows only through retained
// attention entries.
template <typename S>
void backward_item(const SideEncoding<S>& enc, const Params<S>& params, const HyperParams& h, const ItemTrace<S>& t,
                   const Vec<S>& dX, Params<S>& grads) {
    grads.W_T += t.g_T * dX * enc.T.transpose();
    grads.W_V += t.g_V * dX * enc.V.transpose();
    grads.W_Z += dX * t.Z.transpose();

    const S dg_T = dX.dot(t.PT);
    const S dg_V = dX.dot(t.PV);
    const S du_T = dg_T * t.g_T * (S(1) - t.g_T);
    const S du_V = dg_V * t.g_V * (S(1) - t.g_V);
    grads.w_T_g.row(0) += du_T * enc.T.transpose();
    grads.w_V_g.row(0) += du_V * enc.V.transpose();
    grads.b_T_g(0, 0) += du_T;
    grads.b_V_g(0, 0) += du_V;

    if (enc.k() == 0) return;

    Vec<S> dZ = params.W_Z.transpose() * dX;
    Vec<S> dshat = t.Zt * dZ;
    Mat<S> dZt = t.shat * dZ.transpose();

    // mask passes gradient only where shat kept s
    Vec<S> ds = Vec<S>::Zero(t.s.size());
    for (int i = 0; i < t.s.size(); ++i)
        if (t.shat[i] != S(0)) ds[i] = dshat[i];

    // softmax jacobian, then logits
    const S dot = t.s.dot(ds);
    Vec<S> dlogits = t.s.cwiseProduct(ds - Vec<S>::Constant(t.s.size(), dot));
    const S beta = static_cast<S>(h.beta);
    const S tau = static_cast<S>(h.tau_att);
    Vec<S> q = (beta * enc.T + (S(1) - beta) * enc.V) / tau;
    dZt += dlogits * q.transpose();

    // Zt = O + A W2^T + b2^T
    grads.W2 += dZt.transpose() * t.A;
    grads.b2.col(0) += dZt.colwise().sum().transpose();
    Mat<S> dA = dZt * params.W2;
    Mat<S> dH = dA.cwiseProduct(t.H.unaryExpr([](S x) { return silu_grad(x); }));
    grads.W1 += dH.transpose() * t.X_in;
    grads.b1.col(0) += dH.colwise().sum().transpose();
}

} // namespace kgmel
