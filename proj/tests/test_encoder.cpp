#include <doctest/doctest.h>

#include <cmath>

#include "kgmel/encoder.hpp"
#include "kgmel/util.hpp"
#include "support/oracles.hpp"

using namespace kgmel;

namespace {

template <typename S>
SideEncoding<S> random_side(Rng& rng, int k, int dp) {
    SideEncoding<S> enc;
    enc.T = Vec<S>(dp);
    enc.V = Vec<S>(dp);
    for (int c = 0; c < dp; ++c) {
        enc.T[c] = static_cast<S>(rng.uniform(-1.0, 1.0));
        enc.V[c] = static_cast<S>(rng.uniform(-1.0, 1.0));
    }
    enc.R = Mat<S>(k, dp);
    enc.O = Mat<S>(k, dp);
    for (int i = 0; i < k; ++i)
        for (int c = 0; c < dp; ++c) {
            enc.R(i, c) = static_cast<S>(rng.uniform(-1.0, 1.0));
            enc.O(i, c) = static_cast<S>(rng.uniform(-1.0, 1.0));
        }
    return enc;
}

template <typename S>
Params<S> random_params(Rng& rng, const HyperParams& h) {
    Params<S> p = Params<S>::zeros(h);
    p.for_each([&](const char*, Mat<S>& t) {
        for (int r = 0; r < t.rows(); ++r)
            for (int c = 0; c < t.cols(); ++c) t(r, c) = static_cast<S>(rng.uniform(-0.8, 0.8));
    });
    return p;
}

HyperParams small_hyper(int dp, int d) {
    HyperParams h;
    h.dprime = dp;
    h.d = d;
    return h;
}

} // namespace

TEST_SUITE("encoder") {

TEST_CASE("sigmoid and silu fixed points") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(silu(0.0) == 0.0);
    CHECK(sigmoid(30.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(silu_grad(0.0) == 0.5);
}

TEST_CASE("triple encoding matches the loop oracle on 100 random instances") {
    Rng rng(101);
    for (int trial = 0; trial < 100; ++trial) {
        const int dp = 1 + static_cast<int>(rng.below(6));
        const int k = 1 + static_cast<int>(rng.below(5));
        const HyperParams h = small_hyper(dp, 4);
        const auto enc = random_side<double>(rng, k, dp);
        const auto params = random_params<double>(rng, h);
        const Mat<double> got = encode_triples(enc, params);
        const Mat<double> want = oracle::mlp_triples_ref(enc, params);
        REQUIRE(got.rows() == want.rows());
        for (int i = 0; i < got.rows(); ++i)
            for (int c = 0; c < got.cols(); ++c) CHECK(got(i, c) == doctest::Approx(want(i, c)).epsilon(1e-6));
    }
}

TEST_CASE("zero mlp reduces triple encoding to the residual identity") {
    Rng rng(102);
    const HyperParams h = small_hyper(5, 4);
    const auto enc = random_side<double>(rng, 3, 5);
    const auto params = Params<double>::zeros(h);
    const Mat<double> Zt = encode_triples(enc, params);
    CHECK((Zt.array() == enc.O.array()).all());
}

TEST_CASE("attention matches the loop oracle and sums to one") {
    Rng rng(103);
    for (int trial = 0; trial < 100; ++trial) {
        const int dp = 1 + static_cast<int>(rng.below(6));
        const int k = 1 + static_cast<int>(rng.below(6));
        HyperParams h = small_hyper(dp, 4);
        h.beta = rng.uniform(0.0, 1.0);
        h.tau_att = rng.uniform(0.05, 1.0);
        const auto enc = random_side<double>(rng, k, dp);
        Mat<double> Zt(k, dp);
        for (int i = 0; i < k; ++i)
            for (int c = 0; c < dp; ++c) Zt(i, c) = rng.uniform(-2.0, 2.0);
        const Vec<double> got = attention_scores(Zt, enc.T, enc.V, h);
        const Vec<double> want = oracle::attention_ref(Zt, enc.T, enc.V, h.beta, h.tau_att);
        CHECK(got.sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK((got.array() > 0.0).all());
        for (int i = 0; i < k; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-6));
    }
}

TEST_CASE("beta endpoints ignore the other modality") {
    Rng rng(104);
    const int dp = 4, k = 3;
    HyperParams h = small_hyper(dp, 4);
    const auto enc = random_side<double>(rng, k, dp);
    Mat<double> Zt(k, dp);
    for (int i = 0; i < k; ++i)
        for (int c = 0; c < dp; ++c) Zt(i, c) = rng.uniform(-1.0, 1.0);

    const Vec<double> ones = Vec<double>::Ones(dp);
    h.beta = 1.0;
    Vec<double> only_text = attention_scores(Zt, enc.T, enc.V, h);
    Vec<double> other_image = attention_scores(Zt, enc.T, ones, h);
    for (int i = 0; i < k; ++i) CHECK(only_text[i] == doctest::Approx(other_image[i]).epsilon(1e-14));

    h.beta = 0.0;
    Vec<double> only_image = attention_scores(Zt, enc.T, enc.V, h);
    Vec<double> other_text = attention_scores(Zt, ones, enc.V, h);
    for (int i = 0; i < k; ++i) CHECK(only_image[i] == doctest::Approx(other_text[i]).epsilon(1e-14));
}

TEST_CASE("top-p mask matches the oracle and never renormalizes") {
    Rng rng(105);
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 1 + static_cast<int>(rng.below(8));
        const int p = 1 + static_cast<int>(rng.below(8));
        Vec<double> s(k);
        for (int i = 0; i < k; ++i) s[i] = rng.uniform(0.0, 1.0);
        s /= s.sum();
        const Vec<double> got = top_p_mask(s, p);
        const Vec<double> want = oracle::top_p_mask_ref(s, p);
        CHECK((got.array() == want.array()).all());

        int kept = 0;
        for (int i = 0; i < k; ++i) {
            if (got[i] != 0.0) {
                ++kept;
                CHECK(got[i] == s[i]); // retained entries are untouched
            }
        }
        CHECK(kept == std::min(p, k));
        if (p < k) CHECK(got.sum() < 1.0);
    }
}

TEST_CASE("top-p ties resolve toward the lowest index") {
    Vec<double> s(5);
    s << 0.2, 0.2, 0.2, 0.2, 0.2;
    const Vec<double> m = top_p_mask(s, 2);
    CHECK(m[0] == 0.2);
    CHECK(m[1] == 0.2);
    CHECK(m[2] == 0.0);
    CHECK(m[3] == 0.0);
    CHECK(m[4] == 0.0);

    Vec<double> t(4);
    t << 0.1, 0.4, 0.1, 0.4;
    const Vec<double> m2 = top_p_mask(t, 3);
    CHECK(m2[0] == 0.1);
    CHECK(m2[1] == 0.4);
    CHECK(m2[2] == 0.0); // index 0 wins the 0.1 tie
    CHECK(m2[3] == 0.4);

    CHECK_THROWS_AS(top_p_mask(t, 0), ConfigError);
}

TEST_CASE("top-p agrees with the oracle on dense tie grids") {
    // All vectors over a 3-value alphabet, every p: ties abound.
    const double vals[3] = {0.1, 0.2, 0.3};
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
            for (int c = 0; c < 3; ++c)
                for (int d = 0; d < 3; ++d)
                    for (int p = 1; p <= 5; ++p) {
                        Vec<double> s(4);
                        s << vals[a], vals[b], vals[c], vals[d];
                        const Vec<double> got = top_p_mask(s, p);
                        const Vec<double> want = oracle::top_p_mask_ref(s, p);
                        CHECK((got.array() == want.array()).all());
                    }
}

TEST_CASE("aggregation matches the loop oracle") {
    Rng rng(106);
    for (int trial = 0; trial < 100; ++trial) {
        const int dp = 1 + static_cast<int>(rng.below(6));
        const int k = 1 + static_cast<int>(rng.below(6));
        Mat<double> Zt(k, dp);
        Vec<double> shat(k);
        for (int i = 0; i < k; ++i) {
            shat[i] = rng.uniform(0.0, 1.0);
            for (int c = 0; c < dp; ++c) Zt(i, c) = rng.uniform(-1.0, 1.0);
        }
        const Vec<double> got = aggregate_triples(shat, Zt);
        const Vec<double> want = oracle::aggregate_ref(Zt, shat);
        for (int c = 0; c < dp; ++c) CHECK(got[c] == doctest::Approx(want[c]).epsilon(1e-6));
    }
    Vec<double> bad(3);
    bad.setZero();
    const Mat<double> rows = Mat<double>::Zero(2, 4);
    CHECK_THROWS_AS(aggregate_triples(bad, rows), DataError);
}

TEST_CASE("gated fusion matches the loop oracle") {
    Rng rng(107);
    for (int trial = 0; trial < 100; ++trial) {
        const int dp = 1 + static_cast<int>(rng.below(5));
        const int d = 1 + static_cast<int>(rng.below(5));
        const HyperParams h = small_hyper(dp, d);
        const auto enc = random_side<double>(rng, 1, dp);
        const auto params = random_params<double>(rng, h);
        Vec<double> Z(dp);
        for (int c = 0; c < dp; ++c) Z[c] = rng.uniform(-1.0, 1.0);
        const Vec<double> got = gated_fusion(enc.T, enc.V, Z, params);
        const Vec<double> want = oracle::fuse_ref(enc, Z, params);
        for (int r = 0; r < d; ++r) CHECK(got[r] == doctest::Approx(want[r]).epsilon(1e-6));
    }
}

TEST_CASE("zero gate parameters give exactly half-open gates") {
    const HyperParams h = small_hyper(3, 2);
    auto params = Params<double>::zeros(h);
    params.W_T.setIdentity();
    Vec<double> T = Vec<double>::Ones(3);
    Vec<double> V = Vec<double>::Zero(3);
    Vec<double> Z = Vec<double>::Zero(3);
    const Vec<double> X = gated_fusion(T, V, Z, params);
    CHECK(X[0] == 0.5); // g_T = sigmoid(0) = 0.5 exactly
    CHECK(X[1] == 0.5);
}

TEST_CASE("forward item with no triples uses a zero aggregate") {
    Rng rng(108);
    const HyperParams h = small_hyper(4, 3);
    auto enc = random_side<double>(rng, 1, 4);
    enc.R = Mat<double>(0, 4);
    enc.O = Mat<double>(0, 4);
    const auto params = random_params<double>(rng, h);
    const ItemTrace<double> t = forward_item(enc, params, h);
    CHECK(t.Z.size() == 4);
    CHECK((t.Z.array() == 0.0).all());
    const Vec<double> zero = Vec<double>::Zero(4);
    const Vec<double> want = oracle::fuse_ref(enc, zero, params);
    for (int r = 0; r < 3; ++r) CHECK(t.X[r] == doctest::Approx(want[r]).epsilon(1e-9));
}

TEST_CASE("forward item composes the staged primitives") {
    Rng rng(109);
    for (int trial = 0; trial < 20; ++trial) {
        const int dp = 2 + static_cast<int>(rng.below(4));
        const int d = 2 + static_cast<int>(rng.below(4));
        const int k = 1 + static_cast<int>(rng.below(5));
        HyperParams h = small_hyper(dp, d);
        h.p = 1 + static_cast<int>(rng.below(4));
        const auto enc = random_side<double>(rng, k, dp);
        const auto params = random_params<double>(rng, h);

        const Mat<double> Zt = encode_triples(enc, params);
        const Vec<double> s = attention_scores(Zt, enc.T, enc.V, h);
        const Vec<double> shat = top_p_mask(s, h.p);
        const Vec<double> Z = aggregate_triples(shat, Zt);
        const Vec<double> want = gated_fusion(enc.T, enc.V, Z, params);

        const Vec<double> got = embed_side(enc, params, h);
        for (int r = 0; r < d; ++r) CHECK(got[r] == doctest::Approx(want[r]).epsilon(1e-12));
    }
}

TEST_CASE("seeded init is reproducible and shared across scalar types") {
    const HyperParams h = small_hyper(6, 5);
    const auto a = Params<float>::init(42, h);
    const auto b = Params<float>::init(42, h);
    CHECK(a == b);
    const auto c = Params<float>::init(43, h);
    CHECK_FALSE(a == c);

    const auto d = Params<double>::init(42, h);
    const auto dcast = d.cast<float>();
    CHECK(a == dcast);

    // gates start closed at the midpoint
    CHECK((a.w_T_g.array() == 0.0f).all());
    CHECK((a.b_T_g.array() == 0.0f).all());
    CHECK_NOTHROW(a.check_shapes(h));
}

TEST_CASE("shape and finiteness guards") {
    const HyperParams h = small_hyper(4, 3);
    auto p = Params<double>::init(1, h);
    CHECK_NOTHROW(p.check_finite("test"));
    p.W_T(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(p.check_finite("test"), DivergenceError);

    auto q = Params<double>::init(1, h);
    q.W2 = Mat<double>::Zero(3, 3);
    CHECK_THROWS_AS(q.check_shapes(h), ConfigError);

    HyperParams bad = h;
    bad.beta = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = h;
    bad.tau_att = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = h;
    bad.p = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

} // TEST_SUITE
