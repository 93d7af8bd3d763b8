#include "kgmel/encoder.hpp"

#include <Eigen/QR>

namespace kgmel::detail {

namespace {

Eigen::MatrixXd fill_normal(Rng& rng, int rows, int cols, double scale) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.normal() * scale;
    return m;
}

// Leading r x c block of a Haar-ish orthogonal matrix: QR of a square
// Gaussian with the conventional sign fix for a deterministic Q.
Eigen::MatrixXd orthogonal(Rng& rng, int rows, int cols) {
    const int n = std::max(rows, cols);
    Eigen::MatrixXd g = fill_normal(rng, n, n, 1.0);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd Q = qr.householderQ();
    Eigen::MatrixXd R = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < n; ++j)
        if (R(j, j) < 0.0) Q.col(j) *= -1.0;
    return Q.topLeftCorner(rows, cols);
}

} // namespace

Params<double> init_params_double(uint64_t seed, const HyperParams& h) {
    h.validate();
    Rng rng = Rng::keyed(seed, 0x696e6974u); // distinct init stream
    const int dp = h.dprime, d = h.d;
    const double proj_scale = 1.0 / std::sqrt(static_cast<double>(dp));

    Params<double> p = Params<double>::zeros(h);
    p.W1 = fill_normal(rng, dp, 2 * dp, std::sqrt(2.0 / (2.0 * dp)));
    p.W2 = fill_normal(rng, dp, dp, std::sqrt(2.0 / dp));
    p.W_T = orthogonal(rng, d, dp) * proj_scale;
    p.W_V = orthogonal(rng, d, dp) * proj_scale;
    p.W_Z = orthogonal(rng, d, dp) * proj_scale;
    // biases and gates stay zero: g_T = g_V = 0.5 at step 0
    return p;
}

} // namespace kgmel::detail
