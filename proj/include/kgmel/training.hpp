#pragma once

// Stage 2 learning: contrastive losses over fused embeddings, analytic
// gradients for every parameter via reverse-mode accumulation, a
// finite-difference harness, the AdamW loop, and checkpointing.
//
// Batch of B mentions with gold entities, fused to Xm, Xe (B x d):
//   L_ME = sum_i [ -sim(Xm_i, Xe_i)/tau + log sum_j exp(sim(Xm_i, Xe_j)/tau) ]
//   L_MM = same form on (Xm, Xm); numerator is the literal self-similarity
//   L_EE = same form on (Xe, Xe)
//   L    = L_ME + lambda_mm L_MM + lambda_ee L_EE       (sum reduction)
// Negatives are in-batch: the other rows of the batch.

#include "kgmel/corpus.hpp"
#include "kgmel/embed.hpp"
#include "kgmel/encoder.hpp"
#include "kgmel/tripgen.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace kgmel {

template <typename S>
struct LossParts {
    S total{}, me{}, mm{}, ee{};
};

namespace detail {

template <typename S>
Vec<S> row_logsumexp(const Mat<S>& M) {
    Vec<S> out(M.rows());
    for (int i = 0; i < M.rows(); ++i) {
        const S mx = M.row(i).maxCoeff();
        out[i] = mx + std::log((M.row(i).array() - mx).exp().sum());
    }
    return out;
}

template <typename S>
Mat<S> row_softmax(const Mat<S>& M) {
    Mat<S> P(M.rows(), M.cols());
    for (int i = 0; i < M.rows(); ++i) {
        const S mx = M.row(i).maxCoeff();
        Eigen::Array<S, 1, Eigen::Dynamic> e = (M.row(i).array() - mx).exp();
        P.row(i) = e / e.sum();
    }
    return P;
}

} // namespace detail

// Mention-entity InfoNCE with in-batch negatives, summed over the batch.
template <typename S>
S loss_me(const Mat<S>& Xm, const Mat<S>& Xe, double tau_cl) {
    if (Xm.rows() < 2 || Xm.rows() != Xe.rows()) throw DataError("contrastive batch needs matched rows, B >= 2");
    Mat<S> sims = (Xm * Xe.transpose()) / static_cast<S>(tau_cl);
    if (!sims.allFinite()) throw DivergenceError("non-finite similarities in loss_me");
    const Vec<S> lse = detail::row_logsumexp(sims);
    return (lse - sims.diagonal()).sum();
}

// Self-contrastive uniformity term; the numerator is sim(x_i, x_i) itself.
template <typename S>
S loss_mm(const Mat<S>& X, double tau_cl) {
    if (X.rows() < 2) throw DataError("contrastive batch needs B >= 2");
    Mat<S> sims = (X * X.transpose()) / static_cast<S>(tau_cl);
    if (!sims.allFinite()) throw DivergenceError("non-finite similarities in loss_mm");
    const Vec<S> lse = detail::row_logsumexp(sims);
    return (lse - sims.diagonal()).sum();
}

// All three losses plus, when requested, gradients w.r.t. the fused rows.
template <typename S>
LossParts<S> contrastive_losses(const Mat<S>& Xm, const Mat<S>& Xe, const HyperParams& h, Mat<S>* dXm = nullptr,
                                Mat<S>* dXe = nullptr) {
    const S tau = static_cast<S>(h.tau_cl);
    const S lmm = static_cast<S>(h.lambda_mm);
    const S lee = static_cast<S>(h.lambda_ee);
    LossParts<S> parts;
    parts.me = loss_me(Xm, Xe, h.tau_cl);
    parts.mm = loss_mm(Xm, h.tau_cl);
    parts.ee = loss_mm(Xe, h.tau_cl);
    parts.total = parts.me + lmm * parts.mm + lee * parts.ee;

    if (!dXm && !dXe) return parts;
    const int B = static_cast<int>(Xm.rows());
    Mat<S> I = Mat<S>::Identity(B, B);

    Mat<S> dm = Mat<S>::Zero(B, Xm.cols());
    Mat<S> de = Mat<S>::Zero(B, Xe.cols());

    {
        Mat<S> P = detail::row_softmax(Mat<S>((Xm * Xe.transpose()) / tau));
        Mat<S> dS = P - I;
        dm += dS * Xe / tau;
        de += dS.transpose() * Xm / tau;
    }
    {
        Mat<S> P = detail::row_softmax(Mat<S>((Xm * Xm.transpose()) / tau));
        Mat<S> dS = (P - I) * lmm;
        dm += (dS + dS.transpose()) * Xm / tau;
    }
    {
        Mat<S> P = detail::row_softmax(Mat<S>((Xe * Xe.transpose()) / tau));
        Mat<S> dS = (P - I) * lee;
        de += (dS + dS.transpose()) * Xe / tau;
    }
    if (dXm) *dXm = std::move(dm);
    if (dXe) *dXe = std::move(de);
    return parts;
}

// Resolves one side's frozen embeddings out of the table. Relations feed R,
// tails feed O; the head never enters. Missing images use the zero row.
template <typename S>
SideEncoding<S> make_side(const EmbeddingTable& table, const std::string& text,
                          const std::optional<std::string>& image_ref, const std::vector<Triple>& triples) {
    SideEncoding<S> enc;
    const int dp = table.dim();
    auto to_vec = [&](const std::vector<float>& v) {
        Vec<S> out(dp);
        for (int i = 0; i < dp; ++i) out[i] = static_cast<S>(v[static_cast<size_t>(i)]);
        return out;
    };
    enc.T = to_vec(table.at(text_key(text)));
    enc.V = to_vec(table.at(image_ref ? image_key(*image_ref) : kNullImageKey));
    const int k = static_cast<int>(triples.size());
    enc.R.resize(k, dp);
    enc.O.resize(k, dp);
    for (int i = 0; i < k; ++i) {
        enc.R.row(i) = to_vec(table.at(text_key(triples[static_cast<size_t>(i)].relation))).transpose();
        enc.O.row(i) = to_vec(table.at(text_key(triples[static_cast<size_t>(i)].tail))).transpose();
    }
    return enc;
}

template <typename S>
SideEncoding<S> entity_side(const EmbeddingTable& table, const Entity& entity) {
    return make_side<S>(table, entity_text(entity), entity.image_ref, entity.triples);
}

template <typename S>
SideEncoding<S> mention_side(const EmbeddingTable& table, const Mention& mention, const MentionProfile* profile) {
    static const std::vector<Triple> kNone;
    return make_side<S>(table, enhanced_mention_text(mention, profile), mention.image_ref,
                        profile ? profile->triples : kNone);
}

// Full batch loss plus parameter gradients (accumulated into *grads when
// non-null). m_sides[i] pairs with e_sides[i] as its gold entity.
template <typename S>
LossParts<S> loss_and_grads(const std::vector<const SideEncoding<S>*>& m_sides,
                            const std::vector<const SideEncoding<S>*>& e_sides, const Params<S>& params,
                            const HyperParams& h, Params<S>* grads = nullptr) {
    if (m_sides.size() != e_sides.size() || m_sides.size() < 2)
        throw DataError("training batch needs matched mention/entity sides, B >= 2");
    const int B = static_cast<int>(m_sides.size());

    std::vector<ItemTrace<S>> m_traces(m_sides.size()), e_traces(e_sides.size());
    Mat<S> Xm(B, h.d), Xe(B, h.d);
    for (int i = 0; i < B; ++i) {
        const size_t u = static_cast<size_t>(i);
        m_traces[u] = forward_item(*m_sides[u], params, h);
        e_traces[u] = forward_item(*e_sides[u], params, h);
        Xm.row(i) = m_traces[u].X.transpose();
        Xe.row(i) = e_traces[u].X.transpose();
    }

    if (!grads) return contrastive_losses<S>(Xm, Xe, h);

    Mat<S> dXm, dXe;
    LossParts<S> parts = contrastive_losses<S>(Xm, Xe, h, &dXm, &dXe);
    for (int i = 0; i < B; ++i) {
        const size_t u = static_cast<size_t>(i);
        backward_item(*m_sides[u], params, h, m_traces[u], Vec<S>(dXm.row(i).transpose()), *grads);
        backward_item(*e_sides[u], params, h, e_traces[u], Vec<S>(dXe.row(i).transpose()), *grads);
    }
    return parts;
}

template <typename S>
LossParts<S> loss_and_grads(const std::vector<SideEncoding<S>>& m_sides, const std::vector<SideEncoding<S>>& e_sides,
                            const Params<S>& params, const HyperParams& h, Params<S>* grads = nullptr) {
    std::vector<const SideEncoding<S>*> mp, ep;
    for (const auto& s : m_sides) mp.push_back(&s);
    for (const auto& s : e_sides) ep.push_back(&s);
    return loss_and_grads(mp, ep, params, h, grads);
}

// Central-difference verification of the analytic gradients. Returns the
// maximum relative error over every scalar parameter:
//   |a - n| / max(1e-8, |a| + |n|)
// corrupt_tensor, when set, doubles that tensor's analytic gradient first (a
// sensitivity canary for the check itself).
double grad_check(const std::vector<SideEncoding<double>>& m_sides, const std::vector<SideEncoding<double>>& e_sides,
                  const Params<double>& params, const HyperParams& h, double epsilon,
                  const char* corrupt_tensor = nullptr);

// Synthetic mention/entity batch for gradient verification: `pairs` items per
// side, dprime-dimensional components uniform in [-1, 1], triple counts in
// [0, max_triples] with at least one per batch.
std::pair<std::vector<SideEncoding<double>>, std::vector<SideEncoding<double>>>
random_grad_fixture(uint64_t seed, int pairs, int max_triples, int dprime);

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    int epochs = 50;
    int batch_size = 128;
    uint64_t seed = 0;
    int checkpoint_every = 0; // epochs between periodic saves; 0 = final only
    std::filesystem::path checkpoint_path; // empty = no saving
    std::filesystem::path log_path;        // empty = no log

    void validate() const {
        if (lr < 0.0) throw ConfigError("lr must be non-negative");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
        if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    }
};

// Trained model state. load(save(c)) is bit-identical; optimizer moments ride
// along so a resumed run follows the uninterrupted trajectory exactly.
struct Checkpoint {
    Params<float> params;
    HyperParams hyper;
    uint64_t config_hash = 0;
    uint64_t step = 0;  // optimizer updates applied
    uint32_t epoch = 0; // completed epochs
    Params<float> opt_m, opt_v;

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

    uint64_t digest() const;

    bool operator==(const Checkpoint& o) const {
        return params == o.params && config_hash == o.config_hash && step == o.step && epoch == o.epoch &&
               opt_m == o.opt_m && opt_v == o.opt_v && hyper_bits() == o.hyper_bits();
    }

    std::vector<float> hyper_bits() const;
};

// AdamW over shuffled mini-batches. Mentions without a gold id are skipped;
// at least 2 labeled mentions are required. Seeded shuffles are keyed per
// epoch, so resuming from an epoch checkpoint replays the same order. A
// non-finite loss aborts with DivergenceError after writing the last good
// checkpoint (when a path is configured).
Checkpoint train(const EntityStore& store, const MentionSet& mentions, const ProfileMap& profiles,
                 const EmbeddingTable& table, const HyperParams& h, const TrainConfig& cfg, uint64_t config_hash = 0,
                 const Checkpoint* resume = nullptr);

} // namespace kgmel
