#include "kgmel/training.hpp"

#include "kgmel/binio.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <unordered_map>

namespace kgmel {

using json = nlohmann::json;

double grad_check(const std::vector<SideEncoding<double>>& m_sides, const std::vector<SideEncoding<double>>& e_sides,
                  const Params<double>& params, const HyperParams& h, double epsilon, const char* corrupt_tensor) {
    Params<double> grads = Params<double>::zeros(h);
    loss_and_grads(m_sides, e_sides, params, h, &grads);
    if (corrupt_tensor) {
        bool found = false;
        grads.for_each([&](const char* name, Mat<double>& t) {
            if (std::string_view(name) == corrupt_tensor) {
                t *= 2.0;
                found = true;
            }
        });
        if (!found) throw ConfigError(std::string("unknown tensor to corrupt: ") + corrupt_tensor);
    }

    Params<double> work = params;
    std::vector<Mat<double>*> wt;
    std::vector<const Mat<double>*> gt;
    work.for_each([&](const char*, Mat<double>& t) { wt.push_back(&t); });
    grads.for_each([&](const char*, const Mat<double>& t) { gt.push_back(&t); });

    auto loss_at = [&]() { return static_cast<double>(loss_and_grads(m_sides, e_sides, work, h).total); };

    double max_rel = 0.0;
    for (size_t n = 0; n < wt.size(); ++n) {
        Mat<double>& t = *wt[n];
        for (Eigen::Index i = 0; i < t.rows(); ++i) {
            for (Eigen::Index j = 0; j < t.cols(); ++j) {
                const double orig = t(i, j);
                t(i, j) = orig + epsilon;
                const double lp = loss_at();
                t(i, j) = orig - epsilon;
                const double lm = loss_at();
                t(i, j) = orig;
                const double numeric = (lp - lm) / (2.0 * epsilon);
                const double analytic = (*gt[n])(i, j);
                const double rel = std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
                max_rel = std::max(max_rel, rel);
            }
        }
    }
    return max_rel;
}

namespace {

struct TensorEntry {
    std::vector<uint32_t> dims;
    std::vector<float> data;
};

void add_param_tensors(std::map<std::string, TensorEntry>& tensors, const std::string& prefix,
                       const Params<float>& p) {
    p.for_each([&](const char* name, const Mat<float>& t) {
        TensorEntry e;
        e.dims = {static_cast<uint32_t>(t.rows()), static_cast<uint32_t>(t.cols())};
        e.data.assign(t.data(), t.data() + t.size());
        tensors[prefix + name] = std::move(e);
    });
}

std::string serialize_checkpoint(const Checkpoint& ck) {
    std::map<std::string, TensorEntry> tensors;
    auto scalar = [&](const std::string& name, float v) { tensors[name] = TensorEntry{{}, {v}}; };
    const HyperParams& h = ck.hyper;
    scalar("hyper.beta", static_cast<float>(h.beta));
    scalar("hyper.tau_att", static_cast<float>(h.tau_att));
    scalar("hyper.tau_cl", static_cast<float>(h.tau_cl));
    scalar("hyper.lambda_mm", static_cast<float>(h.lambda_mm));
    scalar("hyper.lambda_ee", static_cast<float>(h.lambda_ee));
    scalar("hyper.p", static_cast<float>(h.p));
    scalar("hyper.topk", static_cast<float>(h.topk));
    scalar("hyper.n", static_cast<float>(h.n));
    scalar("hyper.dprime", static_cast<float>(h.dprime));
    scalar("hyper.d", static_cast<float>(h.d));
    add_param_tensors(tensors, "param.", ck.params);
    add_param_tensors(tensors, "opt.m.", ck.opt_m);
    add_param_tensors(tensors, "opt.v.", ck.opt_v);

    ByteWriter w;
    w.raw("KGCK");
    w.u32(1);
    w.u64(ck.config_hash);
    w.u64(ck.step);
    w.u32(ck.epoch);
    w.u32(static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, e] : tensors) {
        w.str(name);
        w.u32(static_cast<uint32_t>(e.dims.size()));
        for (uint32_t d : e.dims) w.u32(d);
        w.f32s(e.data.data(), e.data.size());
    }
    return w.take();
}

float take_scalar(std::map<std::string, TensorEntry>& tensors, const std::string& name, const std::string& where) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError(where + ": missing tensor \"" + name + "\"");
    if (!it->second.dims.empty() || it->second.data.size() != 1)
        throw DataError(where + ": tensor \"" + name + "\" is not a scalar");
    float v = it->second.data[0];
    tensors.erase(it);
    return v;
}

void take_params(std::map<std::string, TensorEntry>& tensors, const std::string& prefix, Params<float>& p,
                 const std::string& where) {
    p.for_each([&](const char* name, Mat<float>& t) {
        const std::string full = prefix + name;
        auto it = tensors.find(full);
        if (it == tensors.end()) throw DataError(where + ": missing tensor \"" + full + "\"");
        const auto& e = it->second;
        if (e.dims.size() != 2) throw DataError(where + ": tensor \"" + full + "\" must have rank 2");
        const auto rows = static_cast<Eigen::Index>(e.dims[0]), cols = static_cast<Eigen::Index>(e.dims[1]);
        if (static_cast<size_t>(rows) * static_cast<size_t>(cols) != e.data.size())
            throw DataError(where + ": tensor \"" + full + "\" size mismatch");
        t = Eigen::Map<const Mat<float>>(e.data.data(), rows, cols);
        tensors.erase(it);
    });
}

} // namespace

void Checkpoint::save(const std::filesystem::path& path) const { write_file(path, serialize_checkpoint(*this)); }

uint64_t Checkpoint::digest() const { return fnv1a64(serialize_checkpoint(*this)); }

std::vector<float> Checkpoint::hyper_bits() const {
    return {static_cast<float>(hyper.beta),      static_cast<float>(hyper.tau_att),
            static_cast<float>(hyper.tau_cl),    static_cast<float>(hyper.lambda_mm),
            static_cast<float>(hyper.lambda_ee), static_cast<float>(hyper.p),
            static_cast<float>(hyper.topk),      static_cast<float>(hyper.n),
            static_cast<float>(hyper.dprime),    static_cast<float>(hyper.d)};
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    const std::string where = path.string();
    std::string blob = read_file(path);
    ByteReader r(blob);
    char magic[4];
    for (char& c : magic) c = static_cast<char>(r.u8());
    if (std::string_view(magic, 4) != "KGCK") throw DataError(where + ": not a checkpoint file");
    const uint32_t version = r.u32();
    if (version != 1) throw DataError(where + ": unsupported version " + std::to_string(version));

    Checkpoint ck;
    ck.config_hash = r.u64();
    ck.step = r.u64();
    ck.epoch = r.u32();
    const uint32_t count = r.u32();
    std::map<std::string, TensorEntry> tensors;
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        TensorEntry e;
        const uint32_t rank = r.u32();
        size_t total = 1;
        for (uint32_t k = 0; k < rank; ++k) {
            e.dims.push_back(r.u32());
            total *= e.dims.back();
        }
        e.data.resize(total);
        r.f32s(e.data.data(), total);
        if (!tensors.emplace(std::move(name), std::move(e)).second)
            throw DataError(where + ": duplicate tensor name");
    }
    if (!r.at_end()) throw DataError(where + ": trailing bytes");

    HyperParams h;
    h.beta = take_scalar(tensors, "hyper.beta", where);
    h.tau_att = take_scalar(tensors, "hyper.tau_att", where);
    h.tau_cl = take_scalar(tensors, "hyper.tau_cl", where);
    h.lambda_mm = take_scalar(tensors, "hyper.lambda_mm", where);
    h.lambda_ee = take_scalar(tensors, "hyper.lambda_ee", where);
    h.p = static_cast<int>(std::lround(take_scalar(tensors, "hyper.p", where)));
    h.topk = static_cast<int>(std::lround(take_scalar(tensors, "hyper.topk", where)));
    h.n = static_cast<int>(std::lround(take_scalar(tensors, "hyper.n", where)));
    h.dprime = static_cast<int>(std::lround(take_scalar(tensors, "hyper.dprime", where)));
    h.d = static_cast<int>(std::lround(take_scalar(tensors, "hyper.d", where)));
    h.validate();
    ck.hyper = h;

    ck.params = Params<float>::zeros(h);
    ck.opt_m = Params<float>::zeros(h);
    ck.opt_v = Params<float>::zeros(h);
    take_params(tensors, "param.", ck.params, where);
    take_params(tensors, "opt.m.", ck.opt_m, where);
    take_params(tensors, "opt.v.", ck.opt_v, where);
    if (!tensors.empty()) throw DataError(where + ": unknown tensor \"" + tensors.begin()->first + "\"");
    ck.params.check_shapes(h);
    return ck;
}

Checkpoint train(const EntityStore& store, const MentionSet& mentions, const ProfileMap& profiles,
                 const EmbeddingTable& table, const HyperParams& h, const TrainConfig& cfg, uint64_t config_hash,
                 const Checkpoint* resume) {
    h.validate();
    cfg.validate();
    if (table.dim() != h.dprime) throw ConfigError("embedding table dim does not match dprime");

    struct Item {
        const Mention* mention;
        size_t entity_slot;
    };
    std::vector<Item> items;
    std::vector<SideEncoding<float>> entity_sides;
    std::unordered_map<std::string, size_t> entity_slot_by_qid;
    std::vector<SideEncoding<float>> mention_sides;

    for (const auto& m : mentions.items()) {
        if (!m.gold_qid) continue;
        const Entity* e = store.find(*m.gold_qid);
        if (!e) throw DataError("gold entity not in store: " + *m.gold_qid);
        auto [it, inserted] = entity_slot_by_qid.emplace(e->qid, entity_sides.size());
        if (inserted) entity_sides.push_back(entity_side<float>(table, *e));
        auto pit = profiles.find(m.id);
        mention_sides.push_back(mention_side<float>(table, m, pit == profiles.end() ? nullptr : &pit->second));
        items.push_back({&m, it->second});
    }
    if (items.size() < 2) throw DataError("training needs at least 2 mentions with gold entities");

    Checkpoint ck;
    if (resume) {
        if (resume->config_hash != config_hash) throw ConfigError("resume checkpoint was built from a different config");
        ck = *resume;
    } else {
        ck.params = Params<float>::init(cfg.seed, h);
        ck.hyper = h;
        ck.config_hash = config_hash;
        ck.opt_m = Params<float>::zeros(h);
        ck.opt_v = Params<float>::zeros(h);
    }

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        if (cfg.log_path.has_parent_path()) std::filesystem::create_directories(cfg.log_path.parent_path());
        log.open(cfg.log_path, resume ? std::ios::app : std::ios::trunc);
        if (!log) throw DataError("cannot open training log " + cfg.log_path.string());
    }

    std::vector<Mat<float>*> theta;
    std::vector<Mat<float>*> mom;
    std::vector<Mat<float>*> vel;
    ck.params.for_each([&](const char*, Mat<float>& t) { theta.push_back(&t); });
    ck.opt_m.for_each([&](const char*, Mat<float>& t) { mom.push_back(&t); });
    ck.opt_v.for_each([&](const char*, Mat<float>& t) { vel.push_back(&t); });

    constexpr float kBeta1 = 0.9f, kBeta2 = 0.999f, kAdamEps = 1e-8f;
    const auto lr = static_cast<float>(cfg.lr);
    const auto wd = static_cast<float>(cfg.weight_decay);

    Checkpoint last_good = ck;
    try {
        for (uint32_t epoch = ck.epoch + 1; epoch <= static_cast<uint32_t>(cfg.epochs); ++epoch) {
            Rng rng = Rng::keyed(cfg.seed, epoch);
            std::vector<size_t> order(items.size());
            std::iota(order.begin(), order.end(), size_t{0});
            rng.shuffle(order);

            std::vector<std::pair<size_t, size_t>> batches;
            for (size_t b = 0; b < order.size(); b += static_cast<size_t>(cfg.batch_size))
                batches.emplace_back(b, std::min(order.size(), b + static_cast<size_t>(cfg.batch_size)));
            // a trailing singleton cannot form a contrastive batch; fold it
            // into the previous one
            if (batches.size() > 1 && batches.back().second - batches.back().first < 2) {
                batches[batches.size() - 2].second = batches.back().second;
                batches.pop_back();
            }

            LossParts<double> epoch_sum{};
            for (auto [lo, hi] : batches) {
                std::vector<const SideEncoding<float>*> mb, eb;
                mb.reserve(hi - lo);
                eb.reserve(hi - lo);
                for (size_t i = lo; i < hi; ++i) {
                    mb.push_back(&mention_sides[order[i]]);
                    eb.push_back(&entity_sides[items[order[i]].entity_slot]);
                }
                Params<float> grads = Params<float>::zeros(h);
                LossParts<float> parts = loss_and_grads(mb, eb, ck.params, h, &grads);
                if (!std::isfinite(parts.total)) throw DivergenceError("non-finite training loss");

                ck.step += 1;
                const float bc1 = 1.0f - std::pow(kBeta1, static_cast<float>(ck.step));
                const float bc2 = 1.0f - std::pow(kBeta2, static_cast<float>(ck.step));
                std::vector<Mat<float>*> g;
                grads.for_each([&](const char*, Mat<float>& t) { g.push_back(&t); });
                for (size_t n = 0; n < theta.size(); ++n) {
                    Mat<float>& gm = *g[n];
                    Mat<float>& m = *mom[n];
                    Mat<float>& v = *vel[n];
                    m = kBeta1 * m + (1.0f - kBeta1) * gm;
                    v = kBeta2 * v + (1.0f - kBeta2) * gm.cwiseProduct(gm);
                    Mat<float> mhat = m / bc1;
                    Mat<float> vhat = v / bc2;
                    *theta[n] -= lr * (mhat.array() / (vhat.array().sqrt() + kAdamEps) + wd * theta[n]->array()).matrix();
                }

                epoch_sum.total += parts.total;
                epoch_sum.me += parts.me;
                epoch_sum.mm += parts.mm;
                epoch_sum.ee += parts.ee;
            }

            ck.params.check_finite("after epoch update");
            ck.epoch = epoch;
            last_good = ck;

            if (log) {
                const double denom = static_cast<double>(items.size());
                json line{{"epoch", epoch},
                          {"step", ck.step},
                          {"loss", epoch_sum.total / denom},
                          {"loss_me", epoch_sum.me / denom},
                          {"loss_mm", epoch_sum.mm / denom},
                          {"loss_ee", epoch_sum.ee / denom}};
                log << line.dump() << '\n';
                log.flush();
            }
            if (!cfg.checkpoint_path.empty() &&
                ((cfg.checkpoint_every > 0 && epoch % static_cast<uint32_t>(cfg.checkpoint_every) == 0) ||
                 epoch == static_cast<uint32_t>(cfg.epochs)))
                ck.save(cfg.checkpoint_path);
        }
    } catch (const DivergenceError&) {
        if (!cfg.checkpoint_path.empty()) last_good.save(cfg.checkpoint_path);
        throw;
    }
    return ck;
}

std::pair<std::vector<SideEncoding<double>>, std::vector<SideEncoding<double>>>
random_grad_fixture(uint64_t seed, int pairs, int max_triples, int dprime) {
    if (pairs < 2) throw ConfigError("grad fixture needs at least 2 pairs");
    Rng rng = Rng::keyed(seed, 0x67666978u);
    const auto fill_vec = [&](Vec<double>& v) {
        v.resize(dprime);
        for (int i = 0; i < dprime; ++i) v[i] = rng.uniform(-1.0, 1.0);
    };
    const auto fill_mat = [&](Mat<double>& m, int rows) {
        m.resize(rows, dprime);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < dprime; ++c) m(r, c) = rng.uniform(-1.0, 1.0);
    };
    const auto make_sides = [&](int count) {
        std::vector<SideEncoding<double>> sides(count);
        for (int i = 0; i < count; ++i) {
            fill_vec(sides[i].T);
            fill_vec(sides[i].V);
            // first item always carries triples so the MLP path is exercised
            const int k = i == 0 ? std::max(1, max_triples) : static_cast<int>(rng.below(max_triples + 1));
            fill_mat(sides[i].R, k);
            fill_mat(sides[i].O, k);
        }
        return sides;
    };
    auto mentions = make_sides(pairs);
    auto entities = make_sides(pairs);
    return {std::move(mentions), std::move(entities)};
}

} // namespace kgmel
