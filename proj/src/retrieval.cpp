#include "kgmel/retrieval.hpp"

#include "kgmel/binio.hpp"
#include "kgmel/errors.hpp"
#include "kgmel/training.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <numeric>
#include <sstream>
#include <thread>

namespace kgmel {

using json = nlohmann::json;

EntityIndex EntityIndex::build(const EntityStore& store, const EmbeddingTable& table, const Params<float>& params,
                               const HyperParams& h, uint64_t build_hash) {
    if (store.size() == 0) throw DataError("cannot build an index over an empty entity store");
    std::vector<const Entity*> ordered;
    ordered.reserve(store.size());
    for (const auto& e : store.entities()) ordered.push_back(&e);
    std::sort(ordered.begin(), ordered.end(), [](const Entity* a, const Entity* b) { return a->qid < b->qid; });

    EntityIndex index;
    index.build_hash_ = build_hash;
    index.qids_.reserve(ordered.size());
    index.X_.resize(static_cast<Eigen::Index>(ordered.size()), h.d);
    for (size_t i = 0; i < ordered.size(); ++i) {
        try {
            index.X_.row(static_cast<Eigen::Index>(i)) =
                embed_side(entity_side<float>(table, *ordered[i]), params, h).transpose();
        } catch (const NotFoundError& e) {
            throw DataError("entity " + ordered[i]->qid + ": missing embedding for " + e.key());
        }
        index.qids_.push_back(ordered[i]->qid);
    }
    return index;
}

void EntityIndex::save(const std::filesystem::path& path) const {
    ByteWriter w;
    w.raw("KGIX");
    w.u32(1);
    w.u64(build_hash_);
    w.u32(static_cast<uint32_t>(X_.cols()));
    w.u64(qids_.size());
    for (size_t i = 0; i < qids_.size(); ++i) {
        w.str(qids_[i]);
        w.f32s(X_.row(static_cast<Eigen::Index>(i)).data(), static_cast<size_t>(X_.cols()));
    }
    write_file(path, w.take());
}

EntityIndex EntityIndex::load(const std::filesystem::path& path) {
    const std::string where = path.string();
    std::string blob = read_file(path);
    ByteReader r(blob);
    char magic[4];
    for (char& c : magic) c = static_cast<char>(r.u8());
    if (std::string_view(magic, 4) != "KGIX") throw DataError(where + ": not an index file");
    const uint32_t version = r.u32();
    if (version != 1) throw DataError(where + ": unsupported version " + std::to_string(version));
    EntityIndex index;
    index.build_hash_ = r.u64();
    const uint32_t d = r.u32();
    const uint64_t rows = r.u64();
    index.X_.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d));
    std::string prev;
    for (uint64_t i = 0; i < rows; ++i) {
        std::string qid = r.str();
        if (i > 0 && qid <= prev) throw DataError(where + ": qids out of order");
        r.f32s(index.X_.row(static_cast<Eigen::Index>(i)).data(), d);
        prev = qid;
        index.qids_.push_back(std::move(qid));
    }
    if (!r.at_end()) throw DataError(where + ": trailing bytes");
    return index;
}

uint64_t compose_build_hash(uint64_t checkpoint_digest, uint64_t corpus_digest, uint64_t table_digest) {
    ByteWriter w;
    w.u64(checkpoint_digest);
    w.u64(corpus_digest);
    w.u64(table_digest);
    return fnv1a64(w.bytes());
}

CandidateList retrieve_topk(const Vec<float>& Xm, const EntityIndex& index, int K) {
    if (K < 1) throw ConfigError("K must be >= 1");
    if (index.size() == 0) throw DataError("cannot retrieve from an empty index");
    if (Xm.size() != index.matrix().cols()) throw ConfigError("query dimension does not match index");

    Vec<float> scores = index.matrix() * Xm;
    const size_t keep = std::min(static_cast<size_t>(K), index.size());
    std::vector<int> idx(index.size());
    std::iota(idx.begin(), idx.end(), 0);
    // rows are qid-sorted, so lower index is the ascending-qid tie-break
    std::partial_sort(idx.begin(), idx.begin() + static_cast<ptrdiff_t>(keep), idx.end(),
                      [&](int a, int b) { return scores[a] != scores[b] ? scores[a] > scores[b] : a < b; });

    CandidateList out;
    out.ranked.reserve(keep);
    for (size_t i = 0; i < keep; ++i) out.ranked.push_back({index.qids()[static_cast<size_t>(idx[i])], scores[idx[i]]});
    return out;
}

std::map<std::string, CandidateList> retrieve_all(const MentionSet& mentions, const ProfileMap& profiles,
                                                  const EmbeddingTable& table, const Params<float>& params,
                                                  const HyperParams& h, const EntityIndex& index, int K,
                                                  int parallelism) {
    if (parallelism < 1) throw ConfigError("retrieval parallelism must be >= 1");
    const auto& items = mentions.items();
    std::vector<CandidateList> results(items.size());
    std::vector<std::string> errors(items.size());

    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (size_t i = next.fetch_add(1); i < items.size(); i = next.fetch_add(1)) {
            try {
                const Mention& m = items[i];
                auto pit = profiles.find(m.id);
                auto side = mention_side<float>(table, m, pit == profiles.end() ? nullptr : &pit->second);
                CandidateList list = retrieve_topk(embed_side(side, params, h), index, K);
                list.mention_id = m.id;
                results[i] = std::move(list);
            } catch (const Error& e) {
                errors[i] = e.what();
            }
        }
    };
    if (parallelism == 1 || items.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        const int threads = std::min<int>(parallelism, static_cast<int>(items.size()));
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    std::string failures;
    for (size_t i = 0; i < items.size(); ++i) {
        if (!errors[i].empty()) failures += (failures.empty() ? "" : "; ") + items[i].id + ": " + errors[i];
    }
    if (!failures.empty()) throw DataError("retrieval failed for mentions: " + failures);

    std::map<std::string, CandidateList> out;
    for (auto& list : results) {
        std::string id = list.mention_id;
        out.emplace(std::move(id), std::move(list));
    }
    return out;
}

void save_candidates(const std::map<std::string, CandidateList>& lists, const std::filesystem::path& path) {
    std::string out;
    for (const auto& [id, list] : lists) {
        if (id != list.mention_id) throw DataError("candidate map key does not match mention_id: " + id);
        json cands = json::array();
        for (const auto& c : list.ranked) cands.push_back({{"qid", c.qid}, {"score", static_cast<double>(c.score)}});
        json j{{"mention_id", id}, {"candidates", std::move(cands)}};
        out += j.dump();
        out += '\n';
    }
    write_file(path, out);
}

std::map<std::string, CandidateList> load_candidates(const std::filesystem::path& path) {
    std::map<std::string, CandidateList> out;
    std::istringstream in(read_file(path));
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const std::string where = path.string() + " line " + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(where + ": " + e.what());
        }
        if (!j.is_object() || !j.contains("mention_id") || !j["mention_id"].is_string() || !j.contains("candidates") ||
            !j["candidates"].is_array())
            throw DataError(where + ": expected {\"mention_id\", \"candidates\"}");
        CandidateList list;
        list.mention_id = j["mention_id"].get<std::string>();
        for (const auto& c : j["candidates"]) {
            if (!c.is_object() || !c.contains("qid") || !c["qid"].is_string() || !c.contains("score") ||
                !c["score"].is_number())
                throw DataError(where + ": each candidate needs {\"qid\", \"score\"}");
            list.ranked.push_back({c["qid"].get<std::string>(), static_cast<float>(c["score"].get<double>())});
        }
        if (!out.emplace(list.mention_id, std::move(list)).second)
            throw DataError(where + ": duplicate mention_id \"" + j["mention_id"].get<std::string>() + "\"");
    }
    return out;
}

} // namespace kgmel
