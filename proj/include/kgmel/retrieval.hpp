#pragma once

// Stage 2 candidate retrieval: a dense index of fused entity embeddings and
// exact top-K dot-product search over it. No approximation; the corpus
// scales involved are tractable with blocked brute force.

#include "kgmel/corpus.hpp"
#include "kgmel/embed.hpp"
#include "kgmel/encoder.hpp"
#include "kgmel/tripgen.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace kgmel {

struct Candidate {
    std::string qid;
    float score;

    bool operator==(const Candidate&) const = default;
};

struct CandidateList {
    std::string mention_id;
    std::vector<Candidate> ranked; // descending score, ties by ascending qid

    bool operator==(const CandidateList&) const = default;
};

// Immutable snapshot of every entity's fused embedding. Rows are sorted by
// qid, which also serves as the retrieval tie-break. build_hash identifies
// the (checkpoint, corpus, table) combination the index was built from.
class EntityIndex {
public:
    static EntityIndex build(const EntityStore& store, const EmbeddingTable& table, const Params<float>& params,
                             const HyperParams& h, uint64_t build_hash);

    size_t size() const { return qids_.size(); }
    int dim() const { return static_cast<int>(X_.cols()); }
    uint64_t build_hash() const { return build_hash_; }
    const std::vector<std::string>& qids() const { return qids_; }
    const Mat<float>& matrix() const { return X_; }

    // "KGIX" v1: u64 build hash, u32 d, u64 rows, per row qid + d floats.
    void save(const std::filesystem::path& path) const;
    static EntityIndex load(const std::filesystem::path& path);

    bool operator==(const EntityIndex& o) const {
        return qids_ == o.qids_ && build_hash_ == o.build_hash_ && X_.rows() == o.X_.rows() &&
               X_.cols() == o.X_.cols() && (X_.array() == o.X_.array()).all();
    }

private:
    std::vector<std::string> qids_;
    Mat<float> X_;
    uint64_t build_hash_ = 0;
};

uint64_t compose_build_hash(uint64_t checkpoint_digest, uint64_t corpus_digest, uint64_t table_digest);

// The min(K, |index|) highest dot products against Xm, descending, ties by
// ascending qid. mention_id is left empty for the caller.
CandidateList retrieve_topk(const Vec<float>& Xm, const EntityIndex& index, int K);

// Per-mention retrieval over the whole set; identical to calling
// retrieve_topk one mention at a time regardless of parallelism.
std::map<std::string, CandidateList> retrieve_all(const MentionSet& mentions, const ProfileMap& profiles,
                                                  const EmbeddingTable& table, const Params<float>& params,
                                                  const HyperParams& h, const EntityIndex& index, int K,
                                                  int parallelism = 1);

// Candidate dump, one line per mention sorted by mention_id:
// {"mention_id", "candidates": [{"qid", "score"}, ...]}
void save_candidates(const std::map<std::string, CandidateList>& lists, const std::filesystem::path& path);
std::map<std::string, CandidateList> load_candidates(const std::filesystem::path& path);

} // namespace kgmel
