#pragma once

// Exact evaluation: HITS@k and MRR over gold ranks, accumulated as rationals
// so reported numbers never depend on summation order, plus stage-to-stage
// comparison.
//
//   HITS@k = (1/N) sum_i I(rank(i) <= k)
//   MRR    = (1/N) sum_i 1/rank(i)
// A gold entity absent from the ranking contributes 0 to both.

#include "kgmel/retrieval.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace kgmel {

struct RankRecord {
    std::string mention_id;
    std::string gold_qid;
    std::optional<uint64_t> rank; // 1-based; absent = gold not in the ranking

    bool operator==(const RankRecord&) const = default;
};

// 1-based position of gold in the ranked list, or absent.
std::optional<uint64_t> rank_of_gold(const CandidateList& candidates, const std::string& gold_qid);

// Rank records for every mention that has both a gold id and a candidate
// list; mentions without gold are skipped.
std::vector<RankRecord> rank_records(const MentionSet& mentions, const std::map<std::string, CandidateList>& lists);

struct EvalReport {
    std::map<int, double> hits; // k -> value, rounded to 4 decimals
    double mrr = 0.0;           // rounded to 4 decimals
    uint64_t n = 0;
    uint64_t absent = 0;

    bool operator==(const EvalReport&) const = default;
};

EvalReport compute_report(const std::vector<RankRecord>& records, const std::vector<int>& ks = {1, 3, 5});

void save_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport load_report(const std::filesystem::path& path);

struct StageDelta {
    EvalReport retrieval;
    EvalReport rerank;
    std::map<int, double> hits_delta;
    double mrr_delta = 0.0;
};

// Deltas rerank - retrieval over the identical mention set; differing sets
// raise an error naming the symmetric difference.
StageDelta compare_stages(const std::vector<RankRecord>& retrieval_records,
                          const std::vector<RankRecord>& rerank_records, const std::vector<int>& ks = {1, 3, 5});

// Aligned plain-text table: one column per metric, rows for both stages and
// the signed delta.
std::string format_delta_table(const StageDelta& delta);

} // namespace kgmel
