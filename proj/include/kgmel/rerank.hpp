#pragma once

// Stage 3: triple filtering against the mention's generated triples, the
// reranking prompt, answer extraction, and the merge of the selection back
// into the candidate ranking. Every failure degrades to the retrieval order.

#include "kgmel/clients.hpp"
#include "kgmel/corpus.hpp"
#include "kgmel/embed.hpp"
#include "kgmel/encoder.hpp"
#include "kgmel/retrieval.hpp"
#include "kgmel/tripgen.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace kgmel {

struct FilterSets {
    std::set<std::string> relations;
    std::set<std::string> tails;
    bool relations_union_fallback = false; // intersection was empty, union used
    bool tails_union_fallback = false;

    bool operator==(const FilterSets&) const = default;
};

// For each distinct relation (tail) label of the mention's triples, ranks the
// candidates' pooled relation (tail) vocabulary by base-embedding dot
// similarity, keeps the top n (ties by ascending label), and intersects the
// per-label sets. An empty intersection falls back to the union, flagged. A
// mention with no triples yields empty sets.
FilterSets compute_filter_sets(const std::vector<Triple>& mention_triples, const std::vector<const Entity*>& candidates,
                               const EmbeddingTable& table, int n);

// Exact conjunctive membership filter, entity order preserved.
std::vector<Triple> filter_entity_triples(const Entity& entity, const FilterSets& sets);

// Candidate presented to the reranker: the entity plus its filtered triples.
struct RerankCandidate {
    const Entity* entity;
    std::vector<Triple> triples;
};

// Reranking prompt: context, candidates in reverse retrieval order as
// "name (QID): description" with one "- Triple:" line per filtered triple,
// the target block from the mention's generated profile, then the fixed
// supporting-triples instruction.
std::string build_rerank_prompt(const Mention& mention, const MentionProfile* profile,
                                const std::vector<RerankCandidate>& candidates);

// Answer extraction: exactly one distinct candidate QID in the last line
// containing any candidate QID wins; otherwise exactly one candidate name
// appearing in the response (and not as part of another candidate's name)
// wins; otherwise nothing.
std::optional<std::string> parse_selection(const std::string& raw, const std::vector<const Entity*>& candidates);

// Appendix-style merge: the selection moves to rank 1, everyone else keeps
// their relative order.
CandidateList merge_selection(const CandidateList& candidates, const std::string& selected_qid);

struct RerankDecision {
    std::string mention_id;
    std::string selected_qid; // empty on fallback
    std::string source;       // "llm" or "fallback"
    std::string raw_response; // completion text, or the client error on failure
    bool relations_union_fallback = false;
    bool tails_union_fallback = false;

    bool operator==(const RerankDecision&) const = default;
};

struct RerankResult {
    CandidateList list;
    RerankDecision decision;
};

// One mention end to end. Client failure or unparseable output returns the
// input list with source = "fallback"; nothing throws per mention except
// corpus inconsistencies (a candidate qid missing from the store).
RerankResult rerank_mention(const Mention& mention, const MentionProfile* profile, const CandidateList& candidates,
                            const EntityStore& store, const EmbeddingTable& table, LlmClient& client,
                            const HyperParams& h);

// Batch driver with bounded concurrency; per-mention outcomes never abort
// the run.
std::map<std::string, RerankResult> rerank_all(const MentionSet& mentions, const ProfileMap& profiles,
                                               const std::map<std::string, CandidateList>& candidates,
                                               const EntityStore& store, const EmbeddingTable& table,
                                               LlmClient& client, const HyperParams& h, int parallelism = 1);

// Decision log, one JSON object per line sorted by mention_id.
void save_decisions(const std::map<std::string, RerankResult>& results, const std::filesystem::path& path);

} // namespace kgmel
