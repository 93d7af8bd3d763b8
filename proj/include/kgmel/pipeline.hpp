#pragma once

// End-to-end orchestration over an artifact directory:
//   gen -> embed -> train -> retrieve -> rerank -> eval
// Each stage writes its outputs plus a sidecar <stage>.meta.json recording
// (stage, input hash, config hash). A stage is skipped only when the sidecar
// matches both hashes and every output file exists; anything else recomputes
// from scratch. Errors carry the failing stage's name; artifacts written
// before the failure are left in place.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kgmel/config.hpp"
#include "kgmel/corpus.hpp"
#include "kgmel/eval.hpp"

namespace kgmel {

namespace artifact {
inline constexpr const char* kProfiles = "profiles.jsonl";
inline constexpr const char* kEmbeddings = "embeddings.kgem";
inline constexpr const char* kCheckpoint = "model.kgck";
inline constexpr const char* kTrainLog = "train_log.jsonl";
inline constexpr const char* kIndex = "index.kgix";
inline constexpr const char* kCandidates = "candidates.jsonl";
inline constexpr const char* kReranked = "reranked.jsonl";
inline constexpr const char* kDecisions = "decisions.jsonl";
inline constexpr const char* kRetrievalReport = "report_retrieval.json";
inline constexpr const char* kRerankReport = "report_rerank.json";
inline constexpr const char* kDelta = "delta.txt";
} // namespace artifact

struct IngestStats {
    uint64_t entities = 0;
    uint64_t mentions = 0;
    uint64_t sentences = 0; // distinct mention sentences
    uint64_t triples = 0;   // entity triples, after the cap
    uint64_t relations = 0; // distinct relation labels

    bool operator==(const IngestStats&) const = default;
};

// Both corpus files, validated, with the per-entity triple cap applied.
struct CorpusBundle {
    EntityStore store;
    MentionSet mentions;
    IngestStats stats;
};

CorpusBundle load_corpus(const Config& cfg);

struct StageOutcome {
    std::string stage;
    bool cached = false;
    double seconds = 0.0;
};

struct PipelineResult {
    std::vector<StageOutcome> outcomes;
    std::optional<EvalReport> retrieval_report;
    std::optional<EvalReport> rerank_report;
    std::string delta_table; // empty until eval has run with rerank output present
};

// Runs cfg.stages in canonical order. When eval runs without rerank output
// on disk it degrades to the retrieval report alone.
PipelineResult run_pipeline(const Config& cfg);

} // namespace kgmel
