#pragma once

// Mention-side triple generation. A vision-language completion turns each
// mention (sentence + optional image) into per-surface-form entity types,
// descriptions and triples; the structured result is a MentionProfile.

#include "kgmel/clients.hpp"
#include "kgmel/corpus.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace kgmel {

// Relation reference list offered to the generator, in prompt order.
inline constexpr std::array<std::string_view, 20> kGenerationRelations = {
    "instance of",   "subclass of",     "part of",      "has characteristic",
    "field of work", "occupation",      "sex or gender", "country of citizenship",
    "position held", "religion or worldview", "member of", "owner of",
    "country",       "capital",         "continent",    "located in",
    "industry",      "participant",     "genre",        "named after",
};

struct MentionProfile {
    std::string mention_id;
    std::map<std::string, std::string> types;        // surface form -> type
    std::map<std::string, std::string> descriptions; // surface form -> description
    std::vector<Triple> triples;                     // heads are surface forms
    std::string prompt_hash; // hex digest of the prompt that produced this profile
    bool generation_failed = false;

    bool operator==(const MentionProfile&) const = default;
};

using ProfileMap = std::map<std::string, MentionProfile>; // keyed by mention id

// Three-step generation prompt with the mention's sentence and quoted
// surface-form list substituted in.
std::string build_triple_prompt(const Mention& mention);

// Extracts types, descriptions and triples from a raw completion. Lines with
// two or more '|' separators parse as triples; outside triple form, lines
// under the step 1 / step 2 headings parse as "name": value pairs. Triples
// whose head matches no surface form (case-insensitive) are dropped, matched
// heads and names are canonicalized to the mention's spelling, and each
// surface form with a parsed type gains an "instance of" triple. Duplicate
// triples keep their first occurrence; so do repeated names.
MentionProfile parse_generation(const std::string& raw, const Mention& mention);

// Mention text fed to the encoder: the sentence, then each generated
// description in surface-form order, single-space separated.
std::string enhanced_mention_text(const Mention& mention, const MentionProfile* profile);

struct GenerationStats {
    size_t generated = 0;
    size_t cached = 0;
    size_t failed = 0; // mentions left with an empty profile
};

// Runs generation for every mention. A mention is skipped when `profiles`
// already holds a successful profile for it with a matching prompt hash;
// failed entries are retried. A failed completion yields an empty profile
// flagged generation_failed; the run itself never aborts on per-mention
// failures.
GenerationStats generate_mention_triples(const MentionSet& mentions, GenerationClient& client, ProfileMap& profiles,
                                         int parallelism = 1);

// Profile persistence, one JSON object per line sorted by mention id:
// {"mention_id", "types": {..}, "descriptions": {..},
//  "triples": [[head, relation, tail], ...], "prompt_hash", "generation_failed"}
void save_profiles(const ProfileMap& profiles, const std::filesystem::path& path);
ProfileMap load_profiles(const std::filesystem::path& path);

} // namespace kgmel
