#include "kgmel/rerank.hpp"

#include "kgmel/errors.hpp"
#include "kgmel/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <mutex>
#include <set>
#include <thread>

namespace kgmel {

using json = nlohmann::json;

namespace {

float dot(const std::vector<float>& a, const std::vector<float>& b) {
    float s = 0.0f;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Top-n labels of `vocab` by similarity to `query`, ties toward the
// lexicographically smaller label.
std::set<std::string> top_n_similar(const std::string& query, const std::vector<std::string>& vocab,
                                    const EmbeddingTable& table, int n) {
    const std::vector<float>& q = table.at(text_key(query));
    std::vector<std::pair<float, const std::string*>> scored;
    scored.reserve(vocab.size());
    for (const auto& label : vocab) scored.emplace_back(dot(q, table.at(text_key(label))), &label);
    const size_t keep = std::min(static_cast<size_t>(n), scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<ptrdiff_t>(keep), scored.end(),
                      [](const auto& a, const auto& b) {
                          return a.first != b.first ? a.first > b.first : *a.second < *b.second;
                      });
    std::set<std::string> out;
    for (size_t i = 0; i < keep; ++i) out.insert(*scored[i].second);
    return out;
}

// Intersect per-label top-n sets; empty intersection falls back to the union.
std::set<std::string> intersect_or_union(const std::vector<std::set<std::string>>& sets, bool& union_fallback) {
    if (sets.empty()) return {};
    std::set<std::string> inter = sets.front();
    for (size_t i = 1; i < sets.size(); ++i) {
        std::set<std::string> next;
        std::set_intersection(inter.begin(), inter.end(), sets[i].begin(), sets[i].end(),
                              std::inserter(next, next.begin()));
        inter = std::move(next);
    }
    if (!inter.empty()) return inter;
    union_fallback = true;
    std::set<std::string> all;
    for (const auto& s : sets) all.insert(s.begin(), s.end());
    return all;
}

} // namespace

FilterSets compute_filter_sets(const std::vector<Triple>& mention_triples, const std::vector<const Entity*>& candidates,
                               const EmbeddingTable& table, int n) {
    if (n < 1) throw ConfigError("n must be >= 1");
    FilterSets sets;
    if (mention_triples.empty()) return sets;

    std::set<std::string> rel_vocab_set, tail_vocab_set;
    for (const Entity* e : candidates) {
        for (const auto& t : e->triples) {
            rel_vocab_set.insert(t.relation);
            tail_vocab_set.insert(t.tail);
        }
    }
    const std::vector<std::string> rel_vocab(rel_vocab_set.begin(), rel_vocab_set.end());
    const std::vector<std::string> tail_vocab(tail_vocab_set.begin(), tail_vocab_set.end());

    std::set<std::string> m_rels, m_tails;
    for (const auto& t : mention_triples) {
        m_rels.insert(t.relation);
        m_tails.insert(t.tail);
    }

    if (!rel_vocab.empty()) {
        std::vector<std::set<std::string>> per_label;
        for (const auto& r : m_rels) per_label.push_back(top_n_similar(r, rel_vocab, table, n));
        sets.relations = intersect_or_union(per_label, sets.relations_union_fallback);
    }
    if (!tail_vocab.empty()) {
        std::vector<std::set<std::string>> per_label;
        for (const auto& o : m_tails) per_label.push_back(top_n_similar(o, tail_vocab, table, n));
        sets.tails = intersect_or_union(per_label, sets.tails_union_fallback);
    }
    return sets;
}

std::vector<Triple> filter_entity_triples(const Entity& entity, const FilterSets& sets) {
    std::vector<Triple> out;
    for (const auto& t : entity.triples)
        if (sets.relations.count(t.relation) && sets.tails.count(t.tail)) out.push_back(t);
    return out;
}

std::string build_rerank_prompt(const Mention& mention, const MentionProfile* profile,
                                const std::vector<RerankCandidate>& candidates) {
    if (candidates.empty()) throw DataError("rerank prompt needs at least one candidate");
    std::string p;
    p += "Given the context below, please identify the most corresponding entity from the list of candidates.\n\n";
    p += "Context: " + mention.sentence + "\n\n";
    p += "Candidate Entities:\n";
    for (auto it = candidates.rbegin(); it != candidates.rend(); ++it) {
        const Entity& e = *it->entity;
        p += e.name + " (" + e.qid + "): " + e.description + "\n";
        for (const auto& t : it->triples) p += "- Triple: " + t.head + " | " + t.relation + " | " + t.tail + "\n";
    }
    p += "\n";
    p += "Context: " + mention.sentence + "\n\n";

    std::string words = join(mention.surface_forms, ", ");
    std::string description;
    if (profile) {
        for (const auto& sf : mention.surface_forms) {
            auto dit = profile->descriptions.find(sf);
            if (dit != profile->descriptions.end() && !dit->second.empty()) {
                if (!description.empty()) description += " ";
                description += dit->second;
            }
        }
    }
    p += "Target Entity: " + words + ": " + description + "\n";
    if (profile)
        for (const auto& t : profile->triples) p += "- Triple: " + t.head + " | " + t.relation + " | " + t.tail + "\n";
    p += "\n";
    p += "First, read the context and the target entity. Then, review the candidate entities and their "
         "descriptions.\n";
    p += "From the candidate entities, select the supporting triples that align with the context and the target "
         "entity. (Note that triples may contain inconsistent information.)\n";
    p += "Based on the selected supporting triples, identify the most relevant entity that best matches the given "
         "sentence context.\n";
    return p;
}

namespace {

bool is_token_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// Whole-token occurrences of needle in haystack.
bool contains_token(const std::string& haystack, const std::string& needle) {
    if (needle.empty()) return false;
    size_t pos = 0;
    while ((pos = haystack.find(needle, pos)) != std::string::npos) {
        const bool left_ok = pos == 0 || !is_token_char(haystack[pos - 1]);
        const size_t end = pos + needle.size();
        const bool right_ok = end == haystack.size() || !is_token_char(haystack[end]);
        if (left_ok && right_ok) return true;
        ++pos;
    }
    return false;
}

} // namespace

std::optional<std::string> parse_selection(const std::string& raw, const std::vector<const Entity*>& candidates) {
    std::vector<std::string> lines = split(raw, '\n');
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
        std::set<std::string> found;
        for (const Entity* e : candidates)
            if (contains_token(*it, e->qid)) found.insert(e->qid);
        if (found.empty()) continue;
        if (found.size() == 1) return *found.begin();
        break; // ambiguous final QID-bearing line; try names below
    }

    std::vector<const Entity*> by_name;
    for (const Entity* e : candidates)
        if (!e->name.empty() && icontains(raw, e->name)) by_name.push_back(e);
    if (by_name.size() == 1) return by_name.front()->qid;
    return std::nullopt;
}

CandidateList merge_selection(const CandidateList& candidates, const std::string& selected_qid) {
    CandidateList out;
    out.mention_id = candidates.mention_id;
    out.ranked.reserve(candidates.ranked.size());
    for (const auto& c : candidates.ranked)
        if (c.qid == selected_qid) out.ranked.push_back(c);
    if (out.ranked.empty()) throw DataError("selected qid " + selected_qid + " not among candidates");
    for (const auto& c : candidates.ranked)
        if (c.qid != selected_qid) out.ranked.push_back(c);
    return out;
}

RerankResult rerank_mention(const Mention& mention, const MentionProfile* profile, const CandidateList& candidates,
                            const EntityStore& store, const EmbeddingTable& table, LlmClient& client,
                            const HyperParams& h) {
    if (candidates.ranked.empty()) throw DataError("rerank needs a non-empty candidate list");

    std::vector<const Entity*> entities;
    entities.reserve(candidates.ranked.size());
    for (const auto& c : candidates.ranked) entities.push_back(&store.at(c.qid));

    static const std::vector<Triple> kNone;
    const std::vector<Triple>& mention_triples = profile ? profile->triples : kNone;
    FilterSets sets = compute_filter_sets(mention_triples, entities, table, h.n);

    std::vector<RerankCandidate> presented;
    presented.reserve(entities.size());
    for (const Entity* e : entities) presented.push_back({e, filter_entity_triples(*e, sets)});

    RerankResult result;
    result.decision.mention_id = mention.id;
    result.decision.relations_union_fallback = sets.relations_union_fallback;
    result.decision.tails_union_fallback = sets.tails_union_fallback;

    const std::string prompt = build_rerank_prompt(mention, profile, presented);
    CompletionResult completion = client.complete(prompt);
    if (!completion.ok()) {
        result.decision.source = "fallback";
        result.decision.raw_response = completion.error;
        result.list = candidates;
        return result;
    }
    result.decision.raw_response = *completion.text;
    std::optional<std::string> selected = parse_selection(*completion.text, entities);
    if (!selected) {
        result.decision.source = "fallback";
        result.list = candidates;
        return result;
    }
    result.decision.source = "llm";
    result.decision.selected_qid = *selected;
    result.list = merge_selection(candidates, *selected);
    return result;
}

std::map<std::string, RerankResult> rerank_all(const MentionSet& mentions, const ProfileMap& profiles,
                                               const std::map<std::string, CandidateList>& candidates,
                                               const EntityStore& store, const EmbeddingTable& table,
                                               LlmClient& client, const HyperParams& h, int parallelism) {
    if (parallelism < 1) throw ConfigError("rerank parallelism must be >= 1");
    struct Job {
        const Mention* mention;
        const CandidateList* list;
    };
    std::vector<Job> jobs;
    for (const auto& m : mentions.items()) {
        auto it = candidates.find(m.id);
        if (it == candidates.end()) throw DataError("no candidates for mention " + m.id);
        jobs.push_back({&m, &it->second});
    }

    std::vector<RerankResult> results(jobs.size());
    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex error_mu;
    auto worker = [&] {
        for (size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1)) {
            try {
                auto pit = profiles.find(jobs[i].mention->id);
                results[i] = rerank_mention(*jobs[i].mention, pit == profiles.end() ? nullptr : &pit->second,
                                            *jobs[i].list, store, table, client, h);
            } catch (const Error& e) {
                std::lock_guard lock(error_mu);
                if (!failed.exchange(true)) first_error = e.what();
            }
        }
    };
    if (parallelism == 1 || jobs.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        const int threads = std::min<int>(parallelism, static_cast<int>(jobs.size()));
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failed.load()) throw DataError("rerank failed: " + first_error);

    std::map<std::string, RerankResult> out;
    for (auto& r : results) {
        std::string id = r.decision.mention_id;
        out.emplace(std::move(id), std::move(r));
    }
    return out;
}

void save_decisions(const std::map<std::string, RerankResult>& results, const std::filesystem::path& path) {
    std::string out;
    for (const auto& [id, r] : results) {
        json j{{"mention_id", id},
               {"selected_qid", r.decision.selected_qid},
               {"source", r.decision.source},
               {"raw_response", r.decision.raw_response},
               {"relations_union_fallback", r.decision.relations_union_fallback},
               {"tails_union_fallback", r.decision.tails_union_fallback}};
        out += j.dump();
        out += '\n';
    }
    write_file(path, out);
}

} // namespace kgmel
