#pragma once

// Data model and ingestion for entities, mentions and knowledge-graph triples.
//
// File formats (UTF-8, one JSON object per line):
//   entities: {"qid": str, "name": str, "description": str,
//              "image_ref": str|null, "triples": [[relation, tail], ...]}
//   mentions: {"id": str, "sentence": str, "surface_forms": [str, ...],
//              "image_ref": str|null, "gold_qid": str|null}
//
// Stores are immutable after load and safe for unrestricted concurrent reads.

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace kgmel {

struct Triple {
    std::string head;
    std::string relation;
    std::string tail;

    bool operator==(const Triple&) const = default;
};

// A knowledge-base record. Every triple's head equals the qid.
struct Entity {
    std::string qid;
    std::string name;
    std::string description;
    std::optional<std::string> image_ref;
    std::vector<Triple> triples;
};

// A dataset record to be linked. Every surface form occurs in the sentence
// (case-insensitive). gold_qid may reference an entity outside any store.
struct Mention {
    std::string id;
    std::string sentence;
    std::vector<std::string> surface_forms;
    std::optional<std::string> image_ref;
    std::optional<std::string> gold_qid;
};

class EntityStore {
public:
    static EntityStore load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    // File construction is also allowed programmatically; invariants are
    // validated on every add.
    void add(Entity entity);

    const Entity* find(const std::string& qid) const;
    const Entity& at(const std::string& qid) const; // NotFoundError on miss

    const std::vector<Entity>& entities() const { return entities_; }
    const std::set<std::string>& relation_vocabulary() const { return relations_; }
    const std::set<std::string>& tail_vocabulary() const { return tails_; }

    size_t size() const { return entities_.size(); }
    size_t total_triples() const;

    bool operator==(const EntityStore& other) const { return entities_same(other); }

private:
    bool entities_same(const EntityStore& other) const;

    std::vector<Entity> entities_; // file order
    std::unordered_map<std::string, size_t> by_qid_;
    std::set<std::string> relations_;
    std::set<std::string> tails_;
};

class MentionSet {
public:
    static MentionSet load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    void add(Mention mention);

    const Mention* find(const std::string& id) const;
    const Mention& at(const std::string& id) const;

    const std::vector<Mention>& items() const { return mentions_; }
    size_t size() const { return mentions_.size(); }

    bool operator==(const MentionSet&) const;

private:
    std::vector<Mention> mentions_; // file order
    std::unordered_map<std::string, size_t> by_id_;
};

// Deterministic prefix cap: first min(|triples|, max_triples) triples in
// stored order. max_triples must be >= 1.
Entity cap_triples(const Entity& entity, size_t max_triples);

// Entity textual context: name + ": " + description.
std::string entity_text(const Entity& entity);

bool entities_equal(const Entity& a, const Entity& b);
bool mentions_equal(const Mention& a, const Mention& b);

} // namespace kgmel
