#include "kgmel/corpus.hpp"

#include <fstream>

#include <json.hpp>

#include "kgmel/errors.hpp"
#include "kgmel/util.hpp"

namespace kgmel {

using nlohmann::json;

namespace {

json parse_line(const std::string& line, const std::filesystem::path& path, size_t line_no) {
    try {
        return json::parse(line);
    } catch (const json::parse_error& e) {
        throw DataError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
}

[[noreturn]] void line_error(const std::filesystem::path& path, size_t line_no, const std::string& msg) {
    throw DataError(path.string() + " line " + std::to_string(line_no) + ": " + msg);
}

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> known,
                         const std::filesystem::path& path, size_t line_no) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        bool ok = false;
        for (const char* k : known) {
            if (key == k) {
                ok = true;
                break;
            }
        }
        if (!ok) line_error(path, line_no, "unknown key \"" + key + "\"");
    }
}

std::string require_string(const json& obj, const char* key, const std::filesystem::path& path, size_t line_no) {
    if (!obj.contains(key) || !obj[key].is_string())
        line_error(path, line_no, std::string("missing or non-string field \"") + key + "\"");
    return obj[key].get<std::string>();
}

std::optional<std::string> optional_string(const json& obj, const char* key, const std::filesystem::path& path,
                                           size_t line_no) {
    if (!obj.contains(key) || obj[key].is_null()) return std::nullopt;
    if (!obj[key].is_string()) line_error(path, line_no, std::string("field \"") + key + "\" must be string or null");
    return obj[key].get<std::string>();
}

template <class Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file for reading: " + path.string());
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        fn(line, line_no);
    }
}

} // namespace

EntityStore EntityStore::load(const std::filesystem::path& path) {
    EntityStore store;
    for_each_line(path, [&](const std::string& line, size_t line_no) {
        json rec = parse_line(line, path, line_no);
        if (!rec.is_object()) line_error(path, line_no, "expected a JSON object");
        reject_unknown_keys(rec, {"qid", "name", "description", "image_ref", "triples"}, path, line_no);

        Entity e;
        e.qid = require_string(rec, "qid", path, line_no);
        if (e.qid.empty()) line_error(path, line_no, "empty qid");
        e.name = require_string(rec, "name", path, line_no);
        e.description = require_string(rec, "description", path, line_no);
        e.image_ref = optional_string(rec, "image_ref", path, line_no);

        if (!rec.contains("triples") || !rec["triples"].is_array())
            line_error(path, line_no, "missing or non-array field \"triples\"");
        for (const auto& t : rec["triples"]) {
            if (!t.is_array() || t.size() != 2 || !t[0].is_string() || !t[1].is_string())
                line_error(path, line_no, "each triple must be a [relation, tail] string pair");
            Triple triple{e.qid, t[0].get<std::string>(), t[1].get<std::string>()};
            if (triple.relation.empty() || triple.tail.empty())
                line_error(path, line_no, "triple relation and tail must be non-empty");
            e.triples.push_back(std::move(triple));
        }

        if (store.find(e.qid) != nullptr)
            line_error(path, line_no, "duplicate qid \"" + e.qid + "\"");
        store.add(std::move(e));
    });
    return store;
}

void EntityStore::add(Entity entity) {
    if (entity.qid.empty()) throw DataError("entity qid must be non-empty");
    if (by_qid_.count(entity.qid)) throw DataError("duplicate qid \"" + entity.qid + "\"");
    for (auto& t : entity.triples) {
        if (t.head != entity.qid)
            throw DataError("triple head \"" + t.head + "\" does not match entity qid \"" + entity.qid + "\"");
        if (t.relation.empty() || t.tail.empty())
            throw DataError("triple relation and tail must be non-empty (entity \"" + entity.qid + "\")");
        relations_.insert(t.relation);
        tails_.insert(t.tail);
    }
    by_qid_[entity.qid] = entities_.size();
    entities_.push_back(std::move(entity));
}

const Entity* EntityStore::find(const std::string& qid) const {
    auto it = by_qid_.find(qid);
    return it == by_qid_.end() ? nullptr : &entities_[it->second];
}

const Entity& EntityStore::at(const std::string& qid) const {
    const Entity* e = find(qid);
    if (!e) throw NotFoundError(qid, "entity not found");
    return *e;
}

size_t EntityStore::total_triples() const {
    size_t n = 0;
    for (const auto& e : entities_) n += e.triples.size();
    return n;
}

void EntityStore::save(const std::filesystem::path& path) const {
    std::string out;
    for (const auto& e : entities_) {
        json rec;
        rec["qid"] = e.qid;
        rec["name"] = e.name;
        rec["description"] = e.description;
        rec["image_ref"] = e.image_ref ? json(*e.image_ref) : json(nullptr);
        json triples = json::array();
        for (const auto& t : e.triples) triples.push_back(json::array({t.relation, t.tail}));
        rec["triples"] = std::move(triples);
        out += rec.dump();
        out += '\n';
    }
    write_file(path, out);
}

bool entities_equal(const Entity& a, const Entity& b) {
    return a.qid == b.qid && a.name == b.name && a.description == b.description && a.image_ref == b.image_ref &&
           a.triples == b.triples;
}

bool EntityStore::entities_same(const EntityStore& other) const {
    if (entities_.size() != other.entities_.size()) return false;
    for (size_t i = 0; i < entities_.size(); ++i) {
        if (!entities_equal(entities_[i], other.entities_[i])) return false;
    }
    return true;
}

MentionSet MentionSet::load(const std::filesystem::path& path) {
    MentionSet set;
    for_each_line(path, [&](const std::string& line, size_t line_no) {
        json rec = parse_line(line, path, line_no);
        if (!rec.is_object()) line_error(path, line_no, "expected a JSON object");
        reject_unknown_keys(rec, {"id", "sentence", "surface_forms", "image_ref", "gold_qid"}, path, line_no);

        Mention m;
        m.id = require_string(rec, "id", path, line_no);
        if (m.id.empty()) line_error(path, line_no, "empty mention id");
        m.sentence = require_string(rec, "sentence", path, line_no);
        if (!rec.contains("surface_forms") || !rec["surface_forms"].is_array() || rec["surface_forms"].empty())
            line_error(path, line_no, "surface_forms must be a non-empty array");
        for (const auto& sf : rec["surface_forms"]) {
            if (!sf.is_string()) line_error(path, line_no, "surface forms must be strings");
            m.surface_forms.push_back(sf.get<std::string>());
        }
        m.image_ref = optional_string(rec, "image_ref", path, line_no);
        m.gold_qid = optional_string(rec, "gold_qid", path, line_no);

        for (const auto& sf : m.surface_forms) {
            if (sf.empty() || !icontains(m.sentence, sf))
                line_error(path, line_no,
                           "surface form \"" + sf + "\" does not occur in sentence \"" + m.sentence + "\"");
        }
        if (set.find(m.id) != nullptr) line_error(path, line_no, "duplicate mention id \"" + m.id + "\"");
        set.add(std::move(m));
    });
    return set;
}

void MentionSet::add(Mention mention) {
    if (mention.id.empty()) throw DataError("mention id must be non-empty");
    if (by_id_.count(mention.id)) throw DataError("duplicate mention id \"" + mention.id + "\"");
    if (mention.surface_forms.empty()) throw DataError("mention \"" + mention.id + "\" has no surface forms");
    for (const auto& sf : mention.surface_forms) {
        if (sf.empty() || !icontains(mention.sentence, sf))
            throw DataError("surface form \"" + sf + "\" does not occur in sentence of mention \"" + mention.id +
                            "\"");
    }
    by_id_[mention.id] = mentions_.size();
    mentions_.push_back(std::move(mention));
}

const Mention* MentionSet::find(const std::string& id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &mentions_[it->second];
}

const Mention& MentionSet::at(const std::string& id) const {
    const Mention* m = find(id);
    if (!m) throw NotFoundError(id, "mention not found");
    return *m;
}

void MentionSet::save(const std::filesystem::path& path) const {
    std::string out;
    for (const auto& m : mentions_) {
        json rec;
        rec["id"] = m.id;
        rec["sentence"] = m.sentence;
        rec["surface_forms"] = m.surface_forms;
        rec["image_ref"] = m.image_ref ? json(*m.image_ref) : json(nullptr);
        rec["gold_qid"] = m.gold_qid ? json(*m.gold_qid) : json(nullptr);
        out += rec.dump();
        out += '\n';
    }
    write_file(path, out);
}

bool mentions_equal(const Mention& a, const Mention& b) {
    return a.id == b.id && a.sentence == b.sentence && a.surface_forms == b.surface_forms &&
           a.image_ref == b.image_ref && a.gold_qid == b.gold_qid;
}

bool MentionSet::operator==(const MentionSet& other) const {
    if (mentions_.size() != other.mentions_.size()) return false;
    for (size_t i = 0; i < mentions_.size(); ++i) {
        if (!mentions_equal(mentions_[i], other.mentions_[i])) return false;
    }
    return true;
}

Entity cap_triples(const Entity& entity, size_t max_triples) {
    if (max_triples == 0) throw DataError("triple cap must be >= 1");
    Entity capped = entity;
    if (capped.triples.size() > max_triples) capped.triples.resize(max_triples);
    return capped;
}

std::string entity_text(const Entity& entity) {
    return entity.name + ": " + entity.description;
}

} // namespace kgmel
