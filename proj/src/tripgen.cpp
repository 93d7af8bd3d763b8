#include "kgmel/tripgen.hpp"

#include "kgmel/errors.hpp"
#include "kgmel/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <sstream>
#include <thread>

namespace kgmel {

using json = nlohmann::json;

namespace {

std::string quoted_list(const std::vector<std::string>& words) {
    std::string out;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i) out += ", ";
        out += '"' + words[i] + '"';
    }
    return out;
}

std::string relation_list() {
    std::string out;
    for (size_t i = 0; i < kGenerationRelations.size(); ++i) {
        if (i) out += ", ";
        out += '"';
        out += kGenerationRelations[i];
        out += '"';
    }
    return out;
}

} // namespace

std::string build_triple_prompt(const Mention& mention) {
    if (mention.surface_forms.empty()) throw DataError("mention " + mention.id + " has no surface forms");
    const std::string list = quoted_list(mention.surface_forms);
    std::string p;
    p += "Given the image and text " + mention.sentence + ", please generate triples for the entities " + list +
         ". following the steps below:\n";
    p += "### Step 1: Entity Type\n";
    p += "For each entity in " + list + ", identify its type, following the format:\n";
    p += "- \"entity_name\": type of entity\n";
    p += "Type of entity can be :\n";
    p += "person, nationality, religious group, political group, organization, country, city, state, building, "
         "airport, highway, bridge, company, agency, institution, product, event, work of art, law, language, etc.\n";
    p += "### Step 2: Entity Description\n";
    p += "Provide a description for each entity, following the format:\n";
    p += "- \"entity_name\": entity description\n";
    p += "Focus on factual information that can be inferred from the image and text to describe the entity.\n";
    p += "### Step 3: Triples\n";
    p += "Using the type and information from steps 1 and 2, generate all possible triples for each entity in.\n";
    p += "Convert the entity types and information into triples using the format, with each triple on a new line:\n";
    p += "- \"entity_name\" | relation1 | entity1\n";
    p += "- \"entity_name\" | relation2 | entity2\n";
    p += "Based on the entity type and information provided in the image and text, choose the most relevant "
         "relations from the following list to generate triples:\n";
    p += relation_list() + "\n";
    return p;
}

namespace {

std::string strip_bullet(std::string s) {
    s = trim(s);
    while (!s.empty() && (s.front() == '-' || s.front() == '*')) s = trim(s.substr(1));
    return s;
}

std::string strip_quotes(std::string s) {
    s = trim(s);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = trim(s.substr(1, s.size() - 2));
    return s;
}

// Canonical surface form for `name`, or empty when it matches none.
const std::string* match_surface(const std::string& name, const Mention& mention) {
    for (const auto& sf : mention.surface_forms)
        if (iequals(name, sf)) return &sf;
    return nullptr;
}

// Parses `- "name": value` (quotes optional). Returns false when the line has
// no name/value structure.
bool parse_name_value(const std::string& line, std::string& name, std::string& value) {
    std::string s = strip_bullet(line);
    if (s.empty()) return false;
    size_t value_start;
    if (s.front() == '"') {
        size_t close = s.find('"', 1);
        if (close == std::string::npos) return false;
        name = trim(s.substr(1, close - 1));
        size_t colon = s.find(':', close + 1);
        if (colon == std::string::npos) return false;
        value_start = colon + 1;
    } else {
        size_t colon = s.find(':');
        if (colon == std::string::npos) return false;
        name = trim(s.substr(0, colon));
        value_start = colon + 1;
    }
    value = trim(s.substr(value_start));
    return !name.empty() && !value.empty();
}

void add_unique(std::vector<Triple>& triples, Triple t) {
    if (std::find(triples.begin(), triples.end(), t) == triples.end()) triples.push_back(std::move(t));
}

} // namespace

MentionProfile parse_generation(const std::string& raw, const Mention& mention) {
    MentionProfile profile;
    profile.mention_id = mention.id;

    enum class Section { none, types, descriptions, triples };
    Section section = Section::none;

    std::istringstream in(raw);
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty()) continue;
        const std::string lower = to_lower(t);
        if (lower.find("step 1") != std::string::npos) { section = Section::types; continue; }
        if (lower.find("step 2") != std::string::npos) { section = Section::descriptions; continue; }
        if (lower.find("step 3") != std::string::npos) { section = Section::triples; continue; }

        if (std::count(t.begin(), t.end(), '|') >= 2) {
            auto parts = split(strip_bullet(t), '|');
            if (parts.size() != 3) continue;
            Triple triple{strip_quotes(parts[0]), strip_quotes(parts[1]), strip_quotes(parts[2])};
            if (triple.relation.empty() || triple.tail.empty()) continue;
            const std::string* canon = match_surface(triple.head, mention);
            if (!canon) continue;
            triple.head = *canon;
            add_unique(profile.triples, std::move(triple));
            continue;
        }

        if (section == Section::types || section == Section::descriptions) {
            std::string name, value;
            if (!parse_name_value(t, name, value)) continue;
            const std::string* canon = match_surface(name, mention);
            if (!canon) continue;
            auto& slot = (section == Section::types) ? profile.types : profile.descriptions;
            slot.emplace(*canon, value); // first occurrence wins
        }
    }

    for (const auto& [sf, type] : profile.types) add_unique(profile.triples, Triple{sf, "instance of", type});
    return profile;
}

std::string enhanced_mention_text(const Mention& mention, const MentionProfile* profile) {
    std::string out = mention.sentence;
    if (!profile) return out;
    for (const auto& sf : mention.surface_forms) {
        auto it = profile->descriptions.find(sf);
        if (it != profile->descriptions.end() && !it->second.empty()) out += " " + it->second;
    }
    return out;
}

GenerationStats generate_mention_triples(const MentionSet& mentions, GenerationClient& client, ProfileMap& profiles,
                                         int parallelism) {
    if (parallelism < 1) throw ConfigError("generation parallelism must be >= 1");

    struct Job {
        const Mention* mention;
        std::string prompt;
        std::string hash;
    };
    std::vector<Job> jobs;
    GenerationStats stats;
    for (const auto& m : mentions.items()) {
        std::string prompt = build_triple_prompt(m);
        std::string hash = hex64(fnv1a64(prompt));
        auto it = profiles.find(m.id);
        if (it != profiles.end() && !it->second.generation_failed && it->second.prompt_hash == hash) {
            ++stats.cached;
            continue;
        }
        jobs.push_back(Job{&m, std::move(prompt), std::move(hash)});
    }

    std::vector<MentionProfile> results(jobs.size());
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1)) {
            const Job& job = jobs[i];
            CompletionResult r = client.complete(job.prompt, job.mention->image_ref);
            MentionProfile p;
            if (r.ok()) {
                p = parse_generation(*r.text, *job.mention);
            } else {
                p.mention_id = job.mention->id;
                p.generation_failed = true;
            }
            p.prompt_hash = job.hash;
            results[i] = std::move(p);
        }
    };
    if (parallelism == 1 || jobs.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        const int threads = std::min<int>(parallelism, static_cast<int>(jobs.size()));
        pool.reserve(static_cast<size_t>(threads));
        for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    for (auto& p : results) {
        p.generation_failed ? ++stats.failed : ++stats.generated;
        profiles[p.mention_id] = std::move(p);
    }
    return stats;
}

void save_profiles(const ProfileMap& profiles, const std::filesystem::path& path) {
    std::string out;
    for (const auto& [id, p] : profiles) {
        if (id != p.mention_id) throw DataError("profile map key does not match mention_id: " + id);
        json j;
        j["mention_id"] = p.mention_id;
        j["types"] = p.types;
        j["descriptions"] = p.descriptions;
        json triples = json::array();
        for (const auto& t : p.triples) triples.push_back(json::array({t.head, t.relation, t.tail}));
        j["triples"] = std::move(triples);
        j["prompt_hash"] = p.prompt_hash;
        j["generation_failed"] = p.generation_failed;
        out += j.dump();
        out += '\n';
    }
    write_file(path, out);
}

ProfileMap load_profiles(const std::filesystem::path& path) {
    ProfileMap profiles;
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
        if (!j.is_object()) throw DataError(where + ": expected a JSON object");
        for (const auto& [k, v] : j.items()) {
            (void)v;
            if (k != "mention_id" && k != "types" && k != "descriptions" && k != "triples" && k != "prompt_hash" &&
                k != "generation_failed")
                throw DataError(where + ": unknown key \"" + k + "\"");
        }
        MentionProfile p;
        if (!j.contains("mention_id") || !j["mention_id"].is_string())
            throw DataError(where + ": \"mention_id\" must be a string");
        p.mention_id = j["mention_id"].get<std::string>();
        for (const char* field : {"types", "descriptions"}) {
            if (!j.contains(field)) continue;
            if (!j[field].is_object()) throw DataError(where + ": \"" + field + "\" must be an object");
            auto& slot = std::string_view(field) == "types" ? p.types : p.descriptions;
            for (const auto& [k, v] : j[field].items()) {
                if (!v.is_string()) throw DataError(where + ": \"" + field + "\" values must be strings");
                slot[k] = v.get<std::string>();
            }
        }
        if (j.contains("triples")) {
            if (!j["triples"].is_array()) throw DataError(where + ": \"triples\" must be an array");
            for (const auto& t : j["triples"]) {
                if (!t.is_array() || t.size() != 3 || !t[0].is_string() || !t[1].is_string() || !t[2].is_string())
                    throw DataError(where + ": each triple must be [head, relation, tail] strings");
                p.triples.push_back({t[0].get<std::string>(), t[1].get<std::string>(), t[2].get<std::string>()});
            }
        }
        if (j.contains("prompt_hash")) {
            if (!j["prompt_hash"].is_string()) throw DataError(where + ": \"prompt_hash\" must be a string");
            p.prompt_hash = j["prompt_hash"].get<std::string>();
        }
        if (j.contains("generation_failed")) {
            if (!j["generation_failed"].is_boolean()) throw DataError(where + ": \"generation_failed\" must be a boolean");
            p.generation_failed = j["generation_failed"].get<bool>();
        }
        if (!profiles.emplace(p.mention_id, std::move(p)).second)
            throw DataError(where + ": duplicate mention_id \"" + j["mention_id"].get<std::string>() + "\"");
    }
    return profiles;
}

} // namespace kgmel
