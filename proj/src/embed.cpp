#include "kgmel/embed.hpp"

#include "kgmel/binio.hpp"
#include "kgmel/errors.hpp"
#include "kgmel/util.hpp"

#include <cmath>
#include <set>

namespace kgmel {

EmbeddingTable::EmbeddingTable(int dim) : dim_(dim) {
    if (dim <= 0) throw ConfigError("embedding dim must be positive");
}

void EmbeddingTable::insert(std::string key, std::vector<float> vector) {
    if (static_cast<int>(vector.size()) != dim_)
        throw DataError("vector for \"" + key + "\" has length " + std::to_string(vector.size()) + ", expected " +
                        std::to_string(dim_));
    for (float x : vector)
        if (!std::isfinite(x)) throw DataError("vector for \"" + key + "\" has a non-finite component");
    if (auto it = rows_.find(key); it != rows_.end()) {
        if (it->second != vector) throw DataError("conflicting vectors for key \"" + key + "\"");
        return;
    }
    rows_.emplace(std::move(key), std::move(vector));
}

const std::vector<float>& EmbeddingTable::at(const std::string& key) const {
    auto it = rows_.find(key);
    if (it == rows_.end()) throw NotFoundError(key, "embedding key not found");
    return it->second;
}

namespace {

std::string serialize_table(int dim, const std::map<std::string, std::vector<float>>& rows) {
    ByteWriter w;
    w.raw("KGEM");
    w.u32(1);
    w.u32(static_cast<uint32_t>(dim));
    w.u64(rows.size());
    for (const auto& [key, vec] : rows) {
        w.str(key);
        w.f32s(vec.data(), vec.size());
    }
    return w.take();
}

} // namespace

void EmbeddingTable::save(const std::filesystem::path& path) const {
    write_file(path, serialize_table(dim_, rows_));
}

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path) {
    std::string blob = read_file(path);
    ByteReader r(blob);
    char magic[4];
    for (char& c : magic) c = static_cast<char>(r.u8());
    if (std::string_view(magic, 4) != "KGEM") throw DataError(path.string() + ": not an embedding table file");
    uint32_t version = r.u32();
    if (version != 1) throw DataError(path.string() + ": unsupported version " + std::to_string(version));
    uint32_t dim = r.u32();
    if (dim == 0) throw DataError(path.string() + ": dim must be positive");
    uint64_t count = r.u64();
    EmbeddingTable table(static_cast<int>(dim));
    for (uint64_t i = 0; i < count; ++i) {
        std::string key = r.str();
        std::vector<float> vec(dim);
        for (uint32_t j = 0; j < dim; ++j) vec[j] = r.f32();
        if (table.rows_.count(key)) throw DataError(path.string() + ": duplicate key \"" + key + "\"");
        table.rows_.emplace(std::move(key), std::move(vec));
    }
    if (!r.at_end()) throw DataError(path.string() + ": trailing bytes");
    return table;
}

uint64_t EmbeddingTable::digest() const { return fnv1a64(serialize_table(dim_, rows_)); }

std::vector<std::vector<float>> encode_batch(EncoderClient& client, const std::vector<std::string>& items,
                                             bool images) {
    std::vector<std::vector<float>> out;
    out.reserve(items.size());
    const size_t chunk = client.max_batch();
    for (size_t start = 0; start < items.size(); start += chunk) {
        const size_t end = std::min(items.size(), start + chunk);
        std::vector<std::string> batch(items.begin() + static_cast<ptrdiff_t>(start),
                                       items.begin() + static_cast<ptrdiff_t>(end));
        std::vector<std::vector<float>> rows;
        try {
            rows = images ? client.encode_images(batch) : client.encode_texts(batch);
        } catch (const ServiceError& e) {
            throw ServiceError(std::string(e.what()) + " (batch starting at \"" + batch.front() + "\")");
        }
        if (rows.size() != batch.size()) throw ServiceError("encoder returned wrong row count");
        for (auto& row : rows) {
            if (static_cast<int>(row.size()) != client.dim()) throw ConfigError("encoder row has wrong dimension");
            out.push_back(std::move(row));
        }
    }
    return out;
}

EmbeddingTable materialize_embeddings(const EntityStore& store, const MentionSet& mentions,
                                      const ProfileMap& profiles, EncoderClient& client) {
    std::set<std::string> texts;
    std::set<std::string> images;

    for (const auto& e : store.entities()) {
        texts.insert(entity_text(e));
        if (e.image_ref) images.insert(*e.image_ref);
        for (const auto& t : e.triples) {
            texts.insert(t.relation);
            texts.insert(t.tail);
        }
    }
    for (const auto& m : mentions.items()) {
        auto it = profiles.find(m.id);
        const MentionProfile* profile = it == profiles.end() ? nullptr : &it->second;
        texts.insert(enhanced_mention_text(m, profile));
        if (m.image_ref) images.insert(*m.image_ref);
        if (profile) {
            for (const auto& t : profile->triples) {
                texts.insert(t.relation);
                texts.insert(t.tail);
            }
        }
    }

    std::vector<std::string> text_items(texts.begin(), texts.end());
    std::vector<std::string> image_items(images.begin(), images.end());

    EmbeddingTable table(client.dim());
    auto text_rows = encode_batch(client, text_items, false);
    for (size_t i = 0; i < text_items.size(); ++i) table.insert(text_key(text_items[i]), std::move(text_rows[i]));
    auto image_rows = encode_batch(client, image_items, true);
    for (size_t i = 0; i < image_items.size(); ++i) table.insert(image_key(image_items[i]), std::move(image_rows[i]));
    table.insert(kNullImageKey, std::vector<float>(static_cast<size_t>(client.dim()), 0.0f));
    return table;
}

} // namespace kgmel
