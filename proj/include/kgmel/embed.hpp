#pragma once

// Base d'-dimensional embeddings. The external frozen encoder is consulted
// once, its vectors land in an EmbeddingTable keyed by namespaced strings,
// and everything downstream (training, retrieval) reads only the table.
//
// Keys: "t:" + text for encoded strings, "i:" + ref for images. The bare
// image key "i:" always maps to the all-zeros vector and serves every item
// without an image.

#include "kgmel/clients.hpp"
#include "kgmel/corpus.hpp"
#include "kgmel/tripgen.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace kgmel {

inline std::string text_key(std::string_view text) { return "t:" + std::string(text); }
inline std::string image_key(std::string_view ref) { return "i:" + std::string(ref); }
inline const std::string kNullImageKey = "i:";

class EmbeddingTable {
public:
    explicit EmbeddingTable(int dim);

    int dim() const { return dim_; }
    size_t size() const { return rows_.size(); }

    // Rejects wrong-length or non-finite vectors; re-inserting an existing
    // key must supply the identical vector.
    void insert(std::string key, std::vector<float> vector);

    bool contains(const std::string& key) const { return rows_.count(key) != 0; }
    const std::vector<float>& at(const std::string& key) const; // NotFoundError on miss

    const std::map<std::string, std::vector<float>>& rows() const { return rows_; }

    // "KGEM" v1: u32 dim, u64 rows, per row u32 key length + key bytes +
    // dim f32 components. Keys in sorted order; round-trips bit-exactly.
    void save(const std::filesystem::path& path) const;
    static EmbeddingTable load(const std::filesystem::path& path);

    // Digest over the exact serialized bytes.
    uint64_t digest() const;

    bool operator==(const EmbeddingTable&) const = default;

private:
    int dim_;
    std::map<std::string, std::vector<float>> rows_;
};

// Splits items into max_batch chunks and delegates to the client; row i
// corresponds to item i.
std::vector<std::vector<float>> encode_batch(EncoderClient& client, const std::vector<std::string>& items,
                                             bool images = false);

// Encodes every distinct string the model will look up: entity texts,
// enhanced mention texts, relation and tail labels from entity and generated
// triples, and all image refs. The null-image key is always present with a
// zero vector. Idempotent for fixed inputs.
EmbeddingTable materialize_embeddings(const EntityStore& store, const MentionSet& mentions,
                                      const ProfileMap& profiles, EncoderClient& client);

} // namespace kgmel
