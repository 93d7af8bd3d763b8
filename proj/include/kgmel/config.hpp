#pragma once

// Run configuration: a single JSON document covering corpus paths,
// hyperparameters, optimizer settings and client wiring. Parsing is strict;
// unknown keys anywhere are rejected. The canonical hash depends only on
// field values, never on key order in the source file, and excludes the
// stage selection (which picks what to run, not what the artifacts mean).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kgmel/encoder.hpp"

namespace kgmel {

// Canonical execution order; stage selections are normalized to it.
inline const std::vector<std::string> kPipelineStages = {"gen", "embed", "train", "retrieve", "rerank", "eval"};

// One external service. mode "mock" keeps a run hermetic: the encoder draws
// seeded-hash vectors and completion clients replay a response script.
struct ClientConfig {
    std::string mode = "mock"; // "mock" | "http"

    // mock settings
    uint64_t mock_seed = 0;        // encoder only
    std::filesystem::path script;  // completion clients; empty = no responses

    // http settings
    std::string endpoint;
    std::string model;
    double temperature = 0.0;
    int timeout_ms = 30000;
    int max_retries = 3;
    std::string api_key_env;

    size_t max_batch = 64; // encoder only

    bool is_mock() const { return mode == "mock"; }
};

struct TrainingConfig {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    int epochs = 50;
    int batch_size = 128;
    int checkpoint_every = 0; // epochs between periodic saves; 0 = final only
};

struct Config {
    std::filesystem::path entities_path = "data/entities.jsonl";
    std::filesystem::path mentions_path = "data/mentions.jsonl";
    std::filesystem::path out_dir = "out";

    uint64_t seed = 0;
    std::vector<std::string> stages = kPipelineStages;
    HyperParams hyper;
    TrainingConfig training;
    std::vector<int> eval_ks = {1, 3, 5, 10};
    int triple_cap = 512;
    int parallelism = 1;

    ClientConfig encoder; // api_key_env defaults to KGMEL_ENCODER_KEY
    ClientConfig vlm;     // KGMEL_VLM_KEY
    ClientConfig llm;     // KGMEL_LLM_KEY

    Config();

    // Parses and validates; relative paths (corpus, out, scripts) are
    // resolved against the config file's directory.
    static Config load(const std::filesystem::path& path);
    static Config from_json(const nlohmann::json& j);

    // Canonical form: every field, defaults filled in.
    nlohmann::json to_json() const;

    // Hash of the canonical form minus "stages".
    uint64_t hash() const;

    void validate() const;
};

} // namespace kgmel
