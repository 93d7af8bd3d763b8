#pragma once

// Pluggable external services. The frozen joint text-image encoder, the
// vision-language generation service and the reranking language model all
// live behind these contracts; HTTP implementations talk JSON to a remote
// endpoint, mock implementations keep the pipeline hermetic.
//
// Wire formats:
//   encoder:    POST /encode    {"texts": [...]} or {"image_refs": [...]}
//               -> {"vectors": [[f, ...], ...]}          key: KGMEL_ENCODER_KEY
//   generation: POST /generate  {"prompt", "image_ref", "model", "temperature"}
//               -> {"text": str}                         key: KGMEL_VLM_KEY
//   rerank LM:  POST /complete  {"prompt", "model", "temperature"}
//               -> {"text": str}                         key: KGMEL_LLM_KEY

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace kgmel {

struct RetryPolicy {
    int max_retries = 3;       // retries after the first attempt
    int backoff_base_ms = 100; // delay doubles per retry, capped below
    int backoff_cap_ms = 2000;
};

// Frozen pretrained joint text-image encoder. encode_* is a pure function of
// its input up to service versioning; every row has length dim().
class EncoderClient {
public:
    virtual ~EncoderClient() = default;

    virtual int dim() const = 0;
    virtual size_t max_batch() const = 0;
    virtual std::vector<std::vector<float>> encode_texts(const std::vector<std::string>& texts) = 0;
    virtual std::vector<std::vector<float>> encode_images(const std::vector<std::string>& image_refs) = 0;
};

struct CompletionResult {
    std::optional<std::string> text;
    std::string error;

    bool ok() const { return text.has_value(); }

    static CompletionResult success(std::string t) { return {std::move(t), {}}; }
    static CompletionResult failure(std::string e) { return {std::nullopt, std::move(e)}; }
};

// Vision-language completion service used for mention triple generation.
class GenerationClient {
public:
    virtual ~GenerationClient() = default;
    virtual CompletionResult complete(const std::string& prompt, const std::optional<std::string>& image_ref) = 0;
};

// Text-only completion service used for candidate reranking.
class LlmClient {
public:
    virtual ~LlmClient() = default;
    virtual CompletionResult complete(const std::string& prompt) = 0;
};

// Deterministic seeded-hash vector: components drawn from a counter-based
// generator keyed by (seed, byte-hash of item), each in [-1, 1]. Identical on
// every platform.
std::vector<float> mock_encode(uint64_t seed, std::string_view item, int dim);

class MockEncoderClient final : public EncoderClient {
public:
    MockEncoderClient(uint64_t seed, int dim, size_t max_batch = 64) : seed_(seed), dim_(dim), max_batch_(max_batch) {}

    int dim() const override { return dim_; }
    size_t max_batch() const override { return max_batch_; }
    std::vector<std::vector<float>> encode_texts(const std::vector<std::string>& texts) override;
    std::vector<std::vector<float>> encode_images(const std::vector<std::string>& image_refs) override;

    size_t call_count() const { return calls_.load(); }

private:
    uint64_t seed_;
    int dim_;
    size_t max_batch_;
    std::atomic<size_t> calls_{0};
};

// Completion client driven by a response script: the first key (in sorted
// order) found as a substring of the prompt selects the response. Keys listed
// in fail_keys simulate a transient client failure. Serves both the
// generation and rerank contracts.
class ScriptedCompletionClient final : public GenerationClient, public LlmClient {
public:
    ScriptedCompletionClient() = default;
    explicit ScriptedCompletionClient(std::map<std::string, std::string> responses,
                                      std::optional<std::string> fallback = std::nullopt);
    ScriptedCompletionClient(ScriptedCompletionClient&& other) noexcept
        : responses_(std::move(other.responses_)), fail_keys_(std::move(other.fail_keys_)),
          fallback_(std::move(other.fallback_)), calls_(other.calls_.load()) {}

    // Script file: {"responses": {key: text, ...}, "default": str|null,
    //              "fail_keys": [key, ...]}
    static ScriptedCompletionClient from_file(const std::filesystem::path& path);

    void set_response(std::string key, std::string text);
    void add_fail_key(std::string key);

    CompletionResult complete(const std::string& prompt, const std::optional<std::string>& image_ref) override;
    CompletionResult complete(const std::string& prompt) override;

    size_t call_count() const { return calls_.load(); }

private:
    CompletionResult respond(const std::string& prompt);

    std::map<std::string, std::string> responses_;
    std::vector<std::string> fail_keys_;
    std::optional<std::string> fallback_;
    std::atomic<size_t> calls_{0};
};

struct HttpClientConfig {
    std::string endpoint; // e.g. "http://127.0.0.1:8080"
    std::string model;
    double temperature = 0.0;
    int timeout_ms = 30000;
    RetryPolicy retry;
    std::string api_key_env; // environment variable holding the bearer token
};

class HttpEncoderClient final : public EncoderClient {
public:
    HttpEncoderClient(HttpClientConfig cfg, int dim, size_t max_batch);
    ~HttpEncoderClient() override;

    int dim() const override { return dim_; }
    size_t max_batch() const override { return max_batch_; }
    std::vector<std::vector<float>> encode_texts(const std::vector<std::string>& texts) override;
    std::vector<std::vector<float>> encode_images(const std::vector<std::string>& image_refs) override;

private:
    std::vector<std::vector<float>> encode(const char* field, const std::vector<std::string>& items);

    HttpClientConfig cfg_;
    int dim_;
    size_t max_batch_;
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

class HttpGenerationClient final : public GenerationClient {
public:
    explicit HttpGenerationClient(HttpClientConfig cfg);
    ~HttpGenerationClient() override;

    CompletionResult complete(const std::string& prompt, const std::optional<std::string>& image_ref) override;

private:
    HttpClientConfig cfg_;
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

class HttpLlmClient final : public LlmClient {
public:
    explicit HttpLlmClient(HttpClientConfig cfg);
    ~HttpLlmClient() override;

    CompletionResult complete(const std::string& prompt) override;

private:
    HttpClientConfig cfg_;
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace kgmel
