#include "kgmel/clients.hpp"

#include "kgmel/errors.hpp"
#include "kgmel/util.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <mutex>
#include <thread>

// httplib spawns threads for its blocking client; keep it out of the header.
#include <httplib.h>

namespace kgmel {

using json = nlohmann::json;

std::vector<float> mock_encode(uint64_t seed, std::string_view item, int dim) {
    if (dim <= 0) throw ConfigError("mock_encode: dim must be positive");
    uint64_t key = splitmix64(seed ^ fnv1a64(item));
    std::vector<float> v(static_cast<size_t>(dim));
    for (int i = 0; i < dim; ++i) {
        uint64_t bits = splitmix64(key + 1 + static_cast<uint64_t>(i));
        // top 53 bits -> [0,1), affine to [-1,1)
        double u = static_cast<double>(bits >> 11) * 0x1.0p-53;
        v[static_cast<size_t>(i)] = static_cast<float>(2.0 * u - 1.0);
    }
    return v;
}

std::vector<std::vector<float>> MockEncoderClient::encode_texts(const std::vector<std::string>& texts) {
    calls_.fetch_add(1);
    if (texts.size() > max_batch_) throw ServiceError("encoder batch exceeds max_batch");
    std::vector<std::vector<float>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(mock_encode(seed_, t, dim_));
    return out;
}

std::vector<std::vector<float>> MockEncoderClient::encode_images(const std::vector<std::string>& image_refs) {
    calls_.fetch_add(1);
    if (image_refs.size() > max_batch_) throw ServiceError("encoder batch exceeds max_batch");
    std::vector<std::vector<float>> out;
    out.reserve(image_refs.size());
    // salt keeps an image ref from colliding with the identical text string
    for (const auto& r : image_refs) out.push_back(mock_encode(seed_, "image://" + r, dim_));
    return out;
}

ScriptedCompletionClient::ScriptedCompletionClient(std::map<std::string, std::string> responses,
                                                  std::optional<std::string> fallback)
    : responses_(std::move(responses)), fallback_(std::move(fallback)) {}

ScriptedCompletionClient ScriptedCompletionClient::from_file(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw DataError(path.string() + ": script must be a JSON object");
    ScriptedCompletionClient client;
    if (j.contains("responses")) {
        if (!j["responses"].is_object()) throw DataError(path.string() + ": \"responses\" must be an object");
        for (const auto& [k, v] : j["responses"].items()) {
            if (!v.is_string()) throw DataError(path.string() + ": response for \"" + k + "\" must be a string");
            client.responses_[k] = v.get<std::string>();
        }
    }
    if (j.contains("default") && !j["default"].is_null()) {
        if (!j["default"].is_string()) throw DataError(path.string() + ": \"default\" must be string or null");
        client.fallback_ = j["default"].get<std::string>();
    }
    if (j.contains("fail_keys")) {
        for (const auto& k : j["fail_keys"]) {
            if (!k.is_string()) throw DataError(path.string() + ": \"fail_keys\" entries must be strings");
            client.fail_keys_.push_back(k.get<std::string>());
        }
    }
    return client;
}

void ScriptedCompletionClient::set_response(std::string key, std::string text) {
    responses_[std::move(key)] = std::move(text);
}

void ScriptedCompletionClient::add_fail_key(std::string key) { fail_keys_.push_back(std::move(key)); }

CompletionResult ScriptedCompletionClient::respond(const std::string& prompt) {
    calls_.fetch_add(1);
    for (const auto& k : fail_keys_) {
        if (prompt.find(k) != std::string::npos) return CompletionResult::failure("scripted failure: " + k);
    }
    for (const auto& [k, text] : responses_) {
        if (prompt.find(k) != std::string::npos) return CompletionResult::success(text);
    }
    if (fallback_) return CompletionResult::success(*fallback_);
    return CompletionResult::failure("no scripted response matches prompt");
}

CompletionResult ScriptedCompletionClient::complete(const std::string& prompt, const std::optional<std::string>&) {
    return respond(prompt);
}

CompletionResult ScriptedCompletionClient::complete(const std::string& prompt) { return respond(prompt); }

namespace {

struct HttpCore {
    httplib::Client cli;
    std::string auth;
    std::mutex mu; // httplib clients are not safe for concurrent requests

    explicit HttpCore(const HttpClientConfig& cfg) : cli(cfg.endpoint) {
        cli.set_connection_timeout(0, cfg.timeout_ms * 1000LL);
        cli.set_read_timeout(0, cfg.timeout_ms * 1000LL);
        cli.set_write_timeout(0, cfg.timeout_ms * 1000LL);
        if (!cfg.api_key_env.empty()) {
            if (const char* key = std::getenv(cfg.api_key_env.c_str()); key && *key) auth = key;
        }
    }

    // POSTs body, retrying transport errors and 429/5xx with exponential
    // backoff; any other non-200 status fails immediately.
    json post(const char* path, const json& body, const RetryPolicy& retry) {
        std::lock_guard lock(mu);
        httplib::Headers headers;
        if (!auth.empty()) headers.emplace("Authorization", "Bearer " + auth);
        const std::string payload = body.dump();
        int delay = retry.backoff_base_ms;
        std::string last_error;
        for (int attempt = 0; attempt <= retry.max_retries; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(delay));
                delay = std::min(delay * 2, retry.backoff_cap_ms);
            }
            auto res = cli.Post(path, headers, payload, "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 200) {
                try {
                    return json::parse(res->body);
                } catch (const json::exception& e) {
                    throw ServiceError(std::string("malformed service response: ") + e.what());
                }
            }
            if (res->status == 429 || res->status >= 500) {
                last_error = "status " + std::to_string(res->status);
                continue;
            }
            throw ServiceError("service returned status " + std::to_string(res->status) + " for " + path);
        }
        throw ServiceError(std::string("service unreachable after retries (") + path + "): " + last_error);
    }
};

} // namespace

struct HttpEncoderClient::Impl {
    HttpCore core;
    explicit Impl(const HttpClientConfig& cfg) : core(cfg) {}
};

HttpEncoderClient::HttpEncoderClient(HttpClientConfig cfg, int dim, size_t max_batch)
    : cfg_(std::move(cfg)), dim_(dim), max_batch_(max_batch), impl_(std::make_unique<Impl>(cfg_)) {
    if (dim_ <= 0) throw ConfigError("encoder dim must be positive");
    if (max_batch_ == 0) throw ConfigError("encoder max_batch must be positive");
}

HttpEncoderClient::~HttpEncoderClient() = default;

std::vector<std::vector<float>> HttpEncoderClient::encode(const char* field, const std::vector<std::string>& items) {
    if (items.size() > max_batch_) throw ServiceError("encoder batch exceeds max_batch");
    json body;
    body[field] = items;
    json reply = impl_->core.post("/encode", body, cfg_.retry);
    if (!reply.is_object() || !reply.contains("vectors") || !reply["vectors"].is_array())
        throw ServiceError("encoder response missing \"vectors\"");
    const auto& vectors = reply["vectors"];
    if (vectors.size() != items.size())
        throw ServiceError("encoder returned " + std::to_string(vectors.size()) + " vectors for " +
                           std::to_string(items.size()) + " items");
    std::vector<std::vector<float>> out;
    out.reserve(items.size());
    for (const auto& row : vectors) {
        if (!row.is_array() || static_cast<int>(row.size()) != dim_)
            throw ServiceError("encoder vector has wrong dimension");
        std::vector<float> v;
        v.reserve(static_cast<size_t>(dim_));
        for (const auto& x : row) {
            if (!x.is_number()) throw ServiceError("encoder vector has non-numeric component");
            v.push_back(x.get<float>());
        }
        out.push_back(std::move(v));
    }
    return out;
}

std::vector<std::vector<float>> HttpEncoderClient::encode_texts(const std::vector<std::string>& texts) {
    return encode("texts", texts);
}

std::vector<std::vector<float>> HttpEncoderClient::encode_images(const std::vector<std::string>& image_refs) {
    return encode("image_refs", image_refs);
}

struct HttpGenerationClient::Impl {
    HttpCore core;
    explicit Impl(const HttpClientConfig& cfg) : core(cfg) {}
};

HttpGenerationClient::HttpGenerationClient(HttpClientConfig cfg)
    : cfg_(std::move(cfg)), impl_(std::make_unique<Impl>(cfg_)) {}

HttpGenerationClient::~HttpGenerationClient() = default;

CompletionResult HttpGenerationClient::complete(const std::string& prompt, const std::optional<std::string>& image_ref) {
    json body{{"prompt", prompt}, {"model", cfg_.model}, {"temperature", cfg_.temperature}};
    body["image_ref"] = image_ref ? json(*image_ref) : json(nullptr);
    try {
        json reply = impl_->core.post("/generate", body, cfg_.retry);
        if (!reply.is_object() || !reply.contains("text") || !reply["text"].is_string())
            return CompletionResult::failure("generation response missing \"text\"");
        return CompletionResult::success(reply["text"].get<std::string>());
    } catch (const ServiceError& e) {
        return CompletionResult::failure(e.what());
    }
}

struct HttpLlmClient::Impl {
    HttpCore core;
    explicit Impl(const HttpClientConfig& cfg) : core(cfg) {}
};

HttpLlmClient::HttpLlmClient(HttpClientConfig cfg) : cfg_(std::move(cfg)), impl_(std::make_unique<Impl>(cfg_)) {}

HttpLlmClient::~HttpLlmClient() = default;

CompletionResult HttpLlmClient::complete(const std::string& prompt) {
    json body{{"prompt", prompt}, {"model", cfg_.model}, {"temperature", cfg_.temperature}};
    try {
        json reply = impl_->core.post("/complete", body, cfg_.retry);
        if (!reply.is_object() || !reply.contains("text") || !reply["text"].is_string())
            return CompletionResult::failure("completion response missing \"text\"");
        return CompletionResult::success(reply["text"].get<std::string>());
    } catch (const ServiceError& e) {
        return CompletionResult::failure(e.what());
    }
}

} // namespace kgmel
