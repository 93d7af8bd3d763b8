#include "kgmel/config.hpp"

#include <algorithm>
#include <set>

#include "kgmel/util.hpp"

namespace kgmel {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& ctx, const std::string& msg) {
    throw ConfigError("config: " + ctx + ": " + msg);
}

void expect_object(const json& j, const std::string& ctx) {
    if (!j.is_object()) fail(ctx, "expected an object");
}

void reject_unknown(const json& j, const std::string& ctx, std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const bool known = std::any_of(allowed.begin(), allowed.end(),
                                       [&](const char* k) { return it.key() == k; });
        if (!known) fail(ctx, "unknown key \"" + it.key() + "\"");
    }
}

double as_number(const json& j, const std::string& ctx) {
    if (!j.is_number()) fail(ctx, "expected a number");
    return j.get<double>();
}

int as_int(const json& j, const std::string& ctx) {
    if (!j.is_number_integer()) fail(ctx, "expected an integer");
    return j.get<int>();
}

uint64_t as_u64(const json& j, const std::string& ctx) {
    if (!(j.is_number_unsigned() || (j.is_number_integer() && j.get<int64_t>() >= 0)))
        fail(ctx, "expected a non-negative integer");
    return j.get<uint64_t>();
}

std::string as_string(const json& j, const std::string& ctx) {
    if (!j.is_string()) fail(ctx, "expected a string");
    return j.get<std::string>();
}

// Applies fn to j[key] when present.
template <typename F>
void maybe(const json& j, const char* key, F&& fn) {
    if (auto it = j.find(key); it != j.end()) fn(*it);
}

void parse_client(const json& j, const std::string& ctx, ClientConfig& out) {
    expect_object(j, ctx);
    reject_unknown(j, ctx,
                   {"mode", "seed", "script", "endpoint", "model", "temperature", "timeout_ms", "max_retries",
                    "api_key_env", "max_batch"});
    maybe(j, "mode", [&](const json& v) { out.mode = as_string(v, ctx + ".mode"); });
    maybe(j, "seed", [&](const json& v) { out.mock_seed = as_u64(v, ctx + ".seed"); });
    maybe(j, "script", [&](const json& v) { out.script = as_string(v, ctx + ".script"); });
    maybe(j, "endpoint", [&](const json& v) { out.endpoint = as_string(v, ctx + ".endpoint"); });
    maybe(j, "model", [&](const json& v) { out.model = as_string(v, ctx + ".model"); });
    maybe(j, "temperature", [&](const json& v) { out.temperature = as_number(v, ctx + ".temperature"); });
    maybe(j, "timeout_ms", [&](const json& v) { out.timeout_ms = as_int(v, ctx + ".timeout_ms"); });
    maybe(j, "max_retries", [&](const json& v) { out.max_retries = as_int(v, ctx + ".max_retries"); });
    maybe(j, "api_key_env", [&](const json& v) { out.api_key_env = as_string(v, ctx + ".api_key_env"); });
    maybe(j, "max_batch", [&](const json& v) {
        const int b = as_int(v, ctx + ".max_batch");
        if (b < 1) fail(ctx + ".max_batch", "must be >= 1");
        out.max_batch = static_cast<size_t>(b);
    });
}

json client_json(const ClientConfig& c) {
    return json{{"mode", c.mode},
                {"seed", c.mock_seed},
                {"script", c.script.generic_string()},
                {"endpoint", c.endpoint},
                {"model", c.model},
                {"temperature", c.temperature},
                {"timeout_ms", c.timeout_ms},
                {"max_retries", c.max_retries},
                {"api_key_env", c.api_key_env},
                {"max_batch", static_cast<uint64_t>(c.max_batch)}};
}

void validate_client(const ClientConfig& c, const std::string& ctx) {
    if (c.mode != "mock" && c.mode != "http") fail(ctx, "mode must be \"mock\" or \"http\"");
    if (c.mode == "http" && c.endpoint.empty()) fail(ctx, "http mode requires an endpoint");
    if (c.temperature < 0.0) fail(ctx, "temperature must be non-negative");
    if (c.timeout_ms < 1) fail(ctx, "timeout_ms must be >= 1");
    if (c.max_retries < 0) fail(ctx, "max_retries must be >= 0");
    if (c.max_batch < 1) fail(ctx, "max_batch must be >= 1");
}

std::vector<int> parse_int_list(const json& j, const std::string& ctx) {
    if (!j.is_array() || j.empty()) fail(ctx, "expected a non-empty array of integers");
    std::vector<int> out;
    for (const auto& v : j) out.push_back(as_int(v, ctx));
    return out;
}

void resolve(std::filesystem::path& p, const std::filesystem::path& base) {
    if (!p.empty() && p.is_relative()) p = base / p;
}

} // namespace

Config::Config() {
    encoder.api_key_env = "KGMEL_ENCODER_KEY";
    vlm.api_key_env = "KGMEL_VLM_KEY";
    llm.api_key_env = "KGMEL_LLM_KEY";
}

Config Config::load(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError("config: " + path.string() + ": " + e.what());
    }
    Config cfg = from_json(j);
    const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    resolve(cfg.entities_path, base);
    resolve(cfg.mentions_path, base);
    resolve(cfg.out_dir, base);
    resolve(cfg.encoder.script, base);
    resolve(cfg.vlm.script, base);
    resolve(cfg.llm.script, base);
    return cfg;
}

Config Config::from_json(const json& j) {
    expect_object(j, "top level");
    reject_unknown(j, "top level",
                   {"paths", "seed", "stages", "hyper", "training", "eval", "triple_cap", "parallelism", "clients"});

    Config cfg;

    maybe(j, "paths", [&](const json& p) {
        expect_object(p, "paths");
        reject_unknown(p, "paths", {"entities", "mentions", "out"});
        maybe(p, "entities", [&](const json& v) { cfg.entities_path = as_string(v, "paths.entities"); });
        maybe(p, "mentions", [&](const json& v) { cfg.mentions_path = as_string(v, "paths.mentions"); });
        maybe(p, "out", [&](const json& v) { cfg.out_dir = as_string(v, "paths.out"); });
    });

    maybe(j, "seed", [&](const json& v) { cfg.seed = as_u64(v, "seed"); });

    maybe(j, "stages", [&](const json& v) {
        if (!v.is_array()) fail("stages", "expected an array of stage names");
        cfg.stages.clear();
        for (const auto& s : v) cfg.stages.push_back(as_string(s, "stages"));
    });

    maybe(j, "hyper", [&](const json& h) {
        expect_object(h, "hyper");
        reject_unknown(h, "hyper",
                       {"beta", "tau_att", "tau_cl", "lambda_mm", "lambda_ee", "p", "topk", "n", "dprime", "d"});
        maybe(h, "beta", [&](const json& v) { cfg.hyper.beta = as_number(v, "hyper.beta"); });
        maybe(h, "tau_att", [&](const json& v) { cfg.hyper.tau_att = as_number(v, "hyper.tau_att"); });
        maybe(h, "tau_cl", [&](const json& v) { cfg.hyper.tau_cl = as_number(v, "hyper.tau_cl"); });
        maybe(h, "lambda_mm", [&](const json& v) { cfg.hyper.lambda_mm = as_number(v, "hyper.lambda_mm"); });
        maybe(h, "lambda_ee", [&](const json& v) { cfg.hyper.lambda_ee = as_number(v, "hyper.lambda_ee"); });
        maybe(h, "p", [&](const json& v) { cfg.hyper.p = as_int(v, "hyper.p"); });
        maybe(h, "topk", [&](const json& v) { cfg.hyper.topk = as_int(v, "hyper.topk"); });
        maybe(h, "n", [&](const json& v) { cfg.hyper.n = as_int(v, "hyper.n"); });
        maybe(h, "dprime", [&](const json& v) { cfg.hyper.dprime = as_int(v, "hyper.dprime"); });
        maybe(h, "d", [&](const json& v) { cfg.hyper.d = as_int(v, "hyper.d"); });
    });

    maybe(j, "training", [&](const json& t) {
        expect_object(t, "training");
        reject_unknown(t, "training", {"lr", "weight_decay", "epochs", "batch_size", "checkpoint_every"});
        maybe(t, "lr", [&](const json& v) { cfg.training.lr = as_number(v, "training.lr"); });
        maybe(t, "weight_decay", [&](const json& v) { cfg.training.weight_decay = as_number(v, "training.weight_decay"); });
        maybe(t, "epochs", [&](const json& v) { cfg.training.epochs = as_int(v, "training.epochs"); });
        maybe(t, "batch_size", [&](const json& v) { cfg.training.batch_size = as_int(v, "training.batch_size"); });
        maybe(t, "checkpoint_every",
              [&](const json& v) { cfg.training.checkpoint_every = as_int(v, "training.checkpoint_every"); });
    });

    maybe(j, "eval", [&](const json& e) {
        expect_object(e, "eval");
        reject_unknown(e, "eval", {"k"});
        maybe(e, "k", [&](const json& v) { cfg.eval_ks = parse_int_list(v, "eval.k"); });
    });

    maybe(j, "triple_cap", [&](const json& v) { cfg.triple_cap = as_int(v, "triple_cap"); });
    maybe(j, "parallelism", [&](const json& v) { cfg.parallelism = as_int(v, "parallelism"); });

    maybe(j, "clients", [&](const json& c) {
        expect_object(c, "clients");
        reject_unknown(c, "clients", {"encoder", "vlm", "llm"});
        maybe(c, "encoder", [&](const json& v) { parse_client(v, "clients.encoder", cfg.encoder); });
        maybe(c, "vlm", [&](const json& v) { parse_client(v, "clients.vlm", cfg.vlm); });
        maybe(c, "llm", [&](const json& v) { parse_client(v, "clients.llm", cfg.llm); });
    });

    // Normalize: ks sorted and unique, stages in canonical order.
    std::sort(cfg.eval_ks.begin(), cfg.eval_ks.end());
    cfg.eval_ks.erase(std::unique(cfg.eval_ks.begin(), cfg.eval_ks.end()), cfg.eval_ks.end());
    const std::set<std::string> wanted(cfg.stages.begin(), cfg.stages.end());
    if (wanted.size() != cfg.stages.size()) fail("stages", "duplicate stage name");
    std::vector<std::string> ordered;
    for (const auto& s : kPipelineStages)
        if (wanted.count(s)) ordered.push_back(s);
    if (ordered.size() != wanted.size()) {
        for (const auto& s : wanted)
            if (std::find(kPipelineStages.begin(), kPipelineStages.end(), s) == kPipelineStages.end())
                fail("stages", "unknown stage \"" + s + "\"");
    }
    cfg.stages = std::move(ordered);

    cfg.validate();
    return cfg;
}

json Config::to_json() const {
    return json{
        {"paths",
         {{"entities", entities_path.generic_string()},
          {"mentions", mentions_path.generic_string()},
          {"out", out_dir.generic_string()}}},
        {"seed", seed},
        {"stages", stages},
        {"hyper",
         {{"beta", hyper.beta},
          {"tau_att", hyper.tau_att},
          {"tau_cl", hyper.tau_cl},
          {"lambda_mm", hyper.lambda_mm},
          {"lambda_ee", hyper.lambda_ee},
          {"p", hyper.p},
          {"topk", hyper.topk},
          {"n", hyper.n},
          {"dprime", hyper.dprime},
          {"d", hyper.d}}},
        {"training",
         {{"lr", training.lr},
          {"weight_decay", training.weight_decay},
          {"epochs", training.epochs},
          {"batch_size", training.batch_size},
          {"checkpoint_every", training.checkpoint_every}}},
        {"eval", {{"k", eval_ks}}},
        {"triple_cap", triple_cap},
        {"parallelism", parallelism},
        {"clients", {{"encoder", client_json(encoder)}, {"vlm", client_json(vlm)}, {"llm", client_json(llm)}}}};
}

uint64_t Config::hash() const {
    json j = to_json();
    j.erase("stages");
    return fnv1a64(j.dump());
}

void Config::validate() const {
    hyper.validate();
    if (entities_path.empty()) fail("paths.entities", "must not be empty");
    if (mentions_path.empty()) fail("paths.mentions", "must not be empty");
    if (out_dir.empty()) fail("paths.out", "must not be empty");
    if (stages.empty()) fail("stages", "at least one stage is required");
    if (training.lr < 0.0) fail("training.lr", "must be non-negative");
    if (training.weight_decay < 0.0) fail("training.weight_decay", "must be non-negative");
    if (training.epochs < 1) fail("training.epochs", "must be >= 1");
    if (training.batch_size < 2) fail("training.batch_size", "must be >= 2");
    if (training.checkpoint_every < 0) fail("training.checkpoint_every", "must be >= 0");
    if (eval_ks.empty()) fail("eval.k", "at least one cutoff is required");
    for (int k : eval_ks)
        if (k < 1) fail("eval.k", "cutoffs must be >= 1");
    if (triple_cap < 1) fail("triple_cap", "must be >= 1");
    if (parallelism < 1) fail("parallelism", "must be >= 1");
    validate_client(encoder, "clients.encoder");
    validate_client(vlm, "clients.vlm");
    validate_client(llm, "clients.llm");
}

} // namespace kgmel
