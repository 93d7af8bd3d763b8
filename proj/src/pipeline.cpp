#include "kgmel/pipeline.hpp"

#include <chrono>
#include <memory>
#include <set>

#include <nlohmann/json.hpp>

#include "kgmel/binio.hpp"
#include "kgmel/clients.hpp"
#include "kgmel/embed.hpp"
#include "kgmel/rerank.hpp"
#include "kgmel/retrieval.hpp"
#include "kgmel/training.hpp"
#include "kgmel/tripgen.hpp"
#include "kgmel/util.hpp"

namespace kgmel {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

uint64_t combine_hashes(std::initializer_list<uint64_t> hs) {
    ByteWriter w;
    for (uint64_t h : hs) w.u64(h);
    return fnv1a64(w.bytes());
}

uint64_t script_digest(const ClientConfig& c) {
    if (!c.is_mock() || c.script.empty()) return 0;
    return file_digest64(c.script);
}

std::unique_ptr<EncoderClient> make_encoder(const Config& cfg) {
    const ClientConfig& c = cfg.encoder;
    if (c.is_mock()) return std::make_unique<MockEncoderClient>(c.mock_seed, cfg.hyper.dprime, c.max_batch);
    HttpClientConfig hc{c.endpoint, c.model, c.temperature, c.timeout_ms, RetryPolicy{c.max_retries, 100, 2000},
                       c.api_key_env};
    return std::make_unique<HttpEncoderClient>(hc, cfg.hyper.dprime, c.max_batch);
}

std::unique_ptr<ScriptedCompletionClient> make_scripted(const ClientConfig& c) {
    if (c.script.empty()) return std::make_unique<ScriptedCompletionClient>();
    return std::make_unique<ScriptedCompletionClient>(ScriptedCompletionClient::from_file(c.script));
}

std::unique_ptr<GenerationClient> make_vlm(const Config& cfg) {
    const ClientConfig& c = cfg.vlm;
    if (c.is_mock()) return make_scripted(c);
    return std::make_unique<HttpGenerationClient>(HttpClientConfig{
        c.endpoint, c.model, c.temperature, c.timeout_ms, RetryPolicy{c.max_retries, 100, 2000}, c.api_key_env});
}

std::unique_ptr<LlmClient> make_llm(const Config& cfg) {
    const ClientConfig& c = cfg.llm;
    if (c.is_mock()) return make_scripted(c);
    return std::make_unique<HttpLlmClient>(HttpClientConfig{
        c.endpoint, c.model, c.temperature, c.timeout_ms, RetryPolicy{c.max_retries, 100, 2000}, c.api_key_env});
}

// Sidecar bookkeeping for one artifact directory.
struct StageIo {
    fs::path out;
    uint64_t config_hash;

    fs::path p(const char* name) const { return out / name; }
    fs::path meta_path(const std::string& stage) const { return out / (stage + ".meta.json"); }

    bool fresh(const std::string& stage, uint64_t input_hash, const std::vector<const char*>& outputs) const {
        std::error_code ec;
        if (!fs::exists(meta_path(stage), ec)) return false;
        json j;
        try {
            j = json::parse(read_file(meta_path(stage)));
        } catch (...) {
            return false;
        }
        if (!j.is_object()) return false;
        if (j.value("stage", std::string()) != stage) return false;
        if (j.value("input_hash", std::string()) != hex64(input_hash)) return false;
        if (j.value("config_hash", std::string()) != hex64(config_hash)) return false;
        for (const char* f : outputs)
            if (!fs::exists(p(f), ec)) return false;
        return true;
    }

    void clear(const std::string& stage) const {
        std::error_code ec;
        fs::remove(meta_path(stage), ec);
    }

    void mark(const std::string& stage, uint64_t input_hash) const {
        const json j{{"stage", stage}, {"input_hash", hex64(input_hash)}, {"config_hash", hex64(config_hash)}};
        write_file(meta_path(stage), j.dump() + "\n");
    }

    // Input digest for an artifact a later stage consumes.
    uint64_t require(const char* name, const char* producer) const {
        const fs::path path = p(name);
        if (!fs::exists(path))
            throw DataError("missing input " + path.string() + " (run the " + producer + " stage first)");
        return file_digest64(path);
    }
};

} // namespace

CorpusBundle load_corpus(const Config& cfg) {
    CorpusBundle b;
    const EntityStore raw = EntityStore::load(cfg.entities_path);
    for (const Entity& e : raw.entities()) b.store.add(cap_triples(e, static_cast<size_t>(cfg.triple_cap)));
    b.mentions = MentionSet::load(cfg.mentions_path);

    std::set<std::string> sentences;
    for (const Mention& m : b.mentions.items()) sentences.insert(m.sentence);
    b.stats = {b.store.size(), b.mentions.size(), sentences.size(), b.store.total_triples(),
               b.store.relation_vocabulary().size()};
    return b;
}

PipelineResult run_pipeline(const Config& cfg) {
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    const StageIo io{cfg.out_dir, cfg.hash()};

    const CorpusBundle bundle = load_corpus(cfg);
    const uint64_t ent_digest = file_digest64(cfg.entities_path);
    const uint64_t men_digest = file_digest64(cfg.mentions_path);

    const std::set<std::string> enabled(cfg.stages.begin(), cfg.stages.end());
    PipelineResult res;

    // Runs one stage under the cache protocol, tagging errors with its name.
    const auto stage = [&](const char* name, auto&& input_hash_fn, const std::vector<const char*>& outputs,
                           auto&& body) {
        if (!enabled.count(name)) return;
        try {
            const uint64_t in = input_hash_fn();
            if (io.fresh(name, in, outputs)) {
                res.outcomes.push_back({name, true, 0.0});
                return;
            }
            io.clear(name);
            const auto t0 = std::chrono::steady_clock::now();
            body();
            io.mark(name, in);
            const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
            res.outcomes.push_back({name, false, dt.count()});
        } catch (const ConfigError& e) {
            throw ConfigError("stage " + std::string(name) + ": " + e.what());
        } catch (const ServiceError& e) {
            throw ServiceError("stage " + std::string(name) + ": " + e.what());
        } catch (const DivergenceError& e) {
            throw DivergenceError("stage " + std::string(name) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError("stage " + std::string(name) + ": " + e.what());
        }
    };

    stage(
        "gen", [&] { return combine_hashes({men_digest, script_digest(cfg.vlm)}); },
        {artifact::kProfiles},
        [&] {
            const auto client = make_vlm(cfg);
            ProfileMap profiles;
            generate_mention_triples(bundle.mentions, *client, profiles, cfg.parallelism);
            save_profiles(profiles, io.p(artifact::kProfiles));
        });

    stage(
        "embed",
        [&] { return combine_hashes({ent_digest, men_digest, io.require(artifact::kProfiles, "gen")}); },
        {artifact::kEmbeddings},
        [&] {
            const ProfileMap profiles = load_profiles(io.p(artifact::kProfiles));
            const auto client = make_encoder(cfg);
            const EmbeddingTable table = materialize_embeddings(bundle.store, bundle.mentions, profiles, *client);
            table.save(io.p(artifact::kEmbeddings));
        });

    stage(
        "train",
        [&] {
            return combine_hashes({ent_digest, men_digest, io.require(artifact::kProfiles, "gen"),
                                   io.require(artifact::kEmbeddings, "embed")});
        },
        {artifact::kCheckpoint, artifact::kTrainLog},
        [&] {
            const ProfileMap profiles = load_profiles(io.p(artifact::kProfiles));
            const EmbeddingTable table = EmbeddingTable::load(io.p(artifact::kEmbeddings));
            TrainConfig tc;
            tc.lr = cfg.training.lr;
            tc.weight_decay = cfg.training.weight_decay;
            tc.epochs = cfg.training.epochs;
            tc.batch_size = cfg.training.batch_size;
            tc.checkpoint_every = cfg.training.checkpoint_every;
            tc.seed = cfg.seed;
            tc.checkpoint_path = io.p(artifact::kCheckpoint);
            tc.log_path = io.p(artifact::kTrainLog);
            train(bundle.store, bundle.mentions, profiles, table, cfg.hyper, tc, io.config_hash);
        });

    stage(
        "retrieve",
        [&] {
            return combine_hashes({ent_digest, men_digest, io.require(artifact::kProfiles, "gen"),
                                   io.require(artifact::kEmbeddings, "embed"),
                                   io.require(artifact::kCheckpoint, "train")});
        },
        {artifact::kIndex, artifact::kCandidates},
        [&] {
            const ProfileMap profiles = load_profiles(io.p(artifact::kProfiles));
            const EmbeddingTable table = EmbeddingTable::load(io.p(artifact::kEmbeddings));
            const Checkpoint ck = Checkpoint::load(io.p(artifact::kCheckpoint));
            // ck.hyper pins the model semantics; topk stays a serving knob.
            const uint64_t bh = compose_build_hash(ck.digest(), ent_digest, table.digest());
            const EntityIndex index = EntityIndex::build(bundle.store, table, ck.params, ck.hyper, bh);
            index.save(io.p(artifact::kIndex));
            const auto lists = retrieve_all(bundle.mentions, profiles, table, ck.params, ck.hyper, index,
                                            cfg.hyper.topk, cfg.parallelism);
            save_candidates(lists, io.p(artifact::kCandidates));
        });

    stage(
        "rerank",
        [&] {
            return combine_hashes({ent_digest, men_digest, io.require(artifact::kProfiles, "gen"),
                                   io.require(artifact::kEmbeddings, "embed"),
                                   io.require(artifact::kCandidates, "retrieve"), script_digest(cfg.llm)});
        },
        {artifact::kReranked, artifact::kDecisions},
        [&] {
            const ProfileMap profiles = load_profiles(io.p(artifact::kProfiles));
            const EmbeddingTable table = EmbeddingTable::load(io.p(artifact::kEmbeddings));
            const auto lists = load_candidates(io.p(artifact::kCandidates));
            const auto client = make_llm(cfg);
            const auto results =
                rerank_all(bundle.mentions, profiles, lists, bundle.store, table, *client, cfg.hyper, cfg.parallelism);
            save_decisions(results, io.p(artifact::kDecisions));
            std::map<std::string, CandidateList> merged;
            for (const auto& [id, r] : results) merged.emplace(id, r.list);
            save_candidates(merged, io.p(artifact::kReranked));
        });

    const bool have_rerank = fs::exists(io.p(artifact::kReranked));
    stage(
        "eval",
        [&] {
            return combine_hashes({men_digest, io.require(artifact::kCandidates, "retrieve"),
                                   have_rerank ? file_digest64(io.p(artifact::kReranked)) : 0});
        },
        have_rerank
            ? std::vector<const char*>{artifact::kRetrievalReport, artifact::kRerankReport, artifact::kDelta}
            : std::vector<const char*>{artifact::kRetrievalReport},
        [&] {
            const auto lists = load_candidates(io.p(artifact::kCandidates));
            const auto retrieval_records = rank_records(bundle.mentions, lists);
            save_report(compute_report(retrieval_records, cfg.eval_ks), io.p(artifact::kRetrievalReport));
            if (have_rerank) {
                const auto reranked = load_candidates(io.p(artifact::kReranked));
                const auto rerank_records = rank_records(bundle.mentions, reranked);
                save_report(compute_report(rerank_records, cfg.eval_ks), io.p(artifact::kRerankReport));
                const StageDelta delta = compare_stages(retrieval_records, rerank_records, cfg.eval_ks);
                write_file(io.p(artifact::kDelta), format_delta_table(delta));
            } else {
                std::error_code ec;
                fs::remove(io.p(artifact::kRerankReport), ec);
                fs::remove(io.p(artifact::kDelta), ec);
            }
        });

    if (enabled.count("eval")) {
        res.retrieval_report = load_report(io.p(artifact::kRetrievalReport));
        if (fs::exists(io.p(artifact::kRerankReport))) {
            res.rerank_report = load_report(io.p(artifact::kRerankReport));
            res.delta_table = read_file(io.p(artifact::kDelta));
        }
    }
    return res;
}

} // namespace kgmel
