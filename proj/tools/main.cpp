// kgmel: generate -> retrieve -> rerank multimodal entity linking.
//
// Subcommands map onto pipeline stages; `pipeline` runs the configured
// selection end to end with stage caching. Exit codes: 0 success, 2 config
// error, 3 data error, 4 external-service error, 5 divergence.

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "kgmel/config.hpp"
#include "kgmel/pipeline.hpp"
#include "kgmel/training.hpp"
#include "kgmel/util.hpp"

namespace {

using namespace kgmel;

struct Options {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> stages;
    std::optional<std::string> ks;
    std::optional<double> beta, tau_att, tau_cl, lambda_mm, lambda_ee;
    std::optional<int> topk, p, n;
};

void add_common_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--config", o.config_path, "Config JSON file");
    cmd->add_option("--seed", o.seed, "Seed for all randomness");
    cmd->add_option("--out", o.out, "Artifact directory");
    cmd->add_option("--beta", o.beta, "Text/image attention balance in [0,1]");
    cmd->add_option("--tau-att", o.tau_att, "Attention temperature");
    cmd->add_option("--tau-cl", o.tau_cl, "Contrastive temperature");
    cmd->add_option("--lambda-mm", o.lambda_mm, "Mention-mention loss weight");
    cmd->add_option("--lambda-ee", o.lambda_ee, "Entity-entity loss weight");
    cmd->add_option("--topk", o.topk, "Retrieval candidates per mention");
    cmd->add_option("--p", o.p, "Triples kept by top-p attention masking");
    cmd->add_option("--n", o.n, "Per-label cutoff for rerank triple filtering");
}

std::vector<int> parse_k_list(const std::string& s) {
    std::vector<int> ks;
    for (const std::string& part : split(s, ',')) {
        const std::string t = trim(part);
        size_t pos = 0;
        int v = 0;
        try {
            v = std::stoi(t, &pos);
        } catch (const std::exception&) {
            throw ConfigError("--k: not an integer: \"" + t + "\"");
        }
        if (pos != t.size()) throw ConfigError("--k: not an integer: \"" + t + "\"");
        ks.push_back(v);
    }
    return ks;
}

Config effective_config(const Options& o) {
    Config cfg = o.config_path.empty() ? Config() : Config::load(o.config_path);
    if (o.seed) cfg.seed = *o.seed;
    if (o.out) cfg.out_dir = *o.out;
    if (o.beta) cfg.hyper.beta = *o.beta;
    if (o.tau_att) cfg.hyper.tau_att = *o.tau_att;
    if (o.tau_cl) cfg.hyper.tau_cl = *o.tau_cl;
    if (o.lambda_mm) cfg.hyper.lambda_mm = *o.lambda_mm;
    if (o.lambda_ee) cfg.hyper.lambda_ee = *o.lambda_ee;
    if (o.topk) cfg.hyper.topk = *o.topk;
    if (o.p) cfg.hyper.p = *o.p;
    if (o.n) cfg.hyper.n = *o.n;
    if (o.ks) cfg.eval_ks = parse_k_list(*o.ks);
    if (o.stages) {
        cfg.stages.clear();
        for (const std::string& part : split(*o.stages, ',')) cfg.stages.push_back(trim(part));
        // reparse normalizes order and rejects unknown names
        cfg = Config::from_json(cfg.to_json());
    }
    cfg.validate();
    return cfg;
}

int run_ingest(const Config& cfg) {
    const CorpusBundle b = load_corpus(cfg);
    const nlohmann::json j{{"entities", b.stats.entities},
                           {"mentions", b.stats.mentions},
                           {"sentences", b.stats.sentences},
                           {"triples", b.stats.triples},
                           {"relations", b.stats.relations}};
    std::printf("%s\n", j.dump(2).c_str());
    return 0;
}

int run_stages(Config cfg, const std::vector<std::string>& stages) {
    if (!stages.empty()) cfg.stages = stages;
    const PipelineResult res = run_pipeline(cfg);
    for (const StageOutcome& oc : res.outcomes) {
        if (oc.cached)
            std::printf("stage %s: cached\n", oc.stage.c_str());
        else
            std::printf("stage %s: ran in %.2fs\n", oc.stage.c_str(), oc.seconds);
    }
    if (!res.delta_table.empty()) {
        std::printf("\n%s", res.delta_table.c_str());
    } else if (res.retrieval_report) {
        const EvalReport& r = *res.retrieval_report;
        std::printf("\nretrieval: n=%llu mrr=%.4f", static_cast<unsigned long long>(r.n), r.mrr);
        for (const auto& [k, v] : r.hits) std::printf(" hits@%d=%.4f", k, v);
        std::printf("\n");
    }
    return 0;
}

int run_grad_check(const Config& cfg) {
    HyperParams h;
    h.beta = cfg.hyper.beta;
    h.tau_att = cfg.hyper.tau_att;
    h.tau_cl = cfg.hyper.tau_cl;
    h.lambda_mm = cfg.hyper.lambda_mm;
    h.lambda_ee = cfg.hyper.lambda_ee;
    h.p = 2;
    h.dprime = 6;
    h.d = 5;

    double worst = 0.0;
    for (uint64_t i = 0; i < 20; ++i) {
        const uint64_t seed = cfg.seed + i;
        const auto [m_sides, e_sides] = random_grad_fixture(seed, 3, 3, h.dprime);
        const Params<double> params = Params<double>::init(seed, h);
        worst = std::max(worst, grad_check(m_sides, e_sides, params, h, 1e-5));
    }
    std::printf("max relative error: %.3e\n", worst);
    return worst < 1e-4 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multimodal entity linking: triple generation, contrastive retrieval, LLM reranking"};
    app.require_subcommand(1);

    Options o;
    CLI::App* ingest = app.add_subcommand("ingest", "Validate the corpus and print its stats");
    CLI::App* gen = app.add_subcommand("gen-triples", "Generate mention triples via the VLM client");
    CLI::App* embed = app.add_subcommand("embed", "Materialize base embeddings via the encoder client");
    CLI::App* train_cmd = app.add_subcommand("train", "Train the fusion encoder");
    CLI::App* retrieve = app.add_subcommand("retrieve", "Build the entity index and retrieve candidates");
    CLI::App* rerank = app.add_subcommand("rerank", "Rerank candidates via the LLM client");
    CLI::App* eval_cmd = app.add_subcommand("eval", "Score retrieval and rerank outputs");
    CLI::App* pipeline = app.add_subcommand("pipeline", "Run the configured stages end to end");
    CLI::App* gradcheck = app.add_subcommand("grad-check", "Verify analytic gradients against finite differences");

    for (CLI::App* cmd : {ingest, gen, embed, train_cmd, retrieve, rerank, eval_cmd, pipeline, gradcheck})
        add_common_flags(cmd, o);
    eval_cmd->add_option("--k", o.ks, "Comma-separated HITS@k cutoffs");
    pipeline->add_option("--k", o.ks, "Comma-separated HITS@k cutoffs");
    pipeline->add_option("--stages", o.stages, "Comma-separated stage subset to run");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }

    try {
        const Config cfg = effective_config(o);
        if (ingest->parsed()) return run_ingest(cfg);
        if (gen->parsed()) return run_stages(cfg, {"gen"});
        if (embed->parsed()) return run_stages(cfg, {"embed"});
        if (train_cmd->parsed()) return run_stages(cfg, {"train"});
        if (retrieve->parsed()) return run_stages(cfg, {"retrieve"});
        if (rerank->parsed()) return run_stages(cfg, {"rerank"});
        if (eval_cmd->parsed()) return run_stages(cfg, {"eval"});
        if (pipeline->parsed()) return run_stages(cfg, {});
        if (gradcheck->parsed()) return run_grad_check(cfg);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const ServiceError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 5;
    } catch (const DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
