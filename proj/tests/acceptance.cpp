// Acceptance gate: ten checks covering gradients, forward equations,
// retrieval and filtering exactness, metrics, the merge law, prompt
// fidelity, the synthetic end-to-end run, determinism, and binary format
// round-trips. One PASS/FAIL line per criterion; exit 0 only when all pass.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kgmel/binio.hpp"
#include "kgmel/clients.hpp"
#include "kgmel/config.hpp"
#include "kgmel/corpus.hpp"
#include "kgmel/embed.hpp"
#include "kgmel/encoder.hpp"
#include "kgmel/eval.hpp"
#include "kgmel/pipeline.hpp"
#include "kgmel/rerank.hpp"
#include "kgmel/retrieval.hpp"
#include "kgmel/training.hpp"
#include "kgmel/tripgen.hpp"
#include "kgmel/util.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"
#include "support/tmpdir.hpp"

using namespace kgmel;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

Vec<float> random_vec(Rng& rng, int n) {
    Vec<float> v(n);
    for (int i = 0; i < n; ++i) v[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    return v;
}

Mat<float> random_mat(Rng& rng, int r, int c) {
    Mat<float> m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = static_cast<float>(rng.uniform(-1.0, 1.0));
    return m;
}

// 1. Analytic gradients of the full loss vs central differences.
Outcome crit_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        HyperParams h;
        h.dprime = 4 + static_cast<int>(seed % 5); // <= 8
        h.d = 3 + static_cast<int>(seed % 4);      // <= 6
        h.p = 2;
        const auto [m_sides, e_sides] = random_grad_fixture(seed, 3, 3, h.dprime);
        const Params<double> params = Params<double>::init(seed + 1000, h);
        worst = std::max(worst, grad_check(m_sides, e_sides, params, h, 1e-5));
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-4 && secs < 60.0,
            fmt("max rel err %.3e over 20 seeds (limit 1e-4), %.1fs (limit 60s)", worst, secs)};
}

// 2. Forward primitives vs naive-loop oracles plus the exact identities.
Outcome crit_forward() {
    if (sigmoid(0.0f) != 0.5f) return {false, "sigmoid(0) != 0.5"};

    Rng rng = Rng::keyed(29, 0xf0f0);
    double worst = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
        HyperParams h;
        h.dprime = 2 + static_cast<int>(rng.below(5));
        h.d = 2 + static_cast<int>(rng.below(5));
        const int k = 1 + static_cast<int>(rng.below(5));
        h.p = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(k) + 2));

        SideEncoding<float> enc;
        enc.T = random_vec(rng, h.dprime);
        enc.V = random_vec(rng, h.dprime);
        enc.R = random_mat(rng, k, h.dprime);
        enc.O = random_mat(rng, k, h.dprime);
        const Params<float> params = Params<float>::init(1000 + static_cast<uint64_t>(inst), h);

        const Mat<float> Zt = encode_triples(enc, params);
        const Mat<float> Zt_ref = oracle::mlp_triples_ref(enc, params);
        worst = std::max(worst, static_cast<double>((Zt - Zt_ref).cwiseAbs().maxCoeff()));

        const Vec<float> s = attention_scores(Zt, enc.T, enc.V, h);
        const Vec<float> s_ref = oracle::attention_ref(Zt, enc.T, enc.V, h.beta, h.tau_att);
        worst = std::max(worst, static_cast<double>((s - s_ref).cwiseAbs().maxCoeff()));

        const Vec<float> shat = top_p_mask(s, h.p);
        const Vec<float> shat_ref = oracle::top_p_mask_ref(s, h.p);
        worst = std::max(worst, static_cast<double>((shat - shat_ref).cwiseAbs().maxCoeff()));

        const Vec<float> Z = aggregate_triples(shat, Zt);
        const Vec<float> Z_ref = oracle::aggregate_ref(Zt, shat);
        worst = std::max(worst, static_cast<double>((Z - Z_ref).cwiseAbs().maxCoeff()));

        const Vec<float> X = gated_fusion(enc.T, enc.V, Z, params);
        const Vec<float> X_ref = oracle::fuse_ref(enc, Z, params);
        worst = std::max(worst, static_cast<double>((X - X_ref).cwiseAbs().maxCoeff()));

        // zeroed MLP leaves the residual path alone, bit for bit
        Params<float> zero = params;
        zero.W1.setZero();
        zero.b1.setZero();
        zero.W2.setZero();
        zero.b2.setZero();
        const Mat<float> res = encode_triples(enc, zero);
        if (!(res.array() == enc.O.array()).all()) return {false, "residual identity broken with zero MLP"};
    }
    return {worst < 1e-6, fmt("100 instances, worst abs deviation %.3e (limit 1e-6)", worst)};
}

// 3. retrieve_topk vs full-sort oracle, ties included, exact.
Outcome crit_retrieval() {
    const auto t0 = std::chrono::steady_clock::now();
    testing::ScopedTempDir tmp("acc_retrieval");
    Rng rng = Rng::keyed(31, 0xacce);
    const int Ks[4] = {1, 5, 16, 64};
    int mismatches = 0;
    for (int inst = 0; inst < 1000; ++inst) {
        const int n = 1 + static_cast<int>(rng.below(50));
        const int d = 1 + static_cast<int>(rng.below(8));
        const int K = Ks[inst % 4];

        std::vector<std::string> qids;
        for (int i = 0; i < n; ++i) qids.push_back("Q" + std::to_string(i + 1));
        std::sort(qids.begin(), qids.end());

        Mat<float> X(n, d);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < d; ++c) X(i, c) = static_cast<float>(static_cast<int>(rng.below(7)) - 3);
        if (inst % 5 == 0)
            for (int i = 2; i < n; i += 2) X.row(i) = X.row(0); // planted score ties
        Vec<float> q(d);
        for (int c = 0; c < d; ++c) q[c] = static_cast<float>(static_cast<int>(rng.below(7)) - 3);

        ByteWriter w;
        w.raw("KGIX");
        w.u32(1);
        w.u64(0);
        w.u32(static_cast<uint32_t>(d));
        w.u64(static_cast<uint64_t>(n));
        for (int i = 0; i < n; ++i) {
            w.str(qids[static_cast<size_t>(i)]);
            for (int c = 0; c < d; ++c) w.f32(X(i, c));
        }
        const fs::path p = tmp.file("inst.kgix");
        write_file(p, w.take());
        const EntityIndex index = EntityIndex::load(p);

        const CandidateList got = retrieve_topk(q, index, K);
        const auto want = oracle::topk_ref(qids, X, q, K);
        bool same = got.ranked.size() == want.size();
        for (size_t i = 0; same && i < want.size(); ++i)
            same = got.ranked[i].qid == want[i].qid && got.ranked[i].score == want[i].score;
        if (!same) ++mismatches;
    }
    const double secs = seconds_since(t0);
    return {mismatches == 0 && secs < 30.0,
            fmt("1000 instances K in {1,5,16,64}, %d mismatches, %.1fs (limit 30s)", mismatches, secs)};
}

// 4. Triple filtering vs the exhaustive similarity-table oracle.
Outcome crit_filtering() {
    Rng rng = Rng::keyed(37, 0xf117);
    std::vector<std::string> rels, tails;
    for (int i = 0; i < 8; ++i) rels.push_back("rel" + std::to_string(i));
    for (int i = 0; i < 8; ++i) tails.push_back("tail" + std::to_string(i));
    EmbeddingTable table(3);
    for (const auto& l : rels) {
        std::vector<float> v(3);
        for (auto& x : v) x = static_cast<float>(static_cast<int>(rng.below(7)) - 3);
        table.insert("t:" + l, v);
    }
    for (const auto& l : tails) {
        std::vector<float> v(3);
        for (auto& x : v) x = static_cast<float>(static_cast<int>(rng.below(7)) - 3);
        table.insert("t:" + l, v);
    }

    int mismatches = 0;
    for (int inst = 0; inst < 200; ++inst) {
        const int ncand = 1 + static_cast<int>(rng.below(4));
        std::vector<Entity> ents(static_cast<size_t>(ncand));
        std::vector<const Entity*> cands;
        for (int e = 0; e < ncand; ++e) {
            ents[static_cast<size_t>(e)].qid = "Q" + std::to_string(e + 1);
            ents[static_cast<size_t>(e)].name = "E" + std::to_string(e + 1);
            const int nt = static_cast<int>(rng.below(5));
            for (int t = 0; t < nt; ++t)
                ents[static_cast<size_t>(e)].triples.push_back({ents[static_cast<size_t>(e)].qid,
                                                                rels[rng.below(rels.size())],
                                                                tails[rng.below(tails.size())]});
            cands.push_back(&ents[static_cast<size_t>(e)]);
        }
        std::vector<Triple> mention_triples;
        const int mt = static_cast<int>(rng.below(6));
        for (int t = 0; t < mt; ++t)
            mention_triples.push_back({"M", rels[rng.below(rels.size())], tails[rng.below(tails.size())]});
        const int n = 1 + static_cast<int>(rng.below(10));

        const FilterSets got = compute_filter_sets(mention_triples, cands, table, n);

        std::vector<std::string> m_rels, m_tails;
        std::set<std::string> c_rels, c_tails;
        for (const Triple& t : mention_triples) {
            m_rels.push_back(t.relation);
            m_tails.push_back(t.tail);
        }
        for (const Entity* e : cands)
            for (const Triple& t : e->triples) {
                c_rels.insert(t.relation);
                c_tails.insert(t.tail);
            }
        const auto rel_ref = oracle::filter_ref(m_rels, c_rels, table, n);
        const auto tail_ref = oracle::filter_ref(m_tails, c_tails, table, n);
        if (got.relations != rel_ref.kept || got.tails != tail_ref.kept ||
            got.relations_union_fallback != rel_ref.union_fallback ||
            got.tails_union_fallback != tail_ref.union_fallback)
            ++mismatches;

        // saturation: n at vocabulary size keeps every candidate triple
        const FilterSets wide = compute_filter_sets(mention_triples, cands, table, 1000);
        for (const Entity* e : cands) {
            if (mention_triples.empty()) break;
            if (filter_entity_triples(*e, wide) != e->triples) ++mismatches;
        }
    }
    return {mismatches == 0, fmt("200 instances plus saturation identity, %d mismatches", mismatches)};
}

// 5. HITS@k / MRR hand values and monotonicity.
Outcome crit_metrics() {
    std::vector<RankRecord> records;
    const uint64_t hand_ranks[3] = {1, 2, 4};
    for (int i = 0; i < 3; ++i)
        records.push_back({"m" + std::to_string(i + 1), "Q1", hand_ranks[i]});
    const EvalReport rep = compute_report(records, {1, 3});
    if (rep.hits.at(1) != 0.3333 || rep.hits.at(3) != 0.6667 || rep.mrr != 0.5833)
        return {false,
                fmt("hand case gave H@1=%.4f H@3=%.4f MRR=%.4f, want 0.3333/0.6667/0.5833", rep.hits.at(1),
                    rep.hits.at(3), rep.mrr)};

    Rng rng = Rng::keyed(41, 0x3e7a);
    const std::vector<int> ks = {1, 2, 3, 5, 8, 13};
    double worst = 0.0;
    for (int inst = 0; inst < 500; ++inst) {
        const int len = 1 + static_cast<int>(rng.below(40));
        std::vector<RankRecord> recs;
        std::vector<std::optional<uint64_t>> ranks;
        for (int i = 0; i < len; ++i) {
            std::optional<uint64_t> r;
            if (rng.uniform() > 0.2) r = 1 + rng.below(20);
            ranks.push_back(r);
            recs.push_back({"m" + std::to_string(i), "Q1", r});
        }
        const EvalReport r = compute_report(recs, ks);
        double prev = 0.0;
        for (int k : ks) {
            if (r.hits.at(k) < prev) return {false, fmt("HITS@k not monotone at instance %d", inst)};
            prev = r.hits.at(k);
            worst = std::max(worst, std::abs(r.hits.at(k) - oracle::hits_ref(ranks, static_cast<uint64_t>(k))));
        }
        worst = std::max(worst, std::abs(r.mrr - oracle::mrr_ref(ranks)));
    }
    return {worst <= 5.1e-5, fmt("hand values exact; 500 vectors monotone, worst count deviation %.2e", worst)};
}

// 6. Merge law and the fallback identity.
Outcome crit_merge() {
    Rng rng = Rng::keyed(43, 0x6e47);
    for (int inst = 0; inst < 200; ++inst) {
        const int n = 1 + static_cast<int>(rng.below(10));
        CandidateList in;
        in.mention_id = "m";
        for (int i = 0; i < n; ++i)
            in.ranked.push_back({"Q" + std::to_string(i + 1), static_cast<float>(n - i)});
        const std::string pick = "Q" + std::to_string(1 + rng.below(static_cast<uint64_t>(n)));
        const CandidateList out = merge_selection(in, pick);

        if (out.ranked.size() != in.ranked.size()) return {false, "merge changed the candidate count"};
        if (out.ranked.front().qid != pick) return {false, "selection is not at rank 1"};
        std::vector<std::string> rest_in, rest_out;
        for (const auto& c : in.ranked)
            if (c.qid != pick) rest_in.push_back(c.qid);
        for (size_t i = 1; i < out.ranked.size(); ++i) rest_out.push_back(out.ranked[i].qid);
        if (rest_in != rest_out) return {false, "relative order of the rest changed"};
    }

    // unparseable judge output returns the input ranking untouched
    EntityStore store;
    std::vector<Entity> ents(3);
    for (int i = 0; i < 3; ++i) {
        ents[static_cast<size_t>(i)] = {"Q" + std::to_string(i + 1), "Ent" + std::to_string(i + 1), "desc",
                                        std::nullopt, {}};
        store.add(ents[static_cast<size_t>(i)]);
    }
    Mention m;
    m.id = "m1";
    m.sentence = "an unrelated sentence";
    CandidateList in;
    m.surface_forms = {"thing"};
    in.mention_id = "m1";
    in.ranked = {{"Q1", 3.0f}, {"Q2", 2.0f}, {"Q3", 1.0f}};
    ScriptedCompletionClient client(std::map<std::string, std::string>{}, std::string("no idea whatsoever"));
    EmbeddingTable table(2);
    HyperParams h;
    const RerankResult r = rerank_mention(m, nullptr, in, store, table, client, h);
    if (r.decision.source != "fallback") return {false, "expected the fallback source"};
    if (!(r.list == in)) return {false, "fallback altered the ranking"};
    return {true, "200 merge instances hold the law; fallback returns input unchanged"};
}

// 7. Prompt snapshots plus parser recovery and non-fabrication.
Outcome crit_prompts() {
    Mention paris;
    paris.id = "m-paris";
    paris.sentence = "Paris is lovely in spring.";
    paris.surface_forms = {"Paris"};
    paris.image_ref = "img-paris";

    const std::string kGenPrompt =
        "Given the image and text Paris is lovely in spring., please generate triples for the entities \"Paris\". "
        "following the steps below:\n"
        "### Step 1: Entity Type\n"
        "For each entity in \"Paris\", identify its type, following the format:\n"
        "- \"entity_name\": type of entity\n"
        "Type of entity can be :\n"
        "person, nationality, religious group, political group, organization, country, city, state, building, "
        "airport, highway, bridge, company, agency, institution, product, event, work of art, law, language, etc.\n"
        "### Step 2: Entity Description\n"
        "Provide a description for each entity, following the format:\n"
        "- \"entity_name\": entity description\n"
        "Focus on factual information that can be inferred from the image and text to describe the entity.\n"
        "### Step 3: Triples\n"
        "Using the type and information from steps 1 and 2, generate all possible triples for each entity in.\n"
        "Convert the entity types and information into triples using the format, with each triple on a new line:\n"
        "- \"entity_name\" | relation1 | entity1\n"
        "- \"entity_name\" | relation2 | entity2\n"
        "Based on the entity type and information provided in the image and text, choose the most relevant "
        "relations from the following list to generate triples:\n"
        "\"instance of\", \"subclass of\", \"part of\", \"has characteristic\", \"field of work\", \"occupation\", "
        "\"sex or gender\", \"country of citizenship\", \"position held\", \"religion or worldview\", \"member of\", "
        "\"owner of\", \"country\", \"capital\", \"continent\", \"located in\", \"industry\", \"participant\", "
        "\"genre\", \"named after\"\n";
    if (build_triple_prompt(paris) != kGenPrompt) return {false, "generation prompt drifted from its snapshot"};
    if (kGenerationRelations.size() != 20) return {false, "relation list is not twenty entries"};

    Mention cove;
    cove.id = "m1";
    cove.sentence = "The harbor of Cove was rebuilt.";
    cove.surface_forms = {"Cove"};
    MentionProfile prof;
    prof.mention_id = "m1";
    prof.descriptions["Cove"] = "a harbor town.";
    prof.triples = {{"Cove", "country", "Freedonia"}};
    Entity e1{"Q1", "Aster", "inland town", std::nullopt, {}};
    Entity e2{"Q3", "Cove", "coastal town", std::nullopt, {}};
    std::vector<RerankCandidate> cands;
    cands.push_back({&e1, {{"Q1", "country", "Freedonia"}}});
    cands.push_back({&e2, {}});
    const std::string kRerankPrompt =
        "Given the context below, please identify the most corresponding entity from the list of candidates.\n"
        "\n"
        "Context: The harbor of Cove was rebuilt.\n"
        "\n"
        "Candidate Entities:\n"
        "Cove (Q3): coastal town\n"
        "Aster (Q1): inland town\n"
        "- Triple: Q1 | country | Freedonia\n"
        "\n"
        "Context: The harbor of Cove was rebuilt.\n"
        "\n"
        "Target Entity: Cove: a harbor town.\n"
        "- Triple: Cove | country | Freedonia\n"
        "\n"
        "First, read the context and the target entity. Then, review the candidate entities and their "
        "descriptions.\n"
        "From the candidate entities, select the supporting triples that align with the context and the target "
        "entity. (Note that triples may contain inconsistent information.)\n"
        "Based on the selected supporting triples, identify the most relevant entity that best matches the given "
        "sentence context.\n";
    if (build_rerank_prompt(cove, &prof, cands) != kRerankPrompt)
        return {false, "rerank prompt drifted from its snapshot (reverse candidate order included)"};

    const std::string well_formed = "### Step 1: Entity Type\n"
                                    "- \"Paris\": city\n"
                                    "### Step 2: Entity Description\n"
                                    "- \"Paris\": Capital of France on the Seine.\n"
                                    "### Step 3: Triples\n"
                                    "- \"Paris\" | country | France\n"
                                    "- \"Paris\" | capital | France\n"
                                    "- \"Paris\" | located in | Europe\n";
    const MentionProfile got = parse_generation(well_formed, paris);
    const std::vector<Triple> want = {{"Paris", "country", "France"},
                                      {"Paris", "capital", "France"},
                                      {"Paris", "located in", "Europe"},
                                      {"Paris", "instance of", "city"}};
    if (got.triples != want || got.types.at("Paris") != "city")
        return {false, "well-formed completion not fully recovered"};

    const std::string adversarial = "I could not find structured information.\n"
                                    "London | capital | England\n"
                                    "- | country |\n"
                                    "- \"Paris\" | | France\n"
                                    "- \"Paris\" | country\n"
                                    "Random prose with | a single bar\n"
                                    "| | | | |\n";
    const MentionProfile adv = parse_generation(adversarial, paris);
    if (!adv.triples.empty() || !adv.types.empty() || !adv.descriptions.empty())
        return {false, "adversarial text fabricated structure"};
    return {true, "both prompts snapshot-exact; parser recovers 3+1 triples, fabricates 0"};
}

// 8. Synthetic end-to-end: trained retrieval beats the untrained baseline
// and oracle reranking lifts HITS@1 past retrieval HITS@5.
Outcome crit_synthetic() {
    const auto t0 = std::chrono::steady_clock::now();
    testing::ScopedTempDir tmp("acc_e2e");
    const testing::SyntheticSpec spec; // 200 entities / 50 mentions
    const Config cfg = testing::write_synthetic(testing::make_synthetic(spec), spec, tmp.path());

    run_pipeline(cfg);
    const EvalReport retrieval = load_report(cfg.out_dir / artifact::kRetrievalReport);
    const EvalReport rerank = load_report(cfg.out_dir / artifact::kRerankReport);

    // untrained baseline: identical serving path, parameters left at init
    const CorpusBundle bundle = load_corpus(cfg);
    const ProfileMap profiles = load_profiles(cfg.out_dir / artifact::kProfiles);
    const EmbeddingTable table = EmbeddingTable::load(cfg.out_dir / artifact::kEmbeddings);
    const Params<float> params0 = Params<float>::init(cfg.seed, cfg.hyper);
    const EntityIndex index0 = EntityIndex::build(bundle.store, table, params0, cfg.hyper, 0);
    const auto lists0 = retrieve_all(bundle.mentions, profiles, table, params0, cfg.hyper, index0,
                                     cfg.hyper.topk, cfg.parallelism);
    const EvalReport untrained = compute_report(rank_records(bundle.mentions, lists0), {1});

    const double secs = seconds_since(t0);
    const bool pass = retrieval.hits.at(1) >= 0.90 && untrained.hits.at(1) <= 0.50 &&
                      rerank.hits.at(1) >= retrieval.hits.at(5) && secs < 180.0;
    return {pass,
            fmt("trained H@1 %.4f (>= 0.90), untrained H@1 %.4f (<= 0.50), rerank H@1 %.4f >= retrieval H@5 "
                "%.4f, %.1fs (limit 180s)",
                retrieval.hits.at(1), untrained.hits.at(1), rerank.hits.at(1), retrieval.hits.at(5), secs)};
}

// 9. Byte-identical artifacts across a wiped rerun of the same config.
Outcome crit_determinism() {
    testing::ScopedTempDir tmp("acc_determinism");
    testing::SyntheticSpec spec;
    spec.entities = 12;
    spec.mentions = 6;
    spec.seed = 11;
    spec.dim = 8;
    spec.epochs = 2;
    spec.batch_size = 4;
    const Config cfg = testing::write_synthetic(testing::make_synthetic(spec), spec, tmp.path());

    const std::vector<const char*> watched = {artifact::kCheckpoint, artifact::kRetrievalReport,
                                              artifact::kRerankReport, artifact::kDelta};
    run_pipeline(cfg);
    std::map<std::string, std::string> baseline;
    for (const char* name : watched) baseline[name] = read_file(cfg.out_dir / name);
    fs::remove_all(cfg.out_dir);
    run_pipeline(cfg);
    for (const char* name : watched)
        if (read_file(cfg.out_dir / name) != baseline[name])
            return {false, std::string("artifact differs across reruns: ") + name};
    return {true, "checkpoint and all three reports byte-identical across a wiped rerun"};
}

// 10. Binary formats survive save -> load -> save byte-identically.
Outcome crit_formats() {
    testing::ScopedTempDir tmp("acc_formats");

    EmbeddingTable t(4);
    t.insert("t:alpha", {0.1f, -3.5f, 1e-7f, 2.0f});
    t.insert("t:beta", {-0.0f, 4.25f, -1.0f, 0.5f});
    t.insert("i:img-1", {1.5f, 0.0f, -2.25f, 3.0f});
    t.save(tmp.file("a.kgem"));
    EmbeddingTable::load(tmp.file("a.kgem")).save(tmp.file("b.kgem"));
    if (read_file(tmp.file("a.kgem")) != read_file(tmp.file("b.kgem")))
        return {false, "embedding table round-trip not byte-identical"};

    HyperParams h;
    h.dprime = 6;
    h.d = 5;
    Checkpoint ck;
    ck.params = Params<float>::init(3, h);
    ck.hyper = h;
    ck.config_hash = 99;
    ck.step = 12;
    ck.epoch = 2;
    ck.opt_m = Params<float>::init(4, h);
    ck.opt_v = Params<float>::init(5, h);
    ck.save(tmp.file("a.kgck"));
    Checkpoint::load(tmp.file("a.kgck")).save(tmp.file("b.kgck"));
    if (read_file(tmp.file("a.kgck")) != read_file(tmp.file("b.kgck")))
        return {false, "checkpoint round-trip not byte-identical"};

    testing::SyntheticSpec spec;
    spec.entities = 10;
    spec.mentions = 5;
    const auto data = testing::make_synthetic(spec);
    data.store.save(tmp.file("e1.jsonl"));
    EntityStore::load(tmp.file("e1.jsonl")).save(tmp.file("e2.jsonl"));
    if (read_file(tmp.file("e1.jsonl")) != read_file(tmp.file("e2.jsonl")))
        return {false, "entity corpus round-trip not byte-identical"};
    data.mentions.save(tmp.file("m1.jsonl"));
    MentionSet::load(tmp.file("m1.jsonl")).save(tmp.file("m2.jsonl"));
    if (read_file(tmp.file("m1.jsonl")) != read_file(tmp.file("m2.jsonl")))
        return {false, "mention corpus round-trip not byte-identical"};
    return {true, "table, checkpoint, and both corpus files round-trip byte-identically"};
}

} // namespace

int main() {
    const std::pair<const char*, std::function<Outcome()>> criteria[] = {
        {"gradient keystone", crit_gradients}, {"forward-equation oracles", crit_forward},
        {"retrieval exactness", crit_retrieval}, {"filtering oracle", crit_filtering},
        {"metric exactness", crit_metrics},     {"rerank merge law", crit_merge},
        {"prompt fidelity", crit_prompts},      {"synthetic end-to-end", crit_synthetic},
        {"determinism", crit_determinism},      {"format round-trips", crit_formats},
    };

    int failed = 0;
    int idx = 0;
    for (const auto& [name, fn] : criteria) {
        ++idx;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("unexpected exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::printf("criterion %2d %-26s %s  %s\n", idx, name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("acceptance: %d/10 criteria passed\n", 10 - failed);
    return failed == 0 ? 0 : 1;
}
