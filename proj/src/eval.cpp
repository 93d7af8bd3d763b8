#include "kgmel/eval.hpp"

#include "kgmel/errors.hpp"
#include "kgmel/util.hpp"

#include <boost/multiprecision/cpp_int.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <set>
#include <sstream>

namespace kgmel {

using json = nlohmann::json;
using rational = boost::multiprecision::cpp_rational;

std::optional<uint64_t> rank_of_gold(const CandidateList& candidates, const std::string& gold_qid) {
    for (size_t i = 0; i < candidates.ranked.size(); ++i)
        if (candidates.ranked[i].qid == gold_qid) return i + 1;
    return std::nullopt;
}

std::vector<RankRecord> rank_records(const MentionSet& mentions, const std::map<std::string, CandidateList>& lists) {
    std::vector<RankRecord> out;
    for (const auto& m : mentions.items()) {
        if (!m.gold_qid) continue;
        auto it = lists.find(m.id);
        if (it == lists.end()) throw DataError("no candidate list for mention " + m.id);
        out.push_back({m.id, *m.gold_qid, rank_of_gold(it->second, *m.gold_qid)});
    }
    return out;
}

namespace {

// Round half away from zero to 4 decimals, exactly.
double round4(const rational& v) {
    const rational scaled = v * 10000;
    const rational shifted = scaled >= 0 ? scaled + rational(1, 2) : scaled - rational(1, 2);
    const boost::multiprecision::cpp_int floored =
        boost::multiprecision::numerator(shifted) / boost::multiprecision::denominator(shifted);
    return static_cast<double>(floored) / 10000.0;
}

} // namespace

EvalReport compute_report(const std::vector<RankRecord>& records, const std::vector<int>& ks) {
    if (records.empty()) throw DataError("cannot evaluate zero records");
    for (int k : ks)
        if (k < 1) throw ConfigError("hits cutoffs must be >= 1");

    const uint64_t n = records.size();
    std::map<int, uint64_t> hit_counts;
    for (int k : ks) hit_counts[k] = 0;
    rational mrr_sum = 0;
    uint64_t absent = 0;
    for (const auto& r : records) {
        if (!r.rank) {
            ++absent;
            continue;
        }
        if (*r.rank < 1) throw DataError("rank must be >= 1 for mention " + r.mention_id);
        for (int k : ks)
            if (*r.rank <= static_cast<uint64_t>(k)) ++hit_counts[k];
        mrr_sum += rational(1, *r.rank);
    }

    EvalReport report;
    report.n = n;
    report.absent = absent;
    for (int k : ks) report.hits[k] = round4(rational(hit_counts[k], n));
    report.mrr = round4(mrr_sum / n);
    return report;
}

void save_report(const EvalReport& report, const std::filesystem::path& path) {
    json hits = json::object();
    for (const auto& [k, v] : report.hits) hits[std::to_string(k)] = v;
    json j{{"hits", std::move(hits)}, {"mrr", report.mrr}, {"n", report.n}, {"absent", report.absent}};
    write_file(path, j.dump(2) + "\n");
}

EvalReport load_report(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("hits") || !j.contains("mrr") || !j.contains("n") || !j.contains("absent"))
        throw DataError(path.string() + ": not an evaluation report");
    EvalReport report;
    for (const auto& [k, v] : j["hits"].items()) report.hits[std::stoi(k)] = v.get<double>();
    report.mrr = j["mrr"].get<double>();
    report.n = j["n"].get<uint64_t>();
    report.absent = j["absent"].get<uint64_t>();
    return report;
}

StageDelta compare_stages(const std::vector<RankRecord>& retrieval_records,
                          const std::vector<RankRecord>& rerank_records, const std::vector<int>& ks) {
    std::set<std::string> a, b;
    for (const auto& r : retrieval_records) a.insert(r.mention_id);
    for (const auto& r : rerank_records) b.insert(r.mention_id);
    if (a != b) {
        std::vector<std::string> diff;
        std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(diff));
        throw DataError("stage comparison over different mention sets; differing: " + join(diff, ", "));
    }

    StageDelta delta;
    delta.retrieval = compute_report(retrieval_records, ks);
    delta.rerank = compute_report(rerank_records, ks);
    for (int k : ks) delta.hits_delta[k] = delta.rerank.hits.at(k) - delta.retrieval.hits.at(k);
    delta.mrr_delta = delta.rerank.mrr - delta.retrieval.mrr;
    return delta;
}

std::string format_delta_table(const StageDelta& delta) {
    std::ostringstream out;
    auto cell = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%8.4f", v);
        return std::string(buf);
    };
    auto delta_cell = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "(%+.4f)", v);
        std::string s(buf);
        return std::string(8 > s.size() ? 8 - s.size() : 0, ' ') + s;
    };

    out << "stage    ";
    for (const auto& [k, v] : delta.retrieval.hits) {
        (void)v;
        std::string head = "H@" + std::to_string(k);
        out << std::string(8 - head.size(), ' ') << head << "  ";
    }
    out << "     MRR\n";
    out << "retrieval";
    for (const auto& [k, v] : delta.retrieval.hits) {
        (void)k;
        out << cell(v) << "  ";
    }
    out << cell(delta.retrieval.mrr) << "\n";
    out << "rerank   ";
    for (const auto& [k, v] : delta.rerank.hits) {
        (void)k;
        out << cell(v) << "  ";
    }
    out << cell(delta.rerank.mrr) << "\n";
    out << "delta    ";
    for (const auto& [k, v] : delta.hits_delta) {
        (void)k;
        out << delta_cell(v) << "  ";
    }
    out << delta_cell(delta.mrr_delta) << "\n";
    return out.str();
}

} // namespace kgmel
