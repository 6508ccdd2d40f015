#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "omni/error.hpp"
#include "omni/rng.hpp"

namespace omni {

using ordered_json = nlohmann::ordered_json;

// Instruction constants sent to the backing services. The filter service is
// asked for a bare yes/no; the generator is asked for at least three pairs;
// subtitling entries carry the ASR instruction as their fixed question.
inline const char* kFilterPrompt =
    "I will give you a subtitle generated from a video. Identify whether the subtitle is "
    "complete, fluent, and informative. Answer directly with yes or no and do not add other "
    "explanations.";
inline const char* kQaPrompt =
    "Please generate at least three questions and answers based on the information in the "
    "subtitle. You can refer to the video for additional context. The questions and answers "
    "must be highly relevant to the subtitle and video and should not include fabricated "
    "content.";
inline const char* kAsrInstruction = "Please give the ASR results of the given speech.";

// ---------------------------------------------------------------------------
// Domain types

struct VideoRecord {
    std::string id;
    std::string source;      // academic | open-ended
    std::string subtitle;    // empty when absent
    bool has_subtitle = false;
    double duration = 0.0;   // seconds
    std::string media_path;  // opaque; never decoded
};

struct FilterVerdict {
    std::string stage;  // english-ratio | length | llm-completeness
    bool pass = false;
    std::string detail; // measured value or model reply; always set on fail
};

struct QAPair {
    std::string question;
    std::string answer;
    std::string provenance = "both";  // subtitle | video | both
};

struct ManifestEntry {
    std::string id;
    std::string source;
    std::string subtitle;
    std::vector<QAPair> qa;
    std::vector<FilterVerdict> verdicts;
    std::string task;  // rejected | qa-rejected | video-audio-qa | subtitling | ...
};

struct Manifest {
    std::string recipe;
    std::uint64_t seed = 0;
    std::map<std::string, long long> counts;
    std::vector<ManifestEntry> entries;
};

// ---------------------------------------------------------------------------
// Service clients. Fixture playback replays recorded request->response pairs
// keyed by a request hash, which makes every pipeline above it a pure
// function of (inputs, fixtures, seed).

inline std::string request_hash(const std::string& role, const std::string& prompt) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](unsigned char c) {
        h ^= c;
        h *= 1099511628211ULL;
    };
    for (unsigned char c : role) mix(c);
    mix('\n');
    for (unsigned char c : prompt) mix(c);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct ServiceClient {
    virtual ~ServiceClient() = default;
    virtual std::string role() const = 0;   // asr | filter-llm | qa-vlm
    virtual std::string mode() const = 0;   // live | fixture-playback
    // Returns the service reply body; throws PipelineError on failure.
    virtual std::string complete(const std::string& prompt) = 0;
};

class FixtureClient : public ServiceClient {
public:
    FixtureClient(std::string dir, std::string role)
        : dir_(std::move(dir)), role_(std::move(role)) {}

    std::string role() const override { return role_; }
    std::string mode() const override { return "fixture-playback"; }

    static std::string fixture_file(const std::string& dir, const std::string& role,
                                    const std::string& prompt) {
        return dir + "/" + request_hash(role, prompt) + ".txt";
    }

    std::string complete(const std::string& prompt) override {
        const std::string path = fixture_file(dir_, role_, prompt);
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw PipelineError("no fixture for " + role_ + " request (expected " + path + ")");
        }
        std::ostringstream body;
        body << in.rdbuf();
        return body.str();
    }

private:
    std::string dir_;
    std::string role_;
};

// ---------------------------------------------------------------------------
// Subtitle filters

namespace detail {

inline std::vector<std::string> whitespace_tokens(const std::string& text) {
    std::vector<std::string> tokens;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) tokens.push_back(tok);
    return tokens;
}

inline bool is_english_token(const std::string& tok) {
    if (tok.empty()) return false;
    for (unsigned char c : tok) {
        if (!std::isalpha(c) && c != '\'') return false;
    }
    return true;
}

inline std::string lower_trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    std::string out = s.substr(b, e - b + 1);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace detail

inline FilterVerdict check_english_ratio(const std::string& subtitle, double threshold = 0.8) {
    const std::vector<std::string> tokens = detail::whitespace_tokens(subtitle);
    if (tokens.empty()) return {"english-ratio", false, "empty"};
    int english = 0;
    for (const std::string& t : tokens) english += detail::is_english_token(t) ? 1 : 0;
    const double ratio = static_cast<double>(english) / tokens.size();
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ratio=%.4f", ratio);
    return {"english-ratio", ratio >= threshold, buf};
}

inline FilterVerdict check_length(const std::string& subtitle, int min_words = 10) {
    const std::size_t words = detail::whitespace_tokens(subtitle).size();
    return {"length", words >= static_cast<std::size_t>(min_words),
            "words=" + std::to_string(words)};
}

// Ratio check then length check, short-circuiting on the first failure.
inline FilterVerdict english_ratio_filter(const std::string& subtitle, double threshold = 0.8,
                                          int min_words = 10) {
    FilterVerdict ratio = check_english_ratio(subtitle, threshold);
    if (!ratio.pass) return ratio;
    FilterVerdict length = check_length(subtitle, min_words);
    if (!length.pass) return length;
    length.detail = ratio.detail + "," + length.detail;
    return length;
}

// Asks the filter service whether the subtitle is complete; the reply must
// begin with yes or no. Service failures are retried, then recorded as a
// failing verdict rather than an exception: a flaky service discards the
// record, it does not abort the run.
inline FilterVerdict llm_completeness_filter(const std::string& subtitle, ServiceClient& client,
                                             int retries = 3) {
    if (client.role() != "filter-llm") {
        throw ConfigError("llm_completeness_filter needs a filter-llm client, got " +
                          client.role());
    }
    const std::string request = std::string(kFilterPrompt) + "\n" + subtitle;
    std::string reply;
    bool got_reply = false;
    for (int attempt = 0; attempt <= retries && !got_reply; ++attempt) {
        try {
            reply = client.complete(request);
            got_reply = true;
        } catch (const PipelineError&) {
            // retry
        }
    }
    if (!got_reply) return {"llm-completeness", false, "service-error"};
    const std::string norm = detail::lower_trim(reply);
    if (norm.rfind("yes", 0) == 0) return {"llm-completeness", true, detail::lower_trim(reply)};
    if (norm.rfind("no", 0) == 0) return {"llm-completeness", false, detail::lower_trim(reply)};
    return {"llm-completeness", false, "unparseable: " + reply};
}

struct FilterOptions {
    double threshold = 0.8;
    int min_words = 10;
    int retries = 3;
};

// Order-fixed chain: english-ratio -> length -> llm-completeness. Passing
// stages contribute passing verdicts; the first failure ends the chain, so a
// discarded record carries exactly one failing verdict.
inline std::vector<FilterVerdict> filter_chain(const std::string& subtitle,
                                               ServiceClient& client,
                                               const FilterOptions& opt = {}) {
    std::vector<FilterVerdict> verdicts;
    verdicts.push_back(check_english_ratio(subtitle, opt.threshold));
    if (!verdicts.back().pass) return verdicts;
    verdicts.push_back(check_length(subtitle, opt.min_words));
    if (!verdicts.back().pass) return verdicts;
    verdicts.push_back(llm_completeness_filter(subtitle, client, opt.retries));
    return verdicts;
}

// ---------------------------------------------------------------------------
// QA generation

// Parses numbered question/answer blocks:
//   1. Q: ... \n A: ...
// Lines starting with "Q:" (optionally after "N." or "N)") open a question;
// "A:" lines answer it. A reply with no recognizable pair at all is a
// pipeline error carrying the raw reply.
inline std::vector<QAPair> parse_qa_pairs(const std::string& reply) {
    std::vector<QAPair> pairs;
    std::istringstream in(reply);
    std::string line, question;
    auto strip_lead = [](std::string s) {
        std::size_t i = 0;
        while (i < s.size() && (std::isspace(static_cast<unsigned char>(s[i])) ||
                                std::isdigit(static_cast<unsigned char>(s[i])) || s[i] == '.' ||
                                s[i] == ')')) {
            ++i;
        }
        return s.substr(i);
    };
    auto after_tag = [](const std::string& s, const char* tag) {
        std::string rest = s.substr(std::string(tag).size());
        std::size_t b = rest.find_first_not_of(" \t");
        return b == std::string::npos ? "" : rest.substr(b);
    };
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string body = strip_lead(line);
        if (body.rfind("Q:", 0) == 0) {
            question = after_tag(body, "Q:");
        } else if (body.rfind("A:", 0) == 0 && !question.empty()) {
            const std::string answer = after_tag(body, "A:");
            if (!answer.empty()) pairs.push_back({question, answer, "both"});
            question.clear();
        }
    }
    if (pairs.empty()) {
        throw PipelineError("unparseable QA reply: " + reply);
    }
    return pairs;
}

// Sends the generation prompt with the subtitle and the media reference.
// Returns however many pairs parse; the caller enforces the >= 3 rule and
// records shortfalls as rejections.
inline std::vector<QAPair> generate_qa(const VideoRecord& record, ServiceClient& client) {
    if (client.role() != "qa-vlm") {
        throw ConfigError("generate_qa needs a qa-vlm client, got " + client.role());
    }
    const std::string request = std::string(kQaPrompt) + "\nSubtitle: " + record.subtitle +
                                "\nVideo: " + record.media_path;
    return parse_qa_pairs(client.complete(request));
}

// ---------------------------------------------------------------------------
// Manifest construction

struct ForgeOptions {
    FilterOptions filter;
    int qa_min = 3;
    std::uint64_t seed = 1;
};

// Full curation pass in input order: filter chain, then QA generation for
// survivors. Every record yields exactly one entry whose task records its
// fate: rejected (failed a filter), qa-rejected (< qa_min pairs), or
// video-audio-qa.
inline Manifest curate(const std::vector<VideoRecord>& records, ServiceClient& filter_client,
                       ServiceClient& qa_client, const ForgeOptions& opt = {}) {
    Manifest m;
    m.recipe = "curate";
    m.seed = opt.seed;
    long long passed = 0, rejected = 0, qa_rejected = 0;
    std::set<std::string> seen;
    for (const VideoRecord& r : records) {
        if (!seen.insert(r.id).second) {
            throw InputError("duplicate record id in input: " + r.id);
        }
        ManifestEntry e;
        e.id = r.id;
        e.source = r.source;
        e.subtitle = r.subtitle;
        e.verdicts = filter_chain(r.subtitle, filter_client, opt.filter);
        if (!e.verdicts.back().pass) {
            e.task = "rejected";
            ++rejected;
        } else {
            e.qa = generate_qa(r, qa_client);
            if (static_cast<int>(e.qa.size()) < opt.qa_min) {
                e.task = "qa-rejected";
                ++qa_rejected;
            } else {
                e.task = "video-audio-qa";
                ++passed;
            }
        }
        m.entries.push_back(std::move(e));
    }
    m.counts["input"] = static_cast<long long>(records.size());
    m.counts["video-audio-qa"] = passed;
    m.counts["rejected"] = rejected;
    m.counts["qa-rejected"] = qa_rejected;
    return m;
}

// ASR-style subtitling entries: the fixed instruction is the question, the
// subtitle is the answer. Records without subtitles are skipped with a log
// line. fraction in (0,1] selects a deterministic sample without
// replacement.
inline std::vector<ManifestEntry> subtitle_tasks(const std::vector<VideoRecord>& records,
                                                 double fraction, std::uint64_t seed,
                                                 std::ostream* log = nullptr) {
    if (!(fraction > 0.0) || fraction > 1.0) {
        throw InputError("subtitle task fraction must be in (0,1]");
    }
    std::vector<const VideoRecord*> eligible;
    for (const VideoRecord& r : records) {
        if (r.has_subtitle && !r.subtitle.empty()) {
            eligible.push_back(&r);
        } else if (log) {
            *log << "subtitle_tasks: skipping " << r.id << " (no subtitle)\n";
        }
    }
    const std::size_t want =
        fraction >= 1.0 ? eligible.size()
                        : static_cast<std::size_t>(fraction * static_cast<double>(eligible.size()));
    std::vector<std::size_t> order(eligible.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    order.resize(want);
    std::sort(order.begin(), order.end());  // emit in input order (stable output contract)

    std::vector<ManifestEntry> out;
    for (std::size_t idx : order) {
        const VideoRecord& r = *eligible[idx];
        ManifestEntry e;
        e.id = r.id;
        e.source = r.source;
        e.subtitle = r.subtitle;
        e.qa.push_back({kAsrInstruction, r.subtitle, "subtitle"});
        e.task = "subtitling";
        out.push_back(std::move(e));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset mixing

struct MixPlanEntry {
    std::string source;
    double fraction = -1.0;   // in (0,1] when used
    long long count = -1;     // absolute count, takes precedence when >= 0
};

struct MixPlan {
    std::uint64_t seed = 1;
    std::vector<MixPlanEntry> entries;
};

// Per-source sampling without replacement (floor(fraction*N) entries), then
// one shuffle of the combined result, all driven by the plan seed.
inline Manifest mix_datasets(const std::vector<std::pair<std::string, Manifest>>& sources,
                             const MixPlan& plan) {
    std::map<std::string, const Manifest*> by_name;
    for (const auto& [name, manifest] : sources) by_name[name] = &manifest;

    Manifest out;
    out.seed = plan.seed;
    Rng rng(plan.seed);
    std::ostringstream recipe;
    std::set<std::string> ids;
    long long total = 0;
    for (const MixPlanEntry& e : plan.entries) {
        auto it = by_name.find(e.source);
        if (it == by_name.end()) throw InputError("mix source not provided: " + e.source);
        const std::vector<ManifestEntry>& pool = it->second->entries;
        long long want;
        if (e.count >= 0) {
            want = e.count;
        } else {
            if (!(e.fraction > 0.0) || e.fraction > 1.0) {
                throw InputError("mix fraction for " + e.source + " must be in (0,1]");
            }
            want = static_cast<long long>(e.fraction * static_cast<double>(pool.size()));
        }
        if (want > static_cast<long long>(pool.size())) {
            throw InputError("mix requests " + std::to_string(want) + " entries from " +
                             e.source + " which has only " + std::to_string(pool.size()));
        }
        std::vector<std::size_t> order(pool.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        for (long long i = 0; i < want; ++i) {
            const ManifestEntry& entry = pool[order[static_cast<std::size_t>(i)]];
            if (!ids.insert(entry.id).second) {
                throw InputError("duplicate entry id across mix sources: " + entry.id);
            }
            out.entries.push_back(entry);
        }
        out.counts[e.source] = want;
        total += want;
        recipe << (recipe.tellp() > 0 ? " " : "") << e.source << ":" << want;
    }
    out.counts["total"] = total;
    out.recipe = recipe.str();
    rng.shuffle(out.entries);
    return out;
}

// ---------------------------------------------------------------------------
// Manifest serialization: one JSON object per line, header first.

inline ordered_json entry_to_json(const ManifestEntry& e) {
    ordered_json j;
    j["id"] = e.id;
    j["source"] = e.source;
    j["subtitle"] = e.subtitle;
    j["qa"] = ordered_json::array();
    for (const QAPair& q : e.qa) {
        j["qa"].push_back({{"q", q.question}, {"a", q.answer}, {"provenance", q.provenance}});
    }
    j["verdicts"] = ordered_json::array();
    for (const FilterVerdict& v : e.verdicts) {
        j["verdicts"].push_back({{"stage", v.stage}, {"pass", v.pass}, {"detail", v.detail}});
    }
    j["task"] = e.task;
    return j;
}

inline std::string manifest_to_string(const Manifest& m) {
    std::ostringstream out;
    ordered_json header;
    header["recipe"] = m.recipe;
    header["seed"] = m.seed;
    header["counts"] = ordered_json::object();
    for (const auto& [k, v] : m.counts) header["counts"][k] = v;
    out << header.dump() << "\n";
    for (const ManifestEntry& e : m.entries) out << entry_to_json(e).dump() << "\n";
    return out.str();
}

inline void write_manifest_file(const Manifest& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest: " + path);
    out << manifest_to_string(m);
}

inline Manifest parse_manifest(std::istream& in) {
    Manifest m;
    std::string line;
    if (!std::getline(in, line)) throw IoError("manifest is empty");
    ordered_json header = ordered_json::parse(line);
    m.recipe = header.value("recipe", "");
    m.seed = header.value("seed", 0ULL);
    if (header.contains("counts")) {
        for (auto& [k, v] : header["counts"].items()) m.counts[k] = v.get<long long>();
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ordered_json j = ordered_json::parse(line);
        ManifestEntry e;
        e.id = j.value("id", "");
        e.source = j.value("source", "");
        e.subtitle = j.value("subtitle", "");
        for (const auto& q : j.value("qa", ordered_json::array())) {
            e.qa.push_back({q.value("q", ""), q.value("a", ""), q.value("provenance", "both")});
        }
        for (const auto& v : j.value("verdicts", ordered_json::array())) {
            e.verdicts.push_back(
                {v.value("stage", ""), v.value("pass", false), v.value("detail", "")});
        }
        e.task = j.value("task", "");
        m.entries.push_back(std::move(e));
    }
    return m;
}

inline Manifest read_manifest_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read manifest: " + path);
    return parse_manifest(in);
}

// Records file: one JSON object per line, no header.
inline std::vector<VideoRecord> parse_records(std::istream& in) {
    std::vector<VideoRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ordered_json j = ordered_json::parse(line);
        VideoRecord r;
        r.id = j.value("id", "");
        r.source = j.value("source", "academic");
        if (j.contains("subtitle") && !j["subtitle"].is_null()) {
            r.subtitle = j["subtitle"].get<std::string>();
            r.has_subtitle = true;
        }
        r.duration = j.value("duration", 0.0);
        r.media_path = j.value("media_path", "");
        if (r.id.empty()) throw IoError("record without id in records file");
        records.push_back(std::move(r));
    }
    return records;
}

inline std::vector<VideoRecord> read_records_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read records: " + path);
    return parse_records(in);
}

// No-orphan validator: every manifest entry must trace to a source record.
inline void validate_manifest(const Manifest& m, const std::vector<VideoRecord>& records) {
    std::set<std::string> known;
    for (const VideoRecord& r : records) known.insert(r.id);
    std::set<std::string> seen;
    for (const ManifestEntry& e : m.entries) {
        if (known.find(e.id) == known.end()) {
            throw PipelineError("manifest entry " + e.id + " has no source record (orphan)");
        }
        if (!seen.insert(e.id).second) {
            throw PipelineError("duplicate id within manifest: " + e.id);
        }
    }
}

}  // namespace omni
