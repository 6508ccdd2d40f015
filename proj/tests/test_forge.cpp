// Data curation: the english-ratio/length/completeness filter chain, fixture
// playback, QA parsing, deterministic sampling and mixing, and the manifest
// format with its orphan validator.

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "omni/forge.hpp"

using namespace omni;

namespace {

std::string fresh_dir(const std::string& name) {
    const std::string dir = "/tmp/omni_forge_" + name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

void write_fixture(const std::string& dir, const std::string& role, const std::string& prompt,
                   const std::string& reply) {
    std::ofstream out(FixtureClient::fixture_file(dir, role, prompt), std::ios::binary);
    out << reply;
}

std::string filter_request(const std::string& subtitle) {
    return std::string(kFilterPrompt) + "\n" + subtitle;
}

std::string qa_request(const VideoRecord& r) {
    return std::string(kQaPrompt) + "\nSubtitle: " + r.subtitle + "\nVideo: " + r.media_path;
}

VideoRecord record(const std::string& id, const std::string& subtitle,
                   const std::string& source = "open-ended") {
    VideoRecord r;
    r.id = id;
    r.source = source;
    r.subtitle = subtitle;
    r.has_subtitle = !subtitle.empty();
    r.duration = 30.0;
    r.media_path = "videos/" + id + ".mp4";
    return r;
}

const char* kGoodSubtitle =
    "the quick brown fox jumps over the lazy dog while the calm cat watches quietly";

}  // namespace

TEST_CASE("request hashes are stable 16-digit hex keys") {
    const std::string h = request_hash("filter-llm", "hello");
    CHECK(h.size() == 16);
    CHECK(h == request_hash("filter-llm", "hello"));
    CHECK(h != request_hash("qa-vlm", "hello"));
    CHECK(h != request_hash("filter-llm", "hello!"));
}

TEST_CASE("english-ratio verdicts") {
    const FilterVerdict all_english = check_english_ratio("the quick brown fox");
    CHECK(all_english.pass);
    CHECK(all_english.stage == "english-ratio");
    CHECK(all_english.detail == "ratio=1.0000");

    // 5 of 10 tokens carry digits or non-letters: ratio 0.5 fails at 0.8.
    const FilterVerdict half =
        check_english_ratio("uno1 dos2 tres3 cuatro4 cinco5 the quick brown fox dog");
    CHECK_FALSE(half.pass);
    CHECK(half.detail == "ratio=0.5000");

    const FilterVerdict empty = check_english_ratio("");
    CHECK_FALSE(empty.pass);
    CHECK(empty.detail == "empty");

    // Apostrophes are part of English tokens; punctuation is not.
    CHECK(detail::is_english_token("don't"));
    CHECK_FALSE(detail::is_english_token("fox."));
    CHECK_FALSE(detail::is_english_token("123"));
}

TEST_CASE("length verdicts and the combined string filter") {
    const FilterVerdict short_sub = check_length("the quick brown fox");
    CHECK_FALSE(short_sub.pass);
    CHECK(short_sub.stage == "length");
    CHECK(short_sub.detail == "words=4");

    CHECK(check_length(kGoodSubtitle).pass);

    // english_ratio_filter short-circuits: an all-English but short subtitle
    // fails at the length stage, not the ratio stage.
    const FilterVerdict combined = english_ratio_filter("the quick brown fox");
    CHECK_FALSE(combined.pass);
    CHECK(combined.stage == "length");

    const FilterVerdict ok = english_ratio_filter(kGoodSubtitle);
    CHECK(ok.pass);
    CHECK(ok.detail == "ratio=1.0000,words=15");
}

TEST_CASE("the completeness filter parses yes/no prefixes case-insensitively") {
    const std::string dir = fresh_dir("llm");

    write_fixture(dir, "filter-llm", filter_request("sub yes"), "Yes, it is complete.");
    write_fixture(dir, "filter-llm", filter_request("sub no"), "No");
    write_fixture(dir, "filter-llm", filter_request("sub odd"), "It depends.");

    FixtureClient client(dir, "filter-llm");
    const FilterVerdict yes = llm_completeness_filter("sub yes", client);
    CHECK(yes.pass);
    CHECK(yes.stage == "llm-completeness");
    CHECK(yes.detail == "yes, it is complete.");

    CHECK_FALSE(llm_completeness_filter("sub no", client).pass);

    const FilterVerdict odd = llm_completeness_filter("sub odd", client);
    CHECK_FALSE(odd.pass);
    CHECK(odd.detail == "unparseable: It depends.");

    // Missing fixture: retries are exhausted, the record is discarded, the
    // run continues.
    const FilterVerdict gone = llm_completeness_filter("sub missing", client);
    CHECK_FALSE(gone.pass);
    CHECK(gone.detail == "service-error");

    FixtureClient wrong_role(dir, "qa-vlm");
    CHECK_THROWS_AS(llm_completeness_filter("sub yes", wrong_role), ConfigError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("the filter chain stops at the first failure") {
    const std::string dir = fresh_dir("chain");
    write_fixture(dir, "filter-llm", filter_request(kGoodSubtitle), "yes");
    FixtureClient client(dir, "filter-llm");

    const std::vector<FilterVerdict> pass = filter_chain(kGoodSubtitle, client);
    REQUIRE(pass.size() == 3);
    CHECK(pass[0].stage == "english-ratio");
    CHECK(pass[1].stage == "length");
    CHECK(pass[2].stage == "llm-completeness");
    for (const FilterVerdict& v : pass) CHECK(v.pass);

    const std::vector<FilterVerdict> short_fail = filter_chain("too short", client);
    REQUIRE(short_fail.size() == 2);  // ratio passed, length failed, llm never ran
    CHECK(short_fail[0].pass);
    CHECK_FALSE(short_fail[1].pass);

    int failing = 0;
    for (const FilterVerdict& v : short_fail) failing += v.pass ? 0 : 1;
    CHECK(failing == 1);
    std::filesystem::remove_all(dir);
}

TEST_CASE("qa replies parse into numbered pairs") {
    const std::vector<QAPair> three = parse_qa_pairs(
        "1. Q: What color is the fox?\nA: Brown.\n"
        "2. Q: Who watches?\nA: The cat.\n"
        "3. Q: What does the dog do?\nA: It sleeps.\n");
    REQUIRE(three.size() == 3);
    CHECK(three[0].question == "What color is the fox?");
    CHECK(three[0].answer == "Brown.");
    CHECK(three[2].answer == "It sleeps.");
    CHECK(three[1].provenance == "both");

    // Parenthesis numbering and windows line endings both parse.
    const std::vector<QAPair> alt = parse_qa_pairs("1) Q: a?\r\nA: b\r\n");
    REQUIRE(alt.size() == 1);
    CHECK(alt[0].question == "a?");

    CHECK_THROWS_WITH_AS(parse_qa_pairs("I cannot help with that."),
                         "unparseable QA reply: I cannot help with that.", PipelineError);
}

TEST_CASE("curation tags every record with its fate") {
    const std::string dir = fresh_dir("curate");
    const std::vector<VideoRecord> records = {
        record("v1", kGoodSubtitle),                // passes, 3 QA pairs
        record("v2", "too short"),                  // fails length
        record("v3", kGoodSubtitle + std::string(" again")),  // passes, 2 QA pairs
    };

    write_fixture(dir, "filter-llm", filter_request(records[0].subtitle), "yes");
    write_fixture(dir, "filter-llm", filter_request(records[2].subtitle), "yes");
    write_fixture(dir, "qa-vlm", qa_request(records[0]),
                  "1. Q: q1?\nA: a1\n2. Q: q2?\nA: a2\n3. Q: q3?\nA: a3\n");
    write_fixture(dir, "qa-vlm", qa_request(records[2]), "1. Q: q1?\nA: a1\n2. Q: q2?\nA: a2\n");

    FixtureClient filter_client(dir, "filter-llm");
    FixtureClient qa_client(dir, "qa-vlm");
    const Manifest m = curate(records, filter_client, qa_client);

    REQUIRE(m.entries.size() == 3);
    CHECK(m.entries[0].task == "video-audio-qa");
    CHECK(m.entries[0].qa.size() == 3);
    CHECK(m.entries[1].task == "rejected");
    CHECK(m.entries[1].qa.empty());
    CHECK(m.entries[2].task == "qa-rejected");
    CHECK(m.counts.at("input") == 3);
    CHECK(m.counts.at("video-audio-qa") == 1);
    CHECK(m.counts.at("rejected") == 1);
    CHECK(m.counts.at("qa-rejected") == 1);

    const std::vector<VideoRecord> dup = {record("v1", "a"), record("v1", "b")};
    CHECK_THROWS_AS(curate(dup, filter_client, qa_client), InputError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("curation is byte-deterministic under fixtures") {
    const std::string dir = fresh_dir("determinism");
    std::vector<VideoRecord> records;
    for (int i = 0; i < 8; ++i) {
        records.push_back(record("v" + std::to_string(i),
                                 kGoodSubtitle + std::string(" take ") + std::to_string(i)));
        write_fixture(dir, "filter-llm", filter_request(records.back().subtitle),
                      i % 3 == 0 ? "no" : "yes");
        write_fixture(dir, "qa-vlm", qa_request(records.back()),
                      "1. Q: q1?\nA: a1\n2. Q: q2?\nA: a2\n3. Q: q3?\nA: a3\n");
    }
    FixtureClient filter_client(dir, "filter-llm");
    FixtureClient qa_client(dir, "qa-vlm");

    const std::string once = manifest_to_string(curate(records, filter_client, qa_client));
    const std::string twice = manifest_to_string(curate(records, filter_client, qa_client));
    CHECK(once == twice);
    std::filesystem::remove_all(dir);
}

TEST_CASE("subtitling entries sample deterministically and keep input order") {
    std::vector<VideoRecord> records;
    for (int i = 0; i < 10; ++i) {
        records.push_back(record("v" + std::to_string(i), i == 4 ? "" : kGoodSubtitle));
    }

    std::ostringstream log;
    const std::vector<ManifestEntry> twothirds = subtitle_tasks(records, 2.0 / 3.0, 5, &log);
    CHECK(twothirds.size() == 6);  // floor(9 * 2/3)
    CHECK(log.str() == "subtitle_tasks: skipping v4 (no subtitle)\n");
    for (std::size_t i = 1; i < twothirds.size(); ++i) {
        CHECK(twothirds[i - 1].id < twothirds[i].id);  // input order by construction
    }
    REQUIRE(!twothirds.empty());
    CHECK(twothirds[0].task == "subtitling");
    CHECK(twothirds[0].qa.size() == 1);
    CHECK(twothirds[0].qa[0].question == kAsrInstruction);
    CHECK(twothirds[0].qa[0].answer == kGoodSubtitle);
    CHECK(twothirds[0].qa[0].provenance == "subtitle");

    const std::vector<ManifestEntry> again = subtitle_tasks(records, 2.0 / 3.0, 5);
    REQUIRE(again.size() == twothirds.size());
    for (std::size_t i = 0; i < again.size(); ++i) CHECK(again[i].id == twothirds[i].id);

    CHECK(subtitle_tasks(records, 1.0, 1).size() == 9);
    CHECK_THROWS_AS(subtitle_tasks(records, 0.0, 1), InputError);
    CHECK_THROWS_AS(subtitle_tasks(records, 1.5, 1), InputError);
}

TEST_CASE("mixing takes floor(fraction * N) without replacement") {
    Manifest big;
    big.entries.resize(178000);
    for (std::size_t i = 0; i < big.entries.size(); ++i) {
        big.entries[i].id = "b" + std::to_string(i);
        big.entries[i].source = "open-ended";
        big.entries[i].task = "video-audio-qa";
    }
    MixPlan plan;
    plan.seed = 3;
    plan.entries.push_back({"big", 2.0 / 3.0, -1});
    std::vector<std::pair<std::string, Manifest>> sources;
    sources.emplace_back("big", std::move(big));
    const Manifest mixed = mix_datasets(sources, plan);
    CHECK(mixed.entries.size() == 118666);  // floor(2 * 178000 / 3)
    CHECK(mixed.counts.at("big") == 118666);
    CHECK(mixed.counts.at("total") == 118666);
    CHECK(mixed.recipe == "big:118666");

    // Without replacement: ids are unique.
    std::set<std::string> ids;
    for (const ManifestEntry& e : mixed.entries) ids.insert(e.id);
    CHECK(ids.size() == mixed.entries.size());
}

TEST_CASE("mixing validates sources, fractions, counts and id clashes") {
    Manifest small;
    for (int i = 0; i < 4; ++i) {
        ManifestEntry e;
        e.id = "s" + std::to_string(i);
        small.entries.push_back(e);
    }

    MixPlan unknown;
    unknown.entries.push_back({"missing", 0.5, -1});
    CHECK_THROWS_AS(mix_datasets({{"small", small}}, unknown), InputError);

    MixPlan bad_fraction;
    bad_fraction.entries.push_back({"small", 1.5, -1});
    CHECK_THROWS_AS(mix_datasets({{"small", small}}, bad_fraction), InputError);

    MixPlan too_many;
    too_many.entries.push_back({"small", -1.0, 9});
    CHECK_THROWS_WITH_AS(mix_datasets({{"small", small}}, too_many),
                         "mix requests 9 entries from small which has only 4", InputError);

    // The same ids arriving from two sources is an error, not a silent merge.
    MixPlan both;
    both.entries.push_back({"a", 1.0, -1});
    both.entries.push_back({"b", 1.0, -1});
    CHECK_THROWS_AS(mix_datasets({{"a", small}, {"b", small}}, both), InputError);

    // Absolute counts take precedence over fractions.
    MixPlan by_count;
    by_count.entries.push_back({"small", 0.25, 3});
    CHECK(mix_datasets({{"small", small}}, by_count).entries.size() == 3);
}

TEST_CASE("manifests serialize line-by-line and round-trip") {
    Manifest m;
    m.recipe = "curate";
    m.seed = 9;
    m.counts["input"] = 2;
    ManifestEntry e1;
    e1.id = "v1";
    e1.source = "academic";
    e1.subtitle = "hello world";
    e1.qa.push_back({"q?", "a.", "both"});
    e1.verdicts.push_back({"english-ratio", true, "ratio=1.0000"});
    e1.task = "video-audio-qa";
    ManifestEntry e2;
    e2.id = "v2";
    e2.task = "rejected";
    m.entries = {e1, e2};

    const std::string text = manifest_to_string(m);
    std::istringstream lines(text);
    std::string first;
    std::getline(lines, first);
    CHECK(first.find("\"recipe\"") != std::string::npos);
    int line_count = 1;
    std::string line;
    while (std::getline(lines, line)) ++line_count;
    CHECK(line_count == 3);  // header + one line per entry

    const std::string path = "/tmp/omni_forge_manifest.jsonl";
    write_manifest_file(m, path);
    const Manifest back = read_manifest_file(path);
    CHECK(back.recipe == "curate");
    CHECK(back.seed == 9);
    CHECK(back.counts.at("input") == 2);
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[0].qa[0].question == "q?");
    CHECK(back.entries[0].verdicts[0].detail == "ratio=1.0000");
    CHECK(manifest_to_string(back) == text);  // byte-stable round trip
    std::remove(path.c_str());
}

TEST_CASE("record files parse JSONL and reject missing ids") {
    const std::string path = "/tmp/omni_forge_records.jsonl";
    {
        std::ofstream out(path);
        out << R"({"id":"v1","source":"academic","subtitle":"hello there","duration":12.5,"media_path":"a.mp4"})"
            << "\n";
        out << R"({"id":"v2","source":"open-ended","subtitle":null,"duration":3.0,"media_path":"b.mp4"})"
            << "\n";
        out << "\n";  // blank lines are skipped
    }
    const std::vector<VideoRecord> records = read_records_file(path);
    REQUIRE(records.size() == 2);
    CHECK(records[0].id == "v1");
    CHECK(records[0].has_subtitle);
    CHECK(records[0].duration == 12.5);
    CHECK_FALSE(records[1].has_subtitle);
    CHECK(records[1].subtitle.empty());

    {
        std::ofstream out(path);
        out << R"({"source":"academic"})" << "\n";
    }
    CHECK_THROWS_AS(read_records_file(path), IoError);
    std::remove(path.c_str());
}

TEST_CASE("the validator finds orphans and duplicate manifest ids") {
    const std::vector<VideoRecord> records = {record("v1", "a"), record("v2", "b")};
    Manifest m;
    ManifestEntry e;
    e.id = "v1";
    m.entries.push_back(e);
    CHECK_NOTHROW(validate_manifest(m, records));

    ManifestEntry orphan;
    orphan.id = "ghost";
    m.entries.push_back(orphan);
    CHECK_THROWS_WITH_AS(validate_manifest(m, records),
                         "manifest entry ghost has no source record (orphan)", PipelineError);

    m.entries.pop_back();
    m.entries.push_back(e);
    CHECK_THROWS_WITH_AS(validate_manifest(m, records), "duplicate id within manifest: v1",
                         PipelineError);
}
