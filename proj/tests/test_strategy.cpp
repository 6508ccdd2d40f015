// Mixing-strategy harness: a rank-2 shared bottleneck over three orthogonal
// synthetic tasks, compared across progressive, direct-mix and balanced
// sampling with deterministic curves and a machine-readable report.

#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "omni/strategy.hpp"

using namespace omni;

namespace {

MixRecipe recipe(const std::string& strategy) {
    MixRecipe r;
    r.strategy = strategy;
    r.weights = {{"image", 1.0}, {"video", 1.0}, {"audio", 1.0}};
    return r;
}

}  // namespace

TEST_CASE("recipe validation rejects unknown strategies and bad weights") {
    CHECK_THROWS_AS(recipe("alternating").validate(), InputError);

    MixRecipe empty = recipe("direct-mix");
    empty.weights.clear();
    CHECK_THROWS_AS(empty.validate(), InputError);

    MixRecipe negative = recipe("direct-mix");
    negative.weights["video"] = -1.0;
    CHECK_THROWS_AS(negative.validate(), InputError);

    MixRecipe zeros = recipe("balanced");
    for (auto& [k, v] : zeros.weights) v = 0.0;
    CHECK_THROWS_AS(zeros.validate(), InputError);

    CHECK_NOTHROW(recipe("progressive").validate());
}

TEST_CASE("the suite builds orthogonal tasks with a near-zero linear floor") {
    const InterferenceSuite suite = InterferenceSuite::seeded(7);
    CHECK(suite.task_names[0] == "image");
    CHECK(suite.task_index("audio") == 2);
    CHECK_THROWS_AS(suite.task_index("text"), InputError);

    for (int t = 0; t < InterferenceSuite::kTasks; ++t) {
        for (int u = 0; u < InterferenceSuite::kTasks; ++u) {
            double dot = 0.0;
            for (int j = 0; j < InterferenceSuite::kDimIn; ++j) {
                dot += suite.direction[t].at(0, j) * suite.direction[u].at(0, j);
            }
            CHECK(dot == doctest::Approx(t == u ? 1.0 : 0.0));
        }
        // A full-rank linear map drives each task near the noise floor.
        const double floor = suite.closed_form_loss(t, 256, 1000 + t);
        CHECK(floor >= 0.0);
        CHECK(floor < 0.01);
    }
}

TEST_CASE("compare_strategies needs two recipes and one seed") {
    const InterferenceSuite suite = InterferenceSuite::seeded(7);
    CHECK_THROWS_AS(compare_strategies(suite, {recipe("progressive")}, {1}), InputError);
    CHECK_THROWS_AS(compare_strategies(suite, {recipe("progressive"), recipe("direct-mix")}, {}),
                    InputError);
}

TEST_CASE("reports are recipe-major, deterministic, and fully populated") {
    const InterferenceSuite suite = InterferenceSuite::seeded(7);
    const std::vector<MixRecipe> recipes = {recipe("progressive"), recipe("direct-mix"),
                                            recipe("balanced")};
    const std::vector<std::uint64_t> seeds = {1, 2, 3};
    CompareOptions opt;
    opt.steps = 60;

    const StrategyReport a = compare_strategies(suite, recipes, seeds, opt);
    const StrategyReport b = compare_strategies(suite, recipes, seeds, opt);

    REQUIRE(a.curves.size() == 9);
    for (std::size_t i = 0; i < a.curves.size(); ++i) {
        CHECK(a.curves[i].strategy == recipes[i / 3].strategy);
        CHECK(a.curves[i].seed == seeds[i % 3]);
        REQUIRE(a.curves[i].loss.size() == 60);
        for (const auto& row : a.curves[i].loss) {
            for (double v : row) CHECK(std::isfinite(v));
        }
        CHECK(a.curves[i].loss == b.curves[i].loss);  // bit-identical doubles
    }
    CHECK(report_curves_csv(a) == report_curves_csv(b));
    CHECK(report_curves_csv(a).rfind("strategy,seed,step,task,loss\n", 0) == 0);
}

TEST_CASE("training reduces loss on the tasks a strategy samples") {
    const InterferenceSuite suite = InterferenceSuite::seeded(7);
    const StrategyCurve curve = run_recipe(suite, recipe("direct-mix"), 1);
    const auto first = curve.loss.front();
    const auto last = curve.final_loss();
    for (int t = 0; t < InterferenceSuite::kTasks; ++t) CHECK(last[t] < first[t]);
}

TEST_CASE("progressive protects the first-stage task at least as well as direct mixing") {
    // Informational trend on the constructed suite: with the shared map
    // frozen after phase one, the first task's solution cannot be dragged
    // away by later tasks.
    const InterferenceSuite suite = InterferenceSuite::seeded(7);
    int wins = 0;
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        const double prog = run_recipe(suite, recipe("progressive"), seed).final_loss()[0];
        const double mix = run_recipe(suite, recipe("direct-mix"), seed).final_loss()[0];
        wins += prog <= mix ? 1 : 0;
    }
    CHECK(wins >= 2);
}

TEST_CASE("balanced sampling normalizes nonzero weights to one") {
    const InterferenceSuite suite = InterferenceSuite::seeded(7);
    // With equal input weights, balanced and direct-mix are the same process.
    MixRecipe skewed = recipe("balanced");
    skewed.weights["image"] = 5.0;
    skewed.weights["video"] = 0.0;
    CompareOptions opt;
    opt.steps = 40;
    const StrategyCurve curve = run_recipe(suite, skewed, 4, opt);
    // video was never sampled: its eval loss stays at the untrained level of
    // a model that only saw other tasks; image and audio both improve.
    CHECK(curve.final_loss()[0] < curve.loss.front()[0]);
    CHECK(curve.final_loss()[2] < curve.loss.front()[2]);
}

TEST_CASE("the json report carries the suite, options and per-run summaries") {
    const InterferenceSuite suite = InterferenceSuite::seeded(3);
    CompareOptions opt;
    opt.steps = 10;
    const StrategyReport report = compare_strategies(
        suite, {recipe("progressive"), recipe("direct-mix")}, {5}, opt);
    const nlohmann::ordered_json j = report_to_json(report);
    CHECK(j["suite"]["seed"] == 3);
    CHECK(j["suite"]["tasks"].size() == 3);
    CHECK(j["options"]["steps"] == 10);
    REQUIRE(j["runs"].size() == 2);
    CHECK(j["runs"][0]["strategy"] == "progressive");
    CHECK(j["runs"][0]["final_loss"].size() == 3);
}
