// Command-line surface for the desk-scale omni-modal pipeline. One command
// per process; all diagnostics go to stderr, all data to stdout or files, and
// the exit code is 0 iff no errors occurred.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "omni/audio.hpp"
#include "omni/config.hpp"
#include "omni/decoder.hpp"
#include "omni/forge.hpp"
#include "omni/fusion.hpp"
#include "omni/gradcheck_suite.hpp"
#include "omni/http_client.hpp"
#include "omni/image.hpp"
#include "omni/strategy.hpp"
#include "omni/tasks.hpp"
#include "omni/tensor_io.hpp"
#include "omni/training.hpp"
#include "omni/vision.hpp"
#include "omni/wav.hpp"

namespace {

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(csv);
    while (std::getline(in, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<std::uint64_t> split_seeds(const std::string& csv) {
    std::vector<std::uint64_t> out;
    for (const std::string& s : split_list(csv)) {
        try {
            out.push_back(std::stoull(s));
        } catch (const std::exception&) {
            throw omni::InputError("bad seed '" + s + "' in seed list");
        }
    }
    return out;
}

// "-" or empty targets stdout.
void emit(const std::string& path, const std::string& content) {
    if (path.empty() || path == "-") {
        std::cout << content;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw omni::IoError("cannot write '" + path + "'");
    out << content;
    std::cerr << "wrote " << path << "\n";
}

struct GlobalOpts {
    std::string config_path;
    std::vector<std::string> overrides;

    omni::RunConfig load() const {
        omni::RunConfig c = config_path.empty() ? omni::RunConfig{}
                                                : omni::load_config_file(config_path);
        for (const std::string& o : overrides) omni::apply_override(c, o);
        omni::validate_config(c);
        return c;
    }
};

int cmd_pool(const GlobalOpts& g, const std::string& image_path, const std::string& out_path) {
    const omni::RunConfig cfg = g.load();
    const omni::ModelConfig mc = omni::to_model_config(cfg);
    const omni::OmniModel model = omni::OmniModel::seeded(mc, cfg.seed);

    const omni::ImageInput image = omni::read_image(image_path);
    const omni::PatchGrid grid = omni::patchify(image, model.embedder, mc.vision.max_side);
    const omni::PatchGrid pooled = omni::local_global_pool(grid, model.scorer);

    std::printf("tokens: %d (pooled %dx%d -> %dx%d)\n", pooled.token_count(), grid.rows,
                grid.cols, pooled.rows, pooled.cols);
    std::printf("visual items: %d\n", omni::visual_item_count(pooled.rows, pooled.cols));
    if (!out_path.empty()) {
        omni::write_tensor_file(out_path, pooled.features);
        std::cerr << "wrote " << out_path << "\n";
    }
    return 0;
}

int cmd_audio(const GlobalOpts& g, const std::string& wav_path, const std::string& out_path) {
    const omni::RunConfig cfg = g.load();
    const omni::ModelConfig mc = omni::to_model_config(cfg);
    const omni::AudioFrontend frontend(mc.audio, cfg.seed);

    const omni::Waveform wav = omni::read_wav(wav_path);
    const std::vector<omni::Tensor> chunks = frontend.encode(wav);
    int total = 0;
    double checksum = 0.0;
    for (const omni::Tensor& t : chunks) {
        total += t.shape[0];
        for (float v : t.data) checksum += v;
    }
    std::printf("%d audio tokens, %d chunks\n", total, static_cast<int>(chunks.size()));
    std::printf("checksum: %.6f\n", checksum);
    if (!out_path.empty()) {
        omni::Tensor all({total, chunks[0].shape[1]});
        int row = 0;
        for (const omni::Tensor& t : chunks) {
            for (int i = 0; i < t.shape[0]; ++i, ++row) {
                for (int j = 0; j < t.shape[1]; ++j) all.at(row, j) = t.at(i, j);
            }
        }
        omni::write_tensor_file(out_path, all);
        std::cerr << "wrote " << out_path << "\n";
    }
    return 0;
}

int cmd_train(const GlobalOpts& g, const std::string& stage, std::uint64_t seed, double shrink,
              int steps, int batch, bool plan_only, const std::string& out_path) {
    const omni::RunConfig cfg = g.load();
    const omni::StagePlan plan = omni::build_stage_plan(stage, shrink);
    if (plan_only) {
        emit(out_path, omni::plan_to_text(plan));
        return 0;
    }
    const omni::ModelConfig mc = omni::to_model_config(cfg);
    omni::OmniModel model = omni::OmniModel::seeded(mc, cfg.seed);
    const omni::TaskRegistry registry =
        omni::default_task_registry(mc.audio.speech_dim + mc.audio.music_dim);

    omni::RunOptions opt;
    opt.steps = steps;
    opt.batch = batch;
    opt.seed = seed;
    const omni::MetricTrace trace = omni::run_stage(plan, model, registry, opt);
    std::cerr << "stage " << plan.stage_id << ": " << trace.rows.size() << " steps, batch "
              << (batch > 0 ? batch : plan.batch_size) << ", trainable "
              << omni::trainable_digest(plan) << "\n";
    emit(out_path, omni::trace_to_csv(trace));
    return 0;
}

int cmd_compare(const GlobalOpts& g, const std::string& recipes_csv, const std::string& seeds_csv,
                std::uint64_t suite_seed, const std::string& json_path,
                const std::string& csv_path) {
    const omni::RunConfig cfg = g.load();
    std::vector<omni::MixRecipe> recipes;
    for (const std::string& name : split_list(recipes_csv)) {
        omni::MixRecipe r;
        r.strategy = name;
        r.weights = {{"image", 1.0}, {"video", 1.0}, {"audio", 1.0}};
        recipes.push_back(std::move(r));
    }
    omni::CompareOptions opt;
    opt.steps = static_cast<int>(cfg.compare_steps);
    opt.batch = static_cast<int>(cfg.compare_batch);
    opt.lr = static_cast<float>(cfg.compare_lr);
    opt.eval_samples = static_cast<int>(cfg.compare_eval_samples);

    const omni::InterferenceSuite suite = omni::InterferenceSuite::seeded(suite_seed);
    const omni::StrategyReport report =
        omni::compare_strategies(suite, recipes, split_seeds(seeds_csv), opt);
    emit(json_path, omni::report_to_json(report).dump(2) + "\n");
    if (!csv_path.empty()) emit(csv_path, omni::report_curves_csv(report));
    return 0;
}

int cmd_gradcheck(const std::string& which, int seed_count, double tolerance) {
    if (seed_count < 1) throw omni::InputError("gradcheck needs at least one seed");
    std::vector<std::uint64_t> seeds;
    for (int i = 1; i <= seed_count; ++i) seeds.push_back(static_cast<std::uint64_t>(i));
    const std::vector<omni::GradCheckResult> results =
        omni::run_gradcheck(which, seeds, tolerance);
    bool all_pass = true;
    std::printf("%-22s %14s  result\n", "op", "max-rel-err");
    for (const omni::GradCheckResult& r : results) {
        std::printf("%-22s %14.3e  %s\n", r.name.c_str(), r.max_rel_err,
                    r.pass ? "pass" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    if (!all_pass) {
        std::cerr << "gradcheck failed (tolerance " << tolerance << ")\n";
        return 1;
    }
    return 0;
}

int cmd_forge_filter(const GlobalOpts& g, const std::string& in_path,
                     const std::string& fixtures, double threshold, int min_words,
                     const std::string& out_path) {
    const omni::RunConfig cfg = g.load();
    omni::FilterOptions opt;
    opt.threshold = threshold > 0.0 ? threshold : cfg.forge_threshold;
    opt.min_words = min_words > 0 ? min_words : static_cast<int>(cfg.forge_min_words);
    opt.retries = static_cast<int>(cfg.forge_retries);

    const std::vector<omni::VideoRecord> records = omni::read_records_file(in_path);
    omni::Manifest m;
    m.recipe = "filter";
    m.seed = cfg.forge_seed;
    long long passed = 0;
    std::unique_ptr<omni::FixtureClient> client;
    if (!fixtures.empty()) client = std::make_unique<omni::FixtureClient>(fixtures, "filter-llm");
    for (const omni::VideoRecord& r : records) {
        omni::ManifestEntry e;
        e.id = r.id;
        e.source = r.source;
        e.subtitle = r.subtitle;
        if (client) {
            e.verdicts = omni::filter_chain(r.subtitle, *client, opt);
        } else {
            // Without fixtures only the string filters run; the llm stage
            // needs a service client.
            e.verdicts.push_back(omni::check_english_ratio(r.subtitle, opt.threshold));
            if (e.verdicts.back().pass) {
                e.verdicts.push_back(omni::check_length(r.subtitle, opt.min_words));
            }
        }
        const bool pass = e.verdicts.back().pass;
        e.task = pass ? "filtered" : "rejected";
        passed += pass ? 1 : 0;
        m.entries.push_back(std::move(e));
    }
    m.counts["input"] = static_cast<long long>(records.size());
    m.counts["filtered"] = passed;
    m.counts["rejected"] = static_cast<long long>(records.size()) - passed;
    omni::validate_manifest(m, records);
    emit(out_path, omni::manifest_to_string(m));
    return 0;
}

int cmd_forge_qa(const GlobalOpts& g, const std::string& in_path, const std::string& fixtures,
                 int qa_min, const std::string& out_path) {
    const omni::RunConfig cfg = g.load();
    omni::ForgeOptions opt;
    opt.filter.threshold = cfg.forge_threshold;
    opt.filter.min_words = static_cast<int>(cfg.forge_min_words);
    opt.filter.retries = static_cast<int>(cfg.forge_retries);
    opt.qa_min = qa_min > 0 ? qa_min : static_cast<int>(cfg.forge_qa_min);
    opt.seed = cfg.forge_seed;

    const std::vector<omni::VideoRecord> records = omni::read_records_file(in_path);
    omni::FixtureClient filter_client(fixtures, "filter-llm");
    omni::FixtureClient qa_client(fixtures, "qa-vlm");
    const omni::Manifest m = omni::curate(records, filter_client, qa_client, opt);
    omni::validate_manifest(m, records);
    emit(out_path, omni::manifest_to_string(m));
    return 0;
}

int cmd_forge_mix(const GlobalOpts& g, const std::string& recipe_path, std::int64_t seed_flag,
                  const std::string& out_path) {
    const omni::RunConfig cfg = g.load();
    std::ifstream in(recipe_path);
    if (!in) throw omni::IoError("cannot read recipe file: " + recipe_path);
    nlohmann::json recipe;
    try {
        in >> recipe;
    } catch (const nlohmann::json::exception& e) {
        throw omni::InputError(std::string("recipe file is not valid JSON: ") + e.what());
    }

    omni::MixPlan plan;
    plan.seed = recipe.value("seed", cfg.forge_seed);
    if (seed_flag >= 0) plan.seed = static_cast<std::uint64_t>(seed_flag);
    if (!recipe.contains("entries") || !recipe["entries"].is_array()) {
        throw omni::InputError("recipe file needs an 'entries' array");
    }
    std::vector<std::pair<std::string, omni::Manifest>> sources;
    for (const auto& e : recipe["entries"]) {
        omni::MixPlanEntry pe;
        pe.source = e.value("source", "");
        if (pe.source.empty()) throw omni::InputError("recipe entry without source name");
        if (e.contains("count")) {
            pe.count = e["count"].get<long long>();
        } else if (e.contains("fraction")) {
            pe.fraction = e["fraction"].get<double>();
        } else {
            throw omni::InputError("recipe entry " + pe.source + " needs fraction or count");
        }
        const std::string path = e.value("path", "");
        if (path.empty()) throw omni::InputError("recipe entry " + pe.source + " needs a path");
        sources.emplace_back(pe.source, omni::read_manifest_file(path));
        plan.entries.push_back(std::move(pe));
    }
    const omni::Manifest mixed = omni::mix_datasets(sources, plan);
    emit(out_path, omni::manifest_to_string(mixed));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale omni-modal pipeline"};
    app.require_subcommand(1);

    GlobalOpts global;
    app.add_option("--config", global.config_path, "JSON config file");
    app.add_option("--set", global.overrides, "config override key=value (repeatable)");

    // pool
    std::string pool_image, pool_out;
    CLI::App* pool = app.add_subcommand("pool", "patchify + pool an image, report token counts");
    pool->add_option("image", pool_image, "input image (.ppm or tensor file)")->required();
    pool->add_option("--out", pool_out, "write pooled features to this tensor file");
    pool->fallthrough();

    // audio
    std::string audio_wav, audio_out;
    CLI::App* audio = app.add_subcommand("audio", "encode a wav file, report token counts");
    audio->add_option("wav", audio_wav, "input wav (PCM-16 mono 16 kHz)")->required();
    audio->add_option("--out", audio_out, "write concatenated tokens to this tensor file");
    audio->fallthrough();

    // train
    std::string train_stage, train_out;
    std::uint64_t train_seed = 1;
    double train_shrink = 1e-4;
    int train_steps = 100, train_batch = 8;
    bool train_plan_only = false;
    CLI::App* train = app.add_subcommand("train", "run one alignment stage on synthetic tasks");
    train->add_option("--stage", train_stage, "stage id (S1-align, S1-sft, S2, S3-align, S3-joint)")
        ->required();
    train->add_option("--seed", train_seed, "run seed (default 1)");
    train->add_option("--shrink", train_shrink, "dataset shrink factor (default 1e-4)");
    train->add_option("--steps", train_steps, "optimizer steps (default 100)");
    train->add_option("--batch", train_batch, "samples per step; 0 = plan batch (default 8)");
    train->add_flag("--plan-only", train_plan_only, "print the stage plan and exit");
    train->add_option("--out", train_out, "trace CSV path (default stdout)");
    train->fallthrough();

    // compare
    std::string cmp_recipes, cmp_seeds = "1,2,3", cmp_json, cmp_csv;
    std::uint64_t cmp_suite_seed = 7;
    CLI::App* compare = app.add_subcommand("compare", "compare mixing strategies on the "
                                                      "shared-bottleneck suite");
    compare->add_option("--recipes", cmp_recipes,
                        "comma list of strategies (progressive, direct-mix, balanced)")
        ->required();
    compare->add_option("--seeds", cmp_seeds, "comma list of run seeds (default 1,2,3)");
    compare->add_option("--suite-seed", cmp_suite_seed, "interference suite seed (default 7)");
    compare->add_option("--out-json", cmp_json, "report JSON path (default stdout)");
    compare->add_option("--out-csv", cmp_csv, "curve CSV path");
    compare->fallthrough();

    // gradcheck
    std::string gc_which = "all";
    int gc_seeds = 10;
    double gc_tol = 1e-3;
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every "
                                                          "backward pass");
    gradcheck->add_option("op", gc_which, "case name or 'all' (default all)");
    gradcheck->add_option("--seeds", gc_seeds, "number of seeds per case (default 10)");
    gradcheck->add_option("--tolerance", gc_tol, "max relative error allowed (default 1e-3)");
    gradcheck->fallthrough();

    // forge
    CLI::App* forge = app.add_subcommand("forge", "cross-modal data curation pipeline");
    forge->require_subcommand(1);
    std::string ff_in, ff_fixtures, ff_out;
    double ff_threshold = -1.0;
    int ff_min_words = -1;
    CLI::App* ffilter = forge->add_subcommand("filter", "run the subtitle filter chain");
    ffilter->add_option("--in", ff_in, "records JSONL file")->required();
    ffilter->add_option("--fixtures", ff_fixtures,
                        "fixture dir for the completeness service (string filters only if absent)");
    ffilter->add_option("--threshold", ff_threshold, "English-ratio threshold (default 0.8)");
    ffilter->add_option("--min-words", ff_min_words, "minimum subtitle words (default 10)");
    ffilter->add_option("--out", ff_out, "manifest path (default stdout)");
    ffilter->fallthrough();

    std::string fq_in, fq_fixtures, fq_out;
    int fq_min = -1;
    CLI::App* fqa = forge->add_subcommand("qa", "filter records then generate QA pairs");
    fqa->add_option("--in", fq_in, "records JSONL file")->required();
    fqa->add_option("--fixtures", fq_fixtures, "fixture dir for both services")->required();
    fqa->add_option("--qa-min", fq_min, "minimum pairs per record (default 3)");
    fqa->add_option("--out", fq_out, "manifest path (default stdout)");
    fqa->fallthrough();

    std::string fm_recipe, fm_out;
    std::int64_t fm_seed = -1;
    CLI::App* fmix = forge->add_subcommand("mix", "sample and shuffle manifests per a recipe");
    fmix->add_option("--recipe", fm_recipe, "recipe JSON file")->required();
    fmix->add_option("--seed", fm_seed, "override the recipe seed");
    fmix->add_option("--out", fm_out, "manifest path (default stdout)");
    fmix->fallthrough();

    // config
    CLI::App* config = app.add_subcommand("config", "configuration inspection");
    config->require_subcommand(1);
    CLI::App* config_show = config->add_subcommand("show", "print every key, value and default");
    config_show->fallthrough();

    CLI11_PARSE(app, argc, argv);

    try {
        if (pool->parsed()) return cmd_pool(global, pool_image, pool_out);
        if (audio->parsed()) return cmd_audio(global, audio_wav, audio_out);
        if (train->parsed()) {
            return cmd_train(global, train_stage, train_seed, train_shrink, train_steps,
                             train_batch, train_plan_only, train_out);
        }
        if (compare->parsed()) {
            return cmd_compare(global, cmp_recipes, cmp_seeds, cmp_suite_seed, cmp_json, cmp_csv);
        }
        if (gradcheck->parsed()) return cmd_gradcheck(gc_which, gc_seeds, gc_tol);
        if (forge->parsed()) {
            if (ffilter->parsed()) {
                return cmd_forge_filter(global, ff_in, ff_fixtures, ff_threshold, ff_min_words,
                                        ff_out);
            }
            if (fqa->parsed()) return cmd_forge_qa(global, fq_in, fq_fixtures, fq_min, fq_out);
            if (fmix->parsed()) return cmd_forge_mix(global, fm_recipe, fm_seed, fm_out);
        }
        if (config->parsed() && config_show->parsed()) {
            std::cout << omni::config_show(global.load());
            return 0;
        }
    } catch (const omni::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "error: no command executed\n";
    return 1;
}
