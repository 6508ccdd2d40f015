#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "omni/error.hpp"
#include "omni/training.hpp"

namespace omni {

// Run-wide configuration. Every key has a documented default; files and
// command-line overrides may only touch keys listed in the schema below.
struct RunConfig {
    std::uint64_t seed = 1;

    // vision
    long long vision_patch_size = 16;
    long long vision_dim = 16;
    long long vision_max_side = 1536;
    long long vision_max_frames = 64;
    bool pool_scalar_pi = false;  // recorded variant; only per-channel is implemented

    // audio
    long long audio_chunk_cap = 25;
    long long audio_speech_dim = 32;
    long long audio_music_dim = 16;
    long long audio_music_frame = 3200;
    long long audio_downsample = 10;

    // fusion + decoder
    long long fusion_llm_dim = 32;
    long long fusion_budget = kTokenBudget;
    long long fusion_connector_hidden = 64;
    long long decoder_ffn = 64;
    long long decoder_vocab = 80;

    // training
    double train_shrink = 1e-4;
    long long train_steps = 100;
    long long train_batch = 0;  // 0 = use the stage plan's batch size
    std::uint64_t train_seed = 1;

    // forge
    double forge_threshold = 0.8;
    long long forge_min_words = 10;
    long long forge_qa_min = 3;
    long long forge_retries = 3;
    std::uint64_t forge_seed = 1;

    // strategy comparison
    long long compare_steps = 300;
    long long compare_batch = 16;
    double compare_lr = 0.05;
    long long compare_eval_samples = 256;
};

struct ConfigKey {
    std::string name;
    std::string kind;  // int | real | bool
    std::string description;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

namespace detail {

inline long long parse_int_value(const std::string& key, const std::string& raw) {
    try {
        std::size_t used = 0;
        long long v = std::stoll(raw, &used);
        if (used != raw.size()) throw std::invalid_argument(raw);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " expects an integer, got '" + raw + "'");
    }
}

inline double parse_real_value(const std::string& key, const std::string& raw) {
    try {
        std::size_t used = 0;
        double v = std::stod(raw, &used);
        if (used != raw.size()) throw std::invalid_argument(raw);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " expects a number, got '" + raw + "'");
    }
}

inline bool parse_bool_value(const std::string& key, const std::string& raw) {
    if (raw == "true" || raw == "1") return true;
    if (raw == "false" || raw == "0") return false;
    throw ConfigError("config key " + key + " expects true/false, got '" + raw + "'");
}

inline std::string real_to_string(double v) {
    std::ostringstream out;
    out << v;
    return out.str();
}

}  // namespace detail

inline const std::vector<ConfigKey>& config_schema() {
    auto int_key = [](const char* name, long long RunConfig::* member, const char* desc) {
        return ConfigKey{
            name, "int", desc,
            [member](const RunConfig& c) { return std::to_string(c.*member); },
            [member, name = std::string(name)](RunConfig& c, const std::string& raw) {
                c.*member = detail::parse_int_value(name, raw);
            }};
    };
    auto seed_key = [](const char* name, std::uint64_t RunConfig::* member, const char* desc) {
        return ConfigKey{
            name, "int", desc,
            [member](const RunConfig& c) { return std::to_string(c.*member); },
            [member, name = std::string(name)](RunConfig& c, const std::string& raw) {
                long long v = detail::parse_int_value(name, raw);
                if (v < 0) throw ConfigError("config key " + name + " must be >= 0");
                c.*member = static_cast<std::uint64_t>(v);
            }};
    };
    auto real_key = [](const char* name, double RunConfig::* member, const char* desc) {
        return ConfigKey{
            name, "real", desc,
            [member](const RunConfig& c) { return detail::real_to_string(c.*member); },
            [member, name = std::string(name)](RunConfig& c, const std::string& raw) {
                c.*member = detail::parse_real_value(name, raw);
            }};
    };
    auto bool_key = [](const char* name, bool RunConfig::* member, const char* desc) {
        return ConfigKey{
            name, "bool", desc,
            [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); },
            [member, name = std::string(name)](RunConfig& c, const std::string& raw) {
                c.*member = detail::parse_bool_value(name, raw);
            }};
    };

    static const std::vector<ConfigKey> schema = {
        seed_key("seed", &RunConfig::seed, "default seed for commands without --seed"),
        int_key("vision.patch_size", &RunConfig::vision_patch_size, "square patch edge in pixels"),
        int_key("vision.dim", &RunConfig::vision_dim, "visual feature channels per patch"),
        int_key("vision.max_side", &RunConfig::vision_max_side,
                "longest image side accepted before rejection"),
        int_key("vision.max_frames", &RunConfig::vision_max_frames,
                "frame cap applied to video inputs"),
        bool_key("pool.scalar_pi", &RunConfig::pool_scalar_pi,
                 "scalar (non-per-channel) pooling weights; recorded but unimplemented"),
        int_key("audio.chunk_cap", &RunConfig::audio_chunk_cap,
                "maximum 30 s chunks accepted per waveform"),
        int_key("audio.speech_dim", &RunConfig::audio_speech_dim,
                "channels from the speech branch"),
        int_key("audio.music_dim", &RunConfig::audio_music_dim, "channels from the music branch"),
        int_key("audio.music_frame", &RunConfig::audio_music_frame,
                "samples per music-branch analysis frame"),
        int_key("audio.downsample", &RunConfig::audio_downsample,
                "temporal mean-pool factor applied to fused audio frames"),
        int_key("fusion.llm_dim", &RunConfig::fusion_llm_dim, "language-model embedding width"),
        int_key("fusion.budget", &RunConfig::fusion_budget,
                "maximum items in one assembled token sequence"),
        int_key("fusion.connector_hidden", &RunConfig::fusion_connector_hidden,
                "hidden width of the two-layer connectors"),
        int_key("decoder.ffn", &RunConfig::decoder_ffn, "decoder feed-forward width"),
        int_key("decoder.vocab", &RunConfig::decoder_vocab, "decoder vocabulary size"),
        real_key("train.shrink", &RunConfig::train_shrink,
                 "global scale applied to stage-plan dataset counts"),
        int_key("train.steps", &RunConfig::train_steps, "optimizer steps per training run"),
        int_key("train.batch", &RunConfig::train_batch,
                "samples per step; 0 uses the stage plan's batch size"),
        seed_key("train.seed", &RunConfig::train_seed, "seed for training runs"),
        real_key("forge.threshold", &RunConfig::forge_threshold,
                 "minimum English-token ratio for subtitles"),
        int_key("forge.min_words", &RunConfig::forge_min_words,
                "minimum subtitle length in whitespace tokens"),
        int_key("forge.qa_min", &RunConfig::forge_qa_min,
                "minimum generated QA pairs per record"),
        int_key("forge.retries", &RunConfig::forge_retries,
                "retries after a service failure before recording service-error"),
        seed_key("forge.seed", &RunConfig::forge_seed, "seed for sampling and mixing"),
        int_key("compare.steps", &RunConfig::compare_steps, "steps per strategy run"),
        int_key("compare.batch", &RunConfig::compare_batch, "samples per strategy step"),
        real_key("compare.lr", &RunConfig::compare_lr, "learning rate for strategy runs"),
        int_key("compare.eval_samples", &RunConfig::compare_eval_samples,
                "fixed evaluation samples per task"),
    };
    return schema;
}

inline const ConfigKey& find_config_key(const std::string& name) {
    for (const ConfigKey& k : config_schema()) {
        if (k.name == name) return k;
    }
    throw ConfigError("unknown config key: " + name);
}

// Applies "key=value" (used for command-line overrides).
inline void apply_override(RunConfig& config, const std::string& assignment) {
    std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override must look like key=value, got '" + assignment + "'");
    }
    const std::string name = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    find_config_key(name).set(config, raw);
}

namespace detail {

inline void apply_json_node(RunConfig& config, const std::string& prefix,
                            const nlohmann::json& node) {
    if (node.is_object()) {
        for (auto it = node.begin(); it != node.end(); ++it) {
            const std::string name = prefix.empty() ? it.key() : prefix + "." + it.key();
            apply_json_node(config, name, it.value());
        }
        return;
    }
    std::string raw;
    if (node.is_string()) {
        raw = node.get<std::string>();
    } else if (node.is_boolean()) {
        raw = node.get<bool>() ? "true" : "false";
    } else if (node.is_number()) {
        raw = node.dump();
    } else {
        throw ConfigError("config key " + prefix + " has unsupported value " + node.dump());
    }
    find_config_key(prefix).set(config, raw);
}

}  // namespace detail

// Nested JSON file; leaf paths join with '.' to form schema keys.
inline RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    RunConfig config;
    detail::apply_json_node(config, "", j);
    return config;
}

// Cross-key checks, called after file + overrides are applied.
inline void validate_config(const RunConfig& c) {
    if (c.pool_scalar_pi) {
        throw ConfigError(
            "pool.scalar_pi=true selects the scalar pooling-weight variant, which is recorded "
            "but unimplemented; only per-channel weights are supported");
    }
    auto require_positive = [](const char* key, long long v) {
        if (v <= 0) throw ConfigError(std::string("config key ") + key + " must be positive");
    };
    require_positive("vision.patch_size", c.vision_patch_size);
    require_positive("vision.dim", c.vision_dim);
    require_positive("vision.max_side", c.vision_max_side);
    require_positive("vision.max_frames", c.vision_max_frames);
    require_positive("audio.chunk_cap", c.audio_chunk_cap);
    require_positive("audio.speech_dim", c.audio_speech_dim);
    require_positive("audio.music_dim", c.audio_music_dim);
    require_positive("audio.music_frame", c.audio_music_frame);
    require_positive("audio.downsample", c.audio_downsample);
    require_positive("fusion.llm_dim", c.fusion_llm_dim);
    require_positive("fusion.budget", c.fusion_budget);
    require_positive("fusion.connector_hidden", c.fusion_connector_hidden);
    require_positive("decoder.ffn", c.decoder_ffn);
    require_positive("decoder.vocab", c.decoder_vocab);
    if (c.decoder_vocab <= kFirstTextId) {
        throw ConfigError("decoder.vocab must exceed the marker range (" +
                          std::to_string(kFirstTextId) + ")");
    }
    if (!(c.train_shrink > 0.0)) throw ConfigError("train.shrink must be positive");
    if (c.train_steps <= 0) throw ConfigError("train.steps must be positive");
    if (c.train_batch < 0) throw ConfigError("train.batch must be >= 0");
    if (!(c.forge_threshold > 0.0) || c.forge_threshold > 1.0) {
        throw ConfigError("forge.threshold must be in (0,1]");
    }
    if (c.forge_min_words < 0) throw ConfigError("forge.min_words must be >= 0");
    if (c.forge_qa_min < 1) throw ConfigError("forge.qa_min must be >= 1");
    if (c.forge_retries < 0) throw ConfigError("forge.retries must be >= 0");
    if (c.compare_steps < 3) throw ConfigError("compare.steps must be >= 3");
    if (c.compare_batch <= 0) throw ConfigError("compare.batch must be positive");
    if (!(c.compare_lr > 0.0)) throw ConfigError("compare.lr must be positive");
    if (c.compare_eval_samples <= 0) throw ConfigError("compare.eval_samples must be positive");
}

// `config show` body: every key with its current value and documentation.
inline std::string config_show(const RunConfig& config) {
    RunConfig defaults;
    std::ostringstream out;
    for (const ConfigKey& k : config_schema()) {
        out << k.name << " = " << k.get(config) << "    # " << k.kind << ", default "
            << k.get(defaults) << "; " << k.description << "\n";
    }
    return out.str();
}

// Materialized sub-configs for the pipeline types.
inline ModelConfig to_model_config(const RunConfig& c) {
    ModelConfig m;
    m.vision.patch_size = static_cast<int>(c.vision_patch_size);
    m.vision.dim = static_cast<int>(c.vision_dim);
    m.vision.max_side = static_cast<int>(c.vision_max_side);
    m.vision.max_frames = static_cast<int>(c.vision_max_frames);
    m.audio.chunk_cap = static_cast<int>(c.audio_chunk_cap);
    m.audio.speech_dim = static_cast<int>(c.audio_speech_dim);
    m.audio.music_dim = static_cast<int>(c.audio_music_dim);
    m.audio.music_frame = static_cast<int>(c.audio_music_frame);
    m.audio.downsample = static_cast<int>(c.audio_downsample);
    m.decoder.dim = static_cast<int>(c.fusion_llm_dim);
    m.decoder.ffn = static_cast<int>(c.decoder_ffn);
    m.decoder.vocab = static_cast<int>(c.decoder_vocab);
    m.connector_hidden = static_cast<int>(c.fusion_connector_hidden);
    return m;
}

}  // namespace omni
