#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "omni/audio.hpp"
#include "omni/decoder.hpp"
#include "omni/error.hpp"
#include "omni/fusion.hpp"
#include "omni/image.hpp"
#include "omni/rng.hpp"
#include "omni/tensor.hpp"
#include "omni/vision.hpp"
#include "omni/wav.hpp"

namespace omni {

// ---------------------------------------------------------------------------
// Whole desk-scale model: front-ends, connectors, decoder. Parameters are
// addressed through named groups so stage plans can freeze and thaw them.

struct ModelConfig {
    VisionConfig vision;
    AudioConfig audio;
    DecoderConfig decoder;
    int connector_hidden = 64;
};

struct OmniModel {
    ModelConfig cfg;
    PatchEmbedder embedder;
    PoolScorer scorer;
    Connector visual_conn;
    SpeechEncoder speech;
    MusicEncoder music;
    Connector audio_conn;
    Decoder decoder;

    static OmniModel seeded(const ModelConfig& cfg, std::uint64_t seed) {
        OmniModel m;
        m.cfg = cfg;
        m.embedder = PatchEmbedder::seeded(cfg.vision.patch_size, cfg.vision.dim, seed + 1);
        m.scorer = PoolScorer::seeded(cfg.vision.dim, seed + 2);
        m.visual_conn = Connector::seeded(cfg.vision.dim, cfg.connector_hidden,
                                          cfg.decoder.dim, seed + 3);
        m.speech = SpeechEncoder::seeded(cfg.audio.speech_dim, seed + 4);
        m.music = MusicEncoder::seeded(cfg.audio.music_dim, cfg.audio.music_frame, seed + 5);
        m.audio_conn = Connector::seeded(cfg.audio.speech_dim + cfg.audio.music_dim,
                                         cfg.connector_hidden, cfg.decoder.dim, seed + 6);
        m.decoder = Decoder::seeded(cfg.decoder, seed + 7);
        return m;
    }
};

inline const std::vector<std::string>& parameter_group_names() {
    static const std::vector<std::string> names = {
        "vision-embedder", "pool-scorer",   "visual-connector", "speech-encoder",
        "music-encoder",   "audio-connector", "decoder"};
    return names;
}

inline std::vector<Tensor*> group_params(OmniModel& m, const std::string& group) {
    if (group == "vision-embedder") return {&m.embedder.weight, &m.embedder.bias};
    if (group == "pool-scorer") return {&m.scorer.weight1, &m.scorer.bias1};
    if (group == "visual-connector") {
        return {&m.visual_conn.w1, &m.visual_conn.b1, &m.visual_conn.w2, &m.visual_conn.b2};
    }
    if (group == "speech-encoder") return {&m.speech.weight, &m.speech.bias};
    if (group == "music-encoder") return {&m.music.weight, &m.music.bias};
    if (group == "audio-connector") {
        return {&m.audio_conn.w1, &m.audio_conn.b1, &m.audio_conn.w2, &m.audio_conn.b2};
    }
    if (group == "decoder") {
        Decoder& d = m.decoder;
        return {&d.embed, &d.wq, &d.wk, &d.wv, &d.wo, &d.wf1,
                &d.bf1,   &d.wf2, &d.bf2, &d.wout, &d.bout};
    }
    throw ConfigError("unknown parameter group: " + group);
}

inline std::vector<const Tensor*> group_params(const OmniModel& m, const std::string& group) {
    std::vector<Tensor*> p = group_params(const_cast<OmniModel&>(m), group);
    return std::vector<const Tensor*>(p.begin(), p.end());
}

// Per-group gradient storage, tensor order matching group_params.
using GroupGrads = std::map<std::string, std::vector<Tensor>>;

inline GroupGrads zero_grads(const OmniModel& m) {
    GroupGrads g;
    for (const std::string& name : parameter_group_names()) {
        for (const Tensor* p : group_params(m, name)) g[name].push_back(Tensor(p->shape));
    }
    return g;
}

inline void add_into(Tensor& into, const Tensor& g) {
    if (into.shape != g.shape) {
        throw DimensionError("gradient shape " + shape_str(g.shape) + " does not match " +
                             shape_str(into.shape));
    }
    for (std::size_t i = 0; i < into.data.size(); ++i) into.data[i] += g.data[i];
}

inline void scale_grads(GroupGrads& grads, float s) {
    for (auto& [name, tensors] : grads) {
        for (Tensor& t : tensors) {
            for (float& v : t.data) v *= s;
        }
    }
}

// ---------------------------------------------------------------------------
// One training sample: modality content plus a trailing text span. Part
// order in the assembled sequence is images, waveforms, pre-encoded audio
// feature parts, then text. Feature parts enter after the audio front-end
// (already fused and downsampled) so synthetic tasks skip the costly
// spectrogram path; real waveforms take the full path.

struct SampleInput {
    std::vector<ImageInput> images;
    std::vector<Waveform> waveforms;
    std::vector<std::vector<Tensor>> audio_feature_parts;  // per part: chunk tensors
    std::vector<int> text_ids;
};

namespace detail {

struct VisualPartCache {
    const ImageInput* image;
    PatchGrid grid;
    PatchGrid pooled;
    Connector::Cache conn;
};

struct AudioPartCache {
    bool real = false;
    std::vector<AudioChunk> chunks;         // real parts only
    std::vector<MelGram> mels;              // real parts only
    std::vector<Tensor> stats;              // real parts only, M x 4 per chunk
    const std::vector<Tensor>* feats = nullptr;  // feature parts: borrowed input
    std::vector<Tensor> own_feats;          // real parts: downsampled tokens
    std::vector<Connector::Cache> conn;     // per chunk
};

}  // namespace detail

struct PipelineResult {
    TokenSequence seq;
    double loss = 0.0;
};

// Forward through every front-end into the decoder; optionally backward,
// accumulating parameter gradients by group. Returns the sample loss.
inline double sample_loss_and_grads(const OmniModel& m, const SampleInput& sample,
                                    GroupGrads* out_grads, TokenSequence* out_seq = nullptr) {
    std::vector<detail::VisualPartCache> vparts;
    std::vector<detail::AudioPartCache> aparts;
    std::vector<std::vector<TokenItem>> parts;

    for (const ImageInput& image : sample.images) {
        detail::VisualPartCache vc;
        vc.image = &image;
        vc.grid = patchify(image, m.embedder, m.cfg.vision.max_side);
        vc.pooled = local_global_pool(vc.grid, m.scorer);
        Tensor flat({vc.pooled.rows * vc.pooled.cols, vc.pooled.channels()});
        flat.data = vc.pooled.features.data;
        vc.conn = m.visual_conn.forward_cached(flat);

        std::vector<TokenItem> part;
        part.push_back(TokenItem::marker(markers::visual_start));
        for (int r = 0; r < vc.pooled.rows; ++r) {
            for (int col = 0; col < vc.pooled.cols; ++col) {
                Tensor row({1, vc.conn.out.shape[1]});
                for (int j = 0; j < vc.conn.out.shape[1]; ++j) {
                    row.at(0, j) = vc.conn.out.at(r * vc.pooled.cols + col, j);
                }
                part.push_back(TokenItem::visual(std::move(row)));
            }
            part.push_back(TokenItem::marker(markers::visual_newline));
        }
        part.push_back(TokenItem::marker(markers::visual_end));
        parts.push_back(std::move(part));
        vparts.push_back(std::move(vc));
    }

    auto encode_audio_part = [&](detail::AudioPartCache& ac) {
        const std::vector<Tensor>& feats = ac.real ? ac.own_feats : *ac.feats;
        std::vector<TokenItem> part;
        part.push_back(TokenItem::marker(markers::audio_start));
        for (std::size_t i = 0; i < feats.size(); ++i) {
            if (i > 0) part.push_back(TokenItem::marker(markers::audio_sep));
            ac.conn.push_back(m.audio_conn.forward_cached(feats[i]));
            const Tensor& proj = ac.conn.back().out;
            for (int t = 0; t < proj.shape[0]; ++t) {
                Tensor row({1, proj.shape[1]});
                for (int j = 0; j < proj.shape[1]; ++j) row.at(0, j) = proj.at(t, j);
                part.push_back(TokenItem::audio(std::move(row)));
            }
        }
        part.push_back(TokenItem::marker(markers::audio_end));
        parts.push_back(std::move(part));
    };

    for (const Waveform& wav : sample.waveforms) {
        detail::AudioPartCache ac;
        ac.real = true;
        ac.chunks = chunk_waveform(wav, m.cfg.audio.chunk_cap);
        for (const AudioChunk& chunk : ac.chunks) {
            ac.mels.push_back(mel_spectrogram(chunk));
            ac.stats.push_back(m.music.stats(chunk));
            const Tensor speech_out = m.speech.encode(ac.mels.back());
            const Tensor music_out = m.music.encode_stats(ac.stats.back());
            const AudioFeatures fused = fuse_audio(speech_out, music_out);
            ac.own_feats.push_back(downsample_audio_tokens(fused, m.cfg.audio.downsample));
        }
        encode_audio_part(ac);
        aparts.push_back(std::move(ac));
    }
    for (const std::vector<Tensor>& feats : sample.audio_feature_parts) {
        detail::AudioPartCache ac;
        ac.feats = &feats;
        encode_audio_part(ac);
        aparts.push_back(std::move(ac));
    }

    if (!sample.text_ids.empty()) parts.push_back(text_span(sample.text_ids));

    const TokenSequence seq = assemble(parts, m.cfg.decoder.dim);
    Decoder::Cache cache = m.decoder.forward(seq);
    if (out_seq) *out_seq = seq;
    if (!out_grads) return cache.loss;

    GroupGrads& g = *out_grads;
    Decoder::Grads dg = m.decoder.backward(cache);
    {
        std::vector<Tensor*> dd = {&dg.dembed, &dg.dwq,  &dg.dwk,  &dg.dwv,
                                   &dg.dwo,    &dg.dwf1, &dg.dbf1, &dg.dwf2,
                                   &dg.dbf2,   &dg.dwout, &dg.dbout};
        for (std::size_t i = 0; i < dd.size(); ++i) add_into(g["decoder"][i], *dd[i]);
    }

    // Walk the carried-embedding rows of dcarried in item order; each part
    // consumes exactly its own token rows.
    int row = 0;
    std::size_t vi = 0, ai = 0;
    const int llm = m.cfg.decoder.dim;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const std::vector<TokenItem>& part = parts[p];
        const bool is_visual = !part.empty() && part.front().kind == TokenKind::marker &&
                               part.front().id == markers::visual_start;
        const bool is_audio = !part.empty() && part.front().kind == TokenKind::marker &&
                              part.front().id == markers::audio_start;
        if (is_visual) {
            detail::VisualPartCache& vc = vparts[vi++];
            const int n = vc.pooled.rows * vc.pooled.cols;
            Tensor dproj({n, llm});
            int k = 0;
            for (const TokenItem& it : part) {
                const int r = row++;
                if (it.kind == TokenKind::visual) {
                    for (int j = 0; j < llm; ++j) dproj.at(k, j) = dg.dcarried.at(r, j);
                    ++k;
                }
            }
            Connector::Grads cg = m.visual_conn.backward(vc.conn, dproj);
            add_into(g["visual-connector"][0], cg.dw1);
            add_into(g["visual-connector"][1], cg.db1);
            add_into(g["visual-connector"][2], cg.dw2);
            add_into(g["visual-connector"][3], cg.db2);

            Tensor dpooled({vc.pooled.rows, vc.pooled.cols, vc.pooled.channels()});
            dpooled.data = cg.dx.data;
            PoolGrads pg = local_global_pool_backward(vc.grid, m.scorer, dpooled);
            add_into(g["pool-scorer"][0], pg.dweight1);
            add_into(g["pool-scorer"][1], pg.dbias1);

            PatchifyGrads eg = patchify_backward(*vc.image, m.embedder, pg.dfeatures,
                                                 m.cfg.vision.max_side);
            add_into(g["vision-embedder"][0], eg.dweight);
            add_into(g["vision-embedder"][1], eg.dbias);
        } else if (is_audio) {
            detail::AudioPartCache& ac = aparts[ai++];
            const std::vector<Tensor>& feats = ac.real ? ac.own_feats : *ac.feats;
            std::size_t chunk_idx = 0;
            int k = 0;
            Tensor dproj;
            auto flush_chunk = [&]() {
                Connector::Grads cg = m.audio_conn.backward(ac.conn[chunk_idx], dproj);
                add_into(g["audio-connector"][0], cg.dw1);
                add_into(g["audio-connector"][1], cg.db1);
                add_into(g["audio-connector"][2], cg.dw2);
                add_into(g["audio-connector"][3], cg.db2);
                if (ac.real) {
                    // Undo the token downsampling: every fused frame in a
                    // group shares the token gradient divided by the factor.
                    const int factor = m.cfg.audio.downsample;
                    const int frames = cg.dx.shape[0] * factor;
                    const int ds = m.cfg.audio.speech_dim, dm = m.cfg.audio.music_dim;
                    Tensor dspeech({frames, ds});
                    const int music_frames = ac.stats[chunk_idx].shape[0];
                    Tensor dmusic({music_frames, dm});
                    for (int t = 0; t < frames; ++t) {
                        int src = static_cast<int>((static_cast<double>(t) + 0.5) *
                                                   music_frames / frames);
                        if (src >= music_frames) src = music_frames - 1;
                        for (int ch = 0; ch < ds; ++ch) {
                            dspeech.at(t, ch) = cg.dx.at(t / factor, ch) / factor;
                        }
                        for (int ch = 0; ch < dm; ++ch) {
                            dmusic.at(src, ch) += cg.dx.at(t / factor, ds + ch) / factor;
                        }
                    }
                    // Music affine backward over the stats matrix.
                    MatmulGrads mm = matmul_backward(ac.stats[chunk_idx], m.music.weight, dmusic);
                    add_into(g["music-encoder"][0], mm.db);
                    add_into(g["music-encoder"][1], column_sums(dmusic));
                    // Speech conv backward w.r.t. weights and bias.
                    const Tensor& mel = ac.mels[chunk_idx].values;
                    Tensor dsw(m.speech.weight.shape);
                    for (int t = 0; t < frames; ++t) {
                        for (int j = 0; j < 3; ++j) {
                            const int it = 2 * t + j - 1;
                            if (it < 0 || it >= mel.shape[1]) continue;
                            for (int b = 0; b < kMelBins; ++b) {
                                const float x = mel.at(b, it);
                                if (x == 0.0f) continue;
                                for (int ch = 0; ch < ds; ++ch) {
                                    dsw.at(j, b, ch) += x * dspeech.at(t, ch);
                                }
                            }
                        }
                    }
                    add_into(g["speech-encoder"][0], dsw);
                    add_into(g["speech-encoder"][1], column_sums(dspeech));
                }
                ++chunk_idx;
            };
            for (const TokenItem& it : part) {
                const int r = row++;
                if (it.kind == TokenKind::marker && it.id == markers::audio_start) {
                    dproj = Tensor({feats[0].shape[0], llm});
                    k = 0;
                } else if (it.kind == TokenKind::marker && it.id == markers::audio_sep) {
                    flush_chunk();
                    dproj = Tensor({feats[chunk_idx].shape[0], llm});
                    k = 0;
                } else if (it.kind == TokenKind::audio) {
                    for (int j = 0; j < llm; ++j) dproj.at(k, j) = dg.dcarried.at(r, j);
                    ++k;
                }
            }
            flush_chunk();
        } else {
            row += static_cast<int>(part.size());
        }
    }
    return cache.loss;
}

inline double sample_loss(const OmniModel& m, const SampleInput& sample) {
    return sample_loss_and_grads(m, sample, nullptr);
}

// ---------------------------------------------------------------------------
// Stage plans

struct MixEntry {
    std::string source;
    long long full_count = 0;                // pre-shrink sample count
    long long scaled_count = 0;              // after the global shrink factor
    std::vector<std::string> modalities;     // which token streams the source exercises
};

struct StagePlan {
    std::string stage_id;
    std::vector<std::string> trainable;
    double learning_rate = 0.0;
    int batch_size = 0;
    std::vector<MixEntry> mix;
    int max_frames = 64;
    int max_chunks = 25;
    std::map<std::string, std::string> metadata;
};

inline const std::vector<std::string>& stage_ids() {
    static const std::vector<std::string> ids = {"S1-align", "S1-sft", "S2", "S3-align",
                                                 "S3-joint"};
    return ids;
}

// Scales a full-size dataset count down to desk scale, never below one.
inline long long shrink_count(long long count, double shrink) {
    const long long scaled = static_cast<long long>(std::llround(count * shrink));
    return scaled < 1 ? 1 : scaled;
}

inline void validate_group_names(const std::vector<std::string>& names) {
    const std::vector<std::string>& known = parameter_group_names();
    for (const std::string& n : names) {
        bool ok = false;
        for (const std::string& k : known) ok = ok || k == n;
        if (!ok) throw ConfigError("unknown parameter group: " + n);
    }
}

inline StagePlan build_stage_plan(const std::string& stage_id, double shrink = 1e-4) {
    if (!(shrink > 0.0)) throw InputError("shrink factor must be positive");
    StagePlan p;
    p.stage_id = stage_id;
    auto entry = [&](std::string source, long long count, std::vector<std::string> mods) {
        p.mix.push_back(MixEntry{std::move(source), count, shrink_count(count, shrink),
                                 std::move(mods)});
    };
    const std::vector<std::string> all = parameter_group_names();
    auto all_except = [&](const std::string& skip) {
        std::vector<std::string> out;
        for (const std::string& g : all) {
            if (g != skip) out.push_back(g);
        }
        return out;
    };

    if (stage_id == "S1-align") {
        p.trainable = {"visual-connector"};
        p.learning_rate = 1e-3;
        p.batch_size = 256;
        entry("image-caption", 808000, {"image"});
    } else if (stage_id == "S1-sft") {
        p.trainable = all;
        p.learning_rate = 2e-5;
        p.batch_size = 128;
        entry("image-sft", 7300000, {"image"});
        p.metadata["batch-size-alt"] = "256";
        p.metadata["batch-size-note"] =
            "an alternative stated fine-tuning batch of 256 exists; the per-stage value 128 "
            "is used";
    } else if (stage_id == "S2") {
        p.trainable = all_except("vision-embedder");
        p.learning_rate = 2e-5;
        p.batch_size = 256;
        entry("image-sft", 800000, {"image"});
        entry("video-sft", 1900000, {"video"});
    } else if (stage_id == "S3-align") {
        p.trainable = {"audio-connector"};
        p.learning_rate = 1e-3;
        p.batch_size = 256;
        entry("speech-asr", 370000, {"audio"});
    } else if (stage_id == "S3-joint") {
        p.trainable = all_except("vision-embedder");
        p.learning_rate = 1e-5;
        p.batch_size = 128;
        p.max_chunks = 20;
        entry("image-sft", 600000, {"image"});
        entry("audio-qa", 1100000, {"audio"});
        entry("video-audio-qa", 243000, {"video", "audio"});
        entry("video-subtitling", 83000, {"video", "audio"});
        entry("voice-instruction-image", 200000, {"image", "audio"});
        p.metadata["stated-cross-modal-total"] = "324000";
        p.metadata["itemized-cross-modal-total"] = "326000";
    } else {
        throw InputError("unknown stage id: " + stage_id);
    }

    if (p.trainable.empty()) throw ConfigError("stage plan has an empty trainable set");
    validate_group_names(p.trainable);
    if (!(p.learning_rate > 0.0)) throw ConfigError("stage learning rate must be positive");
    return p;
}

// True exactly on the plan's trainable groups; applied before every step.
inline std::map<std::string, bool> freeze_mask(const OmniModel&, const StagePlan& plan) {
    if (plan.trainable.empty()) throw ConfigError("stage plan has an empty trainable set");
    validate_group_names(plan.trainable);
    std::map<std::string, bool> mask;
    for (const std::string& g : parameter_group_names()) mask[g] = false;
    for (const std::string& g : plan.trainable) mask[g] = true;
    return mask;
}

// Union of mix modalities for one numbered stage (1..3): the capability set
// the curriculum has unlocked so far.
inline std::set<std::string> stage_modalities(int stage_number, double shrink = 1e-4) {
    std::set<std::string> mods;
    for (const std::string& id : stage_ids()) {
        const int num = id[1] - '0';
        if (num > stage_number) continue;
        for (const MixEntry& e : build_stage_plan(id, shrink).mix) {
            mods.insert(e.modalities.begin(), e.modalities.end());
        }
    }
    return mods;
}

// Documented key-value dump; one "key = value" line each, mix entries as
// source:full:scaled:modalities.
inline std::string plan_to_text(const StagePlan& p) {
    std::ostringstream out;
    out << "stage = " << p.stage_id << "\n";
    char lr[32];
    std::snprintf(lr, sizeof(lr), "%g", p.learning_rate);
    out << "learning-rate = " << lr << "\n";
    out << "batch-size = " << p.batch_size << "\n";
    out << "max-frames = " << p.max_frames << "\n";
    out << "max-chunks = " << p.max_chunks << "\n";
    out << "trainable =";
    for (const std::string& g : p.trainable) out << " " << g;
    out << "\n";
    for (const MixEntry& e : p.mix) {
        out << "mix = " << e.source << ":" << e.full_count << ":" << e.scaled_count << ":";
        for (std::size_t i = 0; i < e.modalities.size(); ++i) {
            out << (i ? "+" : "") << e.modalities[i];
        }
        out << "\n";
    }
    for (const auto& [k, v] : p.metadata) out << "meta." << k << " = " << v << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Synthetic task registry: every mix source maps to a seeded generator of
// training samples whose label is a simple function of the modality content.

struct SyntheticTask {
    std::string source;
    std::function<SampleInput(Rng&)> draw;
};

struct TaskRegistry {
    std::map<std::string, SyntheticTask> tasks;

    bool has(const std::string& source) const { return tasks.count(source) != 0; }
    const SyntheticTask& get(const std::string& source) const {
        auto it = tasks.find(source);
        if (it == tasks.end()) throw ConfigError("no synthetic task registered for " + source);
        return it->second;
    }
};

// ---------------------------------------------------------------------------
// Stage execution: plain SGD at the plan's fixed learning rate over the
// cross-entropy next-token loss. Single-threaded by contract so traces are
// bit-reproducible.

struct TraceRow {
    int step = 0;
    std::map<std::string, double> task_loss;  // mean loss per source this step
    std::string updated_digest;               // '+'-joined sorted trainable set
};

struct MetricTrace {
    std::string stage_id;
    std::vector<TraceRow> rows;
};

struct RunOptions {
    int steps = 100;
    int batch = 0;  // 0: use the plan's batch size
    std::uint64_t seed = 1;
};

inline std::string trainable_digest(const StagePlan& plan) {
    std::vector<std::string> sorted = plan.trainable;
    std::sort(sorted.begin(), sorted.end());
    std::string digest;
    for (const std::string& g : sorted) digest += (digest.empty() ? "" : "+") + g;
    return digest;
}

inline MetricTrace run_stage(const StagePlan& plan, OmniModel& model,
                             const TaskRegistry& registry, RunOptions opt = {}) {
    if (plan.mix.empty()) throw ConfigError("stage plan has an empty data mix");
    for (const MixEntry& e : plan.mix) {
        if (!registry.has(e.source)) {
            throw ConfigError("no synthetic task registered for mix source " + e.source);
        }
    }
    const std::map<std::string, bool> mask = freeze_mask(model, plan);
    const int batch = opt.batch > 0 ? opt.batch : plan.batch_size;
    if (batch <= 0) throw ConfigError("batch size must be positive");

    long long mix_total = 0;
    for (const MixEntry& e : plan.mix) mix_total += e.scaled_count;
    const std::string digest = trainable_digest(plan);

    Rng rng(opt.seed);
    MetricTrace trace;
    trace.stage_id = plan.stage_id;
    for (int step = 0; step < opt.steps; ++step) {
        GroupGrads grads = zero_grads(model);
        std::map<std::string, double> loss_sum;
        std::map<std::string, int> loss_count;
        for (int b = 0; b < batch; ++b) {
            long long pick = static_cast<long long>(rng.below(static_cast<std::uint64_t>(mix_total)));
            const MixEntry* chosen = &plan.mix.back();
            for (const MixEntry& e : plan.mix) {
                if (pick < e.scaled_count) {
                    chosen = &e;
                    break;
                }
                pick -= e.scaled_count;
            }
            const SampleInput sample = registry.get(chosen->source).draw(rng);
            double loss;
            try {
                loss = sample_loss_and_grads(model, sample, &grads);
            } catch (const NumericError& e) {
                throw NumericError("stage " + plan.stage_id + " aborted at step " +
                                   std::to_string(step) + ": " + e.what());
            }
            if (!std::isfinite(loss)) {
                throw NumericError("stage " + plan.stage_id + " aborted at step " +
                                   std::to_string(step) + ": non-finite loss");
            }
            loss_sum[chosen->source] += loss;
            loss_count[chosen->source] += 1;
        }
        scale_grads(grads, 1.0f / static_cast<float>(batch));
        for (const auto& [group, trainable] : mask) {
            if (!trainable) continue;
            std::vector<Tensor*> params = group_params(model, group);
            const std::vector<Tensor>& g = grads[group];
            for (std::size_t i = 0; i < params.size(); ++i) {
                for (std::size_t j = 0; j < params[i]->data.size(); ++j) {
                    params[i]->data[j] -= static_cast<float>(plan.learning_rate) * g[i].data[j];
                }
            }
        }
        TraceRow row;
        row.step = step;
        row.updated_digest = digest;
        for (const auto& [source, total] : loss_sum) {
            row.task_loss[source] = total / loss_count[source];
        }
        trace.rows.push_back(std::move(row));
    }
    return trace;
}

// CSV with stable column order: stage, step, task, loss.
inline std::string trace_to_csv(const MetricTrace& trace) {
    std::ostringstream out;
    out << "stage,step,task,loss\n";
    for (const TraceRow& row : trace.rows) {
        for (const auto& [task, loss] : row.task_loss) {
            char buf[48];
            std::snprintf(buf, sizeof(buf), "%.8f", loss);
            out << trace.stage_id << "," << row.step << "," << task << "," << buf << "\n";
        }
    }
    return out.str();
}

}  // namespace omni
