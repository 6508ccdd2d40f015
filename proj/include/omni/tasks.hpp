#pragma once

#include <string>
#include <vector>

#include "omni/rng.hpp"
#include "omni/tensor.hpp"
#include "omni/training.hpp"

namespace omni {

// Synthetic parametric tasks, one per data source named in the stage plans.
// Every task is a K-way recovery problem: the modality content carries a
// class in a fixed linear direction, the trailing text names that class, and
// the front-end must surface the class for the decoder. The closed-form
// optimum of each task is zero residual class confusion, so falling loss is
// attributable to the trainable groups, not the task.

namespace tasks {

constexpr int kClasses = 4;
constexpr int kClassIdBase = kFirstTextId;            // ids 16..19 name classes
constexpr int kEosId = kFirstTextId + kClasses;       // 20 closes every caption
constexpr int kPromptIdBase = kFirstTextId + kClasses + 1;  // 21.. per-task prompt ids

// 32x32 class-colored image; one 16-pixel patch grid cell after pooling.
inline ImageInput class_image(int cls, int palette_shift, Rng& rng) {
    static const float palette[kClasses][3] = {
        {0.9f, 0.1f, 0.1f}, {0.1f, 0.9f, 0.1f}, {0.1f, 0.1f, 0.9f}, {0.8f, 0.8f, 0.2f}};
    const int side = 32;
    Tensor pixels({side, side, 3});
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                const float base = palette[(cls + palette_shift) % kClasses][ch];
                float v = base + static_cast<float>(rng.uniform(-0.05, 0.05));
                pixels.at(y, x, ch) = std::min(1.0f, std::max(0.0f, v));
            }
        }
    }
    return ImageInput::from_pixels(std::move(pixels));
}

// Pre-fused audio token chunk: `frames` rows whose energy sits in a
// class-specific channel. Stands in for the post-downsample token stream.
inline Tensor class_audio_chunk(int cls, int channels, int frames, int stride, Rng& rng) {
    Tensor chunk({frames, channels});
    const int hot = (cls * stride + 1) % channels;
    for (int t = 0; t < frames; ++t) {
        for (int ch = 0; ch < channels; ++ch) {
            const float base = ch == hot ? 1.5f : 0.1f;
            chunk.at(t, ch) = base + static_cast<float>(rng.uniform(-0.05, 0.05));
        }
    }
    return chunk;
}

}  // namespace tasks

// Registry covering every source used by the five stage plans. `audio_dim`
// must equal the audio connector's input width; `frames` is the synthetic
// chunk token count (kept small: these streams stand in for post-pipeline
// tokens at desk scale).
inline TaskRegistry default_task_registry(int audio_dim, int chunk_frames = 10) {
    using namespace tasks;
    TaskRegistry reg;
    auto add = [&](const std::string& source, std::function<SampleInput(Rng&)> draw) {
        reg.tasks[source] = SyntheticTask{source, std::move(draw)};
    };

    add("image-caption", [](Rng& rng) {
        const int cls = static_cast<int>(rng.below(kClasses));
        SampleInput s;
        s.images.push_back(class_image(cls, 0, rng));
        s.text_ids = {kClassIdBase + cls, kEosId};
        return s;
    });

    add("image-sft", [](Rng& rng) {
        const int cls = static_cast<int>(rng.below(kClasses));
        SampleInput s;
        s.images.push_back(class_image(cls, 1, rng));
        s.text_ids = {kPromptIdBase + 0, kClassIdBase + cls, kEosId};
        return s;
    });

    add("video-sft", [](Rng& rng) {
        const int c1 = static_cast<int>(rng.below(kClasses));
        const int c2 = static_cast<int>(rng.below(kClasses));
        SampleInput s;
        s.images.push_back(class_image(c1, 0, rng));
        s.images.push_back(class_image(c2, 0, rng));
        s.text_ids = {kPromptIdBase + 1, kClassIdBase + (c1 + c2) % kClasses, kEosId};
        return s;
    });

    add("speech-asr", [audio_dim, chunk_frames](Rng& rng) {
        const int cls = static_cast<int>(rng.below(kClasses));
        SampleInput s;
        s.audio_feature_parts.push_back({class_audio_chunk(cls, audio_dim, chunk_frames, 3, rng)});
        s.text_ids = {kClassIdBase + cls, kEosId};
        return s;
    });

    add("audio-qa", [audio_dim, chunk_frames](Rng& rng) {
        const int cls = static_cast<int>(rng.below(kClasses));
        SampleInput s;
        s.audio_feature_parts.push_back({class_audio_chunk(cls, audio_dim, chunk_frames, 5, rng)});
        s.text_ids = {kPromptIdBase + 2, kClassIdBase + cls, kEosId};
        return s;
    });

    add("video-audio-qa", [audio_dim, chunk_frames](Rng& rng) {
        const int ci = static_cast<int>(rng.below(kClasses));
        const int ca = static_cast<int>(rng.below(kClasses));
        SampleInput s;
        s.images.push_back(class_image(ci, 0, rng));
        s.audio_feature_parts.push_back({class_audio_chunk(ca, audio_dim, chunk_frames, 3, rng)});
        s.text_ids = {kPromptIdBase + 3, kClassIdBase + (ci + ca) % kClasses, kEosId};
        return s;
    });

    add("video-subtitling", [audio_dim, chunk_frames](Rng& rng) {
        const int cls = static_cast<int>(rng.below(kClasses));
        SampleInput s;
        s.audio_feature_parts.push_back({class_audio_chunk(cls, audio_dim, chunk_frames, 3, rng)});
        s.text_ids = {kPromptIdBase + 4, kClassIdBase + cls, kClassIdBase + cls, kEosId};
        return s;
    });

    add("voice-instruction-image", [audio_dim, chunk_frames](Rng& rng) {
        const int cls = static_cast<int>(rng.below(kClasses));
        const int instr = static_cast<int>(rng.below(kClasses));
        SampleInput s;
        s.images.push_back(class_image(cls, 0, rng));
        s.audio_feature_parts.push_back(
            {class_audio_chunk(instr, audio_dim, chunk_frames, 5, rng)});
        s.text_ids = {kClassIdBase + cls, kEosId};
        return s;
    });

    return reg;
}

}  // namespace omni
