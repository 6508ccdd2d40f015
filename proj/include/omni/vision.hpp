#pragma once

#include <string>
#include <vector>

#include "omni/error.hpp"
#include "omni/image.hpp"
#include "omni/rng.hpp"
#include "omni/tensor.hpp"

namespace omni {

struct VisionConfig {
    int patch_size = 16;
    int dim = 16;        // feature channels C per patch
    int max_side = 1536; // largest accepted image side, pixels
    int max_frames = 64;
};

// Patch features on an h x w grid, h and w always even after patchify.
struct PatchGrid {
    int rows = 0;
    int cols = 0;
    Tensor features;  // rows x cols x C

    int channels() const { return features.shape[2]; }
    int token_count() const { return rows * cols; }
};

// Video input; frames are encoded one by one with shared weights.
struct FrameSequence {
    std::vector<ImageInput> frames;
};

// ---------------------------------------------------------------------------
// Patch embedding. A fixed seeded linear map from raw patch pixels to C
// channels stands in for a pretrained vision tower; the weights are ordinary
// parameters so later training stages may unfreeze them.

struct PatchEmbedder {
    int patch_size = 16;
    Tensor weight;  // (patch*patch*3) x C
    Tensor bias;    // 1 x C

    static PatchEmbedder seeded(int patch_size, int dim, std::uint64_t seed) {
        Rng rng(seed);
        const int in_dim = patch_size * patch_size * 3;
        PatchEmbedder e;
        e.patch_size = patch_size;
        e.weight = Tensor::random_uniform({in_dim, dim}, rng,
                                          1.0f / std::sqrt(static_cast<float>(in_dim)));
        e.bias = Tensor::zeros({1, dim});
        return e;
    }
};

// Replicates the last row/column until both spatial dims are multiples of
// `multiple`. Replication keeps padded logits in the data range instead of
// injecting zeros into the pooling softmax.
inline Tensor replicate_pad_to_multiple(const Tensor& pixels, int multiple) {
    const int h = pixels.shape[0], w = pixels.shape[1], c = pixels.shape[2];
    const int ph = (h + multiple - 1) / multiple * multiple;
    const int pw = (w + multiple - 1) / multiple * multiple;
    if (ph == h && pw == w) return pixels;
    Tensor out({ph, pw, c});
    for (int i = 0; i < ph; ++i) {
        const int si = i < h ? i : h - 1;
        for (int j = 0; j < pw; ++j) {
            const int sj = j < w ? j : w - 1;
            for (int ch = 0; ch < c; ++ch) out.at(i, j, ch) = pixels.at(si, sj, ch);
        }
    }
    return out;
}

// Flattened patches of a padded image: one row per patch, row-major over the
// patch grid, each row laid out (py, px, channel).
struct PatchMatrix {
    int grid_rows = 0;
    int grid_cols = 0;
    Tensor values;  // (grid_rows*grid_cols) x (patch*patch*3)
};

inline PatchMatrix extract_patches(const ImageInput& image, int patch_size, int max_side) {
    const int h = image.height(), w = image.width();
    if (h < patch_size || w < patch_size) {
        throw InputError("image " + std::to_string(h) + "x" + std::to_string(w) +
                         " smaller than one " + std::to_string(patch_size) + "px patch");
    }
    if (h > max_side || w > max_side) {
        throw InputError("image " + std::to_string(h) + "x" + std::to_string(w) +
                         " exceeds the " + std::to_string(max_side) + "px cap");
    }
    // Pad so the patch grid itself has even dims, which pooling requires.
    const Tensor padded = replicate_pad_to_multiple(image.pixels, 2 * patch_size);
    const int gh = padded.shape[0] / patch_size;
    const int gw = padded.shape[1] / patch_size;
    const int vec = patch_size * patch_size * 3;
    PatchMatrix pm{gh, gw, Tensor({gh * gw, vec})};
    for (int gi = 0; gi < gh; ++gi) {
        for (int gj = 0; gj < gw; ++gj) {
            float* row = &pm.values.at(gi * gw + gj, 0);
            int idx = 0;
            for (int py = 0; py < patch_size; ++py) {
                for (int px = 0; px < patch_size; ++px) {
                    for (int ch = 0; ch < 3; ++ch) {
                        row[idx++] = padded.at(gi * patch_size + py, gj * patch_size + px, ch);
                    }
                }
            }
        }
    }
    return pm;
}

// Native-aspect-ratio patchification: the image is never resampled, only
// edge-padded, then each patch is embedded into C channels.
inline PatchGrid patchify(const ImageInput& image, const PatchEmbedder& embedder,
                          int max_side = 1536) {
    const PatchMatrix pm = extract_patches(image, embedder.patch_size, max_side);
    const Tensor flat = matmul(pm.values, embedder.weight);
    const int c = embedder.weight.shape[1];
    PatchGrid grid{pm.grid_rows, pm.grid_cols, Tensor({pm.grid_rows, pm.grid_cols, c})};
    for (int i = 0; i < pm.grid_rows * pm.grid_cols; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            grid.features.data[static_cast<std::size_t>(i) * c + ch] =
                flat.at(i, ch) + embedder.bias.at(0, ch);
        }
    }
    return grid;
}

struct PatchifyGrads {
    Tensor dweight;
    Tensor dbias;
};

// Gradients w.r.t. embedder parameters for a given feature-grid gradient.
inline PatchifyGrads patchify_backward(const ImageInput& image, const PatchEmbedder& embedder,
                                       const Tensor& dgrid, int max_side = 1536) {
    const PatchMatrix pm = extract_patches(image, embedder.patch_size, max_side);
    const int c = embedder.weight.shape[1];
    Tensor dflat({pm.grid_rows * pm.grid_cols, c});
    dflat.data = dgrid.data;
    const MatmulGrads mg = matmul_backward(pm.values, embedder.weight, dflat);
    PatchifyGrads g{mg.db, Tensor::zeros({1, c})};
    for (int i = 0; i < pm.grid_rows * pm.grid_cols; ++i) {
        for (int ch = 0; ch < c; ++ch) g.dbias.at(0, ch) += dflat.at(i, ch);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Local-Global Attention Pooling.
//
// Halves each spatial dim of an h x w x C grid. Per 2x2 window: the window
// mean (the 2x downsampled "global" feature) is concatenated onto each of
// the 4 local features, the scorer maps the 2C-wide result to per-channel
// logits, a softmax across the 4 window positions turns those into weights,
// and the output cell is the weight-by-feature Hadamard sum.

struct PoolScorer {
    Tensor weight1;  // 2C x C
    Tensor bias1;    // 1 x C
    Activation activation = Activation::gelu;

    int channels() const { return weight1.shape[1]; }

    static PoolScorer seeded(int dim, std::uint64_t seed,
                             Activation act = Activation::gelu) {
        Rng rng(seed);
        PoolScorer s;
        s.weight1 = Tensor::random_uniform({2 * dim, dim}, rng,
                                           1.0f / std::sqrt(static_cast<float>(2 * dim)));
        s.bias1 = Tensor::zeros({1, dim});
        s.activation = act;
        return s;
    }
};

struct PoolResult {
    PatchGrid pooled;  // (h/2) x (w/2) x C
    Tensor pi;         // h x w x C softmax weights; each window column sums to 1
};

namespace detail {

inline void check_poolable(const PatchGrid& grid, const PoolScorer& scorer) {
    if (grid.rows % 2 != 0 || grid.cols % 2 != 0) {
        throw InputError("local_global_pool requires an even grid, got " +
                         std::to_string(grid.rows) + "x" + std::to_string(grid.cols));
    }
    if (scorer.weight1.shape[0] != 2 * grid.channels()) {
        throw ConfigError("pool scorer input width " + std::to_string(scorer.weight1.shape[0]) +
                          " does not match 2*C = " + std::to_string(2 * grid.channels()));
    }
}

}  // namespace detail

inline PoolResult local_global_pool_detailed(const PatchGrid& grid, const PoolScorer& scorer) {
    detail::check_poolable(grid, scorer);
    const int h = grid.rows, w = grid.cols, c = grid.channels();
    const Tensor& f = grid.features;
    const Tensor global = bilinear_downsample2x(f);

    PoolResult result;
    result.pooled = PatchGrid{h / 2, w / 2, Tensor({h / 2, w / 2, c})};
    result.pi = Tensor({h, w, c});

    std::vector<float> concat(2 * c);
    std::vector<float> logits(4);
    for (int wi = 0; wi < h / 2; ++wi) {
        for (int wj = 0; wj < w / 2; ++wj) {
            const int pr[4] = {2 * wi, 2 * wi, 2 * wi + 1, 2 * wi + 1};
            const int pc[4] = {2 * wj, 2 * wj + 1, 2 * wj, 2 * wj + 1};
            for (int ch = 0; ch < c; ++ch) {
                for (int p = 0; p < 4; ++p) {
                    for (int m = 0; m < c; ++m) concat[m] = f.at(pr[p], pc[p], m);
                    for (int m = 0; m < c; ++m) concat[c + m] = global.at(wi, wj, m);
                    double u = scorer.bias1.at(0, ch);
                    for (int m = 0; m < 2 * c; ++m) {
                        u += static_cast<double>(concat[m]) * scorer.weight1.at(m, ch);
                    }
                    logits[p] = activate(scorer.activation, static_cast<float>(u));
                }
                float mx = logits[0];
                for (int p = 1; p < 4; ++p) mx = std::max(mx, logits[p]);
                double denom = 0.0;
                double weights[4];
                for (int p = 0; p < 4; ++p) {
                    weights[p] = std::exp(static_cast<double>(logits[p]) - mx);
                    denom += weights[p];
                }
                double acc = 0.0;
                for (int p = 0; p < 4; ++p) {
                    const float pi = static_cast<float>(weights[p] / denom);
                    result.pi.at(pr[p], pc[p], ch) = pi;
                    acc += static_cast<double>(pi) * f.at(pr[p], pc[p], ch);
                }
                result.pooled.features.at(wi, wj, ch) = static_cast<float>(acc);
            }
        }
    }
    return result;
}

inline PatchGrid local_global_pool(const PatchGrid& grid, const PoolScorer& scorer) {
    return local_global_pool_detailed(grid, scorer).pooled;
}

struct PoolGrads {
    Tensor dfeatures;  // h x w x C
    Tensor dweight1;   // 2C x C
    Tensor dbias1;     // 1 x C
};

inline PoolGrads local_global_pool_backward(const PatchGrid& grid, const PoolScorer& scorer,
                                            const Tensor& dout) {
    detail::check_poolable(grid, scorer);
    const int h = grid.rows, w = grid.cols, c = grid.channels();
    if (dout.rank() != 3 || dout.shape[0] != h / 2 || dout.shape[1] != w / 2 ||
        dout.shape[2] != c) {
        throw DimensionError("pool backward gradient shape " + Tensor::shape_str(dout.shape) +
                             " does not match pooled " + Tensor::shape_str({h / 2, w / 2, c}));
    }
    const Tensor& f = grid.features;
    const Tensor global = bilinear_downsample2x(f);

    PoolGrads g{Tensor({h, w, c}), Tensor({2 * c, c}), Tensor({1, c})};
    Tensor dglobal({h / 2, w / 2, c});

    std::vector<float> u(4), z(4);
    std::vector<double> pi(4), dpi(4), du(4);
    for (int wi = 0; wi < h / 2; ++wi) {
        for (int wj = 0; wj < w / 2; ++wj) {
            const int pr[4] = {2 * wi, 2 * wi, 2 * wi + 1, 2 * wi + 1};
            const int pc[4] = {2 * wj, 2 * wj + 1, 2 * wj, 2 * wj + 1};
            for (int ch = 0; ch < c; ++ch) {
                // recompute forward internals for this window/channel
                for (int p = 0; p < 4; ++p) {
                    double acc = scorer.bias1.at(0, ch);
                    for (int m = 0; m < c; ++m) {
                        acc += static_cast<double>(f.at(pr[p], pc[p], m)) * scorer.weight1.at(m, ch);
                    }
                    for (int m = 0; m < c; ++m) {
                        acc += static_cast<double>(global.at(wi, wj, m)) *
                               scorer.weight1.at(c + m, ch);
                    }
                    u[p] = static_cast<float>(acc);
                    z[p] = activate(scorer.activation, u[p]);
                }
                float mx = z[0];
                for (int p = 1; p < 4; ++p) mx = std::max(mx, z[p]);
                double denom = 0.0;
                for (int p = 0; p < 4; ++p) {
                    pi[p] = std::exp(static_cast<double>(z[p]) - mx);
                    denom += pi[p];
                }
                for (int p = 0; p < 4; ++p) pi[p] /= denom;

                const double go = dout.at(wi, wj, ch);
                double dot = 0.0;
                for (int p = 0; p < 4; ++p) {
                    dpi[p] = static_cast<double>(f.at(pr[p], pc[p], ch)) * go;
                    g.dfeatures.at(pr[p], pc[p], ch) += static_cast<float>(pi[p] * go);
                    dot += pi[p] * dpi[p];
                }
                for (int p = 0; p < 4; ++p) {
                    const double dz = pi[p] * (dpi[p] - dot);
                    du[p] = dz * activate_grad(scorer.activation, u[p]);
                }
                for (int p = 0; p < 4; ++p) {
                    g.dbias1.at(0, ch) += static_cast<float>(du[p]);
                    for (int m = 0; m < c; ++m) {
                        g.dweight1.at(m, ch) +=
                            static_cast<float>(du[p] * f.at(pr[p], pc[p], m));
                        g.dweight1.at(c + m, ch) +=
                            static_cast<float>(du[p] * global.at(wi, wj, m));
                        g.dfeatures.at(pr[p], pc[p], m) +=
                            static_cast<float>(du[p] * scorer.weight1.at(m, ch));
                        dglobal.at(wi, wj, m) +=
                            static_cast<float>(du[p] * scorer.weight1.at(c + m, ch));
                    }
                }
            }
        }
    }
    const Tensor dfrom_global = bilinear_downsample2x_backward(f, dglobal);
    for (std::size_t i = 0; i < g.dfeatures.data.size(); ++i) {
        g.dfeatures.data[i] += dfrom_global.data[i];
    }
    return g;
}

// ---------------------------------------------------------------------------
// Frame-sequence encoding: images and video frames share the same path.

inline std::vector<PatchGrid> encode_frames(const FrameSequence& video,
                                            const PatchEmbedder& embedder,
                                            const PoolScorer& scorer,
                                            const VisionConfig& cfg = {}) {
    if (video.frames.empty()) throw InputError("frame sequence is empty");
    if (static_cast<int>(video.frames.size()) > cfg.max_frames) {
        throw InputError("frame count " + std::to_string(video.frames.size()) +
                         " exceeds the max-frames cap of " + std::to_string(cfg.max_frames));
    }
    const int h0 = video.frames.front().height();
    const int w0 = video.frames.front().width();
    std::vector<PatchGrid> out;
    out.reserve(video.frames.size());
    for (const ImageInput& frame : video.frames) {
        if (frame.height() != h0 || frame.width() != w0) {
            throw InputError("all frames must share dimensions; got " +
                             std::to_string(frame.height()) + "x" + std::to_string(frame.width()) +
                             " after " + std::to_string(h0) + "x" + std::to_string(w0));
        }
        out.push_back(local_global_pool(patchify(frame, embedder, cfg.max_side), scorer));
    }
    return out;
}

}  // namespace omni
