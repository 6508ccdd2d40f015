#pragma once

// Named finite-difference cases covering every hand-written backward pass.
// The CLI's gradcheck command and the test suite share this registry so
// "checked" means the same thing everywhere.

#include <functional>
#include <string>
#include <vector>

#include "omni/audio.hpp"
#include "omni/decoder.hpp"
#include "omni/fusion.hpp"
#include "omni/grad_check.hpp"
#include "omni/image.hpp"
#include "omni/rng.hpp"
#include "omni/tensor.hpp"
#include "omni/vision.hpp"

namespace omni {

struct GradCheckCase {
    std::string name;
    double step = 3e-3;
    // Returns the max relative error between analytic and central-difference
    // gradients for inputs drawn from `seed`.
    std::function<double(std::uint64_t seed)> run;
};

namespace detail {

inline Tensor scalar_tensor(double v) {
    Tensor t({1});
    t.at(0) = static_cast<float>(v);
    return t;
}

}  // namespace detail

inline const std::vector<GradCheckCase>& gradcheck_cases() {
    static const std::vector<GradCheckCase> cases = [] {
        std::vector<GradCheckCase> cs;
        const double step = 3e-3;

        cs.push_back({"matmul", step, [step](std::uint64_t seed) {
            Rng rng(seed);
            std::vector<Tensor> inputs = {Tensor::random_uniform({3, 4}, rng, 1.0f),
                                          Tensor::random_uniform({4, 5}, rng, 1.0f)};
            DifferentiableOp op{
                "matmul",
                [](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); },
                [](const std::vector<Tensor>& in, const Tensor& dout) {
                    MatmulGrads g = matmul_backward(in[0], in[1], dout);
                    return std::vector<Tensor>{std::move(g.da), std::move(g.db)};
                }};
            return grad_check(op, std::move(inputs), step, seed + 1);
        }});

        cs.push_back({"softmax", step, [step](std::uint64_t seed) {
            Rng rng(seed);
            std::vector<Tensor> inputs = {Tensor::random_uniform({4, 6}, rng, 2.0f)};
            DifferentiableOp op{
                "softmax",
                [](const std::vector<Tensor>& in) { return softmax(in[0], 1); },
                [](const std::vector<Tensor>& in, const Tensor& dout) {
                    return std::vector<Tensor>{softmax_backward(softmax(in[0], 1), dout, 1)};
                }};
            return grad_check(op, std::move(inputs), step, seed + 1);
        }});

        auto elementwise = [](const std::string& name, Activation act) {
            return [name, act](std::uint64_t seed) {
                Rng rng(seed);
                std::vector<Tensor> inputs = {Tensor::random_uniform({5, 7}, rng, 2.0f)};
                DifferentiableOp op{
                    name,
                    [act](const std::vector<Tensor>& in) {
                        Tensor out = in[0];
                        for (float& v : out.data) v = activate(act, v);
                        return out;
                    },
                    [act](const std::vector<Tensor>& in, const Tensor& dout) {
                        Tensor dx = dout;
                        for (std::size_t i = 0; i < dx.data.size(); ++i) {
                            dx.data[i] *= activate_grad(act, in[0].data[i]);
                        }
                        return std::vector<Tensor>{std::move(dx)};
                    }};
                return grad_check(op, std::move(inputs), 3e-3, seed + 1);
            };
        };
        cs.push_back({"gelu", step, elementwise("gelu", Activation::gelu)});
        cs.push_back({"tanh", step, elementwise("tanh", Activation::tanh_act)});

        cs.push_back({"bilinear-downsample", step, [step](std::uint64_t seed) {
            Rng rng(seed);
            std::vector<Tensor> inputs = {Tensor::random_uniform({4, 6, 3}, rng, 1.0f)};
            DifferentiableOp op{
                "bilinear-downsample",
                [](const std::vector<Tensor>& in) { return bilinear_downsample2x(in[0]); },
                [](const std::vector<Tensor>& in, const Tensor& dout) {
                    return std::vector<Tensor>{bilinear_downsample2x_backward(in[0], dout)};
                }};
            return grad_check(op, std::move(inputs), step, seed + 1);
        }});

        cs.push_back({"patch-embed", step, [step](std::uint64_t seed) {
            Rng rng(seed);
            const int patch = 2, dim = 3;
            Tensor pixels = Tensor::random_uniform({4, 4, 3}, rng, 0.5f);
            for (float& v : pixels.data) v = 0.5f + v;  // keep pixels in [0,1]
            const ImageInput image = ImageInput::from_pixels(pixels);
            std::vector<Tensor> inputs = {
                Tensor::random_uniform({patch * patch * 3, dim}, rng, 0.5f),
                Tensor::random_uniform({1, dim}, rng, 0.1f)};
            auto make = [patch](const std::vector<Tensor>& in) {
                PatchEmbedder e;
                e.patch_size = patch;
                e.weight = in[0];
                e.bias = in[1];
                return e;
            };
            DifferentiableOp op{
                "patch-embed",
                [&image, make](const std::vector<Tensor>& in) {
                    return patchify(image, make(in)).features;
                },
                [&image, make](const std::vector<Tensor>& in, const Tensor& dout) {
                    PatchifyGrads g = patchify_backward(image, make(in), dout);
                    return std::vector<Tensor>{std::move(g.dweight), std::move(g.dbias)};
                }};
            return grad_check(op, std::move(inputs), step, seed + 1);
        }});

        cs.push_back({"local-global-pool", step, [step](std::uint64_t seed) {
            Rng rng(seed);
            const int c = 3;
            std::vector<Tensor> inputs = {Tensor::random_uniform({4, 4, c}, rng, 1.0f),
                                          Tensor::random_uniform({2 * c, c}, rng, 0.8f),
                                          Tensor::random_uniform({1, c}, rng, 0.2f)};
            auto make_grid = [](const Tensor& f) {
                return PatchGrid{f.shape[0], f.shape[1], f};
            };
            auto make_scorer = [](const std::vector<Tensor>& in) {
                PoolScorer s;
                s.weight1 = in[1];
                s.bias1 = in[2];
                s.activation = Activation::gelu;
                return s;
            };
            DifferentiableOp op{
                "local-global-pool",
                [make_grid, make_scorer](const std::vector<Tensor>& in) {
                    return local_global_pool(make_grid(in[0]), make_scorer(in)).features;
                },
                [make_grid, make_scorer](const std::vector<Tensor>& in, const Tensor& dout) {
                    PoolGrads g = local_global_pool_backward(make_grid(in[0]), make_scorer(in),
                                                             dout);
                    return std::vector<Tensor>{std::move(g.dfeatures), std::move(g.dweight1),
                                               std::move(g.dbias1)};
                }};
            return grad_check(op, std::move(inputs), step, seed + 1);
        }});

        auto connector_case = [](const std::string& name, int in_dim, int hidden, int out_dim) {
            return [name, in_dim, hidden, out_dim](std::uint64_t seed) {
                Rng rng(seed);
                std::vector<Tensor> inputs = {
                    Tensor::random_uniform({5, in_dim}, rng, 1.0f),
                    Tensor::random_uniform({in_dim, hidden}, rng, 0.6f),
                    Tensor::random_uniform({1, hidden}, rng, 0.1f),
                    Tensor::random_uniform({hidden, out_dim}, rng, 0.6f),
                    Tensor::random_uniform({1, out_dim}, rng, 0.1f)};
                auto make = [](const std::vector<Tensor>& in) {
                    Connector c;
                    c.w1 = in[1];
                    c.b1 = in[2];
                    c.w2 = in[3];
                    c.b2 = in[4];
                    c.act = Activation::gelu;
                    return c;
                };
                DifferentiableOp op{
                    name,
                    [make](const std::vector<Tensor>& in) { return make(in).forward(in[0]); },
                    [make](const std::vector<Tensor>& in, const Tensor& dout) {
                        const Connector c = make(in);
                        Connector::Grads g = c.backward(c.forward_cached(in[0]), dout);
                        return std::vector<Tensor>{std::move(g.dx), std::move(g.dw1),
                                                   std::move(g.db1), std::move(g.dw2),
                                                   std::move(g.db2)};
                    }};
                return grad_check(op, std::move(inputs), 3e-3, seed + 1);
            };
        };
        cs.push_back({"visual-connector", step, connector_case("visual-connector", 6, 8, 4)});
        cs.push_back({"audio-connector", step, connector_case("audio-connector", 10, 7, 5)});

        cs.push_back({"speech-conv", step, [step](std::uint64_t seed) {
            Rng rng(seed);
            const int d = 4, frames = 6;
            std::vector<Tensor> inputs = {
                Tensor::random_uniform({kMelBins, frames}, rng, 1.0f),
                Tensor::random_uniform({3, kMelBins, d}, rng, 0.1f),
                Tensor::random_uniform({1, d}, rng, 0.1f)};
            DifferentiableOp op{
                "speech-conv",
                [](const std::vector<Tensor>& in) {
                    SpeechEncoder e;
                    e.weight = in[1];
                    e.bias = in[2];
                    return e.encode(MelGram{in[0]});
                },
                [d, frames](const std::vector<Tensor>& in, const Tensor& dout) {
                    const Tensor& mel = in[0];
                    const Tensor& weight = in[1];
                    Tensor dmel(mel.shape);
                    Tensor dw(weight.shape);
                    Tensor db({1, d});
                    for (int t = 0; t < frames / 2; ++t) {
                        for (int ch = 0; ch < d; ++ch) db.at(0, ch) += dout.at(t, ch);
                        for (int j = 0; j < 3; ++j) {
                            const int it = 2 * t + j - 1;
                            if (it < 0 || it >= frames) continue;
                            for (int b = 0; b < kMelBins; ++b) {
                                for (int ch = 0; ch < d; ++ch) {
                                    dw.at(j, b, ch) += mel.at(b, it) * dout.at(t, ch);
                                    dmel.at(b, it) += weight.at(j, b, ch) * dout.at(t, ch);
                                }
                            }
                        }
                    }
                    return std::vector<Tensor>{std::move(dmel), std::move(dw), std::move(db)};
                }};
            return grad_check(op, std::move(inputs), step, seed + 1);
        }});

        cs.push_back({"music-affine", step, [step](std::uint64_t seed) {
            Rng rng(seed);
            const int dm = 3;
            std::vector<Tensor> inputs = {Tensor::random_uniform({5, 4}, rng, 1.0f),
                                          Tensor::random_uniform({4, dm}, rng, 0.6f),
                                          Tensor::random_uniform({1, dm}, rng, 0.1f)};
            DifferentiableOp op{
                "music-affine",
                [](const std::vector<Tensor>& in) {
                    MusicEncoder e;
                    e.weight = in[1];
                    e.bias = in[2];
                    return e.encode_stats(in[0]);
                },
                [](const std::vector<Tensor>& in, const Tensor& dout) {
                    MatmulGrads g = matmul_backward(in[0], in[1], dout);
                    return std::vector<Tensor>{std::move(g.da), std::move(g.db),
                                               column_sums(dout)};
                }};
            return grad_check(op, std::move(inputs), step, seed + 1);
        }});

        cs.push_back({"audio-fuse", step, [step](std::uint64_t seed) {
            Rng rng(seed);
            const int frames = 6, m = 3, ds = 2, dm = 2;
            std::vector<Tensor> inputs = {Tensor::random_uniform({frames, ds}, rng, 1.0f),
                                          Tensor::random_uniform({m, dm}, rng, 1.0f)};
            auto src_of = [m, frames](int t) {
                int src = static_cast<int>((static_cast<double>(t) + 0.5) * m / frames);
                return src >= m ? m - 1 : src;
            };
            DifferentiableOp op{
                "audio-fuse",
                [](const std::vector<Tensor>& in) {
                    return fuse_audio(in[0], in[1]).values;
                },
                [=](const std::vector<Tensor>& in, const Tensor& dout) {
                    Tensor dspeech(in[0].shape), dmusic(in[1].shape);
                    for (int t = 0; t < frames; ++t) {
                        for (int ch = 0; ch < ds; ++ch) dspeech.at(t, ch) = dout.at(t, ch);
                        for (int ch = 0; ch < dm; ++ch) {
                            dmusic.at(src_of(t), ch) += dout.at(t, ds + ch);
                        }
                    }
                    return std::vector<Tensor>{std::move(dspeech), std::move(dmusic)};
                }};
            return grad_check(op, std::move(inputs), step, seed + 1);
        }});

        cs.push_back({"audio-downsample", step, [step](std::uint64_t seed) {
            Rng rng(seed);
            const int factor = 5;
            std::vector<Tensor> inputs = {Tensor::random_uniform({20, 3}, rng, 1.0f)};
            DifferentiableOp op{
                "audio-downsample",
                [factor](const std::vector<Tensor>& in) {
                    return downsample_audio_tokens(AudioFeatures{in[0], 2, 1}, factor);
                },
                [factor](const std::vector<Tensor>& in, const Tensor& dout) {
                    Tensor dx(in[0].shape);
                    for (int t = 0; t < in[0].shape[0]; ++t) {
                        for (int ch = 0; ch < in[0].shape[1]; ++ch) {
                            dx.at(t, ch) = dout.at(t / factor, ch) / factor;
                        }
                    }
                    return std::vector<Tensor>{std::move(dx)};
                }};
            return grad_check(op, std::move(inputs), step, seed + 1);
        }});

        cs.push_back({"decoder-block", 4e-3, [](std::uint64_t seed) {
            DecoderConfig cfg;
            cfg.dim = 8;
            cfg.ffn = 12;
            cfg.vocab = 20;
            const Decoder base = Decoder::seeded(cfg, seed);
            Rng rng(seed + 100);
            std::vector<Tensor> inputs = {base.embed, base.wq,  base.wk,  base.wv,
                                          base.wo,    base.wf1, base.bf1, base.wf2,
                                          base.bf2,   base.wout, base.bout,
                                          Tensor::random_uniform({4, cfg.dim}, rng, 1.0f)};
            // marker + text + two-row visual part + two-token audio part; the
            // four carried rows come from the last input tensor.
            auto build_seq = [cfg](const Tensor& carried) {
                auto row_of = [&](int r) {
                    Tensor row({1, cfg.dim});
                    for (int j = 0; j < cfg.dim; ++j) row.at(0, j) = carried.at(r, j);
                    return row;
                };
                std::vector<std::vector<TokenItem>> parts;
                parts.push_back(text_span({17}));
                parts.push_back({TokenItem::marker(markers::visual_start),
                                 TokenItem::visual(row_of(0)),
                                 TokenItem::marker(markers::visual_newline),
                                 TokenItem::visual(row_of(1)),
                                 TokenItem::marker(markers::visual_newline),
                                 TokenItem::marker(markers::visual_end)});
                parts.push_back(text_span({18}));
                parts.push_back({TokenItem::marker(markers::audio_start),
                                 TokenItem::audio(row_of(2)), TokenItem::audio(row_of(3)),
                                 TokenItem::marker(markers::audio_end)});
                parts.push_back(text_span({19}));
                return assemble(parts, cfg.dim);
            };
            auto make = [cfg](const std::vector<Tensor>& in) {
                Decoder d;
                d.cfg = cfg;
                d.embed = in[0];
                d.wq = in[1];
                d.wk = in[2];
                d.wv = in[3];
                d.wo = in[4];
                d.wf1 = in[5];
                d.bf1 = in[6];
                d.wf2 = in[7];
                d.bf2 = in[8];
                d.wout = in[9];
                d.bout = in[10];
                return d;
            };
            DifferentiableOp op{
                "decoder-block",
                [make, build_seq](const std::vector<Tensor>& in) {
                    return detail::scalar_tensor(make(in).loss(build_seq(in[11])));
                },
                [make, build_seq, cfg](const std::vector<Tensor>& in, const Tensor& dout) {
                    const Decoder d = make(in);
                    const TokenSequence seq = build_seq(in[11]);
                    Decoder::Grads g = d.backward(d.forward(seq));
                    // map carried-row gradients back to the carried input
                    Tensor dcarried({4, cfg.dim});
                    const int carried_rows[4] = {2, 4, 9, 10};
                    for (int r = 0; r < 4; ++r) {
                        for (int j = 0; j < cfg.dim; ++j) {
                            dcarried.at(r, j) = g.dcarried.at(carried_rows[r], j);
                        }
                    }
                    std::vector<Tensor> grads = {
                        std::move(g.dembed), std::move(g.dwq),  std::move(g.dwk),
                        std::move(g.dwv),    std::move(g.dwo),  std::move(g.dwf1),
                        std::move(g.dbf1),   std::move(g.dwf2), std::move(g.dbf2),
                        std::move(g.dwout),  std::move(g.dbout), std::move(dcarried)};
                    const float w = dout.at(0);
                    for (Tensor& t : grads) {
                        for (float& v : t.data) v *= w;
                    }
                    return grads;
                }};
            return grad_check(op, std::move(inputs), 4e-3, seed + 1);
        }});

        return cs;
    }();
    return cases;
}

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Runs one named case ("all" runs the registry) across the given seeds and
// reports the worst error per case against `tolerance`.
inline std::vector<GradCheckResult> run_gradcheck(const std::string& which,
                                                  const std::vector<std::uint64_t>& seeds,
                                                  double tolerance = 1e-3) {
    if (seeds.empty()) throw InputError("gradcheck needs at least one seed");
    std::vector<const GradCheckCase*> selected;
    for (const GradCheckCase& c : gradcheck_cases()) {
        if (which == "all" || which == c.name) selected.push_back(&c);
    }
    if (selected.empty()) {
        std::string names;
        for (const GradCheckCase& c : gradcheck_cases()) names += " " + c.name;
        throw ConfigError("unknown gradcheck case '" + which + "'; available:" + names);
    }
    std::vector<GradCheckResult> results;
    for (const GradCheckCase* c : selected) {
        GradCheckResult r;
        r.name = c->name;
        for (std::uint64_t seed : seeds) r.max_rel_err = std::max(r.max_rel_err, c->run(seed));
        r.pass = r.max_rel_err < tolerance;
        results.push_back(std::move(r));
    }
    return results;
}

}  // namespace omni
