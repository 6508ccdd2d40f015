// Toy causal decoder: one attention block plus an MLP over fused token
// sequences, trained with cross-entropy on the positions whose successor is
// an id-bearing item.

#include <doctest.h>

#include <cmath>
#include <vector>

#include "omni/decoder.hpp"
#include "omni/fusion.hpp"
#include "omni/rng.hpp"

using namespace omni;

namespace {

TokenSequence text_seq(const std::vector<int>& ids, int dim) {
    return assemble({text_span(ids)}, dim);
}

TokenSequence mixed_seq(int dim, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TokenItem> vis;
    vis.push_back(TokenItem::marker(markers::visual_start));
    vis.push_back(TokenItem::visual(Tensor::random_uniform({1, dim}, rng, 1.0f)));
    vis.push_back(TokenItem::visual(Tensor::random_uniform({1, dim}, rng, 1.0f)));
    vis.push_back(TokenItem::marker(markers::visual_newline));
    vis.push_back(TokenItem::marker(markers::visual_end));
    std::vector<TokenItem> aud;
    aud.push_back(TokenItem::marker(markers::audio_start));
    aud.push_back(TokenItem::audio(Tensor::random_uniform({1, dim}, rng, 1.0f)));
    aud.push_back(TokenItem::marker(markers::audio_end));
    return assemble({text_span({16, 17}), vis, aud, text_span({18, 19})}, dim);
}

}  // namespace

TEST_CASE("a zeroed output head gives exactly ln(vocab) loss") {
    DecoderConfig cfg;
    cfg.dim = 16;
    cfg.ffn = 24;
    cfg.vocab = 80;
    Decoder d = Decoder::seeded(cfg, 3);
    d.wout = Tensor::zeros({cfg.dim, cfg.vocab});
    d.bout = Tensor::zeros({1, cfg.vocab});
    const double loss = d.loss(text_seq({16, 17, 18, 19}, cfg.dim));
    CHECK(loss == doctest::Approx(std::log(80.0)).epsilon(1e-6));
}

TEST_CASE("causality: later tokens cannot change earlier logits") {
    DecoderConfig cfg;
    cfg.dim = 16;
    cfg.ffn = 24;
    cfg.vocab = 40;
    const Decoder d = Decoder::seeded(cfg, 5);

    const Tensor before = d.logits_of(text_seq({16, 18, 20, 22, 24}, cfg.dim));
    const Tensor after = d.logits_of(text_seq({16, 18, 20, 22, 30}, cfg.dim));
    REQUIRE(before.shape == after.shape);
    for (int t = 0; t < 4; ++t) {
        for (int v = 0; v < cfg.vocab; ++v) {
            CHECK(before.at(t, v) == after.at(t, v));
        }
    }
}

TEST_CASE("loss is finite on mixed sequences and the cache tracks targets") {
    DecoderConfig cfg;
    cfg.dim = 12;
    cfg.ffn = 16;
    cfg.vocab = 32;
    const Decoder d = Decoder::seeded(cfg, 7);
    const TokenSequence seq = mixed_seq(cfg.dim, 9);

    const Decoder::Cache cache = d.forward(seq);
    CHECK(std::isfinite(cache.loss));
    CHECK(cache.loss > 0.0);
    // Predicted positions are exactly those whose successor carries an id.
    REQUIRE(!cache.target_rows.empty());
    for (std::size_t i = 0; i < cache.target_rows.size(); ++i) {
        const int row = cache.target_rows[i];
        CHECK(seq.items[row + 1].id == cache.target_ids[i]);
        CHECK(cache.target_ids[i] >= 0);
    }
    // Embedded items are never targets.
    for (int row : cache.target_rows) CHECK(seq.items[row + 1].id >= 0);
}

TEST_CASE("backward produces gradients shaped like every parameter") {
    DecoderConfig cfg;
    cfg.dim = 12;
    cfg.ffn = 16;
    cfg.vocab = 32;
    const Decoder d = Decoder::seeded(cfg, 11);
    const TokenSequence seq = mixed_seq(cfg.dim, 13);
    const Decoder::Cache cache = d.forward(seq);
    const Decoder::Grads g = d.backward(cache);

    CHECK(g.dembed.shape == d.embed.shape);
    CHECK(g.dwq.shape == d.wq.shape);
    CHECK(g.dwk.shape == d.wk.shape);
    CHECK(g.dwv.shape == d.wv.shape);
    CHECK(g.dwo.shape == d.wo.shape);
    CHECK(g.dwf1.shape == d.wf1.shape);
    CHECK(g.dbf1.shape == d.bf1.shape);
    CHECK(g.dwf2.shape == d.wf2.shape);
    CHECK(g.dbf2.shape == d.bf2.shape);
    CHECK(g.dwout.shape == d.wout.shape);
    CHECK(g.dbout.shape == d.bout.shape);
    CHECK(g.dcarried.shape == std::vector<int>{static_cast<int>(seq.size()), cfg.dim});
    CHECK(g.dcarried.all_finite());

    // Carried-row gradients are nonzero only for embedded items.
    for (std::size_t t = 0; t < seq.size(); ++t) {
        if (cache.carried[t]) continue;
        for (int j = 0; j < cfg.dim; ++j) CHECK(g.dcarried.at(static_cast<int>(t), j) == 0.0f);
    }
}

TEST_CASE("decoder input validation") {
    DecoderConfig cfg;
    cfg.dim = 8;
    cfg.ffn = 8;
    cfg.vocab = 20;
    const Decoder d = Decoder::seeded(cfg, 1);

    CHECK_THROWS_AS(d.loss(TokenSequence{}), InputError);  // empty

    // id outside the vocab
    CHECK_THROWS_AS(d.loss(text_seq({16, 25}, cfg.dim)), InputError);

    // sequence width differs from the decoder width
    CHECK_THROWS_AS(d.loss(text_seq({16, 17}, cfg.dim + 1)), DimensionError);

    // no prediction targets: a single token predicts nothing
    CHECK_THROWS_AS(d.loss(text_seq({16}, cfg.dim)), InputError);

    DecoderConfig bad;
    bad.vocab = 16;
    CHECK_THROWS_AS(Decoder::seeded(bad, 1), ConfigError);
}
