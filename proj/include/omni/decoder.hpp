#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "omni/error.hpp"
#include "omni/fusion.hpp"
#include "omni/rng.hpp"
#include "omni/tensor.hpp"

namespace omni {

// Toy stand-in for the LLM decoder: an embedding table, one causal
// self-attention block with a residual MLP, and an output head. Small enough
// that every gradient is hand-written and finite-difference checkable.
struct DecoderConfig {
    int dim = 32;
    int ffn = 64;
    int vocab = 80;  // markers occupy ids below kFirstTextId; text ids follow
};

struct Decoder {
    DecoderConfig cfg;
    Tensor embed;              // vocab x dim
    Tensor wq, wk, wv, wo;     // dim x dim each
    Tensor wf1, bf1;           // dim x ffn, 1 x ffn
    Tensor wf2, bf2;           // ffn x dim, 1 x dim
    Tensor wout, bout;         // dim x vocab, 1 x vocab

    static Decoder seeded(DecoderConfig cfg, std::uint64_t seed) {
        if (cfg.vocab <= kFirstTextId) {
            throw ConfigError("decoder vocab " + std::to_string(cfg.vocab) +
                              " leaves no room for text ids above " +
                              std::to_string(kFirstTextId));
        }
        Rng rng(seed);
        Decoder d;
        d.cfg = cfg;
        const float se = 1.0f / std::sqrt(static_cast<float>(cfg.dim));
        d.embed = Tensor::random_uniform({cfg.vocab, cfg.dim}, rng, 1.0f);
        d.wq = Tensor::random_uniform({cfg.dim, cfg.dim}, rng, se);
        d.wk = Tensor::random_uniform({cfg.dim, cfg.dim}, rng, se);
        d.wv = Tensor::random_uniform({cfg.dim, cfg.dim}, rng, se);
        d.wo = Tensor::random_uniform({cfg.dim, cfg.dim}, rng, se);
        d.wf1 = Tensor::random_uniform({cfg.dim, cfg.ffn}, rng, se);
        d.bf1 = Tensor::random_uniform({1, cfg.ffn}, rng, 0.1f);
        d.wf2 = Tensor::random_uniform({cfg.ffn, cfg.dim}, rng,
                                       1.0f / std::sqrt(static_cast<float>(cfg.ffn)));
        d.bf2 = Tensor::random_uniform({1, cfg.dim}, rng, 0.1f);
        d.wout = Tensor::random_uniform({cfg.dim, cfg.vocab}, rng, se);
        d.bout = Tensor::random_uniform({1, cfg.vocab}, rng, 0.1f);
        return d;
    }

    struct Cache {
        Tensor x;                       // T x dim input embeddings
        std::vector<int> ids;           // per row; -1 for carried embeddings
        std::vector<char> carried;      // 1 where the row came from a modality part
        Tensor q, kt, v;                // q pre-scaled by 1/sqrt(dim); kt is k transposed
        Tensor scores, attn, o, h;      // attention internals, h includes the residual
        Tensor pre_f, f, h2;            // MLP internals, h2 includes the residual
        Tensor logits;                  // T x vocab
        std::vector<int> target_rows;   // rows that predict the following item's id
        std::vector<int> target_ids;
        double loss = 0.0;
    };

    Cache forward(const TokenSequence& seq) const {
        if (seq.size() == 0) throw InputError("cannot decode an empty sequence");
        if (seq.llm_dim != cfg.dim) {
            throw DimensionError("sequence dim " + std::to_string(seq.llm_dim) +
                                 " does not match decoder dim " + std::to_string(cfg.dim));
        }
        const int t_len = seq.size();
        Cache c;
        c.x = Tensor({t_len, cfg.dim});
        c.ids.resize(t_len);
        c.carried.assign(t_len, 0);
        for (int t = 0; t < t_len; ++t) {
            const TokenItem& it = seq.items[t];
            if (it.kind == TokenKind::marker || it.kind == TokenKind::text) {
                if (it.id < 0 || it.id >= cfg.vocab) {
                    throw InputError("token id " + std::to_string(it.id) +
                                     " outside decoder vocab " + std::to_string(cfg.vocab));
                }
                c.ids[t] = it.id;
                for (int j = 0; j < cfg.dim; ++j) c.x.at(t, j) = embed.at(it.id, j);
            } else {
                c.ids[t] = -1;
                c.carried[t] = 1;
                for (int j = 0; j < cfg.dim; ++j) c.x.at(t, j) = it.embedding.at(0, j);
            }
        }

        const float scale = 1.0f / std::sqrt(static_cast<float>(cfg.dim));
        c.q = matmul(c.x, wq) * scale;
        c.kt = transpose2d(matmul(c.x, wk));
        c.v = matmul(c.x, wv);
        c.scores = matmul(c.q, c.kt);
        // Causal mask: position i may attend to j <= i only.
        for (int i = 0; i < t_len; ++i) {
            for (int j = i + 1; j < t_len; ++j) c.scores.at(i, j) = -1e30f;
        }
        c.attn = softmax(c.scores, 1);
        c.o = matmul(c.attn, c.v);
        c.h = c.x + matmul(c.o, wo);
        c.pre_f = matmul(c.h, wf1);
        add_row_bias(c.pre_f, bf1);
        c.f = c.pre_f;
        for (float& x : c.f.data) x = activate(Activation::gelu, x);
        c.h2 = c.h + matmul(c.f, wf2);
        for (int t = 0; t < t_len; ++t) {
            for (int j = 0; j < cfg.dim; ++j) c.h2.at(t, j) += bf2.at(0, j);
        }
        c.logits = matmul(c.h2, wout);
        add_row_bias(c.logits, bout);

        for (int t = 0; t + 1 < t_len; ++t) {
            if (c.ids[t + 1] >= 0) {
                c.target_rows.push_back(t);
                c.target_ids.push_back(c.ids[t + 1]);
            }
        }
        if (c.target_rows.empty()) {
            throw InputError("sequence has no id-bearing items to predict");
        }
        double total = 0.0;
        for (std::size_t n = 0; n < c.target_rows.size(); ++n) {
            const int row = c.target_rows[n];
            double mx = -1e300;
            for (int j = 0; j < cfg.vocab; ++j) mx = std::max(mx, (double)c.logits.at(row, j));
            double denom = 0.0;
            for (int j = 0; j < cfg.vocab; ++j) denom += std::exp(c.logits.at(row, j) - mx);
            total -= (c.logits.at(row, c.target_ids[n]) - mx) - std::log(denom);
        }
        c.loss = total / static_cast<double>(c.target_rows.size());
        if (!std::isfinite(c.loss)) throw NumericError("decoder loss is not finite");
        return c;
    }

    double loss(const TokenSequence& seq) const { return forward(seq).loss; }
    Tensor logits_of(const TokenSequence& seq) const { return forward(seq).logits; }

    struct Grads {
        Tensor dembed, dwq, dwk, dwv, dwo, dwf1, dbf1, dwf2, dbf2, dwout, dbout;
        Tensor dcarried;  // T x dim; nonzero only at rows fed by modality parts
    };

    Grads backward(const Cache& c) const {
        const int t_len = c.x.shape[0];
        const float inv_n = 1.0f / static_cast<float>(c.target_rows.size());

        Tensor dlogits({t_len, cfg.vocab});
        for (std::size_t n = 0; n < c.target_rows.size(); ++n) {
            const int row = c.target_rows[n];
            double mx = -1e300;
            for (int j = 0; j < cfg.vocab; ++j) mx = std::max(mx, (double)c.logits.at(row, j));
            double denom = 0.0;
            for (int j = 0; j < cfg.vocab; ++j) denom += std::exp(c.logits.at(row, j) - mx);
            for (int j = 0; j < cfg.vocab; ++j) {
                const float p = static_cast<float>(std::exp(c.logits.at(row, j) - mx) / denom);
                dlogits.at(row, j) += (p - (j == c.target_ids[n] ? 1.0f : 0.0f)) * inv_n;
            }
        }

        Grads g;
        g.dbout = column_sums(dlogits);
        MatmulGrads head = matmul_backward(c.h2, wout, dlogits);
        g.dwout = std::move(head.db);
        Tensor dh2 = std::move(head.da);

        g.dbf2 = column_sums(dh2);
        MatmulGrads mlp2 = matmul_backward(c.f, wf2, dh2);
        g.dwf2 = std::move(mlp2.db);
        Tensor dpre = std::move(mlp2.da);
        for (std::size_t i = 0; i < dpre.data.size(); ++i) {
            dpre.data[i] *= activate_grad(Activation::gelu, c.pre_f.data[i]);
        }
        g.dbf1 = column_sums(dpre);
        MatmulGrads mlp1 = matmul_backward(c.h, wf1, dpre);
        g.dwf1 = std::move(mlp1.db);
        Tensor dh = dh2 + mlp1.da;  // residual path plus MLP path

        MatmulGrads proj = matmul_backward(c.o, wo, dh);
        g.dwo = std::move(proj.db);
        Tensor do_ = std::move(proj.da);
        MatmulGrads att_v = matmul_backward(c.attn, c.v, do_);
        Tensor dattn = std::move(att_v.da);
        Tensor dv = std::move(att_v.db);
        Tensor dscores = softmax_backward(c.attn, dattn, 1);
        // Masked score cells received no probability mass, so their gradient
        // is exactly zero and the mask needs no extra handling here.
        MatmulGrads qk = matmul_backward(c.q, c.kt, dscores);
        const float scale = 1.0f / std::sqrt(static_cast<float>(cfg.dim));
        Tensor dq = qk.da * scale;
        Tensor dk = transpose2d(qk.db);

        Tensor dx = dh;  // residual into the attention block
        MatmulGrads mq = matmul_backward(c.x, wq, dq);
        g.dwq = std::move(mq.db);
        dx = dx + mq.da;
        MatmulGrads mk = matmul_backward(c.x, wk, dk);
        g.dwk = std::move(mk.db);
        dx = dx + mk.da;
        MatmulGrads mv = matmul_backward(c.x, wv, dv);
        g.dwv = std::move(mv.db);
        dx = dx + mv.da;

        g.dembed = Tensor({cfg.vocab, cfg.dim});
        g.dcarried = Tensor({t_len, cfg.dim});
        for (int t = 0; t < t_len; ++t) {
            if (c.carried[t]) {
                for (int j = 0; j < cfg.dim; ++j) g.dcarried.at(t, j) = dx.at(t, j);
            } else {
                for (int j = 0; j < cfg.dim; ++j) g.dembed.at(c.ids[t], j) += dx.at(t, j);
            }
        }
        return g;
    }
};

}  // namespace omni
