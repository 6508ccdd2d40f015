#pragma once

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "omni/error.hpp"
#include "omni/rng.hpp"
#include "omni/tensor.hpp"
#include "omni/vision.hpp"

namespace omni {

// Hard cap on assembled sequence length, counting every marker and token.
constexpr int kTokenBudget = 16384;

// Marker ids live below kFirstTextId; text vocab ids start at kFirstTextId.
// visual_sep and audio_newline are reserved roles: defined, never emitted.
namespace markers {
constexpr int visual_start = 0;
constexpr int visual_sep = 1;
constexpr int visual_newline = 2;  // closes each pooled-grid row
constexpr int visual_end = 3;
constexpr int audio_start = 4;
constexpr int audio_sep = 5;       // between consecutive 30 s chunks
constexpr int audio_newline = 6;
constexpr int audio_end = 7;
}  // namespace markers
constexpr int kFirstTextId = 16;

inline std::string marker_name(int id) {
    switch (id) {
        case markers::visual_start: return "visual_start";
        case markers::visual_sep: return "visual_sep";
        case markers::visual_newline: return "visual_newline";
        case markers::visual_end: return "visual_end";
        case markers::audio_start: return "audio_start";
        case markers::audio_sep: return "audio_sep";
        case markers::audio_newline: return "audio_newline";
        case markers::audio_end: return "audio_end";
        default: return "unknown";
    }
}

enum class TokenKind { marker, text, visual, audio };

inline const char* token_kind_name(TokenKind k) {
    switch (k) {
        case TokenKind::marker: return "marker";
        case TokenKind::text: return "text";
        case TokenKind::visual: return "visual";
        case TokenKind::audio: return "audio";
    }
    return "?";
}

// One slot of the fused sequence. Marker and text items carry an id and take
// their embedding from the decoder table; visual and audio items carry a
// projected embedding row (1 x llm_dim) and have id -1.
struct TokenItem {
    TokenKind kind = TokenKind::text;
    int id = -1;
    Tensor embedding;

    static TokenItem marker(int id) { return TokenItem{TokenKind::marker, id, Tensor()}; }
    static TokenItem text(int id) {
        if (id < kFirstTextId) {
            throw InputError("text id " + std::to_string(id) + " collides with marker range");
        }
        return TokenItem{TokenKind::text, id, Tensor()};
    }
    static TokenItem visual(Tensor emb) {
        return TokenItem{TokenKind::visual, -1, std::move(emb)};
    }
    static TokenItem audio(Tensor emb) {
        return TokenItem{TokenKind::audio, -1, std::move(emb)};
    }
};

struct TokenSequence {
    int llm_dim = 0;
    int budget = kTokenBudget;
    std::vector<TokenItem> items;

    int size() const { return static_cast<int>(items.size()); }
    int count(TokenKind kind) const {
        int n = 0;
        for (const TokenItem& it : items) n += it.kind == kind ? 1 : 0;
        return n;
    }
};

// ---------------------------------------------------------------------------
// Row-broadcast helpers shared by the connectors and the decoder.

inline void add_row_bias(Tensor& x, const Tensor& bias) {
    if (bias.rank() != 2 || bias.shape[0] != 1 || bias.shape[1] != x.shape[1]) {
        throw DimensionError("bias " + shape_str(bias.shape) + " does not broadcast over " +
                             shape_str(x.shape));
    }
    for (int i = 0; i < x.shape[0]; ++i) {
        for (int j = 0; j < x.shape[1]; ++j) x.at(i, j) += bias.at(0, j);
    }
}

inline Tensor column_sums(const Tensor& x) {
    Tensor out({1, x.shape[1]});
    for (int i = 0; i < x.shape[0]; ++i) {
        for (int j = 0; j < x.shape[1]; ++j) out.at(0, j) += x.at(i, j);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Connector: two-layer MLP lifting encoder channels into the LLM embedding
// space. One instance serves the visual path, another the audio path.

struct Connector {
    Tensor w1, b1;  // in x hidden, 1 x hidden
    Tensor w2, b2;  // hidden x out, 1 x out
    Activation act = Activation::gelu;

    int in_dim() const { return w1.shape[0]; }
    int hidden_dim() const { return w1.shape[1]; }
    int out_dim() const { return w2.shape[1]; }

    static Connector seeded(int in, int hidden, int out, std::uint64_t seed,
                            Activation act = Activation::gelu) {
        Rng rng(seed);
        Connector c;
        c.w1 = Tensor::random_uniform({in, hidden}, rng, 1.0f / std::sqrt(static_cast<float>(in)));
        c.b1 = Tensor::random_uniform({1, hidden}, rng, 0.1f);
        c.w2 = Tensor::random_uniform({hidden, out}, rng,
                                      1.0f / std::sqrt(static_cast<float>(hidden)));
        c.b2 = Tensor::random_uniform({1, out}, rng, 0.1f);
        c.act = act;
        return c;
    }

    struct Cache {
        Tensor x, pre, hidden, out;
    };

    Cache forward_cached(const Tensor& x) const {
        if (x.rank() != 2 || x.shape[1] != in_dim()) {
            throw DimensionError("connector input " + shape_str(x.shape) + ", expected N x " +
                                 std::to_string(in_dim()));
        }
        Cache c;
        c.x = x;
        c.pre = matmul(x, w1);
        add_row_bias(c.pre, b1);
        c.hidden = c.pre;
        for (float& v : c.hidden.data) v = activate(act, v);
        c.out = matmul(c.hidden, w2);
        add_row_bias(c.out, b2);
        return c;
    }

    Tensor forward(const Tensor& x) const { return forward_cached(x).out; }

    struct Grads {
        Tensor dx, dw1, db1, dw2, db2;
    };

    Grads backward(const Cache& c, const Tensor& dout) const {
        Grads g;
        g.db2 = column_sums(dout);
        MatmulGrads second = matmul_backward(c.hidden, w2, dout);
        g.dw2 = std::move(second.db);
        Tensor dpre = std::move(second.da);
        for (std::size_t i = 0; i < dpre.data.size(); ++i) {
            dpre.data[i] *= activate_grad(act, c.pre.data[i]);
        }
        g.db1 = column_sums(dpre);
        MatmulGrads first = matmul_backward(c.x, w1, dpre);
        g.dw1 = std::move(first.db);
        g.dx = std::move(first.da);
        return g;
    }
};

// ---------------------------------------------------------------------------
// Projection into marker-bracketed sequence parts

// start + h rows of (w tokens + newline) + end = h*w + h + 2 items.
inline int visual_item_count(int rows, int cols) { return rows * cols + rows + 2; }

// start + n chunks of tokens_per_chunk with a sep between chunks + end.
inline int audio_item_count(int chunks, int tokens_per_chunk) {
    return chunks * tokens_per_chunk + (chunks - 1) + 2;
}

// Row-major traversal of the pooled grid, a newline marker after each grid
// row, the whole part bracketed by visual_start / visual_end.
inline std::vector<TokenItem> project_visual(const PatchGrid& grid, const Connector& conn) {
    if (conn.in_dim() != grid.channels()) {
        throw ConfigError("visual connector expects " + std::to_string(conn.in_dim()) +
                          " channels but the grid has " + std::to_string(grid.channels()));
    }
    Tensor flat({grid.rows * grid.cols, grid.channels()});
    flat.data = grid.features.data;
    const Tensor projected = conn.forward(flat);

    std::vector<TokenItem> part;
    part.reserve(static_cast<std::size_t>(visual_item_count(grid.rows, grid.cols)));
    part.push_back(TokenItem::marker(markers::visual_start));
    for (int r = 0; r < grid.rows; ++r) {
        for (int c = 0; c < grid.cols; ++c) {
            Tensor row({1, projected.shape[1]});
            for (int j = 0; j < projected.shape[1]; ++j) {
                row.at(0, j) = projected.at(r * grid.cols + c, j);
            }
            part.push_back(TokenItem::visual(std::move(row)));
        }
        part.push_back(TokenItem::marker(markers::visual_newline));
    }
    part.push_back(TokenItem::marker(markers::visual_end));
    return part;
}

// Chunks joined with audio_sep markers, bracketed by audio_start / audio_end.
// An empty chunk list yields an empty part with no markers.
inline std::vector<TokenItem> project_audio(const std::vector<Tensor>& chunk_feats,
                                            const Connector& conn) {
    if (chunk_feats.empty()) return {};
    std::vector<TokenItem> part;
    part.push_back(TokenItem::marker(markers::audio_start));
    for (std::size_t i = 0; i < chunk_feats.size(); ++i) {
        const Tensor& chunk = chunk_feats[i];
        if (chunk.rank() != 2 || chunk.shape[0] == 0) {
            throw InputError("audio chunk features must be a nonempty frames x channels tensor");
        }
        if (conn.in_dim() != chunk.shape[1]) {
            throw ConfigError("audio connector expects " + std::to_string(conn.in_dim()) +
                              " channels but chunk " + std::to_string(i) + " has " +
                              std::to_string(chunk.shape[1]));
        }
        if (i > 0) part.push_back(TokenItem::marker(markers::audio_sep));
        const Tensor projected = conn.forward(chunk);
        for (int t = 0; t < projected.shape[0]; ++t) {
            Tensor row({1, projected.shape[1]});
            for (int j = 0; j < projected.shape[1]; ++j) row.at(0, j) = projected.at(t, j);
            part.push_back(TokenItem::audio(std::move(row)));
        }
    }
    part.push_back(TokenItem::marker(markers::audio_end));
    return part;
}

inline std::vector<TokenItem> text_span(const std::vector<int>& ids) {
    std::vector<TokenItem> span;
    span.reserve(ids.size());
    for (int id : ids) span.push_back(TokenItem::text(id));
    return span;
}

// ---------------------------------------------------------------------------
// Sequence assembly: plain concatenation in caller order, so text spans and
// modality parts combine freely. The budget is enforced up front.

inline void validate_sequence(const TokenSequence& seq);

inline TokenSequence assemble(const std::vector<std::vector<TokenItem>>& parts, int llm_dim,
                              int budget = kTokenBudget) {
    std::size_t required = 0;
    for (const auto& p : parts) required += p.size();
    if (required > static_cast<std::size_t>(budget)) {
        throw BudgetError("sequence requires " + std::to_string(required) +
                          " items but only " + std::to_string(budget) + " are available");
    }
    TokenSequence seq;
    seq.llm_dim = llm_dim;
    seq.budget = budget;
    seq.items.reserve(required);
    for (const auto& p : parts) seq.items.insert(seq.items.end(), p.begin(), p.end());
    for (const TokenItem& item : seq.items) {
        if ((item.kind == TokenKind::visual || item.kind == TokenKind::audio) &&
            (item.embedding.rank() != 2 || item.embedding.shape[0] != 1 ||
             item.embedding.shape[1] != llm_dim)) {
            throw DimensionError("embedded token is not 1 x " + std::to_string(llm_dim));
        }
    }
    validate_sequence(seq);
    return seq;
}

struct ModalityCounts {
    int text = 0, visual = 0, audio = 0, marker = 0;
};

inline ModalityCounts per_modality_counts(const TokenSequence& seq) {
    ModalityCounts c;
    for (const TokenItem& it : seq.items) {
        switch (it.kind) {
            case TokenKind::text: ++c.text; break;
            case TokenKind::visual: ++c.visual; break;
            case TokenKind::audio: ++c.audio; break;
            case TokenKind::marker: ++c.marker; break;
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// Bracketing validator. The marker structure is a regular language:
//
//   sequence : (TEXT | vpart | apart)*
//   vpart    : V_START (V_TOK+ V_NL)+ V_END
//   apart    : A_START A_TOK+ (A_SEP A_TOK+)* A_END
//
// checked by one left-to-right pass of a finite automaton. Reserved markers
// (visual_sep, audio_newline) are never part of the language.

inline bool is_valid_sequence(const TokenSequence& seq, std::string* why = nullptr) {
    auto fail = [&](int index, const std::string& msg) {
        if (why) *why = "item " + std::to_string(index) + ": " + msg;
        return false;
    };
    enum State { top, v_row_begin, v_in_row, v_after_nl, a_chunk_begin, a_in_chunk };
    State state = top;
    for (int i = 0; i < seq.size(); ++i) {
        const TokenItem& it = seq.items[i];
        const bool marker = it.kind == TokenKind::marker;
        switch (state) {
            case top:
                if (it.kind == TokenKind::text) {
                    // stay
                } else if (marker && it.id == markers::visual_start) {
                    state = v_row_begin;
                } else if (marker && it.id == markers::audio_start) {
                    state = a_chunk_begin;
                } else {
                    return fail(i, std::string("unexpected ") + token_kind_name(it.kind) +
                                       (marker ? " " + marker_name(it.id) : "") +
                                       " outside a modality part");
                }
                break;
            case v_row_begin:
                if (it.kind != TokenKind::visual) {
                    return fail(i, "visual row must start with a visual token");
                }
                state = v_in_row;
                break;
            case v_in_row:
                if (it.kind == TokenKind::visual) {
                    // stay
                } else if (marker && it.id == markers::visual_newline) {
                    state = v_after_nl;
                } else {
                    return fail(i, "visual row may contain only visual tokens, then a newline");
                }
                break;
            case v_after_nl:
                if (it.kind == TokenKind::visual) {
                    state = v_in_row;
                } else if (marker && it.id == markers::visual_end) {
                    state = top;
                } else {
                    return fail(i, "after a newline only another row or visual_end may follow");
                }
                break;
            case a_chunk_begin:
                if (it.kind != TokenKind::audio) {
                    return fail(i, "audio chunk must start with an audio token");
                }
                state = a_in_chunk;
                break;
            case a_in_chunk:
                if (it.kind == TokenKind::audio) {
                    // stay
                } else if (marker && it.id == markers::audio_sep) {
                    state = a_chunk_begin;
                } else if (marker && it.id == markers::audio_end) {
                    state = top;
                } else {
                    return fail(i, "audio chunk may contain only audio tokens, sep, or end");
                }
                break;
        }
    }
    if (state != top) {
        if (why) *why = "sequence ends inside an unterminated part";
        return false;
    }
    return true;
}

inline void validate_sequence(const TokenSequence& seq) {
    std::string why;
    if (!is_valid_sequence(seq, &why)) throw InputError("invalid token sequence: " + why);
}

// ---------------------------------------------------------------------------
// Line-oriented debug dump. Embedded tokens print a value checksum instead
// of the full row so dumps stay diffable.

inline std::string serialize_sequence(const TokenSequence& seq) {
    std::ostringstream out;
    out << "tokens " << seq.size() << " dim " << seq.llm_dim << "\n";
    for (int i = 0; i < seq.size(); ++i) {
        const TokenItem& it = seq.items[i];
        out << i << " " << token_kind_name(it.kind);
        if (it.kind == TokenKind::marker) {
            out << " " << marker_name(it.id);
        } else if (it.kind == TokenKind::text) {
            out << " " << it.id;
        } else {
            double sum = 0.0;
            for (float v : it.embedding.data) sum += v;
            char buf[48];
            std::snprintf(buf, sizeof(buf), " sum=%.6f", sum);
            out << buf;
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace omni
