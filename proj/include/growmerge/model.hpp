// SPDX-License-Identifier: Apache-2.0
#pragma once

// Desk-scale decoder-only transformer (SmolLM2/Llama style): pre-RMSNorm,
// rotary attention with grouped KV heads, gated SiLU MLP, optional tied
// embeddings with a runtime logit scale. Forward and NLL are pure functions
// of (checkpoint, tokens); computation runs in the checkpoint's dtype.

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "growmerge/checkpoint.hpp"
#include "growmerge/rng.hpp"
#include "growmerge/tensor.hpp"

namespace growmerge {

using TokenSequence = std::vector<int>;

inline constexpr int kByteBos = 256;
inline constexpr std::size_t kByteVocabSize = 257;

// UTF-8 bytes to ids 0..255, with BOS id 256 prepended.
inline TokenSequence byte_tokenize(std::string_view text) {
    TokenSequence out;
    out.reserve(text.size() + 1);
    out.push_back(kByteBos);
    for (unsigned char c : text) out.push_back(static_cast<int>(c));
    return out;
}

// Exact scalar count: embeddings (once when tied), attention projections,
// MLP, and norm gains. No bias terms in this family.
inline std::uint64_t param_count(const ModelConfig& cfg) {
    cfg.validate();
    const std::uint64_t v = cfg.vocab_size, d = cfg.hidden_dim, l = cfg.n_layers;
    const std::uint64_t q_rows = cfg.n_heads * cfg.head_dim;
    const std::uint64_t kv_rows = cfg.n_kv_heads * cfg.head_dim;
    std::uint64_t per_layer = q_rows * d + 2 * kv_rows * d + d * q_rows  // q, k, v, o
                              + 3 * cfg.ffn_dim * d                      // gate, up, down
                              + 2 * d;                                   // norm gains
    std::uint64_t count = v * d + l * per_layer + d;
    if (!cfg.tied_embeddings) count += v * d;
    return count;
}

namespace detail {

template <class T>
std::vector<T> matvec(std::span<const T> w, const std::vector<T>& x, std::size_t rows,
                      std::size_t cols) {
    std::vector<T> y(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        T acc = 0;
        const T* row = w.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
    return y;
}

template <class T>
std::vector<T> rmsnorm(const std::vector<T>& x, std::span<const T> gain, double eps) {
    T ms = 0;
    for (T v : x) ms += v * v;
    ms /= static_cast<T>(x.size());
    const T scale = static_cast<T>(1) / std::sqrt(ms + static_cast<T>(eps));
    std::vector<T> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * scale * gain[i];
    return y;
}

// Half-split rotary rotation applied in place to one head vector.
template <class T>
void rope_rotate(T* head, std::size_t head_dim, std::size_t pos, double theta) {
    const std::size_t half = head_dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::pow(theta, -2.0 * static_cast<double>(i) /
                                                static_cast<double>(head_dim));
        const double angle = static_cast<double>(pos) * freq;
        const T c = static_cast<T>(std::cos(angle));
        const T s = static_cast<T>(std::sin(angle));
        const T a = head[i];
        const T b = head[i + half];
        head[i] = a * c - b * s;
        head[i + half] = a * s + b * c;
    }
}

template <class T>
std::vector<std::vector<T>> forward_typed(const Checkpoint& ckpt, const TokenSequence& tokens) {
    const ModelConfig& cfg = ckpt.config;
    validate_checkpoint(ckpt);
    for (int tok : tokens)
        if (tok < 0 || static_cast<std::size_t>(tok) >= cfg.vocab_size)
            throw ContractError("token id " + std::to_string(tok) + " out of range [0, " +
                                std::to_string(cfg.vocab_size) + ")");

    const std::size_t seq = tokens.size();
    const std::size_t d = cfg.hidden_dim;
    const std::size_t dh = cfg.head_dim;
    const std::size_t group = cfg.n_heads / cfg.n_kv_heads;
    const std::size_t q_rows = cfg.n_heads * dh;
    const std::size_t kv_rows = cfg.n_kv_heads * dh;
    const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

    const auto embed = ckpt.at("model.embed_tokens.weight").template values<T>();

    std::vector<std::vector<T>> x(seq);
    for (std::size_t t = 0; t < seq; ++t) {
        const std::size_t row = static_cast<std::size_t>(tokens[t]) * d;
        x[t].assign(embed.begin() + row, embed.begin() + row + d);
    }

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = layer_prefix(l);
        const auto g_in = ckpt.at(p + "input_layernorm.weight").template values<T>();
        const auto wq = ckpt.at(p + "self_attn.q_proj.weight").template values<T>();
        const auto wk = ckpt.at(p + "self_attn.k_proj.weight").template values<T>();
        const auto wv = ckpt.at(p + "self_attn.v_proj.weight").template values<T>();
        const auto wo = ckpt.at(p + "self_attn.o_proj.weight").template values<T>();
        const auto g_post = ckpt.at(p + "post_attention_layernorm.weight").template values<T>();
        const auto w_gate = ckpt.at(p + "mlp.gate_proj.weight").template values<T>();
        const auto w_up = ckpt.at(p + "mlp.up_proj.weight").template values<T>();
        const auto w_down = ckpt.at(p + "mlp.down_proj.weight").template values<T>();

        std::vector<std::vector<T>> q(seq), k(seq), v(seq);
        for (std::size_t t = 0; t < seq; ++t) {
            const auto normed = rmsnorm(x[t], g_in, cfg.norm_eps);
            q[t] = matvec(wq, normed, q_rows, d);
            k[t] = matvec(wk, normed, kv_rows, d);
            v[t] = matvec(wv, normed, kv_rows, d);
            for (std::size_t h = 0; h < cfg.n_heads; ++h)
                rope_rotate(q[t].data() + h * dh, dh, t, cfg.rope_theta);
            for (std::size_t h = 0; h < cfg.n_kv_heads; ++h)
                rope_rotate(k[t].data() + h * dh, dh, t, cfg.rope_theta);
        }

        for (std::size_t t = 0; t < seq; ++t) {
            std::vector<T> ctx(q_rows, 0);
            std::vector<T> scores(t + 1);
            for (std::size_t h = 0; h < cfg.n_heads; ++h) {
                const std::size_t kvh = h / group;
                const T* qh = q[t].data() + h * dh;
                for (std::size_t u = 0; u <= t; ++u) {
                    const T* kh = k[u].data() + kvh * dh;
                    T dot = 0;
                    for (std::size_t i = 0; i < dh; ++i) dot += qh[i] * kh[i];
                    scores[u] = dot * inv_sqrt_dh;
                }
                T max_score = scores[0];
                for (std::size_t u = 1; u <= t; ++u) max_score = std::max(max_score, scores[u]);
                T denom = 0;
                for (std::size_t u = 0; u <= t; ++u) {
                    scores[u] = std::exp(scores[u] - max_score);
                    denom += scores[u];
                }
                T* out = ctx.data() + h * dh;
                for (std::size_t u = 0; u <= t; ++u) {
                    const T w = scores[u] / denom;
                    const T* vh = v[u].data() + kvh * dh;
                    for (std::size_t i = 0; i < dh; ++i) out[i] += w * vh[i];
                }
            }
            const auto attn_out = matvec(wo, ctx, d, q_rows);
            for (std::size_t i = 0; i < d; ++i) x[t][i] += attn_out[i];

            const auto normed = rmsnorm(x[t], g_post, cfg.norm_eps);
            auto gate = matvec(w_gate, normed, cfg.ffn_dim, d);
            const auto up = matvec(w_up, normed, cfg.ffn_dim, d);
            for (std::size_t i = 0; i < cfg.ffn_dim; ++i) {
                const T g = gate[i];
                gate[i] = g / (static_cast<T>(1) + std::exp(-g)) * up[i];  // SiLU(g) * up
            }
            const auto mlp_out = matvec(w_down, gate, d, cfg.ffn_dim);
            for (std::size_t i = 0; i < d; ++i) x[t][i] += mlp_out[i];
        }
    }

    const auto g_final = ckpt.at("model.norm.weight").template values<T>();
    const auto head = cfg.tied_embeddings ? embed
                                          : ckpt.at("lm_head.weight").template values<T>();
    const T out_scale = static_cast<T>(cfg.output_scale);

    std::vector<std::vector<T>> logits(seq);
    for (std::size_t t = 0; t < seq; ++t) {
        const auto normed = rmsnorm(x[t], g_final, cfg.norm_eps);
        auto row = matvec(head, normed, cfg.vocab_size, d);
        for (T& v2 : row) v2 *= out_scale;
        logits[t] = std::move(row);
    }
    return logits;
}

}  // namespace detail

// Causal logits for every position, widened to double. Computation runs in
// the checkpoint's storage dtype.
inline std::vector<std::vector<double>> forward(const Checkpoint& ckpt,
                                                const TokenSequence& tokens) {
    const DType dt = checkpoint_dtype(ckpt);
    if (dt == DType::F64) return detail::forward_typed<double>(ckpt, tokens);
    const auto typed = detail::forward_typed<float>(ckpt, tokens);
    std::vector<std::vector<double>> out(typed.size());
    for (std::size_t t = 0; t < typed.size(); ++t)
        out[t].assign(typed[t].begin(), typed[t].end());
    return out;
}

// Total negative log-likelihood in nats: sum over positions t >= 1 of
// -log softmax(logits[t-1])[token t]. Softmax reduction runs in double.
inline double nll(const Checkpoint& ckpt, const TokenSequence& tokens) {
    if (tokens.size() < 2)
        throw ContractError("nll requires a sequence of length >= 2");
    const auto logits = forward(ckpt, tokens);
    double total = 0.0;
    for (std::size_t t = 1; t < tokens.size(); ++t) {
        const auto& row = logits[t - 1];
        double max_logit = row[0];
        for (double v : row) max_logit = std::max(max_logit, v);
        double denom = 0.0;
        for (double v : row) denom += std::exp(v - max_logit);
        const double target = row[static_cast<std::size_t>(tokens[t])];
        total += -(target - max_logit - std::log(denom));
    }
    return total;
}

// Seeded random checkpoint: weights ~ N(0, init_std), norm gains ~ 1 + N(0, init_std).
// Each tensor draws from its own (seed, name) stream.
inline Checkpoint random_checkpoint(const ModelConfig& cfg, std::uint64_t seed,
                                    DType dt = DType::F32, double init_std = 0.02) {
    cfg.validate();
    Checkpoint ckpt;
    ckpt.config = cfg;
    for (const auto& [name, shape] : expected_tensors(cfg)) {
        Rng rng = Rng::stream_named(seed, name);
        std::size_t numel = 1;
        for (std::size_t e : shape) numel *= e;
        const bool is_norm = name.find("norm.weight") != std::string::npos ||
                             name.find("layernorm.weight") != std::string::npos;
        std::vector<double> values(numel);
        for (double& v : values) v = (is_norm ? 1.0 : 0.0) + rng.normal(0.0, init_std);
        ckpt.tensors.emplace(name, Tensor::from_doubles(dt, shape, values));
    }
    return ckpt;
}

inline Checkpoint zero_checkpoint(const ModelConfig& cfg, DType dt = DType::F32) {
    cfg.validate();
    Checkpoint ckpt;
    ckpt.config = cfg;
    for (const auto& [name, shape] : expected_tensors(cfg))
        ckpt.tensors.emplace(name, Tensor(dt, shape));
    return ckpt;
}

}  // namespace growmerge
