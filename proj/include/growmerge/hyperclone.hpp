// SPDX-License-Identifier: Apache-2.0
#pragma once

// Function-preserving n-fold width expansion. Linear weights are block-tiled
// at 1/n so that W'[x;...;x] = [Wx;...;Wx]; embeddings and norm gains
// duplicate unscaled; attention grows by repeating the whole head stack with
// head_dim fixed, so rotary angles and per-head scores are unchanged. With
// tied embeddings the logit scale drops to output_scale/n instead of
// rewriting the embedding matrix.
//
// Optional symmetry-breaking noise adds +N/-N to pairs of duplicated blocks,
// keeping block sums exact. Exact output equivalence is only claimed at
// noise_sigma = 0.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "growmerge/checkpoint.hpp"
#include "growmerge/model.hpp"
#include "growmerge/parallel.hpp"
#include "growmerge/rng.hpp"
#include "growmerge/tensor.hpp"

namespace growmerge {

struct CloneSpec {
    std::size_t factor = 1;
    double noise_sigma = 0.0;  // 0 required for exact-preservation claims
    std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<double> noise_block(Rng* rng, double sigma, std::size_t count) {
    std::vector<double> n(count, 0.0);
    if (rng && sigma > 0.0)
        for (double& v : n) v = rng->normal(0.0, sigma);
    return n;
}

// [rows, cols] -> [rows, n*cols], each column block W/n; +N/-N on block pairs.
inline std::vector<double> htile_scaled(const std::vector<double>& w, std::size_t rows,
                                        std::size_t cols, std::size_t n, Rng* rng,
                                        double sigma) {
    std::vector<double> out(rows * n * cols);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t c = 0; c < cols; ++c)
                out[r * n * cols + b * cols + c] = w[r * cols + c] * inv_n;
    for (std::size_t b = 0; b + 1 < n; b += 2) {
        const auto noise = noise_block(rng, sigma, rows * cols);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                out[r * n * cols + b * cols + c] += noise[r * cols + c];
                out[r * n * cols + (b + 1) * cols + c] -= noise[r * cols + c];
            }
    }
    return out;
}

// [rows, cols] -> [n*rows, cols], rows repeated unscaled; +N/-N on copy pairs.
inline std::vector<double> vtile_unscaled(const std::vector<double>& w, std::size_t rows,
                                          std::size_t cols, std::size_t n, Rng* rng,
                                          double sigma) {
    std::vector<double> out(n * rows * cols);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < rows * cols; ++i) out[b * rows * cols + i] = w[i];
    for (std::size_t b = 0; b + 1 < n; b += 2) {
        const auto noise = noise_block(rng, sigma, rows * cols);
        for (std::size_t i = 0; i < rows * cols; ++i) {
            out[b * rows * cols + i] += noise[i];
            out[(b + 1) * rows * cols + i] -= noise[i];
        }
    }
    return out;
}

inline std::pair<Tensor, std::optional<Tensor>> clone_linear_impl(
    const Tensor& w, const std::optional<Tensor>& bias, std::size_t n, bool expand_in,
    bool expand_out, Rng* rng, double sigma) {
    if (w.rank() != 2) throw ContractError("clone_linear requires a 2-D weight");
    if (n == 0) throw ContractError("clone factor must be >= 1");
    const std::size_t rows = w.dim(0), cols = w.dim(1);
    auto vals = w.to_doubles();

    std::vector<double> out_vals;
    std::vector<std::size_t> out_shape;
    if (expand_in && expand_out) {
        // n x n block tiling of W/n: htile then repeat the whole row band.
        const auto wide = htile_scaled(vals, rows, cols, n, rng, sigma);
        out_vals = vtile_unscaled(wide, rows, n * cols, n, rng, sigma);
        out_shape = {n * rows, n * cols};
    } else if (expand_in) {
        out_vals = htile_scaled(vals, rows, cols, n, rng, sigma);
        out_shape = {rows, n * cols};
    } else if (expand_out) {
        out_vals = vtile_unscaled(vals, rows, cols, n, rng, sigma);
        out_shape = {n * rows, cols};
    } else {
        out_vals = std::move(vals);
        out_shape = {rows, cols};
    }
    Tensor w_out = Tensor::from_doubles(w.dtype(), out_shape, out_vals);

    std::optional<Tensor> bias_out;
    if (bias) {
        if (bias->rank() != 1 || bias->dim(0) != rows)
            throw ContractError("bias shape does not match weight rows");
        if (expand_out) {
            const auto b = vtile_unscaled(bias->to_doubles(), rows, 1, n, rng, sigma);
            bias_out = Tensor::from_doubles(bias->dtype(), {n * rows}, b);
        } else {
            bias_out = *bias;
        }
    }
    return {std::move(w_out), std::move(bias_out)};
}

// Q/K/V: per-head blocks 1 x n tiled with W/n on the input axis, then the
// full head stack repeated n times on the output axis.
inline Tensor clone_qkv_impl(const Tensor& w, std::size_t n, Rng* rng, double sigma) {
    if (w.rank() != 2) throw ContractError("clone_qkv requires a 2-D weight");
    const std::size_t rows = w.dim(0), cols = w.dim(1);
    const auto wide = htile_scaled(w.to_doubles(), rows, cols, n, rng, sigma);
    const auto full = vtile_unscaled(wide, rows, n * cols, n, rng, sigma);
    return Tensor::from_doubles(w.dtype(), {n * rows, n * cols}, full);
}

// Lookup tables and gains duplicate along the hidden axis, unscaled.
inline Tensor clone_cols_impl(const Tensor& t, std::size_t n, Rng* rng, double sigma) {
    const std::size_t rows = t.rank() == 2 ? t.dim(0) : 1;
    const std::size_t cols = t.rank() == 2 ? t.dim(1) : t.dim(0);
    const auto vals = t.to_doubles();
    std::vector<double> out(rows * n * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t c = 0; c < cols; ++c)
                out[r * n * cols + b * cols + c] = vals[r * cols + c];
    for (std::size_t b = 0; b + 1 < n; b += 2) {
        const auto noise = noise_block(rng, sigma, rows * cols);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                out[r * n * cols + b * cols + c] += noise[r * cols + c];
                out[r * n * cols + (b + 1) * cols + c] -= noise[r * cols + c];
            }
    }
    std::vector<std::size_t> shape = t.rank() == 2
                                         ? std::vector<std::size_t>{rows, n * cols}
                                         : std::vector<std::size_t>{n * cols};
    return Tensor::from_doubles(t.dtype(), shape, out);
}

}  // namespace detail

inline std::pair<Tensor, std::optional<Tensor>> clone_linear(const Tensor& w,
                                                             const std::optional<Tensor>& bias,
                                                             std::size_t n, bool expand_in,
                                                             bool expand_out) {
    return detail::clone_linear_impl(w, bias, n, expand_in, expand_out, nullptr, 0.0);
}

inline Tensor clone_embedding(const Tensor& e, std::size_t n) {
    if (e.rank() != 2) throw ContractError("clone_embedding requires a 2-D table");
    if (n == 0) throw ContractError("clone factor must be >= 1");
    return detail::clone_cols_impl(e, n, nullptr, 0.0);
}

inline Tensor clone_norm(const Tensor& g, std::size_t n) {
    if (g.rank() != 1) throw ContractError("clone_norm requires a 1-D gain vector");
    if (n == 0) throw ContractError("clone factor must be >= 1");
    return detail::clone_cols_impl(g, n, nullptr, 0.0);
}

// Config arithmetic for an n-fold clone: width, FFN and head counts scale by
// n, head_dim stays fixed, and tied models fold 1/n into the logit scale.
inline ModelConfig cloned_config(const ModelConfig& src, std::size_t n) {
    if (n == 0) throw ContractError("clone factor must be >= 1");
    ModelConfig cfg = src;
    cfg.hidden_dim = src.hidden_dim * n;
    cfg.ffn_dim = src.ffn_dim * n;
    cfg.n_heads = src.n_heads * n;
    cfg.n_kv_heads = src.n_kv_heads * n;
    if (cfg.tied_embeddings) cfg.output_scale = src.output_scale / static_cast<double>(n);
    return cfg;
}

inline Checkpoint clone_checkpoint(const Checkpoint& ckpt, const CloneSpec& spec) {
    if (spec.factor == 0) throw ContractError("clone factor must be >= 1");
    validate_checkpoint(ckpt);
    const std::size_t n = spec.factor;
    const ModelConfig cfg = cloned_config(ckpt.config, n);

    Checkpoint out;
    out.config = cfg;
    out.metadata = ckpt.metadata;
    out.metadata["clone_source_digest"] = checkpoint_digest(ckpt);
    out.metadata["clone_factor"] = std::to_string(n);

    const double sigma = spec.noise_sigma;
    std::vector<std::pair<std::string, const Tensor*>> items;
    items.reserve(ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) items.emplace_back(name, &t);

    std::vector<Tensor> cloned(items.size());
    parallel_for(items.size(), [&](std::size_t i) {
        const auto& [name, t] = items[i];
        Rng rng = Rng::stream_named(spec.seed, name);
        Rng* rp = sigma > 0.0 ? &rng : nullptr;
        Tensor result;
        if (name == "model.embed_tokens.weight") {
            result = detail::clone_cols_impl(*t, n, rp, sigma);
        } else if (name.ends_with("layernorm.weight") || name == "model.norm.weight") {
            result = detail::clone_cols_impl(*t, n, rp, sigma);
        } else if (name.ends_with("q_proj.weight") || name.ends_with("k_proj.weight") ||
                   name.ends_with("v_proj.weight")) {
            result = detail::clone_qkv_impl(*t, n, rp, sigma);
        } else if (name == "lm_head.weight") {
            result = detail::clone_linear_impl(*t, std::nullopt, n, true, false, rp, sigma)
                         .first;
        } else {
            // o_proj and the three MLP linears: n x n tiling of W/n.
            result = detail::clone_linear_impl(*t, std::nullopt, n, true, true, rp, sigma)
                         .first;
        }
        require_finite(result, "clone_checkpoint(" + name + ")");
        cloned[i] = std::move(result);
    });
    for (std::size_t i = 0; i < items.size(); ++i)
        out.tensors.emplace(items[i].first, std::move(cloned[i]));

    validate_checkpoint(out);
    return out;
}

struct PreservationReport {
    double max_abs_logit_diff = 0.0;
    bool argmax_match = true;
    bool pass = false;
};

// Compares forward logits of two checkpoints on every prompt.
inline PreservationReport verify_preservation(const Checkpoint& src, const Checkpoint& cloned,
                                              const std::vector<TokenSequence>& prompts,
                                              double tol) {
    if (src.config.vocab_size != cloned.config.vocab_size)
        throw ContractError("verify_preservation: vocab_size mismatch (" +
                            std::to_string(src.config.vocab_size) + " vs " +
                            std::to_string(cloned.config.vocab_size) + ")");
    PreservationReport report;
    for (const auto& prompt : prompts) {
        const auto a = forward(src, prompt);
        const auto b = forward(cloned, prompt);
        for (std::size_t t = 0; t < a.size(); ++t) {
            std::size_t argmax_a = 0, argmax_b = 0;
            for (std::size_t v = 0; v < a[t].size(); ++v) {
                const double diff = std::abs(a[t][v] - b[t][v]);
                report.max_abs_logit_diff = std::max(report.max_abs_logit_diff, diff);
                if (a[t][v] > a[t][argmax_a]) argmax_a = v;
                if (b[t][v] > b[t][argmax_b]) argmax_b = v;
            }
            if (argmax_a != argmax_b) report.argmax_match = false;
        }
    }
    report.pass = report.max_abs_logit_diff <= tol;
    return report;
}

}  // namespace growmerge
