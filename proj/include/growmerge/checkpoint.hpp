// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "growmerge/rng.hpp"
#include "growmerge/tensor.hpp"

namespace growmerge {

// Decoder-only transformer hyperparameters (SmolLM2/Llama family).
// output_scale multiplies the logits at runtime; it is 1 for ordinary models
// and 1/n after n-fold width cloning with tied embeddings.
struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t hidden_dim = 0;
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::size_t n_kv_heads = 0;
    std::size_t head_dim = 0;
    std::size_t ffn_dim = 0;
    double rope_theta = 10000.0;
    double norm_eps = 1e-5;
    bool tied_embeddings = true;
    double output_scale = 1.0;

    bool operator==(const ModelConfig&) const = default;

    void validate() const {
        if (vocab_size == 0) throw ContractError("config: vocab_size must be positive");
        if (hidden_dim == 0 || n_heads == 0 || n_kv_heads == 0 || head_dim == 0 || ffn_dim == 0)
            throw ContractError("config: all dimensions must be positive");
        if (hidden_dim != n_heads * head_dim)
            throw ContractError("config: hidden_dim must equal n_heads * head_dim");
        if (n_heads % n_kv_heads != 0)
            throw ContractError("config: n_heads must be divisible by n_kv_heads");
        if (!(rope_theta > 0.0)) throw ContractError("config: rope_theta must be positive");
        if (!(norm_eps > 0.0)) throw ContractError("config: norm_eps must be positive");
        if (!(output_scale > 0.0)) throw ContractError("config: output_scale must be positive");
    }

    nlohmann::ordered_json to_json() const {
        return nlohmann::ordered_json{
            {"vocab_size", vocab_size},     {"hidden_dim", hidden_dim},
            {"n_layers", n_layers},         {"n_heads", n_heads},
            {"n_kv_heads", n_kv_heads},     {"head_dim", head_dim},
            {"ffn_dim", ffn_dim},           {"rope_theta", rope_theta},
            {"norm_eps", norm_eps},         {"tied_embeddings", tied_embeddings},
            {"output_scale", output_scale},
        };
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
        c.n_layers = j.at("n_layers").get<std::size_t>();
        c.n_heads = j.at("n_heads").get<std::size_t>();
        c.n_kv_heads = j.at("n_kv_heads").get<std::size_t>();
        c.head_dim = j.at("head_dim").get<std::size_t>();
        c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
        c.rope_theta = j.value("rope_theta", 10000.0);
        c.norm_eps = j.value("norm_eps", 1e-5);
        c.tied_embeddings = j.value("tied_embeddings", true);
        c.output_scale = j.value("output_scale", 1.0);
        return c;
    }
};

// Named-tensor map plus architecture config and free-form string metadata.
// Metadata keys "config" and "flops_cumulative" are reserved: "config" is
// rewritten from the config field on save.
struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    ModelConfig config;
    std::map<std::string, std::string> metadata;

    const Tensor& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end())
            throw ContractError("checkpoint is missing tensor \"" + name + "\"");
        return it->second;
    }

    bool has(const std::string& name) const { return tensors.count(name) != 0; }
};

inline std::string layer_prefix(std::size_t layer) {
    return "model.layers." + std::to_string(layer) + ".";
}

// Tensor naming schema implied by a config, in schema order.
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> expected_tensors(
    const ModelConfig& cfg) {
    const std::size_t d = cfg.hidden_dim;
    const std::size_t q_rows = cfg.n_heads * cfg.head_dim;
    const std::size_t kv_rows = cfg.n_kv_heads * cfg.head_dim;
    std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
    out.emplace_back("model.embed_tokens.weight", std::vector<std::size_t>{cfg.vocab_size, d});
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = layer_prefix(l);
        out.emplace_back(p + "input_layernorm.weight", std::vector<std::size_t>{d});
        out.emplace_back(p + "self_attn.q_proj.weight", std::vector<std::size_t>{q_rows, d});
        out.emplace_back(p + "self_attn.k_proj.weight", std::vector<std::size_t>{kv_rows, d});
        out.emplace_back(p + "self_attn.v_proj.weight", std::vector<std::size_t>{kv_rows, d});
        out.emplace_back(p + "self_attn.o_proj.weight", std::vector<std::size_t>{d, q_rows});
        out.emplace_back(p + "post_attention_layernorm.weight", std::vector<std::size_t>{d});
        out.emplace_back(p + "mlp.gate_proj.weight", std::vector<std::size_t>{cfg.ffn_dim, d});
        out.emplace_back(p + "mlp.up_proj.weight", std::vector<std::size_t>{cfg.ffn_dim, d});
        out.emplace_back(p + "mlp.down_proj.weight", std::vector<std::size_t>{d, cfg.ffn_dim});
    }
    out.emplace_back("model.norm.weight", std::vector<std::size_t>{d});
    if (!cfg.tied_embeddings)
        out.emplace_back("lm_head.weight", std::vector<std::size_t>{cfg.vocab_size, d});
    return out;
}

// Checks that the tensor set matches the naming schema and shapes implied by
// the config. Container I/O does not require this; model ops do.
inline void validate_checkpoint(const Checkpoint& ckpt) {
    ckpt.config.validate();
    const auto expected = expected_tensors(ckpt.config);
    for (const auto& [name, shape] : expected) {
        const Tensor& t = ckpt.at(name);
        if (t.shape() != shape)
            throw ContractError("tensor \"" + name + "\" has shape " +
                                shape_to_string(t.shape()) + ", config implies " +
                                shape_to_string(shape));
    }
    if (ckpt.tensors.size() != expected.size()) {
        for (const auto& [name, t] : ckpt.tensors) {
            bool known = false;
            for (const auto& [ename, eshape] : expected)
                if (ename == name) { known = true; break; }
            if (!known)
                throw ContractError("tensor \"" + name + "\" does not match the naming schema");
        }
    }
}

// Uniform storage dtype across all tensors; forward passes require it.
inline DType checkpoint_dtype(const Checkpoint& ckpt) {
    if (ckpt.tensors.empty()) return DType::F32;
    DType dt = ckpt.tensors.begin()->second.dtype();
    for (const auto& [name, t] : ckpt.tensors)
        if (t.dtype() != dt)
            throw ContractError("checkpoint mixes dtypes; tensor \"" + name + "\" differs");
    return dt;
}

inline Checkpoint checkpoint_astype(const Checkpoint& ckpt, DType dt) {
    Checkpoint out;
    out.config = ckpt.config;
    out.metadata = ckpt.metadata;
    for (const auto& [name, t] : ckpt.tensors) out.tensors.emplace(name, t.astype(dt));
    return out;
}

// Content hash over (name, dtype, shape, bytes) in name order, as 16 hex chars.
inline std::string checkpoint_digest(const Checkpoint& ckpt) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto feed = [&h](const void* p, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ull;
        }
    };
    for (const auto& [name, t] : ckpt.tensors) {
        feed(name.data(), name.size());
        const auto dt = static_cast<std::uint8_t>(t.dtype());
        feed(&dt, 1);
        for (std::size_t e : t.shape()) {
            const auto e64 = static_cast<std::uint64_t>(e);
            feed(&e64, 8);
        }
        feed(t.raw().data(), t.raw().size());
    }
    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = hex[h & 0xf];
        h >>= 4;
    }
    return out;
}

}  // namespace growmerge
