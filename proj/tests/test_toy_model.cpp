// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "growmerge/model.hpp"
#include "growmerge/rng.hpp"

using namespace growmerge;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.vocab_size = 11;
    cfg.hidden_dim = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.n_kv_heads = 1;
    cfg.head_dim = 4;
    cfg.ffn_dim = 16;
    return cfg;
}

// Straight-line reimplementation of the architecture, written independently
// of the library path: per-position recomputation, explicit index arithmetic,
// no shared helpers. Double precision throughout.
namespace oracle {

std::vector<double> row_of(const Tensor& t, std::size_t row) {
    const std::size_t cols = t.shape()[1];
    std::vector<double> out(cols);
    for (std::size_t c = 0; c < cols; ++c) out[c] = t.item(row * cols + c);
    return out;
}

std::vector<double> rms_normalize(const std::vector<double>& x, const Tensor& gain,
                                  double eps) {
    double mean_sq = 0.0;
    for (double v : x) mean_sq += v * v;
    mean_sq /= static_cast<double>(x.size());
    const double inv = 1.0 / std::sqrt(mean_sq + eps);
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * inv * gain.item(i);
    return y;
}

std::vector<double> linear(const Tensor& w, const std::vector<double>& x) {
    const std::size_t rows = w.shape()[0], cols = w.shape()[1];
    std::vector<double> y(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) y[r] += w.item(r * cols + c) * x[c];
    return y;
}

void rotate(std::vector<double>& vec, std::size_t head_start, std::size_t head_dim,
            std::size_t pos, double theta) {
    const std::size_t half = head_dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double angle =
            static_cast<double>(pos) *
            std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
        const double a = vec[head_start + i];
        const double b = vec[head_start + i + half];
        vec[head_start + i] = a * std::cos(angle) - b * std::sin(angle);
        vec[head_start + i + half] = a * std::sin(angle) + b * std::cos(angle);
    }
}

std::vector<std::vector<double>> logits(const Checkpoint& ckpt,
                                        const std::vector<int>& tokens) {
    const ModelConfig& cfg = ckpt.config;
    const std::size_t seq = tokens.size();
    const std::size_t dh = cfg.head_dim;

    std::vector<std::vector<double>> h(seq);
    for (std::size_t t = 0; t < seq; ++t)
        h[t] = row_of(ckpt.at("model.embed_tokens.weight"),
                      static_cast<std::size_t>(tokens[t]));

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "model.layers." + std::to_string(l) + ".";
        std::vector<std::vector<double>> q(seq), k(seq), v(seq);
        for (std::size_t t = 0; t < seq; ++t) {
            const auto normed = rms_normalize(h[t], ckpt.at(p + "input_layernorm.weight"),
                                              cfg.norm_eps);
            q[t] = linear(ckpt.at(p + "self_attn.q_proj.weight"), normed);
            k[t] = linear(ckpt.at(p + "self_attn.k_proj.weight"), normed);
            v[t] = linear(ckpt.at(p + "self_attn.v_proj.weight"), normed);
            for (std::size_t head = 0; head < cfg.n_heads; ++head)
                rotate(q[t], head * dh, dh, t, cfg.rope_theta);
            for (std::size_t head = 0; head < cfg.n_kv_heads; ++head)
                rotate(k[t], head * dh, dh, t, cfg.rope_theta);
        }
        for (std::size_t t = 0; t < seq; ++t) {
            std::vector<double> merged(cfg.n_heads * dh, 0.0);
            for (std::size_t head = 0; head < cfg.n_heads; ++head) {
                const std::size_t kv_head = head / (cfg.n_heads / cfg.n_kv_heads);
                std::vector<double> weights(t + 1);
                double max_w = -1e300;
                for (std::size_t u = 0; u <= t; ++u) {
                    double dot = 0.0;
                    for (std::size_t i = 0; i < dh; ++i)
                        dot += q[t][head * dh + i] * k[u][kv_head * dh + i];
                    weights[u] = dot / std::sqrt(static_cast<double>(dh));
                    max_w = std::max(max_w, weights[u]);
                }
                double total = 0.0;
                for (std::size_t u = 0; u <= t; ++u) {
                    weights[u] = std::exp(weights[u] - max_w);
                    total += weights[u];
                }
                for (std::size_t u = 0; u <= t; ++u)
                    for (std::size_t i = 0; i < dh; ++i)
                        merged[head * dh + i] +=
                            weights[u] / total * v[u][kv_head * dh + i];
            }
            const auto attn = linear(ckpt.at(p + "self_attn.o_proj.weight"), merged);
            for (std::size_t i = 0; i < h[t].size(); ++i) h[t][i] += attn[i];

            const auto normed = rms_normalize(
                h[t], ckpt.at(p + "post_attention_layernorm.weight"), cfg.norm_eps);
            const auto gate = linear(ckpt.at(p + "mlp.gate_proj.weight"), normed);
            const auto up = linear(ckpt.at(p + "mlp.up_proj.weight"), normed);
            std::vector<double> act(gate.size());
            for (std::size_t i = 0; i < gate.size(); ++i)
                act[i] = gate[i] / (1.0 + std::exp(-gate[i])) * up[i];
            const auto mlp = linear(ckpt.at(p + "mlp.down_proj.weight"), act);
            for (std::size_t i = 0; i < h[t].size(); ++i) h[t][i] += mlp[i];
        }
    }

    std::vector<std::vector<double>> out(seq);
    const Tensor& head_matrix = cfg.tied_embeddings ? ckpt.at("model.embed_tokens.weight")
                                                    : ckpt.at("lm_head.weight");
    for (std::size_t t = 0; t < seq; ++t) {
        const auto normed = rms_normalize(h[t], ckpt.at("model.norm.weight"), cfg.norm_eps);
        out[t] = linear(head_matrix, normed);
        for (double& v2 : out[t]) v2 *= cfg.output_scale;
    }
    return out;
}

}  // namespace oracle

}  // namespace

TEST_CASE("all-zero weights give all-zero logits") {
    Checkpoint ckpt = zero_checkpoint(tiny_config());
    const auto logits = forward(ckpt, {0, 3, 7});
    REQUIRE(logits.size() == 3);
    for (const auto& row : logits) {
        REQUIRE(row.size() == 11);
        for (double v : row) CHECK(v == 0.0);
    }
}

TEST_CASE("forward matches the independent per-layer oracle") {
    Checkpoint ckpt = random_checkpoint(tiny_config(), 42, DType::F64, 0.2);
    Rng rng(99);
    for (int trial = 0; trial < 8; ++trial) {
        std::vector<int> tokens;
        const std::size_t len = 2 + rng.below(9);
        for (std::size_t i = 0; i < len; ++i)
            tokens.push_back(static_cast<int>(rng.below(11)));
        const auto got = forward(ckpt, tokens);
        const auto want = oracle::logits(ckpt, tokens);
        REQUIRE(got.size() == want.size());
        for (std::size_t t = 0; t < got.size(); ++t)
            for (std::size_t v = 0; v < got[t].size(); ++v)
                CHECK(std::abs(got[t][v] - want[t][v]) <= 1e-10);
    }
}

TEST_CASE("oracle agreement holds for untied embeddings and GQA variants") {
    ModelConfig cfg = tiny_config();
    cfg.tied_embeddings = false;
    cfg.n_heads = 4;
    cfg.n_kv_heads = 2;
    cfg.head_dim = 2;
    cfg.output_scale = 0.5;
    Checkpoint ckpt = random_checkpoint(cfg, 5, DType::F64, 0.3);
    const std::vector<int> tokens{1, 4, 9, 2, 2, 10};
    const auto got = forward(ckpt, tokens);
    const auto want = oracle::logits(ckpt, tokens);
    for (std::size_t t = 0; t < got.size(); ++t)
        for (std::size_t v = 0; v < got[t].size(); ++v)
            CHECK(std::abs(got[t][v] - want[t][v]) <= 1e-10);
}

TEST_CASE("tied and untied agree when lm_head copies the embedding") {
    ModelConfig cfg = tiny_config();
    Checkpoint tied = random_checkpoint(cfg, 17, DType::F64);

    Checkpoint untied = tied;
    untied.config.tied_embeddings = false;
    untied.tensors.emplace("lm_head.weight", tied.at("model.embed_tokens.weight"));

    const std::vector<int> tokens{0, 5, 6, 3};
    CHECK(forward(tied, tokens) == forward(untied, tokens));
}

TEST_CASE("nll of the uniform model is T*ln(V)") {
    Checkpoint ckpt = zero_checkpoint(tiny_config());
    // T = 2 steps: the sum x + x is exact in floating point.
    CHECK(nll(ckpt, {0, 1, 2}) == 2.0 * std::log(11.0));
    CHECK(nll(ckpt, {3, 3, 3, 3, 3, 3, 3, 3}) ==
          Catch::Approx(7.0 * std::log(11.0)).epsilon(1e-13));
}

TEST_CASE("nll equals the stepwise hand computation from logits") {
    Checkpoint ckpt = random_checkpoint(tiny_config(), 23, DType::F64, 0.15);
    const std::vector<int> tokens{2, 7, 4};
    const auto logits = forward(ckpt, tokens);

    double expected = 0.0;
    for (std::size_t t = 1; t < tokens.size(); ++t) {
        double denom = 0.0;
        for (double v : logits[t - 1]) denom += std::exp(v);
        const double p = std::exp(logits[t - 1][static_cast<std::size_t>(tokens[t])]) / denom;
        expected += -std::log(p);
    }
    CHECK(nll(ckpt, tokens) == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("nll is invariant under vocabulary permutation") {
    ModelConfig cfg = tiny_config();
    Checkpoint ckpt = random_checkpoint(cfg, 31, DType::F64, 0.2);

    // Rotate vocab ids by 3 and permute the embedding rows to match.
    const std::size_t v = cfg.vocab_size, d = cfg.hidden_dim;
    const Tensor& embed = ckpt.at("model.embed_tokens.weight");
    std::vector<double> permuted(v * d);
    for (std::size_t row = 0; row < v; ++row) {
        const std::size_t new_row = (row + 3) % v;
        for (std::size_t c = 0; c < d; ++c)
            permuted[new_row * d + c] = embed.item(row * d + c);
    }
    Checkpoint relabeled = ckpt;
    relabeled.tensors["model.embed_tokens.weight"] =
        Tensor::of<double>({v, d}, permuted);

    const std::vector<int> tokens{0, 4, 8, 1, 10};
    std::vector<int> relabeled_tokens;
    for (int t : tokens) relabeled_tokens.push_back((t + 3) % static_cast<int>(v));

    CHECK(nll(ckpt, tokens) ==
          Catch::Approx(nll(relabeled, relabeled_tokens)).epsilon(1e-12));
}

TEST_CASE("causality: suffix edits leave prefix logits bit-identical") {
    Checkpoint ckpt = random_checkpoint(tiny_config(), 13, DType::F32, 0.1);
    const std::vector<int> base{1, 2, 3, 4, 5, 6};
    std::vector<int> edited = base;
    edited[4] = 9;
    edited[5] = 0;
    const auto a = forward(ckpt, base);
    const auto b = forward(ckpt, edited);
    for (std::size_t t = 0; t < 4; ++t) CHECK(a[t] == b[t]);
    CHECK(a[4] != b[4]);
}

TEST_CASE("f32 and f64 forward agree within 1e-3") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        Checkpoint f64 = random_checkpoint(tiny_config(), seed, DType::F64, 0.2);
        Checkpoint f32 = checkpoint_astype(f64, DType::F32);
        const std::vector<int> tokens{3, 1, 4, 1, 5, 9, 2, 6};
        const auto a = forward(f64, tokens);
        const auto b = forward(f32, tokens);
        double max_diff = 0.0;
        for (std::size_t t = 0; t < a.size(); ++t)
            for (std::size_t v = 0; v < a[t].size(); ++v)
                max_diff = std::max(max_diff, std::abs(a[t][v] - b[t][v]));
        CHECK(max_diff <= 1e-3);
    }
}

TEST_CASE("forward contract errors") {
    Checkpoint ckpt = random_checkpoint(tiny_config(), 3);
    CHECK_THROWS_AS(forward(ckpt, {0, 11}), ContractError);  // out of range
    CHECK_THROWS_AS(forward(ckpt, {-1}), ContractError);
    CHECK_THROWS_AS(nll(ckpt, {5}), ContractError);  // too short

    Checkpoint broken = ckpt;
    broken.tensors["model.norm.weight"] = Tensor(DType::F32, {4});
    CHECK_THROWS_AS(forward(broken, {0, 1}), ContractError);
}

TEST_CASE("param_count matches documented dimension arithmetic") {
    // SmolLM2-135M-like dims with the 128K multilingual vocabulary.
    ModelConfig small;
    small.vocab_size = 128256;
    small.hidden_dim = 576;
    small.n_layers = 30;
    small.n_heads = 9;
    small.n_kv_heads = 3;
    small.head_dim = 64;
    small.ffn_dim = 1536;
    const std::uint64_t n_small = param_count(small);
    CHECK(n_small >= 178'000'000ull);
    CHECK(n_small <= 182'000'000ull);

    // Same dims after 2x width cloning.
    ModelConfig big = small;
    big.hidden_dim = 1152;
    big.n_heads = 18;
    big.n_kv_heads = 6;
    big.ffn_dim = 3072;
    const std::uint64_t n_big = param_count(big);
    CHECK(n_big >= 566'000'000ull);
    CHECK(n_big <= 578'000'000ull);
}

TEST_CASE("param_count hand example with no layers") {
    ModelConfig cfg;
    cfg.vocab_size = 10;
    cfg.hidden_dim = 4;
    cfg.n_layers = 0;
    cfg.n_heads = 1;
    cfg.n_kv_heads = 1;
    cfg.head_dim = 4;
    cfg.ffn_dim = 1;
    CHECK(param_count(cfg) == 40 + 4);
}

TEST_CASE("byte_tokenize") {
    CHECK(byte_tokenize("") == TokenSequence{256});
    CHECK(byte_tokenize("A") == TokenSequence{256, 65});
    CHECK(byte_tokenize("\xc3\xa9") == TokenSequence{256, 195, 169});  // "é"
    CHECK(byte_tokenize("ab") == TokenSequence{256, 97, 98});
}

TEST_CASE("forward is deterministic across repeated calls") {
    Checkpoint ckpt = random_checkpoint(tiny_config(), 77, DType::F32, 0.1);
    const std::vector<int> tokens{1, 2, 3, 4};
    CHECK(forward(ckpt, tokens) == forward(ckpt, tokens));
    CHECK(nll(ckpt, tokens) == nll(ckpt, tokens));
}
