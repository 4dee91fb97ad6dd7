// SPDX-License-Identifier: Apache-2.0
#pragma once

// Five checkpoint-merging methods operating per tensor over name-aligned
// checkpoints: plain weight averaging, task arithmetic, TIES (trim, elect
// sign, merge agreeing entries), DARE-TIES (drop-and-rescale deltas first),
// and a multi-model spherical interpolation. Weights are always normalized
// to sum to 1. All arithmetic runs in double and is cast back to the input
// dtype, so a fixed spec yields bit-identical output regardless of per-tensor
// scheduling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "growmerge/checkpoint.hpp"
#include "growmerge/parallel.hpp"
#include "growmerge/rng.hpp"
#include "growmerge/tensor.hpp"

namespace growmerge {

enum class MergeMethod { Linear, TaskArithmetic, Ties, DareTies, MultiSlerp };
enum class MergeSpace { RawWeights, TaskVectors };

inline std::string_view merge_method_name(MergeMethod m) {
    switch (m) {
        case MergeMethod::Linear: return "linear";
        case MergeMethod::TaskArithmetic: return "task_arithmetic";
        case MergeMethod::Ties: return "ties";
        case MergeMethod::DareTies: return "dare_ties";
        case MergeMethod::MultiSlerp: return "multislerp";
    }
    return "?";
}

inline MergeMethod merge_method_from_name(std::string_view s) {
    if (s == "linear") return MergeMethod::Linear;
    if (s == "task_arithmetic") return MergeMethod::TaskArithmetic;
    if (s == "ties") return MergeMethod::Ties;
    if (s == "dare_ties") return MergeMethod::DareTies;
    if (s == "multislerp") return MergeMethod::MultiSlerp;
    throw ContractError("unknown merge method \"" + std::string(s) + "\"");
}

struct MergeSpec {
    MergeMethod method = MergeMethod::Linear;
    std::vector<double> weights;  // empty means equal weighting
    double lambda = 1.0;
    double density = 0.5;
    double drop_prob = 0.1;
    std::uint64_t seed = 0;
    MergeSpace space = MergeSpace::RawWeights;  // multislerp only

    nlohmann::ordered_json to_json() const {
        return nlohmann::ordered_json{
            {"method", std::string(merge_method_name(method))},
            {"weights", weights},
            {"lambda", lambda},
            {"density", density},
            {"drop_prob", drop_prob},
            {"seed", seed},
            {"space", space == MergeSpace::RawWeights ? "raw_weights" : "task_vectors"},
        };
    }
};

// Elementwise difference against a base checkpoint.
struct TaskVector {
    std::map<std::string, Tensor> deltas;
    std::string base_digest;
};

namespace detail {

inline void check_pair_aligned(const Checkpoint& a, const Checkpoint& b, std::size_t index) {
    if (!(a.config == b.config))
        throw ContractError("checkpoint " + std::to_string(index) +
                            " has a different model config");
    for (const auto& [name, t] : a.tensors) {
        auto it = b.tensors.find(name);
        if (it == b.tensors.end())
            throw ContractError("checkpoint " + std::to_string(index) +
                                " is missing tensor \"" + name + "\"");
        if (!t.same_layout(it->second))
            throw ContractError("tensor \"" + name + "\" has mismatched shape or dtype in "
                                "checkpoint " + std::to_string(index));
    }
    if (a.tensors.size() != b.tensors.size())
        for (const auto& [name, t] : b.tensors)
            if (!a.has(name))
                throw ContractError("checkpoint " + std::to_string(index) +
                                    " has extra tensor \"" + name + "\"");
}

inline std::vector<double> normalized_weights(std::vector<double> w, std::size_t k) {
    if (w.empty()) w.assign(k, 1.0);
    if (w.size() != k)
        throw ContractError("expected " + std::to_string(k) + " weights, got " +
                            std::to_string(w.size()));
    double sum = 0.0;
    for (double v : w) {
        if (v < 0.0) throw ContractError("merge weights must be non-negative");
        sum += v;
    }
    if (sum == 0.0) throw ContractError("merge weights must not all be zero");
    for (double& v : w) v /= sum;
    return w;
}

inline int sign_of(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

// TIES trim: keep the ceil(density*numel) largest-magnitude entries, zero the
// rest. Magnitude ties break toward the lower flat index.
inline void trim_to_density(std::vector<double>& delta, double density) {
    const std::size_t numel = delta.size();
    if (numel == 0 || density >= 1.0) return;
    auto keep = static_cast<std::size_t>(
        std::ceil(density * static_cast<double>(numel)));
    keep = std::min(keep, numel);
    if (keep == numel) return;
    std::vector<std::size_t> order(numel);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double ma = std::abs(delta[a]), mb = std::abs(delta[b]);
        if (ma != mb) return ma > mb;
        return a < b;
    });
    std::vector<double> trimmed(numel, 0.0);
    for (std::size_t i = 0; i < keep; ++i) trimmed[order[i]] = delta[order[i]];
    delta = std::move(trimmed);
}

// Elect a per-element sign from the weighted deltas, then average the entries
// that agree with it. Deltas are expected to be trimmed/rescaled already.
inline std::vector<double> elect_and_merge(const std::vector<std::vector<double>>& deltas,
                                           const std::vector<double>& w_hat) {
    const std::size_t numel = deltas.empty() ? 0 : deltas[0].size();
    std::vector<double> merged(numel, 0.0);
    for (std::size_t e = 0; e < numel; ++e) {
        double weighted_sum = 0.0;
        for (std::size_t m = 0; m < deltas.size(); ++m)
            weighted_sum += w_hat[m] * deltas[m][e];
        const int elected = sign_of(weighted_sum);
        if (elected == 0) continue;
        double num = 0.0, den = 0.0;
        for (std::size_t m = 0; m < deltas.size(); ++m) {
            if (sign_of(deltas[m][e]) == elected) {
                num += w_hat[m] * deltas[m][e];
                den += w_hat[m];
            }
        }
        if (den > 0.0) merged[e] = num / den;
    }
    return merged;
}

// Drop probabilities too close to 1 make 1/(1-p) numerically meaningless in
// the f32 interchange dtype.
inline constexpr double kMinKeepProb = 1e-5;

template <class PerTensor>
Checkpoint map_tensors(const Checkpoint& proto, PerTensor&& fn) {
    std::vector<std::pair<std::string, const Tensor*>> items;
    items.reserve(proto.tensors.size());
    for (const auto& [name, t] : proto.tensors) items.emplace_back(name, &t);
    std::vector<Tensor> results(items.size());
    parallel_for(items.size(), [&](std::size_t i) {
        results[i] = fn(items[i].first, *items[i].second);
        require_finite(results[i], "merge(" + items[i].first + ")");
    });
    Checkpoint out;
    out.config = proto.config;
    for (std::size_t i = 0; i < items.size(); ++i)
        out.tensors.emplace(items[i].first, std::move(results[i]));
    return out;
}

}  // namespace detail

inline TaskVector make_task_vector(const Checkpoint& base, const Checkpoint& model) {
    detail::check_pair_aligned(base, model, 1);
    TaskVector tv;
    tv.base_digest = checkpoint_digest(base);
    for (const auto& [name, t] : base.tensors) {
        const auto a = t.to_doubles();
        const auto b = model.at(name).to_doubles();
        std::vector<double> delta(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) delta[i] = b[i] - a[i];
        tv.deltas.emplace(name, Tensor::from_doubles(t.dtype(), t.shape(), delta));
    }
    return tv;
}

// Weighted average of raw weights: sum_i w_hat_i * theta_i.
inline Checkpoint linear_merge(const std::vector<Checkpoint>& ckpts,
                               const std::vector<double>& weights) {
    if (ckpts.size() < 2) throw ContractError("linear_merge requires at least 2 checkpoints");
    for (std::size_t i = 1; i < ckpts.size(); ++i)
        detail::check_pair_aligned(ckpts[0], ckpts[i], i);
    const auto w_hat = detail::normalized_weights(weights, ckpts.size());
    return detail::map_tensors(ckpts[0], [&](const std::string& name, const Tensor& t0) {
        std::vector<double> acc(t0.numel(), 0.0);
        for (std::size_t m = 0; m < ckpts.size(); ++m) {
            const auto v = ckpts[m].at(name).to_doubles();
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w_hat[m] * v[i];
        }
        return Tensor::from_doubles(t0.dtype(), t0.shape(), acc);
    });
}

// theta = base + lambda * sum_i w_hat_i * (theta_i - base).
inline Checkpoint task_arithmetic(const Checkpoint& base, const std::vector<Checkpoint>& ckpts,
                                  const std::vector<double>& weights, double lambda) {
    if (ckpts.empty()) throw ContractError("task_arithmetic requires at least 1 checkpoint");
    for (std::size_t i = 0; i < ckpts.size(); ++i)
        detail::check_pair_aligned(base, ckpts[i], i);
    const auto w_hat = detail::normalized_weights(weights, ckpts.size());
    return detail::map_tensors(base, [&](const std::string& name, const Tensor& tb) {
        const auto b = tb.to_doubles();
        std::vector<double> acc(b.size(), 0.0);
        for (std::size_t m = 0; m < ckpts.size(); ++m) {
            const auto v = ckpts[m].at(name).to_doubles();
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w_hat[m] * (v[i] - b[i]);
        }
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = b[i] + lambda * acc[i];
        return Tensor::from_doubles(tb.dtype(), tb.shape(), acc);
    });
}

namespace detail {

// Shared TIES pipeline; when drop_prob > 0 the deltas are DARE-rescaled first.
// Dropout streams are keyed by (seed, model digest, tensor name) so permuting
// the model list permutes the masks alongside.
inline Checkpoint ties_like_merge(const Checkpoint& base, const std::vector<Checkpoint>& ckpts,
                                  const std::vector<double>& weights, double density,
                                  double drop_prob, std::uint64_t seed, double lambda,
                                  bool dare) {
    if (ckpts.empty()) throw ContractError("ties merge requires at least 1 checkpoint");
    if (!(density > 0.0) || density > 1.0)
        throw ContractError("density must lie in (0, 1]");
    if (dare) {
        if (drop_prob < 0.0 || drop_prob >= 1.0)
            throw ContractError("drop probability must lie in [0, 1)");
        if (1.0 - drop_prob < kMinKeepProb)
            throw ContractError("drop probability too close to 1: 1/(1-p) is not reliably "
                                "representable in the interchange dtype");
    }
    for (std::size_t i = 0; i < ckpts.size(); ++i)
        check_pair_aligned(base, ckpts[i], i);
    const auto w_hat = normalized_weights(weights, ckpts.size());

    std::vector<std::uint64_t> model_keys(ckpts.size());
    if (dare)
        for (std::size_t m = 0; m < ckpts.size(); ++m)
            model_keys[m] = fnv1a64(checkpoint_digest(ckpts[m]));

    return map_tensors(base, [&](const std::string& name, const Tensor& tb) {
        const auto b = tb.to_doubles();
        std::vector<std::vector<double>> deltas(ckpts.size());
        for (std::size_t m = 0; m < ckpts.size(); ++m) {
            const auto v = ckpts[m].at(name).to_doubles();
            auto& delta = deltas[m];
            delta.resize(b.size());
            for (std::size_t i = 0; i < b.size(); ++i) delta[i] = v[i] - b[i];
            if (dare) {
                Rng rng = Rng::stream(seed, model_keys[m], fnv1a64(name));
                const double rescale = 1.0 / (1.0 - drop_prob);
                for (double& d : delta)
                    d = rng.uniform01() < drop_prob ? 0.0 : d * rescale;
            }
            trim_to_density(delta, density);
        }
        const auto merged = elect_and_merge(deltas, w_hat);
        std::vector<double> out(b.size());
        for (std::size_t i = 0; i < b.size(); ++i) out[i] = b[i] + lambda * merged[i];
        return Tensor::from_doubles(tb.dtype(), tb.shape(), out);
    });
}

}  // namespace detail

inline Checkpoint ties_merge(const Checkpoint& base, const std::vector<Checkpoint>& ckpts,
                             const std::vector<double>& weights, double density,
                             double lambda) {
    return detail::ties_like_merge(base, ckpts, weights, density, 0.0, 0, lambda, false);
}

inline Checkpoint dare_ties(const Checkpoint& base, const std::vector<Checkpoint>& ckpts,
                            const std::vector<double>& weights, double density,
                            double drop_prob, std::uint64_t seed, double lambda) {
    return detail::ties_like_merge(base, ckpts, weights, density, drop_prob, seed, lambda,
                                   true);
}

// Normalizes each flattened input to unit norm, averages the directions, and
// re-scales by the weighted mean of the input norms. Near-cancelling
// directions fall back to linear averaging for that tensor; fallbacks are
// recorded in metadata key "multislerp_fallbacks".
inline Checkpoint multislerp(const std::vector<Checkpoint>& inputs,
                             const std::vector<double>& weights, MergeSpace space,
                             const Checkpoint* base) {
    if (inputs.size() < 2) throw ContractError("multislerp requires at least 2 checkpoints");
    if (space == MergeSpace::TaskVectors && base == nullptr)
        throw ContractError("multislerp in task_vectors space requires a base checkpoint");
    for (std::size_t i = 1; i < inputs.size(); ++i)
        detail::check_pair_aligned(inputs[0], inputs[i], i);
    if (base) detail::check_pair_aligned(inputs[0], *base, 0);
    const auto w_hat = detail::normalized_weights(weights, inputs.size());

    std::vector<std::string> fallbacks;
    std::mutex fallback_mu;

    Checkpoint out = detail::map_tensors(
        inputs[0], [&](const std::string& name, const Tensor& t0) {
            const std::size_t numel = t0.numel();
            if (numel == 0) return t0;
            std::vector<double> base_vals;
            if (space == MergeSpace::TaskVectors) base_vals = base->at(name).to_doubles();

            std::vector<std::vector<double>> vs(inputs.size());
            std::vector<double> norms(inputs.size());
            for (std::size_t m = 0; m < inputs.size(); ++m) {
                vs[m] = inputs[m].at(name).to_doubles();
                if (space == MergeSpace::TaskVectors)
                    for (std::size_t i = 0; i < numel; ++i) vs[m][i] -= base_vals[i];
                double sq = 0.0;
                for (double v : vs[m]) sq += v * v;
                norms[m] = std::sqrt(sq);
                if (norms[m] == 0.0)
                    throw ContractError("zero-norm tensor \"" + name + "\" in multislerp input " +
                                        std::to_string(m));
            }

            std::vector<double> u(numel, 0.0);
            double norm_mix = 0.0;
            for (std::size_t m = 0; m < inputs.size(); ++m) {
                const double s = w_hat[m] / norms[m];
                for (std::size_t i = 0; i < numel; ++i) u[i] += s * vs[m][i];
                norm_mix += w_hat[m] * norms[m];
            }
            double u_norm_sq = 0.0;
            for (double v : u) u_norm_sq += v * v;
            const double u_norm = std::sqrt(u_norm_sq);

            std::vector<double> result(numel, 0.0);
            if (u_norm < 1e-8) {
                // Directions cancel; spherical scaling is undefined here.
                for (std::size_t m = 0; m < inputs.size(); ++m)
                    for (std::size_t i = 0; i < numel; ++i)
                        result[i] += w_hat[m] * vs[m][i];
                std::lock_guard<std::mutex> lock(fallback_mu);
                fallbacks.push_back(name);
            } else {
                const double scale = norm_mix / u_norm;
                for (std::size_t i = 0; i < numel; ++i) result[i] = u[i] * scale;
            }
            if (space == MergeSpace::TaskVectors)
                for (std::size_t i = 0; i < numel; ++i) result[i] += base_vals[i];
            return Tensor::from_doubles(t0.dtype(), t0.shape(), result);
        });

    if (!fallbacks.empty()) {
        std::sort(fallbacks.begin(), fallbacks.end());
        std::string joined;
        for (const auto& f : fallbacks) {
            if (!joined.empty()) joined += ",";
            joined += f;
        }
        out.metadata["multislerp_fallbacks"] = joined;
    }
    return out;
}

// Dispatch on spec.method; the merge spec is recorded in output metadata.
inline Checkpoint merge(const MergeSpec& spec, const Checkpoint* base,
                        const std::vector<Checkpoint>& ckpts) {
    Checkpoint out;
    switch (spec.method) {
        case MergeMethod::Linear:
            out = linear_merge(ckpts, spec.weights);
            break;
        case MergeMethod::TaskArithmetic:
            if (!base)
                throw ContractError("task_arithmetic requires a base checkpoint (--base)");
            out = task_arithmetic(*base, ckpts, spec.weights, spec.lambda);
            break;
        case MergeMethod::Ties:
            if (!base) throw ContractError("ties requires a base checkpoint (--base)");
            out = ties_merge(*base, ckpts, spec.weights, spec.density, spec.lambda);
            break;
        case MergeMethod::DareTies:
            if (!base) throw ContractError("dare_ties requires a base checkpoint (--base)");
            out = dare_ties(*base, ckpts, spec.weights, spec.density, spec.drop_prob,
                            spec.seed, spec.lambda);
            break;
        case MergeMethod::MultiSlerp:
            out = multislerp(ckpts, spec.weights, spec.space, base);
            break;
    }
    out.metadata["merge_spec"] = spec.to_json().dump();
    return out;
}

// Lexicographically ordered r-element index subsets of {0..k-1}; used to
// enumerate pair/triple/... merge sweeps deterministically.
inline std::vector<std::vector<std::size_t>> index_combinations(std::size_t k, std::size_t r) {
    std::vector<std::vector<std::size_t>> out;
    if (r > k) return out;
    if (r == 0) return {{}};
    std::vector<std::size_t> idx(r);
    std::iota(idx.begin(), idx.end(), 0);
    while (true) {
        out.push_back(idx);
        std::size_t i = r;
        while (i > 0) {
            --i;
            if (idx[i] != i + k - r) break;
            if (i == 0) return out;
        }
        ++idx[i];
        for (std::size_t j = i + 1; j < r; ++j) idx[j] = idx[j - 1] + 1;
    }
}

}  // namespace growmerge
