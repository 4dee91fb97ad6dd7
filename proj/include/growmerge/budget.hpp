// SPDX-License-Identifier: Apache-2.0
#pragma once

// FLOP accounting and planning: cumulative training cost (6*N*D plus the
// inherited base-model cost), compute-matched checkpoint pairing between two
// runs, UniMax-style multilingual budget allocation with an epoch cap, a
// modified variant that pins selected languages and reassigns the freed
// budget to one overflow language, and linear replay-fraction scaling.
// All planners are pure and deterministic.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "growmerge/tensor.hpp"

namespace growmerge {

enum class BudgetUnits { Tokens, Characters };

inline std::string_view budget_units_name(BudgetUnits u) {
    return u == BudgetUnits::Tokens ? "tokens" : "characters";
}

inline BudgetUnits budget_units_from_name(std::string_view s) {
    if (s == "tokens") return BudgetUnits::Tokens;
    if (s == "characters") return BudgetUnits::Characters;
    throw ContractError("unknown budget units \"" + std::string(s) + "\"");
}

struct CheckpointMilestone {
    std::string label;
    std::uint64_t cumulative_tokens = 0;
};

// One training run: parameter count, FLOPs inherited from base pretraining,
// and the token milestones of its saved checkpoints.
struct RunLedger {
    std::string run_id;
    std::uint64_t param_count = 0;
    double base_cost = 0.0;
    std::vector<CheckpointMilestone> checkpoints;

    void validate() const {
        if (checkpoints.empty())
            throw ContractError("ledger \"" + run_id + "\" has no checkpoints");
        if (base_cost < 0.0)
            throw ContractError("ledger \"" + run_id + "\" has negative base_cost");
        for (std::size_t i = 1; i < checkpoints.size(); ++i)
            if (checkpoints[i].cumulative_tokens <= checkpoints[i - 1].cumulative_tokens)
                throw ContractError("ledger \"" + run_id +
                                    "\": cumulative_tokens must be strictly increasing");
    }

    static RunLedger from_json(const nlohmann::json& j) {
        RunLedger r;
        r.run_id = j.at("run_id").get<std::string>();
        r.param_count = j.at("param_count").get<std::uint64_t>();
        r.base_cost = j.value("base_cost", 0.0);
        for (const auto& c : j.at("checkpoints")) {
            r.checkpoints.push_back(
                {c.at("label").get<std::string>(),
                 c.at("cumulative_tokens").get<std::uint64_t>()});
        }
        return r;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json cps = nlohmann::ordered_json::array();
        for (const auto& c : checkpoints)
            cps.push_back({{"label", c.label}, {"cumulative_tokens", c.cumulative_tokens}});
        return {{"run_id", run_id},
                {"param_count", param_count},
                {"base_cost", base_cost},
                {"checkpoints", cps}};
    }
};

// Standard dense-transformer training cost estimate.
inline double train_flops(std::uint64_t params, std::uint64_t tokens) {
    return 6.0 * static_cast<double>(params) * static_cast<double>(tokens);
}

inline double cumulative_flops(const RunLedger& ledger, std::string_view label) {
    ledger.validate();
    for (const auto& c : ledger.checkpoints)
        if (c.label == label)
            return ledger.base_cost + train_flops(ledger.param_count, c.cumulative_tokens);
    throw ContractError("ledger \"" + ledger.run_id + "\" has no checkpoint labeled \"" +
                        std::string(label) + "\"");
}

struct MatchResult {
    std::string anchor_run;
    std::string anchor_checkpoint;  // always the anchor run's final checkpoint
    std::string matched_run;
    std::string matched_checkpoint;
    double anchor_cost = 0.0;
    double matched_cost = 0.0;
    double abs_diff = 0.0;
    double rel_diff_percent = 0.0;
    bool feasible = true;

    nlohmann::ordered_json to_json() const {
        return {{"anchor_run", anchor_run},
                {"anchor_checkpoint", anchor_checkpoint},
                {"matched_run", matched_run},
                {"matched_checkpoint", matched_checkpoint},
                {"anchor_cost", anchor_cost},
                {"matched_cost", matched_cost},
                {"abs_diff", abs_diff},
                {"rel_diff_percent", rel_diff_percent},
                {"feasible", feasible}};
    }
};

// Anchor on the run whose final checkpoint is cheaper and find the other
// run's checkpoint with the closest cumulative cost (cost ties resolve to the
// earlier checkpoint). The pairing is infeasible when the other run's
// cheapest checkpoint already costs more than twice the anchor total, or when
// it never reaches the anchor cost within its range.
inline MatchResult match_checkpoints(const RunLedger& run_a, const RunLedger& run_b) {
    run_a.validate();
    run_b.validate();

    auto total = [](const RunLedger& r) {
        return r.base_cost + train_flops(r.param_count, r.checkpoints.back().cumulative_tokens);
    };
    const double total_a = total(run_a);
    const double total_b = total(run_b);

    // Deterministic and symmetric in argument order.
    const bool a_is_anchor =
        total_a < total_b || (total_a == total_b && run_a.run_id <= run_b.run_id);
    const RunLedger& anchor = a_is_anchor ? run_a : run_b;
    const RunLedger& other = a_is_anchor ? run_b : run_a;
    const double anchor_total = a_is_anchor ? total_a : total_b;

    MatchResult res;
    res.anchor_run = anchor.run_id;
    res.anchor_checkpoint = anchor.checkpoints.back().label;
    res.anchor_cost = anchor_total;
    res.matched_run = other.run_id;

    double best_diff = 0.0;
    double cheapest = 0.0, priciest = 0.0;
    for (std::size_t i = 0; i < other.checkpoints.size(); ++i) {
        const double cost =
            other.base_cost + train_flops(other.param_count, other.checkpoints[i].cumulative_tokens);
        const double diff = std::abs(cost - anchor_total);
        if (i == 0 || diff < best_diff) {
            best_diff = diff;
            res.matched_checkpoint = other.checkpoints[i].label;
            res.matched_cost = cost;
        }
        cheapest = i == 0 ? cost : std::min(cheapest, cost);
        priciest = std::max(priciest, cost);
    }
    res.abs_diff = best_diff;
    res.rel_diff_percent = 100.0 * best_diff / std::max(total_a, total_b);
    res.feasible = !(cheapest > 2.0 * anchor_total || priciest < anchor_total);
    return res;
}

// Per-language allocation produced by the planners. allocation = epochs * size.
struct LanguageBudget {
    std::string language;
    double size = 0.0;
    double epochs = 0.0;
    double allocation = 0.0;
};

struct UnimaxPlan {
    BudgetUnits units = BudgetUnits::Tokens;
    std::vector<LanguageBudget> entries;  // in allocation order (ascending size)
    double surplus = 0.0;
    bool warning = false;

    double allocation_for(std::string_view language) const {
        for (const auto& e : entries)
            if (e.language == language) return e.allocation;
        throw ContractError("no allocation for language \"" + std::string(language) + "\"");
    }

    double epochs_for(std::string_view language) const {
        for (const auto& e : entries)
            if (e.language == language) return e.epochs;
        throw ContractError("no allocation for language \"" + std::string(language) + "\"");
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json entries_json = nlohmann::ordered_json::array();
        for (const auto& e : entries)
            entries_json.push_back({{"language", e.language},
                                    {"size", e.size},
                                    {"epochs", e.epochs},
                                    {"allocation", e.allocation}});
        return {{"units", std::string(budget_units_name(units))},
                {"entries", entries_json},
                {"surplus", surplus},
                {"warning", warning}};
    }
};

// Standard UniMax: visit languages in ascending size; each receives
// min(max_epochs * size, remaining_budget / remaining_language_count).
inline UnimaxPlan unimax_plan(const std::map<std::string, double>& sizes, double budget,
                              double max_epochs, BudgetUnits units = BudgetUnits::Tokens) {
    if (!(budget > 0.0)) throw ContractError("budget must be positive");
    if (!(max_epochs > 0.0)) throw ContractError("max_epochs must be positive");
    if (sizes.empty()) throw ContractError("no languages given");
    for (const auto& [lang, size] : sizes)
        if (!(size > 0.0))
            throw ContractError("language \"" + lang + "\" must have positive size");

    std::vector<std::pair<std::string, double>> order(sizes.begin(), sizes.end());
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second < b.second;
        return a.first < b.first;
    });

    UnimaxPlan plan;
    plan.units = units;
    double remaining = budget;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto& [lang, size] = order[i];
        const double fair_share = remaining / static_cast<double>(order.size() - i);
        const double alloc = std::min(max_epochs * size, fair_share);
        plan.entries.push_back({lang, size, alloc / size, alloc});
        remaining -= alloc;
    }
    plan.surplus = budget;
    for (const auto& e : plan.entries) plan.surplus -= e.allocation;
    return plan;
}

// UniMax, then clamp the pinned languages to exact epoch counts and hand the
// freed budget to one overflow language (still subject to the epoch cap).
inline UnimaxPlan modified_unimax(const std::map<std::string, double>& sizes, double budget,
                                  double max_epochs,
                                  const std::map<std::string, double>& pinned,
                                  const std::string& overflow_target,
                                  BudgetUnits units = BudgetUnits::Tokens) {
    for (const auto& [lang, epochs] : pinned) {
        if (!sizes.count(lang))
            throw ContractError("pinned language \"" + lang + "\" is not in the size table");
        if (epochs < 0.0) throw ContractError("pinned epochs must be non-negative");
    }
    if (!sizes.count(overflow_target))
        throw ContractError("overflow target \"" + overflow_target +
                            "\" is not in the size table");
    if (pinned.count(overflow_target))
        throw ContractError("overflow target \"" + overflow_target + "\" must not be pinned");

    UnimaxPlan plan = unimax_plan(sizes, budget, max_epochs, units);
    if (pinned.empty()) return plan;

    double freed = 0.0;
    for (auto& e : plan.entries) {
        auto it = pinned.find(e.language);
        if (it == pinned.end()) continue;
        const double pinned_alloc = it->second * e.size;
        freed += e.allocation - pinned_alloc;
        e.epochs = it->second;
        e.allocation = pinned_alloc;
    }
    for (auto& e : plan.entries) {
        if (e.language != overflow_target) continue;
        const double cap = max_epochs * e.size;
        const double raw = e.allocation + freed;
        e.allocation = std::clamp(raw, 0.0, cap);
        e.epochs = e.allocation / e.size;
        if (raw < 0.0) plan.warning = true;  // pins consumed the whole budget
    }
    plan.surplus = budget;
    for (const auto& e : plan.entries) plan.surplus -= e.allocation;
    if (plan.surplus < -1e-9 * budget) plan.warning = true;  // pins overshot the budget
    return plan;
}

struct ReplayFractions {
    double english_frac = 0.0;
    double code_frac = 0.0;
};

// Replay fractions scale linearly with document count relative to the anchor
// language, which keeps the anchor at its stated fractions exactly.
inline std::map<std::string, ReplayFractions> replay_plan(
    const std::map<std::string, double>& doc_counts, const std::string& anchor_language,
    ReplayFractions anchor_fracs) {
    auto it = doc_counts.find(anchor_language);
    if (it == doc_counts.end())
        throw ContractError("anchor language \"" + anchor_language +
                            "\" is not in the document counts");
    if (!(it->second > 0.0))
        throw ContractError("anchor language \"" + anchor_language +
                            "\" must have a positive document count");
    std::map<std::string, ReplayFractions> out;
    for (const auto& [lang, count] : doc_counts) {
        const double ratio = count / it->second;
        out[lang] = {anchor_fracs.english_frac * ratio, anchor_fracs.code_frac * ratio};
    }
    return out;
}

}  // namespace growmerge
