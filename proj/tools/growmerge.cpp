// SPDX-License-Identifier: Apache-2.0
//
// growmerge CLI: checkpoint cloning, merging, FLOP matching, data budgeting
// and minimal-pair evaluation as reproducible pipeline steps. Every command
// is deterministic: identical argv and input files give byte-identical
// outputs. Exit codes: 0 success, 1 contract error, 2 I/O or corruption.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "growmerge/budget.hpp"
#include "growmerge/checkpoint.hpp"
#include "growmerge/eval.hpp"
#include "growmerge/hyperclone.hpp"
#include "growmerge/merge.hpp"
#include "growmerge/model.hpp"
#include "growmerge/parallel.hpp"
#include "growmerge/safetensors.hpp"
#include "growmerge/tensor.hpp"

namespace gm = growmerge;

namespace {

// JSON config files: {"clone": {"factor": 2}, "json": true}. Nested objects
// scope values to subcommands; command-line flags override the file.
class ConfigJson : public CLI::Config {
public:
    std::string to_config(const CLI::App*, bool, bool, std::string) const override {
        return "{}";
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        nlohmann::json j;
        try {
            input >> j;
        } catch (const nlohmann::json::exception& e) {
            throw CLI::FileError(std::string("config is not valid JSON: ") + e.what());
        }
        return walk(j, "", {});
    }

private:
    std::vector<CLI::ConfigItem> walk(const nlohmann::json& j, const std::string& name,
                                      std::vector<std::string> parents) const {
        std::vector<CLI::ConfigItem> results;
        if (j.is_object()) {
            if (!name.empty()) parents.push_back(name);
            for (const auto& [key, value] : j.items()) {
                auto sub = walk(value, key, parents);
                results.insert(results.end(), sub.begin(), sub.end());
            }
            return results;
        }
        if (name.empty())
            throw CLI::ConversionError("top-level config values must be objects");
        CLI::ConfigItem item;
        item.name = name;
        item.parents = std::move(parents);
        if (j.is_boolean()) {
            item.inputs = {j.get<bool>() ? "true" : "false"};
        } else if (j.is_string()) {
            item.inputs = {j.get<std::string>()};
        } else if (j.is_number() || j.is_array()) {
            auto render = [](const nlohmann::json& v) {
                return v.is_string() ? v.get<std::string>() : v.dump();
            };
            if (j.is_array())
                for (const auto& v : j) item.inputs.push_back(render(v));
            else
                item.inputs = {render(j)};
        } else {
            throw CLI::ConversionError("unsupported config value for key \"" + name + "\"");
        }
        results.push_back(std::move(item));
        return results;
    }
};

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw gm::IoError("cannot open \"" + path + "\" for writing");
    out << content;
    if (!out) throw gm::IoError("write failed for \"" + path + "\"");
}

// Print to stdout or, when --out is given, write the file.
void emit(const std::string& out_path, const std::string& content) {
    if (out_path.empty())
        std::cout << content;
    else
        write_text(out_path, content);
}

std::string path_stem(const std::string& path) {
    return std::filesystem::path(path).stem().string();
}

nlohmann::json parse_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw gm::IoError("cannot open \"" + path + "\"");
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw gm::IoError(path + ": invalid JSON: " + e.what());
    }
}

// Size tables: either a flat {"lang": size} map or
// {"units": "tokens"|"characters", "sizes": {...}}.
std::pair<std::map<std::string, double>, gm::BudgetUnits> parse_sizes(
    const std::string& path) {
    const nlohmann::json j = parse_json_file(path);
    gm::BudgetUnits units = gm::BudgetUnits::Tokens;
    const nlohmann::json* table = &j;
    if (j.is_object() && j.contains("sizes")) {
        table = &j.at("sizes");
        if (j.contains("units"))
            units = gm::budget_units_from_name(j.at("units").get<std::string>());
    }
    std::map<std::string, double> sizes;
    for (const auto& [lang, v] : table->items()) sizes[lang] = v.get<double>();
    return {sizes, units};
}

std::vector<gm::TokenSequence> read_prompts(const std::string& path, std::size_t vocab) {
    std::vector<gm::TokenSequence> prompts;
    std::ifstream in(path);
    if (!in) throw gm::IoError("cannot open \"" + path + "\"");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw gm::IoError(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
        }
        if (j.contains("tokens")) {
            prompts.push_back(j.at("tokens").get<gm::TokenSequence>());
        } else if (j.contains("text")) {
            if (vocab < gm::kByteVocabSize)
                throw gm::ContractError("text prompts need a byte-vocabulary model "
                                        "(vocab_size >= 257)");
            prompts.push_back(gm::byte_tokenize(j.at("text").get<std::string>()));
        } else {
            throw gm::IoError(path + ":" + std::to_string(lineno) +
                              ": expected a \"tokens\" or \"text\" field");
        }
    }
    return prompts;
}

std::string render_plan_text(const gm::UnimaxPlan& plan) {
    std::ostringstream out;
    out << "units: " << gm::budget_units_name(plan.units) << "\n";
    for (const auto& e : plan.entries) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-8s size=%.6g epochs=%.4f allocation=%.6g\n",
                      e.language.c_str(), e.size, e.epochs, e.allocation);
        out << line;
    }
    char tail[96];
    std::snprintf(tail, sizeof(tail), "surplus=%.6g%s\n", plan.surplus,
                  plan.warning ? " (warning: budget constraints clipped the plan)" : "");
    out << tail;
    return out.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"growmerge: function-preserving transformer upscaling, checkpoint "
                 "merging, FLOP-matched comparison, multilingual data budgeting and "
                 "minimal-pair evaluation"};
    app.require_subcommand(1);
    app.config_formatter(std::make_shared<ConfigJson>());
    app.set_config("--config", "", "JSON config file; command-line flags override it");

    bool json_output = false;
    std::size_t threads = 0;
    app.add_flag("--json", json_output, "machine-readable (JSON) output");
    app.add_option("--threads", threads,
                   "worker thread cap (default: GROWMERGE_THREADS or hardware)");

    std::function<void()> action;

    // ---- init ----
    auto* init_cmd =
        app.add_subcommand("init", "create a seeded random checkpoint from a model config");
    {
        struct InitOpts {
            std::string config_path, out_path, dtype = "f32";
            std::uint64_t seed = 0;
            double init_std = 0.02;
        };
        auto opts = std::make_shared<InitOpts>();
        init_cmd->add_option("--model-config", opts->config_path, "model config JSON")
            ->required();
        init_cmd->add_option("--seed", opts->seed, "RNG seed")->required();
        init_cmd->add_option("--dtype", opts->dtype, "f32 or f64")
            ->check(CLI::IsMember({"f32", "f64"}));
        init_cmd->add_option("--init-std", opts->init_std, "weight init stddev");
        init_cmd->add_option("out", opts->out_path, "output checkpoint")->required();
        init_cmd->callback([&action, opts] {
            action = [opts] {
                const auto cfg = gm::ModelConfig::from_json(parse_json_file(opts->config_path));
                const gm::DType dt = opts->dtype == "f64" ? gm::DType::F64 : gm::DType::F32;
                gm::save_checkpoint(gm::random_checkpoint(cfg, opts->seed, dt, opts->init_std),
                                    opts->out_path);
            };
        });
    }

    // ---- clone ----
    auto* clone_cmd = app.add_subcommand("clone", "function-preserving n-fold width clone");
    {
        struct CloneOpts {
            std::size_t factor = 1;
            double noise = 0.0;
            std::uint64_t seed = 0;
            bool seed_given = false;
            std::string in_path, out_path;
        };
        auto opts = std::make_shared<CloneOpts>();
        clone_cmd->add_option("--factor", opts->factor, "width multiplier n >= 1")->required();
        clone_cmd->add_option("--noise", opts->noise, "symmetry-breaking noise sigma");
        clone_cmd->add_option("--seed", opts->seed, "noise RNG seed")
            ->each([opts](const std::string&) { opts->seed_given = true; });
        clone_cmd->add_option("in", opts->in_path, "source checkpoint")->required();
        clone_cmd->add_option("out", opts->out_path, "output checkpoint")->required();
        clone_cmd->callback([&action, opts] {
            action = [opts] {
                if (opts->noise > 0.0 && !opts->seed_given)
                    throw gm::ContractError("--noise > 0 requires --seed");
                gm::CloneSpec spec;
                spec.factor = opts->factor;
                spec.noise_sigma = opts->noise;
                spec.seed = opts->seed;
                gm::save_checkpoint(gm::clone_checkpoint(gm::load_checkpoint(opts->in_path),
                                                         spec),
                                    opts->out_path);
            };
        });
    }

    // ---- merge ----
    auto* merge_cmd = app.add_subcommand("merge", "merge checkpoints (last path is output)");
    {
        struct MergeOpts {
            std::string method = "linear", base_path, space = "raw_weights";
            std::vector<double> weights;
            double lambda = 1.0, density = 0.5, drop_prob = 0.1;
            std::uint64_t seed = 0;
            bool seed_given = false;
            std::vector<std::string> paths;
        };
        auto opts = std::make_shared<MergeOpts>();
        merge_cmd
            ->add_option("--method", opts->method,
                         "linear | task_arithmetic | ties | dare_ties | multislerp")
            ->check(CLI::IsMember({"linear", "task_arithmetic", "ties", "dare_ties",
                                   "multislerp"}));
        merge_cmd->add_option("--weights", opts->weights, "per-model weights (default equal)")
            ->delimiter(',');
        merge_cmd->add_option("--base", opts->base_path, "base checkpoint for delta methods");
        merge_cmd->add_option("--lambda", opts->lambda, "task-vector scale");
        merge_cmd->add_option("--density", opts->density, "TIES trim density in (0, 1]");
        merge_cmd->add_option("--drop-prob", opts->drop_prob, "DARE drop probability in [0, 1)");
        merge_cmd->add_option("--seed", opts->seed, "DARE dropout seed")
            ->each([opts](const std::string&) { opts->seed_given = true; });
        merge_cmd->add_option("--space", opts->space, "multislerp space")
            ->check(CLI::IsMember({"raw_weights", "task_vectors"}));
        merge_cmd->add_option("paths", opts->paths, "in1 in2 ... out")->required();
        merge_cmd->callback([&action, opts] {
            action = [opts] {
                if (opts->paths.size() < 2)
                    throw gm::ContractError("merge needs at least one input and one output path");
                gm::MergeSpec spec;
                spec.method = gm::merge_method_from_name(opts->method);
                spec.weights = opts->weights;
                spec.lambda = opts->lambda;
                spec.density = opts->density;
                spec.drop_prob = opts->drop_prob;
                spec.seed = opts->seed;
                spec.space = opts->space == "task_vectors" ? gm::MergeSpace::TaskVectors
                                                           : gm::MergeSpace::RawWeights;
                if (spec.method == gm::MergeMethod::DareTies && !opts->seed_given)
                    throw gm::ContractError("dare_ties requires --seed");

                std::vector<gm::Checkpoint> inputs;
                for (std::size_t i = 0; i + 1 < opts->paths.size(); ++i)
                    inputs.push_back(gm::load_checkpoint(opts->paths[i]));
                std::optional<gm::Checkpoint> base;
                if (!opts->base_path.empty()) base = gm::load_checkpoint(opts->base_path);
                const gm::Checkpoint merged =
                    gm::merge(spec, base ? &*base : nullptr, inputs);
                gm::save_checkpoint(merged, opts->paths.back());
            };
        });
    }

    // ---- flops match ----
    auto* flops_cmd = app.add_subcommand("flops", "FLOP accounting");
    auto* match_cmd =
        flops_cmd->add_subcommand("match", "compute-matched checkpoint pairing");
    {
        struct MatchOpts {
            std::string run_a, run_b, out_path;
        };
        auto opts = std::make_shared<MatchOpts>();
        match_cmd->add_option("runA", opts->run_a, "ledger JSON")->required();
        match_cmd->add_option("runB", opts->run_b, "ledger JSON")->required();
        match_cmd->add_option("--out", opts->out_path, "write result to file");
        match_cmd->callback([&action, opts, &json_output] {
            action = [opts, &json_output] {
                const auto a = gm::RunLedger::from_json(parse_json_file(opts->run_a));
                const auto b = gm::RunLedger::from_json(parse_json_file(opts->run_b));
                const gm::MatchResult res = gm::match_checkpoints(a, b);
                if (json_output) {
                    emit(opts->out_path, res.to_json().dump(2) + "\n");
                } else {
                    std::ostringstream out;
                    char buf[256];
                    std::snprintf(buf, sizeof(buf),
                                  "anchor:  %s @ %s (%.6g FLOPs)\n"
                                  "matched: %s @ %s (%.6g FLOPs)\n"
                                  "abs_diff=%.6g rel_diff=%.4f%% feasible=%s\n",
                                  res.anchor_run.c_str(), res.anchor_checkpoint.c_str(),
                                  res.anchor_cost, res.matched_run.c_str(),
                                  res.matched_checkpoint.c_str(), res.matched_cost,
                                  res.abs_diff, res.rel_diff_percent,
                                  res.feasible ? "true" : "false");
                    out << buf;
                    emit(opts->out_path, out.str());
                }
            };
        });
    }

    // ---- plan unimax / plan replay ----
    auto* plan_cmd = app.add_subcommand("plan", "data budgeting");
    auto* unimax_cmd = plan_cmd->add_subcommand(
        "unimax", "UniMax allocation with epoch cap; --pin/--overflow for the modified form");
    {
        struct UnimaxOpts {
            double budget = 0.0, cap = 6.0;
            std::vector<std::string> pins;
            std::string overflow, sizes_path, out_path;
        };
        auto opts = std::make_shared<UnimaxOpts>();
        unimax_cmd->add_option("--budget", opts->budget, "total budget")->required();
        unimax_cmd->add_option("--cap", opts->cap, "maximum epochs per language");
        unimax_cmd->add_option("--pin", opts->pins, "lang=epochs, repeatable");
        unimax_cmd->add_option("--overflow", opts->overflow,
                               "language receiving budget freed by pins");
        unimax_cmd->add_option("sizes", opts->sizes_path, "per-language size JSON")->required();
        unimax_cmd->add_option("--out", opts->out_path, "write plan to file");
        unimax_cmd->callback([&action, opts, &json_output] {
            action = [opts, &json_output] {
                const auto [sizes, units] = parse_sizes(opts->sizes_path);
                std::map<std::string, double> pinned;
                for (const auto& pin : opts->pins) {
                    const auto eq = pin.find('=');
                    if (eq == std::string::npos)
                        throw gm::ContractError("--pin expects lang=epochs, got \"" + pin +
                                                "\"");
                    pinned[pin.substr(0, eq)] = std::stod(pin.substr(eq + 1));
                }
                gm::UnimaxPlan plan;
                if (pinned.empty() && opts->overflow.empty()) {
                    plan = gm::unimax_plan(sizes, opts->budget, opts->cap, units);
                } else {
                    if (opts->overflow.empty())
                        throw gm::ContractError("--pin requires --overflow");
                    plan = gm::modified_unimax(sizes, opts->budget, opts->cap, pinned,
                                               opts->overflow, units);
                }
                emit(opts->out_path, json_output ? plan.to_json().dump(2) + "\n"
                                                 : render_plan_text(plan));
            };
        });
    }
    auto* replay_cmd =
        plan_cmd->add_subcommand("replay", "replay fractions scaled by document count");
    {
        struct ReplayOpts {
            std::string anchor, counts_path, out_path;
            double eng = 0.01, code = 0.05;
        };
        auto opts = std::make_shared<ReplayOpts>();
        replay_cmd->add_option("--anchor", opts->anchor, "anchor language")->required();
        replay_cmd->add_option("--eng", opts->eng, "anchor English replay fraction");
        replay_cmd->add_option("--code", opts->code, "anchor code replay fraction");
        replay_cmd->add_option("counts", opts->counts_path, "document counts JSON")
            ->required();
        replay_cmd->add_option("--out", opts->out_path, "write plan to file");
        replay_cmd->callback([&action, opts, &json_output] {
            action = [opts, &json_output] {
                const nlohmann::json j = parse_json_file(opts->counts_path);
                std::map<std::string, double> counts;
                for (const auto& [lang, v] : j.items()) counts[lang] = v.get<double>();
                const auto plan =
                    gm::replay_plan(counts, opts->anchor, {opts->eng, opts->code});
                if (json_output) {
                    nlohmann::ordered_json out = nlohmann::ordered_json::object();
                    for (const auto& [lang, f] : plan)
                        out[lang] = {{"english_frac", f.english_frac},
                                     {"code_frac", f.code_frac}};
                    emit(opts->out_path, out.dump(2) + "\n");
                } else {
                    std::ostringstream out;
                    for (const auto& [lang, f] : plan) {
                        char line[128];
                        std::snprintf(line, sizeof(line), "%-8s english=%.8g code=%.8g\n",
                                      lang.c_str(), f.english_frac, f.code_frac);
                        out << line;
                    }
                    emit(opts->out_path, out.str());
                }
            };
        });
    }

    // ---- eval pairs / eval ip ----
    auto* eval_cmd = app.add_subcommand("eval", "evaluation harness");
    auto* pairs_cmd = eval_cmd->add_subcommand("pairs", "minimal-pair accuracy");
    {
        struct PairsOpts {
            std::string model_path, pairs_path, model_id, out_path;
        };
        auto opts = std::make_shared<PairsOpts>();
        pairs_cmd->add_option("model", opts->model_path, "checkpoint")->required();
        pairs_cmd->add_option("pairs", opts->pairs_path, "minimal pairs JSONL")->required();
        pairs_cmd->add_option("--model-id", opts->model_id, "model id in the report");
        pairs_cmd->add_option("--out", opts->out_path, "write report to file");
        pairs_cmd->callback([&action, opts, &json_output] {
            action = [opts, &json_output] {
                const gm::Checkpoint ckpt = gm::load_checkpoint(opts->model_path);
                const auto pairs = gm::read_minimal_pairs(opts->pairs_path);
                const gm::PairScore score = gm::score_minimal_pairs(ckpt, pairs);
                const std::string model_id =
                    opts->model_id.empty() ? path_stem(opts->model_path) : opts->model_id;
                const std::string benchmark = path_stem(opts->pairs_path);
                gm::EvalReport report;
                report.rows.push_back(
                    {model_id, benchmark, "accuracy", score.accuracy, score.n_items});
                for (const auto& [tag, s] : score.per_phenomenon)
                    report.rows.push_back(
                        {model_id, benchmark + "/" + tag, "accuracy", s.accuracy, s.n_items});
                emit(opts->out_path,
                     gm::emit_report(report, json_output ? gm::ReportFormat::Json
                                                         : gm::ReportFormat::Csv));
            };
        });
    }
    auto* ip_cmd = eval_cmd->add_subcommand("ip", "Information Parity against a reference");
    {
        struct IpOpts {
            std::string ref_path, model_path, docs_path, model_id, out_path;
        };
        auto opts = std::make_shared<IpOpts>();
        ip_cmd->add_option("--ref", opts->ref_path, "reference checkpoint")->required();
        ip_cmd->add_option("model", opts->model_path, "evaluated checkpoint")->required();
        ip_cmd->add_option("docs", opts->docs_path, "parallel docs JSONL")->required();
        ip_cmd->add_option("--model-id", opts->model_id, "model id in the report");
        ip_cmd->add_option("--out", opts->out_path, "write report to file");
        ip_cmd->callback([&action, opts, &json_output] {
            action = [opts, &json_output] {
                const gm::Checkpoint eval_ckpt = gm::load_checkpoint(opts->model_path);
                const gm::Checkpoint ref_ckpt = gm::load_checkpoint(opts->ref_path);
                const auto docs = gm::read_parallel_docs(opts->docs_path);
                const double ip = gm::information_parity(eval_ckpt, ref_ckpt, docs);
                const std::string model_id =
                    opts->model_id.empty() ? path_stem(opts->model_path) : opts->model_id;
                gm::EvalReport report;
                report.rows.push_back(
                    {model_id, path_stem(opts->docs_path), "IP", ip, docs.size()});
                emit(opts->out_path,
                     gm::emit_report(report, json_output ? gm::ReportFormat::Json
                                                         : gm::ReportFormat::Csv));
            };
        });
    }

    // ---- gen pairs ----
    auto* gen_cmd = app.add_subcommand("gen", "dataset generation");
    auto* gen_pairs_cmd =
        gen_cmd->add_subcommand("pairs", "morphological minimal pairs from a lexicon");
    {
        struct GenPairsOpts {
            std::string language, lexicon_path, sentences_path, out_path;
        };
        auto opts = std::make_shared<GenPairsOpts>();
        gen_pairs_cmd->add_option("--language", opts->language, "ISO3 language tag")
            ->required();
        gen_pairs_cmd->add_option("lexicon", opts->lexicon_path, "UniMorph-style TSV")
            ->required();
        gen_pairs_cmd->add_option("sentences", opts->sentences_path, "annotated JSONL")
            ->required();
        gen_pairs_cmd->add_option("out", opts->out_path, "output pairs JSONL")->required();
        gen_pairs_cmd->callback([&action, opts] {
            action = [opts] {
                const auto lexicon = gm::read_lexicon(opts->lexicon_path);
                const auto sentences = gm::read_annotated_sentences(opts->sentences_path);
                const auto pairs =
                    gm::generate_morph_pairs(lexicon, sentences, opts->language);
                gm::write_minimal_pairs(pairs, opts->out_path);
                std::cout << "wrote " << pairs.size() << " pairs\n";
            };
        });
    }

    // ---- report ----
    auto* report_cmd =
        app.add_subcommand("report", "re-render an EvalReport JSON as csv/markdown/json");
    {
        struct ReportOpts {
            std::string format = "csv", report_path, out_path;
        };
        auto opts = std::make_shared<ReportOpts>();
        report_cmd->add_option("--format", opts->format, "csv | markdown | json")
            ->check(CLI::IsMember({"csv", "markdown", "json"}));
        report_cmd->add_option("report", opts->report_path, "EvalReport JSON")->required();
        report_cmd->add_option("--out", opts->out_path, "write result to file");
        report_cmd->callback([&action, opts] {
            action = [opts] {
                const auto report = gm::report_from_json(parse_json_file(opts->report_path));
                emit(opts->out_path,
                     gm::emit_report(report, gm::report_format_from_name(opts->format)));
            };
        });
    }

    // ---- verify ----
    auto* verify_cmd =
        app.add_subcommand("verify", "check function preservation between two checkpoints");
    {
        struct VerifyOpts {
            double tol = 1e-4;
            std::string src_path, cloned_path, prompts_path, out_path;
        };
        auto opts = std::make_shared<VerifyOpts>();
        verify_cmd->add_option("--tol", opts->tol, "max-abs logit tolerance");
        verify_cmd->add_option("src", opts->src_path, "source checkpoint")->required();
        verify_cmd->add_option("cloned", opts->cloned_path, "candidate checkpoint")
            ->required();
        verify_cmd->add_option("prompts", opts->prompts_path, "prompts JSONL")->required();
        verify_cmd->add_option("--out", opts->out_path, "write report to file");
        verify_cmd->callback([&action, opts] {
            action = [opts] {
                const gm::Checkpoint src = gm::load_checkpoint(opts->src_path);
                const gm::Checkpoint cloned = gm::load_checkpoint(opts->cloned_path);
                const auto prompts =
                    read_prompts(opts->prompts_path, src.config.vocab_size);
                const auto report = gm::verify_preservation(src, cloned, prompts, opts->tol);
                nlohmann::ordered_json j{{"max_abs_logit_diff", report.max_abs_logit_diff},
                                         {"argmax_match", report.argmax_match},
                                         {"tol", opts->tol},
                                         {"pass", report.pass}};
                emit(opts->out_path, j.dump(2) + "\n");
                if (!report.pass) throw gm::ContractError("preservation check failed");
            };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 1;
    }

    try {
        if (threads > 0) gm::set_thread_cap(threads);
        if (action) action();
        return 0;
    } catch (const gm::ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const gm::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
