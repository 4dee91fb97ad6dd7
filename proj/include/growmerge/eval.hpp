// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal-pair scoring, Information Parity, morphological minimal-pair
// generation from UniMorph-style lexicons, and tabular report emission.
//
// A pair scores 1 when nll(good) < nll(bad), 0.5 on an exact tie (so the
// uniform model sits at exactly 0.5), else 0. The comparison quantity is
// whole-sentence NLL including the BOS transition, with no length
// normalization. IP aggregates by ratio of summed NLLs, not mean of ratios.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "growmerge/checkpoint.hpp"
#include "growmerge/model.hpp"
#include "growmerge/tensor.hpp"

namespace growmerge {

struct MinimalPair {
    std::string id;
    std::string good;
    std::string bad;
    std::string phenomenon;
    std::string language;

    void validate() const {
        if (good.empty() || bad.empty())
            throw ContractError("minimal pair \"" + id + "\": sentences must be non-empty");
        if (good == bad)
            throw ContractError("minimal pair \"" + id + "\": good and bad are identical");
    }
};

struct ParallelDoc {
    std::string english;
    std::string target;
    std::string language;
};

// One inflected form with its UniMorph-style feature bundle, stored as
// attribute -> value.
struct LexiconEntry {
    std::string lemma;
    std::string form;
    std::map<std::string, std::string> features;
};

struct EvalRow {
    std::string model;
    std::string benchmark;
    std::string metric;  // "accuracy" or "IP"
    double value = 0.0;
    std::size_t n_items = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
};

struct PhenomenonScore {
    double accuracy = 0.0;
    std::size_t n_items = 0;
};

struct PairScore {
    double accuracy = 0.0;
    std::size_t n_items = 0;
    std::map<std::string, PhenomenonScore> per_phenomenon;
};

inline PairScore score_minimal_pairs(const Checkpoint& ckpt,
                                     const std::vector<MinimalPair>& pairs) {
    if (pairs.empty()) throw ContractError("score_minimal_pairs: empty pair list");
    PairScore score;
    std::map<std::string, double> tag_sum;
    std::map<std::string, std::size_t> tag_count;
    double total = 0.0;
    for (const auto& pair : pairs) {
        pair.validate();
        const double nll_good = nll(ckpt, byte_tokenize(pair.good));
        const double nll_bad = nll(ckpt, byte_tokenize(pair.bad));
        const double item = nll_good < nll_bad ? 1.0 : (nll_good == nll_bad ? 0.5 : 0.0);
        total += item;
        tag_sum[pair.phenomenon] += item;
        tag_count[pair.phenomenon] += 1;
    }
    score.n_items = pairs.size();
    score.accuracy = total / static_cast<double>(pairs.size());
    for (const auto& [tag, sum] : tag_sum)
        score.per_phenomenon[tag] = {sum / static_cast<double>(tag_count[tag]),
                                     tag_count[tag]};
    return score;
}

// IP = sum_docs nll(ref, english) / sum_docs nll(eval, target). For the
// English-forgetting reading, pass docs whose target text is the English
// text itself.
inline double information_parity(const Checkpoint& eval_ckpt, const Checkpoint& ref_ckpt,
                                 const std::vector<ParallelDoc>& docs) {
    if (docs.empty()) throw ContractError("information_parity: empty document list");
    double ref_total = 0.0, eval_total = 0.0;
    for (const auto& doc : docs) {
        if (doc.english.empty() || doc.target.empty())
            throw ContractError("information_parity: documents must be non-empty");
        ref_total += nll(ref_ckpt, byte_tokenize(doc.english));
        eval_total += nll(eval_ckpt, byte_tokenize(doc.target));
    }
    if (eval_total == 0.0)
        throw ContractError("information_parity: evaluated model has zero total NLL");
    return ref_total / eval_total;
}

// --- UniMorph feature bundles ------------------------------------------------

// Dimension lookup for common UniMorph value tags, so "SG" parses as
// Number=SG and a SG/PL swap is tagged with phenomenon "Number". Tags not in
// the table become their own attribute; explicit "Attr=Value" tokens bypass
// the table entirely.
inline const std::map<std::string, std::string>& unimorph_dimensions() {
    static const std::map<std::string, std::string> table = {
        // Part of speech
        {"N", "POS"}, {"V", "POS"}, {"ADJ", "POS"}, {"ADV", "POS"}, {"PRO", "POS"},
        {"DET", "POS"}, {"ART", "POS"}, {"AUX", "POS"}, {"ADP", "POS"}, {"CONJ", "POS"},
        {"NUM", "POS"}, {"PART", "POS"}, {"INTJ", "POS"}, {"PROPN", "POS"},
        {"V.PTCP", "POS"}, {"V.MSDR", "POS"}, {"V.CVB", "POS"}, {"V.NFIN", "POS"},
        // Number
        {"SG", "Number"}, {"PL", "Number"}, {"DU", "Number"}, {"PAUC", "Number"},
        // Case
        {"NOM", "Case"}, {"ACC", "Case"}, {"DAT", "Case"}, {"GEN", "Case"},
        {"ERG", "Case"}, {"ABS", "Case"}, {"INS", "Case"}, {"LOC", "Case"},
        {"VOC", "Case"}, {"ABL", "Case"}, {"ALL", "Case"}, {"ESS", "Case"},
        {"COM", "Case"}, {"PRT", "Case"}, {"INE", "Case"}, {"ADE", "Case"},
        {"ELA", "Case"}, {"ILL", "Case"}, {"TERM", "Case"}, {"ABE", "Case"},
        {"TRANS", "Case"}, {"SUP", "Case"},
        // Gender
        {"MASC", "Gender"}, {"FEM", "Gender"}, {"NEUT", "Gender"},
        // Person
        {"1", "Person"}, {"2", "Person"}, {"3", "Person"},
        // Tense
        {"PRS", "Tense"}, {"PST", "Tense"}, {"FUT", "Tense"},
        // Mood
        {"IND", "Mood"}, {"SBJV", "Mood"}, {"IMP", "Mood"}, {"COND", "Mood"},
        {"OPT", "Mood"}, {"POT", "Mood"},
        // Voice
        {"ACT", "Voice"}, {"PASS", "Voice"}, {"MID", "Voice"},
        // Aspect
        {"IPFV", "Aspect"}, {"PFV", "Aspect"}, {"PROG", "Aspect"}, {"PRF", "Aspect"},
        {"HAB", "Aspect"},
        // Definiteness
        {"DEF", "Definiteness"}, {"INDF", "Definiteness"},
        // Comparison
        {"CMPR", "Comparison"}, {"SPRL", "Comparison"}, {"AB", "Comparison"},
        // Finiteness
        {"FIN", "Finiteness"}, {"NFIN", "Finiteness"},
        // Polarity
        {"POS", "Polarity"}, {"NEG", "Polarity"},
    };
    return table;
}

inline std::map<std::string, std::string> parse_features(std::string_view bundle) {
    std::map<std::string, std::string> out;
    std::string token;
    std::stringstream ss{std::string(bundle)};
    while (std::getline(ss, token, ';')) {
        if (token.empty()) continue;
        const auto eq = token.find('=');
        if (eq != std::string::npos) {
            const std::string attr = token.substr(0, eq);
            if (out.count(attr))
                throw ContractError("duplicate feature attribute \"" + attr + "\" in bundle \"" +
                                    std::string(bundle) + "\"");
            out[attr] = token.substr(eq + 1);
            continue;
        }
        const auto& table = unimorph_dimensions();
        auto it = table.find(token);
        const std::string attr = it != table.end() ? it->second : token;
        if (out.count(attr))
            throw ContractError("duplicate feature attribute \"" + attr + "\" in bundle \"" +
                                std::string(bundle) + "\"");
        out[attr] = token;
    }
    return out;
}

// The single differing attribute between two bundles, or nullopt when they
// differ in zero or more than one attribute. An attribute present on only
// one side counts as a difference.
inline std::optional<std::string> single_feature_difference(
    const std::map<std::string, std::string>& a, const std::map<std::string, std::string>& b) {
    std::optional<std::string> differing;
    std::set<std::string> attrs;
    for (const auto& [k, v] : a) attrs.insert(k);
    for (const auto& [k, v] : b) attrs.insert(k);
    for (const auto& attr : attrs) {
        const auto ia = a.find(attr);
        const auto ib = b.find(attr);
        const bool same = ia != a.end() && ib != b.end() && ia->second == ib->second;
        if (same) continue;
        if (differing) return std::nullopt;  // second difference
        differing = attr;
    }
    return differing;
}

struct TokenAnnotation {
    std::string lemma;
    std::map<std::string, std::string> features;
};

struct AnnotatedSentence {
    std::vector<std::string> tokens;
    std::vector<std::optional<TokenAnnotation>> annotations;  // parallel to tokens
};

inline std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string s;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) s += ' ';
        s += tokens[i];
    }
    return s;
}

// For every annotated token, emit one pair per lexicon form that shares the
// lemma, differs in exactly one feature attribute, and has a different
// surface form. Duplicate (good, bad) string pairs are dropped.
inline std::vector<MinimalPair> generate_morph_pairs(
    const std::vector<LexiconEntry>& lexicon, const std::vector<AnnotatedSentence>& sentences,
    const std::string& language) {
    std::vector<MinimalPair> out;
    std::set<std::pair<std::string, std::string>> seen;
    std::size_t counter = 0;
    for (const auto& sentence : sentences) {
        if (sentence.annotations.size() != sentence.tokens.size())
            throw ContractError("annotated sentence: annotations must parallel tokens");
        const std::string good = join_tokens(sentence.tokens);
        for (std::size_t ti = 0; ti < sentence.tokens.size(); ++ti) {
            if (!sentence.annotations[ti]) continue;
            const auto& ann = *sentence.annotations[ti];
            for (const auto& entry : lexicon) {
                if (entry.lemma != ann.lemma) continue;
                if (entry.form == sentence.tokens[ti]) continue;
                const auto attr = single_feature_difference(ann.features, entry.features);
                if (!attr) continue;
                auto bad_tokens = sentence.tokens;
                bad_tokens[ti] = entry.form;
                const std::string bad = join_tokens(bad_tokens);
                if (bad == good) continue;
                if (!seen.insert({good, bad}).second) continue;
                MinimalPair pair;
                pair.id = language + "-" + std::to_string(counter++);
                pair.good = good;
                pair.bad = bad;
                pair.phenomenon = *attr;
                pair.language = language;
                out.push_back(std::move(pair));
            }
        }
    }
    return out;
}

// --- report emission ---------------------------------------------------------

enum class ReportFormat { Csv, Markdown, Json };

inline ReportFormat report_format_from_name(std::string_view s) {
    if (s == "csv") return ReportFormat::Csv;
    if (s == "markdown") return ReportFormat::Markdown;
    if (s == "json") return ReportFormat::Json;
    throw ContractError("unknown report format \"" + std::string(s) + "\"");
}

inline std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

// Stable column order (model, benchmark, metric, value, n_items); rows sorted
// by model then benchmark. CSV/markdown render values at 4 decimal places;
// JSON keeps full precision so it round-trips.
inline std::string emit_report(const EvalReport& report, ReportFormat format) {
    auto rows = report.rows;
    std::sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) {
        if (a.model != b.model) return a.model < b.model;
        if (a.benchmark != b.benchmark) return a.benchmark < b.benchmark;
        return a.metric < b.metric;
    });
    if (format == ReportFormat::Csv) {
        std::string out = "model,benchmark,metric,value,n_items\n";
        for (const auto& r : rows)
            out += r.model + "," + r.benchmark + "," + r.metric + "," + format_value(r.value) +
                   "," + std::to_string(r.n_items) + "\n";
        return out;
    }
    if (format == ReportFormat::Markdown) {
        std::string out = "| model | benchmark | metric | value | n_items |\n";
        out += "| --- | --- | --- | --- | --- |\n";
        for (const auto& r : rows)
            out += "| " + r.model + " | " + r.benchmark + " | " + r.metric + " | " +
                   format_value(r.value) + " | " + std::to_string(r.n_items) + " |\n";
        return out;
    }
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& r : rows)
        arr.push_back({{"model", r.model},
                       {"benchmark", r.benchmark},
                       {"metric", r.metric},
                       {"value", r.value},
                       {"n_items", r.n_items}});
    return arr.dump(2) + "\n";
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport report;
    for (const auto& r : j) {
        EvalRow row;
        row.model = r.at("model").get<std::string>();
        row.benchmark = r.at("benchmark").get<std::string>();
        row.metric = r.at("metric").get<std::string>();
        row.value = r.at("value").get<double>();
        row.n_items = r.at("n_items").get<std::size_t>();
        report.rows.push_back(std::move(row));
    }
    return report;
}

// --- file formats ------------------------------------------------------------

namespace detail {

inline std::vector<nlohmann::json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open \"" + path + "\"");
    std::vector<nlohmann::json> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
        }
    }
    return out;
}

}  // namespace detail

// JSON-lines with fields {id, good, bad, phenomenon, language}.
inline std::vector<MinimalPair> read_minimal_pairs(const std::string& path) {
    std::vector<MinimalPair> out;
    for (const auto& j : detail::read_jsonl(path)) {
        MinimalPair p;
        p.id = j.value("id", "pair-" + std::to_string(out.size()));
        p.good = j.at("good").get<std::string>();
        p.bad = j.at("bad").get<std::string>();
        p.phenomenon = j.value("phenomenon", "unknown");
        p.language = j.value("language", "und");
        out.push_back(std::move(p));
    }
    return out;
}

inline void write_minimal_pairs(const std::vector<MinimalPair>& pairs,
                                const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open \"" + path + "\" for writing");
    for (const auto& p : pairs) {
        nlohmann::ordered_json j{{"id", p.id},
                                 {"good", p.good},
                                 {"bad", p.bad},
                                 {"phenomenon", p.phenomenon},
                                 {"language", p.language}};
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("write failed for \"" + path + "\"");
}

// JSON-lines with fields {english, target, language}.
inline std::vector<ParallelDoc> read_parallel_docs(const std::string& path) {
    std::vector<ParallelDoc> out;
    for (const auto& j : detail::read_jsonl(path)) {
        ParallelDoc d;
        d.english = j.at("english").get<std::string>();
        d.target = j.at("target").get<std::string>();
        d.language = j.value("language", "und");
        out.push_back(std::move(d));
    }
    return out;
}

// Tab-separated (lemma, form, feature;bundle) per UniMorph convention.
// Empty lines are skipped.
inline std::vector<LexiconEntry> read_lexicon(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open \"" + path + "\"");
    std::vector<LexiconEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab1 = line.find('\t');
        const auto tab2 = tab1 == std::string::npos ? std::string::npos
                                                    : line.find('\t', tab1 + 1);
        if (tab2 == std::string::npos)
            throw IoError(path + ":" + std::to_string(lineno) +
                          ": expected lemma<TAB>form<TAB>features");
        LexiconEntry entry;
        entry.lemma = line.substr(0, tab1);
        entry.form = line.substr(tab1 + 1, tab2 - tab1 - 1);
        entry.features = parse_features(line.substr(tab2 + 1));
        if (entry.form.empty())
            throw IoError(path + ":" + std::to_string(lineno) + ": empty surface form");
        out.push_back(std::move(entry));
    }
    return out;
}

// JSON-lines: {"tokens": [...], "annotations": [null | {"lemma", "features"}, ...]}.
// "features" is a UniMorph bundle string.
inline std::vector<AnnotatedSentence> read_annotated_sentences(const std::string& path) {
    std::vector<AnnotatedSentence> out;
    for (const auto& j : detail::read_jsonl(path)) {
        AnnotatedSentence s;
        s.tokens = j.at("tokens").get<std::vector<std::string>>();
        const auto& anns = j.at("annotations");
        for (const auto& a : anns) {
            if (a.is_null()) {
                s.annotations.emplace_back(std::nullopt);
            } else {
                TokenAnnotation ann;
                ann.lemma = a.at("lemma").get<std::string>();
                ann.features = parse_features(a.at("features").get<std::string>());
                s.annotations.emplace_back(std::move(ann));
            }
        }
        if (s.annotations.size() != s.tokens.size())
            throw IoError(path + ": annotations must have one entry per token");
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace growmerge
