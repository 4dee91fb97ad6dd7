// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "growmerge/eval.hpp"
#include "growmerge/model.hpp"
#include "test_util.hpp"

using namespace growmerge;

namespace {

ModelConfig byte_config(std::size_t n_layers = 0) {
    ModelConfig cfg;
    cfg.vocab_size = kByteVocabSize;
    cfg.hidden_dim = 2;
    cfg.n_layers = n_layers;
    cfg.n_heads = 1;
    cfg.n_kv_heads = 1;
    cfg.head_dim = 2;
    cfg.ffn_dim = 4;
    return cfg;
}

// One-layer model whose layer weights are all zero (the layer passes the
// residual through untouched) and whose embedding gives byte 'a' twice the
// first-coordinate mass of every other token. NLLs are hand-computable.
Checkpoint a_biased_checkpoint() {
    ModelConfig cfg = byte_config(1);
    Checkpoint ckpt = zero_checkpoint(cfg, DType::F64);
    std::vector<double> embed(cfg.vocab_size * 2, 0.0);
    for (std::size_t v = 0; v < cfg.vocab_size; ++v) embed[v * 2] = 1.0;
    embed[static_cast<std::size_t>('a') * 2] = 2.0;
    ckpt.tensors["model.embed_tokens.weight"] =
        Tensor::of<double>({cfg.vocab_size, 2}, embed);
    std::vector<double> ones{1.0, 1.0};
    ckpt.tensors["model.norm.weight"] = Tensor::of<double>({2}, ones);
    return ckpt;
}

// Hand NLL for the model above: every position's logit vector is
// l_v = embed[v][0] * embed[token][0] / sqrt(embed[token][0]^2 / 2 + eps).
double hand_nll(const std::string& text) {
    const auto tokens = byte_tokenize(text);
    const double eps = 1e-5;
    double total = 0.0;
    for (std::size_t t = 1; t < tokens.size(); ++t) {
        const double ctx = tokens[t - 1] == 'a' ? 2.0 : 1.0;
        const double normed = ctx / std::sqrt(ctx * ctx / 2.0 + eps);
        double denom = 0.0;
        for (std::size_t v = 0; v < kByteVocabSize; ++v) {
            const double logit = (v == 'a' ? 2.0 : 1.0) * normed;
            denom += std::exp(logit);
        }
        const double target = (tokens[t] == 'a' ? 2.0 : 1.0) * normed;
        total += -(target - std::log(denom));
    }
    return total;
}

}  // namespace

TEST_CASE("hand-built checkpoint prefers sentences with more 'a' bytes") {
    const Checkpoint ckpt = a_biased_checkpoint();

    // The library NLL must agree with the hand computation.
    for (const std::string text : {"aa", "ab", "ba", "xy", "aba"})
        CHECK(nll(ckpt, byte_tokenize(text)) == Catch::Approx(hand_nll(text)).epsilon(1e-12));

    const std::vector<MinimalPair> pairs{
        {"p0", "aa", "ab", "bias", "und"},
        {"p1", "aab", "abb", "bias", "und"},
        {"p2", "ba", "bb", "bias", "und"},
    };
    for (const auto& p : pairs) CHECK(hand_nll(p.good) < hand_nll(p.bad));

    const PairScore score = score_minimal_pairs(ckpt, pairs);
    CHECK(score.accuracy == 1.0);
    CHECK(score.n_items == 3);
}

TEST_CASE("uniform model ties every equal-length pair at exactly 0.5") {
    const Checkpoint ckpt = zero_checkpoint(byte_config(), DType::F32);
    const std::vector<MinimalPair> pairs{
        {"p0", "katt", "katz", "noun", "swe"},
        {"p1", "hus", "hos", "noun", "swe"},
        {"p2", "ab", "ba", "order", "swe"},
        {"p3", "xx", "yy", "order", "swe"},
    };
    const PairScore score = score_minimal_pairs(ckpt, pairs);
    CHECK(score.accuracy == 0.5);
    CHECK(score.per_phenomenon.at("noun").accuracy == 0.5);
    CHECK(score.per_phenomenon.at("noun").n_items == 2);
    CHECK(score.per_phenomenon.at("order").n_items == 2);
}

TEST_CASE("swapping good and bad maps accuracy a to 1-a") {
    const Checkpoint ckpt = a_biased_checkpoint();
    std::vector<MinimalPair> pairs{
        {"p0", "aa", "ab", "t", "und"},
        {"p1", "ab", "aa", "t", "und"},  // deliberately wrong way around
        {"p2", "aaa", "abb", "t", "und"},
    };
    const double acc = score_minimal_pairs(ckpt, pairs).accuracy;
    for (auto& p : pairs) std::swap(p.good, p.bad);
    const double swapped = score_minimal_pairs(ckpt, pairs).accuracy;
    CHECK(acc + swapped == 1.0);
}

TEST_CASE("score_minimal_pairs is invariant under pair reordering") {
    const Checkpoint ckpt = a_biased_checkpoint();
    std::vector<MinimalPair> pairs{
        {"p0", "aa", "ab", "x", "und"},
        {"p1", "bb", "ba", "x", "und"},
        {"p2", "aab", "bab", "y", "und"},
    };
    const double forward_acc = score_minimal_pairs(ckpt, pairs).accuracy;
    std::reverse(pairs.begin(), pairs.end());
    CHECK(score_minimal_pairs(ckpt, pairs).accuracy == forward_acc);
}

TEST_CASE("score_minimal_pairs contract errors") {
    const Checkpoint ckpt = zero_checkpoint(byte_config());
    CHECK_THROWS_AS(score_minimal_pairs(ckpt, {}), ContractError);
    CHECK_THROWS_AS(score_minimal_pairs(ckpt, {{"p", "same", "same", "t", "und"}}),
                    ContractError);
    CHECK_THROWS_AS(score_minimal_pairs(ckpt, {{"p", "", "x", "t", "und"}}), ContractError);
}

TEST_CASE("information parity") {
    const Checkpoint uniform = zero_checkpoint(byte_config(), DType::F32);

    SECTION("self-reference English case is exactly 1") {
        const std::vector<ParallelDoc> docs{{"hello there", "hello there", "eng"},
                                            {"more text", "more text", "eng"}};
        CHECK(information_parity(uniform, uniform, docs) == 1.0);
    }
    SECTION("target NLL exactly twice the reference gives 0.5") {
        // Uniform model: NLL is proportional to byte length, and doubling the
        // length doubles it exactly (power-of-two scaling).
        std::vector<ParallelDoc> docs;
        for (int i = 0; i < 10; ++i) docs.push_back({"a", "bc", "und"});
        CHECK(information_parity(uniform, uniform, docs) == 0.5);
    }
    SECTION("matches an independent two-pass summation on seeded models") {
        const Checkpoint eval_model = random_checkpoint(byte_config(1), 5, DType::F32, 0.3);
        const Checkpoint ref_model = random_checkpoint(byte_config(1), 9, DType::F32, 0.3);
        std::vector<ParallelDoc> docs;
        const char* english[] = {"the cat", "a dog", "ships", "winter came", "four words",
                                 "hello", "numbers", "bread and", "salt", "end"};
        const char* target[] = {"katten", "en hund", "skip", "vintern kom", "fyra ord",
                                "hej", "tal", "brod och", "salt", "slut"};
        for (int i = 0; i < 10; ++i) docs.push_back({english[i], target[i], "swe"});

        double ref_sum = 0.0, eval_sum = 0.0;
        for (const auto& d : docs) {
            ref_sum += nll(ref_model, byte_tokenize(d.english));
            eval_sum += nll(eval_model, byte_tokenize(d.target));
        }
        CHECK(information_parity(eval_model, ref_model, docs) ==
              Catch::Approx(ref_sum / eval_sum).epsilon(1e-14));
    }
    SECTION("duplicating every document leaves IP unchanged") {
        const Checkpoint eval_model = random_checkpoint(byte_config(1), 5, DType::F32, 0.3);
        std::vector<ParallelDoc> docs{{"alpha", "beta", "und"}, {"gamma", "delta", "und"}};
        const double ip = information_parity(eval_model, uniform, docs);
        std::vector<ParallelDoc> doubled = docs;
        doubled.insert(doubled.end(), docs.begin(), docs.end());
        CHECK(information_parity(eval_model, uniform, doubled) ==
              Catch::Approx(ip).epsilon(1e-12));
    }
    SECTION("empty docs are a contract error") {
        CHECK_THROWS_AS(information_parity(uniform, uniform, {}), ContractError);
    }
}

TEST_CASE("feature bundles parse against the UniMorph dimension table") {
    const auto feats = parse_features("N;PL;NOM");
    CHECK(feats.at("POS") == "N");
    CHECK(feats.at("Number") == "PL");
    CHECK(feats.at("Case") == "NOM");

    const auto explicit_attr = parse_features("Deixis=PROX;SG");
    CHECK(explicit_attr.at("Deixis") == "PROX");
    CHECK(explicit_attr.at("Number") == "SG");

    // Unknown tags become their own attribute.
    const auto unknown = parse_features("N;FOO");
    CHECK(unknown.at("FOO") == "FOO");

    CHECK_THROWS_AS(parse_features("SG;PL"), ContractError);  // duplicate attribute
}

TEST_CASE("single_feature_difference") {
    const auto a = parse_features("N;SG;NOM");
    CHECK(single_feature_difference(a, parse_features("N;PL;NOM")) == "Number");
    CHECK_FALSE(single_feature_difference(a, parse_features("N;PL;DAT")).has_value());
    CHECK_FALSE(single_feature_difference(a, a).has_value());
    // attribute present on one side only counts as the single difference
    CHECK(single_feature_difference(parse_features("N;SG"), parse_features("N;SG;DEF")) ==
          "Definiteness");
}

TEST_CASE("generate_morph_pairs emits the definitional example") {
    const std::vector<LexiconEntry> lexicon{
        {"hund", "hund", parse_features("N;SG")},
        {"hund", "hundar", parse_features("N;PL")},
    };
    AnnotatedSentence s;
    s.tokens = {"en", "hund", "springer"};
    s.annotations = {std::nullopt, TokenAnnotation{"hund", parse_features("N;SG")},
                     std::nullopt};

    const auto pairs = generate_morph_pairs(lexicon, {s}, "swe");
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].good == "en hund springer");
    CHECK(pairs[0].bad == "en hundar springer");
    CHECK(pairs[0].phenomenon == "Number");
    CHECK(pairs[0].language == "swe");
}

TEST_CASE("generate_morph_pairs rejects multi-feature alternatives") {
    const std::vector<LexiconEntry> lexicon{
        {"hund", "hund", parse_features("N;SG;NOM")},
        {"hund", "hundum", parse_features("N;PL;DAT")},  // two features away
    };
    AnnotatedSentence s;
    s.tokens = {"hund"};
    s.annotations = {TokenAnnotation{"hund", parse_features("N;SG;NOM")}};
    CHECK(generate_morph_pairs(lexicon, {s}, "isl").empty());
}

TEST_CASE("generate_morph_pairs equals the brute-force enumeration") {
    // Toy corpus of 5 sentences against a 12-form lexicon.
    std::vector<LexiconEntry> lexicon;
    const char* rows[][3] = {
        {"katt", "katt", "N;SG;NOM"},   {"katt", "katter", "N;PL;NOM"},
        {"katt", "katts", "N;SG;GEN"},  {"katt", "katters", "N;PL;GEN"},
        {"hus", "hus", "N;SG;NOM"},     {"hus", "husen", "N;PL;NOM"},
        {"ga", "gar", "V;PRS"},         {"ga", "gick", "V;PST"},
        {"ga", "gatt", "V;PRF"},        {"stor", "stor", "ADJ;SG"},
        {"stor", "stora", "ADJ;PL"},    {"stor", "storre", "ADJ;CMPR;SG"},
    };
    for (const auto& r : rows) lexicon.push_back({r[0], r[1], parse_features(r[2])});

    auto annotate = [&](const std::string& form) -> std::optional<TokenAnnotation> {
        for (const auto& e : lexicon)
            if (e.form == form) return TokenAnnotation{e.lemma, e.features};
        return std::nullopt;
    };
    const std::vector<std::vector<std::string>> sentence_tokens{
        {"en", "katt", "gar"},
        {"katter", "gick", "hem"},
        {"det", "stora", "huset"},
        {"hus", "och", "katt"},
        {"en", "stor", "katt", "gar"},
    };
    std::vector<AnnotatedSentence> sentences;
    for (const auto& tokens : sentence_tokens) {
        AnnotatedSentence s;
        s.tokens = tokens;
        for (const auto& tok : tokens) s.annotations.push_back(annotate(tok));
        sentences.push_back(std::move(s));
    }

    const auto pairs = generate_morph_pairs(lexicon, sentences, "swe");

    // Brute force: every (sentence, token, entry) combination, checked directly.
    std::set<std::pair<std::string, std::string>> expected;
    for (const auto& s : sentences) {
        const std::string good = join_tokens(s.tokens);
        for (std::size_t ti = 0; ti < s.tokens.size(); ++ti) {
            if (!s.annotations[ti]) continue;
            for (const auto& e : lexicon) {
                if (e.lemma != s.annotations[ti]->lemma) continue;
                if (e.form == s.tokens[ti]) continue;
                if (!single_feature_difference(s.annotations[ti]->features, e.features))
                    continue;
                auto toks = s.tokens;
                toks[ti] = e.form;
                expected.insert({good, join_tokens(toks)});
            }
        }
    }
    CHECK(pairs.size() == expected.size());
    std::set<std::pair<std::string, std::string>> got;
    for (const auto& p : pairs) {
        CHECK(expected.count({p.good, p.bad}) == 1);  // subset of brute force
        got.insert({p.good, p.bad});
    }
    CHECK(got == expected);  // every valid alternative exactly once
}

TEST_CASE("emit_report formats") {
    SECTION("empty report is a header-only CSV") {
        CHECK(emit_report({}, ReportFormat::Csv) == "model,benchmark,metric,value,n_items\n");
    }
    SECTION("one row gives exactly two CSV lines") {
        EvalReport report;
        report.rows.push_back({"m1", "blimp", "accuracy", 0.73456, 100});
        const std::string csv = emit_report(report, ReportFormat::Csv);
        CHECK(csv == "model,benchmark,metric,value,n_items\nm1,blimp,accuracy,0.7346,100\n");
    }
    SECTION("rows are sorted by model then benchmark") {
        EvalReport report;
        report.rows.push_back({"m2", "b", "accuracy", 0.5, 1});
        report.rows.push_back({"m1", "z", "accuracy", 0.5, 1});
        report.rows.push_back({"m1", "a", "IP", 0.5, 1});
        const std::string csv = emit_report(report, ReportFormat::Csv);
        const auto first = csv.find("m1,a");
        const auto second = csv.find("m1,z");
        const auto third = csv.find("m2,b");
        CHECK(first < second);
        CHECK(second < third);
    }
    SECTION("markdown emits a pipe table") {
        EvalReport report;
        report.rows.push_back({"m", "b", "IP", 1.0, 7});
        const std::string md = emit_report(report, ReportFormat::Markdown);
        CHECK(md.find("| model | benchmark | metric | value | n_items |") == 0);
        CHECK(md.find("| m | b | IP | 1.0000 | 7 |") != std::string::npos);
    }
    SECTION("JSON round-trips to an equal report") {
        EvalReport report;
        report.rows.push_back({"m1", "blimp", "accuracy", 0.123456789012345, 67000});
        report.rows.push_back({"m1", "flores", "IP", 1.0 / 3.0, 1012});
        const std::string json = emit_report(report, ReportFormat::Json);
        const EvalReport back = report_from_json(nlohmann::json::parse(json));
        REQUIRE(back.rows.size() == 2);
        for (std::size_t i = 0; i < 2; ++i) {
            CHECK(back.rows[i].model == report.rows[i].model);
            CHECK(back.rows[i].benchmark == report.rows[i].benchmark);
            CHECK(back.rows[i].metric == report.rows[i].metric);
            CHECK(back.rows[i].value == report.rows[i].value);
            CHECK(back.rows[i].n_items == report.rows[i].n_items);
        }
    }
}

TEST_CASE("jsonl and lexicon file parsing") {
    testutil::TempDir dir;

    SECTION("minimal pairs") {
        const std::string path = dir.file("pairs.jsonl");
        testutil::spit(path,
                       R"({"id":"p0","good":"aa","bad":"ab","phenomenon":"x","language":"swe"})"
                       "\n\n"
                       R"({"good":"cc","bad":"cd"})"
                       "\n");
        const auto pairs = read_minimal_pairs(path);
        REQUIRE(pairs.size() == 2);
        CHECK(pairs[0].id == "p0");
        CHECK(pairs[1].phenomenon == "unknown");

        testutil::spit(path, "{broken\n");
        CHECK_THROWS_AS(read_minimal_pairs(path), IoError);
        CHECK_THROWS_AS(read_minimal_pairs(dir.file("missing.jsonl")), IoError);
    }

    SECTION("round-trip write/read of generated pairs") {
        const std::vector<MinimalPair> pairs{{"a-0", "god sak", "god saker", "Number", "swe"}};
        const std::string path = dir.file("gen.jsonl");
        write_minimal_pairs(pairs, path);
        const auto back = read_minimal_pairs(path);
        REQUIRE(back.size() == 1);
        CHECK(back[0].good == pairs[0].good);
        CHECK(back[0].phenomenon == "Number");
    }

    SECTION("parallel docs") {
        const std::string path = dir.file("docs.jsonl");
        testutil::spit(path, R"({"english":"hi","target":"hej","language":"swe"})" "\n");
        const auto docs = read_parallel_docs(path);
        REQUIRE(docs.size() == 1);
        CHECK(docs[0].target == "hej");
    }

    SECTION("lexicon TSV") {
        const std::string path = dir.file("lex.tsv");
        testutil::spit(path, "hund\thund\tN;SG\nhund\thundar\tN;PL\n\n");
        const auto lex = read_lexicon(path);
        REQUIRE(lex.size() == 2);
        CHECK(lex[1].form == "hundar");
        CHECK(lex[1].features.at("Number") == "PL");

        testutil::spit(path, "only two\tfields\n");
        CHECK_THROWS_AS(read_lexicon(path), IoError);
    }

    SECTION("annotated sentences") {
        const std::string path = dir.file("sents.jsonl");
        testutil::spit(
            path,
            R"({"tokens":["en","hund"],"annotations":[null,{"lemma":"hund","features":"N;SG"}]})"
            "\n");
        const auto sents = read_annotated_sentences(path);
        REQUIRE(sents.size() == 1);
        CHECK(sents[0].tokens.size() == 2);
        CHECK_FALSE(sents[0].annotations[0].has_value());
        CHECK(sents[0].annotations[1]->lemma == "hund");
    }
}
