#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "deci/evaluation.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace deci {
namespace {

PathwayScores make_scores(Vector zk, Vector zd, Vector ze) {
    PathwayScores s{std::move(zk), std::move(zd), std::move(ze), {}};
    s.z_f = counterfactual_scores(s.z_k, s.z_d, s.z_e);
    return s;
}

TEST(FinalScores, ModeFormulas) {
    auto zero = make_scores({0, 0}, {1.5, -2}, {0.3, 0.7});
    for (double v : final_scores(zero, InferenceMode::Deci)) EXPECT_EQ(v, 0.5);
    auto all_zero = make_scores({0}, {0}, {0});
    EXPECT_EQ(final_scores(all_zero, InferenceMode::Naive), Vector{0.5});

    auto s = make_scores({1.2, -0.4}, {0.0, 0.0}, {0.5, -1.0});
    EXPECT_EQ(final_scores(s, InferenceMode::WoZd), final_scores(s, InferenceMode::Deci));
    EXPECT_EQ(final_scores(s, InferenceMode::KnowledgeOnly)[0], sigmoid(1.2));
    EXPECT_EQ(final_scores(s, InferenceMode::Naive)[1], sigmoid(-1.4));
    EXPECT_NEAR(final_scores(s, InferenceMode::WoZe)[0], sigmoid(sigmoid(1.2) - 0.5), 1e-15);
}

TEST(FinalScores, DecisionScoresOrderLikeFinalScores) {
    Rng rng(1);
    for (InferenceMode mode : kAllModes) {
        for (int i = 0; i < 200; ++i) {
            auto a = make_scores({rng.uniform(-5, 5)}, {rng.uniform(-5, 5)}, {rng.uniform(-5, 5)});
            auto b = make_scores({rng.uniform(-5, 5)}, {rng.uniform(-5, 5)}, {rng.uniform(-5, 5)});
            const double da = decision_scores(a, mode)[0], db = decision_scores(b, mode)[0];
            const double fa = final_scores(a, mode)[0], fb = final_scores(b, mode)[0];
            if (da < db) EXPECT_LE(fa, fb);
            EXPECT_EQ(da > 0, fa > 0.5) << to_string(mode);
        }
    }
}

TEST(InferenceMode, NamesRoundTrip) {
    for (InferenceMode m : kAllModes) EXPECT_EQ(parse_inference_mode(to_string(m)), m);
    EXPECT_EQ(to_string(InferenceMode::KnowledgeOnly), "knowledge-only");
    EXPECT_THROW(parse_inference_mode("bogus"), std::invalid_argument);
}

TEST(RocAuc, KnownValues) {
    EXPECT_EQ(*roc_auc(Vector{0.9, 0.1}, std::vector<int>{1, 0}), 1.0);
    EXPECT_EQ(*roc_auc(Vector{0.3, 0.3, 0.3}, std::vector<int>{1, 0, 1}), 0.5);
    EXPECT_EQ(*roc_auc(Vector{0.8, 0.6, 0.4}, std::vector<int>{1, 0, 1}), 0.5);
    EXPECT_FALSE(roc_auc(Vector{0.1, 0.2}, std::vector<int>{1, 1}).has_value());
    EXPECT_FALSE(roc_auc(Vector{0.1, 0.2}, std::vector<int>{0, 0}).has_value());
}

TEST(RocAuc, MatchesPairwiseOracleWithTies) {
    Rng rng(2);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + rng.uniform_index(60);
        Vector s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng.uniform_index(6));  // heavy ties
            y[i] = rng.bernoulli(0.4);
        }
        auto got = roc_auc(s, y);
        auto want = oracle::pairwise_auc(s, y);
        ASSERT_EQ(got.has_value(), want.has_value());
        if (got) EXPECT_NEAR(*got, *want, 1e-12);
    }
}

TEST(RocAuc, InvariantUnderMonotoneTransform) {
    Rng rng(3);
    Vector s(50), t(50);
    std::vector<int> y(50);
    for (std::size_t i = 0; i < 50; ++i) {
        s[i] = rng.uniform(-3, 3);
        t[i] = sigmoid(2.0 * s[i] + 1.0);
        y[i] = rng.bernoulli(0.5);
    }
    EXPECT_EQ(roc_auc(s, y), roc_auc(t, y));
}

TEST(F1, KnownValues) {
    Matrix gold{{1, 0}, {0, 1}};
    EXPECT_EQ(f1_scores(gold, gold).micro, 1.0);
    EXPECT_EQ(f1_scores(gold, gold).macro, 1.0);
    EXPECT_EQ(f1_scores(Matrix(2, 2), gold).micro, 0.0);
    auto f = f1_scores(Matrix{{1, 0}, {1, 1}}, gold);
    EXPECT_NEAR(f.micro, 0.8, 1e-15);
    // Label 0: TP 1, FP 1 -> 2/3. Label 1: TP 1 -> 1.
    EXPECT_NEAR(f.macro, (2.0 / 3.0 + 1.0) / 2.0, 1e-15);
    EXPECT_THROW(f1_scores(Matrix(2, 3), gold), DimensionError);
}

TEST(F1, EmptyLabelCountsAsZero) {
    Matrix gold{{1, 0}, {1, 0}};
    auto f = f1_scores(gold, gold);
    EXPECT_EQ(f.per_label, (Vector{1.0, 0.0}));
    EXPECT_EQ(f.macro, 0.5);
}

TEST(F1, MatchesConfusionOracle) {
    Rng rng(4);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t nd = 1 + rng.uniform_index(10), nl = 1 + rng.uniform_index(10);
        Matrix pred(nd, nl), gold(nd, nl);
        std::vector<std::vector<int>> p(nd, std::vector<int>(nl)), g = p;
        for (std::size_t d = 0; d < nd; ++d) {
            for (std::size_t l = 0; l < nl; ++l) {
                p[d][l] = rng.bernoulli(0.3);
                g[d][l] = rng.bernoulli(0.3);
                pred(d, l) = p[d][l];
                gold(d, l) = g[d][l];
            }
        }
        double macro, micro;
        std::vector<double> per;
        oracle::f1(p, g, macro, micro, per);
        auto got = f1_scores(pred, gold);
        EXPECT_NEAR(got.macro, macro, 1e-12);
        EXPECT_NEAR(got.micro, micro, 1e-12);
        for (std::size_t l = 0; l < nl; ++l) EXPECT_NEAR(got.per_label[l], per[l], 1e-12);
    }
}

TEST(PrecisionAtK, KnownValues) {
    Matrix scores{{0.9, 0.8, 0.1, 0.0, 0.0, 0.0}};
    Matrix gold{{1, 1, 0, 0, 0, 0}};
    EXPECT_EQ(precision_at_k(scores, gold, 2), 1.0);
    // Gold {4, 5}; the top-5 is {5, 0, 1, 2, 3}, so one hit.
    Matrix scores_ab{{0.9, 0.8, 0.7, 0.6, 0.1, 0.95}};
    Matrix gold_ab{{0, 0, 0, 0, 1, 1}};
    EXPECT_NEAR(precision_at_k(scores_ab, gold_ab, 5), 0.2, 1e-15);
    EXPECT_THROW(precision_at_k(scores, gold, 0), std::invalid_argument);
    EXPECT_THROW(precision_at_k(scores, gold, 7), std::invalid_argument);
}

TEST(PrecisionAtK, TiesGoToLowerIndex) {
    Matrix tied(1, 6, 0.3);
    EXPECT_EQ(precision_at_k(tied, Matrix{{1, 1, 0, 0, 0, 0}}, 2), 1.0);
    EXPECT_EQ(precision_at_k(tied, Matrix{{0, 0, 0, 0, 1, 1}}, 2), 0.0);
}

TEST(PrecisionAtK, MatchesOutrankOracle) {
    Rng rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t nd = 1 + rng.uniform_index(8), nl = 1 + rng.uniform_index(12);
        const std::size_t k = 1 + rng.uniform_index(nl);
        Matrix s(nd, nl), g(nd, nl);
        std::vector<std::vector<double>> os(nd, std::vector<double>(nl));
        std::vector<std::vector<int>> og(nd, std::vector<int>(nl));
        for (std::size_t d = 0; d < nd; ++d) {
            for (std::size_t l = 0; l < nl; ++l) {
                os[d][l] = s(d, l) = static_cast<double>(rng.uniform_index(4));
                og[d][l] = rng.bernoulli(0.3);
                g(d, l) = og[d][l];
            }
        }
        EXPECT_NEAR(precision_at_k(s, g, k), oracle::precision_at_k(os, og, k), 1e-12);
    }
}

// Scores where z_k equals +-margin * (2 * gold - 1) plus a demographic offset.
std::vector<PathwayScores> synthetic_scores(const Matrix& gold, Rng& rng, double noise) {
    std::vector<PathwayScores> out;
    for (std::size_t d = 0; d < gold.rows(); ++d) {
        Vector zk(gold.cols()), zd(gold.cols()), ze(gold.cols());
        for (std::size_t l = 0; l < gold.cols(); ++l) {
            zk[l] = (gold(d, l) > 0 ? 1.0 : -1.0) + noise * rng.uniform(-1, 1);
            zd[l] = rng.uniform(-1, 1);
            ze[l] = rng.uniform(-1, 1);
        }
        out.push_back(make_scores(zk, zd, ze));
    }
    return out;
}

Matrix random_gold(Rng& rng, std::size_t nd, std::size_t nl) {
    Matrix g(nd, nl);
    for (double& v : g.data()) v = rng.bernoulli(0.3);
    for (std::size_t l = 0; l < nl; ++l) {
        g(0, l) = 1;
        g(1, l) = 0;
    }
    return g;
}

TEST(EvaluateScores, PerfectScoresGiveOnes) {
    Rng rng(6);
    Matrix gold = random_gold(rng, 30, 6);
    auto scores = synthetic_scores(gold, rng, 0.0);
    const std::size_t ks[] = {1, 3};
    auto r = evaluate_scores(scores, gold, InferenceMode::KnowledgeOnly, ks);
    EXPECT_EQ(r.macro_auc, 1.0);
    EXPECT_EQ(r.micro_auc, 1.0);
    EXPECT_EQ(r.macro_f1, 1.0);
    EXPECT_EQ(r.micro_f1, 1.0);
    EXPECT_EQ(r.p_at_k.size(), 2u);
    EXPECT_EQ(r.n_docs, 30u);
}

TEST(EvaluateScores, RandomScoresNearChance) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        Rng rng(seed);
        Matrix gold(2000, 10);
        for (double& v : gold.data()) v = rng.bernoulli(0.5);
        std::vector<PathwayScores> scores;
        for (std::size_t d = 0; d < gold.rows(); ++d) {
            Vector z(10);
            for (double& v : z) v = rng.uniform(-1, 1);
            scores.push_back(make_scores(z, Vector(10), Vector(10)));
        }
        const std::size_t ks[] = {5};
        auto r = evaluate_scores(scores, gold, InferenceMode::Deci, ks);
        EXPECT_GE(r.micro_auc, 0.45);
        EXPECT_LE(r.micro_auc, 0.55);
    }
}

TEST(EvaluateScores, SkipsDegenerateLabelsAndRejectsAllDegenerate) {
    Matrix gold{{1, 1, 0}, {0, 1, 0}, {1, 1, 0}};
    Rng rng(7);
    auto scores = synthetic_scores(gold, rng, 0.1);
    const std::size_t ks[] = {1};
    auto r = evaluate_scores(scores, gold, InferenceMode::Deci, ks);
    EXPECT_EQ(r.auc_skipped_labels, (std::vector<std::size_t>{1, 2}));
    EXPECT_EQ(r.macro_auc, 1.0);
    Matrix all_pos(3, 3, 1.0);
    EXPECT_THROW(evaluate_scores(scores, all_pos, InferenceMode::Deci, ks), EvaluationError);
}

TEST(EvaluateScores, DeciAndKnowledgeOnlyAgreeAtThreshold) {
    Rng rng(8);
    Matrix gold = random_gold(rng, 60, 5);
    auto scores = synthetic_scores(gold, rng, 3.0);
    const std::size_t ks[] = {2};
    auto a = evaluate_scores(scores, gold, InferenceMode::Deci, ks);
    auto b = evaluate_scores(scores, gold, InferenceMode::KnowledgeOnly, ks);
    EXPECT_EQ(a.micro_f1, b.micro_f1);
    EXPECT_EQ(a.macro_f1, b.macro_f1);
    EXPECT_EQ(a.per_label_f1, b.per_label_f1);
}

TEST(EvaluateScores, DeciEqualsKnowledgeOnlyAucWhenBiasPathsZero) {
    Rng rng(9);
    Matrix gold = random_gold(rng, 40, 4);
    std::vector<PathwayScores> scores;
    for (std::size_t d = 0; d < gold.rows(); ++d) {
        Vector z(4);
        for (double& v : z) v = rng.uniform(-4, 4);
        scores.push_back(make_scores(z, Vector(4), Vector(4)));
    }
    const std::size_t ks[] = {2};
    auto a = evaluate_scores(scores, gold, InferenceMode::Deci, ks);
    auto b = evaluate_scores(scores, gold, InferenceMode::KnowledgeOnly, ks);
    EXPECT_EQ(a.macro_auc, b.macro_auc);
    EXPECT_EQ(a.micro_auc, b.micro_auc);
}

TEST(Evaluate, DocumentOrderInvariant) {
    auto m = testing::tiny_model(10);
    auto docs = testing::random_documents(m, 11, 30);
    auto rev = docs;
    std::reverse(rev.begin(), rev.end());
    const std::size_t ks[] = {1, 3};
    auto a = to_json(evaluate(m, docs, InferenceMode::Deci, ks), m.labels).dump();
    auto b = to_json(evaluate(m, rev, InferenceMode::Deci, ks), m.labels).dump();
    EXPECT_EQ(a, b);
}

Corpus demo_docs(const Matrix& gold, Rng& rng) {
    Corpus docs;
    for (std::size_t d = 0; d < gold.rows(); ++d) {
        Document doc;
        doc.id = std::to_string(d);
        doc.age = (d % 2) ? 70 : 30;
        doc.gender = rng.bernoulli(0.5) ? Gender::F : Gender::M;
        docs.push_back(doc);
    }
    return docs;
}

TEST(Disparity, HandComputedGap) {
    // Label 0 negatives: docs 0 (young), 1 (old), 2 (young), 3 (old).
    Matrix gold{{0}, {0}, {0}, {0}, {1}};
    std::vector<PathwayScores> scores{make_scores({1}, {0}, {0}), make_scores({1}, {0}, {0}),
                                      make_scores({-1}, {0}, {0}), make_scores({1}, {0}, {0}),
                                      make_scores({1}, {0}, {0})};
    Rng rng(1);
    Corpus docs = demo_docs(gold, rng);
    auto d = disparity(scores, docs, gold, ConfoundSpec{0, 65}, InferenceMode::Deci);
    EXPECT_EQ(*d.group_a_fpr, 1.0);
    EXPECT_EQ(*d.group_b_fpr, 0.5);
    EXPECT_EQ(*d.gap, 0.5);
}

TEST(Disparity, UndefinedGroup) {
    Matrix gold{{0}, {1}};
    std::vector<PathwayScores> scores{make_scores({1}, {0}, {0}), make_scores({1}, {0}, {0})};
    Rng rng(1);
    Corpus docs = demo_docs(gold, rng);
    auto d = disparity(scores, docs, gold, ConfoundSpec{0, 65}, InferenceMode::Naive);
    EXPECT_TRUE(d.group_b_fpr.has_value());
    EXPECT_FALSE(d.group_a_fpr.has_value());
    EXPECT_FALSE(d.gap.has_value());
}

TEST(Disparity, SymmetricScoresGiveZeroGap) {
    Matrix gold(200, 1);
    Rng rng(12);
    std::vector<PathwayScores> scores;
    for (std::size_t d = 0; d < 200; ++d) {
        // Pairs of documents share a score; one young, one old.
        double z = (d % 4 < 2) ? 1.0 : -1.0;
        scores.push_back(make_scores({z}, {0}, {0}));
    }
    Corpus docs = demo_docs(gold, rng);
    auto d = disparity(scores, docs, gold, ConfoundSpec{0, 65}, InferenceMode::Naive);
    EXPECT_EQ(*d.gap, 0.0);
}

TEST(Ablate, FiveRowsInOrder) {
    Rng rng(13);
    Matrix gold = random_gold(rng, 20, 3);
    auto scores = synthetic_scores(gold, rng, 1.0);
    Corpus docs = demo_docs(gold, rng);
    const std::size_t ks[] = {1};
    auto rows = ablate(scores, docs, gold, ks, ConfoundSpec{0, 65});
    ASSERT_EQ(rows.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(rows[i].mode, kAllModes[i]);
        ASSERT_TRUE(rows[i].report.disparity.has_value());
        EXPECT_EQ(rows[i].confounded_f1, rows[i].report.per_label_f1[0]);
    }
    LabelSpace labels({"A", "B", "C"});
    auto j = to_json(rows, labels);
    EXPECT_EQ(j.size(), 5u);
    EXPECT_EQ(j[1]["mode"], "wo-zd");
}

TEST(ScoreDump, OneLinePerDocument) {
    Rng rng(14);
    Matrix gold = random_gold(rng, 4, 2);
    auto scores = synthetic_scores(gold, rng, 0.5);
    Corpus docs = demo_docs(gold, rng);
    auto text = score_dump_jsonl(docs, scores, InferenceMode::Deci);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
    auto first = nlohmann::json::parse(text.substr(0, text.find('\n')));
    EXPECT_EQ(first["doc_id"], "0");
    EXPECT_EQ(first["scores"].size(), 2u);
    EXPECT_EQ(first["scores"][0].get<double>(), final_scores(scores[0], InferenceMode::Deci)[0]);
}

}  // namespace
}  // namespace deci
