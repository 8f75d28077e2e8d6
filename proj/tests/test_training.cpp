#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "deci/training.hpp"
#include "test_support.hpp"

namespace deci {
namespace {

using testing::tiny_model;

void zero_experts(DeciModel& m) {
    for (auto& w : m.params.expert_w) w.fill(0.0);
    for (auto& b : m.params.expert_b) b.fill(0.0);
}

TEST(PathwayPredictions, Sigmoids) {
    PathwayScores s{{0.0, 0.0}, {50.0, -50.0}, {1.0, -1.0}, {}};
    auto p = pathway_predictions(s);
    EXPECT_EQ(p.l_k, (Vector{0.5, 0.5}));
    EXPECT_NEAR(p.l_d[0], 1.0, 1e-12);
    EXPECT_NEAR(p.l_d[1], 0.0, 1e-12);
    EXPECT_EQ(p.l_e[0], sigmoid(1.0));
}

TEST(TotalLoss, ThreeLn2AtZeroScores) {
    auto m = tiny_model(1);
    zero_experts(m);
    auto docs = testing::random_documents(m, 2, 4);
    TrainConfig cfg;
    cfg.alpha = cfg.beta = 1.0;
    // BCE at p = 0.5 is ln 2 for each head.
    EXPECT_NEAR(total_loss(m, docs, cfg), 3.0 * 0.693147180559945309, 1e-12);
    cfg.alpha = cfg.beta = 0.0;
    EXPECT_NEAR(total_loss(m, docs, cfg), 0.693147180559945309, 1e-12);
}

TEST(TotalLoss, ZeroWeightsReduceToKnowledgeHead) {
    auto m = tiny_model(2);
    auto docs = testing::random_documents(m, 3, 5);
    TrainConfig cfg;
    cfg.alpha = cfg.beta = 0.0;
    auto lb = loss_and_gradient(m, docs, cfg, nullptr);
    EXPECT_EQ(lb.total, lb.knowledge);
    cfg.alpha = 0.5;
    cfg.beta = 0.25;
    lb = loss_and_gradient(m, docs, cfg, nullptr);
    EXPECT_NEAR(lb.total, lb.knowledge + 0.5 * lb.demographic + 0.25 * lb.expert, 1e-12);
}

TEST(TotalLoss, EmptyBatch) {
    auto m = tiny_model(3);
    EXPECT_THROW(total_loss(m, {}, TrainConfig{}), std::invalid_argument);
}

void gradient_check(GatingMode mode, bool stop) {
    auto m = tiny_model(4, {}, mode);
    auto docs = testing::random_documents(m, 5, 3);
    TrainConfig cfg;
    cfg.stop_bias_gradients = stop;
    ModelParams grads;
    loss_and_gradient(m, docs, cfg, &grads);
    if (stop) {
        // Detached bias heads: compare the knowledge term on its own.
        cfg.alpha = cfg.beta = 0.0;
        loss_and_gradient(m, docs, cfg, &grads);
    }
    std::vector<GradCheckEntry> entries;
    auto pa = m.params.arrays();
    auto ga = std::as_const(grads).arrays();
    for (std::size_t i = 0; i < pa.size(); ++i) entries.push_back({pa[i].first, pa[i].second, ga[i].second});
    auto rep = finite_difference_check([&] { return total_loss(m, docs, cfg); }, entries, 1e-5, 1e-3);
    EXPECT_TRUE(rep.passed) << rep.max_relative_error << " at " << rep.worst_parameter;
    EXPECT_EQ(rep.entries_checked, m.params.parameter_count());
}

TEST(LossGradient, MatchesFiniteDifferencePerLabel) { gradient_check(GatingMode::PerLabel, false); }
TEST(LossGradient, MatchesFiniteDifferencePerDocument) { gradient_check(GatingMode::PerDocument, false); }
TEST(LossGradient, StopGradientKnowledgeTerm) { gradient_check(GatingMode::PerLabel, true); }

TEST(LossGradient, DemographicTermVanishesAtZeroAlpha) {
    auto m = tiny_model(6);
    auto docs = testing::random_documents(m, 7, 4);
    TrainConfig cfg;
    cfg.alpha = 0.0;
    auto g = pathway_gradient(m, docs, cfg, Pathway::Demographic);
    EXPECT_EQ(global_norm(g), 0.0);
    cfg.alpha = 0.5;
    EXPECT_GT(global_norm(pathway_gradient(m, docs, cfg, Pathway::Demographic)), 0.0);
}

TEST(LossGradient, PathwayTermsSumToTotal) {
    auto m = tiny_model(8);
    auto docs = testing::random_documents(m, 9, 4);
    TrainConfig cfg;
    ModelParams total;
    loss_and_gradient(m, docs, cfg, &total);
    auto k = pathway_gradient(m, docs, cfg, Pathway::Knowledge);
    auto d = pathway_gradient(m, docs, cfg, Pathway::Demographic);
    auto e = pathway_gradient(m, docs, cfg, Pathway::Expert);
    auto ta = std::as_const(total).arrays();
    auto ka = std::as_const(k).arrays(), da = std::as_const(d).arrays(), ea = std::as_const(e).arrays();
    for (std::size_t i = 0; i < ta.size(); ++i) {
        for (std::size_t j = 0; j < ta[i].second->data().size(); ++j) {
            EXPECT_NEAR(ta[i].second->data()[j],
                        ka[i].second->data()[j] + da[i].second->data()[j] + ea[i].second->data()[j],
                        1e-12);
        }
    }
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
    ModelParams p = tiny_model(10).params;
    ModelParams g = zeros_like(p);
    g.gate_bias(0, 0) = 0.3;
    g.gate_bias(0, 1) = -2.0;
    const ModelParams before = p;
    AdamOptimizer opt(p, 0.01, 0.9, 0.999, 1e-8);
    opt.step(p, g);
    EXPECT_EQ(opt.steps(), 1u);
    EXPECT_NEAR(p.gate_bias(0, 0), before.gate_bias(0, 0) - 0.01, 1e-9);
    EXPECT_NEAR(p.gate_bias(0, 1), before.gate_bias(0, 1) + 0.01, 1e-9);
    EXPECT_EQ(p.embedding, before.embedding);
}

TEST(TrainConfig, Validation) {
    TrainConfig c;
    c.validate();
    c.epochs = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.alpha = std::numeric_limits<double>::infinity();
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.grad_clip_norm = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TrainConfig quick_config() {
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.learning_rate = 0.01;
    return cfg;
}

TEST(Train, DeterministicLogsAndParams) {
    auto m1 = tiny_model(11);
    auto m2 = m1;
    auto train_docs = testing::random_documents(m1, 12, 20);
    auto dev_docs = testing::random_documents(m1, 13, 8);
    auto r1 = train(m1, train_docs, dev_docs, quick_config());
    auto r2 = train(m2, train_docs, dev_docs, quick_config());
    ASSERT_EQ(r1.log.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(to_json(r1.log[i]).dump(), to_json(r2.log[i]).dump());
    EXPECT_EQ(m1.params, m2.params);
    EXPECT_EQ(r1.best_epoch, r2.best_epoch);
}

TEST(Train, ZeroLearningRateKeepsParamsAndLoss) {
    auto m = tiny_model(14);
    const ModelParams before = m.params;
    auto docs = testing::random_documents(m, 15, 12);
    auto cfg = quick_config();
    cfg.learning_rate = 0.0;
    cfg.batch_size = docs.size();
    auto r = train(m, docs, docs, cfg);
    EXPECT_EQ(m.params, before);
    EXPECT_EQ(r.log[0].train_loss, r.log[1].train_loss);
    EXPECT_EQ(r.log[1].train_loss, r.log[2].train_loss);
}

TEST(Train, LossDecreases) {
    auto m = tiny_model(16);
    auto docs = testing::random_documents(m, 17, 24);
    auto cfg = quick_config();
    cfg.epochs = 10;
    auto r = train(m, docs, docs, cfg);
    EXPECT_LT(r.log.back().train_loss, r.log.front().train_loss);
}

TEST(Train, LossDecreasesOverFirstFiveEpochsOnSyntheticDefaults) {
    const SyntheticCorpus corpus = generate_synthetic(SyntheticConfig{});
    Rng init(1);
    DeciModel m = DeciModel::create(ModelConfig{}, Vocabulary::build(corpus.train), corpus.labels, init);
    TrainConfig cfg;
    cfg.epochs = 5;
    auto r = train(m, corpus.train, corpus.dev, cfg);
    for (std::size_t i = 1; i < r.log.size(); ++i) EXPECT_LT(r.log[i].train_loss, r.log[i - 1].train_loss) << i;
}

TEST(Train, EpochCallbackAndJsonShape) {
    auto m = tiny_model(18);
    auto docs = testing::random_documents(m, 19, 10);
    std::size_t calls = 0;
    train(m, docs, docs, quick_config(), [&](const EpochRecord& r) {
        ++calls;
        auto j = to_json(r);
        EXPECT_EQ(j["epoch"], calls);
        EXPECT_TRUE(j.contains("train_loss"));
        EXPECT_TRUE(j.contains("train_micro_f1"));
        EXPECT_TRUE(j["dev_metrics"].contains("micro_f1"));
    });
    EXPECT_EQ(calls, 3u);
}

TEST(Train, NonFiniteLossNamesBatch) {
    auto m = tiny_model(20);
    auto docs = testing::random_documents(m, 21, 6);
    auto cfg = quick_config();
    cfg.batch_size = 2;
    cfg.learning_rate = 1e300;  // first update overflows the next forward pass
    try {
        train(m, docs, docs, cfg);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos) << e.what();
    }
}

TEST(Train, RejectsNonFiniteStartingParams) {
    auto m = tiny_model(23);
    m.params.expert_b[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
    auto docs = testing::random_documents(m, 24, 4);
    EXPECT_THROW(train(m, docs, docs, quick_config()), EvaluationError);
}

TEST(Train, EmptyTrainSet) {
    auto m = tiny_model(22);
    EXPECT_THROW(train(m, {}, {}, quick_config()), std::invalid_argument);
}

}  // namespace
}  // namespace deci
