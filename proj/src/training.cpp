#include "deci/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "deci/evaluation.hpp"

namespace deci {

void TrainConfig::validate() const {
    if (!std::isfinite(alpha) || alpha < 0.0) throw ConfigError("alpha must be finite and >= 0");
    if (!std::isfinite(beta) || beta < 0.0) throw ConfigError("beta must be finite and >= 0");
    if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
        throw ConfigError("learning_rate must be finite and >= 0");
    }
    if (epochs == 0) throw ConfigError("epochs must be at least 1");
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    if (grad_clip_norm && !(*grad_clip_norm > 0.0)) {
        throw ConfigError("grad_clip_norm must be positive when set");
    }
}

PathwayPredictions pathway_predictions(const PathwayScores& scores) {
    return {sigmoid(scores.z_k), sigmoid(scores.z_d), sigmoid(scores.z_e)};
}

namespace {

struct TermWeights {
    double knowledge = 1.0;
    double demographic = 0.0;
    double expert = 0.0;
};

struct BatchResult {
    LossBreakdown loss;
    std::vector<double> per_doc_loss;
    std::vector<PathwayScores> scores;
};

Vector scaled(Vector v, double factor) {
    for (double& x : v) x *= factor;
    return v;
}

BatchResult run_batch(const DeciModel& model, std::span<const Document* const> batch,
                      const TermWeights& w, const BackwardOptions& opts, ModelParams* grads) {
    if (batch.empty()) throw std::invalid_argument("loss: empty batch");
    BatchResult out;
    out.per_doc_loss.reserve(batch.size());
    out.scores.reserve(batch.size());
    if (grads != nullptr) *grads = zeros_like(model.params);
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    for (const Document* doc : batch) {
        ForwardTrace trace;
        PathwayScores s = forward(model, *doc, grads != nullptr ? &trace : nullptr);
        const Vector y = model.labels.multi_hot(*doc);
        const double lk = binary_cross_entropy(sigmoid(s.z_k), y);
        const double ld = binary_cross_entropy(sigmoid(s.z_d), y);
        const double le = binary_cross_entropy(sigmoid(s.z_e), y);
        const double total = w.knowledge * lk + w.demographic * ld + w.expert * le;
        out.loss.knowledge += lk;
        out.loss.demographic += ld;
        out.loss.expert += le;
        out.loss.total += total;
        out.per_doc_loss.push_back(total);

        if (grads != nullptr) {
            PathwayGradients dz;
            if (w.knowledge != 0.0) {
                dz.d_zk = scaled(binary_cross_entropy_logit_grad(s.z_k, y), w.knowledge * inv_b);
            }
            if (w.demographic != 0.0) {
                dz.d_zd = scaled(binary_cross_entropy_logit_grad(s.z_d, y), w.demographic * inv_b);
            }
            if (w.expert != 0.0) {
                dz.d_ze = scaled(binary_cross_entropy_logit_grad(s.z_e, y), w.expert * inv_b);
            }
            backward(model.params, trace, dz, opts, *grads);
        }
        out.scores.push_back(std::move(s));
    }
    out.loss.total *= inv_b;
    out.loss.knowledge *= inv_b;
    out.loss.demographic *= inv_b;
    out.loss.expert *= inv_b;
    return out;
}

std::vector<const Document*> pointers(std::span<const Document> docs) {
    std::vector<const Document*> out;
    out.reserve(docs.size());
    for (const auto& d : docs) out.push_back(&d);
    return out;
}

BackwardOptions backward_options(const DeciModel& model, const TrainConfig& cfg) {
    return {model.config.gating, cfg.stop_bias_gradients};
}

// Dev-set summary of the debiased prediction; AUCs are left empty when every
// label is degenerate on a small split.
DevMetrics dev_metrics(const DeciModel& model, const Corpus& dev) {
    DevMetrics m;
    const auto scores = score_corpus(model, dev);
    const Matrix gold = gold_matrix(model.labels, dev);
    const std::size_t k = std::min<std::size_t>(5, model.labels.size());
    const std::size_t ks[] = {k};
    try {
        EvalReport r = evaluate_scores(scores, gold, InferenceMode::Deci, ks);
        m.micro_auc = r.micro_auc;
        m.macro_auc = r.macro_auc;
        m.micro_f1 = r.micro_f1;
        m.macro_f1 = r.macro_f1;
        m.p_at_5 = r.p_at_k.at(k);
    } catch (const EvaluationError&) {
        Matrix pred(gold.rows(), gold.cols());
        for (std::size_t d = 0; d < scores.size(); ++d) {
            Vector s = decision_scores(scores[d], InferenceMode::Deci);
            for (std::size_t l = 0; l < s.size(); ++l) pred(d, l) = s[l] > 0.0 ? 1.0 : 0.0;
        }
        F1Scores f1 = f1_scores(pred, gold);
        m.micro_f1 = f1.micro;
        m.macro_f1 = f1.macro;
    }
    return m;
}

}  // namespace

LossBreakdown loss_and_gradient(const DeciModel& model, std::span<const Document> batch,
                                const TrainConfig& cfg, ModelParams* grads) {
    const auto ptrs = pointers(batch);
    return run_batch(model, ptrs, {1.0, cfg.alpha, cfg.beta}, backward_options(model, cfg), grads)
        .loss;
}

double total_loss(const DeciModel& model, std::span<const Document> batch, const TrainConfig& cfg) {
    return loss_and_gradient(model, batch, cfg, nullptr).total;
}

ModelParams pathway_gradient(const DeciModel& model, std::span<const Document> batch,
                             const TrainConfig& cfg, Pathway which) {
    TermWeights w{0.0, 0.0, 0.0};
    switch (which) {
        case Pathway::Knowledge: w.knowledge = 1.0; break;
        case Pathway::Demographic: w.demographic = cfg.alpha; break;
        case Pathway::Expert: w.expert = cfg.beta; break;
    }
    ModelParams grads;
    const auto ptrs = pointers(batch);
    run_batch(model, ptrs, w, backward_options(model, cfg), &grads);
    return grads;
}

double global_norm(const ModelParams& grads) {
    double sq = 0.0;
    for (const auto& [name, m] : grads.arrays()) {
        for (double v : m->data()) sq += v * v;
    }
    return std::sqrt(sq);
}

AdamOptimizer::AdamOptimizer(const ModelParams& shape, double lr, double beta1, double beta2,
                             double eps)
    : m_(zeros_like(shape)), v_(zeros_like(shape)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamOptimizer::step(ModelParams& params, const ModelParams& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto p_arrays = params.arrays();
    auto m_arrays = m_.arrays();
    auto v_arrays = v_.arrays();
    auto g_arrays = grads.arrays();
    for (std::size_t a = 0; a < p_arrays.size(); ++a) {
        auto p = p_arrays[a].second->data();
        auto m = m_arrays[a].second->data();
        auto v = v_arrays[a].second->data();
        auto g = g_arrays[a].second->data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

nlohmann::ordered_json to_json(const EpochRecord& r) {
    auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    };
    nlohmann::ordered_json dev;
    dev["micro_f1"] = r.dev.micro_f1;
    dev["macro_f1"] = r.dev.macro_f1;
    dev["micro_auc"] = opt(r.dev.micro_auc);
    dev["macro_auc"] = opt(r.dev.macro_auc);
    dev["p_at_5"] = r.dev.p_at_5;
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["train_micro_f1"] = r.train_micro_f1;
    j["dev_metrics"] = dev;
    return j;
}

TrainResult train(DeciModel& model, const Corpus& train_docs, const Corpus& dev_docs,
                  const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch) {
    cfg.validate();
    if (train_docs.empty()) throw std::invalid_argument("train: empty training set");
    model.params.validate();

    const TermWeights weights{1.0, cfg.alpha, cfg.beta};
    const BackwardOptions opts = backward_options(model, cfg);
    AdamOptimizer adam(model.params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                       cfg.adam_eps);
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(train_docs.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    ModelParams best = model.params;
    bool have_best = false;
    ModelParams grads = zeros_like(model.params);
    std::vector<double> doc_loss(train_docs.size());
    std::vector<const Document*> batch;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);
        Matrix train_pred(train_docs.size(), model.labels.size());
        std::size_t batch_no = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(&train_docs[order[i]]);

            BatchResult br = run_batch(model, batch, weights, opts, &grads);
            const double norm = global_norm(grads);
            if (!std::isfinite(br.loss.total) || !std::isfinite(norm)) {
                throw NumericalError("non-finite loss in epoch " + std::to_string(epoch) +
                                     ", batch " + std::to_string(batch_no) + " (first document " +
                                     batch.front()->id + ")");
            }
            for (std::size_t i = start; i < end; ++i) {
                doc_loss[order[i]] = br.per_doc_loss[i - start];
                Vector dec = decision_scores(br.scores[i - start], InferenceMode::Deci);
                for (std::size_t l = 0; l < dec.size(); ++l) {
                    train_pred(order[i], l) = dec[l] > 0.0 ? 1.0 : 0.0;
                }
            }
            if (cfg.grad_clip_norm && norm > *cfg.grad_clip_norm) {
                const double factor = *cfg.grad_clip_norm / norm;
                for (auto& [name, m] : grads.arrays()) {
                    for (double& v : m->data()) v *= factor;
                }
            }
            adam.step(model.params, grads);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        double sum = 0.0;
        for (double l : doc_loss) sum += l;
        rec.train_loss = sum / static_cast<double>(train_docs.size());
        rec.train_micro_f1 = f1_scores(train_pred, gold_matrix(model.labels, train_docs)).micro;
        if (!dev_docs.empty()) {
            rec.dev = dev_metrics(model, dev_docs);
            if (!have_best || rec.dev.micro_f1 >= result.best_dev_micro_f1) {
                best = model.params;
                have_best = true;
                result.best_epoch = epoch;
                result.best_dev_micro_f1 = rec.dev.micro_f1;
            }
        }
        result.log.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    if (have_best) {
        model.params = std::move(best);
    } else {
        result.best_epoch = cfg.epochs;
    }
    return result;
}

}  // namespace deci
