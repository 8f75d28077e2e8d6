#pragma once
// Joint objective over the three pathway predictions, Adam training with
// best-dev retention, and the binary checkpoint format.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "deci/corpus.hpp"
#include "deci/model.hpp"
#include "deci/numerics.hpp"

namespace deci {

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    double alpha = 0.5;
    double beta = 0.5;
    double learning_rate = 1e-3;
    std::size_t epochs = 20;
    std::size_t batch_size = 8;
    std::uint64_t seed = 1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::optional<double> grad_clip_norm = 5.0;
    // Keep z_d / z_e gradients out of the shared encoder and attention.
    bool stop_bias_gradients = false;

    // Throws ConfigError.
    void validate() const;
};

struct PathwayPredictions {
    Vector l_k;
    Vector l_d;
    Vector l_e;
};

PathwayPredictions pathway_predictions(const PathwayScores& scores);

struct LossBreakdown {
    double total = 0.0;
    double knowledge = 0.0;    // mean BCE of L_K
    double demographic = 0.0;  // mean BCE of L_D
    double expert = 0.0;       // mean BCE of L_E
};

// Mean over the batch of BCE(L_K) + alpha BCE(L_D) + beta BCE(L_E). Throws
// std::invalid_argument on an empty batch.
double total_loss(const DeciModel& model, std::span<const Document> batch, const TrainConfig& cfg);

// Same loss, plus its gradient with respect to every parameter array when
// `grads` is non-null (overwritten, shaped like model.params).
LossBreakdown loss_and_gradient(const DeciModel& model, std::span<const Document> batch,
                                const TrainConfig& cfg, ModelParams* grads);

enum class Pathway { Knowledge, Demographic, Expert };

// Gradient of a single weighted term of the objective (e.g. alpha * L_D).
ModelParams pathway_gradient(const DeciModel& model, std::span<const Document> batch,
                             const TrainConfig& cfg, Pathway which);

double global_norm(const ModelParams& grads);

class AdamOptimizer {
public:
    AdamOptimizer(const ModelParams& shape, double lr, double beta1, double beta2, double eps);

    void step(ModelParams& params, const ModelParams& grads);
    std::size_t steps() const noexcept { return t_; }

private:
    ModelParams m_;
    ModelParams v_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

struct DevMetrics {
    double micro_f1 = 0.0;
    double macro_f1 = 0.0;
    std::optional<double> micro_auc;
    std::optional<double> macro_auc;
    double p_at_5 = 0.0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    // Micro-F1 of the debiased prediction on each training batch, measured
    // before that batch's update.
    double train_micro_f1 = 0.0;
    DevMetrics dev;
};

nlohmann::ordered_json to_json(const EpochRecord& r);

struct TrainResult {
    std::vector<EpochRecord> log;
    std::size_t best_epoch = 0;
    double best_dev_micro_f1 = 0.0;
};

// Mini-batch Adam on total_loss. Shuffle order is derived from cfg.seed. The
// parameters with the best dev micro-F1 of the debiased prediction are left in
// model.params (ties go to the later epoch). Throws NumericalError naming the
// batch on a non-finite loss or gradient.
TrainResult train(DeciModel& model, const Corpus& train_docs, const Corpus& dev_docs,
                  const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    DeciModel model;
    nlohmann::json config;
};

// Rounds every parameter to single precision, the checkpoint storage format.
void round_to_storage_precision(ModelParams& params);

std::string serialize_checkpoint(const DeciModel& model, const nlohmann::json& config);
// Throws FormatError; nothing is returned unless the whole buffer is valid.
Checkpoint deserialize_checkpoint(std::string_view bytes);

// Written to a temporary sibling and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const DeciModel& model,
                     const nlohmann::json& config);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace deci
