#pragma once
// Counterfactual inference modes, the multi-label metric suite (AUC, F1, P@K),
// ablation rows and the FPR-disparity bias audit.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "deci/corpus.hpp"
#include "deci/model.hpp"
#include "deci/numerics.hpp"

namespace deci {

enum class InferenceMode {
    Deci,           // sigmoid(z_k + z_d + z_e) - sigmoid(z_d + z_e)
    Naive,          // z_k + z_d + z_e
    KnowledgeOnly,  // z_k
    WoZd,           // sigmoid(z_k + z_e) - sigmoid(z_e)
    WoZe,           // sigmoid(z_k + z_d) - sigmoid(z_d)
};

inline constexpr InferenceMode kAllModes[] = {InferenceMode::Deci, InferenceMode::WoZd,
                                              InferenceMode::WoZe, InferenceMode::Naive,
                                              InferenceMode::KnowledgeOnly};

std::string_view to_string(InferenceMode m);
InferenceMode parse_inference_mode(std::string_view s);

// Pre-sigmoid score of a mode. Positive iff the label is predicted, and
// strictly increasing in the final probability, so ranking metrics use it
// directly.
Vector decision_scores(const PathwayScores& scores, InferenceMode mode);

// Final per-label probability of a mode; for Deci this is L_f = sigmoid(z_f).
Vector final_scores(const PathwayScores& scores, InferenceMode mode);

// Mann-Whitney AUC via average ranks. nullopt when labels are all positive or
// all negative.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels);

struct F1Scores {
    double macro = 0.0;
    double micro = 0.0;
    Vector per_label;
};

// pred and gold are docs x labels 0/1 matrices. A label with no gold
// positives and no predictions scores F1 = 0.
F1Scores f1_scores(const Matrix& pred, const Matrix& gold);

// Mean over documents of |top-k ∩ gold| / k; ties go to the lower label index.
double precision_at_k(const Matrix& scores, const Matrix& gold, std::size_t k);

struct Disparity {
    std::size_t label = 0;
    std::optional<double> group_a_fpr;  // documents satisfying the attribute
    std::optional<double> group_b_fpr;
    std::optional<double> gap;          // |a - b| when both are defined
};

struct ConfoundSpec {
    std::size_t label = 0;
    int min_age = 65;
    bool holds(const Document& d) const { return d.age >= min_age; }
};

struct EvalReport {
    InferenceMode mode = InferenceMode::Deci;
    std::size_t n_docs = 0;
    double macro_auc = 0.0;
    double micro_auc = 0.0;
    double macro_f1 = 0.0;
    double micro_f1 = 0.0;
    std::map<std::size_t, double> p_at_k;
    Vector per_label_f1;
    std::vector<std::size_t> auc_skipped_labels;
    std::optional<Disparity> disparity;
};

// Forward pass over every document, in order.
std::vector<PathwayScores> score_corpus(const DeciModel& model, const Corpus& docs);

Matrix gold_matrix(const LabelSpace& labels, const Corpus& docs);

// Metrics from precomputed pathway scores. Throws EvaluationError when every
// label is degenerate for AUC.
EvalReport evaluate_scores(std::span<const PathwayScores> scores, const Matrix& gold,
                           InferenceMode mode, std::span<const std::size_t> ks);

EvalReport evaluate(const DeciModel& model, const Corpus& docs, InferenceMode mode,
                    std::span<const std::size_t> ks);

// False-positive-rate gap on the confounded label between documents that
// satisfy the confound attribute and those that do not.
Disparity disparity(std::span<const PathwayScores> scores, const Corpus& docs, const Matrix& gold,
                    const ConfoundSpec& confound, InferenceMode mode);

struct BiasAudit {
    Disparity deci;
    Disparity naive;
};

BiasAudit bias_audit(const DeciModel& model, const Corpus& docs, const ConfoundSpec& confound);

struct AblationRow {
    InferenceMode mode = InferenceMode::Deci;
    EvalReport report;
    double confounded_f1 = 0.0;
};

// One row per inference mode in kAllModes order, each carrying its disparity.
std::vector<AblationRow> ablate(std::span<const PathwayScores> scores, const Corpus& docs,
                                const Matrix& gold, std::span<const std::size_t> ks,
                                const ConfoundSpec& confound);

nlohmann::ordered_json to_json(const Disparity& d, const LabelSpace& labels);
nlohmann::ordered_json to_json(const EvalReport& r, const LabelSpace& labels);
nlohmann::ordered_json to_json(const std::vector<AblationRow>& rows, const LabelSpace& labels);

// One line per document: {"doc_id": ..., "scores": [...]}.
std::string score_dump_jsonl(const Corpus& docs, std::span<const PathwayScores> scores,
                             InferenceMode mode);

}  // namespace deci
