#include "deci/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace deci {

std::string_view to_string(InferenceMode m) {
    switch (m) {
        case InferenceMode::Deci: return "deci";
        case InferenceMode::Naive: return "naive";
        case InferenceMode::KnowledgeOnly: return "knowledge-only";
        case InferenceMode::WoZd: return "wo-zd";
        case InferenceMode::WoZe: return "wo-ze";
    }
    return "unknown";
}

InferenceMode parse_inference_mode(std::string_view s) {
    for (auto m : kAllModes) {
        if (to_string(m) == s) return m;
    }
    throw ConfigError("unknown inference mode: " + std::string(s));
}

Vector decision_scores(const PathwayScores& s, InferenceMode mode) {
    const std::size_t n = s.z_k.size();
    if (s.z_d.size() != n || s.z_e.size() != n) {
        throw DimensionError("decision_scores: pathway lengths differ");
    }
    Vector out(n);
    for (std::size_t l = 0; l < n; ++l) {
        switch (mode) {
            case InferenceMode::Deci:
                out[l] = sigmoid_difference(s.z_k[l], s.z_d[l] + s.z_e[l]);
                break;
            case InferenceMode::Naive: out[l] = s.z_k[l] + s.z_d[l] + s.z_e[l]; break;
            case InferenceMode::KnowledgeOnly: out[l] = s.z_k[l]; break;
            case InferenceMode::WoZd: out[l] = sigmoid_difference(s.z_k[l], s.z_e[l]); break;
            case InferenceMode::WoZe: out[l] = sigmoid_difference(s.z_k[l], s.z_d[l]); break;
        }
    }
    return out;
}

Vector final_scores(const PathwayScores& scores, InferenceMode mode) {
    return sigmoid(decision_scores(scores, mode));
}

std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw DimensionError("roc_auc: length mismatch");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (int y : labels) n_pos += y != 0;
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Sum of 1-based average ranks of the positives; every term is a multiple
    // of 1/2, so the sum is exact.
    double pos_rank_sum = 0.0;
    for (std::size_t start = 0; start < n;) {
        std::size_t end = start;
        std::size_t pos_in_group = 0;
        while (end < n && scores[order[end]] == scores[order[start]]) {
            pos_in_group += labels[order[end]] != 0;
            ++end;
        }
        const double avg_rank = (static_cast<double>(start + 1) + static_cast<double>(end)) / 2.0;
        pos_rank_sum += avg_rank * static_cast<double>(pos_in_group);
        start = end;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

namespace {

double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
    const std::size_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

}  // namespace

F1Scores f1_scores(const Matrix& pred, const Matrix& gold) {
    if (pred.rows() != gold.rows() || pred.cols() != gold.cols()) {
        throw DimensionError("f1_scores: prediction and gold shapes differ");
    }
    const std::size_t nl = gold.cols();
    F1Scores out;
    out.per_label.assign(nl, 0.0);
    std::size_t tp_all = 0, fp_all = 0, fn_all = 0;
    for (std::size_t l = 0; l < nl; ++l) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t d = 0; d < gold.rows(); ++d) {
            const bool p = pred(d, l) > 0.5, g = gold(d, l) > 0.5;
            tp += p && g;
            fp += p && !g;
            fn += !p && g;
        }
        out.per_label[l] = f1_from_counts(tp, fp, fn);
        tp_all += tp;
        fp_all += fp;
        fn_all += fn;
    }
    double sum = 0.0;
    for (double f : out.per_label) sum += f;
    out.macro = nl == 0 ? 0.0 : sum / static_cast<double>(nl);
    out.micro = f1_from_counts(tp_all, fp_all, fn_all);
    return out;
}

double precision_at_k(const Matrix& scores, const Matrix& gold, std::size_t k) {
    if (k == 0) throw std::invalid_argument("precision_at_k: k must be positive");
    if (scores.rows() != gold.rows() || scores.cols() != gold.cols()) {
        throw DimensionError("precision_at_k: score and gold shapes differ");
    }
    if (k > scores.cols()) throw std::invalid_argument("precision_at_k: k exceeds label count");
    if (scores.rows() == 0) throw std::invalid_argument("precision_at_k: no documents");
    std::vector<std::size_t> idx(scores.cols());
    std::size_t hits = 0;
    for (std::size_t d = 0; d < scores.rows(); ++d) {
        std::iota(idx.begin(), idx.end(), 0);
        auto row = scores.row(d);
        std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                          [&](std::size_t a, std::size_t b) {
                              return row[a] != row[b] ? row[a] > row[b] : a < b;
                          });
        for (std::size_t j = 0; j < k; ++j) hits += gold(d, idx[j]) > 0.5;
    }
    return static_cast<double>(hits) /
           (static_cast<double>(k) * static_cast<double>(scores.rows()));
}

std::vector<PathwayScores> score_corpus(const DeciModel& model, const Corpus& docs) {
    std::vector<PathwayScores> out;
    out.reserve(docs.size());
    for (const auto& d : docs) out.push_back(forward(model, d));
    return out;
}

Matrix gold_matrix(const LabelSpace& labels, const Corpus& docs) {
    Matrix gold(docs.size(), labels.size());
    for (std::size_t d = 0; d < docs.size(); ++d) {
        auto y = labels.multi_hot(docs[d]);
        std::copy(y.begin(), y.end(), gold.row(d).begin());
    }
    return gold;
}

namespace {

Matrix decision_matrix(std::span<const PathwayScores> scores, InferenceMode mode,
                       std::size_t n_labels) {
    Matrix out(scores.size(), n_labels);
    for (std::size_t d = 0; d < scores.size(); ++d) {
        Vector s = decision_scores(scores[d], mode);
        if (s.size() != n_labels) throw DimensionError("evaluate: score width differs from gold");
        std::copy(s.begin(), s.end(), out.row(d).begin());
    }
    return out;
}

}  // namespace

EvalReport evaluate_scores(std::span<const PathwayScores> scores, const Matrix& gold,
                           InferenceMode mode, std::span<const std::size_t> ks) {
    if (scores.empty()) throw std::invalid_argument("evaluate: no documents");
    if (scores.size() != gold.rows()) throw DimensionError("evaluate: score and gold counts differ");
    const std::size_t nd = gold.rows(), nl = gold.cols();
    const Matrix dec = decision_matrix(scores, mode, nl);

    EvalReport r;
    r.mode = mode;
    r.n_docs = nd;

    Matrix pred(nd, nl);
    for (std::size_t i = 0; i < dec.size(); ++i) pred.data()[i] = dec.data()[i] > 0.0 ? 1.0 : 0.0;
    F1Scores f1 = f1_scores(pred, gold);
    r.macro_f1 = f1.macro;
    r.micro_f1 = f1.micro;
    r.per_label_f1 = std::move(f1.per_label);

    Vector col(nd);
    std::vector<int> ycol(nd);
    double auc_sum = 0.0;
    std::size_t auc_defined = 0;
    for (std::size_t l = 0; l < nl; ++l) {
        for (std::size_t d = 0; d < nd; ++d) {
            col[d] = dec(d, l);
            ycol[d] = gold(d, l) > 0.5;
        }
        if (auto auc = roc_auc(col, ycol)) {
            auc_sum += *auc;
            ++auc_defined;
        } else {
            r.auc_skipped_labels.push_back(l);
        }
    }
    if (auc_defined == 0) throw EvaluationError("evaluate: every label is degenerate for AUC");
    r.macro_auc = auc_sum / static_cast<double>(auc_defined);

    std::vector<int> ycells(gold.size());
    for (std::size_t i = 0; i < gold.size(); ++i) ycells[i] = gold.data()[i] > 0.5;
    auto micro = roc_auc(dec.data(), ycells);
    if (!micro) throw EvaluationError("evaluate: pooled labels are degenerate for AUC");
    r.micro_auc = *micro;

    for (std::size_t k : ks) r.p_at_k[k] = precision_at_k(dec, gold, k);
    return r;
}

EvalReport evaluate(const DeciModel& model, const Corpus& docs, InferenceMode mode,
                    std::span<const std::size_t> ks) {
    const auto scores = score_corpus(model, docs);
    return evaluate_scores(scores, gold_matrix(model.labels, docs), mode, ks);
}

Disparity disparity(std::span<const PathwayScores> scores, const Corpus& docs, const Matrix& gold,
                    const ConfoundSpec& confound, InferenceMode mode) {
    if (scores.size() != docs.size() || docs.size() != gold.rows()) {
        throw DimensionError("disparity: scores, documents and gold differ in length");
    }
    if (confound.label >= gold.cols()) throw std::invalid_argument("disparity: label out of range");
    std::size_t neg_a = 0, fp_a = 0, neg_b = 0, fp_b = 0;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        if (gold(d, confound.label) > 0.5) continue;
        const bool positive = decision_scores(scores[d], mode)[confound.label] > 0.0;
        if (confound.holds(docs[d])) {
            ++neg_a;
            fp_a += positive;
        } else {
            ++neg_b;
            fp_b += positive;
        }
    }
    Disparity out;
    out.label = confound.label;
    if (neg_a) out.group_a_fpr = static_cast<double>(fp_a) / static_cast<double>(neg_a);
    if (neg_b) out.group_b_fpr = static_cast<double>(fp_b) / static_cast<double>(neg_b);
    if (out.group_a_fpr && out.group_b_fpr) {
        out.gap = std::fabs(*out.group_a_fpr - *out.group_b_fpr);
    }
    return out;
}

BiasAudit bias_audit(const DeciModel& model, const Corpus& docs, const ConfoundSpec& confound) {
    const auto scores = score_corpus(model, docs);
    const Matrix gold = gold_matrix(model.labels, docs);
    return {disparity(scores, docs, gold, confound, InferenceMode::Deci),
            disparity(scores, docs, gold, confound, InferenceMode::Naive)};
}

std::vector<AblationRow> ablate(std::span<const PathwayScores> scores, const Corpus& docs,
                                const Matrix& gold, std::span<const std::size_t> ks,
                                const ConfoundSpec& confound) {
    std::vector<AblationRow> rows;
    for (auto mode : kAllModes) {
        AblationRow row;
        row.mode = mode;
        row.report = evaluate_scores(scores, gold, mode, ks);
        row.report.disparity = disparity(scores, docs, gold, confound, mode);
        row.confounded_f1 = row.report.per_label_f1.at(confound.label);
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace {

nlohmann::ordered_json optional_number(const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

nlohmann::ordered_json to_json(const Disparity& d, const LabelSpace& labels) {
    nlohmann::ordered_json j;
    j["label"] = labels.label(d.label);
    j["group_a_fpr"] = optional_number(d.group_a_fpr);
    j["group_b_fpr"] = optional_number(d.group_b_fpr);
    j["gap"] = optional_number(d.gap);
    return j;
}

nlohmann::ordered_json to_json(const EvalReport& r, const LabelSpace& labels) {
    nlohmann::ordered_json j;
    j["mode"] = std::string(to_string(r.mode));
    j["n_docs"] = r.n_docs;
    j["macro_auc"] = r.macro_auc;
    j["micro_auc"] = r.micro_auc;
    j["macro_f1"] = r.macro_f1;
    j["micro_f1"] = r.micro_f1;
    nlohmann::ordered_json pk = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.p_at_k) pk[std::to_string(k)] = v;
    j["p_at_k"] = pk;
    nlohmann::ordered_json per = nlohmann::ordered_json::object();
    for (std::size_t l = 0; l < r.per_label_f1.size(); ++l) per[labels.label(l)] = r.per_label_f1[l];
    j["per_label_f1"] = per;
    nlohmann::ordered_json skipped = nlohmann::ordered_json::array();
    for (auto l : r.auc_skipped_labels) skipped.push_back(labels.label(l));
    j["auc_skipped_labels"] = skipped;
    if (r.disparity) j["disparity"] = to_json(*r.disparity, labels);
    return j;
}

nlohmann::ordered_json to_json(const std::vector<AblationRow>& rows, const LabelSpace& labels) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& row : rows) {
        nlohmann::ordered_json j = to_json(row.report, labels);
        j["confounded_label_f1"] = row.confounded_f1;
        arr.push_back(std::move(j));
    }
    return arr;
}

std::string score_dump_jsonl(const Corpus& docs, std::span<const PathwayScores> scores,
                             InferenceMode mode) {
    if (docs.size() != scores.size()) throw DimensionError("score dump: length mismatch");
    std::string out;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        nlohmann::ordered_json j;
        j["doc_id"] = docs[d].id;
        j["scores"] = final_scores(scores[d], mode);
        out += j.dump();
        out.push_back('\n');
    }
    return out;
}

}  // namespace deci
