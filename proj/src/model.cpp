#include "deci/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace deci {

std::string_view to_string(GatingMode m) {
    return m == GatingMode::PerLabel ? "per_label" : "per_document";
}

GatingMode parse_gating_mode(std::string_view s) {
    if (s == "per_label") return GatingMode::PerLabel;
    if (s == "per_document") return GatingMode::PerDocument;
    throw ConfigError("unknown gating mode: " + std::string(s));
}

ModelParams ModelParams::zeros(std::size_t vocab_size, std::size_t n_labels,
                               const ModelConfig& cfg) {
    if (cfg.n_experts == 0) throw ConfigError("n_experts must be at least 1");
    if (cfg.d_e == 0 || cfg.d_h == 0) throw ConfigError("model dimensions must be positive");
    if (vocab_size < reserved::kCount) throw ConfigError("vocabulary smaller than the reserved set");
    if (n_labels == 0) throw ConfigError("label space is empty");
    ModelParams p;
    p.embedding = Matrix(vocab_size, cfg.d_e);
    p.enc_proj = Matrix(cfg.d_e, cfg.d_h);
    p.enc_bias = Matrix(1, cfg.d_h);
    p.label_queries = Matrix(n_labels, cfg.d_h);
    p.expert_w.assign(cfg.n_experts, Matrix(n_labels, cfg.d_h));
    p.expert_b.assign(cfg.n_experts, Matrix(1, n_labels));
    p.gate_w = Matrix(cfg.d_h, cfg.n_experts);
    p.gate_bias = Matrix(1, cfg.n_experts);
    return p;
}

ModelParams ModelParams::initialize(std::size_t vocab_size, std::size_t n_labels,
                                    const ModelConfig& cfg, Rng& rng) {
    ModelParams p = zeros(vocab_size, n_labels, cfg);
    auto fill_uniform = [&rng](Matrix& m, double limit) {
        for (double& v : m.data()) v = rng.uniform(-limit, limit);
    };
    auto glorot = [](std::size_t fan_in, std::size_t fan_out) {
        return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    };
    fill_uniform(p.embedding, 0.1);
    for (double& v : p.embedding.row(reserved::kPad)) v = 0.0;
    fill_uniform(p.enc_proj, glorot(cfg.d_e, cfg.d_h));
    fill_uniform(p.label_queries, glorot(cfg.d_h, n_labels));
    for (auto& w : p.expert_w) fill_uniform(w, glorot(cfg.d_h, n_labels));
    return p;
}

void ModelParams::validate() const {
    const std::size_t de = d_e(), dh = d_h(), nl = n_labels(), fn = n_experts();
    auto check = [](const Matrix& m, std::size_t r, std::size_t c, const char* name) {
        if (m.rows() != r || m.cols() != c) {
            throw DimensionError(std::string("ModelParams: ") + name + " has shape " +
                                 std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                                 ", expected " + std::to_string(r) + "x" + std::to_string(c));
        }
    };
    if (fn == 0) throw DimensionError("ModelParams: at least one expert is required");
    check(enc_proj, de, dh, "enc_proj");
    check(enc_bias, 1, dh, "enc_bias");
    check(label_queries, nl, dh, "label_queries");
    if (expert_b.size() != fn) throw DimensionError("ModelParams: expert weight/bias count mismatch");
    for (std::size_t i = 0; i < fn; ++i) {
        check(expert_w[i], nl, dh, "expert_w");
        check(expert_b[i], 1, nl, "expert_b");
    }
    check(gate_w, dh, fn, "gate_w");
    check(gate_bias, 1, fn, "gate_bias");
    for (const auto& [name, m] : arrays()) {
        if (!m->all_finite()) throw EvaluationError("ModelParams: non-finite entry in " + name);
    }
}

std::vector<std::pair<std::string, const Matrix*>> ModelParams::arrays() const {
    std::vector<std::pair<std::string, const Matrix*>> out = {
        {"embedding", &embedding},
        {"enc_proj", &enc_proj},
        {"enc_bias", &enc_bias},
        {"label_queries", &label_queries},
    };
    for (std::size_t i = 0; i < expert_w.size(); ++i)
        out.emplace_back("expert_w" + std::to_string(i), &expert_w[i]);
    for (std::size_t i = 0; i < expert_b.size(); ++i)
        out.emplace_back("expert_b" + std::to_string(i), &expert_b[i]);
    out.emplace_back("gate_w", &gate_w);
    out.emplace_back("gate_bias", &gate_bias);
    return out;
}

std::vector<std::pair<std::string, Matrix*>> ModelParams::arrays() {
    std::vector<std::pair<std::string, Matrix*>> out;
    for (auto& [name, m] : std::as_const(*this).arrays()) {
        out.emplace_back(name, const_cast<Matrix*>(m));
    }
    return out;
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, m] : arrays()) n += m->size();
    return n;
}

ModelParams zeros_like(const ModelParams& like) {
    ModelParams out = like;
    for (auto& [name, m] : out.arrays()) m->fill(0.0);
    return out;
}

Encoded encode(const ModelParams& params, std::span<const TokenId> ids) {
    const std::size_t dh = params.d_h();
    Encoded out{Matrix(ids.size(), dh), {}};
    for (std::size_t n = 0; n < ids.size(); ++n) {
        const TokenId id = ids[n];
        if (id < 0 || static_cast<std::size_t>(id) >= params.vocab_size()) {
            throw std::out_of_range("encode: token id " + std::to_string(id) +
                                    " outside vocabulary of size " +
                                    std::to_string(params.vocab_size()));
        }
        if (id == reserved::kPad) continue;
        out.positions.push_back(n);
        auto row = out.e.row(n);
        std::copy(params.enc_bias.data().begin(), params.enc_bias.data().end(), row.begin());
        add_vec_mat(params.embedding.row(static_cast<std::size_t>(id)), params.enc_proj, row);
        for (double& v : row) v = std::tanh(v);
    }
    return out;
}

namespace {

// Rows of the encoding at non-PAD positions, in position order.
Matrix active_rows(const Encoded& enc) {
    Matrix out(enc.positions.size(), enc.e.cols());
    for (std::size_t j = 0; j < enc.positions.size(); ++j) {
        auto src = enc.e.row(enc.positions[j]);
        std::copy(src.begin(), src.end(), out.row(j).begin());
    }
    return out;
}

}  // namespace

Attention label_attention(const ModelParams& params, const Encoded& enc) {
    const std::size_t nl = params.n_labels();
    Attention out{Matrix(nl, params.d_h()), Matrix(nl, enc.e.rows()), enc.positions.empty()};
    if (out.degenerate) return out;
    const Matrix active = active_rows(enc);
    Vector logits(enc.positions.size());
    for (std::size_t l = 0; l < nl; ++l) {
        std::fill(logits.begin(), logits.end(), 0.0);
        add_mat_vec(active, params.label_queries.row(l), logits);
        softmax_inplace(logits);
        add_vec_mat(logits, active, out.h.row(l));
        for (std::size_t j = 0; j < enc.positions.size(); ++j) out.weights(l, enc.positions[j]) = logits[j];
    }
    return out;
}

Matrix expert_scores(const ModelParams& params, const Matrix& h) {
    const std::size_t nl = params.n_labels();
    if (h.rows() != nl || h.cols() != params.d_h()) {
        throw DimensionError("expert_scores: H must be N_L x d_h");
    }
    Matrix s(params.n_experts(), nl);
    for (std::size_t i = 0; i < params.n_experts(); ++i) {
        for (std::size_t l = 0; l < nl; ++l) {
            s(i, l) = dot(params.expert_w[i].row(l), h.row(l)) + params.expert_b[i](0, l);
        }
    }
    return s;
}

namespace {

// logits = x . gate_w + gate_bias
void gate_logits(const ModelParams& params, std::span<const double> x, std::span<double> out) {
    std::copy(params.gate_bias.data().begin(), params.gate_bias.data().end(), out.begin());
    add_vec_mat(x, params.gate_w, out);
}

Vector label_mean(const Matrix& h) {
    Vector mean(h.cols(), 0.0);
    for (std::size_t l = 0; l < h.rows(); ++l) axpy(1.0, h.row(l), mean);
    for (double& v : mean) v /= static_cast<double>(h.rows());
    return mean;
}

}  // namespace

Matrix gate_weights(const ModelParams& params, const Matrix& h, GatingMode mode) {
    const std::size_t nl = params.n_labels(), fn = params.n_experts();
    if (h.rows() != nl || h.cols() != params.d_h()) {
        throw DimensionError("gate_weights: H must be N_L x d_h");
    }
    Matrix g(nl, fn);
    if (mode == GatingMode::PerLabel) {
        for (std::size_t l = 0; l < nl; ++l) {
            auto row = g.row(l);
            gate_logits(params, h.row(l), row);
            softmax_inplace(row);
        }
    } else {
        Vector row(fn);
        gate_logits(params, label_mean(h), row);
        softmax_inplace(row);
        for (std::size_t l = 0; l < nl; ++l) std::copy(row.begin(), row.end(), g.row(l).begin());
    }
    return g;
}

Vector mix_experts(const Matrix& weights, const Matrix& scores) {
    if (weights.rows() != scores.cols() || weights.cols() != scores.rows()) {
        throw DimensionError("mix_experts: weights must be N_L x F_N and scores F_N x N_L");
    }
    const std::size_t nl = weights.rows(), fn = weights.cols();
    Vector out(nl);
    Vector terms(fn);
    for (std::size_t l = 0; l < nl; ++l) {
        for (std::size_t i = 0; i < fn; ++i) terms[i] = weights(l, i) * scores(i, l);
        std::sort(terms.begin(), terms.end());
        double sum = 0.0;
        for (double t : terms) sum += t;
        out[l] = sum;
    }
    return out;
}

Matrix uniform_weights(std::size_t n_labels, std::size_t n_experts) {
    Vector row = softmax(Vector(n_experts, 0.0));
    Matrix u(n_labels, n_experts);
    for (std::size_t l = 0; l < n_labels; ++l) std::copy(row.begin(), row.end(), u.row(l).begin());
    return u;
}

Vector pathway_zk(const ModelParams& params, const Matrix& h_k, GatingMode mode) {
    return mix_experts(gate_weights(params, h_k, mode), expert_scores(params, h_k));
}

Vector pathway_ze(const ModelParams& params, const Matrix& h_k) {
    return mix_experts(uniform_weights(params.n_labels(), params.n_experts()),
                       expert_scores(params, h_k));
}

Vector counterfactual_scores(std::span<const double> z_k, std::span<const double> z_d,
                             std::span<const double> z_e) {
    if (z_k.size() != z_d.size() || z_k.size() != z_e.size()) {
        throw DimensionError("counterfactual_scores: pathway lengths differ");
    }
    Vector z_f(z_k.size());
    for (std::size_t l = 0; l < z_k.size(); ++l) z_f[l] = sigmoid_difference(z_k[l], z_d[l] + z_e[l]);
    return z_f;
}

DeciModel DeciModel::create(const ModelConfig& cfg, Vocabulary vocab, LabelSpace labels, Rng& rng) {
    DeciModel m{cfg, std::move(vocab), std::move(labels), {}};
    m.params = ModelParams::initialize(m.vocab.size(), m.labels.size(), cfg, rng);
    return m;
}

namespace {

PathTrace run_path(const DeciModel& model, const Document& doc, InputMode mode) {
    PathTrace t;
    t.ids = build_model_input(model.vocab, doc, mode, model.config.max_len);
    t.enc = encode(model.params, t.ids);
    t.attn = label_attention(model.params, t.enc);
    t.scores = expert_scores(model.params, t.attn.h);
    t.gates = gate_weights(model.params, t.attn.h, model.config.gating);
    return t;
}

}  // namespace

Vector pathway_zd(const DeciModel& model, const Document& doc) {
    PathTrace t = run_path(model, doc, InputMode::DemographicOnly);
    return mix_experts(t.gates, t.scores);
}

PathwayScores forward(const DeciModel& model, const Document& doc, ForwardTrace* trace) {
    PathTrace full = run_path(model, doc, InputMode::Full);
    PathTrace demo = run_path(model, doc, InputMode::DemographicOnly);
    PathwayScores s;
    s.z_k = mix_experts(full.gates, full.scores);
    s.z_e = mix_experts(uniform_weights(model.params.n_labels(), model.params.n_experts()),
                        full.scores);
    s.z_d = mix_experts(demo.gates, demo.scores);
    s.z_f = counterfactual_scores(s.z_k, s.z_d, s.z_e);
    if (trace != nullptr) {
        trace->full = std::move(full);
        trace->demographic = std::move(demo);
    }
    return s;
}

namespace {

// Gradients flowing into one path's expert scores and gates.
struct HeadUpstream {
    std::span<const double> d_gated;    // through the learned gate
    std::span<const double> d_uniform;  // through the uniform mixture
};

// Backpropagates from the pathway scores into experts and gate, returning the
// gradient with respect to H. The gated and uniform parts of dH are returned
// separately so either can be stopped.
std::pair<Matrix, Matrix> head_backward(const ModelParams& params, const PathTrace& t,
                                        const HeadUpstream& up, GatingMode mode,
                                        ModelParams& grads) {
    const std::size_t nl = params.n_labels(), fn = params.n_experts(), dh = params.d_h();
    const Matrix& h = t.attn.h;
    Matrix dh_gated(nl, dh), dh_uniform(nl, dh);
    const double u = 1.0 / static_cast<double>(fn);

    // Experts: S(i, l) = W_i[l] . H[l] + b_i[l]
    for (std::size_t i = 0; i < fn; ++i) {
        for (std::size_t l = 0; l < nl; ++l) {
            const double dg = up.d_gated.empty() ? 0.0 : up.d_gated[l] * t.gates(l, i);
            const double du = up.d_uniform.empty() ? 0.0 : up.d_uniform[l] * u;
            const double ds = dg + du;
            if (ds == 0.0) continue;
            axpy(ds, h.row(l), grads.expert_w[i].row(l));
            grads.expert_b[i](0, l) += ds;
            if (dg != 0.0) axpy(dg, params.expert_w[i].row(l), dh_gated.row(l));
            if (du != 0.0) axpy(du, params.expert_w[i].row(l), dh_uniform.row(l));
        }
    }
    if (up.d_gated.empty()) return {std::move(dh_gated), std::move(dh_uniform)};

    // Gate: softmax backward per label row.
    Matrix dlogit(nl, fn);
    for (std::size_t l = 0; l < nl; ++l) {
        double inner = 0.0;
        for (std::size_t i = 0; i < fn; ++i) inner += t.gates(l, i) * up.d_gated[l] * t.scores(i, l);
        for (std::size_t i = 0; i < fn; ++i) {
            dlogit(l, i) = t.gates(l, i) * (up.d_gated[l] * t.scores(i, l) - inner);
        }
    }
    if (mode == GatingMode::PerLabel) {
        for (std::size_t l = 0; l < nl; ++l) {
            auto dz = dlogit.row(l);
            auto hl = h.row(l);
            for (std::size_t k = 0; k < dh; ++k) {
                axpy(hl[k], dz, grads.gate_w.row(k));
                dh_gated(l, k) += dot(params.gate_w.row(k), dz);
            }
            axpy(1.0, dz, grads.gate_bias.row(0));
        }
    } else {
        Vector total(fn, 0.0);
        for (std::size_t l = 0; l < nl; ++l) axpy(1.0, dlogit.row(l), total);
        const Vector mean = label_mean(h);
        for (std::size_t k = 0; k < dh; ++k) {
            axpy(mean[k], total, grads.gate_w.row(k));
            const double back = dot(params.gate_w.row(k), total) / static_cast<double>(nl);
            for (std::size_t l = 0; l < nl; ++l) dh_gated(l, k) += back;
        }
        axpy(1.0, total, grads.gate_bias.row(0));
    }
    return {std::move(dh_gated), std::move(dh_uniform)};
}

// Backpropagates dH through label attention and the encoder.
void body_backward(const ModelParams& params, const PathTrace& t, const Matrix& d_h,
                   ModelParams& grads) {
    const Encoded& enc = t.enc;
    if (enc.positions.empty()) return;
    const std::size_t nl = params.n_labels(), n_active = enc.positions.size();
    const Matrix active = active_rows(enc);
    // Per position: attention weights (a) and softmax-backward terms (g) across labels.
    Matrix a_t(n_active, nl), g_t(n_active, nl);
    Vector da(n_active), g(n_active);
    for (std::size_t l = 0; l < nl; ++l) {
        std::fill(da.begin(), da.end(), 0.0);
        add_mat_vec(active, d_h.row(l), da);
        double inner = 0.0;
        for (std::size_t j = 0; j < n_active; ++j) inner += t.attn.weights(l, enc.positions[j]) * da[j];
        for (std::size_t j = 0; j < n_active; ++j) {
            const double w = t.attn.weights(l, enc.positions[j]);
            g[j] = w * (da[j] - inner);
            a_t(j, l) = w;
            g_t(j, l) = g[j];
        }
        add_vec_mat(g, active, grads.label_queries.row(l));
    }
    Matrix de(n_active, params.d_h());
    for (std::size_t j = 0; j < n_active; ++j) {
        add_vec_mat(a_t.row(j), d_h, de.row(j));
        add_vec_mat(g_t.row(j), params.label_queries, de.row(j));
    }
    // Pre-activation gradients per position, then the projection gradient as
    // one accumulated product over positions.
    const std::size_t de_dim = params.d_e();
    Matrix pre(n_active, params.d_h());
    Matrix emb_t(de_dim, n_active);
    for (std::size_t j = 0; j < n_active; ++j) {
        auto e = active.row(j);
        auto d = de.row(j);
        auto p = pre.row(j);
        for (std::size_t k = 0; k < p.size(); ++k) p[k] = d[k] * (1.0 - e[k] * e[k]);
        axpy(1.0, p, grads.enc_bias.row(0));
        const auto id = static_cast<std::size_t>(t.ids[enc.positions[j]]);
        auto emb = params.embedding.row(id);
        for (std::size_t k = 0; k < de_dim; ++k) emb_t(k, j) = emb[k];
        add_mat_vec(params.enc_proj, p, grads.embedding.row(id));
    }
    for (std::size_t k = 0; k < de_dim; ++k) add_vec_mat(emb_t.row(k), pre, grads.enc_proj.row(k));
}

}  // namespace

void backward(const ModelParams& params, const ForwardTrace& trace, const PathwayGradients& dz,
              const BackwardOptions& opts, ModelParams& grads) {
    {
        auto [dh_gated, dh_uniform] =
            head_backward(params, trace.full, {dz.d_zk, dz.d_ze}, opts.gating, grads);
        if (!opts.stop_bias_gradients) axpy(1.0, dh_uniform.data(), dh_gated.data());
        body_backward(params, trace.full, dh_gated, grads);
    }
    if (!dz.d_zd.empty()) {
        auto [dh_gated, dh_uniform] =
            head_backward(params, trace.demographic, {dz.d_zd, {}}, opts.gating, grads);
        if (!opts.stop_bias_gradients) body_backward(params, trace.demographic, dh_gated, grads);
    }
}

}  // namespace deci
