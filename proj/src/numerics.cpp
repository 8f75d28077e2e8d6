#include "deci/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace deci {

namespace {

std::string shape(const Matrix& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

// log(cosh(x)) without overflow.
double log_cosh(double x) {
    double a = std::fabs(x);
    return a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw DimensionError("Matrix: data length does not match rows*cols");
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: " + shape(a) + " times " + shape(b));
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto dst = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) axpy(a(i, k), b.row(k), dst);
    }
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError("add: " + shape(a) + " plus " + shape(b));
    }
    Matrix out = a;
    axpy(1.0, b.data(), out.data());
    return out;
}

Matrix scale(const Matrix& a, double factor) {
    Matrix out = a;
    for (double& v : out.data()) v *= factor;
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
    // Four independent accumulators break the add dependency chain.
    const std::size_t n = a.size(), n4 = n - n % 4;
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    for (std::size_t i = 0; i < n4; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (std::size_t i = n4; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

void axpy(double factor, std::span<const double> x, std::span<double> y) {
    if (x.size() != y.size()) throw DimensionError("axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += factor * x[i];
}

void add_vec_mat(std::span<const double> x, const Matrix& m, std::span<double> y) {
    if (x.size() != m.rows() || y.size() != m.cols()) throw DimensionError("add_vec_mat: shape mismatch");
    const std::size_t rows = m.rows(), cols = m.cols(), r4 = rows - rows % 4;
    // Four rows per pass so each output element is loaded and stored once per block.
    for (std::size_t k = 0; k < r4; k += 4) {
        const double x0 = x[k], x1 = x[k + 1], x2 = x[k + 2], x3 = x[k + 3];
        const double* m0 = m.row(k).data();
        const double* m1 = m0 + cols;
        const double* m2 = m1 + cols;
        const double* m3 = m2 + cols;
        for (std::size_t j = 0; j < cols; ++j) y[j] += (x0 * m0[j] + x1 * m1[j]) + (x2 * m2[j] + x3 * m3[j]);
    }
    for (std::size_t k = r4; k < rows; ++k) axpy(x[k], m.row(k), y);
}

void add_mat_vec(const Matrix& m, std::span<const double> v, std::span<double> y) {
    if (v.size() != m.cols() || y.size() != m.rows()) throw DimensionError("add_mat_vec: shape mismatch");
    for (std::size_t k = 0; k < m.rows(); ++k) y[k] += dot(m.row(k), v);
}

double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

Vector sigmoid(std::span<const double> x) {
    Vector out(x.size());
    std::transform(x.begin(), x.end(), out.begin(), [](double v) { return sigmoid(v); });
    return out;
}

double sigmoid_difference(double k, double s) noexcept {
    if (k == 0.0) return 0.0;
    // sigmoid(u) - sigmoid(v) = sinh((u-v)/2) / (2 cosh(u/2) cosh(v/2)), taken in
    // log space with u - v = k exactly.
    double y = std::fabs(k) / 2.0;
    double log_sinh = y + std::log(-std::expm1(-2.0 * y)) - std::numbers::ln2;
    double log_mag =
        log_sinh - std::numbers::ln2 - log_cosh((k + s) / 2.0) - log_cosh(s / 2.0);
    double mag = std::exp(log_mag);
    return k > 0.0 ? mag : -mag;
}

void softmax_inplace(std::span<double> x) {
    if (x.empty()) throw DimensionError("softmax: empty input");
    double mx = *std::max_element(x.begin(), x.end());
    for (double& v : x) v = std::exp(v - mx);
    // Sorted summation keeps the result exactly permutation-equivariant.
    Vector sorted(x.begin(), x.end());
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double v : sorted) sum += v;
    for (double& v : x) v /= sum;
}

Vector softmax(std::span<const double> x) {
    Vector out(x.begin(), x.end());
    softmax_inplace(out);
    return out;
}

double binary_cross_entropy(std::span<const double> p, std::span<const double> y) {
    if (p.size() != y.size()) throw DimensionError("binary_cross_entropy: length mismatch");
    if (p.empty()) throw DimensionError("binary_cross_entropy: empty input");
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        double pc = std::clamp(p[i], kLogClamp, 1.0 - kLogClamp);
        total -= y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc);
    }
    return total / static_cast<double>(p.size());
}

Vector binary_cross_entropy_logit_grad(std::span<const double> z, std::span<const double> y) {
    if (z.size() != y.size()) throw DimensionError("binary_cross_entropy: length mismatch");
    if (z.empty()) throw DimensionError("binary_cross_entropy: empty input");
    Vector g(z.size());
    double n = static_cast<double>(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        double p = sigmoid(z[i]);
        if (p < kLogClamp || p > 1.0 - kLogClamp) continue;
        g[i] = (p - y[i]) / n;
    }
    return g;
}

GradCheckReport finite_difference_check(const std::function<double()>& loss,
                                        std::span<const GradCheckEntry> params, double step,
                                        double tol) {
    if (!(step >= 1e-6 && step <= 1e-3)) {
        throw std::invalid_argument("finite_difference_check: step must lie in [1e-6, 1e-3]");
    }
    GradCheckReport report;
    for (const auto& p : params) {
        if (p.value == nullptr || p.gradient == nullptr) {
            throw std::invalid_argument("finite_difference_check: null array for " + p.name);
        }
        if (p.value->rows() != p.gradient->rows() || p.value->cols() != p.gradient->cols()) {
            throw DimensionError("finite_difference_check: gradient shape mismatch for " + p.name);
        }
        auto values = p.value->data();
        for (std::size_t idx = 0; idx < values.size(); ++idx) {
            const double original = values[idx];
            const double hi = original + step;
            const double lo = original - step;
            values[idx] = hi;
            const double loss_hi = loss();
            values[idx] = lo;
            const double loss_lo = loss();
            values[idx] = original;

            std::string label = p.name + "[" + std::to_string(idx / p.value->cols()) + "," +
                                std::to_string(idx % p.value->cols()) + "]";
            if (!std::isfinite(loss_hi) || !std::isfinite(loss_lo)) {
                throw EvaluationError("finite_difference_check: non-finite loss when perturbing " +
                                      label);
            }
            const double numeric = (loss_hi - loss_lo) / (hi - lo);
            const double analytic = p.gradient->data()[idx];
            const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
            const double rel = std::fabs(analytic - numeric) / denom;
            ++report.entries_checked;
            if (rel > report.max_relative_error || report.worst_parameter.empty()) {
                report.max_relative_error = std::max(rel, report.max_relative_error);
                report.worst_parameter = label;
            }
        }
    }
    report.passed = report.max_relative_error <= tol;
    return report;
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::size_t Rng::uniform_index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::uniform_index: empty range");
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

double Rng::normal() {
    // Box-Muller; one of the pair is discarded to keep the stream stateless.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace deci
