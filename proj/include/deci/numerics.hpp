#pragma once
// Dense double-precision arithmetic shared by every DECI module: a row-major
// Matrix, stable activations, the clamped binary cross-entropy, and a
// central-difference gradient checker.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace deci {

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct EvaluationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Vector = std::vector<double>;

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    void fill(double v);
    bool all_finite() const noexcept;

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix add(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double factor);
Matrix transpose(const Matrix& a);

double dot(std::span<const double> a, std::span<const double> b);
// y += factor * x
void axpy(double factor, std::span<const double> x, std::span<double> y);
// y += x . M, with x of length M.rows() and y of length M.cols()
void add_vec_mat(std::span<const double> x, const Matrix& m, std::span<double> y);
// y += M . v, with v of length M.cols() and y of length M.rows()
void add_mat_vec(const Matrix& m, std::span<const double> v, std::span<double> y);

// Logistic function evaluated on the branch that never exponentiates a
// positive argument.
double sigmoid(double x) noexcept;
Vector sigmoid(std::span<const double> x);

// sigmoid(k + s) - sigmoid(s), computed without cancellation so that the sign
// of the result is always the sign of k.
double sigmoid_difference(double k, double s) noexcept;

// Max-subtracted softmax. Throws DimensionError on empty input.
Vector softmax(std::span<const double> x);
void softmax_inplace(std::span<double> x);

inline constexpr double kLogClamp = 1e-7;

// Mean over entries of -[y log p + (1-y) log(1-p)], p clamped to
// [kLogClamp, 1 - kLogClamp].
double binary_cross_entropy(std::span<const double> p, std::span<const double> y);

// Gradient of binary_cross_entropy(sigmoid(z), y) with respect to z. Zero where
// the clamp is active.
Vector binary_cross_entropy_logit_grad(std::span<const double> z, std::span<const double> y);

// A trainable array paired with the analytic gradient to be verified.
struct GradCheckEntry {
    std::string name;
    Matrix* value = nullptr;
    const Matrix* gradient = nullptr;
};

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    bool passed = true;
    std::size_t entries_checked = 0;
};

// Perturbs every entry of every listed array by +-step, evaluating `loss`
// after each perturbation, and compares the central difference against the
// stored analytic gradient. Arrays are restored before returning.
GradCheckReport finite_difference_check(const std::function<double()>& loss,
                                        std::span<const GradCheckEntry> params, double step,
                                        double tol);

// Portable deterministic generator: the standard distributions are
// implementation-defined, so sampling is done by hand on top of mt19937_64.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);
    // Uniform in [0, n). n must be positive.
    std::size_t uniform_index(std::size_t n);
    bool bernoulli(double p);
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace deci
