#pragma once

#include "gear/errors.hpp"

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gear {

using Shape = std::vector<std::size_t>;

[[nodiscard]] std::size_t shape_size(const Shape& shape);
[[nodiscard]] std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. A rank-0 tensor holds one value.
class Tensor {
public:
    Tensor() : data_(1, 0.0) {}
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    [[nodiscard]] static Tensor scalar(double value);
    [[nodiscard]] static Tensor vector(std::initializer_list<double> values);
    [[nodiscard]] static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    [[nodiscard]] static Tensor identity(std::size_t n);
    /// `batch` stacked copies of the n×n identity, shape (batch, n, n).
    [[nodiscard]] static Tensor identity_batch(std::size_t batch, std::size_t n);

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
    [[nodiscard]] std::span<double> data() noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return data_; }

    [[nodiscard]] double& operator[](std::size_t flat) { return data_[flat]; }
    [[nodiscard]] double operator[](std::size_t flat) const { return data_[flat]; }

    template <class... Index>
    [[nodiscard]] double& operator()(Index... idx) {
        return data_[offset({static_cast<std::size_t>(idx)...})];
    }
    template <class... Index>
    [[nodiscard]] double operator()(Index... idx) const {
        return data_[offset({static_cast<std::size_t>(idx)...})];
    }

    /// The single value of a rank-0 or one-element tensor.
    [[nodiscard]] double item() const;

    [[nodiscard]] Tensor reshaped(Shape shape) const;

    [[nodiscard]] bool all_finite() const noexcept;
    [[nodiscard]] double max_abs() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    [[nodiscard]] std::size_t offset(std::initializer_list<std::size_t> idx) const;

    Shape shape_;
    std::vector<double> data_;
};

/// Parsed Einstein-summation string such as "ij,jk->ik".
///
/// Labels are ASCII letters. A label may occur at most twice across all
/// inputs; labels absent from the output are summed over. Output labels
/// must be distinct and must occur in some input.
struct ContractionSpec {
    std::vector<std::string> inputs;
    std::string output;

    [[nodiscard]] static ContractionSpec parse(std::string_view text);
};

/// Precomputed loop nest for a one- or two-operand contraction. Holds the
/// extent of every distinct label and each operand's stride per label, so
/// the same nest can run the forward product and both adjoints.
class ContractionPlan {
public:
    ContractionPlan(const ContractionSpec& spec, const Shape& a, const Shape* b);

    [[nodiscard]] const Shape& output_shape() const noexcept { return out_shape_; }

    /// out += a (*) b
    void forward(const double* a, const double* b, double* out) const;
    /// grad_a += d(out)/d(a) applied to grad_out
    void backward_a(const double* grad_out, const double* b, double* grad_a) const;
    void backward_b(const double* grad_out, const double* a, double* grad_b) const;

private:
    std::vector<std::size_t> extents_;
    std::vector<std::size_t> stride_a_;
    std::vector<std::size_t> stride_b_;
    std::vector<std::size_t> stride_out_;
    Shape out_shape_;
    bool binary_ = false;
};

[[nodiscard]] Tensor contract(const Tensor& a, const Tensor& b, std::string_view spec);
[[nodiscard]] Tensor contract(const Tensor& a, std::string_view spec);

enum class ElementwiseOp { add, sub, mul, pow };

[[nodiscard]] Tensor elementwise(const Tensor& a, const Tensor& b, ElementwiseOp op);
[[nodiscard]] Tensor elementwise(const Tensor& a, double b, ElementwiseOp op);

[[nodiscard]] Tensor operator+(const Tensor& a, const Tensor& b);
[[nodiscard]] Tensor operator-(const Tensor& a, const Tensor& b);
[[nodiscard]] Tensor operator*(const Tensor& a, const Tensor& b);
[[nodiscard]] Tensor operator*(const Tensor& a, double s);
[[nodiscard]] Tensor operator*(double s, const Tensor& a);
[[nodiscard]] Tensor operator-(const Tensor& a);

[[nodiscard]] Tensor map(const Tensor& a, const std::function<double(double)>& fn);
[[nodiscard]] Tensor clip(const Tensor& a, double lo, double hi);
[[nodiscard]] Tensor sum_all(const Tensor& a);

/// Inverse of `g + ridge·I` by Gauss-Jordan elimination with partial pivoting.
/// Throws SingularityError when a pivot collapses or the 1-norm condition
/// estimate exceeds 1/(n·eps).
[[nodiscard]] Tensor invert_matrix(const Tensor& g, double ridge = 0.0);
/// Applies invert_matrix to every (n×n) slice of a (batch, n, n) tensor.
[[nodiscard]] Tensor invert_batched(const Tensor& g, double ridge = 0.0);

/// First `count` entries along axis 0 starting at `begin`.
[[nodiscard]] Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);

/// Returns a copy whose trailing `arity` axes (all of equal extent) are made
/// exactly permutation symmetric: every entry is copied from the entry whose
/// trailing indices are sorted ascending.
[[nodiscard]] Tensor symmetrize_trailing(const Tensor& a, std::size_t arity);
/// Flat index map used by symmetrize_trailing; exposed for the autodiff tape.
[[nodiscard]] std::vector<std::size_t> symmetric_source_map(const Shape& shape, std::size_t arity);

// Uniform op vocabulary shared with ad::Var so templated kernels compile for both.
[[nodiscard]] inline const Tensor& value_of(const Tensor& t) { return t; }
[[nodiscard]] inline Tensor lift(const Tensor& /*like*/, Tensor constant) { return constant; }

}  // namespace gear
