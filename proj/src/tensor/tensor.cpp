#include "gear/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace gear {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    for (std::size_t e : shape_) {
        if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
    }
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (std::size_t e : shape_) {
        if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
    }
    if (shape_size(shape_) != data_.size()) {
        throw ShapeError("shape " + shape_string(shape_) + " does not match " + std::to_string(data_.size()) +
                         " values");
    }
}

namespace {
void require_finite_literal(double v) {
    if (!std::isfinite(v)) throw ShapeError("tensor literal contains a non-finite value");
}
}  // namespace

Tensor Tensor::scalar(double value) {
    require_finite_literal(value);
    return Tensor(Shape{}, std::vector<double>{value});
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    if (values.size() == 0) throw ShapeError("empty vector literal");
    for (double v : values) require_finite_literal(v);
    return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    if (rows.size() == 0 || rows.begin()->size() == 0) throw ShapeError("empty matrix literal");
    const std::size_t cols = rows.begin()->size();
    std::vector<double> data;
    data.reserve(rows.size() * cols);
    for (const auto& row : rows) {
        if (row.size() != cols) throw ShapeError("ragged matrix literal");
        for (double v : row) {
            require_finite_literal(v);
            data.push_back(v);
        }
    }
    return Tensor(Shape{rows.size(), cols}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

Tensor Tensor::identity_batch(std::size_t batch, std::size_t n) {
    Tensor t(Shape{batch, n, n});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < n; ++i) t(b, i, i) = 1.0;
    }
    return t;
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::max_abs() const noexcept {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) {
        throw ShapeError("index of rank " + std::to_string(idx.size()) + " into tensor " + shape_string(shape_));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
        if (i >= shape_[axis]) throw ShapeError("index out of range for tensor " + shape_string(shape_));
        off = off * shape_[axis] + i;
        ++axis;
    }
    return off;
}

Tensor elementwise(const Tensor& a, const Tensor& b, ElementwiseOp op) {
    if (b.rank() == 0) return elementwise(a, b.item(), op);
    if (a.shape() != b.shape()) {
        throw ShapeError("elementwise shapes differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    Tensor out(a.shape());
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    switch (op) {
        case ElementwiseOp::add:
            for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
            break;
        case ElementwiseOp::sub:
            for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
            break;
        case ElementwiseOp::mul:
            for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
            break;
        case ElementwiseOp::pow:
            for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::pow(x[i], y[i]);
            break;
    }
    return out;
}

Tensor elementwise(const Tensor& a, double b, ElementwiseOp op) {
    Tensor out(a.shape());
    auto o = out.data();
    auto x = a.data();
    switch (op) {
        case ElementwiseOp::add:
            for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + b;
            break;
        case ElementwiseOp::sub:
            for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - b;
            break;
        case ElementwiseOp::mul:
            for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * b;
            break;
        case ElementwiseOp::pow:
            for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::pow(x[i], b);
            break;
    }
    return out;
}

Tensor operator+(const Tensor& a, const Tensor& b) { return elementwise(a, b, ElementwiseOp::add); }
Tensor operator-(const Tensor& a, const Tensor& b) { return elementwise(a, b, ElementwiseOp::sub); }
Tensor operator*(const Tensor& a, const Tensor& b) { return elementwise(a, b, ElementwiseOp::mul); }
Tensor operator*(const Tensor& a, double s) { return elementwise(a, s, ElementwiseOp::mul); }
Tensor operator*(double s, const Tensor& a) { return elementwise(a, s, ElementwiseOp::mul); }
Tensor operator-(const Tensor& a) { return elementwise(a, -1.0, ElementwiseOp::mul); }

Tensor map(const Tensor& a, const std::function<double(double)>& fn) {
    Tensor out(a.shape());
    auto o = out.data();
    auto x = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = fn(x[i]);
    return out;
}

Tensor clip(const Tensor& a, double lo, double hi) {
    return map(a, [lo, hi](double v) { return std::clamp(v, lo, hi); });
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return Tensor::scalar(s);
}

namespace {

double one_norm(const std::vector<double>& m, std::size_t n) {
    double best = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        double col = 0.0;
        for (std::size_t i = 0; i < n; ++i) col += std::abs(m[i * n + j]);
        best = std::max(best, col);
    }
    return best;
}

void invert_into(const double* src, std::size_t n, double ridge, double* dst) {
    std::vector<double> a(src, src + n * n);
    for (std::size_t i = 0; i < n; ++i) a[i * n + i] += ridge;
    const double norm_a = one_norm(a, n);

    std::vector<double> inv(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) inv[i * n + i] = 1.0;

    const double eps = std::numeric_limits<double>::epsilon();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) pivot = r;
        }
        const double p = a[pivot * n + col];
        if (std::abs(p) <= static_cast<double>(n) * eps * norm_a || p == 0.0) {
            throw SingularityError("matrix is singular (pivot " + std::to_string(p) + ")",
                                   std::numeric_limits<double>::infinity());
        }
        if (pivot != col) {
            for (std::size_t k = 0; k < n; ++k) {
                std::swap(a[pivot * n + k], a[col * n + k]);
                std::swap(inv[pivot * n + k], inv[col * n + k]);
            }
        }
        const double scale = 1.0 / p;
        for (std::size_t k = 0; k < n; ++k) {
            a[col * n + k] *= scale;
            inv[col * n + k] *= scale;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a[r * n + col];
            if (f == 0.0) continue;
            for (std::size_t k = 0; k < n; ++k) {
                a[r * n + k] -= f * a[col * n + k];
                inv[r * n + k] -= f * inv[col * n + k];
            }
        }
    }

    const double cond = norm_a * one_norm(inv, n);
    if (!std::isfinite(cond) || cond > 1.0 / (static_cast<double>(n) * eps)) {
        throw SingularityError("matrix is numerically singular (condition estimate " + std::to_string(cond) + ")",
                               cond);
    }
    std::copy(inv.begin(), inv.end(), dst);
}

}  // namespace

Tensor invert_matrix(const Tensor& g, double ridge) {
    if (g.rank() != 2 || g.extent(0) != g.extent(1)) {
        throw ShapeError("invert_matrix needs a square matrix, got " + shape_string(g.shape()));
    }
    if (ridge < 0.0) throw SpecError("ridge must be nonnegative");
    Tensor out(g.shape());
    invert_into(g.data().data(), g.extent(0), ridge, out.data().data());
    return out;
}

Tensor invert_batched(const Tensor& g, double ridge) {
    if (g.rank() != 3 || g.extent(1) != g.extent(2)) {
        throw ShapeError("invert_batched needs (batch,n,n), got " + shape_string(g.shape()));
    }
    if (ridge < 0.0) throw SpecError("ridge must be nonnegative");
    const std::size_t n = g.extent(1);
    Tensor out(g.shape());
    for (std::size_t b = 0; b < g.extent(0); ++b) {
        invert_into(g.data().data() + b * n * n, n, ridge, out.data().data() + b * n * n);
    }
    return out;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
    if (a.rank() == 0 || begin + count > a.extent(0) || count == 0) {
        throw ShapeError("slice_rows out of range for " + shape_string(a.shape()));
    }
    Shape shape = a.shape();
    shape[0] = count;
    const std::size_t row = a.size() / a.extent(0);
    std::vector<double> data(a.data().begin() + static_cast<std::ptrdiff_t>(begin * row),
                             a.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * row));
    return Tensor(std::move(shape), std::move(data));
}

std::vector<std::size_t> symmetric_source_map(const Shape& shape, std::size_t arity) {
    if (arity > shape.size()) throw ShapeError("symmetrize arity exceeds rank");
    const std::size_t lead = shape.size() - arity;
    const std::size_t n = arity == 0 ? 1 : shape[lead];
    for (std::size_t ax = lead; ax < shape.size(); ++ax) {
        if (shape[ax] != n) throw ShapeError("symmetrized axes must share one extent: " + shape_string(shape));
    }
    const std::size_t block = shape_size(Shape(shape.begin() + static_cast<std::ptrdiff_t>(lead), shape.end()));
    const std::size_t total = shape_size(shape);

    std::vector<std::size_t> within(block);
    std::vector<std::size_t> digits(arity);
    for (std::size_t f = 0; f < block; ++f) {
        std::size_t rem = f;
        for (std::size_t k = arity; k-- > 0;) {
            digits[k] = rem % n;
            rem /= n;
        }
        std::sort(digits.begin(), digits.end());
        std::size_t src = 0;
        for (std::size_t k = 0; k < arity; ++k) src = src * n + digits[k];
        within[f] = src;
    }

    std::vector<std::size_t> map(total);
    for (std::size_t f = 0; f < total; ++f) {
        map[f] = (f / block) * block + within[f % block];
    }
    return map;
}

Tensor symmetrize_trailing(const Tensor& a, std::size_t arity) {
    const auto src = symmetric_source_map(a.shape(), arity);
    Tensor out(a.shape());
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = a[src[i]];
    return out;
}

}  // namespace gear
