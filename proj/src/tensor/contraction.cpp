#include "gear/tensor.hpp"

#include <algorithm>
#include <array>
#include <cctype>

namespace gear {
namespace {

std::vector<std::size_t> row_major_strides(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) {
        strides[i - 1] = strides[i] * shape[i];
    }
    return strides;
}

// out[o] += x[i] * y[j] over the full label product space. `y == nullptr`
// stands for a constant 1.
void run_nest(const std::vector<std::size_t>& extents,
              const std::vector<std::size_t>& s_out,
              const std::vector<std::size_t>& s_x,
              const std::vector<std::size_t>& s_y,
              double* out, const double* x, const double* y) {
    const std::size_t depth = extents.size();
    if (depth == 0) {
        out[0] += x[0] * (y != nullptr ? y[0] : 1.0);
        return;
    }
    for (std::size_t e : extents) {
        if (e == 0) return;
    }

    const std::size_t inner = depth - 1;
    const std::size_t n_inner = extents[inner];
    const std::size_t so = s_out[inner];
    const std::size_t sx = s_x[inner];
    const std::size_t sy = s_y[inner];

    std::vector<std::size_t> idx(depth, 0);
    std::size_t oo = 0;
    std::size_t ox = 0;
    std::size_t oy = 0;
    while (true) {
        if (y != nullptr) {
            for (std::size_t k = 0; k < n_inner; ++k) {
                out[oo + k * so] += x[ox + k * sx] * y[oy + k * sy];
            }
        } else {
            for (std::size_t k = 0; k < n_inner; ++k) {
                out[oo + k * so] += x[ox + k * sx];
            }
        }

        std::size_t d = inner;
        while (d-- > 0) {
            ++idx[d];
            oo += s_out[d];
            ox += s_x[d];
            oy += s_y[d];
            if (idx[d] < extents[d]) break;
            oo -= s_out[d] * extents[d];
            ox -= s_x[d] * extents[d];
            oy -= s_y[d] * extents[d];
            idx[d] = 0;
            if (d == 0) return;
        }
        if (inner == 0) return;
    }
}

}  // namespace

ContractionSpec ContractionSpec::parse(std::string_view text) {
    ContractionSpec spec;
    const auto arrow = text.find("->");
    if (arrow == std::string_view::npos) {
        throw SpecError("contraction spec '" + std::string(text) + "' lacks '->'");
    }
    std::string_view lhs = text.substr(0, arrow);
    std::string_view rhs = text.substr(arrow + 2);

    std::string current;
    for (char c : lhs) {
        if (c == ',') {
            spec.inputs.push_back(current);
            current.clear();
        } else if (c == ' ') {
            continue;
        } else if (std::isalpha(static_cast<unsigned char>(c)) != 0) {
            current.push_back(c);
        } else {
            throw SpecError("invalid label '" + std::string(1, c) + "' in '" + std::string(text) + "'");
        }
    }
    spec.inputs.push_back(current);
    for (char c : rhs) {
        if (c == ' ') continue;
        if (std::isalpha(static_cast<unsigned char>(c)) == 0) {
            throw SpecError("invalid output label in '" + std::string(text) + "'");
        }
        spec.output.push_back(c);
    }
    if (spec.inputs.empty() || spec.inputs.size() > 2) {
        throw SpecError("contraction supports one or two operands: '" + std::string(text) + "'");
    }

    std::array<int, 128> count{};
    for (const auto& in : spec.inputs) {
        for (char c : in) ++count[static_cast<unsigned char>(c)];
    }
    for (std::size_t c = 0; c < count.size(); ++c) {
        if (count[c] > 2) {
            throw SpecError("label '" + std::string(1, static_cast<char>(c)) +
                            "' appears more than twice in '" + std::string(text) + "'");
        }
    }
    std::array<int, 128> seen{};
    for (char c : spec.output) {
        auto u = static_cast<unsigned char>(c);
        if (count[u] == 0) {
            throw SpecError("output label '" + std::string(1, c) + "' missing from inputs in '" +
                            std::string(text) + "'");
        }
        if (seen[u]++ != 0) {
            throw SpecError("output label '" + std::string(1, c) + "' repeated in '" + std::string(text) + "'");
        }
    }
    return spec;
}

ContractionPlan::ContractionPlan(const ContractionSpec& spec, const Shape& a, const Shape* b)
    : binary_(b != nullptr) {
    const std::size_t n_operands = binary_ ? 2 : 1;
    if (spec.inputs.size() != n_operands) {
        throw SpecError("contraction spec expects " + std::to_string(spec.inputs.size()) +
                        " operand(s), got " + std::to_string(n_operands));
    }
    const Shape* shapes[2] = {&a, b};
    for (std::size_t k = 0; k < n_operands; ++k) {
        if (spec.inputs[k].size() != shapes[k]->size()) {
            throw ShapeError("operand " + std::to_string(k) + " has rank " + std::to_string(shapes[k]->size()) +
                             " but labels '" + spec.inputs[k] + "'");
        }
    }

    // Loop order: output labels (outer, in output order), then summed labels.
    std::string labels = spec.output;
    for (const auto& in : spec.inputs) {
        for (char c : in) {
            if (labels.find(c) == std::string::npos) labels.push_back(c);
        }
    }

    std::array<std::size_t, 128> extent_of{};
    for (std::size_t k = 0; k < n_operands; ++k) {
        for (std::size_t ax = 0; ax < spec.inputs[k].size(); ++ax) {
            auto u = static_cast<unsigned char>(spec.inputs[k][ax]);
            const std::size_t e = (*shapes[k])[ax];
            if (extent_of[u] == 0) {
                extent_of[u] = e;
            } else if (extent_of[u] != e) {
                throw ShapeError("label '" + std::string(1, spec.inputs[k][ax]) + "' has extents " +
                                 std::to_string(extent_of[u]) + " and " + std::to_string(e));
            }
        }
    }

    const std::size_t depth = labels.size();
    extents_.resize(depth);
    stride_a_.assign(depth, 0);
    stride_b_.assign(depth, 0);
    stride_out_.assign(depth, 0);
    for (std::size_t d = 0; d < depth; ++d) {
        extents_[d] = extent_of[static_cast<unsigned char>(labels[d])];
    }

    auto fill = [&](const std::string& lab, const Shape& shape, std::vector<std::size_t>& out) {
        const auto strides = row_major_strides(shape);
        for (std::size_t ax = 0; ax < lab.size(); ++ax) {
            out[labels.find(lab[ax])] += strides[ax];
        }
    };
    fill(spec.inputs[0], a, stride_a_);
    if (binary_) fill(spec.inputs[1], *b, stride_b_);

    for (char c : spec.output) out_shape_.push_back(extent_of[static_cast<unsigned char>(c)]);
    fill(spec.output, out_shape_, stride_out_);
}

void ContractionPlan::forward(const double* a, const double* b, double* out) const {
    run_nest(extents_, stride_out_, stride_a_, stride_b_, out, a, binary_ ? b : nullptr);
}

void ContractionPlan::backward_a(const double* grad_out, const double* b, double* grad_a) const {
    run_nest(extents_, stride_a_, stride_out_, stride_b_, grad_a, grad_out, binary_ ? b : nullptr);
}

void ContractionPlan::backward_b(const double* grad_out, const double* a, double* grad_b) const {
    run_nest(extents_, stride_b_, stride_out_, stride_a_, grad_b, grad_out, a);
}

Tensor contract(const Tensor& a, const Tensor& b, std::string_view spec) {
    const ContractionPlan plan(ContractionSpec::parse(spec), a.shape(), &b.shape());
    Tensor out(plan.output_shape());
    plan.forward(a.data().data(), b.data().data(), out.data().data());
    return out;
}

Tensor contract(const Tensor& a, std::string_view spec) {
    const ContractionPlan plan(ContractionSpec::parse(spec), a.shape(), nullptr);
    Tensor out(plan.output_shape());
    plan.forward(a.data().data(), nullptr, out.data().data());
    return out;
}

}  // namespace gear
