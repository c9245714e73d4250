#include "ccdist/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <string>

#include "ccdist/errors.hpp"

namespace ccdist {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
    if (shape.empty()) {
        throw InvalidArgument("tensor shape must have at least one dimension");
    }
    if (std::find(shape.begin(), shape.end(), std::size_t{0}) != shape.end()) {
        throw InvalidArgument("tensor dimensions must be positive");
    }
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

} // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    const std::size_t n = element_count(shape_);
    if (n != data_.size()) {
        throw DimensionMismatch("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape product " + std::to_string(n));
    }
}

std::size_t Tensor::rows() const {
    if (shape_.size() > 2) {
        throw InvalidArgument("matrix view needs rank <= 2");
    }
    return shape_.size() == 2 ? shape_[0] : 1;
}

std::size_t Tensor::cols() const {
    return shape_.empty() ? 0 : shape_.back();
}

Tensor Tensor::gather_rows(std::span<const std::size_t> indices) const {
    const std::size_t c = cols();
    std::vector<double> out;
    out.reserve(indices.size() * c);
    for (std::size_t i : indices) {
        if (i >= rows()) {
            throw InvalidArgument("row index out of range");
        }
        const auto r = row(i);
        out.insert(out.end(), r.begin(), r.end());
    }
    return Tensor({indices.size(), c}, std::move(out));
}

} // namespace ccdist
