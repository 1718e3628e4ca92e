#include "tensor.h"

#include "error.h"

#include <cmath>
#include <limits>
#include <sstream>

namespace gridvla {

int64_t Shape::numel() const {
    int64_t n = 1;
    for (int64_t d : dims) n *= d;
    return n;
}

int64_t Shape::rows() const {
    if (rank() != 2) fail(ErrorKind::dimension, "expected a rank-2 tensor, got " + str());
    return dims[0];
}

int64_t Shape::cols() const {
    if (rank() != 2) fail(ErrorKind::dimension, "expected a rank-2 tensor, got " + str());
    return dims[1];
}

std::string Shape::str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < dims.size(); ++i) {
        if (i) os << ",";
        os << dims[i];
    }
    os << "]";
    return os.str();
}

void Shape::validate() const {
    if (dims.empty()) fail(ErrorKind::dimension, "shape must have rank >= 1");
    int64_t n = 1;
    for (int64_t d : dims) {
        if (d < 0) fail(ErrorKind::dimension, "shape " + str() + " has a negative dim");
        if (d > 0 && n > std::numeric_limits<int64_t>::max() / d) {
            fail(ErrorKind::dimension, "shape " + str() + " overflows the element count");
        }
        n *= d;
    }
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
    if ((int64_t) values.size() != shape_.numel()) {
        fail(ErrorKind::dimension,
             "value count " + std::to_string(values.size()) + " does not match shape " + shape_.str());
    }
    data_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::zeros(Shape shape) {
    std::vector<double> v((size_t) shape.numel(), 0.0);
    return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::full(Shape shape, double value) {
    std::vector<double> v((size_t) shape.numel(), value);
    return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::scalar(double value) {
    return Tensor(Shape{1}, {value});
}

double Tensor::scalar_value() const {
    if (numel() != 1) fail(ErrorKind::dimension, "tensor " + shape_.str() + " is not a scalar");
    return (*data_)[0];
}

bool Tensor::all_finite() const {
    for (double v : *data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

} // namespace gridvla
