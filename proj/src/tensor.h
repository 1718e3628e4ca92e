#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace gridvla {

struct Shape {
    std::vector<int64_t> dims;

    Shape() = default;
    Shape(std::initializer_list<int64_t> d) : dims(d) { validate(); }
    explicit Shape(std::vector<int64_t> d) : dims(std::move(d)) { validate(); }

    int rank() const { return (int) dims.size(); }
    int64_t numel() const;
    int64_t rows() const; // rank-2 only
    int64_t cols() const; // rank-2 only
    int64_t last() const { return dims.back(); }

    bool operator==(const Shape & other) const { return dims == other.dims; }
    bool operator!=(const Shape & other) const { return dims != other.dims; }

    std::string str() const; // "[2,3]"

    // rank >= 1, dims >= 0, element count must not overflow.
    // Zero-sized dims are allowed so that gathers over empty id lists stay legal.
    void validate() const;
};

// Immutable dense array of 64-bit reals, row-major. Copies are cheap (shared
// payload). `node` ties the tensor to a Tape when it participates in autodiff;
// -1 means plain constant data.
class Tensor {
public:
    Tensor() : shape_({1}), data_(std::make_shared<std::vector<double>>(1, 0.0)) {}
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);

    const Shape & shape() const { return shape_; }
    int64_t numel() const { return shape_.numel(); }
    const std::vector<double> & values() const { return *data_; }
    const double * data() const { return data_->data(); }

    double scalar_value() const; // requires numel == 1

    int node() const { return node_; }
    bool on_tape() const { return node_ >= 0; }

    bool all_finite() const;

private:
    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
    int node_ = -1;

    friend class Tape;
};

} // namespace gridvla
