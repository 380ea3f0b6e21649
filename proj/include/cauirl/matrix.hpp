#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace cauirl {

// Dense row-major matrix of doubles. One row per sample throughout the
// library; column count is the flattened feature/pixel dimension.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    double &operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    double *data() { return data_.data(); }
    const double *data() const { return data_.data(); }
    std::vector<double> &storage() { return data_; }
    const std::vector<double> &storage() const { return data_; }

    void set_row(std::size_t r, std::span<const double> values) {
        if (values.size() != cols_)
            throw std::invalid_argument("Matrix::set_row: length mismatch");
        std::copy(values.begin(), values.end(), data_.begin() + static_cast<std::ptrdiff_t>(r * cols_));
    }

    bool operator==(const Matrix &other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

} // namespace cauirl
