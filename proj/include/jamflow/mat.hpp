// mat.hpp - dense row-major matrix, the one numeric container used everywhere
#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace jamflow {

template <typename T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> v;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * static_cast<size_t>(c), T(0)) {
        if (r < 0 || c < 0) throw std::invalid_argument("Mat: negative shape");
    }
    Mat(int r, int c, std::vector<T> data) : rows(r), cols(c), v(std::move(data)) {
        if (v.size() != static_cast<size_t>(r) * static_cast<size_t>(c))
            throw std::invalid_argument("Mat: data size does not match shape");
    }

    static Mat filled(int r, int c, T x) {
        Mat m(r, c);
        for (auto& e : m.v) e = x;
        return m;
    }

    size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    T& at(int i, int j) { return v[static_cast<size_t>(i) * cols + j]; }
    const T& at(int i, int j) const { return v[static_cast<size_t>(i) * cols + j]; }
    T* row(int i) { return v.data() + static_cast<size_t>(i) * cols; }
    const T* row(int i) const { return v.data() + static_cast<size_t>(i) * cols; }

    bool operator==(const Mat& o) const { return rows == o.rows && cols == o.cols && v == o.v; }

    bool all_finite() const {
        for (const T& e : v)
            if (!std::isfinite(static_cast<double>(e))) return false;
        return true;
    }
};

template <typename T>
inline void check_same_shape(const Mat<T>& a, const Mat<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch (" + std::to_string(a.rows) + "x" +
                                    std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                                    std::to_string(b.cols) + ")");
}

// C += A * B
template <typename T>
inline void gemm_nn_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
    for (int i = 0; i < a.rows; ++i) {
        const T* ar = a.row(i);
        T* cr = c.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const T aik = ar[k];
            if (aik == T(0)) continue;
            const T* br = b.row(k);
            for (int j = 0; j < b.cols; ++j) cr[j] += aik * br[j];
        }
    }
}

// C += A * B^T
template <typename T>
inline void gemm_nt_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
    for (int i = 0; i < a.rows; ++i) {
        const T* ar = a.row(i);
        T* cr = c.row(i);
        for (int j = 0; j < b.rows; ++j) {
            const T* br = b.row(j);
            T acc = T(0);
            for (int k = 0; k < a.cols; ++k) acc += ar[k] * br[k];
            cr[j] += acc;
        }
    }
}

// C += A^T * B
template <typename T>
inline void gemm_tn_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
    for (int k = 0; k < a.rows; ++k) {
        const T* ar = a.row(k);
        const T* br = b.row(k);
        for (int i = 0; i < a.cols; ++i) {
            const T aki = ar[i];
            if (aki == T(0)) continue;
            T* cr = c.row(i);
            for (int j = 0; j < b.cols; ++j) cr[j] += aki * br[j];
        }
    }
}

template <typename T>
inline Mat<T> matmul_nn(const Mat<T>& a, const Mat<T>& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
    Mat<T> c(a.rows, b.cols);
    gemm_nn_acc(a, b, c);
    return c;
}

template <typename T>
inline Mat<T> matmul_nt(const Mat<T>& a, const Mat<T>& b) {
    if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: inner dimensions differ");
    Mat<T> c(a.rows, b.rows);
    gemm_nt_acc(a, b, c);
    return c;
}

}  // namespace jamflow
