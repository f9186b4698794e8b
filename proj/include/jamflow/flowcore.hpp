// flowcore.hpp - rectified-flow mathematics against an abstract velocity field.
//
// Path convention: z_t = (1-t) z1 + t z0, so t=0 is data and t=1 is noise;
// the target velocity z0 - z1 is constant along the path and the sampler
// integrates from t=1 down to t=0.
#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>

#include "conditioning.hpp"
#include "mat.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace jamflow {

struct TimeStep {
    double t = 0.0;

    TimeStep() = default;
    explicit TimeStep(double value) : t(value) {
        if (!(value >= 0.0 && value <= 1.0)) throw std::invalid_argument("TimeStep: t must lie in [0, 1]");
    }
};

template <typename T>
class VelocityField {
public:
    virtual ~VelocityField() = default;
    virtual Mat<T> evaluate(const LatentSeq<T>& z_t, TimeStep t, const CondSet<T>& cond) const = 0;
};

template <typename T>
class FunctionField : public VelocityField<T> {
public:
    using Fn = std::function<Mat<T>(const LatentSeq<T>&, TimeStep, const CondSet<T>&)>;
    explicit FunctionField(Fn fn) : fn_(std::move(fn)) {}
    Mat<T> evaluate(const LatentSeq<T>& z_t, TimeStep t, const CondSet<T>& cond) const override {
        return fn_(z_t, t, cond);
    }

private:
    Fn fn_;
};

template <typename T>
inline LatentSeq<T> interpolate(const LatentSeq<T>& z1, const LatentSeq<T>& z0, TimeStep ts) {
    check_same_shape(z1.values, z0.values, "interpolate");
    const T t = static_cast<T>(ts.t);
    Mat<T> out(z1.values.rows, z1.values.cols);
    for (size_t i = 0; i < out.size(); ++i) out.v[i] = (T(1) - t) * z1.values.v[i] + t * z0.values.v[i];
    return LatentSeq<T>(std::move(out), z1.frame_rate);
}

template <typename T>
inline Mat<T> target_velocity(const LatentSeq<T>& z1, const LatentSeq<T>& z0) {
    check_same_shape(z1.values, z0.values, "target_velocity");
    Mat<T> out(z1.values.rows, z1.values.cols);
    for (size_t i = 0; i < out.size(); ++i) out.v[i] = z0.values.v[i] - z1.values.v[i];
    return out;
}

// mean squared error between the field's prediction and the path velocity,
// averaged over all l*c entries
template <typename T>
inline double fm_loss(const VelocityField<T>& field, const LatentSeq<T>& z1, const LatentSeq<T>& z0, TimeStep t,
                      const CondSet<T>& cond) {
    const LatentSeq<T> z_t = interpolate(z1, z0, t);
    const Mat<T> v = target_velocity(z1, z0);
    const Mat<T> u = field.evaluate(z_t, t, cond);
    check_same_shape(u, v, "fm_loss");
    double sum = 0.0;
    for (size_t i = 0; i < u.size(); ++i) {
        const double d = static_cast<double>(u.v[i]) - static_cast<double>(v.v[i]);
        sum += d * d;
    }
    return sum / static_cast<double>(u.size());
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// t = logistic(n), n ~ N(0, 1); biases training toward mid-range noise levels
inline TimeStep sample_timestep(Rng& rng) { return TimeStep(logistic(rng.normal())); }

// Euler integration from t=1 (noise) to t=0 (data): z <- z - (1/steps) * u(z, t, c)
template <typename T>
inline LatentSeq<T> euler_sample(const VelocityField<T>& field, const LatentSeq<T>& z0, int steps,
                                 const CondSet<T>& cond) {
    if (steps < 1) throw std::invalid_argument("euler_sample: steps must be >= 1");
    LatentSeq<T> z = z0;
    const T dt = T(1) / T(steps);
    for (int i = 0; i < steps; ++i) {
        const double t = 1.0 - static_cast<double>(i) / static_cast<double>(steps);
        const Mat<T> u = field.evaluate(z, TimeStep(t), cond);
        check_same_shape(z.values, u, "euler_sample");
        for (size_t k = 0; k < u.size(); ++k) z.values.v[k] -= dt * u.v[k];
    }
    return z;
}

}  // namespace jamflow
