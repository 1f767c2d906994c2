#pragma once

#include <cmath>
#include <vector>

#include "ramf/random.hpp"
#include "ramf/tensor.hpp"

namespace ramf {

// Glorot-uniform initialization. For 2-D weights fan_in/fan_out are the two
// dims; vectors are treated as fan_in = fan_out = length.
inline Tensor glorot(std::vector<int64_t> shape, Xoshiro256ss& rng) {
    double fan_in = static_cast<double>(shape.front());
    double fan_out = static_cast<double>(shape.back());
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(-limit, limit);
    return t;
}

// Channel-mixing 1-D conv kernel [K, D, D]; fan counts include the kernel taps.
inline Tensor glorot_conv1d_mixing(int64_t k, int64_t d, Xoshiro256ss& rng) {
    const double limit = std::sqrt(6.0 / (static_cast<double>(k * d) + static_cast<double>(d)));
    Tensor t({k, d, d});
    for (double& v : t.data) v = rng.uniform(-limit, limit);
    return t;
}

// 3x3 delta kernel (identity under same-padding convolution) plus noise, so
// training starts from standard attention.
inline Tensor delta_kernel_3x3(double noise_sigma, Xoshiro256ss& rng) {
    Tensor t({3, 3});
    for (double& v : t.data) v = noise_sigma * rng.gaussian();
    t.at2(1, 1) += 1.0;
    return t;
}

// [P, 2, 2] identity mixers plus noise.
inline Tensor identity_mixers(int64_t pairs, double noise_sigma, Xoshiro256ss& rng) {
    Tensor t({pairs, 2, 2});
    for (double& v : t.data) v = noise_sigma * rng.gaussian();
    for (int64_t p = 0; p < pairs; ++p) {
        t.at3(p, 0, 0) += 1.0;
        t.at3(p, 1, 1) += 1.0;
    }
    return t;
}

}  // namespace ramf
