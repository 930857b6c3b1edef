#pragma once

// Tensor layout conventions.
//
// Raw inputs are [channel, time, height, width]. Stage features are
// [time, height, width, channel], stored as a row matrix with one row per
// (t, h, w) token in row-major order and one column per channel.

#include "phenoswin/autograd.hpp"
#include "phenoswin/tensor.hpp"

namespace phenoswin {

/// [C, T, H, W] -> [T, H, W, C]; a pure index permutation.
Tensor cthw_to_thwc(const Tensor& input);
/// [T, H, W, C] -> [C, T, H, W].
Tensor thwc_to_cthw(const Tensor& features);

struct StageFeatures {
    ag::Var data;  // [T*H*W, C]
    Index frames = 0;
    Index height = 0;
    Index width = 0;
    Index channels = 0;
    int stage = 1;

    Index tokens() const { return frames * height * width; }
    Shape shape() const { return {frames, height, width, channels}; }
    /// Copy of the values as a [T, H, W, C] tensor.
    Tensor as_thwc() const { return data.value().reshaped(shape()); }
};

StageFeatures make_stage_features(Tensor thwc, int stage, bool requires_grad = false);

}  // namespace phenoswin
