#include "phenoswin/layout.hpp"

#include <stdexcept>

namespace phenoswin {

Tensor cthw_to_thwc(const Tensor& input) {
    if (input.rank() != 4) throw std::invalid_argument("expected a [C, T, H, W] tensor, got " + shape_string(input.shape()));
    const Index c = input.dim(0), t = input.dim(1), h = input.dim(2), w = input.dim(3);
    Tensor out({t, h, w, c});
    const Index plane = t * h * w;
    for (Index ci = 0; ci < c; ++ci)
        for (Index p = 0; p < plane; ++p) out[p * c + ci] = input[ci * plane + p];
    return out;
}

Tensor thwc_to_cthw(const Tensor& features) {
    if (features.rank() != 4)
        throw std::invalid_argument("expected a [T, H, W, C] tensor, got " + shape_string(features.shape()));
    const Index t = features.dim(0), h = features.dim(1), w = features.dim(2), c = features.dim(3);
    Tensor out({c, t, h, w});
    const Index plane = t * h * w;
    for (Index ci = 0; ci < c; ++ci)
        for (Index p = 0; p < plane; ++p) out[ci * plane + p] = features[p * c + ci];
    return out;
}

StageFeatures make_stage_features(Tensor thwc, int stage, bool requires_grad) {
    if (thwc.rank() != 4) throw std::invalid_argument("stage features must be [T, H, W, C]");
    StageFeatures f;
    f.frames = thwc.dim(0);
    f.height = thwc.dim(1);
    f.width = thwc.dim(2);
    f.channels = thwc.dim(3);
    f.stage = stage;
    Tensor rows = thwc.reshaped({f.tokens(), f.channels});
    f.data = requires_grad ? ag::Var::parameter(std::move(rows)) : ag::Var::constant(std::move(rows));
    return f;
}

}  // namespace phenoswin
