#pragma once

// Loop-based reference implementations used to check the vectorized kernels.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "phenoswin/params.hpp"
#include "phenoswin/tensor.hpp"

namespace phenoswin::oracle {

inline std::vector<double> layer_norm_row(const double* x, Index n, const Tensor& gamma, const Tensor& beta) {
    double mean = 0.0;
    for (Index i = 0; i < n; ++i) mean += x[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (Index i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= static_cast<double>(n);
    std::vector<double> out(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) out[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * gamma[i] + beta[i];
    return out;
}

inline std::vector<double> affine_row(const std::vector<double>& x, const Tensor& w, const Tensor* b) {
    const Index in = w.dim(0), out = w.dim(1);
    std::vector<double> y(static_cast<std::size_t>(out), 0.0);
    for (Index o = 0; o < out; ++o) {
        double s = b ? (*b)[o] : 0.0;
        for (Index i = 0; i < in; ++i) s += x[i] * w[i * out + o];
        y[o] = s;
    }
    return y;
}

/// One attention + feed-forward block computed token by token. Window
/// membership uses cyclically shifted coordinates; two tokens in the same
/// window may attend only if no axis wraps around (|delta| < window).
/// `x` is [T*H*W, C]; returns the same layout.
inline Tensor block(const ParamStore& store, const std::string& prefix, const Tensor& x, Index T, Index H, Index W,
                    int heads, int cfg_t, int cfg_s, bool shifted, bool relative_bias) {
    const Index C = x.dim(1), N = T * H * W, dh = C / heads;
    const std::array<Index, 3> dims{T, H, W};
    const std::array<Index, 3> cfg{cfg_t, cfg_s, cfg_s};
    std::array<Index, 3> win{}, shift{}, pad{};
    for (int a = 0; a < 3; ++a) {
        win[a] = std::min(cfg[a], dims[a]);
        shift[a] = (shifted && dims[a] > cfg[a]) ? win[a] / 2 : 0;
        pad[a] = (dims[a] + win[a] - 1) / win[a] * win[a];
    }
    auto coords = [&](Index tok) { return std::array<Index, 3>{tok / (H * W), (tok / W) % H, tok % W}; };
    auto shifted_coord = [&](Index o, int a) { return ((o - shift[a]) % pad[a] + pad[a]) % pad[a]; };

    const Tensor& g1 = store.get(prefix + ".norm1.weight").value();
    const Tensor& b1 = store.get(prefix + ".norm1.bias").value();
    const Tensor& wqkv = store.get(prefix + ".attn.qkv.weight").value();
    const Tensor& bqkv = store.get(prefix + ".attn.qkv.bias").value();
    std::vector<std::vector<double>> qkv(static_cast<std::size_t>(N));
    for (Index n = 0; n < N; ++n) qkv[n] = affine_row(layer_norm_row(x.data().data() + n * C, C, g1, b1), wqkv, &bqkv);

    const Tensor* table = relative_bias ? &store.get(prefix + ".attn.relative_bias").value() : nullptr;
    const Index span = 2 * cfg_s - 1;

    Tensor out({N, C});
    for (Index i = 0; i < N; ++i) {
        const auto oi = coords(i);
        std::vector<Index> keys;
        for (Index j = 0; j < N; ++j) {
            const auto oj = coords(j);
            bool ok = true;
            for (int a = 0; a < 3 && ok; ++a) {
                const Index ri = shifted_coord(oi[a], a), rj = shifted_coord(oj[a], a);
                ok = ri / win[a] == rj / win[a] && std::abs(oi[a] - oj[a]) < win[a];
            }
            if (ok) keys.push_back(j);
        }
        std::vector<double> attended(static_cast<std::size_t>(C), 0.0);
        for (int h = 0; h < heads; ++h) {
            std::vector<double> scores;
            for (Index j : keys) {
                double s = 0.0;
                for (Index d = 0; d < dh; ++d) s += qkv[i][h * dh + d] * qkv[j][C + h * dh + d];
                s /= std::sqrt(static_cast<double>(dh));
                if (table) {
                    const auto oj = coords(j);
                    std::array<Index, 3> si{}, sj{};
                    for (int a = 0; a < 3; ++a) {
                        si[a] = shifted_coord(oi[a], a) % win[a];
                        sj[a] = shifted_coord(oj[a], a) % win[a];
                    }
                    const Index row = ((si[0] - sj[0] + cfg_t - 1) * span + (si[1] - sj[1] + cfg_s - 1)) * span +
                                      (si[2] - sj[2] + cfg_s - 1);
                    s += (*table)[row * heads + h];
                }
                scores.push_back(s);
            }
            const double mx = *std::max_element(scores.begin(), scores.end());
            double z = 0.0;
            for (double& s : scores) z += (s = std::exp(s - mx));
            for (std::size_t k = 0; k < keys.size(); ++k)
                for (Index d = 0; d < dh; ++d) attended[h * dh + d] += scores[k] / z * qkv[keys[k]][2 * C + h * dh + d];
        }
        const Tensor& bp = store.get(prefix + ".attn.proj.bias").value();
        const auto proj = affine_row(attended, store.get(prefix + ".attn.proj.weight").value(), &bp);
        std::vector<double> mid(static_cast<std::size_t>(C));
        for (Index c = 0; c < C; ++c) mid[c] = x[i * C + c] + proj[c];

        const Tensor& bf1 = store.get(prefix + ".mlp.fc1.bias").value();
        const Tensor& bf2 = store.get(prefix + ".mlp.fc2.bias").value();
        auto hidden = affine_row(layer_norm_row(mid.data(), C, store.get(prefix + ".norm2.weight").value(),
                                                store.get(prefix + ".norm2.bias").value()),
                                 store.get(prefix + ".mlp.fc1.weight").value(), &bf1);
        for (double& v : hidden) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
        const auto mlp = affine_row(hidden, store.get(prefix + ".mlp.fc2.weight").value(), &bf2);
        for (Index c = 0; c < C; ++c) out[i * C + c] = mid[c] + mlp[c];
    }
    return out;
}

/// Merge before projection: out[t', h', w', (dy*D+dx)*C + c] is the mean over
/// t in [t'S, min(T, t'S+S)) of x[t, h'D+dy, w'D+dx, c].
inline Tensor merge(const Tensor& thwc, Index S, Index D) {
    const Index T = thwc.dim(0), H = thwc.dim(1), W = thwc.dim(2), C = thwc.dim(3);
    const Index T2 = (T + S - 1) / S, H2 = H / D, W2 = W / D;
    Tensor out({T2, H2, W2, D * D * C});
    for (Index t2 = 0; t2 < T2; ++t2)
        for (Index h = 0; h < H2; ++h)
            for (Index w = 0; w < W2; ++w)
                for (Index dy = 0; dy < D; ++dy)
                    for (Index dx = 0; dx < D; ++dx)
                        for (Index c = 0; c < C; ++c) {
                            double s = 0.0;
                            Index count = 0;
                            for (Index t = t2 * S; t < std::min(T, t2 * S + S); ++t, ++count)
                                s += thwc[((t * H + h * D + dy) * W + w * D + dx) * C + c];
                            out[((t2 * H2 + h) * W2 + w) * D * D * C + (dy * D + dx) * C + c] =
                                s / static_cast<double>(count);
                        }
    return out;
}

struct StageDims {
    Index frames, height, width, channels;
};

/// Stage shapes from the closed-form recurrence with default factors (2, 2, 2).
inline std::array<StageDims, 4> stage_dims(int T, Index H, Index W, int s1, int d1, Index c1) {
    std::array<StageDims, 4> out{};
    Index t = T / s1;
    for (int i = 0; i < 4; ++i) {
        const Index scale = d1 << i;
        out[i] = {t, H / scale, W / scale, c1 << i};
        t = (t + 1) / 2;
    }
    return out;
}

struct PixelMetrics {
    std::vector<std::array<double, 4>> per_class;  // precision, recall, F1, one-vs-rest accuracy
    double macro_f1 = 0.0;
    double overall_accuracy = 0.0;
};

/// Per-pixel enumeration for every class; zero denominators give 0.
inline PixelMetrics pixel_metrics(const std::vector<int>& pred, const std::vector<int>& gt, int classes, int ignore = -1) {
    auto div = [](double a, double b) { return b == 0.0 ? 0.0 : a / b; };
    PixelMetrics m;
    double agree = 0.0, seen = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] == ignore) continue;
        seen += 1.0;
        agree += pred[i] == gt[i] ? 1.0 : 0.0;
    }
    for (int k = 0; k < classes; ++k) {
        double tp = 0, fp = 0, fn = 0, tn = 0;
        for (std::size_t i = 0; i < gt.size(); ++i) {
            if (gt[i] == ignore) continue;
            const bool p = pred[i] == k, g = gt[i] == k;
            tp += p && g;
            fp += p && !g;
            fn += !p && g;
            tn += !p && !g;
        }
        const double precision = div(tp, tp + fp), recall = div(tp, tp + fn);
        const double f1 = div(2.0 * precision * recall, precision + recall);
        m.per_class.push_back({precision, recall, f1, div(tp + tn, tp + fp + fn + tn)});
        m.macro_f1 += f1 / classes;
    }
    m.overall_accuracy = div(agree, seen);
    return m;
}

}  // namespace phenoswin::oracle
