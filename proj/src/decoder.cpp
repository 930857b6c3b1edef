#include "phenoswin/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace phenoswin {

namespace {

std::array<Index, 2> finest_grid(const std::vector<SourceFeatures>& inputs, int stage) {
    std::array<Index, 2> best{0, 0};
    for (const auto& in : inputs) {
        const StageFeatures& f = in.features->stages[stage - 1];
        if (f.height * f.width > best[0] * best[1]) best = {f.height, f.width};
    }
    return best;
}

ag::Var resize(const ag::Var& rows, Index in_h, Index in_w, Index out_h, Index out_w) {
    if (in_h == out_h && in_w == out_w) return rows;
    return ag::sparse_rows(rows, bilinear_map(in_h, in_w, out_h, out_w));
}

const SourceFeatures& finest_source(const std::vector<SourceFeatures>& inputs) {
    const SourceFeatures* best = &inputs.front();
    for (const auto& in : inputs) {
        const StageFeatures& a = in.features->stages[0];
        const StageFeatures& b = best->features->stages[0];
        if (a.height * a.width > b.height * b.width) best = &in;
    }
    return *best;
}

}  // namespace

ag::Var rearrange(const StageFeatures& f) {
    const Index T = f.frames, H = f.height, W = f.width, C = f.channels;
    if (T == 1) return f.data;
    auto index = std::make_shared<std::vector<Index>>();
    index->reserve(static_cast<std::size_t>(T * H * W));
    for (Index h = 0; h < H; ++h)
        for (Index w = 0; w < W; ++w)
            for (Index t = 0; t < T; ++t) index->push_back((t * H + h) * W + w);
    return ag::reshape(ag::gather_rows(f.data, index), {H * W, T * C});
}

Tensor unrearrange(const Tensor& packed, Index frames, Index height, Index width, Index channels) {
    if (packed.numel() != frames * height * width * channels)
        throw std::invalid_argument("unrearrange: size does not match the requested shape");
    Tensor out({frames, height, width, channels});
    for (Index t = 0; t < frames; ++t)
        for (Index h = 0; h < height; ++h)
            for (Index w = 0; w < width; ++w)
                for (Index c = 0; c < channels; ++c)
                    out[((t * height + h) * width + w) * channels + c] =
                        packed[(h * width + w) * frames * channels + t * channels + c];
    return out;
}

StageFeatures resample_frames(const StageFeatures& f, Index frames) {
    if (frames < 1) throw std::invalid_argument("resample_frames: target must be positive");
    if (frames == f.frames) return f;
    const Index plane = f.height * f.width;
    auto map = std::make_shared<ag::SparseRowMap>();
    map->out_rows = frames * plane;
    map->in_rows = f.frames * plane;
    map->row_start.push_back(0);
    for (Index t = 0; t < frames; ++t) {
        // Align end points; a single output slot takes the temporal mean.
        std::vector<std::pair<Index, double>> taps;
        if (frames == 1) {
            for (Index s = 0; s < f.frames; ++s) taps.emplace_back(s, 1.0 / static_cast<double>(f.frames));
        } else if (f.frames == 1) {
            taps.emplace_back(0, 1.0);
        } else {
            const double pos = static_cast<double>(t) * static_cast<double>(f.frames - 1) / static_cast<double>(frames - 1);
            const Index i0 = std::min<Index>(static_cast<Index>(std::floor(pos)), f.frames - 1);
            const Index i1 = std::min<Index>(i0 + 1, f.frames - 1);
            const double lam = pos - static_cast<double>(i0);
            taps.emplace_back(i0, 1.0 - lam);
            if (i1 != i0 && lam > 0.0) taps.emplace_back(i1, lam);
        }
        for (Index p = 0; p < plane; ++p) {
            for (const auto& [s, w] : taps) {
                map->cols.push_back(s * plane + p);
                map->weights.push_back(w);
            }
            map->row_start.push_back(static_cast<Index>(map->cols.size()));
        }
    }
    StageFeatures out = f;
    out.data = ag::sparse_rows(f.data, map);
    out.frames = frames;
    return out;
}

ag::SparseMapPtr bilinear_map(Index in_h, Index in_w, Index out_h, Index out_w) {
    auto axis = [](Index in, Index out) {
        std::vector<std::array<double, 3>> taps(static_cast<std::size_t>(out));  // i0, i1, lambda
        const double scale = static_cast<double>(in) / static_cast<double>(out);
        for (Index o = 0; o < out; ++o) {
            double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
            src = std::max(src, 0.0);
            Index i0 = std::min<Index>(static_cast<Index>(std::floor(src)), in - 1);
            Index i1 = std::min<Index>(i0 + 1, in - 1);
            taps[o] = {static_cast<double>(i0), static_cast<double>(i1), src - static_cast<double>(i0)};
        }
        return taps;
    };
    const auto ty = axis(in_h, out_h);
    const auto tx = axis(in_w, out_w);
    auto map = std::make_shared<ag::SparseRowMap>();
    map->out_rows = out_h * out_w;
    map->in_rows = in_h * in_w;
    map->row_start.push_back(0);
    for (Index y = 0; y < out_h; ++y)
        for (Index x = 0; x < out_w; ++x) {
            const auto& [y0, y1, ly] = ty[y];
            const auto& [x0, x1, lx] = tx[x];
            const std::array<std::pair<Index, double>, 4> taps{
                std::pair{static_cast<Index>(y0) * in_w + static_cast<Index>(x0), (1 - ly) * (1 - lx)},
                std::pair{static_cast<Index>(y0) * in_w + static_cast<Index>(x1), (1 - ly) * lx},
                std::pair{static_cast<Index>(y1) * in_w + static_cast<Index>(x0), ly * (1 - lx)},
                std::pair{static_cast<Index>(y1) * in_w + static_cast<Index>(x1), ly * lx}};
            for (const auto& [col, w] : taps) {
                if (w == 0.0) continue;
                map->cols.push_back(col);
                map->weights.push_back(w);
            }
            map->row_start.push_back(static_cast<Index>(map->cols.size()));
        }
    return map;
}

ag::Var conv3x3(const ag::Var& x, Index height, Index width, const ag::Var& weight, const ag::Var& bias) {
    const Index c = x.dim(1);
    if (x.dim(0) != height * width) throw std::invalid_argument("conv3x3: row count does not match the grid");
    if (weight.dim(0) != 9 * c)
        throw std::invalid_argument("conv3x3: weight expects " + std::to_string(weight.dim(0) / 9) +
                                    " input channels, got " + std::to_string(c));
    auto index = std::make_shared<std::vector<Index>>();
    index->reserve(static_cast<std::size_t>(height * width * 9));
    for (Index y = 0; y < height; ++y)
        for (Index xx = 0; xx < width; ++xx)
            for (Index ky = -1; ky <= 1; ++ky)
                for (Index kx = -1; kx <= 1; ++kx) {
                    const Index sy = y + ky, sx = xx + kx;
                    index->push_back((sy < 0 || sy >= height || sx < 0 || sx >= width) ? -1 : sy * width + sx);
                }
    ag::Var cols = ag::reshape(ag::gather_rows(x, index), {height * width, 9 * c});
    return ag::affine(cols, weight, bias);
}

std::array<Index, 4> decoder_slots(const ModelConfig& model, const SourceSpec& source) {
    const auto shapes = stage_shapes(model, source, model.decoder_reference_frames, source.tile_size, source.tile_size);
    return {shapes[0].frames, shapes[1].frames, shapes[2].frames, shapes[3].frames};
}

std::array<Index, 3> decoder_concat_channels(const ModelConfig& model, const std::vector<SourceSpec>& sources) {
    const auto channels = model.stage_channels();
    std::array<Index, 3> out{};
    Index prev = 0;
    for (const auto& s : sources) prev += decoder_slots(model, s)[3] * channels[3];
    for (int j = 1; j <= 3; ++j) {
        const int stage = 4 - j;
        Index cat = prev;
        for (const auto& s : sources) cat += decoder_slots(model, s)[stage - 1] * channels[stage - 1];
        if (model.aux_channels > 0 && model.aux_layer == j) cat += model.aux_channels;
        out[j - 1] = cat;
        prev = model.decoder_channels[j - 1];
    }
    return out;
}

void init_decoder(ParamStore& store, const ModelConfig& model, const std::vector<SourceSpec>& sources, Rng& rng) {
    const auto cat = decoder_concat_channels(model, sources);
    for (int j = 1; j <= 3; ++j) {
        const std::string p = "decoder.layer" + std::to_string(j);
        const Index out = model.decoder_channels[j - 1];
        store.add(p + ".conv1.weight", normal_tensor({9 * cat[j - 1], out}, std::sqrt(2.0 / (9.0 * cat[j - 1])), rng));
        store.add(p + ".conv1.bias", Tensor({out}));
        store.add(p + ".bn.weight", Tensor({out}, 1.0));
        store.add(p + ".bn.bias", Tensor({out}));
        store.add_buffer(p + ".bn.running_mean", Tensor({out}));
        store.add_buffer(p + ".bn.running_var", Tensor({out}, 1.0));
        store.add(p + ".conv2.weight", normal_tensor({9 * out, out}, std::sqrt(1.0 / (9.0 * out)), rng));
        store.add(p + ".conv2.bias", Tensor({out}));
    }
    const Index last = model.decoder_channels[2];
    Index width = model.num_classes;
    if (model.final_upsample == "learned") {
        const Index r = sources.empty() ? 4 : sources.front().spatial_patch;
        width *= r * r;
    }
    store.add("decoder.classifier.weight", normal_tensor({last, width}, std::sqrt(1.0 / static_cast<double>(last)), rng));
    store.add("decoder.classifier.bias", Tensor({width}));
}

DecoderOutput decode(ParamStore& store, const ModelConfig& model, const std::vector<SourceFeatures>& inputs,
                     const std::optional<Tensor>& aux, bool training) {
    if (inputs.empty()) throw std::invalid_argument("decode: no sources supplied");
    DecoderOutput result;

    auto skip = [&](const SourceFeatures& in, int stage, const std::array<Index, 2>& grid) {
        const StageFeatures& f = in.features->stages[stage - 1];
        const StageFeatures aligned = resample_frames(f, decoder_slots(model, *in.source)[stage - 1]);
        return resize(rearrange(aligned), f.height, f.width, grid[0], grid[1]);
    };

    auto grid = finest_grid(inputs, 4);
    std::vector<ag::Var> parts;
    for (const auto& in : inputs) parts.push_back(skip(in, 4, grid));
    ag::Var u = parts.size() == 1 ? parts.front() : ag::concat_cols(parts);

    std::optional<ag::Var> aux_rows;
    if (aux) {
        if (aux->rank() != 3) throw std::invalid_argument("decode: auxiliary features must be [H, W, C]");
        if (aux->dim(2) != model.aux_channels)
            throw std::invalid_argument("decode: auxiliary features have " + std::to_string(aux->dim(2)) +
                                        " channels, decoder expects " + std::to_string(model.aux_channels));
        aux_rows = ag::Var::constant(aux->reshaped({aux->dim(0) * aux->dim(1), aux->dim(2)}));
    } else if (model.aux_channels > 0) {
        throw std::invalid_argument("decode: decoder was built for auxiliary features but none were given");
    }

    for (int j = 1; j <= 3; ++j) {
        const int stage = 4 - j;
        const auto g = finest_grid(inputs, stage);
        std::vector<ag::Var> cat{resize(u, grid[0], grid[1], g[0], g[1])};
        for (const auto& in : inputs) cat.push_back(skip(in, stage, g));
        if (aux_rows && model.aux_layer == j) cat.push_back(resize(*aux_rows, aux->dim(0), aux->dim(1), g[0], g[1]));
        ag::Var x = ag::concat_cols(cat);
        result.concat_channels[j - 1] = x.dim(1);

        const std::string p = "decoder.layer" + std::to_string(j);
        x = conv3x3(x, g[0], g[1], store.get(p + ".conv1.weight"), store.get(p + ".conv1.bias"));
        ag::BatchNormState bn{&store.buffer(p + ".bn.running_mean"), &store.buffer(p + ".bn.running_var"), 0.1, 1e-5,
                              training};
        x = ag::relu(ag::batch_norm(x, store.get(p + ".bn.weight"), store.get(p + ".bn.bias"), bn));
        u = conv3x3(x, g[0], g[1], store.get(p + ".conv2.weight"), store.get(p + ".conv2.bias"));
        grid = g;
    }

    const SourceFeatures& fine = finest_source(inputs);
    const Index r = fine.source->spatial_patch;
    const Index out_h = grid[0] * r, out_w = grid[1] * r;
    ag::Var logits = ag::affine(u, store.get("decoder.classifier.weight"), store.get("decoder.classifier.bias"));
    if (model.final_upsample == "learned") {
        const Index k = model.num_classes;
        if (logits.dim(1) != k * r * r) throw std::invalid_argument("decode: learned upsample width mismatch");
        auto index = std::make_shared<std::vector<Index>>();
        index->reserve(static_cast<std::size_t>(out_h * out_w));
        for (Index y = 0; y < out_h; ++y)
            for (Index x = 0; x < out_w; ++x)
                index->push_back(((y / r) * grid[1] + x / r) * r * r + (y % r) * r + (x % r));
        logits = ag::gather_rows(ag::reshape(logits, {grid[0] * grid[1] * r * r, k}), index);
    } else {
        logits = resize(logits, grid[0], grid[1], out_h, out_w);
    }
    result.logits = logits;
    result.height = out_h;
    result.width = out_w;
    return result;
}

ag::Var ce_loss_hard_mining(const ag::Var& logits, const std::vector<int>& labels, double keep_fraction,
                            Index min_kept, std::optional<int> ignore_label) {
    return ag::cross_entropy_mined(logits, labels, {keep_fraction, min_kept, ignore_label});
}

std::vector<int> argmax_rows(const Tensor& logits) {
    const Index n = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(static_cast<std::size_t>(n));
    for (Index r = 0; r < n; ++r) {
        const double* row = logits.data().data() + r * k;
        out[r] = static_cast<int>(std::max_element(row, row + k) - row);
    }
    return out;
}

}  // namespace phenoswin
