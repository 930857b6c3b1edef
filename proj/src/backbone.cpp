#include "phenoswin/backbone.hpp"

#include <algorithm>
#include <stdexcept>

namespace phenoswin {

namespace {

constexpr double kInitStd = 0.02;

int embed_kernel_frames(const SourceSpec& source) {
    return std::max(source.temporal_patch_rule.short_patch, source.temporal_patch_rule.long_patch);
}

Index region_label(Index pos, Index padded, Index window, Index shift) {
    if (shift == 0) return 0;
    if (pos < padded - window) return 0;
    if (pos < padded - shift) return 1;
    return 2;
}

}  // namespace

int temporal_patch_size(int frames, const TemporalPatchRule& rule) {
    if (frames < 3 || frames > 32)
        throw std::invalid_argument("sequence length T=" + std::to_string(frames) +
                                    " is outside the supported range [3, 32]");
    return rule.select(frames);
}

Index merged_frames(Index frames, int factor, bool temporal_downsampling) {
    if (!temporal_downsampling || factor <= 1) return frames;
    return std::max<Index>(1, (frames + factor - 1) / factor);
}

std::array<StageShape, 4> stage_shapes(const ModelConfig& model, const SourceSpec& source, int frames, Index height,
                                       Index width) {
    const int s1 = temporal_patch_size(frames, source.temporal_patch_rule);
    const int d1 = source.spatial_patch;
    if (height % d1 != 0 || width % d1 != 0)
        throw std::invalid_argument("spatial size " + std::to_string(height) + "x" + std::to_string(width) +
                                    " is not divisible by the spatial patch " + std::to_string(d1));
    std::array<StageShape, 4> shapes{};
    shapes[0] = {frames / s1, height / d1, width / d1, model.embed_dim};
    for (int i = 1; i < 4; ++i) {
        const StageShape& prev = shapes[i - 1];
        const int d = model.spatial_merge_factors[i - 1];
        if (prev.height % d != 0 || prev.width % d != 0)
            throw std::invalid_argument("stage " + std::to_string(i) + " grid " + std::to_string(prev.height) + "x" +
                                        std::to_string(prev.width) + " is not divisible by merge factor " +
                                        std::to_string(d));
        shapes[i] = {merged_frames(prev.frames, model.temporal_merge_factors[i - 1], model.temporal_downsampling),
                     prev.height / d, prev.width / d, prev.channels * 2};
    }
    return shapes;
}

WindowGeometry window_geometry(Index frames, Index height, Index width, const WindowParams& params, bool shifted) {
    WindowGeometry g;
    g.dims = {frames, height, width};
    const std::array<Index, 3> configured{params.temporal, params.spatial, params.spatial};
    for (int a = 0; a < 3; ++a) {
        const Index d = g.dims[a];
        g.window[a] = std::min(configured[a], d);
        g.shift[a] = (shifted && d > configured[a]) ? g.window[a] / 2 : 0;
        g.padded[a] = (d + g.window[a] - 1) / g.window[a] * g.window[a];
    }
    return g;
}

Index relative_bias_table_size(const WindowParams& params) {
    return static_cast<Index>(2 * params.temporal - 1) * (2 * params.spatial - 1) * (2 * params.spatial - 1);
}

WindowLayout make_window_layout(const WindowGeometry& g, const WindowParams& configured) {
    const Index nt = g.padded[0] / g.window[0];
    const Index nh = g.padded[1] / g.window[1];
    const Index nw = g.padded[2] / g.window[2];
    const Index L = g.slots();
    const Index windows = nt * nh * nw;
    const Index tokens = g.dims[0] * g.dims[1] * g.dims[2];

    auto token_of_slot = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(windows * L), -1);
    auto slot_of_token = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(tokens), -1);
    std::vector<Index> labels(static_cast<std::size_t>(windows * L));

    for (Index wt = 0; wt < nt; ++wt)
        for (Index wh = 0; wh < nh; ++wh)
            for (Index ww = 0; ww < nw; ++ww) {
                const Index win = (wt * nh + wh) * nw + ww;
                for (Index a = 0; a < g.window[0]; ++a)
                    for (Index b = 0; b < g.window[1]; ++b)
                        for (Index c = 0; c < g.window[2]; ++c) {
                            const Index slot = win * L + (a * g.window[1] + b) * g.window[2] + c;
                            const std::array<Index, 3> shifted{wt * g.window[0] + a, wh * g.window[1] + b,
                                                               ww * g.window[2] + c};
                            Index label = 0;
                            bool real = true;
                            std::array<Index, 3> orig{};
                            for (int ax = 0; ax < 3; ++ax) {
                                orig[ax] = (shifted[ax] + g.shift[ax]) % g.padded[ax];
                                if (orig[ax] >= g.dims[ax]) real = false;
                                label = label * 3 + region_label(shifted[ax], g.padded[ax], g.window[ax], g.shift[ax]);
                            }
                            labels[slot] = label;
                            if (real) {
                                const Index tok = (orig[0] * g.dims[1] + orig[1]) * g.dims[2] + orig[2];
                                (*token_of_slot)[slot] = tok;
                                (*slot_of_token)[tok] = slot;
                            }
                        }
            }

    auto allowed = std::make_shared<std::vector<std::uint8_t>>(static_cast<std::size_t>(windows * L * L), 0);
    for (Index win = 0; win < windows; ++win)
        for (Index i = 0; i < L; ++i)
            for (Index j = 0; j < L; ++j) {
                const Index si = win * L + i, sj = win * L + j;
                (*allowed)[(win * L + i) * L + j] = ((*token_of_slot)[sj] >= 0 && labels[si] == labels[sj]) ? 1 : 0;
            }

    const Index span_h = 2 * configured.spatial - 1;
    auto rel = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(L * L));
    for (Index i = 0; i < L; ++i) {
        const Index ia = i / (g.window[1] * g.window[2]), ib = (i / g.window[2]) % g.window[1], ic = i % g.window[2];
        for (Index j = 0; j < L; ++j) {
            const Index ja = j / (g.window[1] * g.window[2]), jb = (j / g.window[2]) % g.window[1], jc = j % g.window[2];
            (*rel)[i * L + j] = ((ia - ja + configured.temporal - 1) * span_h + (ib - jb + configured.spatial - 1)) * span_h +
                                (ic - jc + configured.spatial - 1);
        }
    }

    WindowLayout layout;
    layout.geometry = g;
    layout.token_of_slot = std::move(token_of_slot);
    layout.slot_of_token = std::move(slot_of_token);
    layout.relative_index = std::move(rel);
    layout.allowed = std::move(allowed);
    return layout;
}

// ---- parameters ---------------------------------------------------------------------

void init_patch_embed(ParamStore& store, const ModelConfig& model, const SourceSpec& source, Rng& rng) {
    const std::string p = "embed." + source.name;
    const Index fan_in = static_cast<Index>(embed_kernel_frames(source)) * source.spatial_patch * source.spatial_patch *
                         source.bands;
    store.add(p + ".weight", normal_tensor({fan_in, model.embed_dim}, kInitStd, rng));
    store.add(p + ".bias", Tensor({model.embed_dim}));
    if (model.post_embed_norm) {
        store.add(p + ".norm.weight", Tensor({model.embed_dim}, 1.0));
        store.add(p + ".norm.bias", Tensor({model.embed_dim}));
    }
}

void init_swin_block(ParamStore& store, const std::string& prefix, int channels, int heads, const ModelConfig& model,
                     Rng& rng) {
    const Index c = channels;
    const Index hidden = c * model.mlp_ratio;
    store.add(prefix + ".norm1.weight", Tensor({c}, 1.0));
    store.add(prefix + ".norm1.bias", Tensor({c}));
    store.add(prefix + ".attn.qkv.weight", normal_tensor({c, 3 * c}, kInitStd, rng));
    store.add(prefix + ".attn.qkv.bias", Tensor({3 * c}));
    if (model.relative_position_bias)
        store.add(prefix + ".attn.relative_bias",
                  normal_tensor({relative_bias_table_size({model.window_temporal, model.window_spatial}), heads},
                                kInitStd, rng));
    store.add(prefix + ".attn.proj.weight", normal_tensor({c, c}, kInitStd, rng));
    store.add(prefix + ".attn.proj.bias", Tensor({c}));
    store.add(prefix + ".norm2.weight", Tensor({c}, 1.0));
    store.add(prefix + ".norm2.bias", Tensor({c}));
    store.add(prefix + ".mlp.fc1.weight", normal_tensor({c, hidden}, kInitStd, rng));
    store.add(prefix + ".mlp.fc1.bias", Tensor({hidden}));
    store.add(prefix + ".mlp.fc2.weight", normal_tensor({hidden, c}, kInitStd, rng));
    store.add(prefix + ".mlp.fc2.bias", Tensor({c}));
}

void init_backbone(ParamStore& store, const ModelConfig& model, const std::vector<SourceSpec>& sources, Rng& rng) {
    for (const auto& s : sources) init_patch_embed(store, model, s, rng);
    const auto channels = model.stage_channels();
    for (int stage = 1; stage <= 4; ++stage) {
        const int c = channels[stage - 1];
        if (stage > 1) {
            const int d = model.spatial_merge_factors[stage - 2];
            const Index in = static_cast<Index>(d) * d * channels[stage - 2];
            store.add("stage" + std::to_string(stage) + ".merge.weight", normal_tensor({in, c}, kInitStd, rng));
        }
        for (int b = 0; b < model.depths[stage - 1]; ++b)
            init_swin_block(store, "stage" + std::to_string(stage) + ".block" + std::to_string(b), c,
                            model.heads[stage - 1], model, rng);
    }
}

bool is_backbone_parameter(const std::string& name) {
    return name.starts_with("stage") || name.starts_with("embed.");
}

// ---- forward --------------------------------------------------------------------------

StageFeatures patch_embed(const ParamStore& store, const SourceSpec& source, const Tensor& input,
                          const PatchEmbedParams& params, bool post_norm) {
    if (input.rank() != 4) throw std::invalid_argument("patch_embed: input must be [C, T, H, W]");
    const Index C = input.dim(0), T = input.dim(1), H = input.dim(2), W = input.dim(3);
    const Index S = params.temporal_patch, D = params.spatial_patch;
    if (C != params.in_channels)
        throw std::invalid_argument("patch_embed: source '" + source.name + "' expects " +
                                    std::to_string(params.in_channels) + " bands, got " + std::to_string(C));
    if (H % D != 0 || W % D != 0)
        throw std::invalid_argument("patch_embed: spatial size " + std::to_string(H) + "x" + std::to_string(W) +
                                    " is not divisible by the spatial patch " + std::to_string(D));
    if (T < S) throw std::invalid_argument("patch_embed: sequence shorter than the temporal patch");
    const Index T1 = T / S, H1 = H / D, W1 = W / D;
    const Index width = S * D * D * C;

    Tensor patches({T1 * H1 * W1, width});
    for (Index t = 0; t < T1; ++t)
        for (Index h = 0; h < H1; ++h)
            for (Index w = 0; w < W1; ++w) {
                double* row = patches.data().data() + ((t * H1 + h) * W1 + w) * width;
                for (Index s = 0; s < S; ++s)
                    for (Index dy = 0; dy < D; ++dy)
                        for (Index dx = 0; dx < D; ++dx)
                            for (Index c = 0; c < C; ++c)
                                row[((s * D + dy) * D + dx) * C + c] =
                                    input[((c * T + t * S + s) * H + h * D + dy) * W + w * D + dx];
            }

    const std::string p = "embed." + source.name;
    ag::Var weight = store.get(p + ".weight");
    const Index kernel = weight.dim(0) / (D * D * C);
    if (kernel * D * D * C != weight.dim(0))
        throw std::invalid_argument("patch_embed: weight shape does not match source '" + source.name + "'");
    if (kernel != S) {
        if (kernel % S != 0)
            throw std::invalid_argument("patch_embed: stored kernel of " + std::to_string(kernel) +
                                        " frames cannot be folded to " + std::to_string(S));
        // Sum adjacent temporal taps: a short patch acts like a long patch over repeated frames.
        const Index fold = kernel / S;
        const Index block = D * D * C;
        auto map = std::make_shared<ag::SparseRowMap>();
        map->out_rows = S * block;
        map->in_rows = weight.dim(0);
        map->row_start.push_back(0);
        for (Index s = 0; s < S; ++s)
            for (Index k = 0; k < block; ++k) {
                for (Index f = 0; f < fold; ++f) {
                    map->cols.push_back((s * fold + f) * block + k);
                    map->weights.push_back(1.0);
                }
                map->row_start.push_back(static_cast<Index>(map->cols.size()));
            }
        weight = ag::sparse_rows(weight, map);
    }
    ag::Var out = ag::affine(ag::Var::constant(std::move(patches)), weight, store.get(p + ".bias"));
    if (post_norm) out = ag::layer_norm(out, store.get(p + ".norm.weight"), store.get(p + ".norm.bias"));

    StageFeatures f;
    f.data = out;
    f.frames = T1;
    f.height = H1;
    f.width = W1;
    f.channels = params.out_channels;
    f.stage = 1;
    return f;
}

StageFeatures swin_block(const ParamStore& store, const std::string& prefix, const StageFeatures& input, int heads,
                         const WindowParams& window, bool shifted, bool relative_bias, Tensor* probe,
                         WindowLayout* layout_out) {
    const Index C = input.channels;
    const WindowGeometry geo = window_geometry(input.frames, input.height, input.width, window, shifted);
    WindowLayout layout = make_window_layout(geo, window);

    ag::Var x = input.data;
    ag::Var h = ag::layer_norm(x, store.get(prefix + ".norm1.weight"), store.get(prefix + ".norm1.bias"));
    ag::Var qkv = ag::affine(h, store.get(prefix + ".attn.qkv.weight"), store.get(prefix + ".attn.qkv.bias"));
    ag::Var windows = ag::gather_rows(qkv, layout.token_of_slot);
    ag::Var bias;
    if (relative_bias) bias = ag::gather_rows(store.get(prefix + ".attn.relative_bias"), layout.relative_index);
    ag::AttentionSpec spec{geo.windows(), geo.slots(), heads, layout.allowed};
    ag::Var attended = ag::window_attention(windows, bias, spec, probe);
    ag::Var back = ag::gather_rows(attended, layout.slot_of_token);
    ag::Var proj = ag::affine(back, store.get(prefix + ".attn.proj.weight"), store.get(prefix + ".attn.proj.bias"));
    x = ag::add(x, proj);

    ag::Var h2 = ag::layer_norm(x, store.get(prefix + ".norm2.weight"), store.get(prefix + ".norm2.bias"));
    ag::Var m = ag::gelu(ag::affine(h2, store.get(prefix + ".mlp.fc1.weight"), store.get(prefix + ".mlp.fc1.bias")));
    m = ag::affine(m, store.get(prefix + ".mlp.fc2.weight"), store.get(prefix + ".mlp.fc2.bias"));
    x = ag::add(x, m);

    if (layout_out) *layout_out = std::move(layout);
    StageFeatures out = input;
    out.data = x;
    out.channels = C;
    return out;
}

StageFeatures merge_gather_pool(const StageFeatures& input, const MergeParams& params) {
    const Index T = input.frames, H = input.height, W = input.width, C = input.channels;
    const Index D = params.spatial_factor;
    if (H % D != 0 || W % D != 0)
        throw std::invalid_argument("patch_merge: grid " + std::to_string(H) + "x" + std::to_string(W) +
                                    " is not divisible by merge factor " + std::to_string(D));
    ag::Var x = input.data;
    Index T2 = T;
    if (params.temporal_downsampling && params.temporal_factor > 1) {
        const Index S = params.temporal_factor;
        T2 = merged_frames(T, params.temporal_factor, true);
        const Index plane = H * W;
        auto map = std::make_shared<ag::SparseRowMap>();
        map->out_rows = T2 * plane;
        map->in_rows = T * plane;
        map->row_start.reserve(static_cast<std::size_t>(map->out_rows + 1));
        map->row_start.push_back(0);
        for (Index t2 = 0; t2 < T2; ++t2) {
            const Index begin = t2 * S, end = std::min(T, begin + S);
            const double w = 1.0 / static_cast<double>(end - begin);
            for (Index p = 0; p < plane; ++p) {
                for (Index t = begin; t < end; ++t) {
                    map->cols.push_back(t * plane + p);
                    map->weights.push_back(w);
                }
                map->row_start.push_back(static_cast<Index>(map->cols.size()));
            }
        }
        x = ag::sparse_rows(x, map);
    }
    const Index H2 = H / D, W2 = W / D;
    auto index = std::make_shared<std::vector<Index>>();
    index->reserve(static_cast<std::size_t>(T2 * H2 * W2 * D * D));
    for (Index t = 0; t < T2; ++t)
        for (Index h = 0; h < H2; ++h)
            for (Index w = 0; w < W2; ++w)
                for (Index dy = 0; dy < D; ++dy)
                    for (Index dx = 0; dx < D; ++dx) index->push_back((t * H + h * D + dy) * W + w * D + dx);
    ag::Var gathered = ag::reshape(ag::gather_rows(x, index), {T2 * H2 * W2, D * D * C});

    StageFeatures out;
    out.data = gathered;
    out.frames = T2;
    out.height = H2;
    out.width = W2;
    out.channels = D * D * C;
    out.stage = input.stage + 1;
    return out;
}

StageFeatures patch_merge(const ParamStore& store, const std::string& prefix, const StageFeatures& input,
                          const MergeParams& params) {
    StageFeatures pooled = merge_gather_pool(input, params);
    const ag::Var& w = store.get(prefix + ".weight");
    pooled.data = ag::affine(pooled.data, w, ag::Var());
    pooled.channels = w.dim(1);
    return pooled;
}

BackboneOutput backbone_forward(const ParamStore& store, const ModelConfig& model, const SourceSpec& source,
                                const Tensor& input) {
    if (!store.contains("embed." + source.name + ".weight"))
        throw std::invalid_argument("backbone_forward: no patch embedding registered for source '" + source.name + "'");
    if (input.rank() != 4) throw std::invalid_argument("backbone_forward: input must be [C, T, H, W]");
    const int frames = static_cast<int>(input.dim(1));
    const int s1 = temporal_patch_size(frames, source.temporal_patch_rule);
    const auto channels = model.stage_channels();
    const WindowParams window{model.window_temporal, model.window_spatial};

    BackboneOutput out;
    StageFeatures x = patch_embed(store, source, input, {s1, source.spatial_patch, source.bands, model.embed_dim},
                                  model.post_embed_norm);
    for (int stage = 1; stage <= 4; ++stage) {
        const std::string sp = "stage" + std::to_string(stage);
        if (stage > 1)
            x = patch_merge(store, sp + ".merge", x,
                            {model.temporal_merge_factors[stage - 2], model.spatial_merge_factors[stage - 2],
                             channels[stage - 2], model.temporal_downsampling});
        for (int b = 0; b < model.depths[stage - 1]; ++b)
            x = swin_block(store, sp + ".block" + std::to_string(b), x, model.heads[stage - 1], window, b % 2 == 1,
                           model.relative_position_bias);
        x.stage = stage;
        out.stages[stage - 1] = x;
    }
    return out;
}

}  // namespace phenoswin
