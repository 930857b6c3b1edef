#include "phenoswin/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace phenoswin {

using nlohmann::json;

double lr_at(std::int64_t iteration, const ScheduleParams& p) {
    if (iteration < 0) throw std::invalid_argument("lr_at: iteration must be non-negative");
    const auto w = p.warmup_iterations;
    if (iteration <= w) {
        if (w == 0) return p.peak;
        return p.warmup_start + (p.peak - p.warmup_start) * static_cast<double>(iteration) / static_cast<double>(w);
    }
    if (iteration >= p.total_iterations) return p.floor;
    const double progress = static_cast<double>(iteration - w) / static_cast<double>(p.total_iterations - w);
    if (p.decay == "linear") return p.peak - (p.peak - p.floor) * progress;
    return p.floor + 0.5 * (p.peak - p.floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<int> sample_frames(int length, const std::string& mode, const TrainingSettings& s, Rng& rng) {
    int count = 0;
    if (mode == "fixed16") {
        count = 16;
    } else if (mode == "fixed") {
        count = s.frames;
    } else if (mode == "variable") {
        count = s.min_frames + static_cast<int>(rng.uniform_int(s.max_frames - s.min_frames + 1));
    } else if (mode == "single") {
        count = 1;
    } else {
        throw std::invalid_argument("sample_frames: unknown mode '" + mode + "'");
    }
    if (length < count)
        throw std::invalid_argument("sample_frames: sequence of " + std::to_string(length) + " frames is shorter than the " +
                                    std::to_string(count) + " requested");
    return rng.sorted_sample(length, count);
}

std::vector<int> evenly_spaced_frames(int length, int count) {
    if (count < 1 || count > length)
        throw std::invalid_argument("evenly_spaced_frames: cannot pick " + std::to_string(count) + " of " +
                                    std::to_string(length) + " frames");
    std::vector<int> out(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        out[i] = static_cast<int>(static_cast<std::int64_t>(i) * length / count);
    return out;
}

Tensor select_frames(const Tensor& seq, const std::vector<int>& frames) {
    if (seq.rank() != 4) throw std::invalid_argument("select_frames: sequence must be [C, T, H, W]");
    const Index C = seq.dim(0), T = seq.dim(1), plane = seq.dim(2) * seq.dim(3);
    const Index n = static_cast<Index>(frames.size());
    Tensor out({C, n, seq.dim(2), seq.dim(3)});
    for (Index c = 0; c < C; ++c)
        for (Index i = 0; i < n; ++i) {
            if (frames[i] < 0 || frames[i] >= T) throw std::out_of_range("select_frames: frame index out of range");
            const double* src = seq.data().data() + (c * T + frames[i]) * plane;
            std::copy(src, src + plane, out.data().data() + (c * n + i) * plane);
        }
    return out;
}

namespace {

/// Expands a single-frame draw to the configured sequence length.
std::vector<int> training_plan(int length, const TrainingSettings& s, Rng& rng) {
    std::vector<int> frames = sample_frames(length, s.frame_mode, s, rng);
    if (s.frame_mode == "single") frames.assign(static_cast<std::size_t>(s.frames), frames.front());
    return frames;
}

/// Cycles through shuffled permutations of [0, n).
class Cursor {
public:
    Cursor(int n, std::uint64_t seed) : rng_(seed), order_(static_cast<std::size_t>(n)) {
        for (int i = 0; i < n; ++i) order_[i] = i;
        reshuffle();
    }
    int next() {
        if (pos_ == order_.size()) reshuffle();
        return order_[pos_++];
    }
    Rng& rng() { return rng_; }

private:
    void reshuffle() {
        for (std::size_t i = order_.size(); i-- > 1;) std::swap(order_[i], order_[rng_.uniform_int(static_cast<std::int64_t>(i) + 1)]);
        pos_ = 0;
    }
    Rng rng_;
    std::vector<int> order_;
    std::size_t pos_ = 0;
};

std::vector<const LoadedTile*> training_tiles(const std::vector<LoadedTile>& tiles) {
    auto train = tiles_in_split(tiles, "train");
    if (train.empty())
        for (const auto& t : tiles) train.push_back(&t);
    return train;
}

}  // namespace

std::vector<int> eval_frame_plan(int length, int frames, const TrainingSettings& s, const std::string& key) {
    if (s.frame_mode == "single") {
        Rng rng(derive_seed(s.seed, "eval-frame/" + key));
        return std::vector<int>(static_cast<std::size_t>(s.frames), static_cast<int>(rng.uniform_int(length)));
    }
    return evenly_spaced_frames(length, frames);
}

std::vector<const LoadedTile*> tiles_in_split(const std::vector<LoadedTile>& tiles, const std::string& split) {
    std::vector<const LoadedTile*> out;
    for (const auto& t : tiles)
        if (t.split == split) out.push_back(&t);
    return out;
}

json run_metadata(const Config& config, const std::string& kind, std::int64_t iteration) {
    return {{"config_hash", config_hash(config)}, {"iteration", iteration}, {"seed", config.training.seed}, {"kind", kind}};
}

PretrainResult pretrain(const Config& config, const std::vector<LoadedTile>& tiles, const PretrainOptions& options) {
    const TrainingSettings& s = config.training;
    if (!s.fraction_supervision && !s.mean_teacher)
        throw std::invalid_argument("pretrain: fraction supervision and mean teacher are both disabled; nothing to optimize");
    if (tiles.empty()) throw std::invalid_argument("pretrain: no tiles");
    for (const auto& t : tiles)
        for (const auto& src : config.sources) (void)t.image(src.name);

    PretrainResult result{make_pretrain_nets(config.model, config.sources, s.seed, s.mean_teacher), 0};
    AdamW optimizer({s.beta1, s.beta2, s.adam_eps, s.weight_decay, s.grad_clip});
    const auto train = training_tiles(tiles);
    std::vector<Cursor> cursors;
    for (const auto& src : config.sources)
        cursors.emplace_back(static_cast<int>(train.size()), derive_seed(s.seed, "pretrain/" + src.name));

    for (std::int64_t it = 1; it <= s.schedule.total_iterations; ++it) {
        std::vector<SourceBatch> batches;
        for (std::size_t k = 0; k < config.sources.size(); ++k) {
            SourceBatch batch{config.sources[k].name, {}};
            for (int b = 0; b < s.pretrain_batch_size; ++b) {
                const LoadedTile& tile = *train[cursors[k].next()];
                const Tensor& seq = tile.image(batch.source);
                const auto frames = training_plan(static_cast<int>(seq.dim(1)), s, cursors[k].rng());
                batch.samples.push_back({select_frames(seq, frames), tile.fraction});
            }
            batches.push_back(std::move(batch));
        }
        PretrainStepOptions step;
        step.lr = lr_at(it - 1, s.schedule);
        step.tau = s.ema_tau;
        step.fraction_supervision = s.fraction_supervision;
        step.mean_teacher = s.mean_teacher;
        step.consistency_weight = s.consistency_weight;
        const StepReport report = pretrain_step(batches, result.nets, optimizer, step);
        result.iterations = it;

        if (options.log) {
            json sources = json::object();
            for (const auto& l : report.sources) {
                json terms = json::object();
                if (l.fraction_loss) terms["L_p"] = *l.fraction_loss;
                if (l.teacher_loss) terms["L_t"] = *l.teacher_loss;
                terms["total"] = l.total;
                sources[l.source] = terms;
            }
            json line = {{"iteration", it},
                         {"lr", step.lr},
                         {"total", report.total},
                         {"grad_norm", report.grad_norm},
                         {"sources", sources}};
            if (s.mean_teacher) line["tau"] = step.tau;
            options.log(line);
        }
        if (!options.checkpoint_dir.empty() && s.checkpoint_every > 0 && it % s.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "iter_%06lld", static_cast<long long>(it));
            save_checkpoint(options.checkpoint_dir / name,
                            make_bundle(result.nets.student, result.nets.teacher ? &*result.nets.teacher : nullptr,
                                        run_metadata(config, "pretrain", it)));
        }
    }
    return result;
}

// ---- segmentation -------------------------------------------------------------

SegmentationModel make_segmentation_model(const ModelConfig& model, const std::vector<SourceSpec>& sources,
                                          std::uint64_t seed) {
    SegmentationModel m{model, sources, {}};
    Rng rng(derive_seed(seed, "init"));
    init_backbone(m.store, model, sources, rng);
    Rng decoder_rng(derive_seed(seed, "init-decoder"));
    init_decoder(m.store, model, sources, decoder_rng);
    return m;
}

void load_backbone(SegmentationModel& model, const TensorMap& pretrained) {
    TensorMap backbone;
    for (const auto& [name, v] : model.store.params())
        if (is_backbone_parameter(name)) {
            auto it = pretrained.find(name);
            if (it != pretrained.end()) backbone.emplace(name, it->second);
        }
    std::vector<std::string> problems;
    for (const auto& [name, v] : model.store.params()) {
        if (!is_backbone_parameter(name)) continue;
        auto it = backbone.find(name);
        if (it == backbone.end())
            problems.push_back(name + " (missing)");
        else if (it->second.shape() != v.shape())
            problems.push_back(name + " (checkpoint " + shape_string(it->second.shape()) + ", model " +
                               shape_string(v.shape()) + ")");
    }
    if (!problems.empty()) {
        std::string msg = "incompatible checkpoint:";
        for (const auto& p : problems) msg += " " + p + ";";
        throw std::invalid_argument(msg);
    }
    assign_parameters(model.store, backbone, true);
}

SegmentationModel load_segmentation_model(const Config& config, const std::filesystem::path& checkpoint) {
    const CheckpointBundle bundle = load_checkpoint(checkpoint);
    SegmentationModel model = make_segmentation_model(config.model, config.sources, config.training.seed);
    assign_parameters(model.store, bundle.student);
    for (auto& [name, t] : model.store.buffers()) {
        auto it = bundle.buffers.find(name);
        if (it == bundle.buffers.end() || it->second.shape() != t.shape())
            throw std::invalid_argument("incompatible checkpoint: buffer " + name);
        t = it->second;
    }
    return model;
}

DecoderOutput segment(SegmentationModel& model, const std::vector<NamedInput>& inputs, bool training,
                      const std::optional<Tensor>& aux) {
    std::vector<BackboneOutput> features;
    std::vector<const SourceSpec*> specs;
    features.reserve(inputs.size());
    for (const auto& in : inputs) {
        const SourceSpec* spec = nullptr;
        for (const auto& s : model.sources)
            if (s.name == in.source) spec = &s;
        if (!spec) throw std::invalid_argument("segment: model has no source '" + in.source + "'");
        specs.push_back(spec);
        features.push_back(backbone_forward(model.store, model.model, *spec, in.input));
    }
    std::vector<SourceFeatures> skips;
    for (std::size_t i = 0; i < features.size(); ++i) skips.push_back({specs[i], &features[i]});
    return decode(model.store, model.model, skips, aux, training);
}

LabelMap predict_labels(SegmentationModel& model, const std::vector<NamedInput>& inputs, Tensor* probabilities) {
    ag::NoGradGuard no_grad;
    const DecoderOutput out = segment(model, inputs, false);
    LabelMap map(out.height, out.width);
    map.codes = argmax_rows(out.logits.value());
    if (probabilities) {
        const Tensor& z = out.logits.value();
        const Index n = z.dim(0), k = z.dim(1);
        *probabilities = Tensor({n, k});
        for (Index r = 0; r < n; ++r) {
            double mx = -INFINITY, sum = 0.0;
            for (Index c = 0; c < k; ++c) mx = std::max(mx, z[r * k + c]);
            for (Index c = 0; c < k; ++c) sum += ((*probabilities)[r * k + c] = std::exp(z[r * k + c] - mx));
            for (Index c = 0; c < k; ++c) (*probabilities)[r * k + c] /= sum;
        }
    }
    return map;
}

std::vector<NamedInput> eval_inputs(const SegmentationModel& model, const LoadedTile& tile, const TrainingSettings& s,
                                    int frames) {
    std::vector<NamedInput> inputs;
    for (const auto& src : model.sources) {
        const Tensor& seq = tile.image(src.name);
        const auto plan = eval_frame_plan(static_cast<int>(seq.dim(1)), frames, s, tile.geo_id + "/" + src.name);
        inputs.push_back({src.name, select_frames(seq, plan)});
    }
    return inputs;
}

ConfusionCounts evaluate_tiles(SegmentationModel& model, const std::vector<const LoadedTile*>& tiles,
                               const TrainingSettings& s, int frames) {
    ConfusionCounts total;
    total.per_class.resize(static_cast<std::size_t>(model.model.num_classes));
    for (const LoadedTile* tile : tiles) {
        const LabelMap pred = predict_labels(model, eval_inputs(model, *tile, s, frames));
        total += confusion(pred, tile->labels, model.model.num_classes, s.ignore_label);
    }
    return total;
}

int select_best_epoch(const std::vector<double>& scores) {
    if (scores.empty()) throw std::invalid_argument("select_best_epoch: no scores");
    return static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin()) + 1;
}

std::vector<int> data_ratio_subset(int n, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("data_ratio_subset: ratio must lie in (0, 1]");
    const int count = std::clamp(static_cast<int>(std::ceil(ratio * n - 1e-9)), n > 0 ? 1 : 0, n);
    Rng rng(derive_seed(seed, "data-ratio"));
    return rng.sorted_sample(n, count);
}

FinetuneResult finetune(const Config& config, const std::vector<LoadedTile>& tiles, const FinetuneOptions& options) {
    const TrainingSettings& s = config.training;
    if (tiles.empty()) throw std::invalid_argument("finetune: no tiles");
    FinetuneResult result{make_segmentation_model(config.model, config.sources, s.seed), {}, 0};
    SegmentationModel& model = result.model;
    if (options.pretrained) load_backbone(model, *options.pretrained);

    const auto all_train = training_tiles(tiles);
    std::vector<const LoadedTile*> train;
    for (int i : data_ratio_subset(static_cast<int>(all_train.size()), s.data_ratio, s.seed)) train.push_back(all_train[i]);
    auto val = tiles_in_split(tiles, "val");
    if (val.empty()) val = train;

    AdamW optimizer({s.beta1, s.beta2, s.adam_eps, s.weight_decay, s.grad_clip});
    auto trainable = [&](const std::string& name) {
        for (const auto& prefix : s.freeze)
            if (name.starts_with(prefix)) return false;
        return true;
    };
    Cursor cursor(static_cast<int>(train.size()), derive_seed(s.seed, "finetune"));
    const int eval_frames = s.frame_mode == "single" ? s.frames : s.eval_frames;

    ParamStore best;
    double best_f1 = -1.0;
    for (int epoch = 1; epoch <= s.finetune_epochs; ++epoch) {
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        while (seen < train.size()) {
            const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(s.finetune_batch_size), train.size() - seen);
            model.store.zero_grad();
            for (std::size_t b = 0; b < batch; ++b) {
                const LoadedTile& tile = *train[cursor.next()];
                std::vector<NamedInput> inputs;
                for (const auto& src : config.sources) {
                    const Tensor& seq = tile.image(src.name);
                    inputs.push_back({src.name, select_frames(seq, training_plan(static_cast<int>(seq.dim(1)), s, cursor.rng()))});
                }
                const DecoderOutput out = segment(model, inputs, true);
                ag::Var loss = ce_loss_hard_mining(out.logits, tile.labels.codes, s.keep_fraction, s.min_kept, s.ignore_label);
                epoch_loss += loss.value()[0];
                ag::backward(ag::scale(loss, 1.0 / static_cast<double>(batch)));
            }
            optimizer.step(model.store, s.finetune_lr, trainable);
            seen += batch;
        }
        const MetricsReport m = metrics(evaluate_tiles(model, val, s, eval_frames));
        result.val_f1.push_back(m.macro.f1.value);
        if (m.macro.f1.value > best_f1) {
            best_f1 = m.macro.f1.value;
            best = model.store.clone();
        }
        if (options.log)
            options.log({{"epoch", epoch},
                         {"loss", epoch_loss / static_cast<double>(train.size())},
                         {"lr", s.finetune_lr},
                         {"val_f1", m.macro.f1.value},
                         {"val_oa", m.overall_accuracy.value}});
        if (options.stop_at && m.macro.f1.value >= *options.stop_at) break;
    }
    result.best_epoch = select_best_epoch(result.val_f1);
    model.store = std::move(best);
    return result;
}

}  // namespace phenoswin
