#include "phenoswin/config.hpp"

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace phenoswin {

using nlohmann::json;

namespace {

template <typename T>
constexpr const char* type_name() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else if constexpr (std::is_same_v<T, std::string>) return "a string";
    else return "an array";
}

// Reads the fields of one JSON object, rejecting unknown keys and wrong types.
class FieldReader {
public:
    FieldReader(const json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
        if (!obj_.is_object()) throw ConfigError("field '" + prefix_ + "' must be a JSON object");
    }

    template <typename T>
    void get(const std::string& key, T& out) {
        known_.insert(key);
        auto it = obj_.find(key);
        if (it == obj_.end()) return;
        out = convert<T>(*it, name(key));
    }

    template <typename T>
    void get(const std::string& key, std::optional<T>& out) {
        known_.insert(key);
        auto it = obj_.find(key);
        if (it == obj_.end()) return;
        if (it->is_null()) out.reset();
        else out = convert<T>(*it, name(key));
    }

    const json* find(const std::string& key) {
        known_.insert(key);
        auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    std::string name(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

    void finish() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it)
            if (!known_.contains(it.key())) throw ConfigError("unknown field '" + name(it.key()) + "'");
    }

private:
    template <typename T>
    static T convert(const json& v, const std::string& field) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("field '" + field + "' must be " + type_name<T>());
            return v.get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError("field '" + field + "' must be " + type_name<T>());
            if constexpr (std::is_unsigned_v<T>)
                if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
                    throw ConfigError("field '" + field + "' must be non-negative");
            return v.get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError("field '" + field + "' must be " + type_name<T>());
            return v.get<T>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError("field '" + field + "' must be " + type_name<T>());
            return v.get<std::string>();
        } else if constexpr (requires { std::tuple_size<T>::value; }) {
            constexpr std::size_t n = std::tuple_size<T>::value;
            if (!v.is_array() || v.size() != n)
                throw ConfigError("field '" + field + "' must be an array of " + std::to_string(n) + " integers");
            T out{};
            for (std::size_t i = 0; i < n; ++i)
                out[i] = convert<typename T::value_type>(v[i], field + "[" + std::to_string(i) + "]");
            return out;
        } else {
            if (!v.is_array()) throw ConfigError("field '" + field + "' must be an array");
            T out;
            for (std::size_t i = 0; i < v.size(); ++i)
                out.push_back(convert<typename T::value_type>(v[i], field + "[" + std::to_string(i) + "]"));
            return out;
        }
    }

    const json& obj_;
    std::string prefix_;
    std::set<std::string> known_;
};

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

ModelConfig parse_model(const json& j) {
    ModelConfig m;
    FieldReader r(j, "model");
    r.get("embed_dim", m.embed_dim);
    r.get("depths", m.depths);
    r.get("heads", m.heads);
    if (const json* w = r.find("window")) {
        require(w->is_array() && w->size() == 2 && (*w)[0].is_number_integer() && (*w)[1].is_number_integer(),
                "field 'model.window' must be [temporal, spatial] integers");
        m.window_temporal = (*w)[0].get<int>();
        m.window_spatial = (*w)[1].get<int>();
    }
    r.get("spatial_merge_factors", m.spatial_merge_factors);
    r.get("temporal_merge_factors", m.temporal_merge_factors);
    r.get("temporal_downsampling", m.temporal_downsampling);
    r.get("num_fraction_classes", m.num_fraction_classes);
    r.get("hidden_dim", m.hidden_dim);
    r.get("mlp_ratio", m.mlp_ratio);
    r.get("post_embed_norm", m.post_embed_norm);
    r.get("relative_position_bias", m.relative_position_bias);
    r.get("decoder_channels", m.decoder_channels);
    r.get("num_classes", m.num_classes);
    r.get("decoder_reference_frames", m.decoder_reference_frames);
    r.get("final_upsample", m.final_upsample);
    r.get("aux_channels", m.aux_channels);
    r.get("aux_layer", m.aux_layer);
    r.finish();
    return m;
}

SourceSpec parse_source(const json& j, std::size_t index) {
    SourceSpec s;
    const std::string prefix = "sources[" + std::to_string(index) + "]";
    FieldReader r(j, prefix);
    r.get("name", s.name);
    require(!s.name.empty(), "field '" + prefix + ".name' is required");
    s.bands = default_band_count(s.name);
    r.get("bands", s.bands);
    r.get("tile_size", s.tile_size);
    r.get("spatial_patch", s.spatial_patch);
    r.get("frames_per_year", s.frames_per_year);
    if (const json* rule = r.find("temporal_patch_rule")) {
        FieldReader rr(*rule, prefix + ".temporal_patch_rule");
        rr.get("threshold", s.temporal_patch_rule.threshold);
        rr.get("short", s.temporal_patch_rule.short_patch);
        rr.get("long", s.temporal_patch_rule.long_patch);
        rr.finish();
    }
    r.finish();
    return s;
}

TrainingSettings parse_training(const json& j) {
    TrainingSettings t;
    FieldReader r(j, "training");
    r.get("seed", t.seed);
    if (const json* s = r.find("schedule")) {
        FieldReader sr(*s, "training.schedule");
        sr.get("warmup_start", t.schedule.warmup_start);
        sr.get("peak", t.schedule.peak);
        sr.get("warmup_iterations", t.schedule.warmup_iterations);
        sr.get("floor", t.schedule.floor);
        sr.get("total_iterations", t.schedule.total_iterations);
        sr.get("decay", t.schedule.decay);
        sr.finish();
    }
    r.get("pretrain_batch_size", t.pretrain_batch_size);
    r.get("ema_tau", t.ema_tau);
    r.get("mean_teacher", t.mean_teacher);
    r.get("fraction_supervision", t.fraction_supervision);
    r.get("consistency_weight", t.consistency_weight);
    r.get("frame_mode", t.frame_mode);
    r.get("frames", t.frames);
    r.get("min_frames", t.min_frames);
    r.get("max_frames", t.max_frames);
    r.get("checkpoint_every", t.checkpoint_every);
    r.get("beta1", t.beta1);
    r.get("beta2", t.beta2);
    r.get("adam_eps", t.adam_eps);
    r.get("weight_decay", t.weight_decay);
    r.get("grad_clip", t.grad_clip);
    r.get("finetune_lr", t.finetune_lr);
    r.get("finetune_epochs", t.finetune_epochs);
    r.get("finetune_batch_size", t.finetune_batch_size);
    r.get("keep_fraction", t.keep_fraction);
    r.get("min_kept", t.min_kept);
    r.get("data_ratio", t.data_ratio);
    r.get("freeze", t.freeze);
    r.get("ignore_label", t.ignore_label);
    r.get("eval_frames", t.eval_frames);
    r.finish();
    return t;
}

DataSettings parse_data(const json& j) {
    DataSettings d;
    FieldReader r(j, "data");
    r.get("root", d.root);
    r.get("num_tiles", d.num_tiles);
    r.get("num_classes", d.num_classes);
    r.get("noise", d.noise);
    r.get("task", d.task);
    r.get("smoothing", d.smoothing);
    r.get("val_fraction", d.val_fraction);
    r.get("test_fraction", d.test_fraction);
    r.get("seed", d.seed);
    r.finish();
    return d;
}

}  // namespace

int default_band_count(const std::string& source_name) {
    if (source_name == "modis") return 7;
    if (source_name == "landsat") return 6;
    if (source_name == "sentinel2") return 10;
    return 0;
}

std::array<int, 4> ModelConfig::stage_channels() const {
    return {embed_dim, embed_dim * 2, embed_dim * 4, embed_dim * 8};
}

int ModelConfig::fraction_hidden_dim() const { return hidden_dim > 0 ? hidden_dim : stage_channels()[3]; }

const SourceSpec& Config::source(const std::string& name) const {
    for (const auto& s : sources)
        if (s.name == name) return s;
    throw ConfigError("unknown source '" + name + "'");
}

int spatial_reduction(const ModelConfig& model, const SourceSpec& source) {
    int r = source.spatial_patch;
    for (int f : model.spatial_merge_factors) r *= f;
    return r;
}

void validate(const Config& c) {
    const ModelConfig& m = c.model;
    require(m.embed_dim >= 1, "field 'model.embed_dim' must be positive");
    const auto channels = m.stage_channels();
    for (int i = 0; i < 4; ++i) {
        const std::string idx = "[" + std::to_string(i) + "]";
        require(m.depths[i] >= 1, "field 'model.depths" + idx + "' must be positive");
        require(m.heads[i] >= 1, "field 'model.heads" + idx + "' must be positive");
        require(channels[i] % m.heads[i] == 0, "field 'model.heads" + idx + "' = " + std::to_string(m.heads[i]) +
                                                   " does not divide stage channels " + std::to_string(channels[i]));
    }
    require(m.window_temporal >= 1 && m.window_spatial >= 1, "field 'model.window' entries must be positive");
    for (int i = 0; i < 3; ++i) {
        require(m.spatial_merge_factors[i] >= 1, "field 'model.spatial_merge_factors' entries must be positive");
        require(m.temporal_merge_factors[i] >= 1, "field 'model.temporal_merge_factors' entries must be positive");
    }
    require(m.num_fraction_classes == 9, "field 'model.num_fraction_classes' must be 9 (background + 8 land covers)");
    require(m.hidden_dim >= 0, "field 'model.hidden_dim' must be non-negative");
    require(m.mlp_ratio >= 1, "field 'model.mlp_ratio' must be positive");
    for (int ch : m.decoder_channels) require(ch >= 1, "field 'model.decoder_channels' entries must be positive");
    require(m.num_classes >= 2, "field 'model.num_classes' must be at least 2");
    require(m.decoder_reference_frames >= 3 && m.decoder_reference_frames <= 32,
            "field 'model.decoder_reference_frames' must lie in [3, 32]");
    require(m.final_upsample == "bilinear" || m.final_upsample == "learned",
            "field 'model.final_upsample' must be \"bilinear\" or \"learned\"");
    require(m.aux_channels >= 0, "field 'model.aux_channels' must be non-negative");
    require(m.aux_layer >= 1 && m.aux_layer <= 3, "field 'model.aux_layer' must be 1, 2 or 3");

    require(!c.sources.empty(), "field 'sources' must list at least one source");
    std::set<std::string> names;
    for (std::size_t i = 0; i < c.sources.size(); ++i) {
        const SourceSpec& s = c.sources[i];
        const std::string p = "sources[" + std::to_string(i) + "]";
        require(names.insert(s.name).second, "field '" + p + ".name' duplicates source '" + s.name + "'");
        require(s.bands >= 1, "field '" + p + ".bands' must be positive (required for user-defined sources)");
        require(s.spatial_patch >= 1, "field '" + p + ".spatial_patch' must be positive");
        require(s.frames_per_year >= 3, "field '" + p + ".frames_per_year' must be at least 3");
        const int red = spatial_reduction(m, s);
        require(s.tile_size >= 1 && s.tile_size % red == 0,
                "field '" + p + ".tile_size' = " + std::to_string(s.tile_size) + " is not divisible by " +
                    std::to_string(red) + " (spatial patch times merge factors; shape law needs exact division)");
        const auto& rule = s.temporal_patch_rule;
        for (int v : {rule.short_patch, rule.long_patch})
            require(v == 2 || v == 4, "field '" + p + ".temporal_patch_rule' must yield patch sizes in {2, 4}");
        require(rule.threshold >= 3 && rule.threshold <= 32, "field '" + p + ".temporal_patch_rule.threshold' must lie in [3, 32]");
    }

    const TrainingSettings& t = c.training;
    const ScheduleParams& s = t.schedule;
    require(s.warmup_start < s.peak, "field 'training.schedule': warmup_start must be below peak");
    require(s.floor < s.peak, "field 'training.schedule': floor must be below peak");
    require(s.warmup_iterations >= 0 && s.total_iterations >= 1, "field 'training.schedule' iteration counts invalid");
    require(s.decay == "cosine" || s.decay == "linear", "field 'training.schedule.decay' must be cosine or linear");
    require(t.pretrain_batch_size >= 1, "field 'training.pretrain_batch_size' must be positive");
    require(t.ema_tau > 0.0 && t.ema_tau < 1.0, "field 'training.ema_tau' must lie in (0, 1)");
    require(t.consistency_weight >= 0.0, "field 'training.consistency_weight' must be non-negative");
    require(t.frame_mode == "fixed16" || t.frame_mode == "fixed" || t.frame_mode == "variable" ||
                t.frame_mode == "single",
            "field 'training.frame_mode' must be fixed16, fixed, variable or single");
    require(t.frames >= 3 && t.frames <= 32, "field 'training.frames' must lie in [3, 32]");
    require(t.min_frames >= 3 && t.max_frames <= 32 && t.min_frames <= t.max_frames,
            "fields 'training.min_frames'/'training.max_frames' must satisfy 3 <= min <= max <= 32");
    require(t.checkpoint_every >= 0, "field 'training.checkpoint_every' must be non-negative");
    require(t.beta1 >= 0 && t.beta1 < 1 && t.beta2 >= 0 && t.beta2 < 1, "fields 'training.beta1/beta2' must lie in [0, 1)");
    require(t.adam_eps > 0, "field 'training.adam_eps' must be positive");
    require(t.weight_decay >= 0, "field 'training.weight_decay' must be non-negative");
    require(t.grad_clip >= 0, "field 'training.grad_clip' must be non-negative (0 disables)");
    require(t.finetune_lr > 0, "field 'training.finetune_lr' must be positive");
    require(t.finetune_epochs >= 1 && t.finetune_batch_size >= 1, "finetune epochs and batch size must be positive");
    require(t.keep_fraction > 0 && t.keep_fraction <= 1, "field 'training.keep_fraction' must lie in (0, 1]");
    require(t.min_kept >= 1, "field 'training.min_kept' must be positive");
    require(t.data_ratio > 0 && t.data_ratio <= 1, "field 'training.data_ratio' must lie in (0, 1]");
    require(t.eval_frames >= 3 && t.eval_frames <= 32, "field 'training.eval_frames' must lie in [3, 32]");

    const DataSettings& d = c.data;
    require(d.num_tiles >= 1, "field 'data.num_tiles' must be positive");
    require(d.num_classes >= 1 && d.num_classes <= 8, "field 'data.num_classes' must lie in [1, 8]");
    require(d.noise >= 0, "field 'data.noise' must be non-negative");
    require(d.task == "distinct" || d.task == "phase", "field 'data.task' must be distinct or phase");
    require(d.smoothing >= 0, "field 'data.smoothing' must be non-negative");
    require(d.val_fraction >= 0 && d.test_fraction >= 0 && d.val_fraction + d.test_fraction < 1,
            "fields 'data.val_fraction'/'data.test_fraction' must be non-negative and sum below 1");
}

Config parse_config(const json& j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    Config c;
    FieldReader root(j, "");
    if (const json* m = root.find("model")) c.model = parse_model(*m);
    const json* sources = root.find("sources");
    if (!sources) throw ConfigError("field 'sources' is required");
    if (!sources->is_array()) throw ConfigError("field 'sources' must be an array");
    for (std::size_t i = 0; i < sources->size(); ++i) c.sources.push_back(parse_source((*sources)[i], i));
    if (const json* t = root.find("training")) c.training = parse_training(*t);
    if (const json* d = root.find("data")) c.data = parse_data(*d);
    root.finish();
    validate(c);
    return c;
}

Config load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

json to_json(const Config& c) {
    const ModelConfig& m = c.model;
    json model = {{"embed_dim", m.embed_dim},
                  {"depths", m.depths},
                  {"heads", m.heads},
                  {"window", {m.window_temporal, m.window_spatial}},
                  {"spatial_merge_factors", m.spatial_merge_factors},
                  {"temporal_merge_factors", m.temporal_merge_factors},
                  {"temporal_downsampling", m.temporal_downsampling},
                  {"num_fraction_classes", m.num_fraction_classes},
                  {"hidden_dim", m.hidden_dim},
                  {"mlp_ratio", m.mlp_ratio},
                  {"post_embed_norm", m.post_embed_norm},
                  {"relative_position_bias", m.relative_position_bias},
                  {"decoder_channels", m.decoder_channels},
                  {"num_classes", m.num_classes},
                  {"decoder_reference_frames", m.decoder_reference_frames},
                  {"final_upsample", m.final_upsample},
                  {"aux_channels", m.aux_channels},
                  {"aux_layer", m.aux_layer}};
    json sources = json::array();
    for (const auto& s : c.sources)
        sources.push_back({{"name", s.name},
                           {"bands", s.bands},
                           {"tile_size", s.tile_size},
                           {"spatial_patch", s.spatial_patch},
                           {"frames_per_year", s.frames_per_year},
                           {"temporal_patch_rule",
                            {{"threshold", s.temporal_patch_rule.threshold},
                             {"short", s.temporal_patch_rule.short_patch},
                             {"long", s.temporal_patch_rule.long_patch}}}});
    const TrainingSettings& t = c.training;
    json training = {{"seed", t.seed},
                     {"schedule",
                      {{"warmup_start", t.schedule.warmup_start},
                       {"peak", t.schedule.peak},
                       {"warmup_iterations", t.schedule.warmup_iterations},
                       {"floor", t.schedule.floor},
                       {"total_iterations", t.schedule.total_iterations},
                       {"decay", t.schedule.decay}}},
                     {"pretrain_batch_size", t.pretrain_batch_size},
                     {"ema_tau", t.ema_tau},
                     {"mean_teacher", t.mean_teacher},
                     {"fraction_supervision", t.fraction_supervision},
                     {"consistency_weight", t.consistency_weight},
                     {"frame_mode", t.frame_mode},
                     {"frames", t.frames},
                     {"min_frames", t.min_frames},
                     {"max_frames", t.max_frames},
                     {"checkpoint_every", t.checkpoint_every},
                     {"beta1", t.beta1},
                     {"beta2", t.beta2},
                     {"adam_eps", t.adam_eps},
                     {"weight_decay", t.weight_decay},
                     {"grad_clip", t.grad_clip},
                     {"finetune_lr", t.finetune_lr},
                     {"finetune_epochs", t.finetune_epochs},
                     {"finetune_batch_size", t.finetune_batch_size},
                     {"keep_fraction", t.keep_fraction},
                     {"min_kept", t.min_kept},
                     {"data_ratio", t.data_ratio},
                     {"freeze", t.freeze},
                     {"ignore_label", t.ignore_label ? json(*t.ignore_label) : json(nullptr)},
                     {"eval_frames", t.eval_frames}};
    const DataSettings& d = c.data;
    json data = {{"root", d.root},
                 {"num_tiles", d.num_tiles},
                 {"num_classes", d.num_classes},
                 {"noise", d.noise},
                 {"task", d.task},
                 {"smoothing", d.smoothing},
                 {"val_fraction", d.val_fraction},
                 {"test_fraction", d.test_fraction},
                 {"seed", d.seed}};
    return {{"model", model}, {"sources", sources}, {"training", training}, {"data", data}};
}

std::string config_hash(const Config& config) {
    const std::string text = to_json(config).dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

}  // namespace phenoswin
