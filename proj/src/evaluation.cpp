#include "phenoswin/evaluation.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "phenoswin/backbone.hpp"
#include "phenoswin/decoder.hpp"

namespace phenoswin {

using nlohmann::json;

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& other) {
    if (per_class.empty()) per_class.resize(other.per_class.size());
    if (per_class.size() != other.per_class.size())
        throw std::invalid_argument("cannot combine confusion counts with different class counts");
    for (std::size_t k = 0; k < per_class.size(); ++k) {
        per_class[k].tp += other.per_class[k].tp;
        per_class[k].fp += other.per_class[k].fp;
        per_class[k].tn += other.per_class[k].tn;
        per_class[k].fn += other.per_class[k].fn;
    }
    evaluated += other.evaluated;
    correct += other.correct;
    return *this;
}

ConfusionCounts confusion(const std::vector<int>& pred, const std::vector<int>& gt, int num_classes,
                          std::optional<int> ignore) {
    if (pred.size() != gt.size())
        throw std::invalid_argument("confusion: prediction has " + std::to_string(pred.size()) + " pixels, label has " +
                                    std::to_string(gt.size()));
    if (num_classes < 1) throw std::invalid_argument("confusion: num_classes must be positive");
    std::vector<std::int64_t> matrix(static_cast<std::size_t>(num_classes * num_classes), 0);
    ConfusionCounts out;
    out.per_class.resize(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (ignore && gt[i] == *ignore) continue;
        if (gt[i] < 0 || gt[i] >= num_classes || pred[i] < 0 || pred[i] >= num_classes)
            throw std::invalid_argument("confusion: class value out of range at pixel " + std::to_string(i));
        ++matrix[gt[i] * num_classes + pred[i]];
        ++out.evaluated;
        out.correct += pred[i] == gt[i];
    }
    for (int k = 0; k < num_classes; ++k) {
        ClassCounts& c = out.per_class[k];
        for (int j = 0; j < num_classes; ++j) {
            if (j == k) continue;
            c.fp += matrix[j * num_classes + k];
            c.fn += matrix[k * num_classes + j];
        }
        c.tp = matrix[k * num_classes + k];
        c.tn = out.evaluated - c.tp - c.fp - c.fn;
    }
    return out;
}

ConfusionCounts confusion(const LabelMap& pred, const LabelMap& gt, int num_classes, std::optional<int> ignore) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw std::invalid_argument("confusion: shape mismatch " + std::to_string(pred.height) + "x" +
                                    std::to_string(pred.width) + " vs " + std::to_string(gt.height) + "x" +
                                    std::to_string(gt.width));
    return confusion(pred.codes, gt.codes, num_classes, ignore);
}

namespace {

Ratio ratio(double num, double den) {
    if (den == 0.0) return {0.0, true};
    return {num / den, false};
}

json ratio_json(const Ratio& r) { return r.undefined ? json(nullptr) : json(r.value); }

json metrics_json(const ClassMetrics& m) {
    json flags = json::array();
    if (m.precision.undefined) flags.push_back("precision_undefined");
    if (m.recall.undefined) flags.push_back("recall_undefined");
    if (m.f1.undefined) flags.push_back("f1_undefined");
    if (m.oa.undefined) flags.push_back("oa_undefined");
    return {{"precision", m.precision.value},
            {"recall", m.recall.value},
            {"f1", m.f1.value},
            {"oa", m.oa.value},
            {"flags", flags}};
}

}  // namespace

ClassMetrics class_metrics(const ClassCounts& c) {
    ClassMetrics m;
    m.precision = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
    m.recall = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
    m.f1 = ratio(2.0 * m.precision.value * m.recall.value, m.precision.value + m.recall.value);
    m.f1.undefined = m.f1.undefined || m.precision.undefined || m.recall.undefined;
    m.oa = ratio(static_cast<double>(c.tp + c.tn), static_cast<double>(c.total()));
    return m;
}

MetricsReport metrics(const ConfusionCounts& counts, int positive_class) {
    MetricsReport r;
    r.positive_class = positive_class;
    const double k = static_cast<double>(counts.per_class.size());
    for (const auto& c : counts.per_class) {
        r.per_class.push_back(class_metrics(c));
        const ClassMetrics& m = r.per_class.back();
        r.macro.precision.value += m.precision.value / k;
        r.macro.recall.value += m.recall.value / k;
        r.macro.f1.value += m.f1.value / k;
        r.macro.oa.value += m.oa.value / k;
        r.macro.precision.undefined |= m.precision.undefined;
        r.macro.recall.undefined |= m.recall.undefined;
        r.macro.f1.undefined |= m.f1.undefined;
        r.macro.oa.undefined |= m.oa.undefined;
    }
    r.overall_accuracy = ratio(static_cast<double>(counts.correct), static_cast<double>(counts.evaluated));
    return r;
}

json report_json(const MetricsReport& report, const ConfusionCounts& counts, const std::string& config_hash) {
    json classes = json::array();
    for (std::size_t k = 0; k < report.per_class.size(); ++k) {
        json entry = metrics_json(report.per_class[k]);
        entry["class"] = k;
        const ClassCounts& c = counts.per_class[k];
        entry["counts"] = {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
        classes.push_back(entry);
    }
    json out = {{"config_hash", config_hash},
                {"pixels", counts.evaluated},
                {"per_class", classes},
                {"average", metrics_json(report.macro)},
                {"average_kind", "macro"},
                {"overall_accuracy", ratio_json(report.overall_accuracy)}};
    if (report.positive_class >= 0 && report.positive_class < static_cast<int>(report.per_class.size())) {
        out["positive"] = metrics_json(report.per_class[report.positive_class]);
        out["positive_class"] = report.positive_class;
    }
    return out;
}

// ---- FLOPs --------------------------------------------------------------------

std::int64_t attention_window_macs(std::int64_t slots, std::int64_t channels) {
    return 4 * slots * channels * channels + 2 * slots * slots * channels;
}

std::int64_t FlopsReport::backbone() const {
    std::int64_t n = 0;
    for (const auto& s : stages) n += s.total();
    return n;
}

FlopsReport flops_estimate(const ModelConfig& model, const SourceSpec& source, int frames, std::int64_t height,
                           std::int64_t width, bool include_decoder) {
    const auto shapes = stage_shapes(model, source, frames, height, width);
    const int s1 = temporal_patch_size(frames, source.temporal_patch_rule);
    const WindowParams wp{model.window_temporal, model.window_spatial};
    FlopsReport r;
    for (int i = 0; i < 4; ++i) {
        const StageShape& s = shapes[i];
        const std::int64_t tokens = s.frames * s.height * s.width;
        const std::int64_t c = s.channels;
        StageFlops& f = r.stages[i];
        if (i == 0) {
            f.embed = tokens * s1 * source.spatial_patch * source.spatial_patch * source.bands * c;
        } else {
            const std::int64_t d = model.spatial_merge_factors[i - 1];
            f.merge = tokens * d * d * (c / 2) * c;
        }
        for (int b = 0; b < model.depths[i]; ++b) {
            const WindowGeometry g = window_geometry(s.frames, s.height, s.width, wp, b % 2 == 1);
            const std::int64_t l = g.slots();
            // Projections run on real tokens only; logits and weighted sums on padded windows.
            f.attention += 4 * tokens * c * c + g.windows() * 2 * l * l * c;
            f.mlp += 2 * tokens * c * c * model.mlp_ratio;
        }
    }
    if (include_decoder) {
        const auto cat = decoder_concat_channels(model, {source});
        for (int j = 1; j <= 3; ++j) {
            const StageShape& s = shapes[3 - j];
            const std::int64_t px = s.height * s.width;
            const std::int64_t out = model.decoder_channels[j - 1];
            r.decoder += px * 9 * cat[j - 1] * out + px * 9 * out * out;
        }
        std::int64_t k = model.num_classes;
        if (model.final_upsample == "learned") k *= source.spatial_patch * source.spatial_patch;
        r.decoder += shapes[0].height * shapes[0].width * model.decoder_channels[2] * k;
    }
    return r;
}

json flops_json(const FlopsReport& r) {
    json stages = json::array();
    for (const auto& s : r.stages)
        stages.push_back({{"embed", s.embed}, {"attention", s.attention}, {"mlp", s.mlp}, {"merge", s.merge}, {"total", s.total()}});
    return {{"stages", stages}, {"backbone", r.backbone()}, {"decoder", r.decoder}, {"total", r.total()}};
}

// ---- plots --------------------------------------------------------------------

Canvas::Canvas(int width, int height, std::array<std::uint8_t, 3> background)
    : width_(width), height_(height), rgb_(static_cast<std::size_t>(width * height * 3)) {
    if (width < 1 || height < 1) throw std::invalid_argument("Canvas: size must be positive");
    for (int i = 0; i < width * height; ++i) std::copy(background.begin(), background.end(), rgb_.begin() + i * 3);
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> color) {
    x0 = std::clamp(x0, 0, width_);
    x1 = std::clamp(x1, 0, width_);
    y0 = std::clamp(y0, 0, height_);
    y1 = std::clamp(y1, 0, height_);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) std::copy(color.begin(), color.end(), rgb_.begin() + (y * width_ + x) * 3);
}

void Canvas::line(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> color) {
    const int steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1});
    for (int i = 0; i <= steps; ++i) {
        const int x = x0 + (x1 - x0) * i / steps;
        const int y = y0 + (y1 - y0) * i / steps;
        fill_rect(x, y, x + 1, y + 1, color);
    }
}

void Canvas::save_png(const std::filesystem::path& path) const {
    FILE* fp = std::fopen(path.string().c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot write '" + path.string() + "'");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("PNG encoding failed for '" + path.string() + "'");
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width_), static_cast<png_uint_32>(height_), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height_; ++y)
        png_write_row(png, const_cast<png_bytep>(rgb_.data() + static_cast<std::size_t>(y) * width_ * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

std::array<std::uint8_t, 3> class_color(int cls) {
    static const std::array<std::array<std::uint8_t, 3>, 10> palette{{{40, 40, 40},
                                                                      {230, 180, 30},
                                                                      {30, 120, 40},
                                                                      {150, 170, 80},
                                                                      {170, 220, 110},
                                                                      {60, 160, 170},
                                                                      {40, 90, 200},
                                                                      {190, 160, 120},
                                                                      {200, 40, 40},
                                                                      {150, 60, 160}}};
    return palette[static_cast<std::size_t>(cls) % palette.size()];
}

void plot_f1_bars(const MetricsReport& report, const std::filesystem::path& path) {
    const int n = static_cast<int>(report.per_class.size()) + 1;
    const int bar = 40, gap = 10, h = 200;
    Canvas c(n * (bar + gap) + gap, h + 20);
    for (int k = 0; k < n; ++k) {
        const double f1 = k + 1 < n ? report.per_class[k].f1.value : report.macro.f1.value;
        const int top = h + 10 - static_cast<int>(std::lround(f1 * h));
        c.fill_rect(gap + k * (bar + gap), top, gap + k * (bar + gap) + bar, h + 10,
                    k + 1 < n ? class_color(k) : std::array<std::uint8_t, 3>{120, 120, 120});
    }
    c.line(0, h + 10, c.width() - 1, h + 10, {0, 0, 0});
    c.save_png(path);
}

void plot_curves(const std::vector<std::vector<double>>& series, const std::filesystem::path& path) {
    const int w = 480, h = 240, m = 10;
    Canvas c(w + 2 * m, h + 2 * m);
    double lo = INFINITY, hi = -INFINITY;
    std::size_t len = 1;
    for (const auto& s : series)
        for (double v : s)
            if (std::isfinite(v)) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
    for (const auto& s : series) len = std::max(len, s.size());
    if (!(hi > lo)) {
        lo -= 1.0;
        hi += 1.0;
    }
    c.line(m, m + h, m + w, m + h, {0, 0, 0});
    c.line(m, m, m, m + h, {0, 0, 0});
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        auto px = [&](std::size_t i) { return m + static_cast<int>(len > 1 ? i * w / (len - 1) : 0); };
        auto py = [&](double v) { return m + h - static_cast<int>(std::lround((v - lo) / (hi - lo) * h)); };
        for (std::size_t i = 1; i < s.size(); ++i) c.line(px(i - 1), py(s[i - 1]), px(i), py(s[i]), class_color(static_cast<int>(k) + 1));
    }
    c.save_png(path);
}

void plot_prediction_panel(const LabelMap& prediction, const LabelMap& label, const std::filesystem::path& path) {
    const int scale = std::max<int>(1, 256 / static_cast<int>(std::max<Index>(label.width, 1)));
    const int w = static_cast<int>(label.width) * scale, h = static_cast<int>(label.height) * scale;
    Canvas c(2 * w + 10, h);
    for (Index y = 0; y < label.height; ++y)
        for (Index x = 0; x < label.width; ++x) {
            const int X = static_cast<int>(x) * scale, Y = static_cast<int>(y) * scale;
            c.fill_rect(X, Y, X + scale, Y + scale, class_color(prediction.at(y, x)));
            c.fill_rect(w + 10 + X, Y, w + 10 + X + scale, Y + scale, class_color(label.at(y, x)));
        }
    c.save_png(path);
}

}  // namespace phenoswin
