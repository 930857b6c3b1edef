#include "phenoswin/checkpoint.hpp"

#include <fstream>
#include <stdexcept>
#include <vector>

namespace phenoswin {

namespace fs = std::filesystem;
using nlohmann::json;

TensorMap parameter_values(const ParamStore& store) {
    TensorMap out;
    for (const auto& [name, v] : store.params()) out.emplace(name, v.value());
    return out;
}

CheckpointBundle make_bundle(const ParamStore& student, const ParamStore* teacher, json metadata) {
    CheckpointBundle b;
    b.student = parameter_values(student);
    if (teacher) b.teacher = parameter_values(*teacher);
    b.buffers = student.buffers();
    b.metadata = std::move(metadata);
    return b;
}

namespace {

std::string module_of(const std::string& name) { return name.substr(0, name.find('.')); }

struct Group {
    std::vector<float> data;
    json tensors = json::array();
};

void add_group(std::map<std::string, Group>& groups, const std::string& role, const TensorMap& tensors) {
    for (const auto& [name, t] : tensors) {
        Group& g = groups[role + "." + module_of(name)];
        g.tensors.push_back({{"name", name},
                             {"role", role},
                             {"shape", t.shape()},
                             {"dtype", "float32"},
                             {"offset", g.data.size() * sizeof(float)}});
        for (double v : t.data()) g.data.push_back(static_cast<float>(v));
    }
}

}  // namespace

void save_checkpoint(const fs::path& dir, const CheckpointBundle& bundle) {
    std::map<std::string, Group> groups;
    add_group(groups, "student", bundle.student);
    if (bundle.teacher) add_group(groups, "teacher", *bundle.teacher);
    add_group(groups, "buffer", bundle.buffers);

    const fs::path tmp = dir.string() + ".tmp";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    json entries = json::array();
    for (const auto& [key, g] : groups) {
        const std::string file = key + ".f32";
        std::ofstream out(tmp / file, std::ios::binary);
        out.write(reinterpret_cast<const char*>(g.data.data()), static_cast<std::streamsize>(g.data.size() * sizeof(float)));
        if (!out) throw std::runtime_error("failed writing checkpoint blob '" + file + "'");
        for (json t : g.tensors) {
            t["file"] = file;
            entries.push_back(std::move(t));
        }
    }
    {
        std::ofstream out(tmp / "manifest.json");
        out << json{{"format", "phenoswin-checkpoint-1"}, {"metadata", bundle.metadata}, {"tensors", entries}}.dump(2) << '\n';
        if (!out) throw std::runtime_error("failed writing checkpoint manifest");
    }
    const fs::path old = dir.string() + ".old";
    fs::remove_all(old);
    if (fs::exists(dir)) fs::rename(dir, old);
    fs::rename(tmp, dir);
    fs::remove_all(old);
}

CheckpointBundle load_checkpoint(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw std::runtime_error("no checkpoint manifest in '" + dir.string() + "'");
    const json manifest = json::parse(in);
    CheckpointBundle b;
    b.metadata = manifest.value("metadata", json::object());
    std::map<std::string, std::vector<float>> blobs;
    for (const auto& t : manifest.at("tensors")) {
        const std::string file = t.at("file").get<std::string>();
        if (!blobs.contains(file)) {
            std::ifstream bin(dir / file, std::ios::binary | std::ios::ate);
            if (!bin) throw std::runtime_error("checkpoint blob '" + file + "' is missing");
            const auto bytes = static_cast<std::size_t>(bin.tellg());
            std::vector<float> data(bytes / sizeof(float));
            bin.seekg(0);
            bin.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
            blobs.emplace(file, std::move(data));
        }
        const auto& blob = blobs.at(file);
        Tensor value(t.at("shape").get<Shape>());
        const std::size_t first = t.at("offset").get<std::size_t>() / sizeof(float);
        if (first + static_cast<std::size_t>(value.numel()) > blob.size())
            throw std::runtime_error("checkpoint tensor '" + t.at("name").get<std::string>() + "' overruns its blob");
        for (Index i = 0; i < value.numel(); ++i) value[i] = blob[first + static_cast<std::size_t>(i)];
        const std::string role = t.at("role").get<std::string>();
        const std::string name = t.at("name").get<std::string>();
        if (role == "student") {
            b.student.emplace(name, std::move(value));
        } else if (role == "teacher") {
            if (!b.teacher) b.teacher.emplace();
            b.teacher->emplace(name, std::move(value));
        } else if (role == "buffer") {
            b.buffers.emplace(name, std::move(value));
        } else {
            throw std::runtime_error("unknown checkpoint role '" + role + "'");
        }
    }
    return b;
}

void assign_parameters(ParamStore& store, const TensorMap& values, bool allow_missing) {
    std::vector<std::string> problems;
    for (auto& [name, v] : store.params()) {
        auto it = values.find(name);
        if (it == values.end()) {
            if (!allow_missing) problems.push_back(name + " (missing)");
        } else if (it->second.shape() != v.shape()) {
            problems.push_back(name + " (checkpoint " + shape_string(it->second.shape()) + ", model " +
                               shape_string(v.shape()) + ")");
        }
    }
    if (!problems.empty()) {
        std::string msg = "incompatible checkpoint:";
        for (const auto& p : problems) msg += " " + p + ";";
        throw std::invalid_argument(msg);
    }
    for (auto& [name, v] : store.params()) {
        auto it = values.find(name);
        if (it != values.end()) v.mutable_value() = it->second;
    }
}

}  // namespace phenoswin
