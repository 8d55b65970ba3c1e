#pragma once

#include <bit>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gem/error.hpp"

namespace gem {

using Shape = std::vector<std::uint64_t>;

inline std::uint64_t shape_size(const Shape& shape) {
    std::uint64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

inline std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

/// Named dense tensor for one layer, row-major, always held at 64-bit.
struct LayerTensor {
    std::string name;
    Shape shape;
    std::vector<double> values;

    LayerTensor() = default;
    LayerTensor(std::string name_, Shape shape_, std::vector<double> values_)
        : name(std::move(name_)), shape(std::move(shape_)), values(std::move(values_)) {
        validate();
    }
    // Zero-filled tensor of the given shape.
    LayerTensor(std::string name_, Shape shape_)
        : name(std::move(name_)), shape(std::move(shape_)) {
        if (shape.empty()) throw DataError("layer '" + name + "': empty shape");
        values.assign(shape_size(shape), 0.0);
        validate();
    }

    std::size_t size() const { return values.size(); }

    void validate() const {
        if (shape.empty()) throw DataError("layer '" + name + "': empty shape");
        for (auto d : shape)
            if (d == 0) throw DataError("layer '" + name + "': zero dimension in shape " + shape_string(shape));
        if (values.size() != shape_size(shape))
            throw DataError("layer '" + name + "': " + std::to_string(values.size()) +
                            " values for shape " + shape_string(shape));
    }

    void require_finite() const {
        for (std::size_t i = 0; i < values.size(); ++i)
            if (!std::isfinite(values[i]))
                throw DataError("layer '" + name + "': non-finite value at flat index " + std::to_string(i));
    }

    friend bool operator==(const LayerTensor&, const LayerTensor&) = default;
};

// Bitwise comparison; distinguishes 0.0 from -0.0 and compares NaN payloads.
inline bool bitwise_equal(const LayerTensor& a, const LayerTensor& b) {
    return a.name == b.name && a.shape == b.shape && a.values.size() == b.values.size() &&
           (a.values.empty() ||
            std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(double)) == 0);
}

/// Ordered collection of layers plus per-layer tunability.
class ModelSnapshot {
public:
    ModelSnapshot() = default;

    void add_layer(LayerTensor layer, bool tunable) {
        layer.validate();
        if (find(layer.name)) throw DataError("duplicate layer name '" + layer.name + "'");
        layers_.push_back(std::move(layer));
        tunable_.push_back(tunable);
    }

    std::size_t layer_count() const { return layers_.size(); }
    const std::vector<LayerTensor>& layers() const { return layers_; }
    const LayerTensor& layer(std::size_t i) const { return layers_.at(i); }
    LayerTensor& layer(std::size_t i) { return layers_.at(i); }
    bool tunable(std::size_t i) const { return tunable_.at(i); }
    void set_tunable(std::size_t i, bool on) { tunable_.at(i) = on; }

    const LayerTensor* find(const std::string& name) const {
        for (const auto& l : layers_)
            if (l.name == name) return &l;
        return nullptr;
    }
    LayerTensor* find(const std::string& name) {
        for (auto& l : layers_)
            if (l.name == name) return &l;
        return nullptr;
    }
    std::optional<std::size_t> index_of(const std::string& name) const {
        for (std::size_t i = 0; i < layers_.size(); ++i)
            if (layers_[i].name == name) return i;
        return std::nullopt;
    }

    std::vector<std::size_t> tunable_indices() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            if (tunable_[i]) out.push_back(i);
        return out;
    }

    // N: parameter count over tunable layers.
    std::uint64_t total_params() const {
        std::uint64_t n = 0;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            if (tunable_[i]) n += layers_[i].size();
        return n;
    }

    std::uint64_t all_params() const {
        std::uint64_t n = 0;
        for (const auto& l : layers_) n += l.size();
        return n;
    }

    friend bool operator==(const ModelSnapshot&, const ModelSnapshot&) = default;

private:
    std::vector<LayerTensor> layers_;
    std::vector<bool> tunable_;
};

inline bool bitwise_equal(const ModelSnapshot& a, const ModelSnapshot& b) {
    if (a.layer_count() != b.layer_count()) return false;
    for (std::size_t i = 0; i < a.layer_count(); ++i)
        if (a.tunable(i) != b.tunable(i) || !bitwise_equal(a.layer(i), b.layer(i))) return false;
    return true;
}

/// Gradients at W_0 for (at least) the tunable layers of a model.
struct GradientSnapshot {
    std::vector<LayerTensor> layers;

    const LayerTensor* find(const std::string& name) const {
        for (const auto& l : layers)
            if (l.name == name) return &l;
        return nullptr;
    }
};

/// Weight/gradient tensors for one tunable layer, aligned by name.
struct PairedLayer {
    const LayerTensor* weights;
    const LayerTensor* grads;
};

// Align gradients to the model's tunable layers, in model order. Gradient
// entries for frozen layers are ignored; anything else that does not line up
// is rejected.
inline std::vector<PairedLayer> pair_layers(const ModelSnapshot& model, const GradientSnapshot& grads) {
    std::set<std::string> seen;
    for (const auto& g : grads.layers) {
        if (!seen.insert(g.name).second) throw DataError("duplicate gradient layer '" + g.name + "'");
        if (!model.find(g.name)) throw DataError("gradient layer '" + g.name + "' has no matching model layer");
    }
    std::vector<PairedLayer> out;
    for (std::size_t i : model.tunable_indices()) {
        const auto& w = model.layer(i);
        const auto* g = grads.find(w.name);
        if (!g) throw DataError("missing gradient for tunable layer '" + w.name + "'");
        if (g->shape != w.shape)
            throw DataError("layer '" + w.name + "': gradient shape " + shape_string(g->shape) +
                            " does not match weight shape " + shape_string(w.shape));
        out.push_back({&w, g});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint manifest: {version, layers:[{name, shape, dtype, file, tunable}]}
// with one raw little-endian row-major file per layer.

enum class Dtype { f32, f64 };

inline constexpr int kManifestVersion = 1;

namespace detail {

inline std::filesystem::path manifest_file(const std::filesystem::path& p) {
    if (std::filesystem::is_directory(p)) return p / "manifest.json";
    return p;
}

template <typename T>
T byteswap_value(T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
}

template <typename T>
T from_le(const unsigned char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
    return v;
}

template <typename T>
void append_le(std::string& out, T v) {
    if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.append(b, sizeof(T));
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot open '" + p.string() + "'");
    return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + p.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for '" + p.string() + "'");
}

inline std::string file_stem_for(std::size_t index, const std::string& name) {
    std::string safe;
    for (char c : name) safe += (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-') ? c : '_';
    char prefix[16];
    std::snprintf(prefix, sizeof prefix, "%04zu_", index);
    return prefix + safe + ".bin";
}

struct ManifestEntry {
    LayerTensor tensor;
    bool tunable;
};

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
    const auto manifest = manifest_file(path);
    if (!std::filesystem::exists(manifest)) throw DataError("manifest not found: '" + manifest.string() + "'");
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(manifest));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest '" + manifest.string() + "': " + e.what());
    }
    if (!doc.is_object() || !doc.contains("layers") || !doc["layers"].is_array())
        throw DataError("manifest '" + manifest.string() + "': missing 'layers' array");
    if (doc.value("version", 0) != kManifestVersion)
        throw DataError("manifest '" + manifest.string() + "': unsupported version");

    const auto base = manifest.parent_path();
    std::vector<ManifestEntry> out;
    std::set<std::string> names;
    for (const auto& entry : doc["layers"]) {
        std::string name, dtype, file;
        Shape shape;
        bool tunable = true;
        try {
            name = entry.at("name").get<std::string>();
            shape = entry.at("shape").get<Shape>();
            dtype = entry.at("dtype").get<std::string>();
            file = entry.at("file").get<std::string>();
            if (entry.contains("tunable")) tunable = entry["tunable"].get<bool>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError("manifest layer entry malformed: " + std::string(e.what()));
        }
        if (!names.insert(name).second) throw DataError("duplicate layer name '" + name + "'");
        if (shape.empty() || shape_size(shape) == 0)
            throw DataError("layer '" + name + "': invalid shape " + shape_string(shape));
        if (dtype != "f32" && dtype != "f64")
            throw DataError("layer '" + name + "': unknown dtype '" + dtype + "'");

        const auto data_path = base / file;
        if (!std::filesystem::exists(data_path))
            throw DataError("layer '" + name + "': missing data file '" + data_path.string() + "'");
        const std::string bytes = read_file(data_path);
        const std::uint64_t n = shape_size(shape);
        const std::size_t width = dtype == "f32" ? 4 : 8;
        if (bytes.size() != n * width)
            throw DataError("layer '" + name + "': shape " + shape_string(shape) + " with dtype " + dtype +
                            " needs " + std::to_string(n * width) + " bytes, file has " +
                            std::to_string(bytes.size()));

        std::vector<double> values(n);
        const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
        for (std::uint64_t i = 0; i < n; ++i) {
            values[i] = width == 4 ? static_cast<double>(from_le<float>(raw + 4 * i)) : from_le<double>(raw + 8 * i);
            if (!std::isfinite(values[i]))
                throw DataError("layer '" + name + "': non-finite value at flat index " + std::to_string(i));
        }
        out.push_back({LayerTensor(name, shape, std::move(values)), tunable});
    }
    return out;
}

inline std::filesystem::path save_manifest(const std::vector<std::pair<const LayerTensor*, bool>>& layers,
                                           const std::filesystem::path& out_dir, Dtype dtype) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create '" + out_dir.string() + "': " + ec.message());

    nlohmann::json doc;
    doc["version"] = kManifestVersion;
    doc["layers"] = nlohmann::json::array();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& [t, tunable] = layers[i];
        const std::string file = file_stem_for(i, t->name);
        std::string bytes;
        bytes.reserve(t->size() * (dtype == Dtype::f32 ? 4 : 8));
        for (double v : t->values) {
            if (dtype == Dtype::f32)
                append_le(bytes, static_cast<float>(v));
            else
                append_le(bytes, v);
        }
        write_file(out_dir / file, bytes);
        doc["layers"].push_back({{"name", t->name},
                                 {"shape", t->shape},
                                 {"dtype", dtype == Dtype::f32 ? "f32" : "f64"},
                                 {"file", file},
                                 {"tunable", tunable}});
    }
    const auto manifest = out_dir / "manifest.json";
    write_file(manifest, doc.dump(2) + "\n");
    return manifest;
}

}  // namespace detail

/// Load a snapshot from a manifest file or a directory holding manifest.json.
/// f32 data is widened to double; layer order follows the manifest.
inline ModelSnapshot load_snapshot(const std::filesystem::path& manifest_path) {
    ModelSnapshot snap;
    for (auto& e : detail::load_manifest(manifest_path)) snap.add_layer(std::move(e.tensor), e.tunable);
    return snap;
}

inline std::filesystem::path save_snapshot(const ModelSnapshot& snapshot, const std::filesystem::path& out_dir,
                                           Dtype dtype = Dtype::f64) {
    std::vector<std::pair<const LayerTensor*, bool>> layers;
    for (std::size_t i = 0; i < snapshot.layer_count(); ++i) layers.emplace_back(&snapshot.layer(i), snapshot.tunable(i));
    return detail::save_manifest(layers, out_dir, dtype);
}

// Gradient snapshots share the manifest format; the tunable flag is ignored.
inline GradientSnapshot load_gradients(const std::filesystem::path& manifest_path) {
    GradientSnapshot g;
    for (auto& e : detail::load_manifest(manifest_path)) g.layers.push_back(std::move(e.tensor));
    return g;
}

inline std::filesystem::path save_gradients(const GradientSnapshot& grads, const std::filesystem::path& out_dir,
                                            Dtype dtype = Dtype::f64) {
    std::vector<std::pair<const LayerTensor*, bool>> layers;
    for (const auto& l : grads.layers) layers.emplace_back(&l, true);
    return detail::save_manifest(layers, out_dir, dtype);
}

}  // namespace gem
