#pragma once

#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gem/gem.hpp"

namespace gem::test {

// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("gem_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline LayerTensor tensor(const std::string& name, std::vector<double> v) {
    const auto n = v.size();
    return LayerTensor(name, Shape{n}, std::move(v));
}

inline std::vector<double> normals(Rng& rng, std::size_t n, double sd = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, sd);
    return v;
}

inline ModelSnapshot snapshot_of(const std::vector<LayerTensor>& layers) {
    ModelSnapshot m;
    for (const auto& l : layers) m.add_layer(l, true);
    return m;
}

inline GradientSnapshot grads_of(const std::vector<LayerTensor>& layers) {
    GradientSnapshot g;
    g.layers = layers;
    return g;
}

inline std::string slurp(const std::filesystem::path& p) { return detail::read_file(p); }

}  // namespace gem::test
