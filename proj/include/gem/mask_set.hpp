#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gem/allocation.hpp"
#include "gem/error.hpp"
#include "gem/layer_mask.hpp"
#include "gem/model_store.hpp"

namespace gem {

struct Provenance {
    double ratio = 0.0;
    std::string strategy;
    double eps = 0.0;
    std::uint64_t seed = 0;
    std::string gradient_source;
    AllocationPlan plan;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

inline void to_json(nlohmann::json& j, const Provenance& p) {
    j = {{"ratio", p.ratio}, {"strategy", p.strategy},         {"eps", p.eps},
         {"seed", p.seed},   {"gradient_source", p.gradient_source}, {"plan", p.plan}};
}

inline void from_json(const nlohmann::json& j, Provenance& p) {
    j.at("ratio").get_to(p.ratio);
    j.at("strategy").get_to(p.strategy);
    j.at("eps").get_to(p.eps);
    j.at("seed").get_to(p.seed);
    j.at("gradient_source").get_to(p.gradient_source);
    j.at("plan").get_to(p.plan);
}

/// Output of mask construction: one mask per tunable layer plus how it was made.
struct MaskSet {
    std::vector<LayerMask> layers;
    Provenance provenance;

    std::uint64_t total_selected() const {
        std::uint64_t n = 0;
        for (const auto& l : layers) n += l.count();
        return n;
    }

    const LayerMask* find(const std::string& name) const {
        for (const auto& l : layers)
            if (l.layer_name == name) return &l;
        return nullptr;
    }

    void validate() const {
        for (const auto& l : layers) l.validate();
        if (total_selected() != provenance.plan.total_budget)
            throw DataError("mask set selects " + std::to_string(total_selected()) + " parameters but plan budget is " +
                            std::to_string(provenance.plan.total_budget));
    }

    friend bool operator==(const MaskSet&, const MaskSet&) = default;
};

// ---------------------------------------------------------------------------
// Binary mask file, little-endian:
//   "GEMM" | version u32 | layer count u32 | trailer offset u64
//   per layer: name length u32 | name bytes | rank u32 | dims u64[rank]
//              | count u64 | indices u64[count]
//   provenance JSON (UTF-8) from the trailer offset to end of file

inline constexpr char kMaskMagic[4] = {'G', 'E', 'M', 'M'};
inline constexpr std::uint32_t kMaskVersion = 1;
inline constexpr std::size_t kMaskHeaderSize = 20;

inline std::string encode_masks(const MaskSet& ms) {
    ms.validate();
    std::string out(kMaskMagic, 4);
    detail::append_le<std::uint32_t>(out, kMaskVersion);
    detail::append_le<std::uint32_t>(out, static_cast<std::uint32_t>(ms.layers.size()));
    detail::append_le<std::uint64_t>(out, 0);  // patched below
    for (const auto& l : ms.layers) {
        detail::append_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.layer_name.size()));
        out += l.layer_name;
        detail::append_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.shape.size()));
        for (auto d : l.shape) detail::append_le<std::uint64_t>(out, d);
        detail::append_le<std::uint64_t>(out, l.indices.size());
        for (auto i : l.indices) detail::append_le<std::uint64_t>(out, i);
    }
    std::string offset;
    detail::append_le<std::uint64_t>(offset, out.size());
    out.replace(12, 8, offset);
    out += nlohmann::json(ms.provenance).dump();
    return out;
}

namespace detail {

class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    template <typename T>
    T read() {
        need(sizeof(T));
        T v = from_le<T>(reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_);
        pos_ += sizeof(T);
        return v;
    }

    std::string read_string(std::size_t n) {
        need(n);
        std::string s(bytes_.substr(pos_, n));
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw DataError("mask file truncated at byte " + std::to_string(pos_));
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline MaskSet decode_masks(std::string_view bytes) {
    if (bytes.size() < kMaskHeaderSize || std::memcmp(bytes.data(), kMaskMagic, 4) != 0)
        throw DataError("not a mask file (bad magic)");
    detail::ByteReader rd(bytes.substr(4));
    const auto version = rd.read<std::uint32_t>();
    if (version != kMaskVersion)
        throw DataError("mask file version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kMaskVersion) + ")");
    const auto layer_count = rd.read<std::uint32_t>();
    const auto trailer = rd.read<std::uint64_t>();

    MaskSet ms;
    for (std::uint32_t l = 0; l < layer_count; ++l) {
        LayerMask m;
        m.layer_name = rd.read_string(rd.read<std::uint32_t>());
        const auto rank = rd.read<std::uint32_t>();
        for (std::uint32_t d = 0; d < rank; ++d) m.shape.push_back(rd.read<std::uint64_t>());
        const auto count = rd.read<std::uint64_t>();
        if (count > bytes.size() / 8) throw DataError("mask file truncated in layer '" + m.layer_name + "'");
        m.indices.resize(count);
        for (auto& i : m.indices) i = rd.read<std::uint64_t>();
        m.validate();
        ms.layers.push_back(std::move(m));
    }
    if (4 + rd.pos() != trailer)
        throw DataError("mask file trailer offset " + std::to_string(trailer) + " does not match layer records");
    try {
        ms.provenance = nlohmann::json::parse(bytes.substr(trailer)).get<Provenance>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("mask file provenance: ") + e.what());
    }
    ms.validate();
    return ms;
}

inline void save_masks(const MaskSet& ms, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    detail::write_file(path, encode_masks(ms));
}

inline MaskSet load_masks(const std::filesystem::path& path) { return decode_masks(detail::read_file(path)); }

}  // namespace gem
