#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "dpn/adam.hpp"
#include "dpn/error.hpp"
#include "dpn/model.hpp"
#include "dpn/param_store.hpp"
#include "dpn/tensor.hpp"

namespace dpn {

// DPNW container, all integers little-endian, no padding:
//   "DPNW" | u32 version | u32 entry_count
//   entry*: u16 name_len | name | u8 ndim | ndim x u32 dim | u8 dtype (0 = f32)
//           | u8 frozen | u32 crc32(payload) | u64 payload_len | payload
// Entries are sorted by name.

inline constexpr std::array<char, 4> checkpoint_magic{'D', 'P', 'N', 'W'};
inline constexpr std::uint32_t checkpoint_version = 1;
inline constexpr std::uint8_t dtype_f32 = 0;
inline const std::string optim_prefix = "optim/";
inline const std::string golden_prefix = "golden/";

struct ManifestEntry {
    std::string name;
    Shape dims;
    std::uint8_t dtype = dtype_f32;
    bool frozen = false;
    std::uint64_t offset = 0; // payload offset from the start of the file
    std::uint64_t length = 0;
    std::uint32_t checksum = 0;
};

struct CheckpointManifest {
    std::uint32_t version = checkpoint_version;
    std::vector<ManifestEntry> entries;
};

/// Raw container contents: f32 payloads keyed by name.
struct RawEntry {
    std::string name;
    Shape dims;
    bool frozen = false;
    std::vector<float> data;
};

inline std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
    uLong c = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        c = crc32(c, p, chunk);
        p += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(c);
}

namespace detail {

class ByteWriter {
public:
    template <typename U>
    void put(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void put_bytes(const void* p, std::size_t n) {
        auto b = static_cast<const std::uint8_t*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }
    std::vector<std::uint8_t>& bytes() { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    ByteReader(const std::vector<std::uint8_t>& b, std::string source) : b_(b), source_(std::move(source)) {}

    template <typename U>
    U get(const char* what) {
        need(sizeof(U), what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
        pos_ += sizeof(U);
        return v;
    }
    const std::uint8_t* take(std::uint64_t n, const std::string& what) {
        need(n, what);
        const std::uint8_t* p = b_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == b_.size(); }

private:
    void need(std::uint64_t n, const std::string& what) {
        if (n > b_.size() - pos_)
            throw TruncatedError(source_ + ": file truncated while reading " + what + " at byte " +
                                 std::to_string(pos_));
    }
    const std::vector<std::uint8_t>& b_;
    std::size_t pos_ = 0;
    std::string source_;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string() + ": cannot open for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to a sibling temporary file, then renames over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError(path.string() + ": cannot open for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError(path.string() + ": write failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError(path.string() + ": rename failed: " + ec.message());
}

struct Parsed {
    CheckpointManifest manifest;
    std::vector<RawEntry> entries;
};

inline Parsed parse(const std::vector<std::uint8_t>& bytes, const std::string& source) {
    ByteReader r(bytes, source);
    const std::uint8_t* magic = r.take(4, "magic");
    if (!std::equal(checkpoint_magic.begin(), checkpoint_magic.end(), magic))
        throw MagicError(source + ": not a DPNW checkpoint (bad magic bytes)");
    Parsed out;
    out.manifest.version = r.get<std::uint32_t>("version");
    if (out.manifest.version != checkpoint_version)
        throw VersionError(source + ": unsupported checkpoint version " + std::to_string(out.manifest.version) +
                           " (this build reads version " + std::to_string(checkpoint_version) + ")");
    const auto count = r.get<std::uint32_t>("entry count");
    for (std::uint32_t i = 0; i < count; ++i) {
        ManifestEntry m;
        const auto len = r.get<std::uint16_t>("name length");
        const auto* name = r.take(len, "entry name");
        m.name.assign(reinterpret_cast<const char*>(name), len);
        const auto ndim = r.get<std::uint8_t>("rank");
        if (ndim > Shape::max_rank) throw FormatError(source + ": entry '" + m.name + "' has rank > 4");
        std::vector<std::size_t> dims(ndim);
        for (auto& d : dims) d = r.get<std::uint32_t>("dims");
        m.dims = Shape::from(dims);
        m.dtype = r.get<std::uint8_t>("dtype");
        if (m.dtype != dtype_f32)
            throw FormatError(source + ": entry '" + m.name + "' has unsupported dtype " + std::to_string(m.dtype));
        m.frozen = r.get<std::uint8_t>("frozen flag") != 0;
        m.checksum = r.get<std::uint32_t>("checksum");
        m.length = r.get<std::uint64_t>("payload length");
        if (m.length != m.dims.numel() * sizeof(float))
            throw FormatError(source + ": entry '" + m.name + "' payload length does not match dims " + m.dims.str());
        if (!out.manifest.entries.empty() && !(out.manifest.entries.back().name < m.name))
            throw FormatError(source + ": entries not in strictly increasing name order at '" + m.name + "'");
        m.offset = r.pos();
        const auto* payload = r.take(m.length, "payload of '" + m.name + "'");
        if (crc32_of(payload, m.length) != m.checksum)
            throw ChecksumError(m.name, source + ": checksum mismatch in entry '" + m.name + "'");
        RawEntry e{m.name, m.dims, m.frozen, std::vector<float>(m.dims.numel())};
        for (std::size_t k = 0; k < e.data.size(); ++k) {
            std::uint32_t bits = 0;
            for (std::size_t b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(payload[4 * k + b]) << (8 * b);
            e.data[k] = std::bit_cast<float>(bits);
        }
        out.manifest.entries.push_back(std::move(m));
        out.entries.push_back(std::move(e));
    }
    if (!r.done()) throw FormatError(source + ": trailing bytes after last entry");
    return out;
}

} // namespace detail

/// Serializes entries (sorted by name) into the DPNW byte layout.
inline std::vector<std::uint8_t> encode_checkpoint(std::vector<RawEntry> entries) {
    std::sort(entries.begin(), entries.end(), [](const RawEntry& a, const RawEntry& b) { return a.name < b.name; });
    detail::ByteWriter w;
    w.put_bytes(checkpoint_magic.data(), checkpoint_magic.size());
    w.put<std::uint32_t>(checkpoint_version);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
    std::vector<std::uint8_t> payload;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        if (i > 0 && entries[i - 1].name == e.name) throw ValueError("duplicate checkpoint entry '" + e.name + "'");
        if (e.name.size() > 0xFFFF) throw ValueError("checkpoint entry name too long: " + e.name.substr(0, 64));
        if (e.data.size() != e.dims.numel()) throw ShapeError("checkpoint entry '" + e.name + "' data/dims mismatch");
        payload.resize(e.data.size() * 4);
        for (std::size_t k = 0; k < e.data.size(); ++k) {
            const auto bits = std::bit_cast<std::uint32_t>(e.data[k]);
            for (std::size_t b = 0; b < 4; ++b) payload[4 * k + b] = static_cast<std::uint8_t>(bits >> (8 * b));
        }
        w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
        w.put_bytes(e.name.data(), e.name.size());
        w.put<std::uint8_t>(static_cast<std::uint8_t>(e.dims.rank()));
        for (auto d : e.dims.dims()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
        w.put<std::uint8_t>(dtype_f32);
        w.put<std::uint8_t>(e.frozen ? 1 : 0);
        w.put<std::uint32_t>(crc32_of(payload.data(), payload.size()));
        w.put<std::uint64_t>(payload.size());
        w.put_bytes(payload.data(), payload.size());
    }
    return std::move(w.bytes());
}

inline std::vector<RawEntry> read_raw_checkpoint(const std::filesystem::path& path) {
    return detail::parse(detail::read_file(path), path.string()).entries;
}

inline CheckpointManifest read_manifest(const std::filesystem::path& path) {
    return detail::parse(detail::read_file(path), path.string()).manifest;
}

inline void write_raw_checkpoint(const std::filesystem::path& path, std::vector<RawEntry> entries) {
    detail::write_file_atomic(path, encode_checkpoint(std::move(entries)));
}

template <typename T>
RawEntry to_raw(const std::string& name, const Tensor<T>& t, bool frozen) {
    RawEntry e{name, t.shape(), frozen, std::vector<float>(t.size())};
    for (std::size_t i = 0; i < t.size(); ++i) e.data[i] = static_cast<float>(t[i]);
    return e;
}

template <typename T>
Tensor<T> from_raw(const RawEntry& e) {
    std::vector<T> d(e.data.begin(), e.data.end());
    return Tensor<T>(e.dims, std::move(d));
}

/// Parameters (frozen flag = !trainable) plus, optionally, Adam moments under
/// `optim/m/<name>`, `optim/v/<name>` and the step counter `optim/step`.
template <typename T>
std::vector<RawEntry> checkpoint_entries(const ParamStore<T>& params, const AdamState<T>* optim = nullptr) {
    std::vector<RawEntry> out;
    for (const auto& [name, e] : params.entries()) out.push_back(to_raw(name, e.value, !e.trainable));
    if (optim) {
        for (const auto& [name, m] : optim->m) out.push_back(to_raw(optim_prefix + "m/" + name, m, false));
        for (const auto& [name, v] : optim->v) out.push_back(to_raw(optim_prefix + "v/" + name, v, false));
        Tensor<float> step(Shape{1}, static_cast<float>(optim->step));
        out.push_back(to_raw(optim_prefix + "step", step, false));
    }
    return out;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& params,
                     const AdamState<T>* optim = nullptr) {
    write_raw_checkpoint(path, checkpoint_entries(params, optim));
}

template <typename T>
struct LoadedCheckpoint {
    ParamStore<T> params;
    std::optional<AdamState<T>> optim;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
    LoadedCheckpoint<T> out;
    AdamState<T> st;
    bool has_optim = false;
    for (const auto& e : read_raw_checkpoint(path)) {
        if (e.name.rfind(optim_prefix, 0) != 0) {
            out.params.put(e.name, from_raw<T>(e), !e.frozen);
            continue;
        }
        has_optim = true;
        const std::string rest = e.name.substr(optim_prefix.size());
        if (rest == "step") {
            if (e.data.size() != 1) throw FormatError(path.string() + ": optim/step must hold one value");
            st.step = static_cast<std::uint64_t>(e.data[0]);
        } else if (rest.rfind("m/", 0) == 0) {
            st.m.emplace(rest.substr(2), from_raw<T>(e));
        } else if (rest.rfind("v/", 0) == 0) {
            st.v.emplace(rest.substr(2), from_raw<T>(e));
        } else {
            throw FormatError(path.string() + ": unknown optimizer entry '" + e.name + "'");
        }
    }
    if (has_optim) out.optim = std::move(st);
    return out;
}

/// Copies checkpoint tensors into a model's store. Names and dims must match
/// the architecture exactly; every offending entry is listed on failure.
template <typename T>
void assign_params(ParamStore<T>& target, const ParamStore<T>& source) {
    std::vector<std::string> problems;
    for (const auto& [name, e] : target.entries()) {
        if (!source.contains(name)) {
            problems.push_back("missing " + name);
        } else if (!(source.value(name).shape() == e.value.shape())) {
            problems.push_back(name + " dims " + source.value(name).shape().str() + " != " + e.value.shape().str());
        }
    }
    for (const auto& [name, _] : source.entries())
        if (!target.contains(name)) problems.push_back("unexpected " + name);
    if (!problems.empty()) {
        std::string msg = "checkpoint does not match the configured architecture:";
        for (auto& p : problems) msg += " [" + p + "]";
        throw MismatchError(msg);
    }
    for (auto& [name, e] : target.entries()) e.value = source.value(name);
}

// ---------------------------------------------------------------------------
// Golden activation fixtures
// ---------------------------------------------------------------------------

struct GoldenReport {
    std::array<double, pyramid_levels> max_abs_dev{};
    double tolerance = 1e-4;
    bool pass() const {
        return std::all_of(max_abs_dev.begin(), max_abs_dev.end(), [&](double d) { return d <= tolerance; });
    }
};

inline std::string golden_tap_name(std::size_t level) { return golden_prefix + "tap" + std::to_string(level + 1); }

/// Writes `golden/input` and the five encoder taps produced by `model`.
template <typename T>
void write_golden(const std::filesystem::path& path, DpnModel<T>& model, const Tensor<T>& input) {
    auto pyr = model.encode(input, Mode::inference);
    std::vector<RawEntry> entries{to_raw(golden_prefix + "input", input, true)};
    for (std::size_t i = 0; i < pyramid_levels; ++i) entries.push_back(to_raw(golden_tap_name(i), pyr.levels[i], true));
    write_raw_checkpoint(path, std::move(entries));
}

/// Runs the encoder on the fixture input and compares every tap.
template <typename T>
GoldenReport verify_golden(DpnModel<T>& model, const std::vector<RawEntry>& fixture, double tolerance = 1e-4) {
    auto find = [&](const std::string& name) -> const RawEntry* {
        for (const auto& e : fixture)
            if (e.name == name) return &e;
        return nullptr;
    };
    std::vector<std::string> missing;
    for (std::size_t i = 0; i <= pyramid_levels; ++i) {
        const std::string n = i == 0 ? golden_prefix + "input" : golden_tap_name(i - 1);
        if (!find(n)) missing.push_back(n);
    }
    if (!missing.empty()) {
        std::string msg = "golden fixture lacks:";
        for (auto& m : missing) msg += " " + m;
        throw FormatError(msg);
    }
    auto pyr = model.encode(from_raw<T>(*find(golden_prefix + "input")), Mode::inference);
    GoldenReport rep;
    rep.tolerance = tolerance;
    for (std::size_t i = 0; i < pyramid_levels; ++i) {
        const auto expected = from_raw<T>(*find(golden_tap_name(i)));
        if (!(expected.shape() == pyr.levels[i].shape()))
            throw ShapeError("golden " + golden_tap_name(i) + " dims " + expected.shape().str() +
                             " differ from engine tap " + pyr.levels[i].shape().str());
        rep.max_abs_dev[i] = static_cast<double>(max_abs_diff(expected, pyr.levels[i]));
    }
    return rep;
}

} // namespace dpn
