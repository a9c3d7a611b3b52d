#pragma once

// Binary model files.
//
//   "MCL1"                      4 bytes
//   u32 version (= 1)
//   u32 n_landmarks
//   u32 D
//   u32 block_count
//   per block: u16 name length, UTF-8 name, u8 rank, u32 extents[rank],
//              f32 values (row-major)
//   u32 CRC-32 of every preceding byte
//
// All integers and floats are little-endian. Prediction heads are blocks
// named "head.<i>.W"; BN running statistics are ordinary blocks.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include <zlib.h>

#include "mcl/errors.hpp"
#include "mcl/network.hpp"

namespace mcl {

inline constexpr std::uint32_t model_format_version = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "model I/O assumes a little-endian host");

class ByteWriter {
public:
    template <typename U>
    void put(U v) {
        const auto* p = reinterpret_cast<const unsigned char*>(&v);
        bytes_.insert(bytes_.end(), p, p + sizeof(U));
    }
    void put_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        bytes_.insert(bytes_.end(), p, p + n);
    }
    const std::vector<unsigned char>& bytes() const { return bytes_; }

private:
    std::vector<unsigned char> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(const std::vector<unsigned char>& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

    template <typename U>
    U get(const char* what) {
        U v;
        take(&v, sizeof(U), what);
        return v;
    }
    void take(void* dst, std::size_t n, const char* what) {
        if (pos_ + n > end_) throw FormatError(std::string("truncated model file while reading ") + what, pos_);
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }
    std::size_t pos() const { return pos_; }

private:
    const std::vector<unsigned char>& bytes_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
    return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

}  // namespace detail

template <typename T>
std::vector<unsigned char> serialize_model(const NetworkParams<T>& params, const NetworkSpec& spec) {
    detail::ByteWriter w;
    w.put_bytes("MCL1", 4);
    w.put<std::uint32_t>(model_format_version);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.n_landmarks));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.feature_dim));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(params.blocks.size()));
    for (const auto& b : params.blocks) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(b.name.size()));
        w.put_bytes(b.name.data(), b.name.size());
        const auto& v = b.block.value;
        w.put<std::uint8_t>(static_cast<std::uint8_t>(v.rank()));
        for (auto d : v.dims()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
        for (std::size_t i = 0; i < v.size(); ++i) w.put<float>(static_cast<float>(v[i]));
    }
    const auto crc = detail::crc32_of(w.bytes().data(), w.bytes().size());
    w.put<std::uint32_t>(crc);
    return w.bytes();
}

template <typename T>
std::pair<NetworkSpec, NetworkParams<T>> deserialize_model(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "MCL1", 4) != 0) throw FormatError("bad magic, expected \"MCL1\"", 0);
    if (bytes.size() < 8) throw FormatError("truncated model file", bytes.size());
    const std::size_t body = bytes.size() - 4;
    detail::ByteReader r(bytes, body);
    unsigned char magic[4];
    r.take(magic, 4, "magic");

    const auto version = r.get<std::uint32_t>("version");
    if (version != model_format_version) throw FormatError("unsupported model version " + std::to_string(version), 4);
    NetworkSpec spec;
    const std::size_t n_off = r.pos();
    spec.n_landmarks = static_cast<int>(r.get<std::uint32_t>("n_landmarks"));
    if (!is_supported_pattern(spec.n_landmarks)) {
        throw FormatError("unsupported landmark count " + std::to_string(spec.n_landmarks), n_off);
    }
    spec.feature_dim = static_cast<int>(r.get<std::uint32_t>("D"));
    const auto count = r.get<std::uint32_t>("block count");

    NetworkParams<T> params;
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto len = r.get<std::uint16_t>("block name length");
        std::string name(len, '\0');
        r.take(name.data(), len, "block name");
        const std::size_t rank_off = r.pos();
        const auto rank = r.get<std::uint8_t>("block rank");
        if (rank == 0) throw FormatError("block '" + name + "' has rank 0", rank_off);
        Dims dims(rank);
        for (auto& d : dims) {
            const std::size_t off = r.pos();
            d = r.get<std::uint32_t>("block extent");
            if (d == 0) throw FormatError("block '" + name + "' has a zero extent", off);
        }
        Tensor<T> value(dims);
        for (std::size_t i = 0; i < value.size(); ++i) value[i] = static_cast<T>(r.get<float>("block values"));
        const bool statistic = name.size() > 5 && (name.ends_with(".mean") || name.ends_with(".var"));
        params.blocks.push_back({std::move(name), ParamBlock<T>(std::move(value)), statistic});
    }
    if (r.pos() != body) throw FormatError("trailing bytes after the last block", r.pos());
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + body, 4);
    if (stored != detail::crc32_of(bytes.data(), body)) throw FormatError("checksum mismatch", body);

    // Channel widths are recovered from the conv filter extents.
    const std::size_t dim_off = 20;
    for (std::size_t u = 0; u < conv_units; ++u) {
        for (const std::string suffix : {".W", ".b"})
            if (!params.contains(NetworkSpec::conv_name(u) + suffix))
                throw FormatError("model is missing block " + NetworkSpec::conv_name(u) + suffix, dim_off);
        for (const std::string part : {".gamma", ".beta", ".mean", ".var"})
            if (!params.contains(NetworkSpec::bn_name(u) + part))
                throw FormatError("model is missing block " + NetworkSpec::bn_name(u) + part, dim_off);
        if (params.conv_w(u).value.rank() != 4) throw FormatError(NetworkSpec::conv_name(u) + ".W is not rank 4", dim_off);
    }
    for (std::size_t s = 0; s < 4; ++s) {
        static constexpr std::array<std::size_t, 4> first_unit{0, 2, 4, 6};
        spec.widths[s] = static_cast<int>(params.conv_w(first_unit[s]).value.dim(3));
    }
    for (std::size_t u = 0; u < conv_units; ++u) {
        const auto [in, out] = spec.conv_channels(u);
        const Dims want{kernel_size, kernel_size, static_cast<std::size_t>(in), static_cast<std::size_t>(out)};
        if (params.conv_w(u).value.dims() != want) {
            throw FormatError("block " + NetworkSpec::conv_name(u) + ".W has dims " +
                                  dims_to_string(params.conv_w(u).value.dims()) + ", expected " + dims_to_string(want),
                              dim_off);
        }
        const Dims per_channel{static_cast<std::size_t>(out)};
        for (const auto* b : {&params.conv_b(u), &params.bn(u, "gamma"), &params.bn(u, "beta"), &params.bn(u, "mean"),
                              &params.bn(u, "var")}) {
            if (b->value.dims() != per_channel) throw FormatError("per-channel block of unit " + NetworkSpec::unit_suffix(u) + " has wrong length", dim_off);
        }
    }
    const Dims head_dims{static_cast<std::size_t>(spec.feature_dim + 1), static_cast<std::size_t>(spec.outputs())};
    if (params.head_count() == 0) throw FormatError("model has no prediction head", dim_off);
    for (std::size_t i = 0; i < params.head_count(); ++i) {
        if (params.head(i).value.dims() != head_dims) {
            throw FormatError("head " + std::to_string(i) + " has dims " + dims_to_string(params.head(i).value.dims()) +
                                  ", expected " + dims_to_string(head_dims),
                              dim_off);
        }
    }
    return {spec, std::move(params)};
}

template <typename T>
void save_model(const NetworkParams<T>& params, const NetworkSpec& spec, const std::string& path) {
    const auto bytes = serialize_model(params, spec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing '" + path + "'");
}

template <typename T>
std::pair<NetworkSpec, NetworkParams<T>> load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open model file '" + path + "'");
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_model<T>(bytes);
}

}  // namespace mcl
