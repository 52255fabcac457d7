#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "atcn/common.hpp"
#include "atcn/model.hpp"

namespace atcn {

inline constexpr char kCheckpointMagic[] = "ATCN1";
inline constexpr int kCheckpointVersion = 1;

// CRC-32 (IEEE, reflected polynomial 0xEDB88320).
inline uint32_t crc32(const uint8_t* data, size_t len, uint32_t crc = 0) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    crc = ~crc;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return ~crc;
}

// Training-side state carried alongside the model: optimizer arrays, epoch
// counter and run seed.
struct CheckpointExtras {
    int64_t epoch = 0;
    int64_t opt_step = 0;
    uint64_t seed = 0;
    std::vector<ParamArray> arrays;
};

namespace detail {

template <typename T>
inline void put(std::vector<uint8_t>& buf, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const size_t at = buf.size();
    buf.resize(at + sizeof(T));
    std::memcpy(buf.data() + at, &v, sizeof(T)); // little-endian host assumed
}

inline void put_bytes(std::vector<uint8_t>& buf, const void* p, size_t n) {
    const size_t at = buf.size();
    buf.resize(at + n);
    std::memcpy(buf.data() + at, p, n);
}

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t at = 0;

    template <typename T>
    T get() {
        if (at + sizeof(T) > buf.size()) throw IoError("checkpoint truncated");
        T v;
        std::memcpy(&v, buf.data() + at, sizeof(T));
        at += sizeof(T);
        return v;
    }

    std::string get_string(size_t n) {
        if (at + n > buf.size()) throw IoError("checkpoint truncated");
        std::string s(reinterpret_cast<const char*>(buf.data() + at), n);
        at += n;
        return s;
    }

    void get_doubles(double* out, size_t n) {
        if (at + n * sizeof(double) > buf.size()) throw IoError("checkpoint truncated");
        std::memcpy(out, buf.data() + at, n * sizeof(double));
        at += n * sizeof(double);
    }
};

inline void put_array(std::vector<uint8_t>& buf, const std::string& name,
                      const std::vector<int64_t>& shape, const std::vector<double>& values) {
    put<uint32_t>(buf, static_cast<uint32_t>(name.size()));
    put_bytes(buf, name.data(), name.size());
    put<uint32_t>(buf, static_cast<uint32_t>(shape.size()));
    for (int64_t d : shape) put<int64_t>(buf, d);
    put_bytes(buf, values.data(), values.size() * sizeof(double));
}

struct RawArray {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<double> values;
};

inline RawArray get_array(Reader& r) {
    RawArray a;
    const uint32_t name_len = r.get<uint32_t>();
    a.name = r.get_string(name_len);
    const uint32_t rank = r.get<uint32_t>();
    int64_t count = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        a.shape.push_back(r.get<int64_t>());
        count *= a.shape.back();
    }
    if (count < 0) throw IoError("checkpoint: negative array extent");
    a.values.resize(static_cast<size_t>(count));
    r.get_doubles(a.values.data(), a.values.size());
    return a;
}

} // namespace detail

// Layout: magic, u32 header length, canonical-JSON header, parameter records
// (name, rank, dims, values; all integers and floats 64-bit little-endian),
// optional optimizer records, u32 CRC-32 of all preceding bytes.
inline void save_checkpoint(const Model& model, const std::string& path,
                            const CheckpointExtras* extras = nullptr) {
    std::vector<uint8_t> buf;
    detail::put_bytes(buf, kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
    nlohmann::json header = {
        {"version", kCheckpointVersion},
        {"config", model_config_to_json(model.config())},
        {"epoch", extras ? extras->epoch : 0},
        {"opt_step", extras ? extras->opt_step : 0},
        {"seed", extras ? extras->seed : 0},
        {"param_arrays", model.params().count()},
        {"extra_arrays", extras ? extras->arrays.size() : 0},
    };
    const std::string hs = header.dump();
    detail::put<uint32_t>(buf, static_cast<uint32_t>(hs.size()));
    detail::put_bytes(buf, hs.data(), hs.size());
    for (const ParamArray& p : model.params().all())
        detail::put_array(buf, p.name, p.shape, p.values);
    if (extras) {
        for (const ParamArray& p : extras->arrays) detail::put_array(buf, p.name, p.shape, p.values);
    }
    detail::put<uint32_t>(buf, crc32(buf.data(), buf.size()));

    const std::string tmp = path + ".tmp";
    {
        std::ofstream fs(tmp, std::ios::binary);
        if (!fs) throw IoError("cannot write " + tmp);
        fs.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!fs) throw IoError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline Model load_checkpoint(const std::string& path, CheckpointExtras* extras = nullptr) {
    std::ifstream fs(path, std::ios::binary);
    if (!fs) throw IoError("cannot open " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(fs)), std::istreambuf_iterator<char>());
    if (buf.size() < sizeof(kCheckpointMagic) - 1 + 8) throw IoError("checkpoint truncated");

    uint32_t stored_crc;
    std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
    if (crc32(buf.data(), buf.size() - 4) != stored_crc)
        throw IoError("checkpoint corrupted: CRC mismatch");
    buf.resize(buf.size() - 4);

    detail::Reader r{buf};
    if (r.get_string(sizeof(kCheckpointMagic) - 1) != kCheckpointMagic)
        throw IoError("not a checkpoint file (bad magic)");
    const uint32_t hlen = r.get<uint32_t>();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.get_string(hlen));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint header unreadable: ") + e.what());
    }
    if (header.at("version").get<int>() != kCheckpointVersion)
        throw IoError("unsupported checkpoint version");

    Model model = Model::build(model_config_from_json(header.at("config")));
    const auto n_params = header.at("param_arrays").get<size_t>();
    const auto n_extra = header.at("extra_arrays").get<size_t>();
    if (n_params != model.params().count())
        throw IoError("checkpoint parameter count disagrees with its config");
    for (size_t i = 0; i < n_params; ++i) {
        detail::RawArray a = detail::get_array(r);
        const int id = model.params().find(a.name);
        if (id < 0) throw IoError("checkpoint holds unknown parameter '" + a.name + "'");
        ParamArray& p = model.params()[id];
        if (p.shape != a.shape || p.values.size() != a.values.size())
            throw IoError("checkpoint parameter '" + a.name + "' has the wrong shape");
        p.values = std::move(a.values);
    }
    if (extras) {
        extras->epoch = header.at("epoch").get<int64_t>();
        extras->opt_step = header.at("opt_step").get<int64_t>();
        extras->seed = header.at("seed").get<uint64_t>();
        extras->arrays.clear();
        for (size_t i = 0; i < n_extra; ++i) {
            detail::RawArray a = detail::get_array(r);
            ParamArray p;
            p.name = std::move(a.name);
            p.shape = std::move(a.shape);
            p.values = std::move(a.values);
            p.grad.assign(p.values.size(), 0.0);
            extras->arrays.push_back(std::move(p));
        }
    }
    if (r.at != buf.size() && !extras) {
        // extra arrays present but not requested: ignore, they were CRC-valid
    }
    return model;
}

} // namespace atcn
