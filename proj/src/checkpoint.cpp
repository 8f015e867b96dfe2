#include "omni/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "omni/errors.hpp"

namespace omni {

namespace {

constexpr char kMagic[4] = {'O', 'M', 'C', 'K'};

void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::istream& in, const char* what) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    check(in.good(), ErrorKind::io, std::string("checkpoint: truncated ") + what);
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const char* what) {
    uint32_t len = read_u32(in, what);
    check(len <= (1u << 20), ErrorKind::io, "checkpoint: implausible string length");
    std::string s(len, '\0');
    in.read(s.data(), len);
    check(in.good(), ErrorKind::io, std::string("checkpoint: truncated ") + what);
    return s;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    check(out.is_open(), ErrorKind::io, "cannot open for write: " + path);
    out.write(kMagic, 4);
    write_u32(out, 1);
    write_u32(out, static_cast<uint32_t>(meta.size()));
    for (const auto& [key, value] : meta) {
        write_string(out, key);
        write_string(out, value);
    }
    write_u32(out, static_cast<uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {
        write_string(out, name);
        save_tensor(tensor, out);
    }
    check(out.good(), ErrorKind::io, "checkpoint: write failed");
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.is_open(), ErrorKind::io, "missing file: " + path);
    char magic[4] = {};
    in.read(magic, 4);
    check(in.good() && std::memcmp(magic, kMagic, 4) == 0, ErrorKind::io,
          "bad checkpoint magic in " + path);
    uint32_t version = read_u32(in, "version");
    check(version == 1, ErrorKind::io, "unsupported checkpoint version");
    Checkpoint ck;
    uint32_t n_meta = read_u32(in, "meta count");
    for (uint32_t i = 0; i < n_meta; ++i) {
        std::string key = read_string(in, "meta key");
        ck.meta[key] = read_string(in, "meta value");
    }
    uint32_t n_params = read_u32(in, "param count");
    for (uint32_t i = 0; i < n_params; ++i) {
        std::string name = read_string(in, "param name");
        ck.params[name] = load_tensor(in);
    }
    return ck;
}

Checkpoint Checkpoint::from_params(const ParamRefs& params) {
    Checkpoint ck;
    for (const Parameter* p : params) {
        check(!ck.params.count(p->name), ErrorKind::state,
              "duplicate parameter name: " + p->name);
        ck.params[p->name] = p->value.detach();
    }
    return ck;
}

void Checkpoint::apply_to(const ParamRefs& refs,
                          const std::vector<std::string>& allow_missing_prefixes) const {
    for (Parameter* p : refs) {
        auto it = params.find(p->name);
        if (it == params.end()) {
            bool allowed = false;
            for (const std::string& prefix : allow_missing_prefixes)
                if (p->name.rfind(prefix, 0) == 0) allowed = true;
            check(allowed, ErrorKind::config,
                  "checkpoint is missing parameter " + p->name);
            continue;  // fresh layer keeps its initialization
        }
        check(it->second.shape() == p->value.shape(), ErrorKind::config,
              "checkpoint shape mismatch for " + p->name);
        p->value.data() = it->second.data();
    }
}

std::string file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.is_open(), ErrorKind::io, "missing file: " + path);
    uint64_t h = 1469598103934665603ull;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
        if (got < static_cast<std::streamsize>(sizeof(buf))) break;
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

}  // namespace omni
