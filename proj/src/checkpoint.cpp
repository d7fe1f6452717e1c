#include "fire2/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "fire2/errors.hpp"

namespace fire2::checkpoint {

namespace {

constexpr char kMagic[8] = {'F', '2', 'C', 'K', 'P', 'T', '0', '1'};

void put_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void put(std::ostream& os, T v) {
    put_bytes(os, &v, sizeof(T));
}

void put_string(std::ostream& os, const std::string& s) {
    put<uint64_t>(os, s.size());
    put_bytes(os, s.data(), s.size());
}

void put_tensor(std::ostream& os, const Tensor& t) {
    put<uint32_t>(os, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) put<int32_t>(os, d);
    put_bytes(os, t.data.data(), t.data.size() * sizeof(double));
}

struct Cursor {
    const std::vector<char>& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw RuntimeAbort("checkpoint: truncated file");
    }
    void take(void* p, size_t n) {
        need(n);
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    template <typename T>
    T get() {
        T v;
        take(&v, sizeof(T));
        return v;
    }
    std::string get_string() {
        const uint64_t n = get<uint64_t>();
        need(n);
        std::string s(buf.data() + pos, buf.data() + pos + n);
        pos += n;
        return s;
    }
    Tensor get_tensor() {
        const uint32_t rank = get<uint32_t>();
        if (rank > 8) throw RuntimeAbort("checkpoint: implausible tensor rank");
        std::vector<int> shape;
        for (uint32_t i = 0; i < rank; ++i) shape.push_back(get<int32_t>());
        Tensor t(shape);
        take(t.data.data(), t.data.size() * sizeof(double));
        return t;
    }
};

void put_param(std::ostream& os, const Bundle::ParamState& p) {
    put_string(os, p.name);
    put_tensor(os, p.value);
    put_tensor(os, p.adam_m);
    put_tensor(os, p.adam_v);
    put<int64_t>(os, p.adam_step);
}

Bundle::ParamState get_param(Cursor& c) {
    Bundle::ParamState p;
    p.name = c.get_string();
    p.value = c.get_tensor();
    p.adam_m = c.get_tensor();
    p.adam_v = c.get_tensor();
    p.adam_step = c.get<int64_t>();
    return p;
}

}  // namespace

Bundle::ParamState Bundle::ParamState::from(const Parameter& p) {
    return ParamState{p.name, p.value, p.adam_m, p.adam_v, p.adam_step};
}

void Bundle::ParamState::restore(Parameter& p) const {
    if (p.value.shape != value.shape)
        throw RuntimeAbort("checkpoint: shape mismatch restoring '" + name + "' (expected " +
                           p.value.shape_str() + ", found " + value.shape_str() + ")");
    p.value = value;
    p.adam_m = adam_m;
    p.adam_v = adam_v;
    p.adam_step = adam_step;
    p.zero_grad();
}

void save(const std::string& path, const Bundle& bundle) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RuntimeAbort("checkpoint: cannot write " + path);
    put_bytes(os, kMagic, sizeof(kMagic));
    put<uint32_t>(os, bundle.version);
    put<uint64_t>(os, bundle.config_hash);
    put_string(os, bundle.config_json);
    put<int32_t>(os, bundle.epoch);
    put<double>(os, bundle.attr_tau);
    put<double>(os, bundle.attr_epsilon);
    put<uint32_t>(os, static_cast<uint32_t>(bundle.params.size()));
    for (const auto& p : bundle.params) put_param(os, p);
    put<uint32_t>(os, static_cast<uint32_t>(bundle.attr_params.size()));
    for (const auto& p : bundle.attr_params) put_param(os, p);
    put<uint32_t>(os, static_cast<uint32_t>(bundle.rng_states.size()));
    for (const auto& [name, state] : bundle.rng_states) {
        put_string(os, name);
        put_string(os, state);
    }
    if (!os) throw RuntimeAbort("checkpoint: short write to " + path);
}

Bundle load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RuntimeAbort("checkpoint: cannot open " + path);
    std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    Cursor c{buf};

    char magic[8];
    c.take(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw RuntimeAbort("checkpoint: bad magic in " + path);

    Bundle b;
    b.version = c.get<uint32_t>();
    if (b.version != 1) throw RuntimeAbort("checkpoint: unsupported version");
    b.config_hash = c.get<uint64_t>();
    b.config_json = c.get_string();
    b.epoch = c.get<int32_t>();
    b.attr_tau = c.get<double>();
    b.attr_epsilon = c.get<double>();
    const uint32_t n = c.get<uint32_t>();
    for (uint32_t i = 0; i < n; ++i) b.params.push_back(get_param(c));
    const uint32_t na = c.get<uint32_t>();
    for (uint32_t i = 0; i < na; ++i) b.attr_params.push_back(get_param(c));
    const uint32_t nr = c.get<uint32_t>();
    for (uint32_t i = 0; i < nr; ++i) {
        std::string name = c.get_string();
        b.rng_states[name] = c.get_string();
    }
    return b;
}

}  // namespace fire2::checkpoint
