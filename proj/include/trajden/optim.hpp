#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "trajden/grid.hpp"
#include "trajden/io.hpp"
#include "trajden/rng.hpp"

namespace trajden {

namespace detail {
inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}
}  // namespace detail

// Named parameter grids with deterministic, order-independent initialization:
// each parameter draws from a stream seeded by (store seed, name). Weights get
// fan-in-scaled uniform init (He), biases start at zero. Grids live behind
// stable pointers, so references stay valid while new parameters register.
class ParamStore {
  public:
    struct Entry {
        std::string name;
        std::unique_ptr<Grid> grid;
    };

    explicit ParamStore(uint64_t seed = 0) : seed_(seed) {}

    Grid& ensure(const std::string& name, const std::vector<int>& shape, int fan_in) {
        auto it = index_.find(name);
        if (it != index_.end()) {
            Grid& g = *entries_[it->second].grid;
            if (g.shape != shape)
                throw config_error("parameter shape mismatch for " + name + ": have " +
                                   g.shape_str());
            return g;
        }
        auto g = std::make_unique<Grid>(shape);
        if (fan_in > 0) {
            Rng rng(mix_seed(seed_, detail::fnv1a(name)));
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            for (auto& v : g->data) v = static_cast<float>(rng.uniform(-bound, bound));
        }
        g->requires_grad = true;
        g->ensure_grad();
        index_[name] = entries_.size();
        entries_.push_back({name, std::move(g)});
        return *entries_.back().grid;
    }

    Grid& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw config_error("unknown parameter: " + name);
        return *entries_[it->second].grid;
    }
    const Grid& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw config_error("unknown parameter: " + name);
        return *entries_[it->second].grid;
    }
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    size_t size() const { return entries_.size(); }
    uint64_t seed() const { return seed_; }

    void zero_grads() {
        for (auto& e : entries_) e.grid->zero_grad();
    }

    double grad_norm() const {
        double acc = 0.0;
        for (const auto& e : entries_)
            for (float v : e.grid->grad) acc += static_cast<double>(v) * v;
        return std::sqrt(acc);
    }

    size_t total_elements() const {
        size_t n = 0;
        for (const auto& e : entries_) n += e.grid->numel();
        return n;
    }

  private:
    uint64_t seed_;
    std::vector<Entry> entries_;
    std::map<std::string, size_t> index_;
};

// Decoupled-weight-decay Adam. Moments are kept here, keyed by parameter
// position, and serialize alongside checkpoints for exact resume.
class AdamW {
  public:
    struct Config {
        double lr = 1e-4;
        double weight_decay = 1e-2;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    // Moments live in f32 so checkpoint round-trips reproduce runs bit-exactly;
    // the update arithmetic itself runs in double.
    void step(ParamStore& params, const Config& cfg) {
        sync(params);
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
        for (size_t pi = 0; pi < params.entries().size(); ++pi) {
            Grid& p = *params.entries()[pi].grid;
            p.ensure_grad();
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (size_t i = 0; i < p.data.size(); ++i) {
                const double g = static_cast<double>(p.grad[i]);
                m[i] = static_cast<float>(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g);
                v[i] = static_cast<float>(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g);
                const double mhat = static_cast<double>(m[i]) / bc1;
                const double vhat = static_cast<double>(v[i]) / bc2;
                p.data[i] = static_cast<float>(
                    static_cast<double>(p.data[i]) -
                    cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) +
                              cfg.weight_decay * static_cast<double>(p.data[i])));
            }
        }
        params.zero_grads();
    }

    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }
    std::vector<std::vector<float>>& moments_m() { return m_; }
    std::vector<std::vector<float>>& moments_v() { return v_; }

    void sync(const ParamStore& params) {
        while (m_.size() < params.size()) {
            size_t i = m_.size();
            m_.emplace_back(params.entries()[i].grid->numel(), 0.0f);
            v_.emplace_back(params.entries()[i].grid->numel(), 0.0f);
        }
    }

  private:
    int64_t t_ = 0;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
};

// ---- Checkpoint format -----------------------------------------------------
// magic "TDCKPT1", then records until EOF, little-endian:
//   u32 name_len, name bytes, u32 ndim, u32 dims[ndim], f32 data[numel].
// Optimizer state rides along as records under the "__opt__/" prefix.

inline void write_checkpoint_records(const std::string& path,
                                     const std::vector<std::pair<std::string, Grid>>& records) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open checkpoint for write: " + path);
    os.write("TDCKPT1", 7);
    for (const auto& [name, g] : records) {
        detail::write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u32(os, static_cast<uint32_t>(g.shape.size()));
        for (int d : g.shape) detail::write_u32(os, static_cast<uint32_t>(d));
        detail::write_f32_block(os, g.data.data(), g.numel());
    }
    if (!os) throw io_error("checkpoint write failed: " + path);
}

inline std::vector<std::pair<std::string, Grid>> read_checkpoint_records(
    const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open checkpoint: " + path);
    char magic[7];
    if (!is.read(magic, 7) || std::memcmp(magic, "TDCKPT1", 7) != 0)
        throw io_error("bad checkpoint magic: " + path);
    std::vector<std::pair<std::string, Grid>> records;
    while (true) {
        is.peek();
        if (is.eof()) break;
        uint32_t name_len = detail::read_u32(is, path);
        if (name_len == 0 || name_len > 4096) throw io_error("implausible record name: " + path);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw io_error("truncated checkpoint: " + path);
        uint32_t ndim = detail::read_u32(is, path);
        if (ndim == 0 || ndim > 4) throw io_error("implausible record rank: " + path);
        std::vector<int> shape;
        for (uint32_t d = 0; d < ndim; ++d) {
            uint32_t dim = detail::read_u32(is, path);
            if (dim == 0 || dim > (1u << 24)) throw io_error("implausible record dim: " + path);
            shape.push_back(static_cast<int>(dim));
        }
        Grid g(shape);
        detail::read_f32_block(is, g.data.data(), g.numel(), path);
        records.emplace_back(std::move(name), std::move(g));
    }
    return records;
}

struct CheckpointState {
    int64_t epoch = 0;
    int64_t opt_step = 0;
    bool has_optimizer = false;
};

inline void save_checkpoint(const std::string& path, const ParamStore& params,
                            const AdamW* opt = nullptr, int64_t epoch = 0) {
    std::vector<std::pair<std::string, Grid>> records;
    for (const auto& e : params.entries()) {
        Grid copy(e.grid->shape);
        copy.data = e.grid->data;
        records.emplace_back(e.name, std::move(copy));
    }
    if (opt) {
        Grid meta({2});
        meta.data[0] = static_cast<float>(epoch);
        meta.data[1] = static_cast<float>(opt->step_count());
        records.emplace_back("__opt__/meta", std::move(meta));
        AdamW& o = const_cast<AdamW&>(*opt);
        o.sync(params);
        for (size_t pi = 0; pi < params.entries().size(); ++pi) {
            const std::string& pname = params.entries()[pi].name;
            const Grid& p = *params.entries()[pi].grid;
            Grid m(p.shape), v(p.shape);
            m.data = o.moments_m()[pi];
            v.data = o.moments_v()[pi];
            records.emplace_back("__opt__/m/" + pname, std::move(m));
            records.emplace_back("__opt__/v/" + pname, std::move(v));
        }
    }
    write_checkpoint_records(path, records);
}

// Loads parameter records into `params` (which must already hold the same
// names and shapes) and, when present and requested, optimizer state.
inline CheckpointState load_checkpoint(const std::string& path, ParamStore& params,
                                       AdamW* opt = nullptr) {
    auto records = read_checkpoint_records(path);
    CheckpointState st;
    std::map<std::string, Grid*> by_name;
    size_t param_records = 0;
    for (auto& [name, g] : records) {
        if (name.rfind("__opt__/", 0) == 0) continue;
        ++param_records;
        if (!params.has(name))
            throw config_error("checkpoint/config mismatch: unexpected parameter " + name);
        Grid& dst = params.get(name);
        if (dst.shape != g.shape)
            throw config_error("checkpoint/config mismatch: shape of " + name + " is " +
                               g.shape_str() + ", expected " + dst.shape_str());
        dst.data = g.data;
        by_name[name] = &dst;
    }
    if (param_records != params.size())
        throw config_error("checkpoint/config mismatch: expected " +
                           std::to_string(params.size()) + " parameters, found " +
                           std::to_string(param_records));
    if (opt) {
        opt->sync(params);
        for (auto& [name, g] : records) {
            if (name == "__opt__/meta") {
                st.epoch = static_cast<int64_t>(g.data[0]);
                st.opt_step = static_cast<int64_t>(g.data[1]);
                st.has_optimizer = true;
                opt->set_step_count(st.opt_step);
            } else if (name.rfind("__opt__/m/", 0) == 0 || name.rfind("__opt__/v/", 0) == 0) {
                const bool is_m = name[8] == 'm';
                const std::string pname = name.substr(10);
                for (size_t pi = 0; pi < params.entries().size(); ++pi) {
                    if (params.entries()[pi].name != pname) continue;
                    auto& slot = is_m ? opt->moments_m()[pi] : opt->moments_v()[pi];
                    if (slot.size() != g.numel())
                        throw config_error("checkpoint/config mismatch: optimizer state " + name);
                    slot = g.data;
                    break;
                }
            }
        }
    }
    return st;
}

}  // namespace trajden
