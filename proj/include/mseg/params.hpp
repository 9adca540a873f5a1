#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mseg/tensor.hpp"

namespace mseg {

template <class T>
struct Param {
    std::string name;
    TensorT<T> value;
    TensorT<T> grad;
    bool trainable = true;
};

// Named parameter store. Creation order is deterministic and defines the
// flattened layout consumed by the optimizer (trainable entries only).
template <class T>
class ParamStore {
public:
    Param<T>& create(const std::string& name, std::vector<std::size_t> shape,
                     bool trainable = true) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        auto p = std::make_unique<Param<T>>();
        p->name = name;
        p->value = TensorT<T>(shape, T(0));
        p->grad = TensorT<T>(shape, T(0));
        p->trainable = trainable;
        index_[name] = params_.size();
        params_.push_back(std::move(p));
        return *params_.back();
    }

    // Symmetric uniform init scaled by fan-in: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    Param<T>& create_uniform(const std::string& name, std::vector<std::size_t> shape,
                             std::size_t fan_in, std::mt19937& rng) {
        Param<T>& p = create(name, std::move(shape));
        const double a = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, fan_in)));
        std::uniform_real_distribution<double> dist(-a, a);
        for (T& v : p.value.data) v = static_cast<T>(dist(rng));
        return p;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Param<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
        return *params_[it->second];
    }

    std::size_t size() const { return params_.size(); }
    Param<T>& at(std::size_t i) { return *params_[i]; }
    const Param<T>& at(std::size_t i) const { return *params_[i]; }

    void zero_grads() {
        for (auto& p : params_) p->grad.fill(T(0));
    }

    std::size_t trainable_count() const {
        std::size_t n = 0;
        for (const auto& p : params_)
            if (p->trainable) n += p->value.numel();
        return n;
    }

    std::vector<T> flatten_values() const {
        std::vector<T> out;
        out.reserve(trainable_count());
        for (const auto& p : params_)
            if (p->trainable) out.insert(out.end(), p->value.data.begin(), p->value.data.end());
        return out;
    }

    std::vector<T> flatten_grads() const {
        std::vector<T> out;
        out.reserve(trainable_count());
        for (const auto& p : params_)
            if (p->trainable) out.insert(out.end(), p->grad.data.begin(), p->grad.data.end());
        return out;
    }

    void assign_values(const std::vector<T>& flat) {
        std::size_t off = 0;
        for (auto& p : params_)
            if (p->trainable) {
                if (off + p->value.numel() > flat.size())
                    throw std::invalid_argument("assign_values: flat vector too short");
                std::copy_n(flat.begin() + off, p->value.numel(), p->value.data.begin());
                off += p->value.numel();
            }
        if (off != flat.size()) throw std::invalid_argument("assign_values: size mismatch");
    }

    // Copies every parameter from `src` whose name exists here (used to load
    // pretrained subnetworks into the full bundle).
    std::size_t copy_matching(const ParamStore<T>& src) {
        std::size_t copied = 0;
        for (std::size_t i = 0; i < src.size(); ++i) {
            const Param<T>& sp = src.at(i);
            if (!has(sp.name)) continue;
            Param<T>& dp = get(sp.name);
            if (dp.value.shape != sp.value.shape)
                throw std::invalid_argument("copy_matching: shape mismatch for " + sp.name);
            dp.value = sp.value;
            ++copied;
        }
        return copied;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open for writing: " + path);
        const std::uint32_t n = static_cast<std::uint32_t>(params_.size());
        f.write(reinterpret_cast<const char*>(&n), 4);
        for (const auto& p : params_) {
            const std::uint32_t nl = static_cast<std::uint32_t>(p->name.size());
            f.write(reinterpret_cast<const char*>(&nl), 4);
            f.write(p->name.data(), nl);
            const std::uint32_t rank = static_cast<std::uint32_t>(p->value.rank());
            f.write(reinterpret_cast<const char*>(&rank), 4);
            for (std::size_t e : p->value.shape) {
                const std::uint32_t ext = static_cast<std::uint32_t>(e);
                f.write(reinterpret_cast<const char*>(&ext), 4);
            }
            for (T v : p->value.data) {
                const float fv = static_cast<float>(v);
                f.write(reinterpret_cast<const char*>(&fv), 4);
            }
        }
        if (!f) throw std::runtime_error("write failed: " + path);
    }

    // Loads values into already-created parameters (the network structure
    // defines shapes; the file supplies values).
    void load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open: " + path);
        std::uint32_t n = 0;
        f.read(reinterpret_cast<char*>(&n), 4);
        for (std::uint32_t i = 0; i < n; ++i) {
            std::uint32_t nl = 0;
            f.read(reinterpret_cast<char*>(&nl), 4);
            std::string name(nl, '\0');
            f.read(name.data(), nl);
            std::uint32_t rank = 0;
            f.read(reinterpret_cast<char*>(&rank), 4);
            std::vector<std::size_t> shape(rank);
            for (std::uint32_t d = 0; d < rank; ++d) {
                std::uint32_t ext = 0;
                f.read(reinterpret_cast<char*>(&ext), 4);
                shape[d] = ext;
            }
            Param<T>& p = get(name);
            if (p.value.shape != shape)
                throw std::runtime_error("parameter shape mismatch on load: " + name);
            for (T& v : p.value.data) {
                float fv = 0;
                f.read(reinterpret_cast<char*>(&fv), 4);
                v = static_cast<T>(fv);
            }
        }
        if (!f) throw std::runtime_error("truncated parameter file: " + path);
    }

private:
    std::vector<std::unique_ptr<Param<T>>> params_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace mseg
