#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "atcn/common.hpp"

namespace atcn {

// Dense batch × channels × frames value grid, row-major with frames
// contiguous. batch is 1 for single-window evaluation; training feeds whole
// mini-batches through one grid. `grad` stays empty until backward touches it.
struct FrameTensor {
    int64_t batch = 0;
    int64_t channels = 0;
    int64_t frames = 0;
    std::vector<double> values;
    std::vector<double> grad;

    FrameTensor() = default;
    FrameTensor(int64_t b, int64_t c, int64_t f)
        : batch(b), channels(c), frames(f), values(static_cast<size_t>(b * c * f), 0.0) {}

    static FrameTensor zeros(int64_t b, int64_t c, int64_t f) { return FrameTensor(b, c, f); }

    int64_t size() const { return batch * channels * frames; }

    double& at(int64_t b, int64_t c, int64_t f) {
        return values[static_cast<size_t>((b * channels + c) * frames + f)];
    }
    double at(int64_t b, int64_t c, int64_t f) const {
        return values[static_cast<size_t>((b * channels + c) * frames + f)];
    }

    double* row(int64_t b, int64_t c) { return values.data() + (b * channels + c) * frames; }
    const double* row(int64_t b, int64_t c) const {
        return values.data() + (b * channels + c) * frames;
    }

    bool same_shape(const FrameTensor& o) const {
        return batch == o.batch && channels == o.channels && frames == o.frames;
    }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }

    bool all_finite() const {
        for (double v : values) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }
};

// Named learnable (or buffer) array. Gradient buffer always mirrors values.
struct ParamArray {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool trainable = true;

    int64_t size() const { return static_cast<int64_t>(values.size()); }

    int64_t dim(size_t i) const { return shape.at(i); }
};

// Owns every parameter of a model; names are unique. Buffers (batch-norm
// running statistics) live here too but are excluded from param_count.
class ParamStore {
public:
    int add(const std::string& name, std::vector<int64_t> shape, bool trainable = true) {
        require(!index_.count(name), "duplicate parameter name: " + name);
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        ParamArray p;
        p.name = name;
        p.shape = std::move(shape);
        p.values.assign(static_cast<size_t>(n), 0.0);
        p.grad.assign(static_cast<size_t>(n), 0.0);
        p.trainable = trainable;
        index_[name] = static_cast<int>(params_.size());
        params_.push_back(std::move(p));
        return static_cast<int>(params_.size()) - 1;
    }

    ParamArray& operator[](int id) { return params_.at(static_cast<size_t>(id)); }
    const ParamArray& operator[](int id) const { return params_.at(static_cast<size_t>(id)); }

    int find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? -1 : it->second;
    }

    size_t count() const { return params_.size(); }

    int64_t trainable_size() const {
        int64_t n = 0;
        for (const auto& p : params_) {
            if (p.trainable) n += p.size();
        }
        return n;
    }

    void zero_grads() {
        for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
    }

    std::vector<ParamArray>& all() { return params_; }
    const std::vector<ParamArray>& all() const { return params_; }

private:
    std::vector<ParamArray> params_;
    std::unordered_map<std::string, int> index_;
};

} // namespace atcn
