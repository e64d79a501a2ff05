#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "powertune/common.hpp"

namespace powertune {

// Named slice into a flat parameter vector. cols == number of inputs for a
// weight matrix; cols == 1 for biases and other plain vectors.
struct SliceInfo {
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 1;
    std::size_t size() const { return rows * cols; }
};

class ParamLayout {
public:
    void add(const std::string& name, std::size_t rows, std::size_t cols = 1) {
        SliceInfo info{total_, rows, cols};
        slices_.emplace_back(name, info);
        total_ += info.size();
    }

    const SliceInfo& at(const std::string& name) const {
        for (const auto& [n, info] : slices_)
            if (n == name) return info;
        throw RejectedInput("unknown parameter slice: " + name);
    }

    bool has(const std::string& name) const {
        for (const auto& [n, info] : slices_)
            if (n == name) return true;
        return false;
    }

    std::size_t total() const { return total_; }
    const std::vector<std::pair<std::string, SliceInfo>>& slices() const { return slices_; }

    bool operator==(const ParamLayout& other) const {
        if (total_ != other.total_ || slices_.size() != other.slices_.size()) return false;
        for (std::size_t i = 0; i < slices_.size(); ++i) {
            const auto& [na, a] = slices_[i];
            const auto& [nb, b] = other.slices_[i];
            if (na != nb || a.offset != b.offset || a.rows != b.rows || a.cols != b.cols)
                return false;
        }
        return true;
    }

private:
    std::vector<std::pair<std::string, SliceInfo>> slices_;
    std::size_t total_ = 0;
};

struct ParamVector {
    ParamLayout layout;
    std::vector<double> values;

    ParamVector() = default;
    explicit ParamVector(ParamLayout l) : layout(std::move(l)), values(layout.total(), 0.0) {}

    double* slice(const std::string& name) { return values.data() + layout.at(name).offset; }
    const double* slice(const std::string& name) const {
        return values.data() + layout.at(name).offset;
    }

    std::size_t size() const { return values.size(); }
    bool finite() const { return all_finite(values); }
};

}  // namespace powertune
