#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace atlascut {

// Dense 2D scalar grid, x-fastest storage.
template <typename T>
class Grid2 {
public:
    Grid2() = default;
    Grid2(int nx, int ny, T fill = T{})
        : nx_(nx), ny_(ny), data_(static_cast<std::size_t>(nx) * ny, fill) {
        assert(nx >= 0 && ny >= 0);
    }

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    bool in_bounds(int x, int y) const {
        return x >= 0 && x < nx_ && y >= 0 && y < ny_;
    }

    std::size_t index(int x, int y) const {
        assert(in_bounds(x, y));
        return static_cast<std::size_t>(y) * nx_ + x;
    }

    T& operator()(int x, int y) { return data_[index(x, y)]; }
    const T& operator()(int x, int y) const { return data_[index(x, y)]; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::vector<T>& raw() { return data_; }
    const std::vector<T>& raw() const { return data_; }

    bool same_dims(const Grid2& o) const { return nx_ == o.nx_ && ny_ == o.ny_; }

    friend bool operator==(const Grid2& a, const Grid2& b) {
        return a.nx_ == b.nx_ && a.ny_ == b.ny_ && a.data_ == b.data_;
    }

private:
    int nx_ = 0;
    int ny_ = 0;
    std::vector<T> data_;
};

// Dense 3D scalar grid, x-fastest, then y, then z.
template <typename T>
class Grid3 {
public:
    Grid3() = default;
    Grid3(int nx, int ny, int nz, T fill = T{})
        : nx_(nx), ny_(ny), nz_(nz),
          data_(static_cast<std::size_t>(nx) * ny * nz, fill) {
        assert(nx >= 0 && ny >= 0 && nz >= 0);
    }

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    int nz() const { return nz_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    bool in_bounds(int x, int y, int z) const {
        return x >= 0 && x < nx_ && y >= 0 && y < ny_ && z >= 0 && z < nz_;
    }

    std::size_t index(int x, int y, int z) const {
        assert(in_bounds(x, y, z));
        return (static_cast<std::size_t>(z) * ny_ + y) * nx_ + x;
    }

    T& operator()(int x, int y, int z) { return data_[index(x, y, z)]; }
    const T& operator()(int x, int y, int z) const { return data_[index(x, y, z)]; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::vector<T>& raw() { return data_; }
    const std::vector<T>& raw() const { return data_; }

    bool same_dims(const Grid3& o) const {
        return nx_ == o.nx_ && ny_ == o.ny_ && nz_ == o.nz_;
    }

    friend bool operator==(const Grid3& a, const Grid3& b) {
        return a.nx_ == b.nx_ && a.ny_ == b.ny_ && a.nz_ == b.nz_ && a.data_ == b.data_;
    }

private:
    int nx_ = 0;
    int ny_ = 0;
    int nz_ = 0;
    std::vector<T> data_;
};

using Mask2 = Grid2<std::uint8_t>;   // binary labeling, one slice
using Mask3 = Grid3<std::uint8_t>;   // binary labeling, full stack
using Field2 = Grid2<float>;         // per-pixel scalar field (probability, NLL, distance)
using Field3 = Grid3<float>;

inline std::size_t count_foreground(const Mask2& m) {
    std::size_t n = 0;
    for (auto v : m.raw()) n += (v != 0);
    return n;
}

inline std::size_t count_foreground(const Mask3& m) {
    std::size_t n = 0;
    for (auto v : m.raw()) n += (v != 0);
    return n;
}

}  // namespace atlascut
