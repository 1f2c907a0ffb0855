#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace glnet {

// Byte counter behind every Tensor allocation. Peak is the high-water mark
// since the last reset_peak(); this is what the memory profiler reports as
// the model working set.
class MemoryTracker {
public:
    static void on_alloc(std::size_t bytes) noexcept
    {
        const auto now = current_.fetch_add(bytes, std::memory_order_relaxed) + bytes;
        auto prev = peak_.load(std::memory_order_relaxed);
        while (now > prev && !peak_.compare_exchange_weak(prev, now, std::memory_order_relaxed)) {
        }
    }
    static void on_free(std::size_t bytes) noexcept { current_.fetch_sub(bytes, std::memory_order_relaxed); }

    static std::size_t current() noexcept { return current_.load(std::memory_order_relaxed); }
    static std::size_t peak() noexcept { return peak_.load(std::memory_order_relaxed); }
    static void reset_peak() noexcept { peak_.store(current(), std::memory_order_relaxed); }

private:
    static inline std::atomic<std::size_t> current_{0};
    static inline std::atomic<std::size_t> peak_{0};
};

template <typename T>
struct TrackingAllocator {
    using value_type = T;

    TrackingAllocator() noexcept = default;
    template <typename U>
    TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

    T* allocate(std::size_t n)
    {
        auto* p = std::allocator<T>{}.allocate(n);
        MemoryTracker::on_alloc(n * sizeof(T));
        return p;
    }
    void deallocate(T* p, std::size_t n) noexcept
    {
        MemoryTracker::on_free(n * sizeof(T));
        std::allocator<T>{}.deallocate(p, n);
    }

    template <typename U>
    bool operator==(const TrackingAllocator<U>&) const noexcept { return true; }
};

struct Shape {
    int channels = 0;
    int height = 0;
    int width = 0;

    std::size_t numel() const noexcept
    {
        return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
    friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s)
{
    return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

// Channel-major (C, H, W) dense array. Batch size is always one; minibatches
// are formed by gradient accumulation.
template <typename T, typename Alloc>
class Array {
public:
    using value_type = T;

    Array() = default;
    explicit Array(Shape shape, T fill = T(0)) : shape_(shape), data_(check(shape).numel(), fill) {}
    Array(int channels, int height, int width, T fill = T(0)) : Array(Shape{channels, height, width}, fill) {}

    const Shape& shape() const noexcept { return shape_; }
    int channels() const noexcept { return shape_.channels; }
    int height() const noexcept { return shape_.height; }
    int width() const noexcept { return shape_.width; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return {data_.data(), data_.size()}; }
    std::span<const T> values() const noexcept { return {data_.data(), data_.size()}; }

    T* channel(int c) noexcept { return data_.data() + static_cast<std::size_t>(c) * shape_.plane(); }
    const T* channel(int c) const noexcept { return data_.data() + static_cast<std::size_t>(c) * shape_.plane(); }

    T& operator()(int c, int y, int x) noexcept { return data_[index(c, y, x)]; }
    const T& operator()(int c, int y, int x) const noexcept { return data_[index(c, y, x)]; }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U, typename A2 = typename std::allocator_traits<Alloc>::template rebind_alloc<U>>
    Array<U, A2> cast() const
    {
        Array<U, A2> out(shape_);
        std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    Array& operator+=(const Array& other)
    {
        if (other.shape_ != shape_)
            throw std::invalid_argument("tensor shape mismatch: " + to_string(shape_) + " vs " + to_string(other.shape_));
        for (std::size_t i = 0; i < data_.size(); ++i)
            data_[i] += other.data_[i];
        return *this;
    }

    Array& operator*=(T s)
    {
        for (auto& v : data_)
            v *= s;
        return *this;
    }

    friend bool operator==(const Array& a, const Array& b)
    {
        return a.shape_ == b.shape_ && std::equal(a.data_.begin(), a.data_.end(), b.data_.begin());
    }

private:
    static const Shape& check(const Shape& s)
    {
        if (s.channels < 0 || s.height < 0 || s.width < 0)
            throw std::invalid_argument("negative array dimension");
        return s;
    }
    std::size_t index(int c, int y, int x) const noexcept
    {
        return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
    }

    Shape shape_{};
    std::vector<T, Alloc> data_;
};

// Model-path storage; counted by MemoryTracker.
template <typename T>
using Tensor = Array<T, TrackingAllocator<T>>;

// Caller-owned storage (source images, masks, stitching buffers); not counted.
template <typename T>
using Raster = Array<T, std::allocator<T>>;

using Image = Raster<std::uint8_t>; // 3 x H x W, RGB planes
using Mask = Raster<std::uint8_t>;  // 1 x H x W, class indices

template <typename T, typename A>
T squared_norm(const Array<T, A>& t)
{
    T s = 0;
    for (auto v : t.values())
        s += v * v;
    return s;
}

template <typename T, typename A>
T max_abs(const Array<T, A>& t)
{
    T m = 0;
    for (auto v : t.values())
        m = std::max(m, std::abs(v));
    return m;
}

template <typename T, typename A>
bool all_finite(const Array<T, A>& t)
{
    return std::all_of(t.values().begin(), t.values().end(), [](T v) { return std::isfinite(v); });
}

} // namespace glnet
