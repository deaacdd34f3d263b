#pragma once

#include <array>
#include <cstdint>

namespace kolmo {

/// Independent random streams derived from one global seed.
enum class Stream : std::uint32_t {
    Train = 0,
    Diagnostics = 1,
    Eval = 2,
    Init = 3,
    Reference = 4,
    User = 5,
};

/// What a variate is used for inside a stream.
enum class Purpose : std::uint32_t {
    InitialState = 0,
    InitialTime = 1,
    Increment = 2,
    Weights = 3,
    Inner = 4,
};

/// Philox4x32-10 counter-based generator.
///
/// Stateless: a variate is a pure function of (key, counter), so any draw
/// can be recomputed in any order.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key) noexcept;

/// Keyed normal/uniform source. A key is
/// (global seed, stream, step, sample index, time index, coordinate).
class RngStream {
public:
    RngStream() = default;
    RngStream(std::uint64_t seed, Stream stream, std::uint64_t step) noexcept
        : seed_(seed), stream_(stream), step_(step) {}

    std::uint64_t seed() const noexcept { return seed_; }
    Stream stream() const noexcept { return stream_; }
    std::uint64_t step() const noexcept { return step_; }

    /// Two uniforms in the open interval (0, 1) for a coordinate pair.
    std::array<double, 2> uniform_pair(Purpose purpose, std::uint64_t sample, std::uint64_t time,
                                       std::uint64_t pair) const noexcept;

    /// Two independent standard normals (Box-Muller) for a coordinate pair.
    std::array<double, 2> normal_pair(Purpose purpose, std::uint64_t sample, std::uint64_t time,
                                      std::uint64_t pair) const noexcept;

    double uniform(Purpose purpose, std::uint64_t sample, std::uint64_t time,
                   std::uint64_t coord) const noexcept {
        return uniform_pair(purpose, sample, time, coord / 2)[coord % 2];
    }

    double normal(Purpose purpose, std::uint64_t sample, std::uint64_t time,
                  std::uint64_t coord) const noexcept {
        return normal_pair(purpose, sample, time, coord / 2)[coord % 2];
    }

    /// Fill `out` with standard normals for coordinates 0..out.size()-1.
    template <typename Span>
    void normals(Purpose purpose, std::uint64_t sample, std::uint64_t time, Span&& out) const noexcept {
        const std::size_t n = out.size();
        for (std::size_t c = 0; c < n; c += 2) {
            const auto z = normal_pair(purpose, sample, time, c / 2);
            out[c] = z[0];
            if (c + 1 < n) out[c + 1] = z[1];
        }
    }

private:
    std::uint64_t seed_ = 0;
    Stream stream_ = Stream::Train;
    std::uint64_t step_ = 0;
};

} // namespace kolmo
