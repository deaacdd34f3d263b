#include "kolmo/rng.hpp"

#include <cmath>
#include <numbers>

namespace kolmo {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) noexcept {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

// 53 random bits mapped to the open interval (0, 1).
inline double to_open_unit(std::uint32_t hi, std::uint32_t lo) noexcept {
    const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32 | lo) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

} // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) noexcept {
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kMul0, ctr[0], hi0, lo0);
        mulhilo(kMul1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kWeyl0;
        key[1] += kWeyl1;
    }
    return ctr;
}

std::array<double, 2> RngStream::uniform_pair(Purpose purpose, std::uint64_t sample,
                                              std::uint64_t time, std::uint64_t pair) const noexcept {
    // Counter layout: [pair | purpose<<24 | stream<<28, time, sample, step].
    // Upper halves of the 64-bit indices are folded into the key.
    const std::array<std::uint32_t, 4> ctr = {
        static_cast<std::uint32_t>(pair & 0xFFFFFFu) |
            (static_cast<std::uint32_t>(purpose) & 0xFu) << 24 |
            (static_cast<std::uint32_t>(stream_) & 0xFu) << 28,
        static_cast<std::uint32_t>(time),
        static_cast<std::uint32_t>(sample),
        static_cast<std::uint32_t>(step_),
    };
    const std::uint32_t fold = static_cast<std::uint32_t>(time >> 32) ^
                               static_cast<std::uint32_t>(sample >> 32) * 0x85EBCA6Bu ^
                               static_cast<std::uint32_t>(step_ >> 32) * 0xC2B2AE35u;
    const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed_),
                                              static_cast<std::uint32_t>(seed_ >> 32) ^ fold};
    const auto r = philox4x32(ctr, key);
    return {to_open_unit(r[0], r[1]), to_open_unit(r[2], r[3])};
}

std::array<double, 2> RngStream::normal_pair(Purpose purpose, std::uint64_t sample,
                                             std::uint64_t time, std::uint64_t pair) const noexcept {
    const auto u = uniform_pair(purpose, sample, time, pair);
    const double radius = std::sqrt(-2.0 * std::log(u[0]));
    const double angle = 2.0 * std::numbers::pi * u[1];
    return {radius * std::cos(angle), radius * std::sin(angle)};
}

} // namespace kolmo
