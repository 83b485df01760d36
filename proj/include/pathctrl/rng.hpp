#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace pathctrl {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Stateless:
/// every output block is a pure function of (key, counter).
class Philox4x32 {
public:
    using Block = std::array<std::uint32_t, 4>;

    explicit Philox4x32(std::uint64_t seed) noexcept
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

    Block operator()(Block ctr) const noexcept {
        std::array<std::uint32_t, 2> key = key_;
        for (int round = 0; round < 10; ++round) {
            ctr = single_round(ctr, key);
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

    static Block single_round(const Block& c, const std::array<std::uint32_t, 2>& k) noexcept {
        const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }

    std::array<std::uint32_t, 2> key_;
};

/// Standard normals addressed by (path, step, component). The value for a given
/// address never depends on how many paths or steps are drawn.
class NormalStream {
public:
    explicit NormalStream(std::uint64_t seed) noexcept : gen_(seed) {}

    /// Four independent N(0,1) draws for block `block` of (path, step).
    std::array<double, 4> block(std::uint64_t path, std::uint32_t step, std::uint32_t block) const noexcept {
        const auto u = gen_({static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32), step, block});
        const double u0 = to_open_unit(u[0]), u1 = to_open_unit(u[1]);
        const double u2 = to_open_unit(u[2]), u3 = to_open_unit(u[3]);
        const double r0 = std::sqrt(-2.0 * std::log(u0)), r1 = std::sqrt(-2.0 * std::log(u2));
        const double a0 = 2.0 * std::numbers::pi * u1, a1 = 2.0 * std::numbers::pi * u3;
        return {r0 * std::cos(a0), r0 * std::sin(a0), r1 * std::cos(a1), r1 * std::sin(a1)};
    }

    /// Fills `out[0..d)` with the normals of (path, step).
    void fill(std::uint64_t path, std::uint32_t step, double* out, std::size_t d) const noexcept {
        for (std::size_t c = 0; c < d; c += 4) {
            const auto z = block(path, step, static_cast<std::uint32_t>(c / 4));
            for (std::size_t i = 0; i < 4 && c + i < d; ++i) out[c + i] = z[i];
        }
    }

private:
    static double to_open_unit(std::uint32_t x) noexcept {
        return (static_cast<double>(x) + 0.5) * (1.0 / 4294967296.0);
    }

    Philox4x32 gen_;
};

}  // namespace pathctrl
