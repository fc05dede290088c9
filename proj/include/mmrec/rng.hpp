#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mmrec/error.hpp"

namespace mmrec {

namespace detail {

inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace detail

// Counter-based generator: output i is mix64(key + i*gamma), so a stream is
// fully determined by (seed, stream id, counter). Substreams never overlap in
// practice because keys are decorrelated by mix64.
class Rng {
  public:
    explicit Rng(uint64_t seed, uint64_t stream_id = 0)
        : key_(detail::mix64(detail::mix64(seed + 0x9E3779B97F4A7C15ull) ^
                             (0xA24BAED4963EE407ull * (stream_id + 1)))),
          counter_(0) {}

    // Derives an independent stream; the child starts at counter 0.
    Rng stream(uint64_t stream_id) const {
        Rng child(*this);
        child.key_ = detail::mix64(key_ ^ (0x9E6C63D0876A9A47ull * (stream_id + 1)));
        child.counter_ = 0;
        return child;
    }

    uint64_t next_u64() {
        ++counter_;
        return detail::mix64(key_ + counter_ * 0x9E3779B97F4A7C15ull);
    }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Unbiased integer in [0, n) by rejection.
    uint64_t uniform_below(uint64_t n) {
        if (n == 0) throw Error(ErrorKind::input, "uniform_below: n must be positive");
        const uint64_t threshold = (0 - n) % n;
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller; consumes exactly two uniforms per call
    // (no cached spare, keeps the stream position predictable).
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        constexpr double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    // Normal(0, stddev^2) re-drawn until |z| <= clip standard deviations.
    double truncated_normal(double stddev, double clip = 2.0) {
        for (;;) {
            const double z = normal();
            if (std::abs(z) <= clip) return z * stddev;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    uint64_t counter() const { return counter_; }

  private:
    uint64_t key_;
    uint64_t counter_;
};

// Fixed stream ids so independent consumers never share a stream.
namespace streams {
constexpr uint64_t init = 1;
constexpr uint64_t pretrain_shuffle = 2;
constexpr uint64_t pretrain_dropout = 3;
constexpr uint64_t pretrain_dropout_aug = 4;
constexpr uint64_t finetune_shuffle = 5;
constexpr uint64_t finetune_mask = 6;
constexpr uint64_t finetune_dropout = 7;
constexpr uint64_t synth_latent = 8;
constexpr uint64_t synth_projection = 9;
constexpr uint64_t synth_noise = 10;
constexpr uint64_t synth_transitions = 11;
constexpr uint64_t synth_sequences = 12;
constexpr uint64_t gradcheck = 13;
}  // namespace streams

}  // namespace mmrec
