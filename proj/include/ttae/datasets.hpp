#pragma once

#include "ttae/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace ttae {

/// One sinusoid a * sin(2*pi*f*k + phi) over integer steps k.
struct SineComponent {
    double amplitude = 1.0;
    double frequency = 0.1;
    double phase = 0.0;

    bool operator==(const SineComponent&) const = default;
};

struct SineSpec {
    std::int64_t n_samples = 5000;
    std::int64_t length = 24;
    std::int64_t dims = 5;
    double amplitude_lo = 1.0, amplitude_hi = 3.0;
    double frequency_lo = 0.1, frequency_hi = 0.15;
    double phase_lo = 0.0, phase_hi = 6.283185307179586;
    std::int64_t components = 1;
    std::uint64_t seed = 0;
    bool normalize = true;
    /// Test hook: every component of every series uses these parameters.
    std::optional<SineComponent> fixed_component;

    void validate() const;
};

struct MixtureSpec {
    std::int64_t n_samples = 5000;
    std::int64_t length = 128;
    double local_weight = 0.5;
    double local_frequency = 50.0;  // Hz
    double global_frequency = 5.0;  // Hz
    double sample_rate = 128.0;     // Hz
    double amplitude_lo = 1.0, amplitude_hi = 3.0;
    std::uint64_t seed = 0;
    bool normalize = true;

    void validate() const;
};

/// Component parameters in (sample, dim, component) order, as used by the generators.
std::vector<SineComponent> draw_sine_components(const SineSpec& spec);
/// Single-component sinusoids with per-(sample, dim) parameters. [n, length, dims].
Tensor gen_sine_sim(const SineSpec& spec);
/// Sum of `components` sinusoids per (sample, dim) with pairwise distinct parameters.
Tensor gen_sine_cpx(const SineSpec& spec);
/// local_weight * 50 Hz tone + (1 - local_weight) * 5 Hz tone, amplitudes drawn per sample. [n, length, 1].
Tensor gen_local_global(const MixtureSpec& spec);

/// All stride-1 windows of a [T, c] series, in order. [T - window + 1, window, c].
Tensor sliding_windows(const Tensor& series, std::int64_t window);

/// Per-channel (last axis) minimum and maximum.
struct ScalerState {
    std::vector<Real> min;
    std::vector<Real> max;

    bool fitted() const { return !min.empty(); }
};

ScalerState minmax_fit(const Tensor& x);
/// (x - min) / (max - min) per channel; constant channels map to 0.
Tensor minmax_transform(const Tensor& x, const ScalerState& s);
Tensor minmax_inverse(const Tensor& x, const ScalerState& s);
/// Fit and transform in one step.
Tensor minmax_normalize(const Tensor& x);

struct CsvSchema {
    bool header = false;
    char delimiter = ',';
    /// Zero-based column indices to keep; empty keeps every column.
    std::vector<std::int64_t> columns;
};

/// Reads numeric rows as time steps. Returns [rows, columns].
Tensor load_csv(const std::filesystem::path& path, const CsvSchema& schema);

/// Dataset container: text header "ttae-dataset v1 n t c\n", then n*t*c little-endian f32 values.
void save_dataset(const Tensor& batch, const std::filesystem::path& path);
Tensor load_dataset(const std::filesystem::path& path);

}  // namespace ttae
