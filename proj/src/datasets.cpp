#include "ttae/datasets.hpp"

#include "ttae/random.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace ttae {

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) throw Error(message);
}

bool distinct(const SineComponent& a, const SineComponent& b) {
    return a.amplitude != b.amplitude && a.frequency != b.frequency && a.phase != b.phase;
}

SineComponent draw_component(Rng& rng, const SineSpec& s) {
    SineComponent c;
    c.amplitude = rng.uniform(s.amplitude_lo, s.amplitude_hi);
    c.frequency = rng.uniform(s.frequency_lo, s.frequency_hi);
    c.phase = rng.uniform(s.phase_lo, s.phase_hi);
    return c;
}

Tensor sine_batch(const SineSpec& spec) {
    const std::vector<SineComponent> all = draw_sine_components(spec);
    const std::int64_t n = spec.n_samples, t = spec.length, d = spec.dims, m = spec.components;
    std::vector<Real> out(static_cast<std::size_t>(n * t * d), Real(0));
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t ch = 0; ch < d; ++ch) {
            const auto* comps = all.data() + (i * d + ch) * m;
            for (std::int64_t k = 0; k < t; ++k) {
                double v = 0;
                for (std::int64_t j = 0; j < m; ++j) {
                    const SineComponent& c = comps[j];
                    v += c.amplitude * std::sin(2.0 * std::numbers::pi * c.frequency * static_cast<double>(k) + c.phase);
                }
                out[static_cast<std::size_t>((i * t + k) * d + ch)] = static_cast<Real>(v);
            }
        }
    }
    Tensor x({n, t, d}, std::move(out));
    return spec.normalize ? minmax_normalize(x) : x;
}

template <class T>
void put_le(std::ostream& os, T value) {
    unsigned char bytes[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

}  // namespace

void SineSpec::validate() const {
    require(n_samples >= 1 && length >= 1 && dims >= 1, "sine spec: n_samples, length and dims must be >= 1");
    require(components >= 1, "sine spec: components must be >= 1");
    require(amplitude_lo <= amplitude_hi && frequency_lo <= frequency_hi && phase_lo <= phase_hi,
            "sine spec: every range must satisfy lo <= hi");
    if (!fixed_component && components > 1) {
        require(amplitude_lo < amplitude_hi && frequency_lo < frequency_hi && phase_lo < phase_hi,
                "sine spec: distinct components need non-degenerate ranges");
    }
}

void MixtureSpec::validate() const {
    require(n_samples >= 1 && length >= 2, "mixture spec: n_samples must be >= 1 and length >= 2");
    require(local_weight >= 0 && local_weight <= 1, "mixture spec: local_weight must lie in [0, 1]");
    require(sample_rate > 0 && amplitude_lo <= amplitude_hi && amplitude_lo >= 0, "mixture spec: invalid rate or amplitude range");
    require(local_frequency > 0 && global_frequency > 0, "mixture spec: frequencies must be positive");
    require(2 * local_frequency < sample_rate && 2 * global_frequency < sample_rate,
            "mixture spec: frequencies must be below the Nyquist rate");
}

std::vector<SineComponent> draw_sine_components(const SineSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    std::vector<SineComponent> out;
    out.reserve(static_cast<std::size_t>(spec.n_samples * spec.dims * spec.components));
    for (std::int64_t series = 0; series < spec.n_samples * spec.dims; ++series) {
        const std::size_t first = out.size();
        for (std::int64_t j = 0; j < spec.components; ++j) {
            if (spec.fixed_component) {
                out.push_back(*spec.fixed_component);
                continue;
            }
            SineComponent c = draw_component(rng, spec);
            auto clashes = [&] {
                for (std::size_t p = first; p < out.size(); ++p)
                    if (!distinct(out[p], c)) return true;
                return false;
            };
            while (clashes()) c = draw_component(rng, spec);
            out.push_back(c);
        }
    }
    return out;
}

Tensor gen_sine_sim(const SineSpec& spec) {
    require(spec.components == 1, "gen_sine_sim: components must be 1");
    return sine_batch(spec);
}

Tensor gen_sine_cpx(const SineSpec& spec) {
    require(spec.components == 3, "gen_sine_cpx: components must be 3");
    return sine_batch(spec);
}

Tensor gen_local_global(const MixtureSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const std::int64_t n = spec.n_samples, t = spec.length;
    std::vector<Real> out(static_cast<std::size_t>(n * t));
    for (std::int64_t i = 0; i < n; ++i) {
        const double a_local = rng.uniform(spec.amplitude_lo, spec.amplitude_hi);
        const double a_global = rng.uniform(spec.amplitude_lo, spec.amplitude_hi);
        for (std::int64_t k = 0; k < t; ++k) {
            const double tk = static_cast<double>(k) / spec.sample_rate;
            const double local = a_local * std::sin(2.0 * std::numbers::pi * spec.local_frequency * tk);
            const double global = a_global * std::sin(2.0 * std::numbers::pi * spec.global_frequency * tk);
            out[static_cast<std::size_t>(i * t + k)] =
                static_cast<Real>(spec.local_weight * local + (1.0 - spec.local_weight) * global);
        }
    }
    Tensor x({n, t, 1}, std::move(out));
    return spec.normalize ? minmax_normalize(x) : x;
}

Tensor sliding_windows(const Tensor& series, std::int64_t window) {
    require(series.rank() == 2, "sliding_windows: expected a [T, c] series, got " + to_string(series.shape()));
    const std::int64_t total = series.dim(0), c = series.dim(1);
    require(window >= 1, "sliding_windows: window must be >= 1");
    require(window <= total, "sliding_windows: window " + std::to_string(window) + " exceeds series length " +
                                 std::to_string(total));
    const std::int64_t count = total - window + 1;
    std::vector<Real> out(static_cast<std::size_t>(count * window * c));
    const auto v = series.data();
    for (std::int64_t i = 0; i < count; ++i) {
        std::copy_n(v.begin() + i * c, window * c, out.begin() + i * window * c);
    }
    return Tensor({count, window, c}, std::move(out));
}

ScalerState minmax_fit(const Tensor& x) {
    require(x.rank() >= 1 && x.size() > 0, "minmax_fit: empty input");
    const std::int64_t c = x.dim(-1);
    require(c > 0, "minmax_fit: empty channel axis");
    ScalerState s;
    s.min.assign(static_cast<std::size_t>(c), std::numeric_limits<Real>::infinity());
    s.max.assign(static_cast<std::size_t>(c), -std::numeric_limits<Real>::infinity());
    const auto v = x.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        const std::size_t ch = i % static_cast<std::size_t>(c);
        s.min[ch] = std::min(s.min[ch], v[i]);
        s.max[ch] = std::max(s.max[ch], v[i]);
    }
    return s;
}

Tensor minmax_transform(const Tensor& x, const ScalerState& s) {
    require(s.fitted(), "minmax_transform: scaler has not been fitted");
    require(x.rank() >= 1 && static_cast<std::size_t>(x.dim(-1)) == s.min.size(),
            "minmax_transform: channel count does not match the fitted scaler");
    const std::size_t c = s.min.size();
    std::vector<Real> out = x.to_vector();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::size_t ch = i % c;
        const Real range = s.max[ch] - s.min[ch];
        out[i] = range > 0 ? (out[i] - s.min[ch]) / range : Real(0);
    }
    return Tensor(x.shape(), std::move(out));
}

Tensor minmax_inverse(const Tensor& x, const ScalerState& s) {
    require(s.fitted(), "minmax_inverse: scaler has not been fitted");
    require(x.rank() >= 1 && static_cast<std::size_t>(x.dim(-1)) == s.min.size(),
            "minmax_inverse: channel count does not match the fitted scaler");
    const std::size_t c = s.min.size();
    std::vector<Real> out = x.to_vector();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::size_t ch = i % c;
        out[i] = out[i] * (s.max[ch] - s.min[ch]) + s.min[ch];
    }
    return Tensor(x.shape(), std::move(out));
}

Tensor minmax_normalize(const Tensor& x) { return minmax_transform(x, minmax_fit(x)); }

Tensor load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
    std::ifstream is(path);
    if (!is) throw Error("load_csv: cannot open '" + path.string() + "'");
    const std::string where = "load_csv: " + path.string();
    std::vector<Real> values;
    std::int64_t width = -1, rows = 0, line_no = 0;
    std::string line;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1 && schema.header) continue;
        if (line.find_first_not_of(" \t") == std::string::npos) continue;

        std::vector<Real> cells;
        std::stringstream ss(line);
        std::string cell;
        std::int64_t col = 0;
        while (std::getline(ss, cell, schema.delimiter)) {
            const auto b = cell.find_first_not_of(" \t");
            const auto e = cell.find_last_not_of(" \t");
            const std::string trimmed = b == std::string::npos ? "" : cell.substr(b, e - b + 1);
            double v = 0;
            const auto res = std::from_chars(trimmed.data(), trimmed.data() + trimmed.size(), v);
            if (trimmed.empty() || res.ec != std::errc() || res.ptr != trimmed.data() + trimmed.size() || !std::isfinite(v)) {
                throw Error(where + ":" + std::to_string(line_no) + ": non-numeric cell '" + trimmed + "' in column " +
                            std::to_string(col));
            }
            cells.push_back(static_cast<Real>(v));
            ++col;
        }
        if (!line.empty() && line.back() == schema.delimiter) {
            throw Error(where + ":" + std::to_string(line_no) + ": empty trailing cell");
        }
        if (width < 0) width = col;
        if (col != width) {
            throw Error(where + ":" + std::to_string(line_no) + ": ragged row with " + std::to_string(col) +
                        " cells, expected " + std::to_string(width));
        }
        if (schema.columns.empty()) {
            values.insert(values.end(), cells.begin(), cells.end());
        } else {
            for (auto c : schema.columns) {
                if (c < 0 || c >= width) {
                    throw Error(where + ": selected column " + std::to_string(c) + " does not exist (file has " +
                                std::to_string(width) + " columns)");
                }
                values.push_back(cells[static_cast<std::size_t>(c)]);
            }
        }
        ++rows;
    }
    if (rows == 0) throw Error(where + ": no data rows");
    const std::int64_t c = schema.columns.empty() ? width : static_cast<std::int64_t>(schema.columns.size());
    if (c == 0) throw Error(where + ": empty column selection");
    return Tensor({rows, c}, std::move(values));
}

void save_dataset(const Tensor& batch, const std::filesystem::path& path) {
    require(batch.rank() == 3, "save_dataset: expected an [n, t, c] batch, got " + to_string(batch.shape()));
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("save_dataset: cannot open '" + path.string() + "' for writing");
    os << "ttae-dataset v1 " << batch.dim(0) << ' ' << batch.dim(1) << ' ' << batch.dim(2) << '\n';
    for (Real v : batch.data()) put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    if (!os) throw Error("save_dataset: write failed for '" + path.string() + "'");
}

Tensor load_dataset(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("load_dataset: cannot open '" + path.string() + "'");
    const std::string where = "load_dataset: '" + path.string() + "'";
    std::string header;
    if (!std::getline(is, header) || header.size() > 256) throw Error(where + ": missing header line");
    std::istringstream hs(header);
    std::string magic, version, extra;
    std::int64_t n = -1, t = -1, c = -1;
    hs >> magic >> version >> n >> t >> c;
    if (magic != "ttae-dataset") throw Error(where + " is not a ttae dataset (bad magic '" + magic + "')");
    if (version != "v1") throw Error(where + ": unsupported version '" + version + "'");
    if (hs.fail() || (hs >> extra) || n < 0 || t < 0 || c < 0) {
        throw Error(where + ": malformed header '" + header + "'");
    }
    const auto count = static_cast<std::size_t>(n * t * c);
    std::vector<unsigned char> bytes(count * 4);
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(is.gcount()) != bytes.size()) {
        throw Error(where + ": truncated payload (expected " + std::to_string(bytes.size()) + " bytes, got " +
                    std::to_string(is.gcount()) + ")");
    }
    if (is.peek() != std::char_traits<char>::eof()) throw Error(where + ": trailing bytes after payload");
    std::vector<Real> data(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t u = 0;
        for (std::size_t b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
        data[i] = static_cast<Real>(std::bit_cast<float>(u));
    }
    return Tensor({n, t, c}, std::move(data));
}

}  // namespace ttae
