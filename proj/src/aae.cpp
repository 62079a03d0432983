#include "ttae/aae.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace ttae {

namespace {

constexpr char kMagic[4] = {'T', 'T', 'A', 'E'};
constexpr std::uint16_t kFormatVersion = 1;

std::string join(const std::vector<std::int64_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(v[i]);
    }
    return s;
}

std::vector<std::int64_t> split_ints(const std::string& s, const std::string& key) {
    std::vector<std::int64_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stoll(item));
        } catch (const std::exception&) {
            throw Error("model config: bad integer list for '" + key + "': " + s);
        }
    }
    return out;
}

std::int64_t conv_out_length(std::int64_t t, std::int64_t stride) { return (t + stride - 1) / stride; }

constexpr std::int64_t kStride = 2;

}  // namespace

// ---------------------------------------------------------------- config

std::int64_t ModelConfig::default_latent_dim(std::int64_t length) { return length <= 24 ? 8 : 16; }

void ModelConfig::validate() const {
    if (length < 4 || length % 4 != 0) {
        throw Error("model config: length must be a positive multiple of 4, got " + std::to_string(length));
    }
    if (channels < 1) throw Error("model config: channels must be >= 1");
    if (latent_dim < 1) throw Error("model config: latent_dim must be >= 1");
    if (num_blocks < 1) throw Error("model config: num_blocks must be >= 1");
    if (num_heads < 1 || head_size < 1) throw Error("model config: heads and head_size must be >= 1");
    if (kernel_size < 1) throw Error("model config: kernel_size must be >= 1");
    if (seed_channels < 1 || disc_hidden < 1) throw Error("model config: seed_channels and disc_hidden must be >= 1");
    if (encoder_filters.empty()) throw Error("model config: encoder needs at least one layer");
    if (decoder_filters.size() != 2) throw Error("model config: decoder uses exactly two transposed convolutions");
}

TimeTransformerConfig ModelConfig::refiner_config() const {
    TimeTransformerConfig c;
    c.channels = channels;
    c.num_blocks = num_blocks;
    c.num_heads = num_heads;
    c.head_size = head_size;
    c.kernel_size = kernel_size;
    c.scaling = scaling;
    c.sublayer_residual = sublayer_residual;
    c.variant = variant;
    return c;
}

std::string ModelConfig::serialize() const {
    std::ostringstream os;
    os << "length=" << length << '\n'
       << "channels=" << channels << '\n'
       << "latent_dim=" << latent_dim << '\n'
       << "num_blocks=" << num_blocks << '\n'
       << "num_heads=" << num_heads << '\n'
       << "head_size=" << head_size << '\n'
       << "kernel_size=" << kernel_size << '\n'
       << "seed_channels=" << seed_channels << '\n'
       << "disc_hidden=" << disc_hidden << '\n'
       << "encoder_filters=" << join(encoder_filters) << '\n'
       << "decoder_filters=" << join(decoder_filters) << '\n'
       << "variant=" << to_string(variant) << '\n'
       << "scaling=" << (scaling == AttentionScaling::PerHead ? "per_head" : "channels") << '\n'
       << "sublayer_residual=" << (sublayer_residual ? 1 : 0) << '\n'
       << "init_seed=" << init_seed << '\n'
       << "trained_steps=" << trained_steps << '\n';
    return os.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error("model config: malformed line '" + line + "'");
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        auto as_int = [&]() -> std::int64_t {
            try {
                std::size_t used = 0;
                const auto v = std::stoll(val, &used);
                if (used != val.size()) throw Error("");
                return v;
            } catch (const std::exception&) {
                throw Error("model config: bad integer for '" + key + "': " + val);
            }
        };
        if (key == "length") c.length = as_int();
        else if (key == "channels") c.channels = as_int();
        else if (key == "latent_dim") c.latent_dim = as_int();
        else if (key == "num_blocks") c.num_blocks = as_int();
        else if (key == "num_heads") c.num_heads = as_int();
        else if (key == "head_size") c.head_size = as_int();
        else if (key == "kernel_size") c.kernel_size = as_int();
        else if (key == "seed_channels") c.seed_channels = as_int();
        else if (key == "disc_hidden") c.disc_hidden = as_int();
        else if (key == "encoder_filters") c.encoder_filters = split_ints(val, key);
        else if (key == "decoder_filters") c.decoder_filters = split_ints(val, key);
        else if (key == "variant") c.variant = parse_decoder_variant(val);
        else if (key == "scaling") {
            if (val == "per_head") c.scaling = AttentionScaling::PerHead;
            else if (val == "channels") c.scaling = AttentionScaling::Channels;
            else throw Error("model config: unknown scaling '" + val + "'");
        } else if (key == "sublayer_residual") c.sublayer_residual = as_int() != 0;
        else if (key == "init_seed") {
            try {
                c.init_seed = std::stoull(val);
            } catch (const std::exception&) {
                throw Error("model config: bad init_seed: " + val);
            }
        } else if (key == "trained_steps") c.trained_steps = as_int();
        else throw Error("model config: unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------- bundle

ModelBundle ModelBundle::initialize(const ModelConfig& config) {
    config.validate();
    ModelBundle m;
    m.config = config;
    Rng rng(config.init_seed);

    std::int64_t in = config.channels;
    std::int64_t t = config.length;
    for (auto filters : config.encoder_filters) {
        m.encoder.convs.push_back(init_conv1d(rng, in, filters, config.kernel_size, kStride, 1, false));
        in = filters;
        t = conv_out_length(t, kStride);
    }
    m.encoder.to_latent = init_dense(rng, t * in, config.latent_dim);

    const std::int64_t seed_len = config.length / 4;
    m.decoder.to_seed = init_dense(rng, config.latent_dim, seed_len * config.seed_channels);
    in = config.seed_channels;
    for (auto filters : config.decoder_filters) {
        m.decoder.deconvs.push_back(init_tconv1d(rng, in, filters, config.kernel_size, kStride));
        in = filters;
    }
    m.decoder.to_prototype = init_dense(rng, in, config.channels);
    if (config.variant != DecoderVariant::DeconvOnly) m.decoder.refiner = init_refiner(rng, config.refiner_config());

    m.discriminator.hidden1 = init_dense(rng, config.latent_dim, config.disc_hidden);
    m.discriminator.hidden2 = init_dense(rng, config.disc_hidden, config.disc_hidden);
    m.discriminator.out = init_dense(rng, config.disc_hidden, 1);
    return m;
}

void ModelBundle::for_each_param(unsigned parts, const ParamVisitor& visit) {
    if (parts & kEncoder) {
        for (std::size_t i = 0; i < encoder.convs.size(); ++i)
            encoder.convs[i].for_each_param("encoder.conv" + std::to_string(i), visit);
        encoder.to_latent.for_each_param("encoder.to_latent", visit);
    }
    if (parts & kDecoder) {
        decoder.to_seed.for_each_param("decoder.to_seed", visit);
        for (std::size_t i = 0; i < decoder.deconvs.size(); ++i)
            decoder.deconvs[i].for_each_param("decoder.deconv" + std::to_string(i), visit);
        decoder.to_prototype.for_each_param("decoder.to_prototype", visit);
        decoder.refiner.for_each_param("decoder.refiner", config.variant, visit);
    }
    if (parts & kDiscriminator) {
        discriminator.hidden1.for_each_param("discriminator.hidden1", visit);
        discriminator.hidden2.for_each_param("discriminator.hidden2", visit);
        discriminator.out.for_each_param("discriminator.out", visit);
    }
}

std::vector<NamedParam> ModelBundle::named_params(unsigned parts) {
    std::vector<NamedParam> out;
    for_each_param(parts, [&](const std::string& name, Tensor& t) { out.push_back({name, &t}); });
    return out;
}

std::int64_t ModelBundle::parameter_count(unsigned parts) const {
    ModelBundle copy = *this;
    std::int64_t n = 0;
    copy.for_each_param(parts, [&](const std::string&, Tensor& t) { n += t.size(); });
    return n;
}

ModelBundle ModelBundle::bind(Tape& tape, unsigned parts) const {
    ModelBundle copy = *this;
    copy.for_each_param(parts, [&](const std::string& name, Tensor& t) { t = tape.watch(t, name); });
    return copy;
}

bool ModelBundle::same_weights(const ModelBundle& other) const {
    std::map<std::string, Tensor> mine;
    ModelBundle a = *this;
    a.for_each_param(kAllParts, [&](const std::string& name, Tensor& t) { mine.emplace(name, t); });
    ModelBundle b = other;
    bool same = true;
    std::size_t seen = 0;
    b.for_each_param(kAllParts, [&](const std::string& name, Tensor& t) {
        auto it = mine.find(name);
        if (it == mine.end() || !it->second.same_values(t)) same = false;
        ++seen;
    });
    return same && seen == mine.size();
}

// ---------------------------------------------------------------- forward passes

Tensor encode(const ModelBundle& m, const Tensor& x) {
    const auto& c = m.config;
    if (x.rank() != 3 || x.dim(1) != c.length || x.dim(2) != c.channels) {
        throw Error("encode: expected [n, " + std::to_string(c.length) + ", " + std::to_string(c.channels) +
                    "] input, got " + to_string(x.shape()));
    }
    Tensor h = x;
    for (const auto& conv : m.encoder.convs) h = conv1d_forward(h, conv, Activation::Relu);
    return dense_forward(reshape(h, {x.dim(0), h.size() / x.dim(0)}), m.encoder.to_latent);
}

Tensor prototype(const ModelBundle& m, const Tensor& z) {
    const auto& c = m.config;
    if (z.rank() != 2 || z.dim(1) != c.latent_dim) {
        throw Error("decode: expected codes [n, " + std::to_string(c.latent_dim) + "], got " + to_string(z.shape()));
    }
    const std::int64_t n = z.dim(0);
    Tensor h = reshape(dense_forward(z, m.decoder.to_seed), {n, c.length / 4, c.seed_channels});
    for (const auto& deconv : m.decoder.deconvs) h = tconv1d_forward(h, deconv, Activation::Relu);
    return dense_forward(h, m.decoder.to_prototype);
}

Tensor decode(const ModelBundle& m, const Tensor& z) {
    return sigmoid(stack_forward(prototype(m, z), m.decoder.refiner, m.config.refiner_config()));
}

Tensor discriminate(const ModelBundle& m, const Tensor& z) {
    if (z.rank() != 2 || z.dim(1) != m.config.latent_dim) {
        throw Error("discriminate: expected codes [n, " + std::to_string(m.config.latent_dim) + "], got " +
                    to_string(z.shape()));
    }
    const Tensor h1 = dense_forward(z, m.discriminator.hidden1, Activation::Relu);
    const Tensor h2 = dense_forward(h1, m.discriminator.hidden2, Activation::Relu);
    return dense_forward(h2, m.discriminator.out, Activation::Sigmoid);
}

Tensor sample_prior(std::int64_t n, std::int64_t latent_dim, std::uint64_t seed) {
    Rng rng(seed);
    return rng.normal_tensor({n, latent_dim});
}

Tensor generate(const ModelBundle& m, std::int64_t n, std::uint64_t seed) {
    if (n <= 0) throw Error("generate: sample count must be positive, got " + std::to_string(n));
    // Decode in chunks to bound activation memory; codes are drawn up front so the
    // result does not depend on the chunk size.
    const Tensor z = sample_prior(n, m.config.latent_dim, seed);
    constexpr std::int64_t kChunk = 256;
    std::vector<Tensor> parts;
    for (std::int64_t start = 0; start < n; start += kChunk) {
        const std::int64_t len = std::min(kChunk, n - start);
        parts.push_back(decode(m, slice(z, 0, start, len)));
    }
    return parts.size() == 1 ? parts.front() : concat(parts, 0);
}

// ---------------------------------------------------------------- persistence

namespace {

template <class T>
void put_le(std::ostream& os, T value) {
    unsigned char bytes[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::istream& is, const char* what) {
    unsigned char bytes[sizeof(T)];
    is.read(reinterpret_cast<char*>(bytes), sizeof(T));
    if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) throw Error(std::string("load_weights: truncated file while reading ") + what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes[i]) << (8 * i));
    return v;
}

}  // namespace

void save_weights(const ModelBundle& m, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("save_weights: cannot open '" + path.string() + "' for writing");
    os.write(kMagic, 4);
    put_le<std::uint16_t>(os, kFormatVersion);
    const std::string cfg = m.config.serialize();
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    ModelBundle copy = m;
    copy.for_each_param(kAllParts, [&](const std::string& name, Tensor& t) {
        put_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
        for (auto d : t.shape()) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
        for (Real v : t.data()) put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    });
    if (!os) throw Error("save_weights: write failed for '" + path.string() + "'");
}

ModelBundle load_weights(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("load_weights: cannot open '" + path.string() + "'");
    char magic[4] = {};
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
        throw Error("load_weights: '" + path.string() + "' is not a TTAE weight file (bad magic)");
    }
    const auto version = get_le<std::uint16_t>(is, "version");
    if (version != kFormatVersion) {
        throw Error("load_weights: unsupported format version " + std::to_string(version) + " (expected " +
                    std::to_string(kFormatVersion) + ")");
    }
    const auto cfg_len = get_le<std::uint32_t>(is, "config length");
    std::string cfg(cfg_len, '\0');
    is.read(cfg.data(), cfg_len);
    if (is.gcount() != static_cast<std::streamsize>(cfg_len)) throw Error("load_weights: truncated config block");

    ModelBundle m = ModelBundle::initialize(ModelConfig::parse(cfg));
    std::map<std::string, Tensor*> slots;
    m.for_each_param(kAllParts, [&](const std::string& name, Tensor& t) { slots.emplace(name, &t); });
    std::map<std::string, bool> loaded;

    while (is.peek() != std::char_traits<char>::eof()) {
        const auto name_len = get_le<std::uint16_t>(is, "tensor name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (is.gcount() != name_len) throw Error("load_weights: truncated tensor name");
        auto it = slots.find(name);
        if (it == slots.end()) throw Error("load_weights: unknown tensor '" + name + "'");
        if (loaded[name]) throw Error("load_weights: duplicate tensor '" + name + "'");
        const auto rank = get_le<std::uint8_t>(is, "tensor rank");
        Shape shape;
        for (unsigned i = 0; i < rank; ++i) shape.push_back(get_le<std::uint32_t>(is, "tensor dims"));
        if (shape != it->second->shape()) {
            throw Error("load_weights: tensor '" + name + "' has shape " + to_string(shape) + ", expected " +
                        to_string(it->second->shape()));
        }
        std::vector<Real> data(static_cast<std::size_t>(numel(shape)));
        for (auto& v : data) v = static_cast<Real>(std::bit_cast<float>(get_le<std::uint32_t>(is, "tensor data")));
        *it->second = Tensor(shape, std::move(data));
        loaded[name] = true;
    }
    for (const auto& [name, slot] : slots) {
        if (!loaded[name]) throw Error("load_weights: missing tensor '" + name + "'");
    }
    return m;
}

}  // namespace ttae
