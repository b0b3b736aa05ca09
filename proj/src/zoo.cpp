#include "vtcfed/zoo.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "vtcfed/errors.hpp"

namespace vtcfed::zoo {

using json = nlohmann::ordered_json;

DataProfile profile_by_name(const std::string& name) {
    if (name == "mnist") return {"mnist", 1, 28, 28, 10, 980, 16, 32};
    if (name == "digits") return {"digits", 1, 28, 28, 10, 196, 8, 16};
    if (name == "toy") return {"toy", 1, 16, 16, 4, 128, 8, 16};
    throw ConfigError("unknown profile '" + name + "'");
}

std::vector<ArchCluster> make_clusters(int count) {
    if (count < 1 || count > 5) throw ConfigError("cluster count must be in 1..5");
    std::vector<ArchCluster> out;
    for (int c = 1; c <= count; ++c) out.push_back({c, c + 1, 8 + 2 * (c - 1)});
    return out;
}

namespace {

// Latent grid is (H/4, W/4); returns the channel count p maps onto.
long latent_channels(const DataProfile& profile, int p) {
    if (profile.height % 4 != 0 || profile.width % 4 != 0)
        throw ConfigError("profile " + profile.name + ": spatial dims must be divisible by 4");
    const long grid = (static_cast<long>(profile.height) / 4) * (profile.width / 4);
    if (p <= 0 || p % grid != 0)
        throw ConfigError("p=" + std::to_string(p) + " not factorable into latent grid " +
                          std::to_string(profile.height / 4) + "x" + std::to_string(profile.width / 4));
    return p / grid;
}

}  // namespace

LocalModel build_local_model(const ArchCluster& arch, const DataProfile& profile, int p, std::uint64_t seed) {
    const long lc = latent_channels(profile, p);
    LocalModel m;
    m.arch_id = arch.cluster_id;
    m.p = p;
    m.classes = profile.classes;
    m.input_shape = profile.input_shape();

    const int w = arch.width;
    m.extractor.add<nn::Conv2d>(profile.channels, w, 3, 2, 1);
    m.extractor.add<nn::LeakyReLU>(0.01);
    m.extractor.add<nn::Conv2d>(w, 2 * w, 3, 2, 1);
    m.extractor.add<nn::LeakyReLU>(0.01);
    for (int b = 0; b < arch.conv_blocks - 2; ++b) {
        m.extractor.add<nn::Conv2d>(2 * w, 2 * w, 3, 1, 1);
        m.extractor.add<nn::LeakyReLU>(0.01);
    }
    m.extractor.add<nn::Conv2d>(2 * w, static_cast<int>(lc), 1, 1, 0);
    m.extractor.add<nn::Flatten>();
    m.head.add<nn::Linear>(p, profile.classes);

    RandomStream rng(seed);
    m.extractor.init_params(rng);
    m.head.init_params(rng);
    return m;
}

Tensor VtcDecoder::decode(const Tensor& latents, nn::Mode mode) {
    if (latents.ndim() != 2 || latents.dim(1) != p())
        throw std::invalid_argument("decode: expected (N," + std::to_string(p()) + ") latents, got " +
                                    latents.shape_str());
    Tensor grid({latents.dim(0), latent_c, latent_h, latent_w}, latents.data);
    return net.forward(grid, mode);
}

Tensor VtcDecoder::backward(const Tensor& dy, bool want_param_grads) {
    Tensor dgrid = net.backward(dy, want_param_grads);
    return Tensor({dgrid.dim(0), p()}, dgrid.data);
}

namespace {

// Four transposed-conv blocks; strides 1,2,1,2 so the spatial grid quadruples.
void build_decoder_net(nn::Sequential& net, int lc, int m1, int m2, int out_c) {
    net.add<nn::ConvTranspose2d>(lc, m1, 3, 1, 1);
    net.add<nn::BatchNorm2d>(m1);
    net.add<nn::LeakyReLU>(0.01);
    net.add<nn::ConvTranspose2d>(m1, m2, 4, 2, 1);
    net.add<nn::BatchNorm2d>(m2);
    net.add<nn::LeakyReLU>(0.01);
    net.add<nn::ConvTranspose2d>(m2, m2, 3, 1, 1);
    net.add<nn::BatchNorm2d>(m2);
    net.add<nn::LeakyReLU>(0.01);
    net.add<nn::ConvTranspose2d>(m2, out_c, 4, 2, 1);
    net.add<nn::BatchNorm2d>(out_c);
    net.add<nn::Sigmoid>();
}

}  // namespace

VtcDecoder VtcDecoder::clone() const {
    VtcDecoder copy;
    copy.latent_c = latent_c;
    copy.latent_h = latent_h;
    copy.latent_w = latent_w;
    copy.mid1 = mid1;
    copy.mid2 = mid2;
    copy.output_shape = output_shape;
    build_decoder_net(copy.net, static_cast<int>(latent_c), mid1, mid2, static_cast<int>(output_shape[0]));
    copy.net.set_state_flat(const_cast<VtcDecoder*>(this)->net.state_flat());
    return copy;
}

VtcDecoder build_vtc_decoder(const DataProfile& profile, int p, std::uint64_t seed) {
    const long lc = latent_channels(profile, p);
    VtcDecoder d;
    d.latent_c = lc;
    d.latent_h = profile.height / 4;
    d.latent_w = profile.width / 4;
    d.mid1 = profile.dec_mid1;
    d.mid2 = profile.dec_mid2;
    d.output_shape = profile.input_shape();
    build_decoder_net(d.net, static_cast<int>(lc), d.mid1, d.mid2, profile.channels);

    RandomStream rng(seed);
    d.net.init_params(rng);
    return d;
}

double classification_loss(const Vec& scores, int label) {
    if (label < 0 || label >= scores.size()) throw std::invalid_argument("classification_loss: label out of range");
    const double mx = scores.maxCoeff();
    double lse = 0.0;
    for (Eigen::Index i = 0; i < scores.size(); ++i) lse += std::exp(scores[i] - mx);
    return std::log(lse) + mx - scores[label];
}

Vec classification_grad(const Vec& scores, int label) {
    if (label < 0 || label >= scores.size()) throw std::invalid_argument("classification_grad: label out of range");
    const double mx = scores.maxCoeff();
    Vec g = (scores.array() - mx).exp();
    g /= g.sum();
    g[label] -= 1.0;
    return g;
}

PrototypeMap local_prototypes(LocalModel& model, const Tensor& xs, const std::vector<int>& ys) {
    if (xs.dim(0) != static_cast<long>(ys.size())) throw std::invalid_argument("local_prototypes: batch mismatch");
    PrototypeMap sums;
    std::map<int, long> counts;
    // modest batches keep the activation footprint bounded
    const long total = xs.dim(0), chunk = 128;
    for (long start = 0; start < total; start += chunk) {
        const long n = std::min(chunk, total - start);
        Tensor batch({n, xs.dim(1), xs.dim(2), xs.dim(3)});
        std::copy(xs.data.begin() + start * (xs.numel() / total),
                  xs.data.begin() + (start + n) * (xs.numel() / total), batch.data.begin());
        Tensor z = model.extract(batch, nn::Mode::kEval);
        for (long i = 0; i < n; ++i) {
            const int y = ys[static_cast<size_t>(start + i)];
            auto [it, fresh] = sums.try_emplace(y, Vec::Zero(model.p));
            it->second += z.sample(i);
            counts[y] += 1;
        }
    }
    for (auto& [y, v] : sums) v /= static_cast<double>(counts[y]);
    return sums;
}

// ------------------------------------------------------------ checkpoints

namespace {

constexpr char kCkptMagic[] = "VTCFEDCKPT1\n";

struct NamedArray {
    std::string name;
    std::vector<long> shape;
    const std::vector<double>* data;
};

void write_checkpoint(const std::string& path, json manifest, const std::vector<NamedArray>& arrays) {
    json entries = json::array();
    std::uint64_t offset = 0;
    for (const auto& a : arrays) {
        json e;
        e["name"] = a.name;
        e["shape"] = a.shape;
        e["count"] = a.data->size();
        e["offset"] = offset;
        entries.push_back(e);
        offset += a.data->size();
    }
    manifest["entries"] = entries;
    const std::string mtext = manifest.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IngestionError("cannot write checkpoint: " + path);
    f.write(kCkptMagic, static_cast<long>(std::strlen(kCkptMagic)));
    const std::uint32_t mlen = static_cast<std::uint32_t>(mtext.size());
    unsigned char lenbuf[4] = {static_cast<unsigned char>(mlen & 0xff), static_cast<unsigned char>((mlen >> 8) & 0xff),
                               static_cast<unsigned char>((mlen >> 16) & 0xff),
                               static_cast<unsigned char>((mlen >> 24) & 0xff)};
    f.write(reinterpret_cast<const char*>(lenbuf), 4);
    f.write(mtext.data(), static_cast<long>(mtext.size()));
    for (const auto& a : arrays) {
        std::vector<float> f32(a.data->size());
        for (size_t i = 0; i < f32.size(); ++i) f32[i] = static_cast<float>((*a.data)[i]);
        f.write(reinterpret_cast<const char*>(f32.data()), static_cast<long>(f32.size() * sizeof(float)));
    }
    if (!f) throw IngestionError("short write: " + path);
}

std::pair<json, std::map<std::string, std::vector<double>>> read_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IngestionError("cannot read checkpoint: " + path);
    char magic[sizeof(kCkptMagic)] = {};
    f.read(magic, static_cast<long>(std::strlen(kCkptMagic)));
    if (std::strncmp(magic, kCkptMagic, std::strlen(kCkptMagic)) != 0)
        throw IngestionError("bad checkpoint magic: " + path);
    unsigned char lenbuf[4];
    f.read(reinterpret_cast<char*>(lenbuf), 4);
    const std::uint32_t mlen = static_cast<std::uint32_t>(lenbuf[0]) | (static_cast<std::uint32_t>(lenbuf[1]) << 8) |
                               (static_cast<std::uint32_t>(lenbuf[2]) << 16) |
                               (static_cast<std::uint32_t>(lenbuf[3]) << 24);
    std::string mtext(mlen, '\0');
    f.read(mtext.data(), mlen);
    if (!f) throw IngestionError("truncated checkpoint manifest: " + path);
    json manifest = json::parse(mtext);

    std::map<std::string, std::vector<double>> arrays;
    for (const auto& e : manifest.at("entries")) {
        const size_t count = e.at("count").get<size_t>();
        std::vector<float> f32(count);
        f.read(reinterpret_cast<char*>(f32.data()), static_cast<long>(count * sizeof(float)));
        if (!f) throw IngestionError("truncated checkpoint payload: " + path);
        std::vector<double> d(count);
        for (size_t i = 0; i < count; ++i) d[i] = static_cast<double>(f32[i]);
        arrays[e.at("name").get<std::string>()] = std::move(d);
    }
    return {manifest, arrays};
}

std::vector<NamedArray> sequential_arrays(nn::Sequential& net, const std::string& prefix) {
    std::vector<NamedArray> out;
    for (const auto& p : net.params())
        out.push_back({prefix + "." + p.name, {static_cast<long>(p.value->size())}, p.value});
    for (const auto& b : net.buffers())
        out.push_back({prefix + "." + b.name, {static_cast<long>(b.value->size())}, b.value});
    return out;
}

void apply_arrays(nn::Sequential& net, const std::string& prefix,
                  const std::map<std::string, std::vector<double>>& arrays) {
    auto apply = [&](const std::string& name, std::vector<double>* dst) {
        const auto it = arrays.find(prefix + "." + name);
        if (it == arrays.end()) throw IngestionError("checkpoint missing array " + prefix + "." + name);
        if (it->second.size() != dst->size())
            throw IngestionError("checkpoint shape mismatch for " + prefix + "." + name);
        *dst = it->second;
    };
    for (auto& p : net.params()) apply(p.name, p.value);
    for (auto& b : net.buffers()) apply(b.name, b.value);
}

}  // namespace

void save_model_checkpoint(const std::string& path, LocalModel& model, std::uint64_t seed) {
    json manifest;
    manifest["format"] = "vtcfed-checkpoint";
    manifest["version"] = 1;
    manifest["kind"] = "local_model";
    manifest["arch_id"] = model.arch_id;
    manifest["p"] = model.p;
    manifest["classes"] = model.classes;
    manifest["input_shape"] = model.input_shape;
    manifest["seed"] = seed;
    auto arrays = sequential_arrays(model.extractor, "extractor");
    const auto head = sequential_arrays(model.head, "head");
    arrays.insert(arrays.end(), head.begin(), head.end());
    write_checkpoint(path, std::move(manifest), arrays);
}

void save_decoder_checkpoint(const std::string& path, VtcDecoder& decoder, std::uint64_t seed) {
    json manifest;
    manifest["format"] = "vtcfed-checkpoint";
    manifest["version"] = 1;
    manifest["kind"] = "decoder";
    manifest["arch_id"] = 0;
    manifest["latent"] = {decoder.latent_c, decoder.latent_h, decoder.latent_w};
    manifest["output_shape"] = decoder.output_shape;
    manifest["seed"] = seed;
    write_checkpoint(path, std::move(manifest), sequential_arrays(decoder.net, "decoder"));
}

void load_model_checkpoint(const std::string& path, LocalModel& model) {
    auto [manifest, arrays] = read_checkpoint(path);
    if (manifest.at("kind") != "local_model") throw IngestionError("not a local_model checkpoint: " + path);
    if (manifest.at("arch_id").get<int>() != model.arch_id || manifest.at("p").get<int>() != model.p)
        throw IngestionError("checkpoint architecture mismatch: " + path);
    apply_arrays(model.extractor, "extractor", arrays);
    apply_arrays(model.head, "head", arrays);
}

void load_decoder_checkpoint(const std::string& path, VtcDecoder& decoder) {
    auto [manifest, arrays] = read_checkpoint(path);
    if (manifest.at("kind") != "decoder") throw IngestionError("not a decoder checkpoint: " + path);
    apply_arrays(decoder.net, "decoder", arrays);
}

}  // namespace vtcfed::zoo
