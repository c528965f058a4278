#include "geoproxy/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include <Eigen/Dense>

#include "geoproxy/csv.hpp"
#include "geoproxy/error.hpp"
#include "geoproxy/log.hpp"
#include "geoproxy/parallel.hpp"
#include "geoproxy/rng.hpp"

namespace geoproxy::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
// Every buffer Eigen maps is allocated aligned: vectorized kernels peel by
// pointer alignment, so heap-dependent alignment changes the rounding.
template <typename T>
using Buf = std::vector<T, Eigen::aligned_allocator<T>>;

struct ConvDesc {
    int cin = 0, cout = 0, k = 1, stride = 1, pad = 0;
    int hin = 0, win = 0, hout = 0, wout = 0;
    std::size_t w = 0, b = 0;

    int K() const { return cin * k * k; }
    int N() const { return hout * wout; }
    std::size_t in_size() const { return static_cast<std::size_t>(cin) * hin * win; }
    std::size_t out_size() const { return static_cast<std::size_t>(cout) * hout * wout; }
};

struct BlockDesc {
    ConvDesc c1, c2, p;
    bool proj = false;
};

struct Arch {
    ConvDesc stem;
    std::vector<BlockDesc> blocks;
    int feat = 0;   // channels after the last stage
    int spatial = 0;
    int E = 0, O = 0;
    std::size_t emb_w = 0, emb_b = 0, head_w = 0, head_b = 0;
    std::vector<std::pair<std::string, std::vector<int>>> tensors;
};

Arch build_arch(const ConvRegressorConfig& cfg) {
    cfg.validate();
    Arch a;
    auto add = [&](std::string name, std::vector<int> shape) {
        a.tensors.emplace_back(std::move(name), std::move(shape));
        return a.tensors.size() - 1;
    };
    auto conv = [&](const std::string& name, int cin, int cout, int k, int stride, int pad, int h) {
        ConvDesc d;
        d.cin = cin, d.cout = cout, d.k = k, d.stride = stride, d.pad = pad;
        d.hin = d.win = h;
        d.hout = d.wout = (h + 2 * pad - k) / stride + 1;
        d.w = add(name + ".w", {cout, cin, k, k});
        d.b = add(name + ".b", {cout});
        return d;
    };
    a.stem = conv("stem", cfg.input_channels, cfg.block_widths[0], cfg.stem_kernel, cfg.stem_kernel, 0, cfg.input_size);
    int h = a.stem.hout, ch = cfg.block_widths[0];
    for (std::size_t s = 0; s < cfg.block_widths.size(); ++s) {
        const int w = cfg.block_widths[s];
        for (int j = 0; j < cfg.blocks_per_stage; ++j) {
            const int stride = j == 0 ? 2 : 1;
            const std::string name = "s" + std::to_string(s) + ".b" + std::to_string(j);
            BlockDesc b;
            b.c1 = conv(name + ".conv1", ch, w, 3, stride, 1, h);
            b.c2 = conv(name + ".conv2", w, w, 3, 1, 1, b.c1.hout);
            if (stride != 1 || ch != w) {
                b.proj = true;
                b.p = conv(name + ".proj", ch, w, 1, stride, 0, h);
            }
            h = b.c1.hout;
            ch = w;
            a.blocks.push_back(b);
        }
    }
    a.feat = ch;
    a.spatial = h;
    a.E = cfg.embedding_dim;
    a.O = cfg.output_dim;
    a.emb_w = add("embed.w", {a.E, ch});
    a.emb_b = add("embed.b", {a.E});
    a.head_w = add("head.w", {a.E, a.O});
    a.head_b = add("head.b", {a.O});
    return a;
}

void check_params(const Arch& a, const ModelParams& p) {
    if (p.tensors.size() != a.tensors.size()) throw SchemaError("model parameters do not match the configured architecture");
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        const auto& t = p.tensors[i];
        if (t.name != a.tensors[i].first || t.shape != a.tensors[i].second)
            throw SchemaError("parameter '" + t.name + "' does not match the configured architecture");
        std::size_t n = 1;
        for (int d : t.shape) n *= static_cast<std::size_t>(d);
        if (t.data.size() != n) throw SchemaError("parameter '" + t.name + "' has the wrong element count");
    }
}

std::size_t input_size(const ConvRegressorConfig& c) {
    return static_cast<std::size_t>(c.input_channels) * c.input_size * c.input_size;
}

template <typename T>
void im2col(const ConvDesc& d, const T* in, T* cols) {
    const int N = d.N();
    for (int c = 0; c < d.cin; ++c)
        for (int ky = 0; ky < d.k; ++ky)
            for (int kx = 0; kx < d.k; ++kx) {
                T* dst = cols + static_cast<std::size_t>((c * d.k + ky) * d.k + kx) * N;
                const T* src = in + static_cast<std::size_t>(c) * d.hin * d.win;
                for (int oy = 0; oy < d.hout; ++oy) {
                    const int iy = oy * d.stride - d.pad + ky;
                    T* row = dst + static_cast<std::size_t>(oy) * d.wout;
                    if (iy < 0 || iy >= d.hin) {
                        std::fill(row, row + d.wout, T(0));
                        continue;
                    }
                    for (int ox = 0; ox < d.wout; ++ox) {
                        const int ix = ox * d.stride - d.pad + kx;
                        row[ox] = (ix >= 0 && ix < d.win) ? src[static_cast<std::size_t>(iy) * d.win + ix] : T(0);
                    }
                }
            }
}

template <typename T>
void col2im_add(const ConvDesc& d, const T* cols, T* din) {
    const int N = d.N();
    for (int c = 0; c < d.cin; ++c)
        for (int ky = 0; ky < d.k; ++ky)
            for (int kx = 0; kx < d.k; ++kx) {
                const T* src = cols + static_cast<std::size_t>((c * d.k + ky) * d.k + kx) * N;
                T* dst = din + static_cast<std::size_t>(c) * d.hin * d.win;
                for (int oy = 0; oy < d.hout; ++oy) {
                    const int iy = oy * d.stride - d.pad + ky;
                    if (iy < 0 || iy >= d.hin) continue;
                    for (int ox = 0; ox < d.wout; ++ox) {
                        const int ix = ox * d.stride - d.pad + kx;
                        if (ix >= 0 && ix < d.win) dst[static_cast<std::size_t>(iy) * d.win + ix] += src[static_cast<std::size_t>(oy) * d.wout + ox];
                    }
                }
            }
}

template <typename T>
struct Scratch {
    Buf<T> cols, dcols, tmp, dtmp;
};

template <typename T>
void conv_forward(const ConvDesc& d, const T* in, const T* W, const T* b, T* out, Scratch<T>& s) {
    const int K = d.K(), N = d.N();
    s.cols.resize(static_cast<std::size_t>(K) * N);
    im2col(d, in, s.cols.data());
    Eigen::Map<const RowMat<T>> Wm(W, d.cout, K);
    Eigen::Map<const RowMat<T>> Cm(s.cols.data(), K, N);
    Eigen::Map<RowMat<T>> Om(out, d.cout, N);
    Om.noalias() = Wm * Cm;
    for (int o = 0; o < d.cout; ++o) Om.row(o).array() += b[o];
}

// Accumulates dW, db and (when din is set) din.
template <typename T>
void conv_backward(const ConvDesc& d, const T* in, const T* W, const T* dout, T* dW, T* db, T* din, Scratch<T>& s) {
    const int K = d.K(), N = d.N();
    s.cols.resize(static_cast<std::size_t>(K) * N);
    im2col(d, in, s.cols.data());
    Eigen::Map<const RowMat<T>> Wm(W, d.cout, K);
    Eigen::Map<const RowMat<T>> Cm(s.cols.data(), K, N);
    Eigen::Map<const RowMat<T>> Dm(dout, d.cout, N);
    Eigen::Map<RowMat<T>> dWm(dW, d.cout, K);
    dWm.noalias() += Dm * Cm.transpose();
    for (int o = 0; o < d.cout; ++o) db[o] += Dm.row(o).sum();
    if (din) {
        s.dcols.resize(static_cast<std::size_t>(K) * N);
        Eigen::Map<RowMat<T>> dC(s.dcols.data(), K, N);
        dC.noalias() = Wm.transpose() * Dm;
        col2im_add(d, s.dcols.data(), din);
    }
}

template <typename T>
void relu(Buf<T>& v) {
    for (auto& x : v) x = x > T(0) ? x : T(0);
}

template <typename T>
struct Cache {
    Buf<T> stem;
    std::vector<Buf<T>> h1, out;
    Buf<T> gap, emb, y;
    Scratch<T> scratch;
};

template <typename T>
using Params = std::vector<const T*>;

template <typename T>
void run_forward(const Arch& a, const Params<T>& P, const T* x, Cache<T>& c) {
    c.stem.resize(a.stem.out_size());
    conv_forward(a.stem, x, P[a.stem.w], P[a.stem.b], c.stem.data(), c.scratch);
    relu(c.stem);
    c.h1.resize(a.blocks.size());
    c.out.resize(a.blocks.size());
    const T* in = c.stem.data();
    for (std::size_t i = 0; i < a.blocks.size(); ++i) {
        const auto& b = a.blocks[i];
        c.h1[i].resize(b.c1.out_size());
        conv_forward(b.c1, in, P[b.c1.w], P[b.c1.b], c.h1[i].data(), c.scratch);
        relu(c.h1[i]);
        c.out[i].resize(b.c2.out_size());
        conv_forward(b.c2, c.h1[i].data(), P[b.c2.w], P[b.c2.b], c.out[i].data(), c.scratch);
        if (b.proj) {
            c.scratch.tmp.resize(b.p.out_size());
            conv_forward(b.p, in, P[b.p.w], P[b.p.b], c.scratch.tmp.data(), c.scratch);
            for (std::size_t k = 0; k < c.out[i].size(); ++k) c.out[i][k] += c.scratch.tmp[k];
        } else {
            for (std::size_t k = 0; k < c.out[i].size(); ++k) c.out[i][k] += in[k];
        }
        relu(c.out[i]);
        in = c.out[i].data();
    }
    const std::size_t hw = static_cast<std::size_t>(a.spatial) * a.spatial;
    c.gap.assign(static_cast<std::size_t>(a.feat), T(0));
    for (int ch = 0; ch < a.feat; ++ch) {
        T s = 0;
        for (std::size_t k = 0; k < hw; ++k) s += in[static_cast<std::size_t>(ch) * hw + k];
        c.gap[static_cast<std::size_t>(ch)] = s / static_cast<T>(hw);
    }
    Eigen::Map<const RowMat<T>> We(P[a.emb_w], a.E, a.feat);
    Eigen::Map<const Vec<T>> be(P[a.emb_b], a.E);
    Eigen::Map<const Vec<T>> g(c.gap.data(), a.feat);
    c.emb.resize(static_cast<std::size_t>(a.E));
    Eigen::Map<Vec<T>> e(c.emb.data(), a.E);
    e.noalias() = We * g + be;
    relu(c.emb);
    Eigen::Map<const RowMat<T>> Wh(P[a.head_w], a.E, a.O);
    Eigen::Map<const Vec<T>> bh(P[a.head_b], a.O);
    c.y.resize(static_cast<std::size_t>(a.O));
    Eigen::Map<Vec<T>> y(c.y.data(), a.O);
    y.noalias() = Wh.transpose() * e + bh;
}

template <typename T>
void run_backward(const Arch& a, const Params<T>& P, const T* x, Cache<T>& c, const T* dy,
                  std::vector<Buf<T>>& G) {
    Eigen::Map<const Vec<T>> dyv(dy, a.O);
    Eigen::Map<const Vec<T>> e(c.emb.data(), a.E);
    Eigen::Map<RowMat<T>>(G[a.head_w].data(), a.E, a.O).noalias() += e * dyv.transpose();
    Eigen::Map<Vec<T>>(G[a.head_b].data(), a.O) += dyv;
    Eigen::Map<const RowMat<T>> Wh(P[a.head_w], a.E, a.O);
    Vec<T> demb = Wh * dyv;
    for (int k = 0; k < a.E; ++k)
        if (!(c.emb[static_cast<std::size_t>(k)] > T(0))) demb(k) = T(0);
    Eigen::Map<const Vec<T>> g(c.gap.data(), a.feat);
    Eigen::Map<RowMat<T>>(G[a.emb_w].data(), a.E, a.feat).noalias() += demb * g.transpose();
    Eigen::Map<Vec<T>>(G[a.emb_b].data(), a.E) += demb;
    Eigen::Map<const RowMat<T>> We(P[a.emb_w], a.E, a.feat);
    const Vec<T> dgap = We.transpose() * demb;

    const std::size_t hw = static_cast<std::size_t>(a.spatial) * a.spatial;
    Buf<T> dout(static_cast<std::size_t>(a.feat) * hw);
    for (int ch = 0; ch < a.feat; ++ch)
        for (std::size_t k = 0; k < hw; ++k) dout[static_cast<std::size_t>(ch) * hw + k] = dgap(ch) / static_cast<T>(hw);

    Buf<T> dh1, din;
    for (std::size_t i = a.blocks.size(); i-- > 0;) {
        const auto& b = a.blocks[i];
        const T* in = i == 0 ? c.stem.data() : c.out[i - 1].data();
        for (std::size_t k = 0; k < dout.size(); ++k)
            if (!(c.out[i][k] > T(0))) dout[k] = T(0);
        dh1.assign(b.c1.out_size(), T(0));
        conv_backward(b.c2, c.h1[i].data(), P[b.c2.w], dout.data(), G[b.c2.w].data(), G[b.c2.b].data(), dh1.data(), c.scratch);
        for (std::size_t k = 0; k < dh1.size(); ++k)
            if (!(c.h1[i][k] > T(0))) dh1[k] = T(0);
        din.assign(b.c1.in_size(), T(0));
        conv_backward(b.c1, in, P[b.c1.w], dh1.data(), G[b.c1.w].data(), G[b.c1.b].data(), din.data(), c.scratch);
        if (b.proj) {
            conv_backward(b.p, in, P[b.p.w], dout.data(), G[b.p.w].data(), G[b.p.b].data(), din.data(), c.scratch);
        } else {
            for (std::size_t k = 0; k < din.size(); ++k) din[k] += dout[k];
        }
        std::swap(dout, din);
    }
    for (std::size_t k = 0; k < dout.size(); ++k)
        if (!(c.stem[k] > T(0))) dout[k] = T(0);
    conv_backward(a.stem, x, P[a.stem.w], dout.data(), G[a.stem.w].data(), G[a.stem.b].data(), static_cast<T*>(nullptr), c.scratch);
}

std::vector<Buf<float>> aligned_params(const ModelParams& p) {
    std::vector<Buf<float>> out;
    for (const auto& t : p.tensors) out.emplace_back(t.data.begin(), t.data.end());
    return out;
}

template <typename T>
Params<T> pointers_of(const std::vector<Buf<T>>& bufs) {
    Params<T> out;
    for (const auto& b : bufs) out.push_back(b.data());
    return out;
}

template <typename T>
std::vector<Buf<T>> zero_like(const Arch& a) {
    std::vector<Buf<T>> g;
    for (const auto& [name, shape] : a.tensors) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        g.emplace_back(n, T(0));
    }
    return g;
}

void check_input(const ConvRegressorConfig& cfg, std::span<const float> input) {
    if (input.size() != input_size(cfg))
        throw SchemaError("input tensor has " + std::to_string(input.size()) + " values, model expects " + std::to_string(input_size(cfg)));
}

std::uint64_t fnv(std::uint64_t h, const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t string_key(std::string_view s) { return fnv(0xcbf29ce484222325ULL, s.data(), s.size()); }

}  // namespace

void ConvRegressorConfig::validate() const {
    if (input_size <= 0 || input_channels <= 0 || stem_kernel <= 0) throw SchemaError("model config: sizes must be positive");
    if (input_size % stem_kernel != 0) throw SchemaError("model config: input size must be a multiple of the stem kernel");
    if (block_widths.empty()) throw SchemaError("model config: at least one stage is required");
    for (int w : block_widths)
        if (w <= 0) throw SchemaError("model config: stage widths must be positive");
    if (blocks_per_stage <= 0) throw SchemaError("model config: blocks per stage must be positive");
    if (embedding_dim <= 0) throw SchemaError("model config: embedding dim must be positive");
    if (output_dim <= 0) throw SchemaError("model config: output dim must be positive");
}

nlohmann::ordered_json ConvRegressorConfig::to_json() const {
    nlohmann::ordered_json j;
    j["input_size"] = input_size;
    j["input_channels"] = input_channels;
    j["stem_kernel"] = stem_kernel;
    j["block_widths"] = block_widths;
    j["blocks_per_stage"] = blocks_per_stage;
    j["embedding_dim"] = embedding_dim;
    j["output_dim"] = output_dim;
    j["seed"] = seed;
    return j;
}

ConvRegressorConfig ConvRegressorConfig::from_json(const nlohmann::json& j) {
    ConvRegressorConfig c;
    try {
        c.input_size = j.at("input_size").get<int>();
        c.input_channels = j.at("input_channels").get<int>();
        c.stem_kernel = j.at("stem_kernel").get<int>();
        c.block_widths = j.at("block_widths").get<std::vector<int>>();
        c.blocks_per_stage = j.at("blocks_per_stage").get<int>();
        c.embedding_dim = j.at("embedding_dim").get<int>();
        c.output_dim = j.at("output_dim").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

ConvRegressorConfig ConvRegressorConfig::tiny() {
    ConvRegressorConfig c;
    c.input_size = 8;
    c.stem_kernel = 2;
    c.block_widths = {2, 3};
    c.embedding_dim = 4;
    c.output_dim = 2;
    return c;
}

const ParamTensor& ModelParams::get(std::string_view name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t;
    throw SchemaError("model has no parameter '" + std::string(name) + "'");
}

ParamTensor& ModelParams::get(std::string_view name) {
    return const_cast<ParamTensor&>(static_cast<const ModelParams&>(*this).get(name));
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.data.size();
    return n;
}

bool ModelParams::all_finite() const {
    for (const auto& t : tensors)
        for (float v : t.data)
            if (!std::isfinite(v)) return false;
    return true;
}

std::uint64_t ModelParams::checksum(std::string_view prefix) const {
    const bool exclude = !prefix.empty() && prefix.front() == '!';
    const std::string_view p = exclude ? prefix.substr(1) : prefix;
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : tensors) {
        const bool match = t.name.compare(0, p.size(), p) == 0;
        if (exclude == match) continue;
        h = fnv(h, t.name.data(), t.name.size());
        h = fnv(h, t.shape.data(), t.shape.size() * sizeof(int));
        h = fnv(h, t.data.data(), t.data.size() * sizeof(float));
    }
    return h;
}

ModelParams init_params(const ConvRegressorConfig& config) {
    const Arch a = build_arch(config);
    ModelParams p;
    p.config = config;
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        const auto& [name, shape] = a.tensors[i];
        ParamTensor t{name, shape, {}};
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        t.data.assign(n, 0.0f);
        Rng rng(derive_seed(config.seed, {string_key(name)}));
        const bool is_bias = name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0;
        double bound = 0.0;
        if (name.rfind("head.", 0) == 0) {
            bound = 1.0 / std::sqrt(static_cast<double>(a.E));
        } else if (!is_bias) {
            std::size_t fan_in = 1;
            for (std::size_t k = 1; k < shape.size(); ++k) fan_in *= static_cast<std::size_t>(shape[k]);
            bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        }
        if (bound > 0.0)
            for (auto& v : t.data) v = static_cast<float>(uniform(rng, -bound, bound));
        p.tensors.push_back(std::move(t));
    }
    return p;
}

std::vector<float> to_tensor(const RasterGrid& tile, const BandStats* stats) {
    if (stats && tile.bands() != stats->bands) throw SchemaError("tile bands do not match the normalization statistics");
    std::vector<float> out(tile.pixels().size());
    const std::size_t n = tile.pixel_count();
    for (int b = 0; b < tile.band_count(); ++b) {
        const auto px = tile.band(b);
        float* dst = out.data() + static_cast<std::size_t>(b) * n;
        if (!stats) {
            std::copy(px.begin(), px.end(), dst);
            continue;
        }
        const double m = stats->mean[static_cast<std::size_t>(b)], s = stats->stddev[static_cast<std::size_t>(b)];
        for (std::size_t i = 0; i < n; ++i) dst[i] = (s == 0.0 || !tile.valid(i)) ? 0.0f : static_cast<float>((px[i] - m) / s);
    }
    return out;
}

std::vector<double> forward(const ModelParams& params, std::span<const float> input) {
    const Arch a = build_arch(params.config);
    check_params(a, params);
    check_input(params.config, input);
    Cache<float> c;
    run_forward(a, pointers_of(aligned_params(params)), input.data(), c);
    return {c.y.begin(), c.y.end()};
}

std::vector<double> embed(const ModelParams& params, std::span<const float> input) {
    const Arch a = build_arch(params.config);
    check_params(a, params);
    check_input(params.config, input);
    Cache<float> c;
    run_forward(a, pointers_of(aligned_params(params)), input.data(), c);
    return {c.emb.begin(), c.emb.end()};
}

namespace {
std::vector<float> tile_input(const ModelParams& params, const RasterGrid& tile) {
    if (tile.width() != params.config.input_size || tile.height() != params.config.input_size ||
        tile.band_count() != params.config.input_channels)
        throw SchemaError("tile shape does not match the model input");
    return to_tensor(tile, params.band_stats ? &*params.band_stats : nullptr);
}
}  // namespace

std::vector<double> predict(const ModelParams& params, const RasterGrid& tile) { return forward(params, tile_input(params, tile)); }

std::vector<double> embed_tile(const ModelParams& params, const RasterGrid& tile) { return embed(params, tile_input(params, tile)); }

void TrainSpec::validate() const {
    if (!(learning_rate > 0.0)) throw InputError("train spec: learning rate must be positive");
    if (batch_size <= 0) throw InputError("train spec: batch size must be positive");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InputError("train spec: train fraction must lie in (0, 1)");
    if (max_epochs < 0) throw InputError("train spec: max epochs must be nonnegative");
    if (patience <= 0) throw InputError("train spec: patience must be positive");
    if (threads <= 0) throw InputError("train spec: threads must be positive");
}

nlohmann::ordered_json TrainSpec::to_json() const {
    nlohmann::ordered_json j;
    j["learning_rate"] = learning_rate;
    j["batch_size"] = batch_size;
    j["train_fraction"] = train_fraction;
    j["max_epochs"] = max_epochs;
    j["patience"] = patience;
    j["seed"] = seed;
    j["loss"] = "mse";
    return j;
}

TrainSpec TrainSpec::from_json(const nlohmann::json& j) {
    TrainSpec s;
    s.learning_rate = j.value("learning_rate", s.learning_rate);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.train_fraction = j.value("train_fraction", s.train_fraction);
    s.max_epochs = j.value("max_epochs", s.max_epochs);
    s.patience = j.value("patience", s.patience);
    s.seed = j.value("seed", s.seed);
    s.validate();
    return s;
}

Split stratified_split(std::span<const std::string> strata, double train_fraction, std::uint64_t seed) {
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < strata.size(); ++i) groups[strata[i]].push_back(i);
    Split s;
    for (auto& [name, idx] : groups) {
        Rng rng(derive_seed(seed, {string_key(name)}));
        std::shuffle(idx.begin(), idx.end(), rng);
        auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
        n_train = std::clamp<std::size_t>(n_train, 1, idx.size());
        s.train.insert(s.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
        s.val.insert(s.val.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.val.begin(), s.val.end());
    return s;
}

TrainResult train(const Dataset& data, const TrainSpec& spec, const ModelParams& init) {
    spec.validate();
    const Arch a = build_arch(init.config);
    check_params(a, init);
    const std::size_t n = data.tiles.size();
    const auto O = static_cast<std::size_t>(a.O);
    if (n < 2) throw InputError("train: need at least two samples");
    if (data.targets.size() != n) throw InputError("train: tile and target counts differ");
    for (const auto& t : data.targets) {
        if (t.size() != O) throw InputError("train: target length does not match the model output");
        for (double v : t)
            if (!std::isfinite(v)) throw InputError("train: targets must be finite");
    }
    for (const auto& tile : data.tiles)
        if (tile.width() != init.config.input_size || tile.height() != init.config.input_size ||
            tile.band_count() != init.config.input_channels)
            throw SchemaError("train: tile shape does not match the model input");
    std::vector<std::string> strata = data.strata;
    if (strata.empty()) strata.assign(n, "all");
    if (strata.size() != n) throw InputError("train: strata length differs from the dataset");

    TrainResult result;
    result.split = stratified_split(strata, spec.train_fraction, spec.seed);
    const auto& tr = result.split.train;
    const auto& va = result.split.val;
    if (va.empty()) throw InputError("train: validation split is empty");

    BandStatsAccumulator acc;
    for (auto i : tr) acc.add(data.tiles[i]);
    const BandStats stats = acc.result();

    std::vector<double> mu(O, 0.0), sd(O, 0.0);
    for (auto i : tr)
        for (std::size_t o = 0; o < O; ++o) mu[o] += data.targets[i][o];
    for (auto& m : mu) m /= static_cast<double>(tr.size());
    for (auto i : tr)
        for (std::size_t o = 0; o < O; ++o) sd[o] += (data.targets[i][o] - mu[o]) * (data.targets[i][o] - mu[o]);
    for (auto& s : sd) {
        s = std::sqrt(s / static_cast<double>(tr.size()));
        if (s < 1e-8) s = 1.0;
    }
    result.mean_predictor_val_mse = 0.0;
    for (auto i : va)
        for (std::size_t o = 0; o < O; ++o) result.mean_predictor_val_mse += (data.targets[i][o] - mu[o]) * (data.targets[i][o] - mu[o]);
    result.mean_predictor_val_mse /= static_cast<double>(va.size() * O);

    std::vector<Buf<float>> P = aligned_params(init);
    auto pointers = [&]() { return pointers_of(P); };
    auto M = zero_like<float>(a), V = zero_like<float>(a);
    const auto B = static_cast<std::size_t>(spec.batch_size);
    std::vector<std::vector<Buf<float>>> per_sample(std::min(B, tr.size()));
    for (auto& g : per_sample) g = zero_like<float>(a);
    std::vector<double> sample_loss(per_sample.size());
    const float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
    const auto lr = static_cast<float>(spec.learning_rate);
    std::int64_t step = 0;

    auto validation_mse = [&](const Params<float>& ptr) {
        std::vector<double> err(va.size());
        parallel_for(va.size(), spec.threads, [&](std::size_t j) {
            const auto x = to_tensor(data.tiles[va[j]], &stats);
            Cache<float> c;
            run_forward(a, ptr, x.data(), c);
            double e = 0.0;
            for (std::size_t o = 0; o < O; ++o) {
                const double pred = mu[o] + sd[o] * c.y[o];
                e += (pred - data.targets[va[j]][o]) * (pred - data.targets[va[j]][o]);
            }
            err[j] = e;
        });
        double s = 0.0;
        for (double e : err) s += e;
        return s / static_cast<double>(va.size() * O);
    };

    std::vector<Buf<float>> best = P;
    result.best_epoch = 0;
    result.best_val_mse = validation_mse(pointers());
    int since_best = 0;
    for (int epoch = 1; epoch <= spec.max_epochs; ++epoch) {
        std::vector<std::size_t> order = tr;
        Rng rng(derive_seed(spec.seed, {0xe90c, static_cast<std::uint64_t>(epoch)}));
        std::shuffle(order.begin(), order.end(), rng);
        double train_sum = 0.0;
        std::vector<double> sample_orig(per_sample.size());
        std::size_t batch = 0;
        for (std::size_t start = 0; start < order.size(); start += B, ++batch) {
            const std::size_t bs = std::min(B, order.size() - start);
            const Params<float> ptr = pointers();
            parallel_for(bs, spec.threads, [&](std::size_t j) {
                const std::size_t i = order[start + j];
                const auto x = to_tensor(data.tiles[i], &stats);
                Cache<float> c;
                run_forward(a, ptr, x.data(), c);
                Buf<float> dy(O);
                double loss = 0.0, orig = 0.0;
                for (std::size_t o = 0; o < O; ++o) {
                    const double ts = (data.targets[i][o] - mu[o]) / sd[o];
                    const double r = static_cast<double>(c.y[o]) - ts;
                    loss += r * r;
                    orig += r * r * sd[o] * sd[o];
                    dy[o] = static_cast<float>(2.0 * r / static_cast<double>(bs * O));
                }
                sample_loss[j] = loss;
                sample_orig[j] = orig;
                for (auto& g : per_sample[j]) std::fill(g.begin(), g.end(), 0.0f);
                run_backward(a, ptr, x.data(), c, dy.data(), per_sample[j]);
            });
            double batch_loss = 0.0;
            for (std::size_t j = 0; j < bs; ++j) {
                batch_loss += sample_loss[j];
                train_sum += sample_orig[j];
            }
            batch_loss /= static_cast<double>(bs * O);
            if (!std::isfinite(batch_loss))
                throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                                     " (first sample index " + std::to_string(order[start]) + ")");
            ++step;
            const float c1 = 1.0f - std::pow(b1, static_cast<float>(step));
            const float c2 = 1.0f - std::pow(b2, static_cast<float>(step));
            for (std::size_t t = 0; t < P.size(); ++t) {
                auto& p = P[t];
                auto& m = M[t];
                auto& v = V[t];
                for (std::size_t k = 0; k < p.size(); ++k) {
                    float g = 0.0f;
                    for (std::size_t j = 0; j < bs; ++j) g += per_sample[j][t][k];
                    m[k] = b1 * m[k] + (1.0f - b1) * g;
                    v[k] = b2 * v[k] + (1.0f - b2) * g * g;
                    p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
                }
            }
        }
        const double val = validation_mse(pointers());
        const double train_mse = train_sum / static_cast<double>(tr.size() * O);
        if (!std::isfinite(val)) throw NumericalError("non-finite validation loss after epoch " + std::to_string(epoch));
        result.history.push_back({epoch, train_mse, val});
        log::debug("train", "epoch=", epoch, " train_mse=", train_mse, " val_mse=", val);
        if (val < result.best_val_mse) {
            result.best_val_mse = val;
            result.best_epoch = epoch;
            best = P;
            since_best = 0;
        } else if (++since_best >= spec.patience) {
            log::info("train", "early stop at epoch ", epoch, "; best epoch ", result.best_epoch);
            break;
        }
    }

    result.params = init;
    for (std::size_t t = 0; t < best.size(); ++t) result.params.tensors[t].data.assign(best[t].begin(), best[t].end());
    auto& hw = result.params.tensors[a.head_w].data;
    auto& hb = result.params.tensors[a.head_b].data;
    for (int e = 0; e < a.E; ++e)
        for (std::size_t o = 0; o < O; ++o) hw[static_cast<std::size_t>(e) * O + o] = static_cast<float>(hw[static_cast<std::size_t>(e) * O + o] * sd[o]);
    for (std::size_t o = 0; o < O; ++o) hb[o] = static_cast<float>(hb[o] * sd[o] + mu[o]);
    result.params.band_stats = stats;
    if (!result.params.all_finite()) throw NumericalError("training produced non-finite parameters");
    if (!result.beats_mean_predictor())
        log::warn("train", "validation MSE ", result.best_val_mse, " does not beat the mean predictor (", result.mean_predictor_val_mse, "); run flagged failed");
    log::info("train", "samples train=", tr.size(), " val=", va.size(), " best_epoch=", result.best_epoch, " val_mse=", result.best_val_mse,
              " mean_predictor_mse=", result.mean_predictor_val_mse);
    return result;
}

void write_history(const std::filesystem::path& path, std::span<const EpochRecord> history) {
    csv::Table t;
    t.header = {"epoch", "train_mse", "val_mse"};
    for (const auto& h : history) t.rows.push_back({std::to_string(h.epoch), csv::format_number(h.train_mse), csv::format_number(h.val_mse)});
    csv::write(path, t);
}

ModelParams replace_head(const ModelParams& params, int output_dim, std::uint64_t seed) {
    if (output_dim <= 0) throw InputError("replace_head: output dim must be positive");
    ModelParams out = params;
    out.config.output_dim = output_dim;
    const Arch a = build_arch(out.config);
    const double bound = 1.0 / std::sqrt(static_cast<double>(a.E));
    Rng rng(derive_seed(seed, {string_key("head")}));
    auto& w = out.tensors[a.head_w];
    auto& b = out.tensors[a.head_b];
    w.shape = {a.E, output_dim};
    b.shape = {output_dim};
    w.data.resize(static_cast<std::size_t>(a.E) * static_cast<std::size_t>(output_dim));
    b.data.resize(static_cast<std::size_t>(output_dim));
    for (auto& v : w.data) v = static_cast<float>(uniform(rng, -bound, bound));
    for (auto& v : b.data) v = static_cast<float>(uniform(rng, -bound, bound));
    check_params(a, out);
    return out;
}

double grad_check(const ModelParams& params, std::span<const float> input, std::span<const double> target,
                  const GradCheckOptions& options) {
    const Arch a = build_arch(params.config);
    check_params(a, params);
    check_input(params.config, input);
    if (target.size() != static_cast<std::size_t>(a.O)) throw InputError("grad_check: target length does not match the model output");
    std::vector<Buf<double>> P;
    for (const auto& t : params.tensors) P.emplace_back(t.data.begin(), t.data.end());
    const Buf<double> x(input.begin(), input.end());
    auto pointers = [&]() { return pointers_of(P); };
    auto loss = [&]() {
        Cache<double> c;
        run_forward(a, pointers(), x.data(), c);
        double l = 0.0;
        for (std::size_t o = 0; o < target.size(); ++o) l += 0.5 * (c.y[o] - target[o]) * (c.y[o] - target[o]);
        return l;
    };
    Cache<double> c;
    run_forward(a, pointers(), x.data(), c);
    Buf<double> dy(target.size());
    for (std::size_t o = 0; o < target.size(); ++o) dy[o] = c.y[o] - target[o];
    auto G = zero_like<double>(a);
    run_backward(a, pointers(), x.data(), c, dy.data(), G);

    std::vector<std::pair<std::size_t, std::size_t>> candidates;
    for (std::size_t t = 0; t < P.size(); ++t) {
        if (options.filter && !options.filter(params.tensors[t].name)) continue;
        for (std::size_t k = 0; k < P[t].size(); ++k) candidates.emplace_back(t, k);
    }
    if (candidates.empty()) throw InputError("grad_check: filter selects no parameters");
    Rng rng(options.seed);
    const std::size_t m = std::min(options.max_params, candidates.size());
    for (std::size_t i = 0; i < m; ++i) {
        const auto j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(candidates.size() - i));
        std::swap(candidates[i], candidates[std::min(j, candidates.size() - 1)]);
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const auto [t, k] = candidates[i];
        const double saved = P[t][k];
        P[t][k] = saved + options.epsilon;
        const double lp = loss();
        P[t][k] = saved - options.epsilon;
        const double lm = loss();
        P[t][k] = saved;
        const double numeric = (lp - lm) / (2.0 * options.epsilon);
        const double analytic = G[t][k] * (1.0 + options.corrupt);
        const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        worst = std::max(worst, err);
    }
    return worst;
}

void NightlightGrid::validate() const {
    if (width <= 0 || height <= 0) throw SchemaError("nightlight grid must be nonempty");
    if (!(cell_deg > 0.0)) throw SchemaError("nightlight cell size must be positive");
    if (values.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
        throw SchemaError("nightlight value count does not match the grid");
    for (auto v : values)
        if (v > kNightlightMax) throw SchemaError("nightlight values must lie in [0, 63]");
}

RasterGrid NightlightGrid::to_raster() const {
    validate();
    RasterGrid g(width, height, {"nightlight"}, cell_deg, origin_lon, origin_lat);
    for (std::size_t i = 0; i < values.size(); ++i) g.pixels()[i] = static_cast<float>(values[i]);
    return g;
}

NightlightGrid NightlightGrid::from_raster(const RasterGrid& grid) {
    if (grid.band_count() != 1) throw SchemaError("nightlight raster must have exactly one band");
    NightlightGrid n;
    n.origin_lon = grid.origin_x();
    n.origin_lat = grid.origin_y();
    n.cell_deg = grid.pixel_size();
    n.width = grid.width();
    n.height = grid.height();
    n.values.resize(grid.pixel_count());
    const auto px = grid.band(0);
    for (std::size_t i = 0; i < px.size(); ++i) {
        const float v = px[i];
        if (!(v >= 0.0f && v <= static_cast<float>(kNightlightMax)) || v != std::floor(v))
            throw SchemaError("nightlight cell " + std::to_string(i) + " is not an integer in [0, 63]");
        n.values[i] = static_cast<std::uint8_t>(v);
    }
    return n;
}

double sample_nightlight(const NightlightGrid& grid, LatLon centroid, double side) {
    grid.validate();
    const double west = grid.origin_lon, north = grid.origin_lat;
    const double east = west + grid.width * grid.cell_deg, south = north - grid.height * grid.cell_deg;
    if (!(centroid.lon >= west && centroid.lon < east && centroid.lat > south && centroid.lat <= north))
        throw CoverageError("village centroid lies outside the nightlight grid");
    const double half_lat = 0.5 * side / kMetersPerDegree;
    const double half_lon = 0.5 * side / (kMetersPerDegree * std::cos(centroid.lat * std::numbers::pi / 180.0));
    const double x0 = std::max(centroid.lon - half_lon, west), x1 = std::min(centroid.lon + half_lon, east);
    const double y0 = std::max(centroid.lat - half_lat, south), y1 = std::min(centroid.lat + half_lat, north);
    const int c0 = std::max(0, static_cast<int>(std::floor((x0 - west) / grid.cell_deg)));
    const int c1 = std::min(grid.width - 1, static_cast<int>(std::floor((x1 - west) / grid.cell_deg)));
    const int r0 = std::max(0, static_cast<int>(std::floor((north - y1) / grid.cell_deg)));
    const int r1 = std::min(grid.height - 1, static_cast<int>(std::floor((north - y0) / grid.cell_deg)));
    double sw = 0.0, sv = 0.0;
    for (int r = r0; r <= r1; ++r) {
        const double top = north - r * grid.cell_deg, bottom = top - grid.cell_deg;
        const double oy = std::min(top, y1) - std::max(bottom, y0);
        if (oy <= 0.0) continue;
        for (int c = c0; c <= c1; ++c) {
            const double left = west + c * grid.cell_deg, right = left + grid.cell_deg;
            const double ox = std::min(right, x1) - std::max(left, x0);
            if (ox <= 0.0) continue;
            sw += ox * oy;
            sv += ox * oy * grid.at(r, c);
        }
    }
    if (!(sw > 0.0)) throw CoverageError("village footprint does not overlap the nightlight grid");
    return sv / sw;
}

TrainResult train_nightlight_baseline(std::span<const RasterGrid> tiles, std::span<const double> nightlight,
                                      std::vector<std::string> strata, const TrainSpec& spec,
                                      ConvRegressorConfig config) {
    if (tiles.size() != nightlight.size()) throw InputError("nightlight baseline: tile and target counts differ");
    config.output_dim = 1;
    Dataset d;
    d.tiles = tiles;
    d.strata = std::move(strata);
    for (double v : nightlight) d.targets.push_back({v});
    return train(d, spec, init_params(config));
}

double predict_nightlight(const ModelParams& params, const RasterGrid& tile) {
    if (params.config.output_dim != 1) throw SchemaError("nightlight model must have a single output");
    return std::clamp(predict(params, tile)[0], 0.0, static_cast<double>(kNightlightMax));
}

Checkpoint to_checkpoint(const ModelParams& params, const TrainSpec* spec) {
    Checkpoint ck;
    ck.header["format"] = "conv-regressor";
    ck.header["config"] = params.config.to_json();
    if (spec) ck.header["train_spec"] = spec->to_json();
    if (params.band_stats) {
        nlohmann::ordered_json s;
        s["bands"] = params.band_stats->bands;
        s["mean"] = params.band_stats->mean;
        s["stddev"] = params.band_stats->stddev;
        ck.header["band_stats"] = s;
    }
    for (const auto& t : params.tensors) {
        CheckpointEntry e;
        e.name = t.name;
        for (int d : t.shape) e.shape.push_back(static_cast<std::uint32_t>(d));
        e.data = t.data;
        ck.entries.push_back(std::move(e));
    }
    return ck;
}

ModelParams from_checkpoint(const Checkpoint& ck) {
    if (ck.header.value("format", std::string()) != "conv-regressor") throw SchemaError("checkpoint does not hold a conv regressor");
    ModelParams p;
    p.config = ConvRegressorConfig::from_json(ck.header.at("config"));
    if (ck.header.contains("band_stats")) {
        const auto& s = ck.header.at("band_stats");
        BandStats b;
        b.bands = s.at("bands").get<std::vector<std::string>>();
        b.mean = s.at("mean").get<std::vector<double>>();
        b.stddev = s.at("stddev").get<std::vector<double>>();
        if (b.mean.size() != b.bands.size() || b.stddev.size() != b.bands.size()) throw SchemaError("checkpoint band stats are inconsistent");
        p.band_stats = b;
    }
    for (const auto& e : ck.entries) {
        ParamTensor t;
        t.name = e.name;
        for (auto d : e.shape) t.shape.push_back(static_cast<int>(d));
        t.data = e.data;
        p.tensors.push_back(std::move(t));
    }
    check_params(build_arch(p.config), p);
    return p;
}

}  // namespace geoproxy::nn
