#include "fewshot/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fewshot/rng.hpp"

namespace fewshot {

namespace {

void check_per_class(const ParamSet& p, const char* who) {
    if (p.head_mode != HeadMode::per_class) {
        throw std::logic_error(std::string(who) +
                               ": shared head must be expanded with duplicate_head first");
    }
}

void check_input(const ParamSet& p, std::span<const double> x) {
    if (x.size() != p.input_dim) {
        throw std::invalid_argument("input length does not match the network input dim");
    }
}

// Forward pass keeping pre-activations and activations for the backward pass.
struct ForwardTrace {
    std::vector<std::vector<double>> pre;   // z_l per layer
    std::vector<std::vector<double>> post;  // activation fed into layer l+1
    std::vector<double> feature;
};

ForwardTrace forward_trace(const ParamSet& p, std::span<const double> x) {
    ForwardTrace t;
    std::vector<double> cur(x.begin(), x.end());
    const std::size_t layers = p.encoder.size();
    t.pre.reserve(layers);
    t.post.reserve(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        const AffineLayer& layer = p.encoder[l];
        std::vector<double> z(layer.weight.rows);
        for (std::size_t r = 0; r < layer.weight.rows; ++r) {
            double acc = layer.bias[r];
            const double* w = layer.weight.data.data() + r * layer.weight.cols;
            for (std::size_t c = 0; c < layer.weight.cols; ++c) acc += w[c] * cur[c];
            z[r] = acc;
        }
        t.pre.push_back(z);
        if (l + 1 < layers) {
            for (double& v : z) v = v > 0.0 ? v : 0.0;  // ReLU between layers only
        }
        t.post.push_back(z);
        cur = std::move(z);
    }
    t.feature = std::move(cur);
    return t;
}

}  // namespace

bool congruent(const ParamSet& a, const ParamSet& b) {
    if (a.input_dim != b.input_dim || a.head_mode != b.head_mode) return false;
    if (a.encoder.size() != b.encoder.size()) return false;
    for (std::size_t l = 0; l < a.encoder.size(); ++l) {
        if (a.encoder[l].weight.rows != b.encoder[l].weight.rows ||
            a.encoder[l].weight.cols != b.encoder[l].weight.cols ||
            a.encoder[l].bias.size() != b.encoder[l].bias.size()) {
            return false;
        }
    }
    return a.heads.rows == b.heads.rows && a.heads.cols == b.heads.cols;
}

std::vector<double*> param_coords(ParamSet& p) {
    std::vector<double*> out;
    for (AffineLayer& l : p.encoder) {
        for (double& v : l.weight.data) out.push_back(&v);
        for (double& v : l.bias) out.push_back(&v);
    }
    for (double& v : p.heads.data) out.push_back(&v);
    return out;
}

std::vector<const double*> param_coords(const ParamSet& p) {
    std::vector<const double*> out;
    for (const AffineLayer& l : p.encoder) {
        for (const double& v : l.weight.data) out.push_back(&v);
        for (const double& v : l.bias) out.push_back(&v);
    }
    for (const double& v : p.heads.data) out.push_back(&v);
    return out;
}

std::vector<double> encode(const ParamSet& p, std::span<const double> x) {
    check_input(p, x);
    return forward_trace(p, x).feature;
}

std::vector<double> forward_logits(const ParamSet& p, std::span<const double> x) {
    check_per_class(p, "forward_logits");
    check_input(p, x);
    const std::vector<double> f = forward_trace(p, x).feature;
    if (f.size() != p.heads.cols) {
        throw std::invalid_argument("feature length does not match head width");
    }
    std::vector<double> logits(p.heads.rows);
    for (std::size_t c = 0; c < p.heads.rows; ++c) {
        double acc = 0.0;
        const double* w = p.heads.data.data() + c * p.heads.cols;
        for (std::size_t d = 0; d < p.heads.cols; ++d) acc += w[d] * f[d];
        logits[c] = acc;
    }
    return logits;
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("softmax over empty logits");
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
}

std::vector<double> softmax_probs(const ParamSet& p, std::span<const double> x) {
    const std::vector<double> logits = forward_logits(p, x);
    return softmax(logits);
}

int predict(const ParamSet& p, std::span<const double> x) {
    const std::vector<double> logits = forward_logits(p, x);
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.size(); ++c) {
        if (logits[c] > logits[best]) best = c;  // strict: ties keep the smaller index
    }
    return static_cast<int>(best) + 1;
}

double batch_accuracy(const ParamSet& p, std::span<const Example> batch) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    std::size_t hits = 0;
    for (const Example& e : batch) {
        if (predict(p, e.x) == e.y) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(batch.size());
}

LossGrad batch_loss_and_grad(const ParamSet& p, std::span<const Example> batch) {
    check_per_class(p, "batch_loss_and_grad");
    if (batch.empty()) throw std::invalid_argument("empty batch");
    const std::size_t n_class = p.heads.rows;
    const std::size_t feat = p.heads.cols;

    LossGrad out;
    out.grad.input_dim = p.input_dim;
    out.grad.head_mode = p.head_mode;
    out.grad.encoder.resize(p.encoder.size());
    for (std::size_t l = 0; l < p.encoder.size(); ++l) {
        out.grad.encoder[l].weight =
            Matrix(p.encoder[l].weight.rows, p.encoder[l].weight.cols);
        out.grad.encoder[l].bias.assign(p.encoder[l].bias.size(), 0.0);
    }
    out.grad.heads = Matrix(n_class, feat);

    for (const Example& e : batch) {
        if (e.y < 1 || static_cast<std::size_t>(e.y) > n_class) {
            throw std::invalid_argument("label out of range for the head count");
        }
        check_input(p, e.x);
        ForwardTrace t = forward_trace(p, e.x);
        if (t.feature.size() != feat) {
            throw std::invalid_argument("feature length does not match head width");
        }

        std::vector<double> logits(n_class);
        for (std::size_t c = 0; c < n_class; ++c) {
            double acc = 0.0;
            const double* w = p.heads.data.data() + c * feat;
            for (std::size_t d = 0; d < feat; ++d) acc += w[d] * t.feature[d];
            logits[c] = acc;
        }

        // loss = logsumexp(logits) - logits[y], computed with max subtraction
        const double m = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double v : logits) z += std::exp(v - m);
        const std::size_t y = static_cast<std::size_t>(e.y - 1);
        out.loss += std::log(z) - (logits[y] - m);

        std::vector<double> dlogits(n_class);
        for (std::size_t c = 0; c < n_class; ++c) dlogits[c] = std::exp(logits[c] - m) / z;
        dlogits[y] -= 1.0;

        // heads: dW_c += dlogits[c] * feature; feature: df = heads^T dlogits
        std::vector<double> df(feat, 0.0);
        for (std::size_t c = 0; c < n_class; ++c) {
            double* gw = out.grad.heads.data.data() + c * feat;
            const double* w = p.heads.data.data() + c * feat;
            const double dl = dlogits[c];
            for (std::size_t d = 0; d < feat; ++d) {
                gw[d] += dl * t.feature[d];
                df[d] += w[d] * dl;
            }
        }

        // Back through the encoder. No ReLU behind the last affine layer.
        std::vector<double> dz = std::move(df);
        for (std::size_t li = p.encoder.size(); li-- > 0;) {
            const AffineLayer& layer = p.encoder[li];
            AffineLayer& glayer = out.grad.encoder[li];
            if (li + 1 < p.encoder.size()) {
                // dz currently holds d(post-activation); gate by ReLU'
                for (std::size_t r = 0; r < dz.size(); ++r) {
                    if (t.pre[li][r] <= 0.0) dz[r] = 0.0;
                }
            }
            const std::vector<double>& input =
                li == 0 ? e.x : t.post[li - 1];
            for (std::size_t r = 0; r < layer.weight.rows; ++r) {
                double* gw = glayer.weight.data.data() + r * layer.weight.cols;
                const double d = dz[r];
                for (std::size_t c = 0; c < layer.weight.cols; ++c) gw[c] += d * input[c];
                glayer.bias[r] += d;
            }
            if (li > 0) {
                std::vector<double> dprev(layer.weight.cols, 0.0);
                for (std::size_t r = 0; r < layer.weight.rows; ++r) {
                    const double d = dz[r];
                    const double* w = layer.weight.data.data() + r * layer.weight.cols;
                    for (std::size_t c = 0; c < layer.weight.cols; ++c) dprev[c] += w[c] * d;
                }
                dz = std::move(dprev);
            }
        }
    }
    return out;
}

double batch_loss(const ParamSet& p, std::span<const Example> batch) {
    check_per_class(p, "batch_loss");
    if (batch.empty()) throw std::invalid_argument("empty batch");
    double loss = 0.0;
    for (const Example& e : batch) {
        if (e.y < 1 || static_cast<std::size_t>(e.y) > p.heads.rows) {
            throw std::invalid_argument("label out of range for the head count");
        }
        const std::vector<double> logits = forward_logits(p, e.x);
        const double m = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double v : logits) z += std::exp(v - m);
        loss += std::log(z) - (logits[static_cast<std::size_t>(e.y - 1)] - m);
    }
    return loss;
}

double grad_check(const ParamSet& p, std::span<const Example> batch, double epsilon) {
    if (epsilon < 1e-7 || epsilon > 1e-3) {
        throw std::invalid_argument("epsilon out of the supported [1e-7, 1e-3] range");
    }
    const LossGrad analytic = batch_loss_and_grad(p, batch);
    ParamSet work = p;
    std::vector<double*> coords = param_coords(work);
    std::vector<const double*> gcoords = param_coords(analytic.grad);
    if (coords.size() != gcoords.size()) throw std::logic_error("coordinate count mismatch");

    double worst = 0.0;
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const double orig = *coords[i];
        *coords[i] = orig + epsilon;
        const double up = batch_loss(work, batch);
        *coords[i] = orig - epsilon;
        const double down = batch_loss(work, batch);
        *coords[i] = orig;
        const double numeric = (up - down) / (2.0 * epsilon);
        const double err = std::abs(*gcoords[i] - numeric) / std::max(1.0, std::abs(numeric));
        worst = std::max(worst, err);
    }
    return worst;
}

OuterOptimizer make_outer_optimizer(const ParamSet& params, double lr_encoder, double lr_heads,
                                    double momentum, double weight_decay, int decay_epochs) {
    if (lr_encoder < 0.0 || lr_heads < 0.0) throw std::invalid_argument("negative learning rate");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum out of [0, 1)");
    if (weight_decay < 0.0) throw std::invalid_argument("negative weight decay");
    if (decay_epochs < 1) throw std::invalid_argument("decay_epochs must be at least 1");

    OuterOptimizer opt;
    opt.lr_encoder = lr_encoder;
    opt.lr_heads = lr_heads;
    opt.momentum = momentum;
    opt.weight_decay = weight_decay;
    opt.decay_epochs = decay_epochs;
    opt.velocity = params;
    for (double* v : param_coords(opt.velocity)) *v = 0.0;
    return opt;
}

double lr_scale(const OuterOptimizer& opt, int epoch) {
    if (epoch < 0) throw std::invalid_argument("negative epoch");
    return std::pow(0.1, epoch / opt.decay_epochs);
}

ParamSet outer_step(OuterOptimizer& opt, const ParamSet& params, const GradSet& grad,
                    int epoch) {
    if (!congruent(params, grad) || !congruent(params, opt.velocity)) {
        throw std::invalid_argument("outer_step: parameter/gradient/velocity shape mismatch");
    }
    const double scale = lr_scale(opt, epoch);
    ParamSet next = params;

    auto update = [&](double& w, double& v, double g, double lr) {
        g += opt.weight_decay * w;
        v = opt.momentum * v + g;
        w -= lr * v;
    };

    for (std::size_t l = 0; l < next.encoder.size(); ++l) {
        AffineLayer& layer = next.encoder[l];
        const AffineLayer& glayer = grad.encoder[l];
        AffineLayer& vlayer = opt.velocity.encoder[l];
        const double lr = opt.lr_encoder * scale;
        for (std::size_t i = 0; i < layer.weight.data.size(); ++i) {
            update(layer.weight.data[i], vlayer.weight.data[i], glayer.weight.data[i], lr);
        }
        for (std::size_t i = 0; i < layer.bias.size(); ++i) {
            update(layer.bias[i], vlayer.bias[i], glayer.bias[i], lr);
        }
    }
    const double lr_h = opt.lr_heads * scale;
    for (std::size_t i = 0; i < next.heads.data.size(); ++i) {
        update(next.heads.data[i], opt.velocity.heads.data[i], grad.heads.data[i], lr_h);
    }
    return next;
}

ParamSet duplicate_head(const ParamSet& p, int n) {
    if (p.head_mode != HeadMode::shared) {
        throw std::logic_error("duplicate_head expects a shared head");
    }
    if (n < 1) throw std::invalid_argument("duplicate_head needs n >= 1");
    ParamSet out = p;
    out.head_mode = HeadMode::per_class;
    out.heads = Matrix(static_cast<std::size_t>(n), p.heads.cols);
    for (int c = 0; c < n; ++c) {
        std::copy(p.heads.data.begin(), p.heads.data.end(),
                  out.heads.data.begin() + static_cast<std::size_t>(c) * p.heads.cols);
    }
    return out;
}

ParamSet average_heads(const ParamSet& p) {
    check_per_class(p, "average_heads");
    ParamSet out = p;
    std::vector<double> mean(p.heads.cols, 0.0);
    for (std::size_t c = 0; c < p.heads.rows; ++c) {
        for (std::size_t d = 0; d < p.heads.cols; ++d) mean[d] += p.heads.at(c, d);
    }
    for (double& v : mean) v /= static_cast<double>(p.heads.rows);
    for (std::size_t c = 0; c < p.heads.rows; ++c) {
        std::copy(mean.begin(), mean.end(), out.heads.data.begin() + c * p.heads.cols);
    }
    return out;
}

ParamSet permute_heads(const ParamSet& p, const Permutation& pi) {
    check_per_class(p, "permute_heads");
    if (static_cast<std::size_t>(pi.size()) != p.heads.rows) {
        throw std::invalid_argument("permutation size does not match head count");
    }
    ParamSet out = p;
    for (int c = 1; c <= pi.size(); ++c) {
        const std::size_t src = static_cast<std::size_t>(c - 1);
        const std::size_t dst = static_cast<std::size_t>(pi.image_of(c) - 1);
        std::copy(p.heads.data.begin() + src * p.heads.cols,
                  p.heads.data.begin() + (src + 1) * p.heads.cols,
                  out.heads.data.begin() + dst * p.heads.cols);
    }
    return out;
}

GradSet aggregate_head_grads(const GradSet& g) {
    check_per_class(g, "aggregate_head_grads");
    GradSet out = g;
    out.head_mode = HeadMode::shared;
    out.heads = Matrix(1, g.heads.cols);
    for (std::size_t c = 0; c < g.heads.rows; ++c) {
        for (std::size_t d = 0; d < g.heads.cols; ++d) {
            out.heads.at(0, d) += g.heads.at(c, d);
        }
    }
    return out;
}

ParamSet init_params(std::size_t input_dim, const std::vector<std::size_t>& encoder_sizes,
                     HeadMode mode, std::size_t n_heads, std::uint64_t seed) {
    if (input_dim == 0) throw std::invalid_argument("input_dim must be positive");
    if (mode == HeadMode::per_class && n_heads == 0) {
        throw std::invalid_argument("per-class heads need n_heads >= 1");
    }
    for (std::size_t s : encoder_sizes) {
        if (s == 0) throw std::invalid_argument("encoder layer size must be positive");
    }

    RandomStream rng(seed);
    ParamSet p;
    p.input_dim = input_dim;
    std::size_t fan_in = input_dim;
    for (std::size_t out_dim : encoder_sizes) {
        AffineLayer layer;
        layer.weight = Matrix(out_dim, fan_in);
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));  // He-uniform
        for (double& w : layer.weight.data) w = rng.uniform(-bound, bound);
        layer.bias.assign(out_dim, 0.0);
        p.encoder.push_back(std::move(layer));
        fan_in = out_dim;
    }

    const std::size_t feat = fan_in;
    const std::size_t rows = mode == HeadMode::shared ? 1 : n_heads;
    p.head_mode = mode;
    p.heads = Matrix(rows, feat);
    const double hb = 1.0 / std::sqrt(static_cast<double>(feat));
    for (double& w : p.heads.data) w = rng.uniform(-hb, hb);
    return p;
}

ParamSet reinit_heads(const ParamSet& p, std::uint64_t seed) {
    RandomStream rng(seed);
    ParamSet out = p;
    const double hb = 1.0 / std::sqrt(static_cast<double>(p.heads.cols));
    for (double& w : out.heads.data) w = rng.uniform(-hb, hb);
    return out;
}

// ---- checkpoints --------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'U', 'M', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64_le(std::string& out, double d) {
    const std::uint64_t v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamSet& params,
                     const nlohmann::json& extra_metadata) {
    nlohmann::json meta = extra_metadata;
    meta["format_version"] = kCkptVersion;
    meta["input_dim"] = params.input_dim;
    std::vector<std::size_t> sizes;
    for (const AffineLayer& l : params.encoder) sizes.push_back(l.weight.rows);
    meta["encoder_sizes"] = sizes;
    meta["feature_dim"] = params.feature_dim();
    meta["head_mode"] = params.head_mode == HeadMode::shared ? "shared" : "per_class";
    meta["n_heads"] = params.heads.rows;
    const std::string meta_str = meta.dump();

    std::string out;
    out.append(kCkptMagic, 4);
    put_u32_le(out, kCkptVersion);
    put_u32_le(out, static_cast<std::uint32_t>(meta_str.size()));
    out += meta_str;
    for (const double* v : param_coords(params)) put_f64_le(out, *v);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string data = std::move(buf).str();

    std::size_t pos = 0;
    auto fail = [&](const std::string& what) -> void {
        std::ostringstream msg;
        msg << path << ": " << what << " at byte offset " << pos;
        throw std::runtime_error(msg.str());
    };
    auto need = [&](std::size_t n) {
        if (pos + n > data.size()) fail("truncated checkpoint");
    };
    auto u32 = [&]() -> std::uint32_t {
        need(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) {
            v = (v << 8) | static_cast<unsigned char>(data[pos + static_cast<std::size_t>(i)]);
        }
        pos += 4;
        return v;
    };

    need(4);
    if (std::memcmp(data.data(), kCkptMagic, 4) != 0) fail("bad magic");
    pos = 4;
    const std::uint32_t version = u32();
    if (version != kCkptVersion) fail("unsupported checkpoint version");
    const std::uint32_t meta_len = u32();
    need(meta_len);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(data.substr(pos, meta_len));
    } catch (const nlohmann::json::parse_error& e) {
        fail(std::string("metadata is not valid JSON (") + e.what() + ")");
    }
    pos += meta_len;

    Checkpoint ck;
    ck.metadata = meta;
    ck.params.input_dim = meta.at("input_dim").get<std::size_t>();
    const auto sizes = meta.at("encoder_sizes").get<std::vector<std::size_t>>();
    const std::string mode = meta.at("head_mode").get<std::string>();
    if (mode != "shared" && mode != "per_class") fail("unknown head mode in metadata");
    ck.params.head_mode = mode == "shared" ? HeadMode::shared : HeadMode::per_class;
    const std::size_t n_heads = meta.at("n_heads").get<std::size_t>();

    std::size_t fan_in = ck.params.input_dim;
    for (std::size_t s : sizes) {
        AffineLayer layer;
        layer.weight = Matrix(s, fan_in);
        layer.bias.assign(s, 0.0);
        ck.params.encoder.push_back(std::move(layer));
        fan_in = s;
    }
    ck.params.heads = Matrix(n_heads, fan_in);

    for (double* v : param_coords(ck.params)) {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 7; i >= 0; --i) {
            bits = (bits << 8) |
                   static_cast<unsigned char>(data[pos + static_cast<std::size_t>(i)]);
        }
        pos += 8;
        *v = std::bit_cast<double>(bits);
    }
    if (pos != data.size()) fail("trailing bytes");
    return ck;
}

}  // namespace fewshot
