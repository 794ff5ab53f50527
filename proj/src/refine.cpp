#include "vapl/refine.hpp"

#include <algorithm>
#include <cmath>

#include "vapl/errors.hpp"
#include "vapl/kernels.hpp"
#include "vapl/parallel.hpp"
#include "vapl/random.hpp"

namespace vapl {

std::string to_string(Positivity p) { return p == Positivity::Exp ? "exp" : "tanh"; }

std::string to_string(HiddenActivation a) {
    switch (a) {
        case HiddenActivation::Relu: return "relu";
        case HiddenActivation::Tanh: return "tanh";
        case HiddenActivation::Mixed: return "mixed";
    }
    return "?";
}

Positivity parse_positivity(const std::string& s) {
    if (s == "exp") return Positivity::Exp;
    if (s == "tanh") return Positivity::OnePlusTanh;
    throw ConfigError("unknown positivity map '" + s + "' (exp|tanh)");
}

HiddenActivation parse_activation(const std::string& s) {
    if (s == "relu") return HiddenActivation::Relu;
    if (s == "tanh") return HiddenActivation::Tanh;
    if (s == "mixed") return HiddenActivation::Mixed;
    throw ConfigError("unknown activation '" + s + "' (relu|tanh|mixed)");
}

void MonotoneSpec::validate() const {
    if (sizes.size() < 2 || sizes.front() != 1 || sizes.back() != 1)
        throw ConfigError("weight net must map a scalar to a scalar (sizes 1,...,1)");
    for (std::size_t s : sizes)
        if (s == 0) throw ConfigError("weight net layer sizes must be >= 1");
}

namespace {

constexpr double kLn2 = 0.69314718055994530942;

double phi_value(Positivity phi, double w) { return phi == Positivity::Exp ? std::exp(w) : 1.0 + std::tanh(w); }

double phi_inverse(Positivity phi, double v) { return phi == Positivity::Exp ? std::log(v) : std::atanh(v - 1.0); }

bool unit_is_tanh(HiddenActivation a, std::size_t unit) {
    return a == HiddenActivation::Tanh || (a == HiddenActivation::Mixed && unit % 2 == 0);
}

double activate(HiddenActivation a, std::size_t unit, double x) {
    if (a == HiddenActivation::Relu) return x > 0.0 ? x : 0.0;
    if (unit_is_tanh(a, unit)) return std::tanh(x);
    // softplus(x) - ln 2, stable form
    return (x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x))) - kLn2;
}

double activate_grad(HiddenActivation a, std::size_t unit, double x) {
    if (a == HiddenActivation::Relu) return x > 0.0 ? 1.0 : 0.0;
    if (unit_is_tanh(a, unit)) {
        const double t = std::tanh(x);
        return 1.0 - t * t;
    }
    return 1.0 / (1.0 + std::exp(-x));
}

Tensor phi_tensor(Positivity phi, const Tensor& raw) {
    Tensor out = raw;
    for (double& v : out.vec()) v = phi_value(phi, v);
    return out;
}

Tensor activate_tensor(HiddenActivation a, const Tensor& x) {
    Tensor out = x;
    const std::size_t width = x.dim(1);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = activate(a, i % width, x[i]);
    return out;
}

Var activate_var(HiddenActivation a, Var x) {
    return x.tape().record(activate_tensor(a, x.value()), {x}, [a](const Tensor& g, const auto& in, const auto& gins) {
        const std::size_t width = in[0]->dim(1);
        for (std::size_t i = 0; i < g.size(); ++i) (*gins[0])[i] += g[i] * activate_grad(a, i % width, (*in[0])[i]);
    });
}

}  // namespace

std::string MonotoneWeightNet::layer_name(std::size_t k) { return "layer" + std::to_string(k) + ".weight"; }

MonotoneWeightNet::MonotoneWeightNet(const MonotoneSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    Rng rng(seed);
    for (std::size_t k = 0; k + 1 < spec_.sizes.size(); ++k) {
        const std::size_t in = spec_.sizes[k], out = spec_.sizes[k + 1];
        Tensor w({out, in});
        const double center = phi_inverse(spec_.phi, 1.0 / static_cast<double>(in));
        for (double& v : w.vec()) v = center + 0.5 * (2.0 * uniform01(rng) - 1.0);
        params_.emplace(layer_name(k), std::move(w));
    }
    // output layer is linear, so rescaling its effective weights sets g(1) = 1
    const double g1 = (*this)(1.0);
    if (g1 > 0.0 && std::isfinite(g1))
        for (double& v : params_.at(layer_name(layers() - 1)).vec()) {
            double target = phi_value(spec_.phi, v) / g1;
            if (spec_.phi == Positivity::OnePlusTanh) target = std::clamp(target, 1e-6, 2.0 - 1e-6);
            v = phi_inverse(spec_.phi, target);
        }
}

MonotoneWeightNet MonotoneWeightNet::single(double raw_weight, Positivity phi) {
    MonotoneWeightNet g;
    g.spec_.sizes = {1, 1};
    g.spec_.phi = phi;
    g.params_.emplace(layer_name(0), Tensor({1, 1}, std::vector<double>{raw_weight}));
    return g;
}

Tensor MonotoneWeightNet::evaluate(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(1) != 1) throw ShapeError("weight net input must be [M,1], got " + shape_str(x.shape()));
    static const Tensor no_bias;
    Tensor h = x;
    for (std::size_t k = 0; k < layers(); ++k) {
        h = kernels::linear(h, phi_tensor(spec_.phi, params_.at(layer_name(k))), no_bias);
        if (k + 1 < layers()) h = activate_tensor(spec_.activation, h);
    }
    return h;
}

double MonotoneWeightNet::operator()(double x) const { return evaluate(Tensor({1, 1}, std::vector<double>{x}))[0]; }

BoundWeightNet MonotoneWeightNet::bind(Tape& tape, const std::string& prefix, bool trainable) const {
    BoundWeightNet b;
    b.net_ = this;
    for (std::size_t k = 0; k < layers(); ++k) {
        const Tensor& w = params_.at(layer_name(k));
        b.raw_.push_back(trainable ? tape.param(prefix + layer_name(k), w) : tape.constant(w));
    }
    return b;
}

Var BoundWeightNet::forward(Var x) const {
    if (x.shape().size() != 2 || x.shape()[1] != 1)
        throw ShapeError("weight net input must be [M,1], got " + shape_str(x.shape()));
    const MonotoneSpec& spec = net_->spec();
    Var h = x;
    for (std::size_t k = 0; k < raw_.size(); ++k) {
        Var eff = spec.phi == Positivity::Exp ? ag::exp(raw_[k]) : ag::one_plus_tanh(raw_[k]);
        h = ag::matmul_t(h, eff);
        if (k + 1 < raw_.size()) h = activate_var(spec.activation, h);
    }
    return h;
}

double l_agg(const MonotoneWeightNet& g) { return std::fabs(g(1.0) - 1.0); }

Var l_agg(const BoundWeightNet& g, Tape& tape) {
    Var one = tape.constant(Tensor({1, 1}, 1.0));
    Var diff = ag::sub(g.forward(one), tape.constant(Tensor({1, 1}, 1.0)));
    return ag::reshape(ag::abs(diff), {1});
}

double weight_of(const MonotoneWeightNet& g, double confidence) { return g(confidence); }

double confidence(const ClassifierModel& f_m, const Tensor& image, const BinaryMask& mask, std::size_t class_index) {
    if (class_index >= f_m.spec().classes) throw ConfigError("class index out of range");
    Tensor masked = apply_mask(image, mask);
    Shape s = masked.shape();
    s.insert(s.begin(), 1);
    const Tensor probs = kernels::softmax_rows(f_m.forward(masked.reshaped(s)));
    return probs[class_index];
}

std::vector<double> score_masks(const ClassifierModel& f_m, const Tensor& image, std::span<const BinaryMask> masks,
                                std::size_t class_index, std::size_t workers) {
    if (class_index >= f_m.spec().classes) throw ConfigError("class index out of range");
    f_m.check_input({1, image.dim(0), image.dim(1), image.dim(2)});
    constexpr std::size_t chunk = 32;
    const std::size_t K = f_m.spec().classes;
    const std::size_t per_image = image.size();
    std::vector<double> scores(masks.size());
    const std::size_t chunks = (masks.size() + chunk - 1) / chunk;
    parallel_for(chunks, workers, [&](std::size_t c) {
        const std::size_t begin = c * chunk, end = std::min(masks.size(), begin + chunk);
        Tensor batch({end - begin, image.dim(0), image.dim(1), image.dim(2)});
        for (std::size_t i = begin; i < end; ++i) {
            const Tensor masked = apply_mask(image, masks[i]);
            std::copy(masked.vec().begin(), masked.vec().end(),
                      batch.vec().begin() + static_cast<std::ptrdiff_t>((i - begin) * per_image));
        }
        const Tensor probs = kernels::softmax_rows(f_m.forward(batch));
        for (std::size_t i = begin; i < end; ++i) scores[i] = probs[(i - begin) * K + class_index];
    });
    return scores;
}

std::vector<double> aggregate_masks(std::span<const BinaryMask> masks, std::span<const double> weights,
                                    const RefineOptions& options) {
    if (masks.size() != weights.size()) throw ShapeError("one weight per mask required");
    if (masks.empty()) throw ConfigError("aggregation needs at least one mask");
    const std::size_t P = masks[0].size();
    std::vector<double> acc(P, 0.0);
    std::vector<double> counts(options.normalization == Normalization::PerPixel ? P : 0, 0.0);
    for (std::size_t i = 0; i < masks.size(); ++i) {
        const auto& m = masks[i].values();
        if (m.size() != P) throw ShapeError("masks differ in size");
        for (std::size_t j = 0; j < P; ++j)
            if (m[j]) {
                acc[j] += weights[i];
                if (!counts.empty()) counts[j] += 1.0;
            }
    }
    if (options.normalization == Normalization::PerPixel) {
        for (std::size_t j = 0; j < P; ++j) acc[j] = counts[j] > 0.0 ? acc[j] / counts[j] : 0.0;
    } else {
        const double denom = static_cast<double>(masks.size()) * options.p;
        for (double& v : acc) v /= denom;
    }
    return acc;
}

std::vector<double> normalize_unit(std::vector<double> values) {
    const double m = values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
    if (m > 1.0)
        for (double& v : values) v /= m;
    return values;
}

namespace {

Refinement finish(const AttentionPrompt& prompt, std::vector<BinaryMask> const& masks, std::vector<double> confidences,
                  std::vector<double> weights, const RefineOptions& options) {
    Refinement r;
    r.pre_clip = aggregate_masks(masks, weights, options);
    for (double v : r.pre_clip)
        if (!std::isfinite(v)) throw NumericError("non-finite value in refined prompt");
    r.map = SaliencyMap(prompt.height(), prompt.width(), normalize_unit(r.pre_clip));
    r.confidences = std::move(confidences);
    r.weights = std::move(weights);
    return r;
}

void check_pair(const Tensor& image, const AttentionPrompt& prompt) {
    if (image.rank() != 3 || image.dim(1) != prompt.height() || image.dim(2) != prompt.width())
        throw ShapeError("prompt " + std::to_string(prompt.height()) + "x" + std::to_string(prompt.width()) +
                         " does not match image " + shape_str(image.shape()));
}

}  // namespace

Refinement refine_unweighted(const ClassifierModel& f_m, const Tensor& image, const AttentionPrompt& prompt,
                             std::size_t class_index, const RefineOptions& options) {
    check_pair(image, prompt);
    const auto masks = sample_perturbations(prompt, options.n_masks, options.p, options.seed, options.perturbation);
    std::vector<double> conf = score_masks(f_m, image, masks, class_index, options.workers);
    std::vector<double> weights = conf;
    return finish(prompt, masks, std::move(conf), std::move(weights), options);
}

Refinement refine_prompt(const ClassifierModel& f_m, const MonotoneWeightNet& g, const Tensor& image,
                         const AttentionPrompt& prompt, std::size_t class_index, const RefineOptions& options) {
    if (options.weighting == Weighting::PassThrough) return refine_unweighted(f_m, image, prompt, class_index, options);
    check_pair(image, prompt);
    const auto masks = sample_perturbations(prompt, options.n_masks, options.p, options.seed, options.perturbation);
    std::vector<double> conf = score_masks(f_m, image, masks, class_index, options.workers);
    const Tensor w = g.evaluate(Tensor({conf.size(), 1}, conf));
    return finish(prompt, masks, std::move(conf), w.vec(), options);
}

Var aggregate_masks(Var weights, std::shared_ptr<const std::vector<std::vector<BinaryMask>>> masks,
                    const RefineOptions& options) {
    const std::size_t B = masks->size();
    if (B == 0 || (*masks)[0].empty()) throw ConfigError("aggregation needs at least one mask");
    const std::size_t N = (*masks)[0].size();
    const std::size_t H = (*masks)[0][0].height(), W = (*masks)[0][0].width();
    if (weights.value().size() != B * N) throw ShapeError("aggregate: weights do not match B*N masks");
    Tensor out({B, H, W});
    std::vector<std::vector<double>> counts(B);
    for (std::size_t b = 0; b < B; ++b) {
        const auto& mb = (*masks)[b];
        if (mb.size() != N) throw ShapeError("aggregate: ragged mask lists");
        std::span<const double> wb(weights.value().data().data() + b * N, N);
        const std::vector<double> a = aggregate_masks(mb, wb, options);
        std::copy(a.begin(), a.end(), out.vec().begin() + static_cast<std::ptrdiff_t>(b * H * W));
        if (options.normalization == Normalization::PerPixel) {
            counts[b].assign(H * W, 0.0);
            for (const BinaryMask& m : mb)
                for (std::size_t j = 0; j < H * W; ++j) counts[b][j] += m[j];
        }
    }
    const double denom = static_cast<double>(N) * options.p;
    const bool per_pixel = options.normalization == Normalization::PerPixel;
    return weights.tape().record(
        std::move(out), {weights},
        [masks, counts = std::move(counts), denom, per_pixel, N, HW = H * W](const Tensor& g, const auto&,
                                                                               const auto& gins) {
            for (std::size_t b = 0; b < masks->size(); ++b)
                for (std::size_t i = 0; i < N; ++i) {
                    const BinaryMask& m = (*masks)[b][i];
                    double s = 0.0;
                    for (std::size_t j = 0; j < HW; ++j)
                        if (m[j]) s += per_pixel ? g[b * HW + j] / counts[b][j] : g[b * HW + j];
                    (*gins[0])[b * N + i] += per_pixel ? s : s / denom;
                }
        });
}

Var normalize_unit(Var maps) {
    const Tensor& in = maps.value();
    if (in.rank() != 3) throw ShapeError("normalize_unit expects [B,H,W]");
    const std::size_t B = in.dim(0), HW = in.dim(1) * in.dim(2);
    Tensor out = in;
    std::vector<std::size_t> argmax(B);
    for (std::size_t b = 0; b < B; ++b) {
        const double* p = in.data().data() + b * HW;
        argmax[b] = static_cast<std::size_t>(std::max_element(p, p + HW) - p);
        const double m = p[argmax[b]];
        if (m > 1.0)
            for (std::size_t j = 0; j < HW; ++j) out[b * HW + j] = p[j] / m;
    }
    return maps.tape().record(std::move(out), {maps}, [argmax, HW](const Tensor& g, const auto& in, const auto& gins) {
        const Tensor& x = *in[0];
        for (std::size_t b = 0; b < argmax.size(); ++b) {
            const std::size_t k = b * HW + argmax[b];
            const double m = x[k];
            if (m > 1.0) {
                // y_j = x_j / x_k, with x_k the maximum
                double cross = 0.0;
                for (std::size_t j = 0; j < HW; ++j) {
                    (*gins[0])[b * HW + j] += g[b * HW + j] / m;
                    cross += g[b * HW + j] * x[b * HW + j];
                }
                (*gins[0])[k] -= cross / (m * m);
            } else {
                for (std::size_t j = 0; j < HW; ++j) (*gins[0])[b * HW + j] += g[b * HW + j];
            }
        }
    });
}

}  // namespace vapl
