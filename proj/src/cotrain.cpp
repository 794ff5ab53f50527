#include "vapl/cotrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <sstream>

#include "vapl/errors.hpp"
#include "vapl/kernels.hpp"
#include "vapl/netpbm.hpp"
#include "vapl/parallel.hpp"
#include "vapl/random.hpp"

namespace vapl {

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
    Tensor t({labels.size(), classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes) throw DataError("label " + std::to_string(labels[i]) + " out of range");
        t[i * classes + labels[i]] = 1.0;
    }
    return t;
}

double cross_entropy(const Tensor& logits_m, const Tensor& logits_o, const Tensor& onehot) {
    Tape tape;
    const Var a = ag::cross_entropy_sum(tape.constant(logits_m), onehot, kLogClamp);
    const Var b = ag::cross_entropy_sum(tape.constant(logits_o), onehot, kLogClamp);
    return a.value().item() + b.value().item();
}

namespace {

void check_same_arch(const ClassifierModel& f_m, const ClassifierModel& f_o) {
    if (f_m.spec() != f_o.spec()) throw ShapeError("prompted and non-prompted models differ in architecture");
    for (const auto& [name, t] : f_m.params()) {
        auto it = f_o.params().find(name);
        if (it == f_o.params().end() || it->second.shape() != t.shape())
            throw ShapeError("parameter '" + name + "' differs between the two models");
    }
    if (f_m.params().size() != f_o.params().size()) throw ShapeError("parameter sets differ between the two models");
}

}  // namespace

double loss_param(const ClassifierModel& f_m, const ClassifierModel& f_o) {
    check_same_arch(f_m, f_o);
    double s = 0.0;
    for (const std::string& name : ClassifierModel::conv_weight_names()) {
        const Tensor& a = f_o.params().at(name);
        const Tensor& b = f_m.params().at(name);
        for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    return s;
}

Var loss_param(const BoundModel& f_m, const BoundModel& f_o) {
    std::vector<Var> terms;
    for (const std::string& name : ClassifierModel::conv_weight_names())
        terms.push_back(ag::square_sum(ag::sub(f_o.param(name), f_m.param(name))));
    return ag::add_n(terms);
}

double loss_activ(const ClassifierModel& f_m, const ClassifierModel& f_o, const Tensor& images, const Tensor& maps) {
    check_same_arch(f_m, f_o);
    const Tensor a = f_o.features(images);
    const Tensor b = f_m.features(kernels::mask_channels(images, maps));
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

double loss_pred(const ClassifierModel& f_m, const ClassifierModel& f_o, const Tensor& images, const Tensor& maps,
                 const std::vector<std::size_t>& labels) {
    const Tensor lm = f_m.forward(kernels::mask_channels(images, maps));
    const Tensor lo = f_o.forward(images);
    return cross_entropy(lm, lo, one_hot(labels, f_m.spec().classes)) / static_cast<double>(labels.size());
}

double combine(const LossBreakdown& parts, const Lambdas& l) {
    return parts.pred + l.param * parts.param + l.activ * parts.activ + l.agg * parts.agg;
}

LossBreakdown total_objective(const CoTrainState& state, const Batch& batch, const Lambdas& lambdas) {
    LossBreakdown b;
    b.pred = loss_pred(state.f_m, state.f_o, batch.images, batch.maps, batch.labels);
    b.param = loss_param(state.f_m, state.f_o);
    b.activ = loss_activ(state.f_m, state.f_o, batch.images, batch.maps);
    b.agg = l_agg(state.g);
    b.total = combine(b, lambdas);
    return b;
}

std::string to_string(Phase p) {
    switch (p) {
        case Phase::F: return "f";
        case Phase::G: return "g";
        case Phase::Val: return "val";
    }
    return "?";
}

CoTrainState CoTrainState::initial(const Config& config) {
    config.validate();
    CoTrainState s;
    s.config = config;
    s.f_m = ClassifierModel(config.model, derive_seed(config.train.seed, 1));
    s.f_o = s.f_m;
    s.g = MonotoneWeightNet(config.refine.weight_net(), derive_seed(config.train.seed, 2));
    AdamConfig adam;
    adam.learning_rate = config.train.learning_rate;
    s.adam_m = Adam(adam);
    s.adam_o = Adam(adam);
    s.adam_g = Adam(adam);
    std::ostringstream rng;
    rng << Rng(derive_seed(config.train.seed, 3));
    s.rng_state = rng.str();
    return s;
}

namespace {

// Refinement masks of training sample i are fixed by (refine.seed, i).
std::uint64_t train_sample_seed(const Config& c, std::size_t i) { return derive_seed(c.refine.seed, i); }
// Evaluation samples draw from a separate stream.
std::uint64_t eval_sample_seed(const Config& c, std::size_t i) { return derive_seed(c.refine.seed, (1ULL << 40) + i); }

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i)
        std::swap(idx[i - 1], idx[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i))]);
    return idx;
}

Tensor binarized_maps(const std::vector<const Sample*>& samples) {
    std::vector<Tensor> maps;
    for (const Sample* s : samples) {
        const BinaryMask m = binarize_prompt(s->prompt, 1);
        maps.emplace_back(Shape{m.height(), m.width()}, std::vector<double>(m.values().begin(), m.values().end()));
    }
    return stack(maps);
}

void check_loss(double v, const char* phase, std::size_t t, std::size_t q) {
    if (!std::isfinite(v))
        throw NumericError(std::string("non-finite loss in ") + phase + "-phase, outer iteration " +
                           std::to_string(t) + ", pass " + std::to_string(q));
}

struct Accum {
    LossRecord rec;
    std::size_t batches = 0;
    void add(double pred, double param, double activ, double agg) {
        rec.pred += pred;
        rec.param += param;
        rec.activ += activ;
        rec.agg += agg;
        ++batches;
    }
    LossRecord mean() const {
        LossRecord r = rec;
        const double n = batches ? static_cast<double>(batches) : 1.0;
        r.pred /= n;
        r.param /= n;
        r.activ /= n;
        r.agg /= n;
        return r;
    }
};

// One Adam step on f_m and f_o, g frozen.
void f_step(CoTrainState& s, const Tensor& images, const Tensor& maps, const std::vector<std::size_t>& labels,
            Accum& acc, std::size_t t, std::size_t q) {
    const TrainingConfig& tc = s.config.train;
    const double inv_b = 1.0 / static_cast<double>(labels.size());
    const Tensor onehot = one_hot(labels, s.config.model.classes);
    Tape tape;
    const BoundModel bm = s.f_m.bind(tape, "f_m.", true);
    const BoundModel bo = s.f_o.bind(tape, "f_o.", true);
    const Var x = tape.constant(images);
    const Var a = tape.constant(maps);
    const Var feat_m = bm.features(ag::mask_channels(x, a));
    const Var feat_o = bo.features(x);
    const Var pred = ag::scale(ag::add(ag::cross_entropy_sum(bm.head(feat_m), onehot, kLogClamp),
                                       ag::cross_entropy_sum(bo.head(feat_o), onehot, kLogClamp)),
                               inv_b);
    const Var param = loss_param(bm, bo);
    const Var activ = ag::square_sum(ag::sub(feat_o, feat_m));
    const Var loss = ag::add_n({pred, ag::scale(param, tc.lambda1), ag::scale(activ, tc.lambda2)});
    check_loss(loss.value().item(), "f", t, q);
    const Gradients grads = tape.backward(loss);
    s.adam_m.step(s.f_m.params(), grads.subset("f_m."));
    s.adam_o.step(s.f_o.params(), grads.subset("f_o."));
    acc.add(pred.value().item(), param.value().item(), activ.value().item(), l_agg(s.g));
}

// Non-prompted model alone: plain cross-entropy.
void baseline_step(CoTrainState& s, const Tensor& images, const std::vector<std::size_t>& labels, Accum& acc,
                   std::size_t t, std::size_t q) {
    const Tensor onehot = one_hot(labels, s.config.model.classes);
    Tape tape;
    const BoundModel bo = s.f_o.bind(tape, "f_o.", true);
    const Var pred = ag::scale(ag::cross_entropy_sum(bo.forward(tape.constant(images)), onehot, kLogClamp),
                               1.0 / static_cast<double>(labels.size()));
    check_loss(pred.value().item(), "f", t, q);
    s.adam_o.step(s.f_o.params(), tape.backward(pred).subset("f_o."));
    acc.add(pred.value().item(), 0.0, 0.0, 0.0);
}

struct GCache {
    std::vector<std::vector<BinaryMask>> masks;  // per training sample
    std::vector<std::vector<double>> conf;       // per training sample
    std::vector<double> ce_o;                    // per sample f_o cross-entropy (constant in the g-phase)
};

GCache build_g_cache(const CoTrainState& s, const std::vector<Sample>& train, std::size_t workers) {
    GCache c;
    c.masks.resize(train.size());
    c.conf.resize(train.size());
    c.ce_o.resize(train.size());
    const RefineConfig& rc = s.config.refine;
    for (std::size_t i = 0; i < train.size(); ++i) {
        const Sample& smp = train[i];
        c.masks[i] = sample_perturbations(smp.prompt, rc.n_masks, rc.p, train_sample_seed(s.config, i),
                                          PerturbationOptions{rc.cell});
        c.conf[i] = score_masks(s.f_m, smp.image, c.masks[i], smp.label, workers);
    }
    return c;
}

// One Adam step on g, f_m and f_o frozen.
void g_step(CoTrainState& s, const std::vector<Sample>& train, const GCache& cache,
            const std::vector<std::size_t>& ids, Accum& acc, std::size_t t, std::size_t q) {
    const Config& c = s.config;
    const std::size_t B = ids.size(), N = c.refine.n_masks;
    std::vector<const Sample*> samples;
    std::vector<std::size_t> labels;
    auto masks = std::make_shared<std::vector<std::vector<BinaryMask>>>();
    Tensor conf({B * N, 1});
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t i = ids[b];
        samples.push_back(&train[i]);
        labels.push_back(train[i].label);
        masks->push_back(cache.masks[i]);
        std::copy(cache.conf[i].begin(), cache.conf[i].end(), conf.vec().begin() + static_cast<std::ptrdiff_t>(b * N));
    }
    const Tensor images = batch_images(samples);
    const Tensor onehot = one_hot(labels, c.model.classes);
    const RefineOptions opts = c.refine.options(0, 1);

    // f_o's term of the prediction loss does not depend on g
    const Tensor lo = s.f_o.forward(images);
    Tape tape;
    const Var ce_o = ag::cross_entropy_sum(tape.constant(lo), onehot, kLogClamp);
    const BoundWeightNet bg = s.g.bind(tape, "g.", true);
    const BoundModel bm = s.f_m.bind(tape, "f_m.", false);
    const Var weights = bg.forward(tape.constant(conf));
    const Var maps = normalize_unit(aggregate_masks(weights, masks, opts));
    const Var lm = bm.forward(ag::mask_channels(tape.constant(images), maps));
    const Var pred =
        ag::scale(ag::add(ag::cross_entropy_sum(lm, onehot, kLogClamp), ce_o), 1.0 / static_cast<double>(B));
    const Var agg = l_agg(bg, tape);
    const Var loss = ag::add_n({pred, ag::scale(agg, c.train.lambda3)});
    check_loss(loss.value().item(), "g", t, q);
    s.adam_g.step(s.g.params(), tape.backward(loss).subset("g."));
    acc.add(pred.value().item(), loss_param(s.f_m, s.f_o), 0.0, agg.value().item());
}

double split_accuracy(const CoTrainState& s, const std::vector<Sample>& split, bool prompted, std::size_t workers) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < split.size(); ++i) {
        PredictOptions po;
        po.seed = eval_sample_seed(s.config, i);
        po.workers = workers;
        const Prediction p = predict(s, split[i].image, prompted ? &split[i].prompt : nullptr, po);
        if (p.class_index == split[i].label) ++correct;
    }
    return split.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(split.size());
}

}  // namespace

Tensor training_maps(const CoTrainState& state, const std::vector<const Sample*>& samples,
                     const std::vector<std::size_t>& sample_ids, bool warmup, std::size_t workers) {
    const RefineConfig& rc = state.config.refine;
    if (warmup || rc.mode == RefineMode::Binarize) return binarized_maps(samples);
    std::vector<Tensor> maps;
    for (std::size_t b = 0; b < samples.size(); ++b) {
        const Sample& s = *samples[b];
        const Refinement r = refine_prompt(state.f_m, state.g, s.image, s.prompt, s.label,
                                           rc.options(train_sample_seed(state.config, sample_ids[b]), workers));
        maps.emplace_back(Shape{r.map.height(), r.map.width()}, r.map.values());
    }
    return stack(maps);
}

CoTrainState train_alternating(const Dataset& data, const Config& config, const TrainHooks& hooks) {
    if (data.train.empty()) throw DataError("training split is empty");
    for (const Sample& s : data.train)
        if (s.prompt.height() != s.image.dim(1) || s.prompt.width() != s.image.dim(2))
            throw DataError("every training sample needs a prompt matching its image");
    CoTrainState state = CoTrainState::initial(config);
    const TrainingConfig& tc = config.train;
    const std::size_t workers = worker_count();
    const std::size_t n = data.train.size();
    Rng order;
    {
        std::istringstream in(state.rng_state);
        in >> order;
    }
    CoTrainState best = state;
    double best_o = -1.0, best_m = -1.0;
    std::size_t stall = 0;
    auto notify = [&](Phase p, std::size_t t, bool begin) {
        if (hooks.phase) hooks.phase(state, p, t, begin);
    };

    for (std::size_t t = 0; t < tc.outer_iterations; ++t) {
        const bool warm = t < tc.warmup_epochs;

        notify(Phase::F, t, true);
        // A is held fixed for the whole phase: f_m and g as of its start
        Tensor all_maps;
        if (tc.cotrain && tc.f_iterations > 0) {
            std::vector<const Sample*> everything;
            std::vector<std::size_t> all_ids;
            for (std::size_t i = 0; i < n; ++i) {
                everything.push_back(&data.train[i]);
                all_ids.push_back(i);
            }
            all_maps = training_maps(state, everything, all_ids, warm, workers);
        }
        for (std::size_t q = 0; q < tc.f_iterations; ++q) {
            const auto perm = shuffled(n, order);
            Accum acc;
            for (std::size_t start = 0; start < n; start += tc.batch_size) {
                std::vector<std::size_t> ids(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                             perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + tc.batch_size)));
                std::vector<const Sample*> samples;
                std::vector<std::size_t> labels;
                for (std::size_t i : ids) {
                    samples.push_back(&data.train[i]);
                    labels.push_back(data.train[i].label);
                }
                const Tensor images = batch_images(samples);
                if (tc.cotrain) {
                    std::vector<Tensor> rows;
                    for (std::size_t i : ids) rows.push_back(all_maps.slice_rows(i, i + 1).reshaped({all_maps.dim(1), all_maps.dim(2)}));
                    const Tensor maps = stack(rows);
                    f_step(state, images, maps, labels, acc, t, q);
                } else {
                    baseline_step(state, images, labels, acc, t, q);
                }
            }
            LossRecord r = acc.mean();
            r.iteration = t;
            r.phase = Phase::F;
            r.pass = q;
            state.history.push_back(r);
        }
        notify(Phase::F, t, false);

        notify(Phase::G, t, true);
        if (tc.cotrain && config.refine.mode == RefineMode::Learned && tc.g_iterations > 0) {
            const GCache cache = build_g_cache(state, data.train, workers);
            for (std::size_t q = 0; q < tc.g_iterations; ++q) {
                const auto perm = shuffled(n, order);
                Accum acc;
                for (std::size_t start = 0; start < n; start += tc.batch_size) {
                    const std::vector<std::size_t> ids(
                        perm.begin() + static_cast<std::ptrdiff_t>(start),
                        perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + tc.batch_size)));
                    g_step(state, data.train, cache, ids, acc, t, q);
                }
                LossRecord r = acc.mean();
                r.iteration = t;
                r.phase = Phase::G;
                r.pass = q;
                state.history.push_back(r);
            }
        }
        notify(Phase::G, t, false);

        double acc_o = 0.0, acc_m = 0.0;
        if (!data.val.empty()) {
            acc_o = split_accuracy(state, data.val, false, workers);
            if (tc.cotrain) acc_m = split_accuracy(state, data.val, true, workers);
        }
        const double val = tc.cotrain ? 0.5 * (acc_o + acc_m) : acc_o;
        LossRecord vr;
        vr.iteration = t;
        vr.phase = Phase::Val;
        vr.val_accuracy = val;
        state.history.push_back(vr);
        state.iteration = t + 1;
        {
            std::ostringstream os;
            os << order;
            state.rng_state = os.str();
        }
        if (hooks.iteration) hooks.iteration(state);

        // each path keeps its own best-on-validation parameters
        bool improved = false;
        if (acc_o > best_o) {
            best_o = acc_o;
            best.f_o = state.f_o;
            best.adam_o = state.adam_o;
            improved = true;
        }
        if (tc.cotrain && acc_m > best_m) {
            best_m = acc_m;
            best.f_m = state.f_m;
            best.g = state.g;
            best.adam_m = state.adam_m;
            best.adam_g = state.adam_g;
            improved = true;
        }
        best.best_val = state.best_val = tc.cotrain ? 0.5 * (best_o + best_m) : best_o;
        if (improved) {
            stall = 0;
        } else if (++stall >= tc.patience) {
            break;
        }
    }
    best.history = state.history;
    best.iteration = state.iteration;
    best.rng_state = state.rng_state;
    return best;
}

namespace {

std::size_t argmax(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<double> probs_of(const ClassifierModel& m, const Tensor& image) {
    Shape s = image.shape();
    s.insert(s.begin(), 1);
    return kernels::softmax_rows(m.forward(image.reshaped(s))).vec();
}

void check_prompt(const Tensor& image, const AttentionPrompt& prompt) {
    if (image.rank() != 3 || prompt.height() != image.dim(1) || prompt.width() != image.dim(2))
        throw ShapeError("prompt " + std::to_string(prompt.height()) + "x" + std::to_string(prompt.width()) +
                         " does not match image " + shape_str(image.shape()));
}

}  // namespace

SaliencyMap refine_for(const CoTrainState& state, const Tensor& image, const AttentionPrompt& prompt,
                       const PredictOptions& options, std::optional<std::size_t> class_index) {
    check_prompt(image, prompt);
    const RefineConfig& rc = state.config.refine;
    const BinaryMask warm = binarize_prompt(prompt, 1);
    if (rc.mode == RefineMode::Binarize) return SaliencyMap::from_mask(warm);
    const std::size_t k = class_index ? *class_index : argmax(probs_of(state.f_m, apply_mask(image, warm)));
    RefineOptions ro = rc.options(options.seed, options.workers);
    if (options.n_masks) ro.n_masks = *options.n_masks;
    return refine_prompt(state.f_m, state.g, image, prompt, k, ro).map;
}

Prediction predict(const CoTrainState& state, const Tensor& image, const AttentionPrompt* prompt,
                   const PredictOptions& options) {
    Prediction p;
    if (!prompt) {
        state.f_o.check_input({1, image.rank() == 3 ? image.dim(0) : 0, image.rank() == 3 ? image.dim(1) : 0,
                               image.rank() == 3 ? image.dim(2) : 0});
        p.probabilities = probs_of(state.f_o, image);
    } else {
        SaliencyMap a = refine_for(state, image, *prompt, options);
        p.probabilities = probs_of(state.f_m, apply_mask(image, a));
        p.prompted = true;
        p.saliency = std::move(a);
    }
    p.class_index = argmax(p.probabilities);
    return p;
}

// ---- checkpoints ----

namespace {

constexpr char kMagic[8] = {'V', 'A', 'P', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
public:
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void str(const std::string& s) {
        u64(s.size());
        out_.append(s);
    }
    void tensor(const std::string& name, const Tensor& t) {
        str(name);
        u32(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) u64(d);
        raw(t.data().data(), t.size() * sizeof(double));
    }
    void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
    const std::string& bytes() const { return out_; }

private:
    std::string out_;
};

class Reader {
public:
    Reader(std::string bytes, std::string source) : in_(std::move(bytes)), source_(std::move(source)) {}

    [[noreturn]] void fail(const std::string& what) const {
        throw DataError(source_ + ": " + what + " at byte offset " + std::to_string(pos_));
    }
    void raw(void* p, std::size_t n) {
        if (in_.size() - pos_ < n) fail("truncated checkpoint");
        std::memcpy(p, in_.data() + pos_, n);
        pos_ += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, sizeof v);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, sizeof v);
        return v;
    }
    double f64() {
        double v;
        raw(&v, sizeof v);
        return v;
    }
    std::string str() {
        const std::uint64_t n = u64();
        if (in_.size() - pos_ < n) fail("truncated string");
        std::string s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::pair<std::string, Tensor> tensor() {
        std::string name = str();
        const std::uint32_t rank = u32();
        if (rank > 8) fail("implausible tensor rank");
        Shape shape(rank);
        for (auto& d : shape) d = u64();
        const std::size_t n = shape_numel(shape);
        if (n > (in_.size() - pos_) / sizeof(double)) fail("truncated tensor '" + name + "'");
        std::vector<double> data(n);
        raw(data.data(), n * sizeof(double));
        return {std::move(name), Tensor(std::move(shape), std::move(data))};
    }
    bool done() const { return pos_ == in_.size(); }

private:
    std::string in_;
    std::string source_;
    std::size_t pos_ = 0;
};

void put_params(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix, const ParamMap& p) {
    for (const auto& [name, t] : p) out.emplace_back(prefix + name, t);
}

void put_adam(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix, const Adam& a) {
    out.emplace_back(prefix + "t", Tensor::scalar(static_cast<double>(a.steps())));
    put_params(out, prefix + "m/", a.first_moments());
    put_params(out, prefix + "v/", a.second_moments());
}

ParamMap take_prefix(std::map<std::string, Tensor>& all, const std::string& prefix) {
    ParamMap out;
    for (auto it = all.begin(); it != all.end();) {
        if (it->first.starts_with(prefix)) {
            out.emplace(it->first.substr(prefix.size()), std::move(it->second));
            it = all.erase(it);
        } else {
            ++it;
        }
    }
    return out;
}

void check_params(const ParamMap& expected, const ParamMap& got, const std::string& what, const std::string& source) {
    if (expected.size() != got.size())
        throw DataError(source + ": " + what + " has " + std::to_string(got.size()) + " tensors, architecture expects " +
                        std::to_string(expected.size()));
    for (const auto& [name, t] : expected) {
        auto it = got.find(name);
        if (it == got.end()) throw DataError(source + ": " + what + " is missing '" + name + "'");
        if (it->second.shape() != t.shape())
            throw DataError(source + ": " + what + " '" + name + "' has shape " + shape_str(it->second.shape()) +
                            ", architecture expects " + shape_str(t.shape()));
    }
}

Adam take_adam(std::map<std::string, Tensor>& all, const std::string& prefix, double lr, const std::string& source) {
    ParamMap t = take_prefix(all, prefix + "t");
    if (t.size() != 1) throw DataError(source + ": missing optimizer step count '" + prefix + "t'");
    AdamConfig ac;
    ac.learning_rate = lr;
    Adam a(ac);
    ParamMap m = take_prefix(all, prefix + "m/");
    ParamMap v = take_prefix(all, prefix + "v/");
    a.restore(static_cast<std::size_t>(t.begin()->second.item()), std::move(m), std::move(v));
    return a;
}

}  // namespace

std::string history_csv(const std::vector<LossRecord>& history) {
    std::ostringstream os;
    os.precision(17);
    os << "iteration,phase,pass,L_Pred,L_Param,L_Activ,L_Agg,val_accuracy\n";
    for (const LossRecord& r : history) {
        os << r.iteration << "," << to_string(r.phase) << "," << r.pass << ",";
        if (r.phase == Phase::Val)
            os << ",,,," << r.val_accuracy << "\n";
        else
            os << r.pred << "," << r.param << "," << r.activ << "," << r.agg << ",\n";
    }
    return os.str();
}

namespace {

std::vector<LossRecord> parse_history(const std::string& csv, const std::string& source) {
    std::vector<LossRecord> out;
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        while (f.size() < 8) f.emplace_back();
        LossRecord r;
        try {
            r.iteration = std::stoul(f[0]);
            r.phase = f[1] == "f" ? Phase::F : f[1] == "g" ? Phase::G : Phase::Val;
            r.pass = std::stoul(f[2]);
            if (r.phase == Phase::Val) {
                r.val_accuracy = std::stod(f[7]);
            } else {
                r.pred = std::stod(f[3]);
                r.param = std::stod(f[4]);
                r.activ = std::stod(f[5]);
                r.agg = std::stod(f[6]);
            }
        } catch (const std::exception&) {
            throw DataError(source + ": malformed loss history row '" + line + "'");
        }
        out.push_back(r);
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const CoTrainState& state) {
    Writer w;
    w.raw(kMagic, sizeof kMagic);
    w.u32(kVersion);
    w.str(state.config.to_text());
    w.str(state.rng_state);
    w.u64(state.iteration);
    w.f64(state.best_val);
    std::vector<std::pair<std::string, Tensor>> tensors;
    put_params(tensors, "f_m/", state.f_m.params());
    put_params(tensors, "f_o/", state.f_o.params());
    put_params(tensors, "g/", state.g.params());
    put_adam(tensors, "adam_m/", state.adam_m);
    put_adam(tensors, "adam_o/", state.adam_o);
    put_adam(tensors, "adam_g/", state.adam_g);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) w.tensor(name, t);
    w.str(history_csv(state.history));
    netpbm::write_file(path, w.bytes());
}

CoTrainState load_checkpoint(const std::filesystem::path& path) {
    const std::string source = path.string();
    Reader r(netpbm::read_file(path), source);
    char magic[8];
    r.raw(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("not a checkpoint (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
    CoTrainState s;
    try {
        s.config = Config::parse(r.str(), source + " (config echo)");
    } catch (const ConfigError& e) {
        throw DataError(e.what());
    }
    s.rng_state = r.str();
    s.iteration = r.u64();
    s.best_val = r.f64();
    const std::uint32_t count = r.u32();
    std::map<std::string, Tensor> all;
    for (std::uint32_t i = 0; i < count; ++i) all.insert(r.tensor());

    s.f_m = ClassifierModel::zeros(s.config.model);
    s.f_o = s.f_m;
    s.g = MonotoneWeightNet(s.config.refine.weight_net(), 0);
    ParamMap fm = take_prefix(all, "f_m/");
    ParamMap fo = take_prefix(all, "f_o/");
    ParamMap g = take_prefix(all, "g/");
    check_params(s.f_m.params(), fm, "prompted model", source);
    check_params(s.f_o.params(), fo, "non-prompted model", source);
    check_params(s.g.params(), g, "weight net", source);
    s.f_m.params() = std::move(fm);
    s.f_o.params() = std::move(fo);
    s.g.params() = std::move(g);
    const double lr = s.config.train.learning_rate;
    s.adam_m = take_adam(all, "adam_m/", lr, source);
    s.adam_o = take_adam(all, "adam_o/", lr, source);
    s.adam_g = take_adam(all, "adam_g/", lr, source);
    if (!all.empty()) r.fail("unexpected tensor '" + all.begin()->first + "'");
    s.history = parse_history(r.str(), source);
    if (!r.done()) r.fail("trailing bytes after checkpoint");
    return s;
}

CoTrainState load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected) {
    CoTrainState s = load_checkpoint(path);
    if (s.config.model != expected)
        throw DataError(path.string() + ": checkpoint architecture does not match the configured model");
    return s;
}

}  // namespace vapl
