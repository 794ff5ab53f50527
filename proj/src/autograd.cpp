#include "vapl/autograd.hpp"

#include <cmath>

#include "vapl/errors.hpp"
#include "vapl/kernels.hpp"

namespace vapl {

const Tensor& Var::value() const {
    if (!tape_) throw Error("use of an unbound Var");
    return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

const Tensor& Gradients::at(const std::string& name) const {
    auto it = grads_.find(name);
    if (it == grads_.end()) throw Error("parameter '" + name + "' is not on the tape");
    return it->second;
}

Gradients Gradients::subset(const std::string& prefix) const {
    Gradients out;
    for (const auto& [name, g] : grads_)
        if (name.starts_with(prefix)) out.grads_.emplace(name.substr(prefix.size()), g);
    return out;
}

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return push(Node{std::move(value), {}, {}, false}); }

Var Tape::param(const std::string& name, const Tensor& value) {
    if (param_ids_.contains(name)) throw Error("parameter '" + name + "' registered twice on one tape");
    Var v = push(Node{value, {}, {}, true});
    param_ids_[name] = v.id();
    return v;
}

Var Tape::variable(Tensor value) { return push(Node{std::move(value), {}, {}, true}); }

Var Tape::record(Tensor value, std::vector<Var> parents, BackwardFn backward) {
    Node node;
    node.value = std::move(value);
    for (const Var& p : parents) {
        if (&p.tape() != this) throw Error("op mixes vars from different tapes");
        node.parents.push_back(p.id());
        node.requires_grad = node.requires_grad || p.requires_grad();
    }
    if (node.requires_grad) node.backward = std::move(backward);
    return push(std::move(node));
}

Gradients Tape::backward(Var loss) {
    if (&loss.tape() != this) throw Error("loss was not computed on this tape");
    if (loss.value().size() != 1) throw ShapeError("backward needs a single-element loss, got " + shape_str(loss.shape()));
    grads_.assign(nodes_.size(), Tensor());
    grads_[loss.id()] = Tensor(loss.shape(), 1.0);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.requires_grad || !node.backward || grads_[i].empty()) continue;
        std::vector<const Tensor*> inputs;
        std::vector<Tensor*> gins;
        for (std::size_t p : node.parents) {
            inputs.push_back(&nodes_[p].value);
            if (nodes_[p].requires_grad) {
                if (grads_[p].empty()) grads_[p] = Tensor::like(nodes_[p].value);
                gins.push_back(&grads_[p]);
            } else {
                gins.push_back(nullptr);
            }
        }
        node.backward(grads_[i], inputs, gins);
    }
    Gradients out;
    for (const auto& [name, id] : param_ids_) {
        out.grads_[name] = grads_[id].empty() ? Tensor::like(nodes_[id].value) : grads_[id];
        out.grads_[name].check_finite("gradient of " + name);
    }
    return out;
}

const Tensor& Tape::grad(Var v) const {
    static const Tensor none;
    if (v.id() >= grads_.size()) throw Error("grad() before backward()");
    return grads_[v.id()].empty() ? none : grads_[v.id()];
}

namespace ag {

namespace {

void same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Var add(Var a, Var b) {
    same_shape(a, b, "add");
    Tensor out = a.value();
    out += b.value();
    return a.tape().record(std::move(out), {a, b}, [](const Tensor& g, const auto&, const auto& gins) {
        for (Tensor* gi : gins)
            if (gi) *gi += g;
    });
}

Var sub(Var a, Var b) {
    same_shape(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return a.tape().record(std::move(out), {a, b}, [](const Tensor& g, const auto&, const auto& gins) {
        if (gins[0]) *gins[0] += g;
        if (gins[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*gins[1])[i] -= g[i];
    });
}

Var mul(Var a, Var b) {
    same_shape(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return a.tape().record(std::move(out), {a, b}, [](const Tensor& g, const auto& in, const auto& gins) {
        for (int k = 0; k < 2; ++k)
            if (gins[k])
                for (std::size_t i = 0; i < g.size(); ++i) (*gins[k])[i] += g[i] * (*in[1 - k])[i];
    });
}

Var scale(Var a, double s) {
    Tensor out = a.value();
    out *= s;
    return a.tape().record(std::move(out), {a}, [s](const Tensor& g, const auto&, const auto& gins) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gins[0])[i] += s * g[i];
    });
}

Var sum(Var a) {
    return a.tape().record(Tensor::scalar(a.value().sum()), {a}, [](const Tensor& g, const auto&, const auto& gins) {
        for (double& v : gins[0]->vec()) v += g[0];
    });
}

Var square_sum(Var a) {
    double s = 0.0;
    for (double v : a.value().vec()) s += v * v;
    return a.tape().record(Tensor::scalar(s), {a}, [](const Tensor& g, const auto& in, const auto& gins) {
        for (std::size_t i = 0; i < in[0]->size(); ++i) (*gins[0])[i] += 2.0 * (*in[0])[i] * g[0];
    });
}

Var abs(Var a) {
    Tensor out = a.value();
    for (double& v : out.vec()) v = std::fabs(v);
    return a.tape().record(std::move(out), {a}, [](const Tensor& g, const auto& in, const auto& gins) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = (*in[0])[i];
            (*gins[0])[i] += g[i] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
        }
    });
}

Var relu(Var a) {
    return a.tape().record(kernels::relu(a.value()), {a}, [](const Tensor& g, const auto& in, const auto& gins) {
        for (std::size_t i = 0; i < g.size(); ++i)
            if ((*in[0])[i] > 0.0) (*gins[0])[i] += g[i];
    });
}

Var reshape(Var a, Shape shape) {
    return a.tape().record(a.value().reshaped(std::move(shape)), {a},
                           [](const Tensor& g, const auto&, const auto& gins) {
                               for (std::size_t i = 0; i < g.size(); ++i) (*gins[0])[i] += g[i];
                           });
}

Var flatten(Var a) {
    if (a.shape().empty()) throw ShapeError("flatten of a rank-0 tensor");
    const std::size_t rows = a.shape()[0];
    return reshape(a, {rows, rows ? a.value().size() / rows : 0});
}

Var conv2d(Var x, Var w, Var b, std::size_t pad) {
    return x.tape().record(kernels::conv2d(x.value(), w.value(), b.value(), pad), {x, w, b},
                           [pad](const Tensor& g, const auto& in, const auto& gins) {
                               kernels::conv2d_backward(*in[0], *in[1], g, pad, gins[0], gins[1], gins[2]);
                           });
}

Var maxpool2(Var x) {
    return x.tape().record(kernels::maxpool2(x.value()), {x}, [](const Tensor& g, const auto& in, const auto& gins) {
        kernels::maxpool2_backward(*in[0], g, *gins[0]);
    });
}

Var linear(Var x, Var w, Var b) {
    return x.tape().record(kernels::linear(x.value(), w.value(), b.value()), {x, w, b},
                           [](const Tensor& g, const auto& in, const auto& gins) {
                               kernels::linear_backward(*in[0], *in[1], g, gins[0], gins[1], gins[2]);
                           });
}

Var matmul_t(Var x, Var w) {
    static const Tensor no_bias;
    return x.tape().record(kernels::linear(x.value(), w.value(), no_bias), {x, w},
                           [](const Tensor& g, const auto& in, const auto& gins) {
                               kernels::linear_backward(*in[0], *in[1], g, gins[0], gins[1], nullptr);
                           });
}

Var exp(Var a) {
    Tensor out = a.value();
    for (double& v : out.vec()) v = std::exp(v);
    out.check_finite("exp");
    return a.tape().record(out, {a}, [out](const Tensor& g, const auto&, const auto& gins) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gins[0])[i] += g[i] * out[i];
    });
}

Var one_plus_tanh(Var a) {
    Tensor out = a.value();
    for (double& v : out.vec()) v = 1.0 + std::tanh(v);
    return a.tape().record(std::move(out), {a}, [](const Tensor& g, const auto& in, const auto& gins) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double t = std::tanh((*in[0])[i]);
            (*gins[0])[i] += g[i] * (1.0 - t * t);
        }
    });
}

Var mask_channels(Var image, Var mask) {
    return image.tape().record(
        kernels::mask_channels(image.value(), mask.value()), {image, mask},
        [](const Tensor& g, const auto& in, const auto& gins) {
            const Tensor& img = *in[0];
            const Tensor& m = *in[1];
            const std::size_t B = img.dim(0), C = img.dim(1), HW = img.dim(2) * img.dim(3);
            for (std::size_t n = 0; n < B; ++n)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t i = 0; i < HW; ++i) {
                        const std::size_t ii = (n * C + c) * HW + i, mi = n * HW + i;
                        if (gins[0]) (*gins[0])[ii] += g[ii] * m[mi];
                        if (gins[1]) (*gins[1])[mi] += g[ii] * img[ii];
                    }
        });
}

Var cross_entropy_sum(Var logits, const Tensor& onehot, double eps) {
    if (logits.shape() != onehot.shape())
        throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs labels " +
                         shape_str(onehot.shape()));
    Tensor probs = kernels::softmax_rows(logits.value());
    const Tensor logp = kernels::log_softmax_rows(logits.value());
    const double log_eps = std::log(eps);
    double loss = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i)
        if (onehot[i] != 0.0) loss -= onehot[i] * (probs[i] > eps ? logp[i] : log_eps);
    return logits.tape().record(
        Tensor::scalar(loss), {logits}, [probs, onehot, eps](const Tensor& g, const auto&, const auto& gins) {
            const std::size_t B = probs.dim(0), K = probs.dim(1);
            for (std::size_t n = 0; n < B; ++n) {
                // d/dz of -y_a log p_a is y_a (p - e_a); zero where the clamp is active
                for (std::size_t a = 0; a < K; ++a) {
                    const double y = onehot[n * K + a];
                    if (y == 0.0 || probs[n * K + a] <= eps) continue;
                    for (std::size_t k = 0; k < K; ++k)
                        (*gins[0])[n * K + k] += g[0] * y * (probs[n * K + k] - (k == a ? 1.0 : 0.0));
                }
            }
        });
}

Var add_n(const std::vector<Var>& terms) {
    if (terms.empty()) throw Error("add_n of zero terms");
    double s = 0.0;
    for (const Var& t : terms) s += t.value().item();
    return terms[0].tape().record(Tensor::scalar(s), terms, [](const Tensor& g, const auto&, const auto& gins) {
        for (Tensor* gi : gins)
            if (gi) (*gi)[0] += g[0];
    });
}

}  // namespace ag

}  // namespace vapl
