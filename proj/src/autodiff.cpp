#include "rgame/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace rgame::ad {

namespace {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string out = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + ")";
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.node->value.shape != b.node->value.shape)
        throw ShapeError(std::string(op) + ": shape mismatch " +
                         shape_str(a.node->value.shape) + " vs " +
                         shape_str(b.node->value.shape));
}

void require_finite(const Tensor& t, const char* op) {
    for (double v : t.data)
        if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value");
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> s, double fill) : shape(std::move(s)) {
    data.assign(shape_size(shape), fill);
}

Tensor Tensor::vector_of(std::vector<double> values) {
    Tensor t;
    t.shape = {values.size()};
    t.data = std::move(values);
    return t;
}

Tensor Tensor::scalar(double v) {
    Tensor t;
    t.shape = {1};
    t.data = {v};
    return t;
}

Node* Tape::fresh(Tensor value) {
    nodes_.emplace_back();
    Node* n = &nodes_.back();
    n->grad = Tensor(value.shape, 0.0);
    n->value = std::move(value);
    return n;
}

Var Tape::input(Tensor value) {
    require_finite(value, "input");
    return wrap(fresh(std::move(value)));
}

Var Tape::param(Parameter& p) {
    Node* n = fresh(p.value);
    n->bound = &p;
    Parameter* bound = &p;
    n->back = [n, bound] {
        for (std::size_t i = 0; i < n->grad.size(); ++i)
            bound->grad[i] += n->grad[i];
    };
    return wrap(n);
}

Var Tape::add(Var a, Var b) {
    require_same_shape(a, b, "add");
    Tensor out = a.node->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.node->value[i];
    Node* n = fresh(std::move(out));
    Node* pa = a.node;
    Node* pb = b.node;
    n->back = [n, pa, pb] {
        for (std::size_t i = 0; i < n->grad.size(); ++i) {
            pa->grad[i] += n->grad[i];
            pb->grad[i] += n->grad[i];
        }
    };
    return wrap(n);
}

Var Tape::sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.node->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.node->value[i];
    Node* n = fresh(std::move(out));
    Node* pa = a.node;
    Node* pb = b.node;
    n->back = [n, pa, pb] {
        for (std::size_t i = 0; i < n->grad.size(); ++i) {
            pa->grad[i] += n->grad[i];
            pb->grad[i] -= n->grad[i];
        }
    };
    return wrap(n);
}

Var Tape::mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.node->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.node->value[i];
    Node* n = fresh(std::move(out));
    Node* pa = a.node;
    Node* pb = b.node;
    n->back = [n, pa, pb] {
        for (std::size_t i = 0; i < n->grad.size(); ++i) {
            pa->grad[i] += n->grad[i] * pb->value[i];
            pb->grad[i] += n->grad[i] * pa->value[i];
        }
    };
    return wrap(n);
}

Var Tape::scale(Var a, double c) {
    Tensor out = a.node->value;
    for (double& v : out.data) v *= c;
    Node* n = fresh(std::move(out));
    Node* pa = a.node;
    n->back = [n, pa, c] {
        for (std::size_t i = 0; i < n->grad.size(); ++i) pa->grad[i] += c * n->grad[i];
    };
    return wrap(n);
}

Var Tape::matvec(Var w, Var x) {
    const Tensor& wv = w.node->value;
    const Tensor& xv = x.node->value;
    if (wv.shape.size() != 2 || xv.shape.size() != 1 || wv.cols() != xv.size())
        throw ShapeError("matvec: expected (m,n) x (n), got " + shape_str(wv.shape) +
                         " x " + shape_str(xv.shape));
    const std::size_t m = wv.rows(), k = wv.cols();
    Tensor out({m}, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        const double* row = wv.data.data() + i * k;
        for (std::size_t j = 0; j < k; ++j) acc += row[j] * xv[j];
        out[i] = acc;
    }
    Node* n = fresh(std::move(out));
    Node* pw = w.node;
    Node* px = x.node;
    n->back = [n, pw, px, m, k] {
        for (std::size_t i = 0; i < m; ++i) {
            const double g = n->grad[i];
            if (g == 0.0) continue;
            double* wg = pw->grad.data.data() + i * k;
            const double* wrow = pw->value.data.data() + i * k;
            for (std::size_t j = 0; j < k; ++j) {
                wg[j] += g * px->value[j];
                px->grad[j] += g * wrow[j];
            }
        }
    };
    return wrap(n);
}

Var Tape::tanh(Var a) {
    Tensor out = a.node->value;
    for (double& v : out.data) v = std::tanh(v);
    Node* n = fresh(std::move(out));
    Node* pa = a.node;
    n->back = [n, pa] {
        for (std::size_t i = 0; i < n->grad.size(); ++i)
            pa->grad[i] += n->grad[i] * (1.0 - n->value[i] * n->value[i]);
    };
    return wrap(n);
}

Var Tape::sigmoid(Var a) {
    Tensor out = a.node->value;
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    Node* n = fresh(std::move(out));
    Node* pa = a.node;
    n->back = [n, pa] {
        for (std::size_t i = 0; i < n->grad.size(); ++i)
            pa->grad[i] += n->grad[i] * n->value[i] * (1.0 - n->value[i]);
    };
    return wrap(n);
}

Var Tape::concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    std::size_t total = 0;
    for (const Var& p : parts) {
        if (p.node->value.shape.size() != 1) throw ShapeError("concat: 1-d inputs only");
        total += p.size();
    }
    Tensor out({total}, 0.0);
    std::size_t at = 0;
    for (const Var& p : parts) {
        std::copy(p.node->value.data.begin(), p.node->value.data.end(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(at));
        at += p.size();
    }
    Node* n = fresh(std::move(out));
    std::vector<Node*> ps;
    ps.reserve(parts.size());
    for (const Var& p : parts) ps.push_back(p.node);
    n->back = [n, ps] {
        std::size_t at = 0;
        for (Node* p : ps) {
            for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += n->grad[at + i];
            at += p->grad.size();
        }
    };
    return wrap(n);
}

Var Tape::slice(Var a, std::size_t start, std::size_t len) {
    const Tensor& av = a.node->value;
    if (av.shape.size() != 1 || start + len > av.size())
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of " + shape_str(av.shape));
    Tensor out({len}, 0.0);
    std::copy(av.data.begin() + static_cast<std::ptrdiff_t>(start),
              av.data.begin() + static_cast<std::ptrdiff_t>(start + len), out.data.begin());
    Node* n = fresh(std::move(out));
    Node* pa = a.node;
    n->back = [n, pa, start, len] {
        for (std::size_t i = 0; i < len; ++i) pa->grad[start + i] += n->grad[i];
    };
    return wrap(n);
}

Var Tape::sum(Var a) {
    double acc = 0.0;
    for (double v : a.node->value.data) acc += v;
    Node* n = fresh(Tensor::scalar(acc));
    Node* pa = a.node;
    n->back = [n, pa] {
        for (std::size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += n->grad[0];
    };
    return wrap(n);
}

Var Tape::mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var Tape::dot(Var a, Var b) {
    require_same_shape(a, b, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.node->value[i] * b.node->value[i];
    Node* n = fresh(Tensor::scalar(acc));
    Node* pa = a.node;
    Node* pb = b.node;
    n->back = [n, pa, pb] {
        const double g = n->grad[0];
        for (std::size_t i = 0; i < pa->grad.size(); ++i) {
            pa->grad[i] += g * pb->value[i];
            pb->grad[i] += g * pa->value[i];
        }
    };
    return wrap(n);
}

std::vector<double> softmax_values(const std::vector<double>& logits) {
    double hi = logits[0];
    for (double v : logits) hi = std::max(hi, v);
    std::vector<double> out(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - hi);
        z += out[i];
    }
    for (double& v : out) v /= z;
    return out;
}

Var Tape::softmax(Var logits) {
    require_finite(logits.node->value, "softmax");
    if (logits.node->value.shape.size() != 1) throw ShapeError("softmax: 1-d input only");
    Tensor out = Tensor::vector_of(softmax_values(logits.node->value.data));
    Node* n = fresh(std::move(out));
    Node* pa = logits.node;
    n->back = [n, pa] {
        double gdotp = 0.0;
        for (std::size_t i = 0; i < n->grad.size(); ++i) gdotp += n->grad[i] * n->value[i];
        for (std::size_t i = 0; i < n->grad.size(); ++i)
            pa->grad[i] += n->value[i] * (n->grad[i] - gdotp);
    };
    return wrap(n);
}

Var Tape::log_softmax(Var logits) {
    require_finite(logits.node->value, "log_softmax");
    if (logits.node->value.shape.size() != 1) throw ShapeError("log_softmax: 1-d input only");
    const std::vector<double>& x = logits.node->value.data;
    double hi = x[0];
    for (double v : x) hi = std::max(hi, v);
    double z = 0.0;
    for (double v : x) z += std::exp(v - hi);
    const double logz = hi + std::log(z);
    Tensor out({x.size()}, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - logz;
    Node* n = fresh(std::move(out));
    Node* pa = logits.node;
    n->back = [n, pa] {
        double gsum = 0.0;
        for (double g : n->grad.data) gsum += g;
        for (std::size_t i = 0; i < n->grad.size(); ++i)
            pa->grad[i] += n->grad[i] - gsum * std::exp(n->value[i]);
    };
    return wrap(n);
}

Var Tape::select(Var a, std::size_t index) {
    if (a.node->value.shape.size() != 1 || index >= a.size())
        throw ShapeError("select: index " + std::to_string(index) + " out of " +
                         shape_str(a.node->value.shape));
    Node* n = fresh(Tensor::scalar(a.node->value[index]));
    Node* pa = a.node;
    n->back = [n, pa, index] { pa->grad[index] += n->grad[0]; };
    return wrap(n);
}

Var Tape::embedding(Var table, std::size_t row) {
    const Tensor& tv = table.node->value;
    if (tv.shape.size() != 2 || row >= tv.rows())
        throw ShapeError("embedding: row " + std::to_string(row) + " out of " +
                         shape_str(tv.shape));
    const std::size_t width = tv.cols();
    Tensor out({width}, 0.0);
    std::copy(tv.data.begin() + static_cast<std::ptrdiff_t>(row * width),
              tv.data.begin() + static_cast<std::ptrdiff_t>((row + 1) * width),
              out.data.begin());
    Node* n = fresh(std::move(out));
    Node* pt = table.node;
    n->back = [n, pt, row, width] {
        for (std::size_t i = 0; i < width; ++i) pt->grad[row * width + i] += n->grad[i];
    };
    return wrap(n);
}

Var Tape::entropy(Var probs) {
    const Tensor& pv = probs.node->value;
    if (pv.shape.size() != 1) throw ShapeError("entropy: 1-d input only");
    double total = 0.0;
    for (double p : pv.data) {
        if (!(p >= 0.0)) throw NumericError("entropy: negative probability");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-6)
        throw NumericError("entropy: probabilities sum to " + std::to_string(total));
    double h = 0.0;
    for (double p : pv.data)
        if (p > 0.0) h -= p * std::log(p);
    Node* n = fresh(Tensor::scalar(h));
    Node* pa = probs.node;
    n->back = [n, pa] {
        const double g = n->grad[0];
        for (std::size_t i = 0; i < pa->grad.size(); ++i) {
            const double p = std::max(pa->value[i], 1e-300);
            pa->grad[i] += g * (-(std::log(p) + 1.0));
        }
    };
    return wrap(n);
}

std::pair<std::size_t, Var> Tape::sample_categorical(Var logits, Rng& rng) {
    const std::vector<double> p = softmax_values(logits.node->value.data);
    const double u = rng.uniform01();
    double acc = 0.0;
    std::size_t idx = p.size() - 1;
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) {
            idx = i;
            break;
        }
    }
    Var lp = select(log_softmax(logits), idx);
    return {idx, lp};
}

std::size_t Tape::argmax(Var logits) const {
    const std::vector<double>& v = logits.node->value.data;
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: loss from another tape");
    if (loss.size() != 1) throw ShapeError("backward: loss must be scalar");
    require_finite(loss.node->value, "backward");
    loss.node->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
        if (it->back) it->back();
}

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Parameter* p : params_) {
        m_.emplace_back(p->value.shape, 0.0);
        v_.emplace_back(p->value.shape, 0.0);
    }
}

void AdamW::step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Parameter& p = *params_[k];
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.value[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps));
            p.value[i] -= cfg_.lr * cfg_.weight_decay * p.value[i];
        }
    }
}

void AdamW::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

void init_normal(Parameter& p, Rng& rng, double stddev) {
    for (double& v : p.value.data) v = stddev * rng.normal();
}

void init_zeros(Parameter& p) {
    std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
}

void save_checkpoint(const std::vector<Parameter*>& params, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    out << "rgame-checkpoint 1\n" << params.size() << "\n";
    char buf[64];
    for (const Parameter* p : params) {
        out << p->name << " " << p->value.shape.size();
        for (std::size_t d : p->value.shape) out << " " << d;
        out << "\n";
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%a", p->value[i]);
            out << buf << (i + 1 == p->value.size() ? "" : " ");
        }
        out << "\n";
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

void load_checkpoint(const std::vector<Parameter*>& params, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "rgame-checkpoint" || version != 1)
        throw std::runtime_error("unrecognised checkpoint header in " + path);
    std::size_t count = 0;
    in >> count;
    if (count != params.size())
        throw std::runtime_error("checkpoint has " + std::to_string(count) +
                                 " parameters, expected " + std::to_string(params.size()));
    for (Parameter* p : params) {
        std::string name;
        std::size_t ndim = 0;
        in >> name >> ndim;
        std::vector<std::size_t> shape(ndim);
        for (std::size_t& d : shape) in >> d;
        if (name != p->name || shape != p->value.shape)
            throw std::runtime_error("checkpoint parameter mismatch at " + p->name);
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            std::string tok;
            in >> tok;
            p->value[i] = std::strtod(tok.c_str(), nullptr);
        }
    }
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
}

std::uint64_t parameter_hash(const std::vector<Parameter*>& params) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const Parameter* p : params) {
        h = fnv1a(p->name.data(), p->name.size(), h);
        for (double v : p->value.data) h = fnv1a(&v, sizeof v, h);
    }
    return h;
}

}  // namespace rgame::ad
