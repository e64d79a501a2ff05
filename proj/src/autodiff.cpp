#include "powertune/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace powertune::ad {

void Tape::check_same_size(int a, int b, const char* what) const {
    if (nodes_[a].val.size() != nodes_[b].val.size())
        throw RejectedInput(std::string(what) + ": operand size mismatch");
}

int Tape::constant(std::vector<double> v) {
    Node n;
    n.op = Op::Const;
    n.val = std::move(v);
    return push(std::move(n));
}

int Tape::param(const std::string& name) {
    Node n;
    n.op = Op::Param;
    n.bias = params_->layout.at(name);
    n.val.assign(params_->values.begin() + std::ptrdiff_t(n.bias.offset),
                 params_->values.begin() + std::ptrdiff_t(n.bias.offset + n.bias.size()));
    return push(std::move(n));
}

int Tape::matvec(const std::string& w_name, int x) {
    Node n;
    n.op = Op::MatVec;
    n.w = params_->layout.at(w_name);
    n.a = x;
    if (nodes_[x].val.size() != n.w.cols)
        throw RejectedInput("matvec: input size does not match weight columns");
    n.val.assign(n.w.rows, 0.0);
    const double* W = params_->values.data() + n.w.offset;
    const double* xv = nodes_[x].val.data();
    for (std::size_t r = 0; r < n.w.rows; ++r) {
        double acc = 0.0;
        const double* row = W + r * n.w.cols;
        for (std::size_t c = 0; c < n.w.cols; ++c) acc += row[c] * xv[c];
        n.val[r] = acc;
    }
    return push(std::move(n));
}

int Tape::affine(const std::string& w_name, const std::string& b_name, int x) {
    Node n;
    n.op = Op::Affine;
    n.w = params_->layout.at(w_name);
    n.bias = params_->layout.at(b_name);
    n.a = x;
    if (nodes_[x].val.size() != n.w.cols)
        throw RejectedInput("affine: input size does not match weight columns");
    if (n.bias.size() != n.w.rows)
        throw RejectedInput("affine: bias size does not match weight rows");
    n.val.assign(n.w.rows, 0.0);
    const double* W = params_->values.data() + n.w.offset;
    const double* b = params_->values.data() + n.bias.offset;
    const double* xv = nodes_[x].val.data();
    for (std::size_t r = 0; r < n.w.rows; ++r) {
        double acc = b[r];
        const double* row = W + r * n.w.cols;
        for (std::size_t c = 0; c < n.w.cols; ++c) acc += row[c] * xv[c];
        n.val[r] = acc;
    }
    return push(std::move(n));
}

int Tape::add(int a, int b) {
    check_same_size(a, b, "add");
    Node n;
    n.op = Op::Add;
    n.a = a;
    n.b = b;
    n.val = nodes_[a].val;
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] += nodes_[b].val[i];
    return push(std::move(n));
}

int Tape::sub(int a, int b) {
    check_same_size(a, b, "sub");
    Node n;
    n.op = Op::Sub;
    n.a = a;
    n.b = b;
    n.val = nodes_[a].val;
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] -= nodes_[b].val[i];
    return push(std::move(n));
}

int Tape::mul(int a, int b) {
    check_same_size(a, b, "mul");
    Node n;
    n.op = Op::Mul;
    n.a = a;
    n.b = b;
    n.val = nodes_[a].val;
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] *= nodes_[b].val[i];
    return push(std::move(n));
}

int Tape::div(int a, int b) {
    check_same_size(a, b, "div");
    Node n;
    n.op = Op::Div;
    n.a = a;
    n.b = b;
    n.val = nodes_[a].val;
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] /= nodes_[b].val[i];
    return push(std::move(n));
}

int Tape::add_const(int a, const std::vector<double>& c) {
    if (nodes_[a].val.size() != c.size()) throw RejectedInput("add_const: size mismatch");
    Node n;
    n.op = Op::AddConst;
    n.a = a;
    n.aux = c;
    n.val = nodes_[a].val;
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] += c[i];
    return push(std::move(n));
}

int Tape::mul_const(int a, const std::vector<double>& c) {
    if (nodes_[a].val.size() != c.size()) throw RejectedInput("mul_const: size mismatch");
    Node n;
    n.op = Op::MulConst;
    n.a = a;
    n.aux = c;
    n.val = nodes_[a].val;
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] *= c[i];
    return push(std::move(n));
}

int Tape::scale(int a, double s) {
    Node n;
    n.op = Op::Scale;
    n.a = a;
    n.c0 = s;
    n.val = nodes_[a].val;
    for (double& v : n.val) v *= s;
    return push(std::move(n));
}

int Tape::add_scalar(int a, double s) {
    Node n;
    n.op = Op::Scale;  // same backward as identity-times-one
    n.a = a;
    n.c0 = 1.0;
    n.val = nodes_[a].val;
    for (double& v : n.val) v += s;
    return push(std::move(n));
}

int Tape::rsub_const(double c, int a) {
    Node n;
    n.op = Op::RSubConst;
    n.a = a;
    n.c0 = c;
    n.val = nodes_[a].val;
    for (double& v : n.val) v = c - v;
    return push(std::move(n));
}

int Tape::tanh_(int a) {
    Node n;
    n.op = Op::Tanh;
    n.a = a;
    n.val = nodes_[a].val;
    for (double& v : n.val) v = std::tanh(v);
    return push(std::move(n));
}

int Tape::sigmoid_(int a) {
    Node n;
    n.op = Op::Sigmoid;
    n.a = a;
    n.val = nodes_[a].val;
    for (double& v : n.val) v = 1.0 / (1.0 + std::exp(-v));
    return push(std::move(n));
}

int Tape::exp_(int a) {
    Node n;
    n.op = Op::Exp;
    n.a = a;
    n.val = nodes_[a].val;
    for (double& v : n.val) v = std::exp(v);
    return push(std::move(n));
}

int Tape::log_(int a) {
    Node n;
    n.op = Op::Log;
    n.a = a;
    n.val = nodes_[a].val;
    for (double& v : n.val) v = std::log(v);
    return push(std::move(n));
}

int Tape::clamp_const(int a, double lo, double hi) {
    Node n;
    n.op = Op::ClampConst;
    n.a = a;
    n.c0 = lo;
    n.c1 = hi;
    n.val = nodes_[a].val;
    for (double& v : n.val) v = std::clamp(v, lo, hi);
    return push(std::move(n));
}

int Tape::min_(int a, int b) {
    check_same_size(a, b, "min");
    Node n;
    n.op = Op::Min;
    n.a = a;
    n.b = b;
    n.val = nodes_[a].val;
    for (std::size_t i = 0; i < n.val.size(); ++i)
        n.val[i] = std::min(n.val[i], nodes_[b].val[i]);
    return push(std::move(n));
}

int Tape::sum(int a) {
    Node n;
    n.op = Op::Sum;
    n.a = a;
    double acc = 0.0;
    for (double v : nodes_[a].val) acc += v;
    n.val = {acc};
    return push(std::move(n));
}

int Tape::dot(int a, int b) {
    check_same_size(a, b, "dot");
    Node n;
    n.op = Op::Dot;
    n.a = a;
    n.b = b;
    double acc = 0.0;
    for (std::size_t i = 0; i < nodes_[a].val.size(); ++i)
        acc += nodes_[a].val[i] * nodes_[b].val[i];
    n.val = {acc};
    return push(std::move(n));
}

double Tape::scalar(int node) const {
    if (nodes_[node].val.size() != 1) throw RejectedInput("scalar: node is not size 1");
    return nodes_[node].val[0];
}

void Tape::backward(int scalar_node) {
    if (nodes_[scalar_node].val.size() != 1)
        throw RejectedInput("backward: seed node must be scalar");
    for (auto& n : nodes_) n.adj.assign(n.val.size(), 0.0);
    nodes_[scalar_node].adj[0] = 1.0;

    for (int i = int(nodes_.size()) - 1; i >= 0; --i) {
        Node& n = nodes_[i];
        bool any = false;
        for (double a : n.adj)
            if (a != 0.0) { any = true; break; }
        if (!any) continue;
        switch (n.op) {
            case Op::Const:
                break;
            case Op::Param: {
                double* g = grad_->data() + n.bias.offset;
                for (std::size_t k = 0; k < n.adj.size(); ++k) g[k] += n.adj[k];
                break;
            }
            case Op::MatVec:
            case Op::Affine: {
                const double* W = params_->values.data() + n.w.offset;
                double* gW = grad_->data() + n.w.offset;
                Node& x = nodes_[n.a];
                for (std::size_t r = 0; r < n.w.rows; ++r) {
                    const double dy = n.adj[r];
                    if (dy == 0.0) continue;
                    const double* row = W + r * n.w.cols;
                    double* grow = gW + r * n.w.cols;
                    for (std::size_t c = 0; c < n.w.cols; ++c) {
                        grow[c] += dy * x.val[c];
                        x.adj[c] += dy * row[c];
                    }
                }
                if (n.op == Op::Affine) {
                    double* gb = grad_->data() + n.bias.offset;
                    for (std::size_t r = 0; r < n.w.rows; ++r) gb[r] += n.adj[r];
                }
                break;
            }
            case Op::Add:
                for (std::size_t k = 0; k < n.adj.size(); ++k) {
                    nodes_[n.a].adj[k] += n.adj[k];
                    nodes_[n.b].adj[k] += n.adj[k];
                }
                break;
            case Op::Sub:
                for (std::size_t k = 0; k < n.adj.size(); ++k) {
                    nodes_[n.a].adj[k] += n.adj[k];
                    nodes_[n.b].adj[k] -= n.adj[k];
                }
                break;
            case Op::Mul:
                for (std::size_t k = 0; k < n.adj.size(); ++k) {
                    nodes_[n.a].adj[k] += n.adj[k] * nodes_[n.b].val[k];
                    nodes_[n.b].adj[k] += n.adj[k] * nodes_[n.a].val[k];
                }
                break;
            case Op::Div:
                for (std::size_t k = 0; k < n.adj.size(); ++k) {
                    const double bv = nodes_[n.b].val[k];
                    nodes_[n.a].adj[k] += n.adj[k] / bv;
                    nodes_[n.b].adj[k] -= n.adj[k] * n.val[k] / bv;
                }
                break;
            case Op::AddConst:
                for (std::size_t k = 0; k < n.adj.size(); ++k) nodes_[n.a].adj[k] += n.adj[k];
                break;
            case Op::MulConst:
                for (std::size_t k = 0; k < n.adj.size(); ++k)
                    nodes_[n.a].adj[k] += n.adj[k] * n.aux[k];
                break;
            case Op::Scale:
                for (std::size_t k = 0; k < n.adj.size(); ++k)
                    nodes_[n.a].adj[k] += n.adj[k] * n.c0;
                break;
            case Op::RSubConst:
                for (std::size_t k = 0; k < n.adj.size(); ++k) nodes_[n.a].adj[k] -= n.adj[k];
                break;
            case Op::Tanh:
                for (std::size_t k = 0; k < n.adj.size(); ++k)
                    nodes_[n.a].adj[k] += n.adj[k] * (1.0 - n.val[k] * n.val[k]);
                break;
            case Op::Sigmoid:
                for (std::size_t k = 0; k < n.adj.size(); ++k)
                    nodes_[n.a].adj[k] += n.adj[k] * n.val[k] * (1.0 - n.val[k]);
                break;
            case Op::Exp:
                for (std::size_t k = 0; k < n.adj.size(); ++k)
                    nodes_[n.a].adj[k] += n.adj[k] * n.val[k];
                break;
            case Op::Log:
                for (std::size_t k = 0; k < n.adj.size(); ++k)
                    nodes_[n.a].adj[k] += n.adj[k] / nodes_[n.a].val[k];
                break;
            case Op::ClampConst:
                for (std::size_t k = 0; k < n.adj.size(); ++k) {
                    const double x = nodes_[n.a].val[k];
                    if (x > n.c0 && x < n.c1) nodes_[n.a].adj[k] += n.adj[k];
                }
                break;
            case Op::Min:
                for (std::size_t k = 0; k < n.adj.size(); ++k) {
                    if (nodes_[n.a].val[k] <= nodes_[n.b].val[k])
                        nodes_[n.a].adj[k] += n.adj[k];
                    else
                        nodes_[n.b].adj[k] += n.adj[k];
                }
                break;
            case Op::Sum:
                for (std::size_t k = 0; k < nodes_[n.a].val.size(); ++k)
                    nodes_[n.a].adj[k] += n.adj[0];
                break;
            case Op::Dot:
                for (std::size_t k = 0; k < nodes_[n.a].val.size(); ++k) {
                    nodes_[n.a].adj[k] += n.adj[0] * nodes_[n.b].val[k];
                    nodes_[n.b].adj[k] += n.adj[0] * nodes_[n.a].val[k];
                }
                break;
        }
    }
}

double eval_loss(const LossBuilder& loss, const ParamVector& params) {
    std::vector<double> scratch(params.size(), 0.0);
    Tape tape(params, scratch);
    const int node = loss(tape);
    return tape.scalar(node);
}

ParamVector grad(const LossBuilder& loss, const ParamVector& params, double* loss_value) {
    ParamVector g(params.layout);
    Tape tape(params, g.values);
    const int node = loss(tape);
    const double value = tape.scalar(node);
    if (!std::isfinite(value)) throw NumericError("grad: loss is not finite");
    tape.backward(node);
    if (loss_value) *loss_value = value;
    return g;
}

FiniteDiffReport finite_diff_check(const LossBuilder& loss, const ParamVector& params,
                                   double tolerance, int n_coords, std::uint64_t seed,
                                   double h) {
    const ParamVector g = grad(loss, params);
    Rng rng(seed ^ 0x5eedf00dULL);

    FiniteDiffReport report;
    report.coords_checked = 0;
    const std::size_t total = params.size();
    const int checks = int(std::min<std::size_t>(std::max(n_coords, 32), total));

    ParamVector p = params;
    for (int k = 0; k < checks; ++k) {
        const std::size_t i = total <= std::size_t(checks)
                                  ? std::size_t(k)
                                  : std::size_t(rng.uniform_int(total));
        const double orig = p.values[i];
        p.values[i] = orig + h;
        const double fp = eval_loss(loss, p);
        p.values[i] = orig - h;
        const double fm = eval_loss(loss, p);
        p.values[i] = orig;

        const double fd = (fp - fm) / (2.0 * h);
        const double diff = std::abs(fd - g.values[i]);
        // The floor keeps central-difference truncation noise on near-zero
        // coordinates from registering as large relative errors.
        const double scale = std::max({std::abs(fd), std::abs(g.values[i]), 1e-6});
        const double rel = diff / scale;
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_coord_abs_diff = diff;
        }
        ++report.coords_checked;
    }
    report.pass = report.max_rel_error <= tolerance;
    return report;
}

}  // namespace powertune::ad
