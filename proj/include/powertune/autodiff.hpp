#pragma once

#include <functional>
#include <vector>

#include "powertune/params.hpp"

namespace powertune::ad {

// Reverse-mode tape over vector-valued nodes. Parameters enter through
// param/matvec/affine nodes that reference slices of a bound ParamVector;
// their adjoints are accumulated straight into the bound gradient vector.
class Tape {
public:
    Tape(const ParamVector& params, std::vector<double>& grad)
        : params_(&params), grad_(&grad) {}

    int constant(std::vector<double> v);
    int constant(double x) { return constant(std::vector<double>{x}); }

    // Leaf that reads a named parameter slice as a plain vector.
    int param(const std::string& name);

    // y = W x (+ b). W is a rows x cols parameter matrix, x has size cols.
    int matvec(const std::string& w_name, int x);
    int affine(const std::string& w_name, const std::string& b_name, int x);

    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);  // hadamard
    int div(int a, int b);  // elementwise
    int add_const(int a, const std::vector<double>& c);
    int mul_const(int a, const std::vector<double>& c);
    int scale(int a, double s);
    int add_scalar(int a, double s);
    int rsub_const(double c, int a);  // c - a, elementwise

    int tanh_(int a);
    int sigmoid_(int a);
    int exp_(int a);
    int log_(int a);

    // Elementwise clamp against constants; gradient is zero where clamped.
    int clamp_const(int a, double lo, double hi);
    // Elementwise min; gradient flows to the smaller operand (ties to a).
    int min_(int a, int b);

    int sum(int a);        // -> size 1
    int dot(int a, int b); // -> size 1

    const std::vector<double>& value(int node) const { return nodes_[node].val; }
    double scalar(int node) const;
    std::size_t size(int node) const { return nodes_[node].val.size(); }

    // Seeds d(scalar node) = 1 and accumulates parameter adjoints into the
    // bound gradient vector (added on top of whatever is already there).
    void backward(int scalar_node);

    void clear() { nodes_.clear(); }

private:
    enum class Op {
        Const, Param, MatVec, Affine, Add, Sub, Mul, Div, AddConst, MulConst,
        Scale, RSubConst, Tanh, Sigmoid, Exp, Log, ClampConst, Min, Sum, Dot
    };

    struct Node {
        Op op;
        int a = -1;
        int b = -1;
        double c0 = 0.0;
        double c1 = 0.0;
        SliceInfo w;       // weight slice for MatVec/Affine
        SliceInfo bias;    // bias slice for Affine, param slice for Param
        std::vector<double> aux;  // constants for AddConst/MulConst
        std::vector<double> val;
        std::vector<double> adj;
    };

    int push(Node n) {
        nodes_.push_back(std::move(n));
        return int(nodes_.size()) - 1;
    }
    void check_same_size(int a, int b, const char* what) const;

    const ParamVector* params_;
    std::vector<double>* grad_;
    std::vector<Node> nodes_;
};

// Builds a loss on the tape and returns the scalar node id.
using LossBuilder = std::function<int(Tape&)>;

// Value and gradient of a tape-built scalar loss at the given parameters.
double eval_loss(const LossBuilder& loss, const ParamVector& params);
ParamVector grad(const LossBuilder& loss, const ParamVector& params,
                 double* loss_value = nullptr);

struct FiniteDiffReport {
    bool pass = false;
    double max_rel_error = 0.0;
    double worst_coord_abs_diff = 0.0;
    int coords_checked = 0;
};

// Central-difference audit of grad() on a random coordinate subset.
FiniteDiffReport finite_diff_check(const LossBuilder& loss, const ParamVector& params,
                                   double tolerance, int n_coords = 32,
                                   std::uint64_t seed = 0, double h = 1e-5);

}  // namespace powertune::ad
