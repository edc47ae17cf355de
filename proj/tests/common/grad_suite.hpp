#pragma once

// Finite-difference gradient oracle shared by the unit tests and the
// acceptance suite. For every op kind it builds small random graphs, seeds
// backward with a random output gradient and compares input gradients against
// central differences of g(x) = <seed, op(x)>.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gridshield/graph.hpp"
#include "gridshield/tensor.hpp"

namespace gradsuite {

using gridshield::Graph;
using gridshield::OpKind;
using gridshield::Rng;
using gridshield::Tensor;

struct OpGradReport {
    std::string op;
    double max_rel_err = 0.0;
    std::size_t cases = 0;
    std::size_t coords = 0;
};

namespace detail {

inline std::vector<float> rand_vec(Rng& rng, std::size_t n, float lo, float hi) {
    std::uniform_real_distribution<float> u(lo, hi);
    std::vector<float> v(n);
    for (float& x : v) x = u(rng);
    return v;
}

// away from the relu kink
inline std::vector<float> rand_vec_signed(Rng& rng, std::size_t n, float lo, float hi) {
    std::uniform_real_distribution<float> u(lo, hi);
    std::bernoulli_distribution sign(0.5);
    std::vector<float> v(n);
    for (float& x : v) x = (sign(rng) ? 1.0f : -1.0f) * u(rng);
    return v;
}

struct Case {
    // rebuilds the graph for given primary-input values, returns output values
    std::function<std::vector<float>(const std::vector<float>&)> forward;
    // analytic gradient of <seed, out> w.r.t. the primary input
    std::function<std::vector<float>(const std::vector<float>&, const std::vector<float>&)> grad;
    std::size_t in_size = 0;
    std::size_t out_size = 0;
    std::vector<float> x0;
};

inline double check_case(const Case& c, Rng& rng, double h, double floor, std::size_t& coords) {
    std::uniform_real_distribution<float> useed(-1.0f, 1.0f);
    std::vector<float> seed(c.out_size);
    for (float& s : seed) s = useed(rng);

    const std::vector<float> analytic = c.grad(c.x0, seed);
    auto g = [&](const std::vector<float>& x) {
        const std::vector<float> out = c.forward(x);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) acc += static_cast<double>(seed[i]) * out[i];
        return acc;
    };

    double max_rel = 0.0;
    std::vector<float> x = c.x0;
    for (std::size_t i = 0; i < c.in_size; ++i) {
        const float orig = x[i];
        x[i] = static_cast<float>(orig + h);
        const double fp = g(x);
        x[i] = static_cast<float>(orig - h);
        const double fm = g(x);
        x[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double a = analytic[i];
        const double rel = std::abs(a - fd) / std::max(std::abs(a) + std::abs(fd), floor);
        if (rel > max_rel) max_rel = rel;
        ++coords;
    }
    return max_rel;
}

}  // namespace detail

// One case for a given op kind; `which_input` selects which tensor the
// gradient is checked against (conv/dense check x, w and b in turn).
inline detail::Case make_case(OpKind op, int which_input, std::uint64_t seed) {
    using namespace detail;
    Rng rng(seed);
    Case c;
    switch (op) {
        case OpKind::relu: {
            const int b = 2, ch = 2, l = 5;
            c.in_size = c.out_size = static_cast<std::size_t>(b) * ch * l;
            c.x0 = rand_vec_signed(rng, c.in_size, 0.15f, 2.0f);
            auto build = [=](const std::vector<float>& x, Graph& g) {
                int in = g.leaf(Tensor({b, ch, l}, x), true);
                return std::pair<int, int>(in, g.relu(in));
            };
            c.forward = [build](const std::vector<float>& x) {
                Graph g;
                auto [in, out] = build(x, g);
                (void)in;
                return g.value(out).data;
            };
            c.grad = [build](const std::vector<float>& x, const std::vector<float>& s) {
                Graph g;
                auto [in, out] = build(x, g);
                g.backward_from(out, s);
                return g.grad(in);
            };
            break;
        }
        case OpKind::sigmoid: {
            const int b = 3, d = 6;
            c.in_size = c.out_size = static_cast<std::size_t>(b) * d;
            c.x0 = rand_vec(rng, c.in_size, -3.0f, 3.0f);
            auto build = [=](const std::vector<float>& x, Graph& g) {
                int in = g.leaf(Tensor({b, d}, x), true);
                return std::pair<int, int>(in, g.sigmoid(in));
            };
            c.forward = [build](const std::vector<float>& x) {
                Graph g;
                auto [in, out] = build(x, g);
                (void)in;
                return g.value(out).data;
            };
            c.grad = [build](const std::vector<float>& x, const std::vector<float>& s) {
                Graph g;
                auto [in, out] = build(x, g);
                g.backward_from(out, s);
                return g.grad(in);
            };
            break;
        }
        case OpKind::conv1d: {
            const int b = 2, ch = 2, l = 9, k = 3, f = 4, stride = (seed % 2 == 0) ? 1 : 2;
            const int p = (l - k) / stride + 1;
            const std::vector<float> w = rand_vec_signed(rng, ch * k * f, 0.1f, 1.0f);
            const std::vector<float> bias = rand_vec(rng, f, -0.5f, 0.5f);
            const std::vector<float> xin = rand_vec_signed(rng, b * ch * l, 0.1f, 1.5f);
            c.out_size = static_cast<std::size_t>(b) * f * p;
            const std::vector<float>* primary[3] = {&xin, &w, &bias};
            c.in_size = primary[which_input]->size();
            c.x0 = *primary[which_input];
            auto build = [=](const std::vector<float>& v, Graph& g) {
                std::vector<float> xs = xin, ws = w, bs = bias;
                (which_input == 0 ? xs : which_input == 1 ? ws : bs) = v;
                int xi = g.leaf(Tensor({b, ch, l}, xs), which_input == 0);
                int wi = g.leaf(Tensor({ch, k, f}, ws), which_input == 1);
                int bi = g.leaf(Tensor({f}, bs), which_input == 2);
                int out = g.conv1d(xi, wi, bi, k, stride);
                return std::array<int, 4>{xi, wi, bi, out};
            };
            c.forward = [build](const std::vector<float>& v) {
                Graph g;
                auto ids = build(v, g);
                return g.value(ids[3]).data;
            };
            c.grad = [build, which_input](const std::vector<float>& v,
                                          const std::vector<float>& s) {
                Graph g;
                auto ids = build(v, g);
                g.backward_from(ids[3], s);
                return g.grad(ids[which_input]);
            };
            break;
        }
        case OpKind::maxpool1d: {
            const int b = 2, ch = 2, l = 8, pool = 2;
            c.in_size = static_cast<std::size_t>(b) * ch * l;
            c.out_size = static_cast<std::size_t>(b) * ch * (l / pool);
            // keep pooled pairs well separated so h never flips the argmax
            c.x0 = rand_vec(rng, c.in_size, -2.0f, 2.0f);
            for (std::size_t i = 0; i + 1 < c.in_size; i += 2)
                if (std::abs(c.x0[i] - c.x0[i + 1]) < 0.1f) c.x0[i + 1] += 0.2f;
            auto build = [=](const std::vector<float>& x, Graph& g) {
                int in = g.leaf(Tensor({b, ch, l}, x), true);
                return std::pair<int, int>(in, g.maxpool1d(in, pool));
            };
            c.forward = [build](const std::vector<float>& x) {
                Graph g;
                auto [in, out] = build(x, g);
                (void)in;
                return g.value(out).data;
            };
            c.grad = [build](const std::vector<float>& x, const std::vector<float>& s) {
                Graph g;
                auto [in, out] = build(x, g);
                g.backward_from(out, s);
                return g.grad(in);
            };
            break;
        }
        case OpKind::dense: {
            const int b = 3, d = 5, u = 4;
            const std::vector<float> w = rand_vec_signed(rng, d * u, 0.1f, 1.0f);
            const std::vector<float> bias = rand_vec(rng, u, -0.5f, 0.5f);
            const std::vector<float> xin = rand_vec_signed(rng, b * d, 0.1f, 1.5f);
            c.out_size = static_cast<std::size_t>(b) * u;
            const std::vector<float>* primary[3] = {&xin, &w, &bias};
            c.in_size = primary[which_input]->size();
            c.x0 = *primary[which_input];
            auto build = [=](const std::vector<float>& v, Graph& g) {
                std::vector<float> xs = xin, ws = w, bs = bias;
                (which_input == 0 ? xs : which_input == 1 ? ws : bs) = v;
                int xi = g.leaf(Tensor({b, d}, xs), which_input == 0);
                int wi = g.leaf(Tensor({d, u}, ws), which_input == 1);
                int bi = g.leaf(Tensor({u}, bs), which_input == 2);
                int out = g.dense(xi, wi, bi);
                return std::array<int, 4>{xi, wi, bi, out};
            };
            c.forward = [build](const std::vector<float>& v) {
                Graph g;
                auto ids = build(v, g);
                return g.value(ids[3]).data;
            };
            c.grad = [build, which_input](const std::vector<float>& v,
                                          const std::vector<float>& s) {
                Graph g;
                auto ids = build(v, g);
                g.backward_from(ids[3], s);
                return g.grad(ids[which_input]);
            };
            break;
        }
        case OpKind::dropout: {
            const int b = 2, d = 6;
            const float rate = 0.4f;
            const std::uint64_t mask_seed = seed * 31 + 7;
            c.in_size = c.out_size = static_cast<std::size_t>(b) * d;
            c.x0 = rand_vec_signed(rng, c.in_size, 0.2f, 2.0f);
            auto build = [=](const std::vector<float>& x, Graph& g) {
                int in = g.leaf(Tensor({b, d}, x), true);
                return std::pair<int, int>(in, g.dropout(in, rate, true, mask_seed));
            };
            c.forward = [build](const std::vector<float>& x) {
                Graph g;
                auto [in, out] = build(x, g);
                (void)in;
                return g.value(out).data;
            };
            c.grad = [build](const std::vector<float>& x, const std::vector<float>& s) {
                Graph g;
                auto [in, out] = build(x, g);
                g.backward_from(out, s);
                return g.grad(in);
            };
            break;
        }
        case OpKind::flatten: {
            const int b = 2, ch = 3, l = 4;
            c.in_size = c.out_size = static_cast<std::size_t>(b) * ch * l;
            c.x0 = rand_vec_signed(rng, c.in_size, 0.1f, 2.0f);
            auto build = [=](const std::vector<float>& x, Graph& g) {
                int in = g.leaf(Tensor({b, ch, l}, x), true);
                return std::pair<int, int>(in, g.flatten(in));
            };
            c.forward = [build](const std::vector<float>& x) {
                Graph g;
                auto [in, out] = build(x, g);
                (void)in;
                return g.value(out).data;
            };
            c.grad = [build](const std::vector<float>& x, const std::vector<float>& s) {
                Graph g;
                auto [in, out] = build(x, g);
                g.backward_from(out, s);
                return g.grad(in);
            };
            break;
        }
        case OpKind::bce_loss: {
            const int b = 8;
            c.in_size = b;
            c.out_size = 1;
            c.x0 = rand_vec(rng, b, 0.1f, 0.9f);  // probabilities away from the clamp
            std::vector<float> y(b);
            std::bernoulli_distribution lab(0.5);
            for (float& v : y) v = lab(rng) ? 1.0f : 0.0f;
            auto build = [=](const std::vector<float>& p, Graph& g) {
                int pi = g.leaf(Tensor({b, 1}, p), true);
                int yi = g.leaf(Tensor({b, 1}, y), false);
                return std::pair<int, int>(pi, g.bce_loss(pi, yi));
            };
            c.forward = [build](const std::vector<float>& p) {
                Graph g;
                auto [in, out] = build(p, g);
                (void)in;
                return g.value(out).data;
            };
            c.grad = [build](const std::vector<float>& p, const std::vector<float>& s) {
                Graph g;
                auto [in, out] = build(p, g);
                g.backward_from(out, s);
                return g.grad(in);
            };
            break;
        }
        case OpKind::concat: {
            const int b = 2, da = 3, db = 4;
            const std::vector<float> other = rand_vec_signed(rng, b * db, 0.1f, 1.5f);
            const bool first = which_input == 0;
            c.in_size = static_cast<std::size_t>(b) * (first ? da : db);
            c.out_size = static_cast<std::size_t>(b) * (da + db);
            c.x0 = rand_vec_signed(rng, c.in_size, 0.1f, 1.5f);
            auto build = [=](const std::vector<float>& v, Graph& g) {
                int ai, bi;
                if (first) {
                    ai = g.leaf(Tensor({b, da}, v), true);
                    bi = g.leaf(Tensor({b, db}, other), false);
                } else {
                    ai = g.leaf(Tensor({b, da}, std::vector<float>(other.begin(),
                                                                   other.begin() + b * da)),
                                false);
                    bi = g.leaf(Tensor({b, db}, v), true);
                }
                return std::array<int, 3>{ai, bi, g.concat(ai, bi)};
            };
            c.forward = [build](const std::vector<float>& v) {
                Graph g;
                auto ids = build(v, g);
                return g.value(ids[2]).data;
            };
            c.grad = [build, first](const std::vector<float>& v, const std::vector<float>& s) {
                Graph g;
                auto ids = build(v, g);
                g.backward_from(ids[2], s);
                return g.grad(first ? ids[0] : ids[1]);
            };
            break;
        }
        default:
            throw std::logic_error("no grad case for op");
    }
    return c;
}

inline std::vector<OpGradReport> run_op_grad_suite(int cases_per_op, double floor = 0.05) {
    std::vector<OpGradReport> reports;
    struct Entry {
        OpKind op;
        std::vector<int> inputs;
        double h;  // piecewise-linear ops tolerate a large step (no truncation
                   // error), which suppresses float32 rounding noise
    };
    const Entry entries[] = {
        {OpKind::relu, {0}, 1e-2},      {OpKind::sigmoid, {0}, 2e-3},
        {OpKind::conv1d, {0, 1, 2}, 1e-2}, {OpKind::maxpool1d, {0}, 1e-2},
        {OpKind::dense, {0, 1, 2}, 1e-2},  {OpKind::dropout, {0}, 1e-2},
        {OpKind::flatten, {0}, 1e-2},   {OpKind::bce_loss, {0}, 2e-3},
        {OpKind::concat, {0, 1}, 1e-2},
    };
    for (const Entry& e : entries) {
        OpGradReport rep;
        rep.op = gridshield::op_name(e.op);
        int case_idx = 0;
        while (rep.cases < static_cast<std::size_t>(cases_per_op)) {
            for (int which : e.inputs) {
                auto c = make_case(e.op, which, 1000 + case_idx * 17 + which);
                Rng rng(5000 + case_idx * 13 + which);
                const double rel = detail::check_case(c, rng, e.h, floor, rep.coords);
                rep.max_rel_err = std::max(rep.max_rel_err, rel);
                ++rep.cases;
                if (rep.cases >= static_cast<std::size_t>(cases_per_op)) break;
            }
            ++case_idx;
        }
        reports.push_back(rep);
    }
    return reports;
}

}  // namespace gradsuite
