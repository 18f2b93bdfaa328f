// Central-finite-difference gradient oracle used by the unit and acceptance
// suites. Gradients are checked on a double tape: the backward formulas under
// test are the same template code the float build instantiates, while the
// finite differences run through forward evaluation only.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "trajden/rng.hpp"
#include "trajden/tape.hpp"

namespace gradcheck {

using trajden::BasicGrid;
using trajden::Tape;
using trajden::Var;

struct Result {
    double max_rel_err = 0.0;
    std::string where;
};

// fn builds a scalar loss from tape-bound views of `inputs`.
using BuildFn = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

inline Result check(const BuildFn& fn, std::vector<BasicGrid<double>*> inputs,
                    double h = 1e-3) {
    // analytic gradients
    for (auto* g : inputs) {
        g->requires_grad = true;
        g->zero_grad();
    }
    {
        Tape<double> tp;
        std::vector<Var> vars;
        for (auto* g : inputs) vars.push_back(tp.param(*g));
        Var loss = fn(tp, vars);
        tp.backward(loss);
    }
    auto eval = [&]() {
        Tape<double> tp;
        std::vector<Var> vars;
        for (auto* g : inputs) vars.push_back(tp.leaf(*g));
        Var loss = fn(tp, vars);
        return tp.value(loss).data[0];
    };

    Result res;
    for (size_t gi = 0; gi < inputs.size(); ++gi) {
        auto& g = *inputs[gi];
        for (size_t j = 0; j < g.data.size(); ++j) {
            const double keep = g.data[j];
            g.data[j] = keep + h;
            const double fp = eval();
            g.data[j] = keep - h;
            const double fm = eval();
            g.data[j] = keep;
            const double fd = (fp - fm) / (2 * h);
            const double an = g.grad[j];
            const double scale = std::max({1.0, std::abs(fd), std::abs(an)});
            const double rel = std::abs(fd - an) / scale;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.where = "input " + std::to_string(gi) + " element " + std::to_string(j) +
                            " analytic " + std::to_string(an) + " fd " + std::to_string(fd);
            }
        }
    }
    return res;
}

inline void fill_random(BasicGrid<double>& g, trajden::Rng& rng, double lo = -1.0,
                        double hi = 1.0) {
    for (auto& v : g.data) v = rng.uniform(lo, hi);
}

// Pushes values away from zero; keeps relu/l1 kinks clear of the FD stencil.
inline void avoid_zero(BasicGrid<double>& g, double margin = 0.05) {
    for (auto& v : g.data) {
        if (std::abs(v) < margin) v = v >= 0 ? v + margin : v - margin;
    }
}

}  // namespace gradcheck
