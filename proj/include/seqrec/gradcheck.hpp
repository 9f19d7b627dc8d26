#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "seqrec/tape.hpp"

namespace seqrec {

struct GradCheckReport {
    bool pass = false;
    double max_rel_err = 0.0;
    std::string worst_coordinate;  // "param[i]" of the worst mismatch
    std::size_t coordinates = 0;
};

// Central finite differences against the tape's analytic gradients.
// `model_fn` must build a deterministic scalar loss on the given tape.
// Relative error uses the finite-difference value as reference, so a backward
// that is off by a factor of 2 reports an error near 1.
template <typename S>
GradCheckReport grad_check(
    const std::function<Var(Tape<S>&)>& model_fn,
    const std::vector<Parameter<S>*>& params,
    double eps = 1e-5,
    double tolerance = 1e-5) {
    for (auto* p : params) p->zero_grad();

    {
        Tape<S> tape;
        Var loss = model_fn(tape);
        SEQREC_CHECK(tape.val(loss).numel() == 1, "shape",
                     "grad_check: model_fn must return a scalar");
        SEQREC_CHECK(std::isfinite(static_cast<double>(tape.val(loss).data[0])),
                     "numeric", "grad_check: non-finite loss value");
        tape.backward(loss);
    }

    auto eval = [&]() -> double {
        Tape<S> tape(false);
        Var loss = model_fn(tape);
        return static_cast<double>(tape.val(loss).data[0]);
    };

    GradCheckReport report;
    report.pass = true;
    for (auto* p : params) {
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            S saved = p->value.data[i];
            p->value.data[i] = saved + static_cast<S>(eps);
            double up = eval();
            p->value.data[i] = saved - static_cast<S>(eps);
            double down = eval();
            p->value.data[i] = saved;

            double fd = (up - down) / (2.0 * eps);
            double analytic = static_cast<double>(p->grad.data[i]);
            SEQREC_CHECK(std::isfinite(fd) && std::isfinite(analytic), "numeric",
                         "grad_check: non-finite gradient at ", p->name, "[", i, "]");
            ++report.coordinates;

            // Floor the denominator: below ~1e-3 the central difference is
            // dominated by cancellation noise, so tiny coordinates are judged
            // on absolute error instead.
            double rel = std::abs(analytic - fd) / std::max(std::abs(fd), 1e-3);
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_coordinate =
                    p->name + "[" + std::to_string(i) + "]";
            }
        }
    }
    report.pass = report.max_rel_err < tolerance;
    return report;
}

}  // namespace seqrec
