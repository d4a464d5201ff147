#include "fcc/gradcheck.hpp"

#include <cmath>

#include "fcc/ops.hpp"

namespace fcc {

template <class S>
GradCheckReport gradient_check(const SubgraphBuilder<S>& builder, std::vector<TensorT<S>> params,
                               const std::vector<std::string>& names, double tolerance,
                               double step) {
    if (params.size() != names.size()) {
        throw ContractError("gradient_check: one name per parameter required");
    }
    for (auto& p : params) {
        if (p.numel() >= 10000) {
            throw ContractError("gradient_check parameter too large to perturb exhaustively: " +
                                std::to_string(p.numel()) + " entries");
        }
        p.set_requires_grad(true);
        p.zero_grad();
    }

    Tape<S> tape;
    {
        TensorT<S> loss = builder(&tape, params);
        if (loss.numel() != 1) {
            throw ContractError("gradient_check subgraph must output a scalar");
        }
        tape.backward(loss);
    }
    std::vector<std::vector<S>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) {
        auto g = p.grad();
        analytic.emplace_back(g.begin(), g.end());
    }

    GradCheckReport report;
    report.tolerance = tolerance;
    const S h = static_cast<S>(step);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        GradCheckEntry entry;
        entry.name = names[pi];
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            const S saved = p.data()[i];
            p.data()[i] = saved + h;
            const double f_plus = static_cast<double>(builder(nullptr, params).item());
            p.data()[i] = saved - h;
            const double f_minus = static_cast<double>(builder(nullptr, params).item());
            p.data()[i] = saved;
            const double fd = (f_plus - f_minus) / (2.0 * static_cast<double>(h));
            const double an = static_cast<double>(analytic[pi][static_cast<std::size_t>(i)]);
            const double err = std::fabs(fd - an) / (1.0 + std::max(std::fabs(fd), std::fabs(an)));
            entry.max_rel_error = std::max(entry.max_rel_error, err);
        }
        entry.pass = entry.max_rel_error < tolerance;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

template GradCheckReport gradient_check<float>(const SubgraphBuilder<float>&,
                                               std::vector<TensorT<float>>,
                                               const std::vector<std::string>&, double, double);
template GradCheckReport gradient_check<double>(const SubgraphBuilder<double>&,
                                                std::vector<TensorT<double>>,
                                                const std::vector<std::string>&, double, double);

}  // namespace fcc
