// Command-line front end: validate problem files, run the solvers, and
// cross-check solutions against the reference oracles.
//
// Exit codes: 0 success, 1 validation failure, 2 parse failure,
// 3 non-convergence, 4 numerical/size errors inside a run.

#include <CLI11.hpp>
#include <cmath>
#include <iostream>
#include <limits>
#include <string>

#include "regio/oracle.hpp"
#include "regio/problem_io.hpp"

namespace {

struct SolverFlags {
    std::string out;
    std::string trace;
    std::string method;
    int max_iters = -1;
    double tol_message = -1.0;
    double tol_residual = -1.0;
    double damping = -1.0;
    long long seed = -1;
};

void add_solver_flags(CLI::App* cmd, SolverFlags& f, bool with_trace) {
    cmd->add_option("--out", f.out, "write the result file here instead of standard output");
    if (with_trace) cmd->add_option("--trace", f.trace, "write per-iteration CSV trace here");
    cmd->add_option("--method", f.method, "override the solver: generic | newton | gbp | channel");
    cmd->add_option("--max-iters", f.max_iters, "override the iteration cap");
    cmd->add_option("--tol-message", f.tol_message, "override the message-change tolerance");
    cmd->add_option("--tol-residual", f.tol_residual, "override the certificate tolerance");
    cmd->add_option("--damping", f.damping, "override the update damping factor");
    cmd->add_option("--seed", f.seed, "override the seed (nonzero randomizes generic/newton starts)");
}

void apply_overrides(regio::ProblemSpec& spec, const SolverFlags& f) {
    if (!f.method.empty()) spec.method = f.method;
    if (f.max_iters >= 0) spec.config.max_iters = f.max_iters;
    if (f.tol_message >= 0) spec.config.tol_message = f.tol_message;
    if (f.tol_residual >= 0) spec.config.tol_residual = f.tol_residual;
    if (f.damping >= 0) spec.config.damping = f.damping;
    if (f.seed >= 0) spec.config.seed = static_cast<unsigned long long>(f.seed);
    regio::validate_solver_settings(spec);
}

regio::SolveReport run_solver(const regio::ProblemSpec& spec, const regio::BuiltProblem& built) {
    if (spec.method == "gbp") {
        if (!built.region_problem)
            throw regio::ValidationError("method 'gbp' requires a marginalization functor");
        return regio::gbp_solve(*built.region_problem, spec.config);
    }
    if (spec.method == "channel") {
        if (!built.kernel_network)
            throw regio::ValidationError("method 'channel' requires a kernels functor");
        return regio::channel_solve(*built.kernel_network, built.element_hamiltonians, spec.config);
    }
    return regio::solve(*built.functor, *built.loss, regio::zero_pair_field(*built.functor),
                        spec.config);
}

std::vector<std::string> element_ids(const regio::Poset& poset) {
    std::vector<std::string> ids;
    for (int i = 0; i < poset.size(); ++i) ids.push_back(poset.id(i));
    return ids;
}

double guarded_value(const regio::BuiltProblem& built, const regio::SectionVector& x) {
    try {
        return regio::regionalized_value(*built.poset, *built.loss, x);
    } catch (const regio::DomainError&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

void emit(const std::string& out_path, const std::string& doc) {
    if (out_path.empty())
        std::cout << doc;
    else
        regio::write_text_atomic(out_path, doc);
}

const char* kind_name(regio::FunctorKind k) {
    switch (k) {
        case regio::FunctorKind::Explicit: return "explicit";
        case regio::FunctorKind::Marginalization: return "marginalization";
        default: return "kernels";
    }
}

int cmd_validate(const std::string& path) {
    const std::string text = regio::read_text_file(path);
    regio::ProblemSpec spec = regio::parse_problem_text(text);
    regio::BuiltProblem built = regio::build_problem(spec);
    if (!(regio::parse_problem(regio::serialize_problem(spec)) == spec))
        throw regio::Error("serialization round-trip changed the problem");
    std::cout << "OK: " << built.poset->size() << " elements, "
              << built.poset->strict_pairs().size() << " order pairs, functor kind "
              << kind_name(spec.kind) << ", loss " << spec.loss_family << ", method "
              << spec.method << "\n";
    return 0;
}

int cmd_solve(const std::string& path, const SolverFlags& flags) {
    const std::string text = regio::read_text_file(path);
    regio::ProblemSpec spec = regio::parse_problem_text(text);
    apply_overrides(spec, flags);
    regio::BuiltProblem built = regio::build_problem(spec);
    regio::SolveReport rep = run_solver(spec, built);

    regio::ojson doc = regio::result_to_json(regio::fnv1a_hex(text), spec.method,
                                             spec.config.seed, element_ids(*built.poset), rep,
                                             guarded_value(built, rep.x_star),
                                             regio::iso_utc_timestamp());
    emit(flags.out, doc.dump(2) + "\n");
    if (!flags.trace.empty()) regio::write_text_atomic(flags.trace, regio::trace_csv(rep.trace));
    if (!rep.converged) {
        std::cerr << "non-convergence after " << rep.iterations
                  << " iterations: message_delta=" << rep.final_message_delta
                  << " constraint_norm=" << rep.final_constraint_norm
                  << " stationarity=" << rep.final_stationarity << "\n";
        return 3;
    }
    return 0;
}

int cmd_oracle_compare(const std::string& path, const SolverFlags& flags) {
    const std::string text = regio::read_text_file(path);
    regio::ProblemSpec spec = regio::parse_problem_text(text);
    apply_overrides(spec, flags);
    regio::BuiltProblem built = regio::build_problem(spec);
    regio::SolveReport rep = run_solver(spec, built);

    std::string oracle_name;
    regio::SectionVector x_oracle;
    double oracle_value;
    if (built.loss->kind() == regio::LossKind::Quadratic) {
        oracle_name = "kkt";
        regio::KktResult kkt = regio::kkt_solve_quadratic(*built.functor, *built.loss);
        x_oracle = kkt.x;
        oracle_value = regio::regionalized_value(*built.poset, *built.loss, kkt.x);
    } else {
        oracle_name = "projected_gradient";
        regio::BruteForceOptions opt;
        opt.simplex = spec.kind != regio::FunctorKind::Explicit;
        opt.seed = static_cast<unsigned>(spec.config.seed);
        regio::BruteForceResult bf = regio::brute_force_min(*built.functor, *built.loss, opt);
        x_oracle = bf.x;
        oracle_value = bf.value;
    }

    const std::vector<std::string> ids = element_ids(*built.poset);
    regio::ojson j;
    j["format_version"] = 1;
    j["problem_hash"] = "fnv1a:" + regio::fnv1a_hex(text);
    j["generated_at"] = regio::iso_utc_timestamp();
    j["method"] = spec.method;
    j["oracle"] = oracle_name;
    j["seed"] = spec.config.seed;
    j["solver_converged"] = rep.converged;
    double max_gap = 0.0;
    regio::ojson gaps;
    for (size_t i = 0; i < ids.size(); ++i) {
        const double g = rep.x_star[i].size() > 0
                             ? (rep.x_star[i] - x_oracle[i]).cwiseAbs().maxCoeff()
                             : 0.0;
        gaps[ids[i]] = g;
        max_gap = std::max(max_gap, g);
    }
    j["per_element_gap"] = std::move(gaps);
    j["max_gap"] = max_gap;
    const double solver_value = guarded_value(built, rep.x_star);
    j["solver_value"] = solver_value;
    j["oracle_value"] = oracle_value;
    j["value_gap"] = std::abs(solver_value - oracle_value);
    emit(flags.out, j.dump(2) + "\n");
    if (!rep.converged) {
        std::cerr << "non-convergence: oracle gap reported against a non-certified point\n";
        return 3;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "regionalized optimization: poset-structured losses, message-passing solvers, oracles"};
    app.require_subcommand(1);

    std::string validate_path, solve_path, compare_path;
    SolverFlags solve_flags, compare_flags;

    CLI::App* v = app.add_subcommand("validate", "check a problem file against every invariant");
    v->add_option("file", validate_path, "problem file")->required();

    CLI::App* s = app.add_subcommand("solve", "run the configured solver and emit a result file");
    s->add_option("file", solve_path, "problem file")->required();
    add_solver_flags(s, solve_flags, true);

    CLI::App* c = app.add_subcommand("oracle-compare",
                                     "solve, then report gaps against the reference oracle");
    c->add_option("file", compare_path, "problem file")->required();
    add_solver_flags(c, compare_flags, false);

    try {
        app.parse(argc, argv);
        if (v->parsed()) return cmd_validate(validate_path);
        if (s->parsed()) return cmd_solve(solve_path, solve_flags);
        return cmd_oracle_compare(compare_path, compare_flags);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const regio::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const regio::CycleError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const regio::UnknownElementError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const regio::NotComparableError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const regio::ShapeError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const regio::DomainError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const regio::FunctorialityError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const regio::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const regio::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
