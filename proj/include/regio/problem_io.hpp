#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "regio/channels.hpp"
#include "regio/errors.hpp"
#include "regio/functor.hpp"
#include "regio/gbp.hpp"
#include "regio/loss.hpp"
#include "regio/poset.hpp"
#include "regio/solver.hpp"

namespace regio {

using ojson = nlohmann::ordered_json;

enum class FunctorKind { Explicit, Marginalization, Kernels };

/// A matrix attached to an order pair, keyed "upper->lower" in files.
struct NamedPairMatrix {
    std::string upper;
    std::string lower;
    Eigen::MatrixXd matrix;
};

/// Parsed problem file (format_version 1).  Defaults are resolved at parse
/// time, so parse -> serialize -> parse is the identity on this struct.
struct ProblemSpec {
    int format_version = 1;

    std::vector<std::string> elements;
    std::vector<std::pair<std::string, std::string>> relations;  // (lower, upper)

    FunctorKind kind = FunctorKind::Explicit;

    // kind == Explicit
    std::vector<std::pair<std::string, int>> dims;
    std::vector<NamedPairMatrix> maps;

    // kind == Marginalization
    std::vector<std::pair<std::string, int>> variables;  // (id, cardinality), declaration order
    std::vector<std::vector<std::string>> regions;

    // kind == Kernels
    std::vector<std::pair<std::string, int>> state_spaces;
    std::vector<NamedPairMatrix> kernels;

    // Energy vectors: per region key (Marginalization), per element (Kernels),
    // or per element when the loss family is free_energy on an explicit functor.
    std::vector<std::pair<std::string, Eigen::VectorXd>> hamiltonians;

    std::string loss_family = "free_energy";
    double beta = 1.0;
    std::vector<std::pair<std::string, Eigen::MatrixXd>> quad_A;
    std::vector<std::pair<std::string, Eigen::VectorXd>> quad_b;

    std::string method;  // resolved: generic | newton | gbp | channel
    SolverConfig config;
};

inline bool same_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           (a.size() == 0 || (a.array() == b.array()).all());
}

inline bool same_vector(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return a.size() == b.size() && (a.size() == 0 || (a.array() == b.array()).all());
}

inline bool operator==(const NamedPairMatrix& a, const NamedPairMatrix& b) {
    return a.upper == b.upper && a.lower == b.lower && same_matrix(a.matrix, b.matrix);
}

inline bool operator==(const SolverConfig& a, const SolverConfig& b) {
    return a.max_iters == b.max_iters && a.tol_message == b.tol_message &&
           a.tol_residual == b.tol_residual && a.damping == b.damping && a.seed == b.seed &&
           a.method == b.method;
}

namespace io_detail {

template <typename T>
bool same_named(const std::vector<std::pair<std::string, T>>& a,
                const std::vector<std::pair<std::string, T>>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].first != b[i].first) return false;
        if constexpr (std::is_same_v<T, Eigen::MatrixXd>) {
            if (!same_matrix(a[i].second, b[i].second)) return false;
        } else if constexpr (std::is_same_v<T, Eigen::VectorXd>) {
            if (!same_vector(a[i].second, b[i].second)) return false;
        } else {
            if (!(a[i].second == b[i].second)) return false;
        }
    }
    return true;
}

}  // namespace io_detail

inline bool operator==(const ProblemSpec& a, const ProblemSpec& b) {
    return a.format_version == b.format_version && a.elements == b.elements &&
           a.relations == b.relations && a.kind == b.kind &&
           io_detail::same_named(a.dims, b.dims) && a.maps == b.maps &&
           io_detail::same_named(a.variables, b.variables) && a.regions == b.regions &&
           io_detail::same_named(a.state_spaces, b.state_spaces) && a.kernels == b.kernels &&
           io_detail::same_named(a.hamiltonians, b.hamiltonians) &&
           a.loss_family == b.loss_family && a.beta == b.beta &&
           io_detail::same_named(a.quad_A, b.quad_A) && io_detail::same_named(a.quad_b, b.quad_b) &&
           a.method == b.method && a.config == b.config;
}

namespace io_detail {

inline const ojson& require(const ojson& j, const std::string& key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) throw ParseError("missing key '" + key + "' in " + where);
    return *it;
}

inline std::string as_string(const ojson& j, const std::string& where) {
    if (!j.is_string()) throw ParseError(where + " must be a string");
    return j.get<std::string>();
}

inline int as_int(const ojson& j, const std::string& where) {
    if (!j.is_number_integer()) throw ParseError(where + " must be an integer");
    return j.get<int>();
}

inline double as_real(const ojson& j, const std::string& where) {
    if (!j.is_number()) throw ParseError(where + " must be a number");
    return j.get<double>();
}

inline Eigen::VectorXd as_vector(const ojson& j, const std::string& where) {
    if (!j.is_array()) throw ParseError(where + " must be a list of numbers");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    Eigen::Index i = 0;
    for (const auto& e : j) v(i++) = as_real(e, where + " entry");
    return v;
}

inline Eigen::MatrixXd as_matrix(const ojson& j, const std::string& where) {
    if (!j.is_array()) throw ParseError(where + " must be a list of rows");
    const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    Eigen::MatrixXd m(rows, rows > 0 ? static_cast<Eigen::Index>(j.front().size()) : 0);
    Eigen::Index r = 0;
    for (const auto& row : j) {
        Eigen::VectorXd v = as_vector(row, where + " row");
        if (v.size() != m.cols()) throw ParseError(where + " rows have unequal lengths");
        m.row(r++) = v.transpose();
    }
    return m;
}

inline std::vector<std::pair<std::string, int>> as_named_ints(const ojson& j,
                                                              const std::string& where) {
    if (!j.is_object()) throw ParseError(where + " must be an object");
    std::vector<std::pair<std::string, int>> out;
    for (auto it = j.begin(); it != j.end(); ++it)
        out.emplace_back(it.key(), as_int(it.value(), where + "['" + it.key() + "']"));
    return out;
}

inline std::pair<std::string, std::string> split_pair_key(const std::string& key,
                                                          const std::string& where) {
    const auto pos = key.find("->");
    if (pos == std::string::npos || pos == 0 || pos + 2 >= key.size())
        throw ParseError(where + " key '" + key + "' is not of the form 'upper->lower'");
    return {key.substr(0, pos), key.substr(pos + 2)};
}

inline std::vector<NamedPairMatrix> as_pair_matrices(const ojson& j, const std::string& where) {
    if (!j.is_object()) throw ParseError(where + " must be an object keyed 'upper->lower'");
    std::vector<NamedPairMatrix> out;
    for (auto it = j.begin(); it != j.end(); ++it) {
        auto [upper, lower] = split_pair_key(it.key(), where);
        out.push_back({upper, lower, as_matrix(it.value(), where + "['" + it.key() + "']")});
    }
    return out;
}

inline std::vector<std::pair<std::string, Eigen::VectorXd>> as_named_vectors(
    const ojson& j, const std::string& where) {
    if (!j.is_object()) throw ParseError(where + " must be an object");
    std::vector<std::pair<std::string, Eigen::VectorXd>> out;
    for (auto it = j.begin(); it != j.end(); ++it)
        out.emplace_back(it.key(), as_vector(it.value(), where + "['" + it.key() + "']"));
    return out;
}

inline std::vector<std::pair<std::string, Eigen::MatrixXd>> as_named_matrices(
    const ojson& j, const std::string& where) {
    if (!j.is_object()) throw ParseError(where + " must be an object");
    std::vector<std::pair<std::string, Eigen::MatrixXd>> out;
    for (auto it = j.begin(); it != j.end(); ++it)
        out.emplace_back(it.key(), as_matrix(it.value(), where + "['" + it.key() + "']"));
    return out;
}

/// Canonical region key: variable ids joined by commas, ordered by
/// declaration index (matching RegionGraphProblem::region_key).
inline std::string canonical_region_key(const std::vector<std::string>& region_vars,
                                        const std::vector<std::pair<std::string, int>>& variables) {
    std::vector<int> idx;
    for (const auto& id : region_vars) {
        int found = -1;
        for (size_t i = 0; i < variables.size(); ++i)
            if (variables[i].first == id) { found = static_cast<int>(i); break; }
        if (found < 0) throw ValidationError("region references undeclared variable '" + id + "'");
        idx.push_back(found);
    }
    std::sort(idx.begin(), idx.end());
    std::string key;
    for (size_t i = 0; i < idx.size(); ++i) {
        if (i) key += ",";
        key += variables[static_cast<size_t>(idx[i])].first;
    }
    return key;
}

}  // namespace io_detail

inline ojson parse_json_text(const std::string& text) {
    try {
        return ojson::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(e.what());
    }
}

/// Checks method name and numeric solver settings; keeps config.method in
/// sync with the method string.  Re-run after applying command-line overrides.
inline void validate_solver_settings(ProblemSpec& spec) {
    if (spec.method != "generic" && spec.method != "newton" && spec.method != "gbp" &&
        spec.method != "channel")
        throw ValidationError("unknown solver method '" + spec.method + "'");
    if (spec.config.max_iters < 1) throw ValidationError("solver.max_iters must be >= 1");
    if (spec.config.tol_message <= 0 || spec.config.tol_residual <= 0)
        throw ValidationError("solver tolerances must be positive");
    if (spec.config.damping < 0) throw ValidationError("solver.damping must be >= 0");
    spec.config.method = spec.method == "newton" ? SolveMethod::Newton : SolveMethod::Generic;
}

inline ProblemSpec parse_problem(const ojson& j) {
    using namespace io_detail;
    if (!j.is_object()) throw ParseError("problem file must be a JSON object");
    ProblemSpec spec;
    spec.format_version = as_int(require(j, "format_version", "problem"), "format_version");
    if (spec.format_version != 1)
        throw ValidationError("unsupported format_version " + std::to_string(spec.format_version));

    const ojson& poset = require(j, "poset", "problem");
    const ojson& elems = require(poset, "elements", "poset");
    if (!elems.is_array()) throw ParseError("poset.elements must be a list of strings");
    for (const auto& e : elems) spec.elements.push_back(as_string(e, "poset element"));
    const ojson& rels = require(poset, "relations", "poset");
    if (!rels.is_array()) throw ParseError("poset.relations must be a list of [lower, upper] pairs");
    for (const auto& r : rels) {
        if (!r.is_array() || r.size() != 2)
            throw ParseError("each relation must be a [lower, upper] pair");
        spec.relations.emplace_back(as_string(r[0], "relation lower"), as_string(r[1], "relation upper"));
    }

    const ojson& functor = require(j, "functor", "problem");
    const std::string kind = as_string(require(functor, "kind", "functor"), "functor.kind");
    if (kind == "explicit") {
        spec.kind = FunctorKind::Explicit;
        spec.dims = as_named_ints(require(functor, "dims", "functor"), "functor.dims");
        spec.maps = as_pair_matrices(require(functor, "maps", "functor"), "functor.maps");
    } else if (kind == "marginalization") {
        spec.kind = FunctorKind::Marginalization;
        spec.variables = as_named_ints(require(functor, "variables", "functor"), "functor.variables");
        const ojson& regions = require(functor, "regions", "functor");
        if (!regions.is_array()) throw ParseError("functor.regions must be a list of variable id lists");
        for (const auto& reg : regions) {
            if (!reg.is_array()) throw ParseError("each region must be a list of variable ids");
            std::vector<std::string> ids;
            for (const auto& v : reg) ids.push_back(as_string(v, "region variable"));
            spec.regions.push_back(std::move(ids));
        }
        spec.hamiltonians = as_named_vectors(require(functor, "hamiltonians", "functor"),
                                             "functor.hamiltonians");
    } else if (kind == "kernels") {
        spec.kind = FunctorKind::Kernels;
        spec.state_spaces =
            as_named_ints(require(functor, "state_spaces", "functor"), "functor.state_spaces");
        spec.kernels = as_pair_matrices(require(functor, "kernels", "functor"), "functor.kernels");
        spec.hamiltonians = as_named_vectors(require(functor, "hamiltonians", "functor"),
                                             "functor.hamiltonians");
    } else {
        throw ValidationError("unknown functor kind '" + kind + "'");
    }

    // Loss: explicit functors carry their own block; the probabilistic kinds
    // imply the free energy family with beta 1.
    if (spec.kind == FunctorKind::Explicit) {
        const ojson& loss = require(j, "loss", "problem");
        spec.loss_family = as_string(require(loss, "family", "loss"), "loss.family");
        if (spec.loss_family == "free_energy") {
            if (loss.contains("beta")) spec.beta = as_real(loss["beta"], "loss.beta");
            if (spec.beta <= 0.0) throw ValidationError("loss.beta must be positive");
            if (loss.contains("hamiltonians"))
                spec.hamiltonians = as_named_vectors(loss["hamiltonians"], "loss.hamiltonians");
            for (const auto& [id, d] : spec.dims) {
                bool found = false;
                for (const auto& [hid, hv] : spec.hamiltonians) found = found || hid == id;
                if (!found)
                    spec.hamiltonians.emplace_back(id, Eigen::VectorXd::Zero(d));
            }
        } else if (spec.loss_family == "quadratic") {
            spec.quad_A = as_named_matrices(require(loss, "A", "loss"), "loss.A");
            spec.quad_b = as_named_vectors(require(loss, "b", "loss"), "loss.b");
        } else {
            throw ValidationError("unknown loss family '" + spec.loss_family + "'");
        }
    } else if (j.contains("loss")) {
        const ojson& loss = j["loss"];
        const std::string fam = as_string(require(loss, "family", "loss"), "loss.family");
        if (fam != "free_energy")
            throw ValidationError("functor kind '" + kind + "' implies the free_energy family");
        if (loss.contains("beta") && as_real(loss["beta"], "loss.beta") != 1.0)
            throw ValidationError("functor kind '" + kind + "' fixes beta = 1");
        if (loss.contains("A") || loss.contains("b") || loss.contains("hamiltonians"))
            throw ValidationError("loss block for '" + kind +
                                  "' functors may only restate the free_energy family");
    }

    // Solver defaults depend on the functor kind.
    spec.method = spec.kind == FunctorKind::Explicit
                      ? "generic"
                      : (spec.kind == FunctorKind::Marginalization ? "gbp" : "channel");
    if (j.contains("solver")) {
        const ojson& s = j["solver"];
        if (!s.is_object()) throw ParseError("solver must be an object");
        if (s.contains("method")) spec.method = as_string(s["method"], "solver.method");
        if (s.contains("max_iters")) spec.config.max_iters = as_int(s["max_iters"], "solver.max_iters");
        if (s.contains("tol_message"))
            spec.config.tol_message = as_real(s["tol_message"], "solver.tol_message");
        if (s.contains("tol_residual"))
            spec.config.tol_residual = as_real(s["tol_residual"], "solver.tol_residual");
        if (s.contains("damping")) spec.config.damping = as_real(s["damping"], "solver.damping");
        if (s.contains("seed")) {
            if (!s["seed"].is_number_integer() || s["seed"].get<long long>() < 0)
                throw ParseError("solver.seed must be a non-negative integer");
            spec.config.seed = s["seed"].get<unsigned long long>();
        }
    }
    validate_solver_settings(spec);
    return spec;
}

inline ProblemSpec parse_problem_text(const std::string& text) {
    return parse_problem(parse_json_text(text));
}

namespace io_detail {

inline ojson matrix_to_json(const Eigen::MatrixXd& m) {
    ojson rows = ojson::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        ojson row = ojson::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline ojson vector_to_json(const Eigen::VectorXd& v) {
    ojson out = ojson::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

}  // namespace io_detail

inline ojson serialize_problem(const ProblemSpec& spec) {
    using namespace io_detail;
    ojson j;
    j["format_version"] = spec.format_version;
    ojson poset;
    poset["elements"] = spec.elements;
    ojson rels = ojson::array();
    for (const auto& [lo, hi] : spec.relations) rels.push_back(ojson::array({lo, hi}));
    poset["relations"] = std::move(rels);
    j["poset"] = std::move(poset);

    ojson functor;
    if (spec.kind == FunctorKind::Explicit) {
        functor["kind"] = "explicit";
        ojson dims;
        for (const auto& [id, d] : spec.dims) dims[id] = d;
        functor["dims"] = std::move(dims);
        ojson maps;
        for (const auto& m : spec.maps) maps[m.upper + "->" + m.lower] = matrix_to_json(m.matrix);
        functor["maps"] = std::move(maps);
    } else if (spec.kind == FunctorKind::Marginalization) {
        functor["kind"] = "marginalization";
        ojson vars;
        for (const auto& [id, c] : spec.variables) vars[id] = c;
        functor["variables"] = std::move(vars);
        ojson regions = ojson::array();
        for (const auto& reg : spec.regions) regions.push_back(reg);
        functor["regions"] = std::move(regions);
        ojson hams;
        for (const auto& [key, h] : spec.hamiltonians) hams[key] = vector_to_json(h);
        functor["hamiltonians"] = std::move(hams);
    } else {
        functor["kind"] = "kernels";
        ojson sizes;
        for (const auto& [id, s] : spec.state_spaces) sizes[id] = s;
        functor["state_spaces"] = std::move(sizes);
        ojson kernels;
        for (const auto& k : spec.kernels) kernels[k.upper + "->" + k.lower] = matrix_to_json(k.matrix);
        functor["kernels"] = std::move(kernels);
        ojson hams;
        for (const auto& [key, h] : spec.hamiltonians) hams[key] = vector_to_json(h);
        functor["hamiltonians"] = std::move(hams);
    }
    j["functor"] = std::move(functor);

    if (spec.kind == FunctorKind::Explicit) {
        ojson loss;
        loss["family"] = spec.loss_family;
        if (spec.loss_family == "free_energy") {
            loss["beta"] = spec.beta;
            ojson hams;
            for (const auto& [key, h] : spec.hamiltonians) hams[key] = vector_to_json(h);
            loss["hamiltonians"] = std::move(hams);
        } else {
            ojson A, b;
            for (const auto& [id, m] : spec.quad_A) A[id] = matrix_to_json(m);
            for (const auto& [id, v] : spec.quad_b) b[id] = vector_to_json(v);
            loss["A"] = std::move(A);
            loss["b"] = std::move(b);
        }
        j["loss"] = std::move(loss);
    }

    ojson solver;
    solver["method"] = spec.method;
    solver["max_iters"] = spec.config.max_iters;
    solver["tol_message"] = spec.config.tol_message;
    solver["tol_residual"] = spec.config.tol_residual;
    solver["damping"] = spec.config.damping;
    solver["seed"] = spec.config.seed;
    j["solver"] = std::move(solver);
    return j;
}

/// Everything a command needs, built and cross-validated from a ProblemSpec.
struct BuiltProblem {
    std::shared_ptr<const Poset> poset;
    std::shared_ptr<const Cofunctor> functor;
    std::optional<LocalLossFamily> loss;
    std::optional<RegionGraphProblem> region_problem;  // Marginalization only
    std::optional<KernelNetwork> kernel_network;       // Kernels only
    std::vector<Eigen::VectorXd> element_hamiltonians;  // Kernels / explicit free_energy
};

namespace io_detail {

/// Per-element lookup table: every poset element exactly once, no strangers.
template <typename T>
std::vector<T> per_element(const std::vector<std::pair<std::string, T>>& named, const Poset& poset,
                           const std::string& what) {
    std::vector<T> out(static_cast<size_t>(poset.size()));
    std::vector<bool> seen(static_cast<size_t>(poset.size()), false);
    for (const auto& [id, value] : named) {
        const int i = poset.index_of(id);  // UnknownElementError on strangers
        if (seen[static_cast<size_t>(i)])
            throw ValidationError(what + " lists element '" + id + "' twice");
        seen[static_cast<size_t>(i)] = true;
        out[static_cast<size_t>(i)] = value;
    }
    for (int i = 0; i < poset.size(); ++i)
        if (!seen[static_cast<size_t>(i)])
            throw ValidationError(what + " is missing element '" + poset.id(i) + "'");
    return out;
}

/// Place the given pair matrices on the canonical strict pairs, then fill the
/// remaining comparable pairs by composition along intermediate elements.
inline std::vector<Eigen::MatrixXd> fill_pair_maps(const Poset& poset,
                                                   const std::vector<NamedPairMatrix>& given,
                                                   const std::string& what) {
    const auto& pairs = poset.strict_pairs();
    std::vector<Eigen::MatrixXd> maps(pairs.size());
    std::vector<bool> have(pairs.size(), false);
    for (const auto& g : given) {
        const int a = poset.index_of(g.upper);
        const int b = poset.index_of(g.lower);
        if (!poset.is_strict_pair(a, b))
            throw ValidationError(what + " '" + g.upper + "->" + g.lower +
                                  "' is not a strict order pair (upper first)");
        const int k = poset.pair_index(a, b);
        if (have[static_cast<size_t>(k)])
            throw ValidationError(what + " '" + g.upper + "->" + g.lower + "' given twice");
        maps[static_cast<size_t>(k)] = g.matrix;
        have[static_cast<size_t>(k)] = true;
    }
    bool progress = true;
    while (progress) {
        progress = false;
        for (size_t k = 0; k < pairs.size(); ++k) {
            if (have[k]) continue;
            auto [a, b] = pairs[k];
            for (int c = 0; c < poset.size() && !have[k]; ++c) {
                if (c == a || c == b || !poset.leq(b, c) || !poset.leq(c, a)) continue;
                const int ik_ac = poset.pair_index(a, c);
                const int ik_cb = poset.pair_index(c, b);
                if (have[static_cast<size_t>(ik_ac)] && have[static_cast<size_t>(ik_cb)]) {
                    maps[k] = maps[static_cast<size_t>(ik_cb)] * maps[static_cast<size_t>(ik_ac)];
                    have[k] = true;
                    progress = true;
                }
            }
        }
    }
    for (size_t k = 0; k < pairs.size(); ++k)
        if (!have[k])
            throw ValidationError(what + " for pair '" + poset.id(pairs[k].first) + "->" +
                                  poset.id(pairs[k].second) +
                                  "' neither given nor derivable by composition");
    return maps;
}

}  // namespace io_detail

inline BuiltProblem build_problem(const ProblemSpec& spec) {
    using namespace io_detail;
    BuiltProblem built;
    if (spec.kind == FunctorKind::Marginalization) {
        std::vector<std::string> var_ids;
        std::vector<int> cards;
        for (const auto& [id, c] : spec.variables) {
            var_ids.push_back(id);
            cards.push_back(c);
        }
        // Energy vectors are keyed by canonical region key in the file.
        std::vector<Eigen::VectorXd> H;
        for (const auto& reg : spec.regions) {
            const std::string key = canonical_region_key(reg, spec.variables);
            const Eigen::VectorXd* found = nullptr;
            for (const auto& [hkey, hv] : spec.hamiltonians)
                if (hkey == key) found = &hv;
            if (!found)
                throw ValidationError("missing hamiltonian for region '" + key + "'");
            H.push_back(*found);
        }
        if (spec.hamiltonians.size() != spec.regions.size())
            throw ValidationError("hamiltonians must list each region key exactly once");
        built.region_problem.emplace(var_ids, cards, spec.regions, H);
        built.poset = built.region_problem->poset_ptr();
        built.functor =
            std::make_shared<const Cofunctor>(built.region_problem->marginalization_cofunctor());
        built.loss = free_energy_family(*built.region_problem);

        // The declared poset block must agree with the inclusion order.
        Poset declared(spec.elements, spec.relations);
        const Poset& incl = *built.poset;
        if (declared.size() != incl.size())
            throw ValidationError("poset block must declare exactly the region keys");
        for (int i = 0; i < declared.size(); ++i) {
            const int j2 = incl.index_of(declared.id(i));  // UnknownElementError on mismatch
            for (int k = 0; k < declared.size(); ++k) {
                const int l2 = incl.index_of(declared.id(k));
                if (declared.leq(i, k) != incl.leq(j2, l2))
                    throw ValidationError(
                        "declared relations disagree with region inclusion between '" +
                        declared.id(i) + "' and '" + declared.id(k) + "'");
            }
        }
        return built;
    }

    auto poset = std::make_shared<const Poset>(spec.elements, spec.relations);
    built.poset = poset;
    if (spec.kind == FunctorKind::Explicit) {
        std::vector<int> dims = per_element<int>(spec.dims, *poset, "functor.dims");
        for (size_t i = 0; i < dims.size(); ++i)
            if (dims[i] < 1)
                throw ValidationError("dimension of '" + poset->id(static_cast<int>(i)) +
                                      "' must be >= 1");
        auto maps = fill_pair_maps(*poset, spec.maps, "functor.maps");
        built.functor = std::make_shared<const Cofunctor>(poset, dims, maps);
        auto violations = validate_cofunctor(*built.functor, 1e-12);
        if (!violations.empty()) {
            std::string msg = "functoriality violations:";
            for (const auto& v : violations)
                msg += " [" + poset->id(v.a) + "->" + poset->id(v.b) + "->" + poset->id(v.c) +
                       " gap " + std::to_string(v.error) + "]";
            throw FunctorialityError(msg);
        }
        if (spec.loss_family == "free_energy") {
            auto H = per_element<Eigen::VectorXd>(spec.hamiltonians, *poset, "hamiltonians");
            for (size_t i = 0; i < H.size(); ++i)
                if (H[i].size() != dims[i])
                    throw ValidationError("hamiltonian of '" + poset->id(static_cast<int>(i)) +
                                          "' has the wrong length");
            built.element_hamiltonians = H;
            built.loss = LocalLossFamily::free_energy(H, spec.beta);
        } else {
            auto A = per_element<Eigen::MatrixXd>(spec.quad_A, *poset, "loss.A");
            auto b = per_element<Eigen::VectorXd>(spec.quad_b, *poset, "loss.b");
            built.loss = LocalLossFamily::quadratic(A, b);
        }
        return built;
    }

    // Kernels.  Check the declared kernels first so an error names the pair
    // the file actually states, not a derived composite.
    std::vector<int> sizes = per_element<int>(spec.state_spaces, *poset, "functor.state_spaces");
    for (const auto& g : spec.kernels) {
        if ((g.matrix.array() < 0.0).any())
            throw ValidationError("kernel '" + g.upper + "->" + g.lower + "' has negative entries");
        for (int j = 0; j < g.matrix.cols(); ++j) {
            const double s = g.matrix.col(j).sum();
            if (std::abs(s - 1.0) > 1e-12)
                throw ValidationError("kernel '" + g.upper + "->" + g.lower + "', column " +
                                      std::to_string(j) + " sums to " + std::to_string(s) +
                                      " instead of 1");
        }
    }
    auto kernels = fill_pair_maps(*poset, spec.kernels, "functor.kernels");
    built.kernel_network.emplace(poset, sizes, kernels);
    built.functor = std::make_shared<const Cofunctor>(built.kernel_network->pushforward_cofunctor());
    auto H = per_element<Eigen::VectorXd>(spec.hamiltonians, *poset, "functor.hamiltonians");
    for (size_t i = 0; i < H.size(); ++i)
        if (H[i].size() != sizes[i])
            throw ValidationError("hamiltonian of '" + poset->id(static_cast<int>(i)) +
                                  "' has the wrong length");
    built.element_hamiltonians = H;
    built.loss = LocalLossFamily::free_energy(H, 1.0);
    return built;
}

// ---------------------------------------------------------------------------
// Result files and small file utilities.

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Write-then-rename so readers never observe a half-written file.
inline void write_text_atomic(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + tmp + "'");
        out << text;
    }
    std::filesystem::rename(tmp, path);
}

inline std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

inline std::string iso_utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return std::string(buf);
}

inline std::string trace_csv(const std::vector<TraceRow>& trace) {
    std::ostringstream out;
    out << "iter,msg_delta,constraint_norm,stationarity,f_R\n";
    out.setf(std::ios::fmtflags(0), std::ios::floatfield);
    out.precision(17);
    for (const auto& r : trace)
        out << r.iter << ',' << r.message_delta << ',' << r.constraint_norm << ','
            << r.stationarity << ',' << r.loss_value << '\n';
    return out.str();
}

/// Result document.  generated_at is the only field allowed to differ between
/// identical invocations.
inline ojson result_to_json(const std::string& problem_hash, const std::string& method,
                            unsigned long long seed, const std::vector<std::string>& element_ids,
                            const SolveReport& rep, double loss_value,
                            const std::string& timestamp) {
    ojson j;
    j["format_version"] = 1;
    j["problem_hash"] = "fnv1a:" + problem_hash;
    j["generated_at"] = timestamp;
    j["method"] = method;
    j["seed"] = seed;
    j["converged"] = rep.converged;
    j["iterations"] = rep.iterations;
    ojson res;
    res["message_delta"] = rep.final_message_delta;
    res["constraint_norm"] = rep.final_constraint_norm;
    res["stationarity"] = rep.final_stationarity;
    j["final_residuals"] = std::move(res);
    if (std::isfinite(loss_value))
        j["loss_value"] = loss_value;
    else
        j["loss_value"] = nullptr;
    ojson sol;
    for (size_t i = 0; i < element_ids.size(); ++i)
        sol[element_ids[i]] = io_detail::vector_to_json(rep.x_star[i]);
    j["solution"] = std::move(sol);
    ojson trace = ojson::array();
    for (const auto& r : rep.trace)
        trace.push_back(ojson::array(
            {r.iter, r.message_delta, r.constraint_norm, r.stationarity,
             std::isfinite(r.loss_value) ? ojson(r.loss_value) : ojson(nullptr)}));
    j["trace"] = std::move(trace);
    return j;
}

}  // namespace regio
