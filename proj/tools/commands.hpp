#pragma once

// Subcommands of the tatonnement tool. run_cli is the whole program minus
// process setup, so tests can drive it in-process.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fisher/fisher.hpp>

namespace fisher::cli {

enum Exit { ok = 0, input_error = 1, cap = 2, check_failed = 2, diverged = 3, invariant_failure = 4 };

struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string read_file(const std::string& path, const std::string& flag) {
    std::ifstream in(path);
    if (!in) throw InputError(flag + ": cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline json read_json(const std::string& path, const std::string& flag) {
    try {
        return json::parse(read_file(path, flag));
    } catch (const json::parse_error& e) {
        throw InputError(flag + ": " + path + " is not valid JSON: " + e.what());
    }
}

/// Accepts {"g1": 0.3, ...} or any object carrying such a map under "prices".
inline PriceVector read_prices(const Market& mk, const std::string& path, const std::string& flag) {
    json doc = read_json(path, flag);
    if (doc.is_object() && doc.contains("prices")) doc = doc["prices"];
    if (!doc.is_object()) throw InputError(flag + ": " + path + " must map good names to prices");
    PriceVector p(static_cast<Eigen::Index>(mk.m()));
    for (std::size_t j = 0; j < mk.m(); ++j) {
        const auto it = doc.find(mk.goods[j]);
        if (it == doc.end() || !it->is_number())
            throw InputError(flag + ": " + path + " has no numeric price for good " + mk.goods[j]);
        p[static_cast<Eigen::Index>(j)] = it->get<double>();
    }
    for (const auto& [name, _] : doc.items())
        if (std::find(mk.goods.begin(), mk.goods.end(), name) == mk.goods.end())
            throw InputError(flag + ": " + path + " prices undeclared good " + name);
    return p;
}

/// {"agents": [{"goods": {"g1": 0.2, ...}, "levels": [...]}, ...]}; missing
/// goods are zero and missing levels are recovered from the goods bundle.
inline Allocation read_allocation(const Market& mk, const std::string& path) {
    const std::string flag = "--allocation";
    const json doc = read_json(path, flag);
    if (!doc.is_object() || !doc.contains("agents") || !doc["agents"].is_array() || doc["agents"].size() != mk.n())
        throw InputError(flag + ": " + path + " must list one entry per agent under \"agents\"");
    Allocation x;
    for (std::size_t i = 0; i < mk.n(); ++i) {
        const json& e = doc["agents"][i];
        Vector goods = Vector::Zero(static_cast<Eigen::Index>(mk.m()));
        if (e.contains("goods"))
            for (const auto& [name, v] : e["goods"].items()) {
                const auto it = std::find(mk.goods.begin(), mk.goods.end(), name);
                if (it == mk.goods.end()) throw InputError(flag + ": agent " + std::to_string(i) + " holds undeclared good " + name);
                goods[it - mk.goods.begin()] = v.get<double>();
            }
        if (e.contains("levels")) {
            Bundle b{goods, e["levels"].get<std::vector<double>>()};
            x.push_back(std::move(b));
        } else {
            try {
                x.push_back(bundle_from_goods(mk.agents[i], goods));
            } catch (const DemandError& err) {
                throw InputError(flag + ": agent " + std::to_string(i) + ": " + err.what());
            }
        }
    }
    return x;
}

inline json allocation_json(const Market& mk, const Allocation& x) {
    json agents = json::array();
    for (const auto& b : x) agents.push_back({{"goods", prices_json(mk, b.x)}, {"levels", b.levels}});
    return {{"agents", agents}};
}

inline void emit(const json& j, const std::string& out_path, std::ostream& out) {
    const std::string text = j.dump(2) + "\n";
    if (out_path.empty()) {
        out << text;
        return;
    }
    std::ofstream f(out_path);
    if (!f) throw InputError("--out: cannot write " + out_path);
    f << text;
}

inline Market load(const std::string& path) {
    try {
        return load_market(read_file(path, "--market"));
    } catch (const MarketError& e) {
        throw InputError("--market: " + path + ": " + e.what());
    }
}

inline double parse_real(const std::string& s, const std::string& flag) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size() || !std::isfinite(v)) throw InputError(flag + ": not a number: " + s);
    return v;
}

inline std::size_t parse_count(const std::string& s, const std::string& flag) {
    const double v = parse_real(s, flag);
    if (v < 0 || v != std::floor(v) || v > 1e15) throw InputError(flag + ": not a non-negative integer: " + s);
    return static_cast<std::size_t>(v);
}

struct Options {
    std::string market, epsilon = "auto", init = "uniform", trace, out, prices, allocation;
    std::string max_iters;  // empty: per-command default
    double delta = 1e-3;
    bool delta_given = false;
    double tol = 1e-9;
    std::size_t check_every = 10;
    std::uint64_t seed = 0;
    std::size_t samples = 200;
    int definition = 1;
    bool strict = false;
};

inline int cmd_run(const Options& o, std::ostream& out, std::ostream& err) {
    const Market mk = load(o.market);
    RunConfig cfg;
    if (o.epsilon != "auto") cfg.epsilon = parse_real(o.epsilon, "--epsilon");
    cfg.delta = o.delta;
    if (!o.max_iters.empty()) cfg.max_iters = parse_count(o.max_iters, "--max-iters");
    cfg.check_every = o.check_every;
    cfg.seed = o.seed;
    cfg.bound_samples = o.samples;
    if (o.init == "uniform") {
        cfg.init = InitMode::uniform;
    } else if (o.init == "spend-reset") {
        cfg.init = InitMode::spend_reset;
    } else {
        cfg.init = InitMode::explicit_vector;
        cfg.init_vector = read_prices(mk, o.init, "--init");
    }
    try {
        validate_config(cfg);
    } catch (const std::invalid_argument& e) {
        throw InputError(std::string("run: ") + e.what());
    }

    RunOutput res;
    try {
        res = run(mk, cfg);
    } catch (const NumericError& e) {
        err << "run: " << e.what() << "\n";
        return diverged;
    } catch (const std::invalid_argument& e) {
        throw InputError(std::string("--init: ") + e.what());
    }
    for (const auto& w : res.result.warnings) err << "warning: " << w << "\n";

    if (!o.trace.empty()) {
        std::ofstream f(o.trace);
        if (!f) throw InputError("--trace: cannot write " + o.trace);
        write_trace_csv(f, res.trace, mk.goods);
    }
    const auto inv = assert_invariants(res.trace, mk, res.result.epsilon_auto);
    json j = to_json(res.result);
    j["market_hash"] = res.trace.market_hash;
    j["prices"] = prices_json(mk, res.result.p_final);
    j["invariants"] = to_json(inv);
    j["warnings"] = res.result.warnings;
    emit(j, o.out, out);

    if (o.strict && !inv.ok()) {
        for (const auto* c : inv.classes())
            if (c->violations > 0)
                err << "invariant " << c->name << ": " << c->violations << " violations, first at round "
                    << *c->first_round << "\n";
        return invariant_failure;
    }
    switch (res.result.reason) {
        case StopReason::converged: return ok;
        case StopReason::iteration_cap: return cap;
        case StopReason::divergence: return diverged;
    }
    return ok;
}

inline int cmd_solve(const Options& o, std::ostream& out) {
    const Market mk = load(o.market);
    SolveOptions so;
    so.tol = o.tol;
    if (!o.max_iters.empty()) so.max_iters = parse_count(o.max_iters, "--max-iters");
    const auto rep = solve_equilibrium(mk, so);
    json j = to_json(mk, rep);
    j["allocation"] = allocation_json(mk, rep.x_star);
    emit(j, o.out, out);
    return rep.converged ? ok : cap;
}

inline int cmd_check(const Options& o, std::ostream& out) {
    const Market mk = load(o.market);
    if (o.prices.empty()) throw InputError("check: --prices is required");
    if (o.definition != 1 && o.definition != 2) throw InputError("--definition: must be 1 or 2");
    const PriceVector p = read_prices(mk, o.prices, "--prices");
    for (Eigen::Index j = 0; j < p.size(); ++j)
        if (!(p[j] > 0)) throw InputError("--prices: price of good " + mk.goods[static_cast<std::size_t>(j)] + " is not positive");

    Allocation x;
    if (!o.allocation.empty()) {
        x = read_allocation(mk, o.allocation);
    } else {
        try {
            x = respond(mk, p).bundles;
        } catch (const DemandError& e) {
            throw InputError(std::string("check: demand is not unique here, pass --allocation (") + e.what() + ")");
        }
    }
    ApproxEquilibriumReport rep;
    try {
        rep = o.definition == 1 ? check_def1(mk, p, x, o.delta) : check_def2(mk, p, x, o.delta);
    } catch (const DemandError& e) {
        throw InputError(std::string("check: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw InputError(std::string("--allocation: ") + e.what());
    }
    emit(to_json(rep), o.out, out);
    return rep.overall() ? ok : check_failed;
}

inline int cmd_bounds(const Options& o, std::ostream& out) {
    const Market mk = load(o.market);
    BoundsOptions bo;
    bo.samples = o.samples;
    bo.seed = o.seed;
    try {
        emit(to_json(estimate_bounds(mk, bo)), o.out, out);
    } catch (const DomainError& e) {
        throw InputError(std::string("bounds: ") + e.what());
    }
    return ok;
}

inline int cmd_distort(const Options& o, std::ostream& out) {
    const Market mk = load(o.market);
    if (!o.delta_given) throw InputError("distort: --delta is required");
    try {
        emit(to_json(distort(mk, o.delta)), o.out, out);
    } catch (const MarketError& e) {
        throw InputError(std::string("distort: ") + e.what());
    }
    return ok;
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Fisher-market tatonnement simulator"};
    app.require_subcommand(1);
    Options o;

    auto market_flag = [&](CLI::App* sc) { sc->add_option("--market", o.market, "market JSON file")->required(); };
    auto out_flag = [&](CLI::App* sc) { sc->add_option("--out", o.out, "write JSON here instead of stdout"); };
    auto delta_flag = [&](CLI::App* sc, const char* help) {
        sc->add_option("--delta", o.delta, help)->check(CLI::PositiveNumber)->each([&](const std::string&) { o.delta_given = true; });
    };

    auto* run_sc = app.add_subcommand("run", "simulate tatonnement and write a trace and result");
    market_flag(run_sc);
    run_sc->add_option("--epsilon", o.epsilon, "step size in (0, 1], or auto");
    delta_flag(run_sc, "stop once the equilibrium residual is at most this");
    run_sc->add_option("--max-iters", o.max_iters, "round cap");
    run_sc->add_option("--init", o.init, "uniform, spend-reset, or a prices JSON file");
    run_sc->add_option("--trace", o.trace, "trace CSV path");
    run_sc->add_option("--check-every", o.check_every, "rounds between convergence checks")->check(CLI::PositiveNumber);
    run_sc->add_option("--seed", o.seed, "seed for bounds sampling and random starts");
    run_sc->add_option("--samples", o.samples, "price samples for the automatic step size")->check(CLI::PositiveNumber);
    run_sc->add_flag("--strict", o.strict, "exit 4 when a trace invariant fails");
    out_flag(run_sc);

    auto* solve_sc = app.add_subcommand("solve", "compute the equilibrium with the reference solver");
    market_flag(solve_sc);
    solve_sc->add_option("--tol", o.tol, "target residual")->check(CLI::PositiveNumber);
    solve_sc->add_option("--max-iters", o.max_iters, "iteration cap");
    out_flag(solve_sc);

    auto* check_sc = app.add_subcommand("check", "test prices (and an allocation) for approximate equilibrium");
    market_flag(check_sc);
    check_sc->add_option("--prices", o.prices, "prices JSON file")->required();
    check_sc->add_option("--allocation", o.allocation, "allocation JSON file; defaults to demand at the prices");
    check_sc->add_option("--definition", o.definition, "1 or 2")->check(CLI::IsMember({1, 2}));
    delta_flag(check_sc, "approximation level");
    out_flag(check_sc);

    auto* bounds_sc = app.add_subcommand("bounds", "estimate curvature constants and the automatic step size");
    market_flag(bounds_sc);
    bounds_sc->add_option("--samples", o.samples, "number of price samples")->check(CLI::PositiveNumber);
    bounds_sc->add_option("--seed", o.seed, "sampling seed");
    out_flag(bounds_sc);

    auto* distort_sc = app.add_subcommand("distort", "turn resource-allocation utilities into nested CES-Leontief");
    market_flag(distort_sc);
    delta_flag(distort_sc, "target approximation level in (0, 1)");
    out_flag(distort_sc);

    std::vector<const char*> argv{"tatonnement"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return ok;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n";
        return input_error;
    }

    try {
        if (run_sc->parsed()) return cmd_run(o, out, err);
        if (solve_sc->parsed()) return cmd_solve(o, out);
        if (check_sc->parsed()) return cmd_check(o, out);
        if (bounds_sc->parsed()) return cmd_bounds(o, out);
        if (distort_sc->parsed()) return cmd_distort(o, out);
    } catch (const InputError& e) {
        err << e.what() << "\n";
        return input_error;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return input_error;
    }
    return input_error;
}

}  // namespace fisher::cli
