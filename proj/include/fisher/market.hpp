#pragma once

// Fisher market instances: parsing, normalization and validation.
//
// Every utility family is stored in a common "object" form. An object is a
// Leontief bundle of goods (coefficients a_j) with an outer weight c:
//   - CES / Cobb-Douglas: one singleton object per good in the support, a = 1.
//   - Leontief: a single object, c = 1.
//   - nested CES-Leontief / resource allocation: the objects as given.
// Goods are named in files and densely indexed in memory. Supplies are 1.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace fisher {

using json = nlohmann::json;

class MarketError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

enum class Family { ces, cobb_douglas, leontief, nested_ces_leontief, resource_allocation };

inline const char* family_name(Family f) {
    switch (f) {
        case Family::ces: return "ces";
        case Family::cobb_douglas: return "cobb_douglas";
        case Family::leontief: return "leontief";
        case Family::nested_ces_leontief: return "nested_ces_leontief";
        case Family::resource_allocation: return "resource_allocation";
    }
    return "?";
}

inline Family parse_family(const std::string& s) {
    if (s == "ces") return Family::ces;
    if (s == "cobb_douglas") return Family::cobb_douglas;
    if (s == "leontief") return Family::leontief;
    if (s == "nested_ces_leontief") return Family::nested_ces_leontief;
    if (s == "resource_allocation") return Family::resource_allocation;
    throw MarketError("unknown utility family \"" + s + "\"");
}

inline bool has_rho(Family f) { return f == Family::ces || f == Family::nested_ces_leontief; }

struct Term {
    std::size_t good;
    double coef;
};

struct ObjectSpec {
    double c = 1.0;
    std::vector<Term> a;
};

struct UtilitySpec {
    Family family = Family::ces;
    double rho = 0.0;  // meaningful only when has_rho(family)
    std::vector<ObjectSpec> objects;

    std::size_t object_count() const { return objects.size(); }
};

struct Agent {
    double budget = 0.0;
    UtilitySpec utility;
};

struct Market {
    std::vector<std::string> goods;
    std::vector<Agent> agents;
    bool normalized = false;

    std::size_t m() const { return goods.size(); }
    std::size_t n() const { return agents.size(); }
    std::size_t object_count() const {
        std::size_t k = 0;
        for (const auto& ag : agents) k += ag.utility.object_count();
        return k;
    }
    double total_budget() const {
        double s = 0.0;
        for (const auto& ag : agents) s += ag.budget;
        return s;
    }
};

namespace detail {

inline double log_sum_exp(const std::vector<double>& v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double t : v) mx = std::max(mx, t);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double t : v) s += std::exp(t - mx);
    return mx + std::log(s);
}

inline void require_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) throw MarketError(where + ": expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed) ok = ok || it.key() == k;
        if (!ok) throw MarketError(where + ": unknown field \"" + it.key() + "\"");
    }
}

inline double number(const json& v, const std::string& where) {
    if (!v.is_number()) throw MarketError(where + ": expected a number");
    double x = v.get<double>();
    if (!std::isfinite(x)) throw MarketError(where + ": non-finite value");
    return x;
}

inline std::vector<Term> parse_terms(const json& v, const std::map<std::string, std::size_t>& index,
                                     const std::string& where, bool strictly_positive) {
    if (!v.is_object()) throw MarketError(where + ": expected an object of good -> coefficient");
    std::vector<Term> out;
    for (auto it = v.begin(); it != v.end(); ++it) {
        auto g = index.find(it.key());
        if (g == index.end()) throw MarketError(where + ": good \"" + it.key() + "\" is not declared");
        double x = number(it.value(), where + "." + it.key());
        if (x < 0) throw MarketError(where + ": negative coefficient for \"" + it.key() + "\"");
        if (strictly_positive && x == 0)
            throw MarketError(where + ": zero coefficient for \"" + it.key() + "\" inside an object");
        if (x > 0) out.push_back({g->second, x});
    }
    std::sort(out.begin(), out.end(), [](const Term& l, const Term& r) { return l.good < r.good; });
    return out;
}

inline double sum_coef(const std::vector<Term>& ts) {
    double s = 0.0;
    for (const auto& t : ts) s += t.coef;
    return s;
}

}  // namespace detail

inline void check_rho(Family f, double rho) {
    if (!has_rho(f)) return;
    if (!std::isfinite(rho) || rho >= 1.0 || rho == 0.0)
        throw MarketError(std::string("rho out of range for family ") + family_name(f) +
                          ": need rho in (-inf,0) or (0,1)");
}

/// Parses a version-1 market document. The result is not normalized.
inline Market parse_market(const json& doc) {
    detail::require_keys(doc, {"version", "goods", "agents"}, "market");
    if (!doc.contains("version") || !doc["version"].is_number_integer() || doc["version"].get<int>() != 1)
        throw MarketError("market: unsupported or missing version (expected 1)");
    if (!doc.contains("goods") || !doc["goods"].is_array() || doc["goods"].empty())
        throw MarketError("market: \"goods\" must be a non-empty array");
    if (!doc.contains("agents") || !doc["agents"].is_array() || doc["agents"].empty())
        throw MarketError("market: \"agents\" must be a non-empty array");

    Market mk;
    std::map<std::string, std::size_t> index;
    for (const auto& g : doc["goods"]) {
        if (!g.is_string()) throw MarketError("market: good names must be strings");
        auto name = g.get<std::string>();
        if (!index.emplace(name, mk.goods.size()).second) throw MarketError("market: duplicate good \"" + name + "\"");
        mk.goods.push_back(name);
    }

    for (std::size_t i = 0; i < doc["agents"].size(); ++i) {
        const auto& ja = doc["agents"][i];
        const std::string where = "agents[" + std::to_string(i) + "]";
        detail::require_keys(ja, {"budget", "utility"}, where);
        if (!ja.contains("budget") || !ja.contains("utility")) throw MarketError(where + ": budget and utility required");
        Agent ag;
        ag.budget = detail::number(ja["budget"], where + ".budget");
        if (ag.budget < 0) throw MarketError(where + ": negative budget");

        const auto& ju = ja["utility"];
        detail::require_keys(ju, {"family", "rho", "c", "a", "objects"}, where + ".utility");
        if (!ju.contains("family") || !ju["family"].is_string()) throw MarketError(where + ".utility: family required");
        auto& u = ag.utility;
        u.family = parse_family(ju["family"].get<std::string>());

        auto forbid = [&](const char* key) {
            if (ju.contains(key))
                throw MarketError(where + ".utility: field \"" + key + "\" not allowed for family " + family_name(u.family));
        };
        auto need = [&](const char* key) -> const json& {
            if (!ju.contains(key))
                throw MarketError(where + ".utility: field \"" + key + "\" required for family " + family_name(u.family));
            return ju[key];
        };

        if (has_rho(u.family)) {
            u.rho = detail::number(need("rho"), where + ".utility.rho");
            check_rho(u.family, u.rho);
        } else {
            forbid("rho");
        }

        switch (u.family) {
            case Family::ces:
            case Family::cobb_douglas: {
                forbid("a");
                forbid("objects");
                auto c = detail::parse_terms(need("c"), index, where + ".utility.c", false);
                for (const auto& t : c) u.objects.push_back({t.coef, {{t.good, 1.0}}});
                break;
            }
            case Family::leontief: {
                forbid("c");
                forbid("objects");
                auto a = detail::parse_terms(need("a"), index, where + ".utility.a", false);
                if (!a.empty()) u.objects.push_back({1.0, std::move(a)});
                break;
            }
            case Family::nested_ces_leontief:
            case Family::resource_allocation: {
                forbid("c");
                forbid("a");
                const auto& objs = need("objects");
                if (!objs.is_array()) throw MarketError(where + ".utility.objects: expected an array");
                for (std::size_t k = 0; k < objs.size(); ++k) {
                    const std::string ow = where + ".utility.objects[" + std::to_string(k) + "]";
                    detail::require_keys(objs[k], {"c", "a"}, ow);
                    if (!objs[k].contains("c") || !objs[k].contains("a")) throw MarketError(ow + ": c and a required");
                    ObjectSpec o;
                    o.c = detail::number(objs[k]["c"], ow + ".c");
                    if (o.c <= 0) throw MarketError(ow + ": object coefficient c must be positive");
                    o.a = detail::parse_terms(objs[k]["a"], index, ow + ".a", true);
                    if (o.a.empty()) throw MarketError(ow + ": object has no goods");
                    u.objects.push_back(std::move(o));
                }
                break;
            }
        }
        mk.agents.push_back(std::move(ag));
    }
    return mk;
}

inline Market parse_market(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw MarketError(std::string("malformed market document: ") + e.what());
    }
    return parse_market(doc);
}

inline Market parse_market(const char* text) { return parse_market(std::string(text)); }

inline json to_json(const Market& mk) {
    json doc;
    doc["version"] = 1;
    doc["goods"] = mk.goods;
    doc["agents"] = json::array();
    for (const auto& ag : mk.agents) {
        const auto& u = ag.utility;
        json ju;
        ju["family"] = family_name(u.family);
        if (has_rho(u.family)) ju["rho"] = u.rho;
        switch (u.family) {
            case Family::ces:
            case Family::cobb_douglas: {
                json c = json::object();
                for (const auto& o : u.objects) c[mk.goods[o.a.front().good]] = o.c;
                ju["c"] = c;
                break;
            }
            case Family::leontief: {
                json a = json::object();
                if (!u.objects.empty())
                    for (const auto& t : u.objects.front().a) a[mk.goods[t.good]] = t.coef;
                ju["a"] = a;
                break;
            }
            default: {
                ju["objects"] = json::array();
                for (const auto& o : u.objects) {
                    json a = json::object();
                    for (const auto& t : o.a) a[mk.goods[t.good]] = t.coef;
                    ju["objects"].push_back({{"c", o.c}, {"a", a}});
                }
            }
        }
        doc["agents"].push_back({{"budget", ag.budget}, {"utility", ju}});
    }
    return doc;
}

/// FNV-1a over the canonical JSON text; stable for identical markets.
inline std::uint64_t market_hash(const Market& mk) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : to_json(mk).dump()) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

/// Scales budgets to sum 1 and brings coefficients to canonical scale without
/// changing any agent's behavior.
inline Market normalize(Market mk) {
    double total = mk.total_budget();
    if (!(total > 0)) throw MarketError("normalize: all budgets are zero");
    for (std::size_t i = 0; i < mk.n(); ++i) {
        auto& ag = mk.agents[i];
        ag.budget /= total;
        auto& u = ag.utility;
        if (u.objects.empty()) throw MarketError("normalize: agent " + std::to_string(i) + " has an empty utility support");

        switch (u.family) {
            case Family::ces:
                break;
            case Family::cobb_douglas: {
                double s = 0.0;
                for (const auto& o : u.objects) s += o.c;
                for (auto& o : u.objects) o.c /= s;
                break;
            }
            case Family::leontief: {
                auto& o = u.objects.front();
                double s = detail::sum_coef(o.a);
                for (auto& t : o.a) t.coef /= s;
                o.c = 1.0;
                break;
            }
            case Family::nested_ces_leontief:
            case Family::resource_allocation: {
                // a per object sums to 1; c absorbs the factor so c * min(x/a) is unchanged
                for (auto& o : u.objects) {
                    double s = detail::sum_coef(o.a);
                    for (auto& t : o.a) t.coef /= s;
                    o.c /= s;
                }
                if (u.family == Family::nested_ces_leontief) {
                    const double r = u.rho / (1.0 - u.rho);
                    std::vector<double> logs;
                    for (const auto& o : u.objects) logs.push_back(r * std::log(o.c));
                    const double shift = -detail::log_sum_exp(logs) / r;
                    for (auto& o : u.objects) o.c = std::exp(std::log(o.c) + shift);
                }
                break;
            }
        }
    }
    mk.normalized = true;
    return mk;
}

struct Violation {
    std::string kind;  // "undemanded good" | "zero budget" | "degenerate object" | "empty support"
    std::size_t index;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
    std::string summary() const {
        std::ostringstream os;
        for (const auto& v : violations) os << v.kind << ": " << v.message << "\n";
        return os.str();
    }
};

inline ValidationReport validate(const Market& mk) {
    ValidationReport rep;
    std::vector<bool> demanded(mk.m(), false);
    for (std::size_t i = 0; i < mk.n(); ++i) {
        const auto& ag = mk.agents[i];
        if (!(ag.budget > 0))
            rep.violations.push_back({"zero budget", i, "agent " + std::to_string(i) + " has zero budget"});
        if (ag.utility.objects.empty())
            rep.violations.push_back({"empty support", i, "agent " + std::to_string(i) + " wants no goods"});
        for (std::size_t k = 0; k < ag.utility.objects.size(); ++k) {
            const auto& o = ag.utility.objects[k];
            bool degenerate = !(o.c > 0) || o.a.empty();
            for (const auto& t : o.a) degenerate = degenerate || !(t.coef > 0);
            if (degenerate)
                rep.violations.push_back({"degenerate object", i,
                                          "agent " + std::to_string(i) + " object " + std::to_string(k) +
                                              " has a non-positive coefficient or no goods"});
            if (ag.budget > 0)
                for (const auto& t : o.a) demanded[t.good] = true;
        }
    }
    for (std::size_t j = 0; j < mk.m(); ++j)
        if (!demanded[j])
            rep.violations.push_back({"undemanded good", j, "good \"" + mk.goods[j] + "\" is wanted by no agent"});
    return rep;
}

/// parse + normalize + validate; throws MarketError listing every violation.
inline Market load_market(const std::string& text) {
    Market mk = normalize(parse_market(text));
    auto rep = validate(mk);
    if (!rep.ok()) throw MarketError("invalid market:\n" + rep.summary());
    return mk;
}

inline Market load_market_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MarketError("cannot open market file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return load_market(ss.str());
}

/// max_i |objects of i|
inline std::size_t max_objects_per_agent(const Market& mk) {
    std::size_t k = 0;
    for (const auto& ag : mk.agents) k = std::max(k, ag.utility.object_count());
    return k;
}

/// True when no agent lists a good in two different objects.
inline bool objects_disjoint(const Agent& ag) {
    std::set<std::size_t> seen;
    for (const auto& o : ag.utility.objects)
        for (const auto& t : o.a)
            if (!seen.insert(t.good).second) return false;
    return true;
}

}  // namespace fisher
