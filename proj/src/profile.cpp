#include "spaqr/profile.h"

#include <algorithm>

#include <json.hpp>

namespace spaqr {

namespace {

using nlohmann::json;

// Linear-interpolation quantile of an unsorted sample; 0 for an empty one.
template <class T>
json quartiles(std::vector<T> v) {
    std::sort(v.begin(), v.end());
    auto q = [&](double p) -> double {
        if (v.empty()) return 0.0;
        const double pos = p * (v.size() - 1);
        const size_t lo = static_cast<size_t>(pos);
        const size_t hi = std::min(lo + 1, v.size() - 1);
        const double frac = pos - lo;
        return (1.0 - frac) * static_cast<double>(v[lo]) + frac * static_cast<double>(v[hi]);
    };
    return {{"min", q(0.0)}, {"q1", q(0.25)}, {"median", q(0.5)}, {"q3", q(0.75)},
            {"max", q(1.0)}};
}

const char* solver_name(SolverKind s) {
    switch (s) {
        case SolverKind::Spaqr: return "spaqr";
        case SolverKind::Direct: return "direct";
        case SolverKind::Diag: return "diag";
    }
    return "?";
}

std::string check(const json& j);  // forward

}  // namespace

std::string make_profile(const Pipeline& p, const SolveReport* rep) {
    const Factorization* F = p.factorization();
    const PipelineOptions& o = p.options();

    json levels = json::array();
    long long nnz_w = 0;
    Index trailing = 0, dropped = 0;
    if (F) {
        nnz_w = F->nnz_w();
        trailing = static_cast<Index>(F->trailing_rows.size());
        dropped = static_cast<Index>(F->dropped_rows.size());
        for (const StageStats& st : F->stages) {
            levels.push_back({{"stage", st.stage},
                              {"factorize", st.t_eliminate},
                              {"reassign", st.t_reassign},
                              {"scale", st.t_scale},
                              {"sparsify", st.t_sparsify},
                              {"merge", st.t_merge},
                              {"interface_cols", quartiles(st.front_cols)},
                              {"aspect", quartiles(st.front_aspect)},
                              {"top_rows", st.top_rows},
                              {"top_cols", st.top_cols},
                              {"nnz_w", st.nnz_w}});
        }
    }

    json j = {
        {"version", 1},
        {"matrix", {{"rows", p.rows()}, {"cols", p.cols()}, {"nnz", p.scaled().nnz()}}},
        {"options",
         {{"eps", o.eps},
          {"levels", F ? p.hierarchy().num_levels : 0},
          {"skip", o.skip_levels},
          {"solver", solver_name(o.solver)},
          {"tol", o.tol},
          {"maxit", o.maxit}}},
        {"levels", levels},
        {"totals",
         {{"t_partition", p.timings().t_partition},
          {"t_factorize", p.timings().t_factorize},
          {"t_solve", rep ? rep->t_solve : 0.0},
          {"nnz_w", nnz_w},
          {"dropped_rows", dropped},
          {"trailing_rows", trailing}}},
        {"solve",
         {{"iterations", rep ? rep->iterations : 0},
          {"converged", rep ? rep->converged : false},
          {"residuals", rep ? json(rep->residual_history) : json::array()}}},
    };
    return j.dump(2) + "\n";
}

namespace {

enum class Kind { Num, Int, Str };

std::string need(const json& j, const char* key, Kind kind, const char* where) {
    if (!j.contains(key)) return std::string(where) + ": missing '" + key + "'";
    const json& v = j.at(key);
    const bool ok = kind == Kind::Num   ? v.is_number()
                    : kind == Kind::Int ? (v.is_number_integer() || v.is_number_unsigned())
                                        : v.is_string();
    if (!ok) return std::string(where) + ": '" + key + "' has the wrong type";
    return "";
}

std::string check_quartiles(const json& j, const char* where) {
    for (const char* k : {"min", "q1", "median", "q3", "max"}) {
        auto e = need(j, k, Kind::Num, where);
        if (!e.empty()) return e;
    }
    return "";
}

std::string check(const json& j) {
    for (const char* k : {"version", "matrix", "options", "levels", "totals", "solve"})
        if (!j.contains(k)) return std::string("profile: missing '") + k + "'";
    if (j["version"] != 1) return "profile: unsupported version";

    for (const char* k : {"rows", "cols", "nnz"}) {
        auto e = need(j["matrix"], k, Kind::Int, "matrix");
        if (!e.empty()) return e;
    }
    {
        const json& o = j["options"];
        for (const char* k : {"eps", "tol"}) {
            auto e = need(o, k, Kind::Num, "options");
            if (!e.empty()) return e;
        }
        for (const char* k : {"levels", "skip", "maxit"}) {
            auto e = need(o, k, Kind::Int, "options");
            if (!e.empty()) return e;
        }
        auto e = need(o, "solver", Kind::Str, "options");
        if (!e.empty()) return e;
    }
    if (!j["levels"].is_array()) return "profile: 'levels' is not an array";
    for (const json& lv : j["levels"]) {
        for (const char* k : {"factorize", "reassign", "scale", "sparsify", "merge"}) {
            auto e = need(lv, k, Kind::Num, "levels[]");
            if (!e.empty()) return e;
            if (lv[k].get<double>() < 0.0)
                return std::string("levels[]: negative phase time '") + k + "'";
        }
        for (const char* k : {"stage", "top_rows", "top_cols", "nnz_w"}) {
            auto e = need(lv, k, Kind::Int, "levels[]");
            if (!e.empty()) return e;
        }
        for (const char* k : {"interface_cols", "aspect"}) {
            if (!lv.contains(k) || !lv[k].is_object())
                return std::string("levels[]: missing object '") + k + "'";
            auto e = check_quartiles(lv[k], k);
            if (!e.empty()) return e;
        }
    }
    {
        const json& t = j["totals"];
        for (const char* k : {"t_partition", "t_factorize", "t_solve"}) {
            auto e = need(t, k, Kind::Num, "totals");
            if (!e.empty()) return e;
            if (t[k].get<double>() < 0.0)
                return std::string("totals: negative time '") + k + "'";
        }
        for (const char* k : {"nnz_w", "dropped_rows", "trailing_rows"}) {
            auto e = need(t, k, Kind::Int, "totals");
            if (!e.empty()) return e;
        }
    }
    {
        const json& s = j["solve"];
        auto e = need(s, "iterations", Kind::Int, "solve");
        if (!e.empty()) return e;
        if (!s.contains("converged") || !s["converged"].is_boolean())
            return "solve: missing boolean 'converged'";
        if (!s.contains("residuals") || !s["residuals"].is_array())
            return "solve: missing array 'residuals'";
    }
    return "";
}

}  // namespace

std::string validate_profile(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) return "profile: not valid JSON";
    return check(j);
}

}  // namespace spaqr
