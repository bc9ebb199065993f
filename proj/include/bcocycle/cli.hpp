#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "blaschke.hpp"
#include "cocycle.hpp"
#include "driving.hpp"
#include "errors.hpp"
#include "hardy.hpp"
#include "lyapunov.hpp"

namespace bcocycle::cli {

inline constexpr const char* kVersion = "0.1.0";

enum class Scenario { spectrum, phase_scan, gaussian_collapse, uniform_collapse, stability, projection_norms, appendix_example };

inline const std::map<std::string, Scenario>& scenario_names() {
    static const std::map<std::string, Scenario> m = {{"spectrum", Scenario::spectrum},
                                                      {"phase-scan", Scenario::phase_scan},
                                                      {"gaussian-collapse", Scenario::gaussian_collapse},
                                                      {"uniform-collapse", Scenario::uniform_collapse},
                                                      {"stability", Scenario::stability},
                                                      {"projection-norms", Scenario::projection_norms},
                                                      {"appendix-example", Scenario::appendix_example}};
    return m;
}

struct ExperimentConfig {
    Scenario scenario = Scenario::spectrum;
    std::string scenario_name;
    std::vector<BlaschkeProduct> family;
    std::vector<double> bernoulli;
    std::vector<std::vector<double>> markov;
    std::uint64_t seed = 1;
    std::optional<double> R;  // empty: "auto"
    int N = 40;
    int M = 0;
    std::int64_t n_steps = 0;
    std::int64_t burn_in = 100;
    int k = 0;
    std::vector<double> epsilons;
    std::vector<double> p_list;
    std::vector<int> run_lengths;
    int max_samples = 9;
    std::string out_dir = "out";
    nlohmann::json raw;

    bool uses_p_list() const {
        return scenario == Scenario::phase_scan || scenario == Scenario::gaussian_collapse ||
               scenario == Scenario::uniform_collapse;
    }
};

namespace detail {

inline BlaschkeProduct bpz(std::vector<cplx> zeros) { return BlaschkeProduct(0.0, std::move(zeros)); }

// {B_0.5, B_0.6} with B_c(z) = z ((z - c)/(1 - c z))^2.
inline std::vector<BlaschkeProduct> appendix_family() {
    return {bpz({0.0, 0.5, 0.5}), bpz({0.0, 0.6, 0.6})};
}

// {z^2, M_{1/4}^2}.
inline std::vector<BlaschkeProduct> switching_family() { return {bpz({0.0, 0.0}), bpz({-0.25, -0.25})}; }

inline double number_at(const nlohmann::json& j, const std::string& path) {
    if (!j.is_number()) throw ConfigError(path + ": expected number");
    return j.get<double>();
}

inline std::int64_t integer_at(const nlohmann::json& j, const std::string& path) {
    if (!j.is_number_integer()) throw ConfigError(path + ": expected integer");
    return j.get<std::int64_t>();
}

inline std::vector<double> numbers_at(const nlohmann::json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError(path + ": expected array of numbers");
    std::vector<double> v;
    for (std::size_t i = 0; i < j.size(); ++i) v.push_back(number_at(j[i], path + "[" + std::to_string(i) + "]"));
    return v;
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
    using namespace detail;
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    static const std::set<std::string> known = {"scenario", "family",  "alphabet", "law",     "seed",
                                                "R",        "N",       "M",        "n_steps", "burn_in",
                                                "k",        "epsilons", "p_list",  "run_lengths",
                                                "max_samples", "output"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ConfigError(it.key() + ": unknown field");

    ExperimentConfig c;
    c.raw = j;
    if (!j.contains("scenario") || !j["scenario"].is_string()) throw ConfigError("scenario: expected string");
    c.scenario_name = j["scenario"].get<std::string>();
    auto sit = scenario_names().find(c.scenario_name);
    if (sit == scenario_names().end()) throw ConfigError("scenario: unknown value '" + c.scenario_name + "'");
    c.scenario = sit->second;

    switch (c.scenario) {
        case Scenario::spectrum:
            c.family = appendix_family();
            c.n_steps = 10000;
            c.k = 5;
            break;
        case Scenario::phase_scan:
            c.family = switching_family();
            c.n_steps = 100000;
            c.p_list = {0.4, 0.6};
            break;
        case Scenario::gaussian_collapse:
            c.family = switching_family();
            c.n_steps = 2000;
            c.k = 2;
            c.p_list = {0.4};
            c.epsilons = {0.05};
            break;
        case Scenario::uniform_collapse:
            c.family = switching_family();
            c.n_steps = 2000;
            c.k = 2;
            c.p_list = {0.4};
            c.epsilons = {0.125, 0.1875};
            break;
        case Scenario::stability:
            c.family = appendix_family();
            c.n_steps = 10000;
            c.k = 5;
            c.epsilons = {0.1, 0.05, 0.025};
            break;
        case Scenario::projection_norms:
            c.family = switching_family();
            c.n_steps = 20000;
            c.run_lengths = {2, 4, 6};
            break;
        case Scenario::appendix_example:
            c.family = appendix_family();
            c.n_steps = 100000;
            c.k = 3;
            break;
    }
    c.bernoulli = std::vector<double>(c.family.size(), 1.0 / double(c.family.size()));

    if (j.contains("family")) {
        if (!j["family"].is_array() || j["family"].empty()) throw ConfigError("family: expected non-empty array");
        c.family.clear();
        for (std::size_t i = 0; i < j["family"].size(); ++i) {
            try {
                c.family.push_back(blaschke_from_json(j["family"][i]));
            } catch (const ConfigError& e) {
                throw ConfigError("family[" + std::to_string(i) + "]." + e.what());
            }
        }
        c.bernoulli = std::vector<double>(c.family.size(), 1.0 / double(c.family.size()));
    }
    if (j.contains("alphabet") && integer_at(j["alphabet"], "alphabet") != std::int64_t(c.family.size()))
        throw ConfigError("alphabet: does not match the number of family maps");
    if (j.contains("law")) {
        const auto& law = j["law"];
        if (!law.is_object() || law.size() != 1) throw ConfigError("law: expected {\"bernoulli\": [...]} or {\"markov\": {...}}");
        if (law.contains("bernoulli")) {
            c.bernoulli = numbers_at(law["bernoulli"], "law.bernoulli");
        } else if (law.contains("markov")) {
            const auto& m = law["markov"];
            if (!m.is_object() || !m.contains("P") || !m["P"].is_array()) throw ConfigError("law.markov.P: expected matrix");
            c.bernoulli.clear();
            for (std::size_t r = 0; r < m["P"].size(); ++r)
                c.markov.push_back(numbers_at(m["P"][r], "law.markov.P[" + std::to_string(r) + "]"));
        } else {
            throw ConfigError("law: expected key 'bernoulli' or 'markov'");
        }
    }
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned() && !(j["seed"].is_number_integer() && j["seed"].get<std::int64_t>() >= 0))
            throw ConfigError("seed: expected unsigned 64-bit integer");
        c.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("R")) {
        if (j["R"].is_string()) {
            if (j["R"].get<std::string>() != "auto") throw ConfigError("R: expected number or \"auto\"");
        } else {
            c.R = number_at(j["R"], "R");
            if (!(*c.R > 0.0 && *c.R < 1.0)) throw ConfigError("R: must lie in (0, 1)");
        }
    }
    if (j.contains("N")) c.N = int(integer_at(j["N"], "N"));
    if (j.contains("M")) c.M = int(integer_at(j["M"], "M"));
    if (j.contains("n_steps")) c.n_steps = integer_at(j["n_steps"], "n_steps");
    if (j.contains("burn_in")) c.burn_in = integer_at(j["burn_in"], "burn_in");
    if (j.contains("k")) c.k = int(integer_at(j["k"], "k"));
    if (j.contains("epsilons")) c.epsilons = numbers_at(j["epsilons"], "epsilons");
    if (j.contains("p_list")) c.p_list = numbers_at(j["p_list"], "p_list");
    if (j.contains("max_samples")) c.max_samples = int(integer_at(j["max_samples"], "max_samples"));
    if (j.contains("run_lengths")) {
        c.run_lengths.clear();
        for (double v : numbers_at(j["run_lengths"], "run_lengths")) {
            if (v != std::floor(v) || v < 1) throw ConfigError("run_lengths: expected positive integers");
            c.run_lengths.push_back(int(v));
        }
    }
    if (j.contains("output")) {
        const auto& o = j["output"];
        if (!o.is_object()) throw ConfigError("output: expected object");
        if (o.contains("dir")) {
            if (!o["dir"].is_string()) throw ConfigError("output.dir: expected string");
            c.out_dir = o["dir"].get<std::string>();
        }
    }

    if (c.N < 1 || c.N > 400) throw ConfigError("N: must lie in [1, 400]");
    if (c.M != 0 && c.M < 8 * c.N) throw ConfigError("M: must be 0 (default) or >= 8N");
    if (c.n_steps < 1) throw ConfigError("n_steps: must be >= 1");
    if (c.burn_in < 0) throw ConfigError("burn_in: must be >= 0");
    if (c.k != 0 && (c.k < 1 || c.k > 2 * c.N + 1)) throw ConfigError("k: must lie in [1, 2N+1]");
    if (c.max_samples < 1) throw ConfigError("max_samples: must be >= 1");
    for (std::size_t i = 0; i < c.epsilons.size(); ++i)
        if (!(c.epsilons[i] > 0.0 && c.epsilons[i] < 1.0))
            throw ConfigError("epsilons[" + std::to_string(i) + "]: must lie in (0, 1)");
    for (std::size_t i = 0; i < c.p_list.size(); ++i)
        if (!(c.p_list[i] >= 0.0 && c.p_list[i] <= 1.0))
            throw ConfigError("p_list[" + std::to_string(i) + "]: must lie in [0, 1]");
    if (c.uses_p_list() && c.family.size() != 2) throw ConfigError("family: p_list scenarios need exactly two maps");
    if (c.uses_p_list() && c.p_list.empty()) throw ConfigError("p_list: must be non-empty");
    if ((c.scenario == Scenario::stability || c.scenario == Scenario::gaussian_collapse ||
         c.scenario == Scenario::uniform_collapse) &&
        c.epsilons.empty())
        throw ConfigError("epsilons: must be non-empty");
    const std::size_t alpha = c.markov.empty() ? c.bernoulli.size() : c.markov.size();
    if (alpha != c.family.size()) throw ConfigError("law: alphabet size does not match the number of family maps");
    // Law validation (sums, squareness) through the process constructor.
    if (c.markov.empty())
        SymbolProcess(BernoulliLaw{c.bernoulli}, c.seed);
    else
        SymbolProcess(MarkovLaw{c.markov}, c.seed);
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: JSON parse error: ") + e.what());
    }
    return parse_config(j);
}

// ---- tables ----

using Cell = std::variant<std::int64_t, double, std::string, LogValue>;

struct Column {
    std::string name;
    std::string unit;
};

struct Table {
    std::string name;
    std::vector<Column> columns;
    std::vector<std::vector<Cell>> rows;
};

inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string o = "\"";
    for (char ch : s) o += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return o + "\"";
}

inline std::string format_cell(const Cell& c) {
    struct V {
        std::string operator()(std::int64_t v) const { return std::to_string(v); }
        std::string operator()(double v) const { return format_double(v); }
        std::string operator()(const std::string& v) const { return csv_field(v); }
        std::string operator()(const LogValue& v) const { return v.neg_inf ? "-inf" : format_double(v.value); }
    };
    return std::visit(V{}, c);
}

inline std::string to_csv(const Table& t) {
    std::string s;
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
        if (c) s += ',';
        s += csv_field(t.columns[c].name + " [" + t.columns[c].unit + "]");
    }
    s += "\r\n";
    for (const auto& row : t.rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) s += ',';
            s += format_cell(row[c]);
        }
        s += "\r\n";
    }
    return s;
}

struct RunResult {
    std::vector<Table> tables;
    nlohmann::json resolved;
    nlohmann::json summary = nlohmann::json::object();
};

// ---- execution helpers ----

// Runs f(0..n-1) on up to `threads` workers; the first exception is rethrown.
template <class F>
void parallel_for(std::size_t n, int threads, F&& f) {
    const std::size_t workers = std::min<std::size_t>(n, std::size_t(std::max(1, threads)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(err_mu);
                    if (!err) err = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

inline std::vector<AnalyticMap> family_maps(const ExperimentConfig& c) {
    std::vector<AnalyticMap> m;
    for (const auto& b : c.family) m.emplace_back(b);
    return m;
}

inline SymbolProcess make_process(const ExperimentConfig& c, std::optional<double> p = std::nullopt) {
    if (p) return SymbolProcess(BernoulliLaw{{*p, 1.0 - *p}}, c.seed);
    if (!c.markov.empty()) return SymbolProcess(MarkovLaw{c.markov}, c.seed);
    return SymbolProcess(BernoulliLaw{c.bernoulli}, c.seed);
}

inline double resolve_radius(const ExperimentConfig& c) {
    const auto maps = family_maps(c);
    if (!c.R) return admissible_radius(maps, std::nullopt);
    if (!radius_feasible(maps, *c.R))
        throw InfeasibilityError("R: r_T(R) >= R for the configured family at R = " + format_double(*c.R));
    return *c.R;
}

inline std::uint64_t frame_seed(const ExperimentConfig& c) { return splitmix64(c.seed ^ 0x51f15e11ULL); }

inline QROptions qr_options(const ExperimentConfig& c, const HardyBasisSpec& s) {
    QROptions o;
    o.burn_in = c.burn_in;
    o.frame_seed = frame_seed(c);
    o.N = s.N;
    return o;
}

inline std::vector<std::int64_t> decade_checkpoints(std::int64_t n) {
    std::set<std::int64_t> cps;
    for (std::int64_t d = 10; d <= n; d *= 10) cps.insert(d);
    for (int s = 1; s <= 20; ++s) cps.insert(std::max<std::int64_t>(1, n * s / 20));
    return {cps.begin(), cps.end()};
}

// k = smallest power with eps 2^k an odd integer, if any (k <= 30).
inline std::optional<int> dyadic_order(double eps) {
    for (int k = 0; k <= 30; ++k) {
        const double b = std::ldexp(eps, k);
        if (b == std::floor(b)) return (std::fmod(b, 2.0) == 1.0) ? std::optional<int>(k) : std::nullopt;
    }
    return std::nullopt;
}

// Spectral norm of the s-step product of noise o L with row and column z^-1 removed.
inline double restricted_power_norm(const CMatrix& A, const HardyBasisSpec& spec, int steps) {
    CMatrix P = CMatrix::Identity(A.rows(), A.cols());
    for (int i = 0; i < steps; ++i) P = A * P;
    P.row(spec.idx(-1)).setZero();
    P.col(spec.idx(-1)).setZero();
    return Eigen::JacobiSVD<CMatrix>(P).singularValues()(0);
}

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- scenarios ----

namespace scenario {

inline void spectrum(const ExperimentConfig& c, double R, int threads, RunResult& out) {
    const CocycleFamily fam = plain_family(family_maps(c));
    const SymbolProcess proc = make_process(c);
    const LambdaEstimate L = lambda_birkhoff(fam, proc, R, c.n_steps, c.burn_in);
    const SpectrumModel model = analytic_spectrum(L.lambda, c.k);
    std::vector<LyapunovReport> reps(2);
    parallel_for(2, threads, [&](std::size_t i) {
        const HardyBasisSpec spec(R, c.N * int(i + 1), i == 0 ? c.M : 0);
        TransferCocycle tc(fam, proc, spec);
        reps[i] = qr_exponents(tc.source(), 0, c.n_steps, c.k, qr_options(c, spec));
    });
    Table t{"spectrum",
            {{"index", "1"},
             {"analytic", "nats"},
             {"qr", "nats"},
             {"qr_stderr", "nats"},
             {"qr_2N", "nats"},
             {"truncation_shift", "nats"}},
            {}};
    for (int j = 0; j < c.k; ++j) {
        const LogValue a = reps[0].exponents[std::size_t(j)], b = reps[1].exponents[std::size_t(j)];
        const double shift = (a.neg_inf || b.neg_inf) ? std::numeric_limits<double>::quiet_NaN() : std::abs(a.value - b.value);
        t.rows.push_back({std::int64_t(j + 1), model.values[std::size_t(j)], a, reps[0].stderr_[std::size_t(j)], b, shift});
    }
    Table l{"lambda",
            {{"Lambda_hat", "nats"}, {"stderr", "nats"}, {"min_log_term", "nats"}, {"n", "steps"},
             {"burn_in", "steps"}, {"seed", "1"}, {"sentinel", "bool"}},
            {{L.lambda, L.stderr_, L.min_log_term, L.n, L.burn_in, std::to_string(L.seed), std::int64_t(L.sentinel)}}};
    out.tables = {t, l};
    out.summary["lambda"] = L;
    out.summary["analytic"] = model;
    out.summary["qr"] = reps[0];
}

inline void phase_scan(const ExperimentConfig& c, double R, int threads, RunResult& out) {
    const CocycleFamily fam = plain_family(family_maps(c));
    std::vector<LambdaEstimate> est(c.p_list.size());
    parallel_for(c.p_list.size(), threads, [&](std::size_t i) {
        LambdaOptions o;
        o.checkpoints = decade_checkpoints(c.n_steps);
        est[i] = lambda_birkhoff(fam, make_process(c, c.p_list[i]), R, c.n_steps, c.burn_in, o);
    });
    Table t{"phase_scan",
            {{"p", "1"},
             {"n", "steps"},
             {"Lambda_hat", "nats"},
             {"stderr", "nats"},
             {"min_log_term", "nats"},
             {"hill_index", "1"},
             {"heavy_tail", "bool"},
             {"series_sum", "1"},
             {"flags_agree", "bool"}},
            {}};
    Table run{"running_mean", {{"p", "1"}, {"n", "steps"}, {"running_mean", "nats"}}, {}};
    nlohmann::json js = nlohmann::json::array();
    for (std::size_t i = 0; i < est.size(); ++i) {
        const auto& e = est[i];
        const auto series = collapse_series_sum(c.p_list[i]);
        const bool agree = e.heavy_tail == !series.has_value();
        t.rows.push_back({c.p_list[i], e.n, e.lambda, e.stderr_, e.min_log_term, e.hill_index,
                          std::int64_t(e.heavy_tail), series ? *series : std::numeric_limits<double>::infinity(),
                          std::int64_t(agree)});
        for (const auto& [n, m] : e.running) run.rows.push_back({c.p_list[i], n, m});
        nlohmann::json r = e;
        r["p"] = c.p_list[i];
        js.push_back(r);
    }
    out.tables = {t, run};
    out.summary["phase_scan"] = js;
}

inline void collapse(const ExperimentConfig& c, double R, int threads, RunResult& out, NoiseKind kind) {
    const CocycleFamily fam = plain_family(family_maps(c));
    const HardyBasisSpec spec(R, c.N, c.M);
    struct CellSpec {
        double p, eps;
    };
    std::vector<CellSpec> cells;
    for (double p : c.p_list) {
        cells.push_back({p, 0.0});
        for (double e : c.epsilons) cells.push_back({p, e});
    }
    std::vector<LyapunovReport> reps(cells.size());
    parallel_for(cells.size(), threads, [&](std::size_t i) {
        const NoiseOperator noise = cells[i].eps > 0.0 ? noise_diagonal(kind, cells[i].eps, spec) : NoiseOperator{};
        TransferCocycle tc(fam, make_process(c, cells[i].p), spec, noise);
        QROptions o = qr_options(c, spec);
        o.checkpoints = {std::max<std::int64_t>(1, c.n_steps / 4), std::max<std::int64_t>(1, c.n_steps / 2), c.n_steps};
        reps[i] = qr_exponents(tc.source(), 0, c.n_steps, c.k, o);
    });
    Table trend{"collapse_trend", {{"p", "1"}, {"eps", "1"}, {"n", "steps"}}, {}};
    Table fin{"collapse", {{"p", "1"}, {"eps", "1"}}, {}};
    for (int j = 1; j <= c.k; ++j) {
        trend.columns.push_back({"mu_" + std::to_string(j), "nats"});
        fin.columns.push_back({"mu_" + std::to_string(j), "nats"});
        fin.columns.push_back({"stderr_" + std::to_string(j), "nats"});
        fin.columns.push_back({"collapsed_at_" + std::to_string(j), "steps"});
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
        for (const auto& [n, ex] : reps[i].checkpoints) {
            std::vector<Cell> row{cells[i].p, cells[i].eps, n};
            for (const auto& e : ex) row.push_back(e);
            trend.rows.push_back(row);
        }
        std::vector<Cell> row{cells[i].p, cells[i].eps};
        for (int j = 0; j < c.k; ++j) {
            row.push_back(reps[i].exponents[std::size_t(j)]);
            row.push_back(reps[i].stderr_[std::size_t(j)]);
            row.push_back(reps[i].collapsed_at[std::size_t(j)]);
        }
        fin.rows.push_back(row);
    }
    out.tables = {fin, trend};
    if (kind == NoiseKind::uniform) {
        Table nil{"nilpotency",
                  {{"eps", "1"}, {"dyadic_k", "1"}, {"steps", "1"}, {"restricted_norm", "1"}, {"below_1e-12", "bool"}},
                  {}};
        const TransferMatrix L0 = assemble_transfer(AnalyticMap(c.family[0]), spec);
        for (double e : c.epsilons) {
            const auto k = dyadic_order(e);
            if (!k || *k < 1) {
                nil.rows.push_back({e, std::string("none"), std::int64_t(0), std::numeric_limits<double>::quiet_NaN(),
                                    std::int64_t(0)});
                continue;
            }
            const TransferMatrix U = compose_noise(L0, noise_diagonal(kind, e, spec));
            const double nrm = restricted_power_norm(U.A, spec, *k);
            nil.rows.push_back({e, std::int64_t(*k), std::int64_t(*k), nrm, std::int64_t(nrm < 1e-12)});
        }
        out.tables.push_back(nil);
    }
    nlohmann::json js = nlohmann::json::array();
    for (std::size_t i = 0; i < cells.size(); ++i) {
        nlohmann::json r = reps[i];
        r["p"] = cells[i].p;
        r["eps"] = cells[i].eps;
        js.push_back(r);
    }
    out.summary["cells"] = js;
}

inline void stability(const ExperimentConfig& c, double R, int threads, RunResult& out) {
    const CocycleFamily fam = plain_family(family_maps(c));
    const SymbolProcess proc = make_process(c);
    const HardyBasisSpec spec(R, c.N, c.M);
    const std::vector<std::string> kinds = {"static", "quenched", "annealed"};
    struct CellSpec {
        std::string kind;
        double eps;
    };
    std::vector<CellSpec> cells{{"base", 0.0}};
    for (const auto& k : kinds)
        for (double e : c.epsilons) cells.push_back({k, e});
    std::vector<LyapunovReport> reps(cells.size());
    std::vector<double> sup(cells.size(), 0.0);
    parallel_for(cells.size(), threads, [&](std::size_t i) {
        const auto& cell = cells[i];
        CocycleFamily f = fam;
        NoiseOperator noise;
        if (cell.kind == "static") {
            f = static_mobius_perturbation(fam, cell.eps);
            for (std::size_t s = 0; s < fam.maps.size(); ++s)
                sup[i] = std::max(sup[i], sup_distance_on_circle(f.maps[s], fam.maps[s]));
        } else if (cell.kind == "quenched") {
            f = quenched_mobius_perturbation(fam, R, cell.eps, splitmix64(c.seed ^ 0x9e3779b9ULL));
            for (std::int64_t p = 0; p < 64; ++p)
                sup[i] = std::max(sup[i], sup_distance_on_circle(map_at(f, proc, p), map_at(fam, proc, p)));
        } else if (cell.kind == "annealed") {
            noise = noise_diagonal(NoiseKind::gaussian, cell.eps, spec);
        }
        TransferCocycle tc(f, proc, spec, noise);
        reps[i] = qr_exponents(tc.source(), 0, c.n_steps, c.k, qr_options(c, spec));
    });
    Table t{"stability",
            {{"kind", "label"}, {"eps", "1"}, {"index", "1"}, {"mu_eps", "nats"}, {"mu_base", "nats"}, {"abs_diff", "nats"}},
            {}};
    Table s{"stability_summary",
            {{"kind", "label"}, {"eps", "1"}, {"max_abs_diff", "nats"}, {"sampled_sup_distance", "1"}},
            {}};
    for (std::size_t i = 1; i < cells.size(); ++i) {
        double mx = 0.0;
        for (int j = 0; j < c.k; ++j) {
            const LogValue a = reps[i].exponents[std::size_t(j)], b = reps[0].exponents[std::size_t(j)];
            const double d = (a.neg_inf || b.neg_inf) ? std::numeric_limits<double>::infinity() : std::abs(a.value - b.value);
            mx = std::max(mx, d);
            t.rows.push_back({cells[i].kind, cells[i].eps, std::int64_t(j + 1), a, b, d});
        }
        s.rows.push_back({cells[i].kind, cells[i].eps, mx,
                          cells[i].kind == "annealed" ? std::numeric_limits<double>::quiet_NaN() : sup[i]});
    }
    out.tables = {s, t};
    out.summary["base"] = reps[0];
}

inline void projection_norms(const ExperimentConfig& c, double R, int threads, RunResult& out) {
    const CocycleFamily fam = plain_family(family_maps(c));
    const SymbolProcess proc = make_process(c);
    const HardyBasisSpec spec(R, c.N, c.M);
    // Positions i with w_i = 0 preceded by exactly L zeros and a 1.
    struct Site {
        std::int64_t i;
        int L;
    };
    std::vector<Site> sites;
    std::map<int, int> taken;
    const std::set<int> wanted(c.run_lengths.begin(), c.run_lengths.end());
    const int Lmax = wanted.empty() ? 0 : *wanted.rbegin();
    for (std::int64_t i = c.burn_in + Lmax + 1; i < c.burn_in + c.n_steps; ++i) {
        if (proc.symbol_at(i) != 0) continue;
        int L = 0;
        while (L <= Lmax && proc.symbol_at(i - 1 - L) == 0) ++L;
        if (!wanted.count(L) || proc.symbol_at(i - 1 - L) != 1 || taken[L] >= c.max_samples) continue;
        ++taken[L];
        sites.push_back({i, L});
    }
    FixedPointCache fp(fam, proc, R, 1e-13);
    std::vector<ExtComplex> xs;
    for (const auto& s : sites) xs.push_back(fp.at(s.i));
    std::vector<ProjectionSample> res(sites.size());
    parallel_for(sites.size(), threads, [&](std::size_t k) {
        TransferCocycle tc(fam, proc, spec);
        res[k] = projection_norm_at(tc.source(), spec, xs[k].to_cplx(), sites[k].i);
        res[k].run_length = sites[k].L;
    });
    Table t{"projection_norms",
            {{"position", "index"},
             {"run_length", "steps"},
             {"log10_abs_x", "1"},
             {"adjoint_norm", "1"},
             {"kernel_bound", "1"},
             {"projection_norm", "1"}},
            {}};
    for (std::size_t k = 0; k < sites.size(); ++k)
        t.rows.push_back({sites[k].i, std::int64_t(sites[k].L), xs[k].log10_abs(), res[k].adjoint_norm,
                          res[k].kernel_bound, res[k].value});
    Table m{"projection_medians",
            {{"run_length", "steps"}, {"samples", "1"}, {"median_projection_norm", "1"}, {"median_adjoint_norm", "1"}},
            {}};
    for (int L : wanted) {
        std::vector<double> v, a;
        for (const auto& r : res)
            if (r.run_length == L) {
                v.push_back(r.value);
                a.push_back(r.adjoint_norm);
            }
        m.rows.push_back({std::int64_t(L), std::int64_t(v.size()), median(v), median(a)});
    }
    out.tables = {m, t};
}

inline void appendix_example(const ExperimentConfig& c, double R, int, RunResult& out) {
    const CocycleFamily fam = plain_family(family_maps(c));
    const SymbolProcess proc = make_process(c);
    const LambdaEstimate L = lambda_birkhoff(fam, proc, R, c.n_steps, c.burn_in);
    const HardyBasisSpec spec(R, c.N, c.M);
    TransferCocycle tc(fam, proc, spec);
    const LyapunovReport q = qr_exponents(tc.source(), 0, std::min<std::int64_t>(c.n_steps, 10000), c.k,
                                          qr_options(c, spec));
    // Reference Lambda = sum_s w_s log|B_s'(0)| for maps fixing 0.
    double ref = 0.0;
    const auto maps = family_maps(c);
    const auto& w = proc.marginal();
    for (std::size_t s = 0; s < maps.size(); ++s) ref += w[s] * std::log(std::abs(maps[s].deriv(0.0)));
    const SpectrumModel model = analytic_spectrum({ref, false}, c.k);
    Table t{"appendix",
            {{"quantity", "label"}, {"estimate", "nats"}, {"reference", "nats"}, {"stderr", "nats"}, {"within_3_stderr", "bool"}},
            {}};
    auto within = [](LogValue e, double r, double se) {
        return std::int64_t(!e.neg_inf && std::abs(e.value - r) <= 3.0 * se);
    };
    t.rows.push_back({std::string("Lambda_hat"), L.lambda, ref, L.stderr_, within(L.lambda, ref, L.stderr_)});
    for (int j = 0; j < c.k; ++j) {
        const double r = model.values[std::size_t(j)].value;
        const double se = q.stderr_[std::size_t(j)];
        t.rows.push_back({"mu_" + std::to_string(j + 1), q.exponents[std::size_t(j)], r, se,
                          within(q.exponents[std::size_t(j)], r, std::max(se, 1e-12))});
    }
    out.tables = {t};
    out.summary["lambda"] = L;
    out.summary["reference_Lambda"] = ref;
    out.summary["qr"] = q;
}

}  // namespace scenario

inline RunResult run_experiment(const ExperimentConfig& c, int threads = 1) {
    RunResult out;
    const double R = resolve_radius(c);
    const HardyBasisSpec spec(R, c.N, c.M);
    const auto maps = family_maps(c);
    out.resolved = {{"scenario", c.scenario_name},
                    {"R", R},
                    {"R_auto", !c.R.has_value()},
                    {"r", family_r(maps, R)},
                    {"N", spec.N},
                    {"M", spec.M},
                    {"seed", c.seed},
                    {"n_steps", c.n_steps},
                    {"burn_in", c.burn_in},
                    {"k", c.k}};
    switch (c.scenario) {
        case Scenario::spectrum: scenario::spectrum(c, R, threads, out); break;
        case Scenario::phase_scan: scenario::phase_scan(c, R, threads, out); break;
        case Scenario::gaussian_collapse: scenario::collapse(c, R, threads, out, NoiseKind::gaussian); break;
        case Scenario::uniform_collapse: scenario::collapse(c, R, threads, out, NoiseKind::uniform); break;
        case Scenario::stability: scenario::stability(c, R, threads, out); break;
        case Scenario::projection_norms: scenario::projection_norms(c, R, threads, out); break;
        case Scenario::appendix_example: scenario::appendix_example(c, R, threads, out); break;
    }
    return out;
}

inline std::string utc_timestamp() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Writes <dir>/<table>.csv for every table and <dir>/report.json.
inline nlohmann::json write_outputs(const ExperimentConfig& c, const RunResult& r, const std::string& dir,
                                    double wall_time_s) {
    std::filesystem::create_directories(dir);
    nlohmann::json tables = nlohmann::json::array();
    for (const auto& t : r.tables) {
        const std::string file = t.name + ".csv";
        std::ofstream f(std::filesystem::path(dir) / file, std::ios::binary);
        f << to_csv(t);
        nlohmann::json cols = nlohmann::json::array();
        for (const auto& col : t.columns) cols.push_back({{"name", col.name}, {"unit", col.unit}});
        tables.push_back({{"name", t.name}, {"file", file}, {"rows", t.rows.size()}, {"columns", cols}});
    }
    nlohmann::json rep = {{"version", kVersion},       {"timestamp", utc_timestamp()}, {"wall_time_s", wall_time_s},
                          {"config", c.raw},           {"resolved", r.resolved},        {"tables", tables},
                          {"summary", r.summary}};
    std::ofstream f(std::filesystem::path(dir) / "report.json", std::ios::binary);
    f << rep.dump(2) << "\n";
    return rep;
}

}  // namespace bcocycle::cli
