#include "fedlws/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fedlws/checkpoint.hpp"
#include "fedlws/error.hpp"
#include "fedlws/lws.hpp"

namespace fedlws {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    return out;
}

std::string optional_cell(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, sep)) cells.push_back(cell);
    if (!line.empty() && line.back() == sep) cells.emplace_back();
    return cells;
}

double to_double(const std::string& s) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::stod(s);
}

std::string csv_escape(std::string s) {
    std::replace(s.begin(), s.end(), ',', ';');
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

void print_config_error(std::ostream& log, const ConfigError& e) {
    log << "invalid configuration:\n";
    for (const auto& d : e.diagnostics()) log << "  " << d << "\n";
}

struct CellOutcome {
    std::string value;
    std::uint64_t seed = 0;
    bool ok = false;
    double final_acc = std::numeric_limits<double>::quiet_NaN();
    double final_loss = std::numeric_limits<double>::quiet_NaN();
    fs::path dir;
    std::string error;
};

// A run directory as seen by `report`.
struct RunData {
    std::string name;
    ExperimentConfig cfg;
    CsvTable rounds;
    CsvTable model_stats;
    std::vector<nlohmann::json> shrink;
    ModelParams final_params;
};

}  // namespace

void write_rounds_csv(std::ostream& out, const std::vector<RoundRecord>& rounds) {
    out << kRoundsHeader << "\n";
    for (const auto& r : rounds) {
        out << r.round << ',' << format_double(r.test_accuracy) << ',' << format_double(r.test_loss) << ','
            << format_double(r.shrink.gamma_mean()) << ',' << format_double(r.shrink.gamma_min()) << ','
            << format_double(r.shrink.gamma_max()) << ',' << format_double(r.shrink.tau_mean()) << ','
            << format_double(r.shrink.bound) << ',' << format_double(r.agg_wall_time()) << "\n";
    }
}

void write_shrink_jsonl(std::ostream& out, const std::vector<RoundRecord>& rounds) {
    for (const auto& r : rounds) {
        for (const auto& l : r.shrink.layers) {
            nlohmann::ordered_json j;
            j["round"] = r.round;
            j["layer"] = l.name;
            j["gamma"] = l.gamma;
            j["tau"] = l.tau;
            j["w_norm"] = l.w_norm;
            j["g_norm"] = l.g_norm;
            out << j.dump() << "\n";
        }
    }
}

void write_model_stats_csv(std::ostream& out, const std::vector<RoundRecord>& rounds) {
    out << kModelStatsHeader << "\n";
    for (const auto& r : rounds) {
        const auto& s = r.shrink;
        out << r.round << ',' << s.participants << ',' << format_double(s.gamma) << ',' << format_double(s.tau) << ','
            << format_double(s.w_norm) << ',' << format_double(s.g_norm) << ',' << format_double(s.gamma_variance())
            << ',' << optional_cell(s.oracle_gamma) << ',' << optional_cell(s.ratio) << "\n";
    }
}

fs::path run_directory(const ExperimentConfig& cfg) { return cfg.output_dir / cfg.run_label; }

void write_run_outputs(const fs::path& dir, const ExperimentConfig& cfg, const ExperimentResult& result) {
    const fs::path staging = dir.string() + ".partial";
    fs::remove_all(staging);
    fs::create_directories(staging);
    try {
        {
            auto out = open_out(staging / kRoundsCsv);
            write_rounds_csv(out, result.rounds);
        }
        {
            auto out = open_out(staging / kShrinkJsonl);
            write_shrink_jsonl(out, result.rounds);
        }
        {
            auto out = open_out(staging / kModelStatsCsv);
            write_model_stats_csv(out, result.rounds);
        }
        save_checkpoint(staging / kCheckpoint, result.final_params);
        save_config(staging / kConfigCopy, cfg);
        fs::remove_all(dir);
        fs::rename(staging, dir);
    } catch (...) {
        std::error_code ec;
        fs::remove_all(staging, ec);
        throw;
    }
}

std::size_t CsvTable::column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError("csv: missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
}

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + " is empty");
    t.header = split(line, ',');
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split(line, ',');
        if (cells.size() != t.header.size()) throw FormatError(path.string() + ": ragged row");
        t.rows.push_back(std::move(cells));
    }
    return t;
}

void apply_overrides(ExperimentConfig& cfg, const GlobalOptions& options) {
    if (options.seed_override) apply_seed(cfg, *options.seed_override);
    if (options.output_dir) cfg.output_dir = *options.output_dir;
    if (options.threads) cfg.fl.threads = *options.threads;
}

int cmd_run(const fs::path& config_path, const GlobalOptions& options, std::ostream& log) {
    ExperimentConfig cfg;
    try {
        cfg = load_config(config_path);
        apply_overrides(cfg, options);
        validate(cfg);
    } catch (const ConfigError& e) {
        print_config_error(log, e);
        return kExitValidation;
    }

    const fs::path dir = run_directory(cfg);
    try {
        const ExperimentResult result = run_experiment(cfg);
        std::size_t degenerate = 0;
        for (const auto& r : result.rounds) degenerate += r.shrink.any_degenerate() ? 1 : 0;
        if (degenerate > 0) {
            log << "warning: " << degenerate << " round(s) had a zero-norm layer; those layers were not shrunk\n";
        }
        write_run_outputs(dir, cfg, result);
        if (!result.rounds.empty()) {
            const auto& last = result.rounds.back();
            log << cfg.run_label << ": " << result.rounds.size() << " rounds, final test_acc "
                << format_double(last.test_accuracy) << ", test_loss " << format_double(last.test_loss) << "\n";
        }
        log << "wrote " << dir.string() << "\n";
        return kExitOk;
    } catch (const ConfigError& e) {
        print_config_error(log, e);
        return kExitValidation;
    } catch (const std::exception& e) {
        log << "run failed: " << e.what() << "\n";
        return kExitRuntime;
    }
}

int cmd_sweep(const fs::path& sweep_path, const GlobalOptions& options, std::ostream& log) {
    SweepSpec spec;
    try {
        spec = load_sweep(sweep_path);
        if (options.output_dir) spec.base.output_dir = *options.output_dir;
        if (options.seed_override) spec.seeds = {*options.seed_override};
    } catch (const ConfigError& e) {
        print_config_error(log, e);
        return kExitValidation;
    }

    const fs::path sweep_dir = run_directory(spec.base);
    const std::string axis = to_string(spec.axis);
    std::vector<CellOutcome> cells;
    for (const auto& v : spec.values) {
        for (auto seed : spec.seeds) {
            CellOutcome cell;
            cell.value = v;
            cell.seed = seed;
            cells.push_back(std::move(cell));
        }
    }

    std::mutex log_mutex;
    parallel_for(cells.size(), options.threads.value_or(1), [&](std::size_t i) {
        auto& cell = cells[i];
        try {
            ExperimentConfig cfg = apply_axis(spec.base, spec.axis, cell.value);
            apply_seed(cfg, cell.seed);
            cfg.fl.threads = 1;
            cfg.output_dir = sweep_dir;
            cfg.run_label = axis + "-" + cell.value + "_seed-" + std::to_string(cell.seed);
            cell.dir = run_directory(cfg);
            validate(cfg);
            const ExperimentResult result = run_experiment(cfg);
            write_run_outputs(cell.dir, cfg, result);
            if (!result.rounds.empty()) {
                cell.final_acc = result.rounds.back().test_accuracy;
                cell.final_loss = result.rounds.back().test_loss;
            }
            cell.ok = true;
        } catch (const std::exception& e) {
            cell.error = e.what();
        }
        std::lock_guard lock(log_mutex);
        log << axis << "=" << cell.value << " seed=" << cell.seed << ": "
            << (cell.ok ? "ok, final test_acc " + format_double(cell.final_acc) : "FAILED: " + cell.error) << "\n";
    });

    try {
        fs::create_directories(sweep_dir);
        auto runs = open_out(sweep_dir / kRunsCsv);
        runs << kRunsHeader << "\n";
        for (const auto& c : cells) {
            runs << axis << ',' << c.value << ',' << c.seed << ',' << (c.ok ? "ok" : "error") << ','
                 << format_double(c.final_acc) << ',' << format_double(c.final_loss) << ','
                 << csv_escape(fs::relative(c.dir, sweep_dir).string()) << ',' << csv_escape(c.error) << "\n";
        }

        auto summary = open_out(sweep_dir / kSummaryCsv);
        summary << kSummaryHeader << "\n";
        for (const auto& v : spec.values) {
            std::vector<double> acc;
            std::vector<double> loss;
            std::size_t total = 0;
            for (const auto& c : cells) {
                if (c.value != v) continue;
                ++total;
                if (c.ok) {
                    acc.push_back(c.final_acc);
                    loss.push_back(c.final_loss);
                }
            }
            const double n = static_cast<double>(acc.size());
            double mean = std::numeric_limits<double>::quiet_NaN();
            double sd = std::numeric_limits<double>::quiet_NaN();
            double loss_mean = std::numeric_limits<double>::quiet_NaN();
            if (!acc.empty()) {
                mean = 0.0;
                for (double a : acc) mean += a;
                mean /= n;
                loss_mean = 0.0;
                for (double l : loss) loss_mean += l;
                loss_mean /= n;
                sd = 0.0;
                if (acc.size() > 1) {
                    for (double a : acc) sd += (a - mean) * (a - mean);
                    sd = std::sqrt(sd / (n - 1.0));
                }
            }
            summary << axis << ',' << v << ',' << total << ',' << (total - acc.size()) << ',' << format_double(mean)
                    << ',' << format_double(sd) << ',' << format_double(loss_mean) << "\n";
        }
    } catch (const std::exception& e) {
        log << "sweep failed writing summary: " << e.what() << "\n";
        return kExitRuntime;
    }

    const auto failed = std::count_if(cells.begin(), cells.end(), [](const auto& c) { return !c.ok; });
    log << "sweep: " << cells.size() - static_cast<std::size_t>(failed) << "/" << cells.size() << " runs succeeded, wrote "
        << sweep_dir.string() << "\n";
    return failed == 0 ? kExitOk : kExitPartialSweep;
}

int cmd_report(const fs::path& dir, std::ostream& log) {
    if (!fs::is_directory(dir)) {
        log << "report: " << dir.string() << " is not a directory\n";
        return kExitValidation;
    }

    // A run directory holds rounds.csv or config.yaml; sweep roots hold only runs.csv.
    auto is_run = [](const fs::path& p) { return fs::exists(p / kRoundsCsv) || fs::exists(p / kConfigCopy); };
    std::vector<fs::path> run_dirs;
    if (is_run(dir)) run_dirs.push_back(dir);
    std::vector<fs::path> nested;
    for (auto it = fs::recursive_directory_iterator(dir); it != fs::recursive_directory_iterator(); ++it) {
        if (!it->is_directory()) continue;
        if (it->path().string().ends_with(".partial")) {
            it.disable_recursion_pending();
            continue;
        }
        if (is_run(it->path())) nested.push_back(it->path());
    }
    std::sort(nested.begin(), nested.end());
    run_dirs.insert(run_dirs.end(), nested.begin(), nested.end());
    if (run_dirs.empty()) {
        log << "report: no runs under " << dir.string() << "; missing:\n  " << (dir / kRoundsCsv).string() << "\n";
        return kExitValidation;
    }

    std::vector<std::string> missing;
    for (const auto& r : run_dirs) {
        for (const char* f : {kRoundsCsv, kShrinkJsonl, kModelStatsCsv, kCheckpoint, kConfigCopy}) {
            if (!fs::exists(r / f)) missing.push_back((r / f).string());
        }
    }
    if (!missing.empty()) {
        log << "report: missing inputs:\n";
        for (const auto& m : missing) log << "  " << m << "\n";
        return kExitValidation;
    }

    std::vector<RunData> runs;
    try {
        for (const auto& r : run_dirs) {
            RunData run;
            run.name = r == dir ? r.filename().string() : fs::relative(r, dir).string();
            if (run.name.empty()) run.name = ".";
            run.cfg = load_config(r / kConfigCopy);
            run.rounds = read_csv(r / kRoundsCsv);
            run.model_stats = read_csv(r / kModelStatsCsv);
            std::ifstream in(r / kShrinkJsonl);
            std::string line;
            while (std::getline(in, line)) {
                if (!line.empty()) run.shrink.push_back(nlohmann::json::parse(line));
            }
            run.final_params = load_checkpoint(r / kCheckpoint);
            runs.push_back(std::move(run));
        }

        // One point per run (mean over oracle rounds) plus the pooled per-round series.
        std::vector<double> run_taus;
        std::vector<double> run_ratios;
        std::vector<double> round_taus;
        std::vector<double> round_ratios;
        {
            auto out = open_out(dir / "tau_vs_r.tsv");
            out << kTauVsRHeader << "\n";
            for (const auto& run : runs) {
                const auto& t = run.model_stats;
                const auto c_tau = t.column("tau_model");
                const auto c_r = t.column("oracle_r");
                double tau_sum = 0.0;
                double r_sum = 0.0;
                std::size_t n = 0;
                for (const auto& row : t.rows) {
                    if (row[c_r].empty()) continue;
                    round_taus.push_back(to_double(row[c_tau]));
                    round_ratios.push_back(to_double(row[c_r]));
                    tau_sum += round_taus.back();
                    r_sum += round_ratios.back();
                    ++n;
                }
                if (n == 0) continue;
                const double nd = static_cast<double>(n);
                run_taus.push_back(tau_sum / nd);
                run_ratios.push_back(r_sum / nd);
                out << run.name << '\t' << to_string(run.cfg.lws.mode) << '\t' << format_double(run.cfg.data.alpha)
                    << '\t' << run.cfg.fl.seed << '\t' << n << '\t' << format_double(run_taus.back()) << '\t'
                    << format_double(run_ratios.back()) << "\n";
            }
        }
        {
            auto out = open_out(dir / "gamma_traj.tsv");
            out << kGammaTrajHeader << "\n";
            for (const auto& run : runs) {
                const auto& rt = run.rounds;
                const auto& mt = run.model_stats;
                std::map<std::string, std::vector<std::string>> by_round;
                for (const auto& row : rt.rows) by_round[row[rt.column("round")]] = row;
                std::map<std::string, std::string> model_gamma;
                for (const auto& row : mt.rows) model_gamma[row[mt.column("round")]] = row[mt.column("gamma_model")];
                for (const auto& j : run.shrink) {
                    const std::string round = std::to_string(j.at("round").get<int>());
                    const auto it = by_round.find(round);
                    if (it == by_round.end()) continue;
                    const auto& row = it->second;
                    out << run.name << '\t' << to_string(run.cfg.lws.mode) << '\t' << round << '\t'
                        << model_gamma[round] << '\t' << row[rt.column("gamma_mean")] << '\t'
                        << row[rt.column("gamma_min")] << '\t' << row[rt.column("gamma_max")] << '\t'
                        << j.at("layer").get<std::string>() << '\t' << format_double(j.at("gamma").get<double>())
                        << "\n";
                }
            }
        }
        {
            double lo = std::numeric_limits<double>::infinity();
            double hi = -std::numeric_limits<double>::infinity();
            for (const auto& run : runs) {
                const Vector v = flatten(run.final_params);
                if (v.size() == 0) continue;
                lo = std::min(lo, v.minCoeff());
                hi = std::max(hi, v.maxCoeff());
            }
            if (!(lo < hi)) {
                const double mid = std::isfinite(lo) ? lo : 0.0;
                lo = mid - 0.5;
                hi = mid + 0.5;
            }
            const double width = (hi - lo) / static_cast<double>(kHistogramBins);
            auto out = open_out(dir / "param_hist.tsv");
            out << kParamHistHeader << "\n";
            for (const auto& run : runs) {
                std::vector<std::size_t> counts(kHistogramBins, 0);
                const Vector v = flatten(run.final_params);
                for (Eigen::Index i = 0; i < v.size(); ++i) {
                    auto bin = static_cast<std::size_t>(std::floor((v[i] - lo) / width));
                    ++counts[std::min(bin, kHistogramBins - 1)];
                }
                for (std::size_t b = 0; b < kHistogramBins; ++b) {
                    out << run.name << '\t' << to_string(run.cfg.lws.mode) << '\t' << b << '\t'
                        << format_double(lo + width * static_cast<double>(b)) << '\t'
                        << format_double(b + 1 == kHistogramBins ? hi : lo + width * static_cast<double>(b + 1)) << '\t'
                        << counts[b] << "\n";
                }
            }
        }
        {
            auto out = open_out(dir / "accuracy_curves.tsv");
            out << kAccuracyHeader << "\n";
            for (const auto& run : runs) {
                const auto& t = run.rounds;
                for (const auto& row : t.rows) {
                    out << run.name << '\t' << to_string(run.cfg.lws.mode) << '\t' << format_double(run.cfg.data.alpha)
                        << '\t' << format_double(run.cfg.lws.beta) << '\t' << row[t.column("round")] << '\t'
                        << row[t.column("test_acc")] << '\t' << row[t.column("test_loss")] << "\n";
                }
            }
        }

        log << "report: " << runs.size() << " run(s) in " << dir.string() << "\n";
        auto print_pearson = [&](const std::vector<double>& xs, const std::vector<double>& ys, const char* unit) {
            if (xs.size() < 2) return;
            log << "pearson(tau, r) over " << xs.size() << ' ' << unit << ": ";
            try {
                log << format_double(pearson(xs, ys)) << "\n";
            } catch (const UndefinedCorrelation&) {
                log << "undefined (zero variance)\n";
            }
        };
        print_pearson(run_taus, run_ratios, "runs");
        print_pearson(round_taus, round_ratios, "rounds");
    } catch (const ConfigError& e) {
        print_config_error(log, e);
        return kExitValidation;
    } catch (const std::exception& e) {
        log << "report failed: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace fedlws
