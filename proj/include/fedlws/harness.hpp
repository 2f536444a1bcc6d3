#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedlws/config.hpp"
#include "fedlws/fl.hpp"

namespace fedlws {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitRuntime = 2, kExitPartialSweep = 3 };

struct GlobalOptions {
    std::optional<std::uint64_t> seed_override;
    std::optional<std::filesystem::path> output_dir;
    std::optional<std::size_t> threads;
};

// Per-run artifacts.
inline constexpr const char* kRoundsCsv = "rounds.csv";
inline constexpr const char* kShrinkJsonl = "shrink.jsonl";
inline constexpr const char* kModelStatsCsv = "model_stats.csv";
inline constexpr const char* kCheckpoint = "final.ckpt";
inline constexpr const char* kConfigCopy = "config.yaml";

// Sweep artifacts.
inline constexpr const char* kRunsCsv = "runs.csv";
inline constexpr const char* kSummaryCsv = "summary.csv";

inline constexpr const char* kRoundsHeader = "round,test_acc,test_loss,gamma_mean,gamma_min,gamma_max,tau_mean,bound,agg_time_s";
inline constexpr const char* kModelStatsHeader =
    "round,participants,gamma_model,tau_model,w_norm,g_norm,gamma_layer_var,oracle_gamma,oracle_r";
inline constexpr const char* kRunsHeader = "axis,value,seed,status,final_acc,final_loss,run_dir,error";
inline constexpr const char* kSummaryHeader = "axis,value,runs,failed,acc_mean,acc_std,loss_mean";

inline constexpr const char* kTauVsRHeader = "run\tmode\talpha\tseed\trounds\ttau\tr";
inline constexpr const char* kGammaTrajHeader =
    "run\tmode\tround\tgamma_model\tgamma_mean\tgamma_min\tgamma_max\tlayer\tgamma_layer";
inline constexpr const char* kParamHistHeader = "run\tmode\tbin\tbin_lo\tbin_hi\tcount";
inline constexpr const char* kAccuracyHeader = "run\tmode\talpha\tbeta\tround\ttest_acc\ttest_loss";

inline constexpr std::size_t kHistogramBins = 50;

void write_rounds_csv(std::ostream& out, const std::vector<RoundRecord>& rounds);
/// One JSON object per (round, layer): {round, layer, gamma, tau, w_norm, g_norm}.
void write_shrink_jsonl(std::ostream& out, const std::vector<RoundRecord>& rounds);
void write_model_stats_csv(std::ostream& out, const std::vector<RoundRecord>& rounds);

/// output_dir / run_label
std::filesystem::path run_directory(const ExperimentConfig& cfg);

/// Writes every per-run artifact into `dir`, replacing it atomically.
void write_run_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg, const ExperimentResult& result);

/// Minimal CSV reader for the files above: header row plus string cells.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

void apply_overrides(ExperimentConfig& cfg, const GlobalOptions& options);

int cmd_run(const std::filesystem::path& config_path, const GlobalOptions& options, std::ostream& log);
int cmd_sweep(const std::filesystem::path& sweep_path, const GlobalOptions& options, std::ostream& log);
int cmd_report(const std::filesystem::path& dir, std::ostream& log);

}  // namespace fedlws
