#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmtrain/model.hpp"
#include "mmtrain/trainer.hpp"

namespace mmtrain::io {

/// Unreadable, malformed or incompatible config / checkpoint file.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Canonical JSON for a config. Every field is written; reading rejects
/// unknown keys and fills missing ones from `base`.
std::string config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const std::string& text, const TrainConfig& base = TrainConfig{});
TrainConfig load_config(const std::filesystem::path& path, const TrainConfig& base = TrainConfig{});

/// Applies `key=value` with a dotted key such as `modulation.alpha=2`. The
/// value is parsed as JSON and falls back to a plain string.
void apply_override(TrainConfig& cfg, const std::string& assignment);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

/// One JSON object per step / per (epoch, split).
void write_trace(const std::vector<StepRecord>& trace, const std::filesystem::path& path);
void write_metrics(const std::vector<EpochRecord>& metrics, const std::filesystem::path& path);
std::vector<StepRecord> read_trace(const std::filesystem::path& path);

/// Long-format CSV (step, epoch, series, value) for plotting.
void write_trace_csv(const std::vector<StepRecord>& trace, const std::filesystem::path& path);

void write_ablation_csv(const std::vector<AblationResult>& results, const std::filesystem::path& path);
void write_ablation_json(const std::vector<AblationResult>& results, const std::filesystem::path& path);

/// Fixed-width text table of mean ± std per row.
std::string format_ablation_table(const std::vector<AblationResult>& results);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace mmtrain::io
