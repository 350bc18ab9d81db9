#pragma once

// On-disk trace directories.
//
//   manifest.json   {format_version, config, distribution {U, S, Lambda, seed},
//                    steps: [{step, loss, metrics, files: {name: relative path}}]}
//   mats/*.mat      one matrix per file:
//                     "ICLT" | u16 version = 1 | u8 dtype = 1 (float64) | u8 reserved
//                     | u32 rows | u32 cols | rows*cols float64, row-major
//                   all integers and floats little-endian.
//   curves.csv      per recorded step
//   epochs.csv      per epoch

#include <cstdint>
#include <string>
#include <vector>

#include "icl/config.hpp"
#include "icl/probes.hpp"
#include "icl/taskgen.hpp"
#include "icl/trainer.hpp"
#include "json.hpp"

namespace icl {

inline constexpr int kTraceFormatVersion = 1;

std::vector<std::uint8_t> encode_mat(const Matrix& m);
/// `origin` names the source in FormatError messages.
Matrix decode_mat(const std::vector<std::uint8_t>& bytes, const std::string& origin);

void write_mat(const std::string& path, const Matrix& m);
Matrix read_mat(const std::string& path);

/// Writes a training run: manifest, one .mat per block (p1, p2, q1, q2) per
/// snapshot, curves.csv and epochs.csv. `snapshot_loss` (one per snapshot)
/// becomes the recorded loss; the step's batch loss is kept as "batch_loss".
void write_training_trace(const std::string& dir, const ExperimentConfig& config, const SpectralTaskDistribution& dist,
                          const TrainingTrace& trace, const std::vector<double>& snapshot_loss);

/// Writes any checkpoint trace; `config` and `distribution` go into the
/// manifest verbatim (null if not applicable).
void write_checkpoint_trace(const std::string& dir, const CheckpointTrace& trace,
                            const nlohmann::json& config = nullptr, const nlohmann::json& distribution = nullptr);

struct LoadedTrace {
    nlohmann::json manifest;
    CheckpointTrace trace;  // step loss stored as metric "loss"
};

/// Throws FormatError naming the offending file on any layout problem.
LoadedTrace read_trace_directory(const std::string& dir);

nlohmann::json distribution_json(const SpectralTaskDistribution& dist);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;  // empty cells read as NaN

    /// Throws FormatError if the column is absent.
    std::vector<double> column(const std::string& name) const;
    bool has_column(const std::string& name) const;
    std::string origin;
};

CsvTable read_csv(const std::string& path);

}  // namespace icl
