#pragma once

// File formats: tensor data (binary + JSON sidecar, or 2-way CSV), state
// files, trace CSVs and experiment outputs.
//
// Failures to open, read or write a file raise IoError; malformed content
// raises ValidationError.

#include <string>
#include <vector>

#include "kronvb/harness.hpp"

namespace kronvb::io {

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

// `path` holds little-endian 8-byte reals in row-major order;
// `path`.json holds {"shape", "layout": "row-major", "dtype": "f64le",
// "mode_names"}.
void write_data(const std::string &path, const DataArray &data);
DataArray read_binary_data(const std::string &path);

// Numeric CSV as a rows x columns array. Blank lines and lines starting with
// '#' are skipped.
DataArray read_csv_data(const std::string &path);

// Dispatches on the extension: ".csv" or binary with sidecar.
DataArray read_data(const std::string &path);

// Per-mode factors with the convention header. Families:
//   "joint"      q = IW(nu_v, (x)_i A_i), one nu_v
//   "meanfield"  q_i = IW(nu_vi, A_i), one nu_v per mode
//   "covariance" Sigma = (x)_i Sigma_i, no nu_v
struct StateFile {
  std::string family;
  FactorSet factors;
  std::vector<double> nu_v;

  static StateFile from(const JointState &s);
  static StateFile from(const MeanFieldState &s);
  static StateFile covariance(const FactorSet &sigma);
  JointState joint() const;
  MeanFieldState mean_field() const;
  void validate() const;
};

std::string state_to_json(const StateFile &state);
StateFile state_from_json(const std::string &text);
void write_state(const std::string &path, const StateFile &state);
StateFile read_state(const std::string &path);

// One row per recorded point: iteration, elbo, grad_norm, step_scale,
// nu_v columns, log_det columns and distance_sq when present.
std::string trace_csv(const Trace &trace);

std::string spec_to_json(const ExperimentSpec &spec);
// Keys missing from `text` keep the defaults of the named kind; unknown keys
// are rejected.
ExperimentSpec spec_from_json(const std::string &text);

// Writes the CSV tables and summary.json for an experiment into `dir`.
void write_sweep(const std::string &dir, const SweepResult &result);
void write_mahalanobis(const std::string &dir, const MahalanobisResult &result);
void write_misspec(const std::string &dir, const std::vector<MisspecRow> &rows,
                   const ExperimentSpec &spec);
void write_real_data(const std::string &dir, const RealDataResult &result,
                     const DataArray &data);

void write_text(const std::string &path, const std::string &text);
std::string read_text(const std::string &path);

}  // namespace kronvb::io
