#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"

#include "softarm/scenarios.hpp"

namespace softarm {

struct CalibrationOptions {
  int max_rounds = 8;
  double tolerance = 1e-4;           // relative change of every alpha * nu_i between rounds
  double inverse_tolerance_deg = 0.01;
  int min_trials = 3;                // actuated trials per chamber
  double min_force = 1e-3;           // N; smaller gauge readings are skipped
};

struct ChamberFit {
  int trials = 0;
  double slope = 0.0;    // simulated = slope * commanded, last round
  double rms = 0.0;      // fit residual relative to the largest commanded pressure
};

struct CalibrationResult {
  CalibrationFactors factors;
  std::vector<ChamberFit> chambers;
  double mean_nu = 1.0;
  double force_scale = 1.0;     // force mode: alpha_new / alpha_old
  double pressure_factor = 1.0;  // force mode: mean(nu) after the rescale
  double force_rms = 0.0;        // force mode: relative fit residual
  int rounds = 0;
  bool converged = false;
};

nlohmann::json to_json(const CalibrationResult& r);

// Each trial actuates at most one chamber per segment; only the actuated
// chambers are free in its inverse solve. Per chamber, simulated pressures
// are fitted through the origin against commanded ones, the products
// alpha * nu_i are read off, alpha takes their mean and nu is renormalized
// to mean 1. Rounds repeat on the updated model until the products settle.
// The scene ends up carrying the result.
CalibrationResult calibrate_pressure_map(Scene& scene, const std::vector<SensorFrame>& trials,
                                         const CalibrationOptions& options = {});

// Frames with gauge forces: the modulus is rescaled until estimated
// disturbance magnitudes match the gauge in least squares. nu is rescaled
// inversely so pressure behavior is unchanged, so mean(nu) drifts from 1.
CalibrationResult calibrate_force_scale(Scene& scene, const std::vector<SensorFrame>& trials,
                                        const CalibrationOptions& options = {});

struct ValidationOptions {
  int trials = 20;
  std::uint64_t seed = 1;
  double noise_deg = 0.0;
  double tolerance_deg = 0.01;
};

struct ValidationReport {
  std::vector<double> position_error;     // m, tip
  std::vector<double> orientation_error;  // deg, tip frame geodesic
  ErrorStats position;
  ErrorStats orientation;
  int converged = 0;
};

nlohmann::json to_json(const ValidationReport& r);

// Leave-one-out random actuation against a twin of the calibrated scene:
// two of three chambers per segment get random pressures, the inverse
// solves for those two with the third held at zero.
ValidationReport validate_leave_one_out(const Scene& scene, const ValidationOptions& options = {});

}  // namespace softarm
