#include "softarm/calibration.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "softarm/rotation.hpp"

namespace softarm {

using nlohmann::json;

namespace {

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

void check_frame_shape(const Scene& scene, const SensorFrame& f) {
  if (f.pressures.size() != scene.chamber_count()) throw InputError("trial pressures do not match the chambers");
  if (static_cast<int>(f.orientations.size()) != scene.effector_count())
    throw InputError("trial orientations do not match the effectors");
}

// Leaves room for pressures well above the nominal limit while estimating
// on a model whose factors are still off.
constexpr double kEstimationHeadroom = 4.0;

}  // namespace

CalibrationResult calibrate_pressure_map(Scene& scene, const std::vector<SensorFrame>& trials,
                                         const CalibrationOptions& options) {
  const int nc = scene.chamber_count();
  std::vector<std::vector<int>> actuated(trials.size());
  std::vector<int> counts(nc, 0);
  for (std::size_t k = 0; k < trials.size(); ++k) {
    const SensorFrame& f = trials[k];
    check_frame_shape(scene, f);
    std::vector<int> per_segment(nc, 0);
    for (int i = 0; i < nc; ++i) {
      if (f.pressures(i) < 0.0) throw InputError("trial " + std::to_string(k) + " has a negative pressure");
      if (f.pressures(i) == 0.0) continue;
      const int s = scene.layout().chambers[i].segment;
      if (++per_segment[s] > 1)
        throw InputError("trial " + std::to_string(k) + " actuates more than one chamber in segment " +
                         std::to_string(s + 1));
      actuated[k].push_back(i);
      ++counts[i];
    }
  }
  for (int i = 0; i < nc; ++i)
    if (counts[i] < options.min_trials)
      throw InputError("insufficient data: chamber " + scene.layout().chambers[i].label + " has " +
                       std::to_string(counts[i]) + " actuated trials, need " + std::to_string(options.min_trials));

  CalibrationResult result;
  CalibrationFactors factors = scene.calibration();
  std::vector<double> gain(nc);
  for (int i = 0; i < nc; ++i) gain[i] = factors.alpha * factors.nu[i];
  result.chambers.assign(nc, ChamberFit{});

  Scene work(scene);
  for (int round = 0; round < options.max_rounds; ++round) {
    work.set_calibration(factors);
    work.set_pressure_limit(kEstimationHeadroom * scene.pressure_limit());
    work.set_efforts(VecX::Zero(work.effort_count()));
    work.reset();

    std::vector<double> pp(nc, 0.0), ps(nc, 0.0), max_p(nc, 0.0);
    std::vector<std::vector<std::pair<double, double>>> samples(nc);
    std::vector<int> previous;
    for (std::size_t k = 0; k < trials.size(); ++k) {
      if (actuated[k].empty()) continue;
      if (actuated[k] != previous) work.reset();
      previous = actuated[k];
      VecX e = VecX::Zero(work.effort_count());
      std::vector<char> free(work.effort_count(), 0);
      for (int i : actuated[k]) {
        e(i) = trials[k].pressures(i) / factors.nu[i];
        free[i] = 1;
      }
      work.set_efforts(e);
      InverseOptions inv;
      inv.free = free;
      inv.tolerance_deg = options.inverse_tolerance_deg;
      const InverseResult r = inverse_iterate(work, trials[k].rotations(), inv);
      for (int i : actuated[k]) {
        const double p = trials[k].pressures(i), sim = r.efforts(i);
        pp[i] += p * p;
        ps[i] += p * sim;
        max_p[i] = std::max(max_p[i], p);
        samples[i].emplace_back(p, sim);
      }
    }

    std::vector<double> next(nc);
    double change = 0.0;
    for (int i = 0; i < nc; ++i) {
      const double slope = ps[i] / pp[i];
      if (!(slope > 0.0))
        throw SolverError("pressure fit for chamber " + work.layout().chambers[i].label + " is not positive");
      // With the model at modulus scale alpha_k, sim ~ commanded * alpha_k / (alpha* nu*_i).
      next[i] = factors.alpha / slope;
      change = std::max(change, std::abs(next[i] / gain[i] - 1.0));
      double sq = 0.0;
      for (const auto& [p, sim] : samples[i]) sq += (sim - slope * p) * (sim - slope * p);
      result.chambers[i] = {static_cast<int>(samples[i].size()), slope,
                            std::sqrt(sq / samples[i].size()) / (slope * max_p[i])};
    }
    gain = next;
    factors.alpha = mean_of(gain);
    for (int i = 0; i < nc; ++i) factors.nu[i] = gain[i] / factors.alpha;
    const double m = mean_of(factors.nu);
    for (double& v : factors.nu) v /= m;
    factors.alpha *= m;
    result.rounds = round + 1;
    if (change < options.tolerance) {
      result.converged = true;
      break;
    }
  }
  factors.mode = CalibrationMode::kPressureMap;
  scene.set_calibration(factors);
  result.factors = factors;
  result.mean_nu = mean_of(factors.nu);
  return result;
}

CalibrationResult calibrate_force_scale(Scene& scene, const std::vector<SensorFrame>& trials,
                                        const CalibrationOptions& options) {
  std::vector<const SensorFrame*> used;
  for (const SensorFrame& f : trials) {
    check_frame_shape(scene, f);
    if (f.force && *f.force >= options.min_force) used.push_back(&f);
  }
  if (used.empty()) throw InputError("force-scale calibration needs frames with gauge forces");

  CalibrationResult result;
  const CalibrationFactors initial = scene.calibration();
  CalibrationFactors factors = initial;
  const int nc = scene.chamber_count();
  std::vector<double> gain(nc);
  for (int i = 0; i < nc; ++i) gain[i] = factors.alpha * factors.nu[i];

  Scene work(scene);
  DisturbanceOptions est;
  est.tolerance_deg = options.inverse_tolerance_deg;
  for (int round = 0; round < options.max_rounds; ++round) {
    work.set_calibration(factors);
    work.set_efforts(VecX::Zero(work.effort_count()));
    work.reset();
    double fm = 0.0, mm = 0.0, ff = 0.0;
    std::vector<std::pair<double, double>> samples;
    for (const SensorFrame* f : used) {
      const DisturbanceEstimate d = estimate_disturbance(work, *f, est);
      fm += *f->force * d.magnitude;
      mm += d.magnitude * d.magnitude;
      ff += *f->force * *f->force;
      samples.emplace_back(*f->force, d.magnitude);
    }
    if (!(mm > 0.0)) throw SolverError("estimated disturbances vanish; cannot fit a force scale");
    // Estimated forces grow with the modulus, so measured ~ s * estimated
    // means the modulus is s times too small.
    const double s = fm / mm;
    double sq = 0.0;
    for (const auto& [f, m] : samples) sq += (f - s * m) * (f - s * m);
    result.force_rms = std::sqrt(sq / ff);
    factors.alpha *= s;
    for (int i = 0; i < nc; ++i) factors.nu[i] = gain[i] / factors.alpha;
    result.rounds = round + 1;
    if (std::abs(s - 1.0) < options.tolerance) {
      result.converged = true;
      break;
    }
  }
  factors.mode = CalibrationMode::kForceScale;
  scene.set_calibration(factors);
  result.factors = factors;
  result.force_scale = factors.alpha / initial.alpha;
  result.mean_nu = mean_of(factors.nu);
  result.pressure_factor = result.mean_nu;
  return result;
}

json to_json(const CalibrationResult& r) {
  json chambers = json::array();
  for (const ChamberFit& c : r.chambers) chambers.push_back({{"trials", c.trials}, {"slope", c.slope}, {"rms", c.rms}});
  return {{"mode", to_string(r.factors.mode)},
          {"alpha", r.factors.alpha},
          {"nu", r.factors.nu},
          {"mean_nu", r.mean_nu},
          {"force_scale", r.force_scale},
          {"pressure_factor", r.pressure_factor},
          {"force_rms", r.force_rms},
          {"chambers", chambers},
          {"rounds", r.rounds},
          {"converged", r.converged}};
}

ValidationReport validate_leave_one_out(const Scene& scene, const ValidationOptions& options) {
  ScenarioSpec spec;
  spec.protocol = Protocol::kRandom;
  spec.trials = options.trials;
  spec.seed = options.seed;
  spec.noise_deg = options.noise_deg;
  spec.active_per_segment = 2;
  spec.p_high = scene.pressure_limit();
  spec.twin_alpha = scene.calibration().alpha;
  spec.twin_nu = scene.calibration().nu;
  const SynthResult data = synth_experiment(scene, spec);

  ValidationReport report;
  Scene model(scene);
  for (std::size_t k = 0; k < data.frames.size(); ++k) {
    const SensorFrame& f = data.frames[k];
    std::vector<char> free(model.effort_count(), 0);
    for (int i = 0; i < model.chamber_count(); ++i) free[i] = f.pressures(i) > 0.0;
    model.set_efforts(VecX::Zero(model.effort_count()));
    model.reset();
    InverseOptions inv;
    inv.free = free;
    inv.tolerance_deg = options.tolerance_deg;
    const InverseResult r = inverse_iterate(model, f.rotations(), inv);
    report.converged += r.converged ? 1 : 0;
    report.position_error.push_back((model.tip_position() - data.truth[k].tip).norm());
    report.orientation_error.push_back(geodesic_angle(model.orientations().back(), f.rotations().back()) * 180.0 /
                                       std::numbers::pi);
  }
  report.position = summarize(report.position_error);
  report.orientation = summarize(report.orientation_error);
  return report;
}

json to_json(const ValidationReport& r) {
  json rows = json::array();
  for (const char* stat : {"min", "max", "mean", "std"}) {
    const auto pick = [&](const ErrorStats& s) {
      const std::string k = stat;
      return k == "min" ? s.min : k == "max" ? s.max : k == "mean" ? s.mean : s.std;
    };
    rows.push_back({{"statistic", stat}, {"position_m", pick(r.position)}, {"orientation_deg", pick(r.orientation)}});
  }
  return {{"trials", r.position_error.size()},
          {"converged", r.converged},
          {"table", rows},
          {"position_error_m", r.position_error},
          {"orientation_error_deg", r.orientation_error}};
}

}  // namespace softarm
