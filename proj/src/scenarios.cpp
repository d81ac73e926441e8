#include "softarm/scenarios.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "softarm/rotation.hpp"

namespace softarm {

using nlohmann::json;

std::vector<Mat3> SensorFrame::rotations() const {
  std::vector<Mat3> out;
  for (const auto& q : orientations) out.push_back(q.normalized().toRotationMatrix());
  return out;
}

Eigen::Quaterniond to_quaternion(const Mat3& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return q;
}

// --- CSV ----------------------------------------------------------------------

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string write_frames_csv(const std::vector<SensorFrame>& frames) {
  std::string out(kFrameCsvHeader);
  out += '\n';
  for (const SensorFrame& f : frames) {
    if (f.pressures.size() != 6 || f.orientations.size() != 2)
      throw InputError("frame CSV holds six pressures and two orientations per row");
    out += format_double(f.t);
    for (int i = 0; i < 6; ++i) out += ',' + format_double(f.pressures(i));
    for (const auto& q : f.orientations)
      for (double c : {q.w(), q.x(), q.y(), q.z()}) out += ',' + format_double(c);
    out += ',';
    if (f.force) out += format_double(*f.force);
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool parse_number(std::string_view s, double& v) {
  s = trim(s);
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(v);
}

}  // namespace

ImportResult import_log(std::string_view csv, double p_max) {
  ImportResult result;
  int line_no = 0;
  std::size_t pos = 0;
  bool header = false;
  double last_t = -std::numeric_limits<double>::infinity();
  while (pos < csv.size()) {
    std::size_t end = csv.find('\n', pos);
    if (end == std::string_view::npos) end = csv.size();
    std::string_view line = csv.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!header) {
      std::string compact;
      for (char c : line)
        if (c != ' ' && c != '\t') compact += c;
      if (compact != kFrameCsvHeader) throw ParseError("header does not match the frame schema", line_no);
      header = true;
      continue;
    }
    if (trim(line).empty()) continue;
    const auto fields = split(line);
    auto reject = [&](const std::string& why) { result.rejected.push_back({line_no, why}); };
    if (fields.size() != 16) {
      reject("expected 16 fields, found " + std::to_string(fields.size()));
      continue;
    }
    double v[15];
    bool ok = true;
    for (int i = 0; i < 15 && ok; ++i) ok = parse_number(fields[i], v[i]);
    if (!ok) {
      reject("malformed number");
      continue;
    }
    SensorFrame f;
    f.t = v[0];
    for (int i = 0; i < 6; ++i) f.pressures(i) = v[1 + i];
    if ((f.pressures.array() < 0.0).any() || (f.pressures.array() > 1.1 * p_max).any()) {
      reject("pressure outside [0, 1.1 p_max]");
      continue;
    }
    bool norms = true;
    for (int s = 0; s < 2; ++s) {
      Eigen::Quaterniond q(v[7 + 4 * s], v[8 + 4 * s], v[9 + 4 * s], v[10 + 4 * s]);
      norms = norms && std::abs(q.norm() - 1.0) <= 1e-3;
      f.orientations[s] = q;  // kept as written so files round-trip exactly
    }
    if (!norms) {
      reject("quaternion norm differs from 1 by more than 1e-3");
      continue;
    }
    if (!trim(fields[15]).empty()) {
      double force;
      if (!parse_number(fields[15], force)) {
        reject("malformed force");
        continue;
      }
      f.force = force;
    }
    if (!(f.t > last_t)) {
      reject("timestamp does not increase");
      continue;
    }
    last_t = f.t;
    result.frames.push_back(f);
  }
  if (!header) throw ParseError("empty frame log", 1);
  return result;
}

ImportResult import_log_file(const std::string& path, double p_max) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open frame log '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return import_log(ss.str(), p_max);
}

// --- scenario specs -----------------------------------------------------------

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::kHold:
      return "hold";
    case Protocol::kSweep:
      return "sweep";
    case Protocol::kRandom:
      return "random";
    case Protocol::kForceRamp:
      return "force_ramp";
    case Protocol::kTetheredRamp:
      return "tethered_ramp";
  }
  return "hold";
}

namespace {

Protocol protocol_from(const std::string& name) {
  for (Protocol p : {Protocol::kHold, Protocol::kSweep, Protocol::kRandom, Protocol::kForceRamp, Protocol::kTetheredRamp})
    if (to_string(p) == name) return p;
  throw InputError("unknown scenario protocol '" + name + "'");
}

Vec3 vec_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw InputError("expected a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

std::vector<double> to_std(const VecX& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

void ScenarioSpec::validate(int chambers) const {
  if (!(dt > 0.0)) throw InputError("scenario dt must be positive");
  if (!(twin_alpha > 0.0)) throw InputError("twin alpha must be positive");
  if (!twin_nu.empty() && static_cast<int>(twin_nu.size()) != chambers)
    throw InputError("twin nu needs one factor per chamber");
  for (double v : twin_nu)
    if (!(v > 0.0)) throw InputError("twin nu factors must be positive");
  if (!(noise_deg >= 0.0)) throw InputError("noise must be non-negative");
  if (pressures.size() != chambers) throw InputError("scenario pressures need one value per chamber");
  if ((pressures.array() < 0.0).any()) throw InputError("scenario pressures must be non-negative");
  if (frames < 1 || sweep_levels < 1 || trials < 1 || force_steps < 1 || tether_steps < 1)
    throw InputError("scenario counts must be positive");
  if (!(sweep_step > 0.0)) throw InputError("sweep step must be positive");
  for (int c : sweep_chambers)
    if (c < 0 || c >= chambers) throw InputError("sweep chamber out of range");
  for (int c : tether_chambers)
    if (c < 0 || c >= chambers) throw InputError("tether chamber out of range");
  if (active_per_segment < 0) throw InputError("active chambers per segment must be non-negative");
  if (!(p_low >= 0.0 && p_high >= p_low)) throw InputError("random pressure range is invalid");
  if (!(force_max >= 0.0) || !(force_direction.norm() > 0.0)) throw InputError("force ramp is invalid");
  if (!(tether_pressure >= 0.0) || !(tether_stiffness > 0.0) || !(tether_length > 0.0) ||
      !(tether_direction.norm() > 0.0))
    throw InputError("tether ramp is invalid");
}

void to_json(json& j, const ScenarioSpec& s) {
  j = {{"schema_version", 1},
       {"protocol", to_string(s.protocol)},
       {"seed", s.seed},
       {"dt", s.dt},
       {"twin", {{"alpha", s.twin_alpha}, {"nu", s.twin_nu}}},
       {"noise_deg", s.noise_deg},
       {"hold", {{"frames", s.frames}, {"pressures", to_std(s.pressures)}}},
       {"sweep", {{"step", s.sweep_step}, {"levels", s.sweep_levels}, {"chambers", s.sweep_chambers}}},
       {"random",
        {{"trials", s.trials}, {"active_per_segment", s.active_per_segment}, {"p_low", s.p_low}, {"p_high", s.p_high}}},
       {"force_ramp", {{"max", s.force_max}, {"steps", s.force_steps}, {"direction", vec_json(s.force_direction)}}},
       {"tethered_ramp",
        {{"chambers", s.tether_chambers},
         {"pressure", s.tether_pressure},
         {"steps", s.tether_steps},
         {"stiffness", s.tether_stiffness},
         {"length", s.tether_length},
         {"direction", vec_json(s.tether_direction)}}}};
}

void from_json(const json& j, ScenarioSpec& s) {
  try {
    if (j.contains("schema_version") && j.at("schema_version").get<int>() != 1)
      throw InputError("unsupported scenario schema_version " + j.at("schema_version").dump());
    if (j.contains("protocol")) s.protocol = protocol_from(j.at("protocol").get<std::string>());
    s.seed = j.value("seed", s.seed);
    s.dt = j.value("dt", s.dt);
    s.noise_deg = j.value("noise_deg", s.noise_deg);
    if (j.contains("twin")) {
      s.twin_alpha = j.at("twin").value("alpha", s.twin_alpha);
      s.twin_nu = j.at("twin").value("nu", s.twin_nu);
    }
    if (j.contains("hold")) {
      const json& h = j.at("hold");
      s.frames = h.value("frames", s.frames);
      if (h.contains("pressures")) {
        const auto p = h.at("pressures").get<std::vector<double>>();
        s.pressures = Eigen::Map<const VecX>(p.data(), static_cast<Eigen::Index>(p.size()));
      }
    }
    if (j.contains("sweep")) {
      const json& w = j.at("sweep");
      s.sweep_step = w.value("step", s.sweep_step);
      s.sweep_levels = w.value("levels", s.sweep_levels);
      s.sweep_chambers = w.value("chambers", s.sweep_chambers);
    }
    if (j.contains("random")) {
      const json& r = j.at("random");
      s.trials = r.value("trials", s.trials);
      s.active_per_segment = r.value("active_per_segment", s.active_per_segment);
      s.p_low = r.value("p_low", s.p_low);
      s.p_high = r.value("p_high", s.p_high);
    }
    if (j.contains("force_ramp")) {
      const json& f = j.at("force_ramp");
      s.force_max = f.value("max", s.force_max);
      s.force_steps = f.value("steps", s.force_steps);
      if (f.contains("direction")) s.force_direction = vec_from(f.at("direction"));
    }
    if (j.contains("tethered_ramp")) {
      const json& t = j.at("tethered_ramp");
      s.tether_chambers = t.value("chambers", s.tether_chambers);
      s.tether_pressure = t.value("pressure", s.tether_pressure);
      s.tether_steps = t.value("steps", s.tether_steps);
      s.tether_stiffness = t.value("stiffness", s.tether_stiffness);
      s.tether_length = t.value("length", s.tether_length);
      if (t.contains("direction")) s.tether_direction = vec_from(t.at("direction"));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("scenario spec: ") + e.what());
  }
}

// --- synthesis ----------------------------------------------------------------

namespace {

class Twin {
 public:
  Twin(const Scene& prototype, const ScenarioSpec& spec) : scene_(prototype), spec_(spec), rng_(spec.seed) {
    CalibrationFactors f;
    f.alpha = spec.twin_alpha;
    f.nu = spec.twin_nu.empty() ? std::vector<double>(scene_.chamber_count(), 1.0) : spec.twin_nu;
    scene_.set_calibration(f);
    scene_.set_forces(VecX::Zero(scene_.force_count()));
    scene_.set_dead_loads({});
    scene_.set_tethers({});
    scene_.reset();
  }

  Scene& scene() { return scene_; }
  std::mt19937_64& rng() { return rng_; }

  void record(const VecX& commanded, std::optional<double> force, SynthResult& out) {
    scene_.set_commanded_pressures(commanded);
    const EquilibriumReport rep = scene_.solve_equilibrium();
    if (!rep.converged) throw ConvergenceError("twin equilibrium did not converge", rep.residual);
    TwinTruth truth;
    truth.simulated_pressures = scene_.pressures();
    truth.tip = scene_.tip_position();
    truth.orientations = scene_.orientations();
    SensorFrame frame;
    frame.t = static_cast<double>(out.frames.size()) * spec_.dt;
    frame.pressures = commanded;
    frame.orientations.clear();
    std::normal_distribution<double> g(0.0, spec_.noise_deg * std::numbers::pi / 180.0);
    for (const Mat3& r : truth.orientations) {
      Mat3 measured = r;
      if (spec_.noise_deg > 0.0) {
        const Vec3 w(g(rng_), g(rng_), g(rng_));
        measured = exp_map(w) * r;
      }
      frame.orientations.push_back(to_quaternion(measured));
    }
    frame.force = force;
    truth.force = force.value_or(0.0);
    out.frames.push_back(frame);
    out.truth.push_back(std::move(truth));
  }

 private:
  Scene scene_;
  const ScenarioSpec& spec_;
  std::mt19937_64 rng_;
};

}  // namespace

SynthResult synth_experiment(const Scene& prototype, const ScenarioSpec& spec) {
  const int chambers = prototype.chamber_count();
  spec.validate(chambers);
  if (prototype.effector_count() != 2 || chambers != 6)
    throw InputError("synthetic frames need the two-segment, six-chamber layout");
  Twin twin(prototype, spec);
  Scene& scene = twin.scene();
  SynthResult out;
  switch (spec.protocol) {
    case Protocol::kHold:
      for (int i = 0; i < spec.frames; ++i) twin.record(spec.pressures, std::nullopt, out);
      break;
    case Protocol::kSweep:
      for (int c : spec.sweep_chambers) {
        scene.reset();
        for (int level = 0; level < spec.sweep_levels; ++level) {
          VecX p = VecX::Zero(chambers);
          p(c) = level * spec.sweep_step;
          twin.record(p, std::nullopt, out);
        }
      }
      break;
    case Protocol::kRandom: {
      const auto& segment = scene.layout().chambers;
      std::uniform_real_distribution<double> u(spec.p_low, spec.p_high);
      for (int trial = 0; trial < spec.trials; ++trial) {
        VecX p = VecX::Zero(chambers);
        for (int s = 0; s < 2; ++s) {
          std::vector<int> members;
          for (int c = 0; c < chambers; ++c)
            if (segment[c].segment == s) members.push_back(c);
          // Fisher-Yates with the scenario engine keeps the choice reproducible.
          for (int i = static_cast<int>(members.size()) - 1; i > 0; --i) {
            std::uniform_int_distribution<int> pick(0, i);
            std::swap(members[i], members[pick(twin.rng())]);
          }
          const int n = std::min<int>(spec.active_per_segment, static_cast<int>(members.size()));
          std::sort(members.begin(), members.begin() + n);
          for (int i = 0; i < n; ++i) p(members[i]) = u(twin.rng());
        }
        scene.reset();
        twin.record(p, std::nullopt, out);
      }
      break;
    }
    case Protocol::kForceRamp: {
      const Vec3 dir = spec.force_direction.normalized();
      const Embedding tip = scene.layout().effector_points.back();
      for (int k = 0; k <= spec.force_steps; ++k) {
        const double f = spec.force_max * k / spec.force_steps;
        scene.set_dead_loads({DeadLoad{tip, f * dir}});
        twin.record(spec.pressures, f, out);
      }
      break;
    }
    case Protocol::kTetheredRamp: {
      scene.set_commanded_pressures(spec.pressures);
      scene.solve_equilibrium();
      Spring cord;
      cord.a.embedding = scene.layout().effector_points.back();
      cord.b.anchored = true;
      cord.b.anchor = scene.tip_position() + spec.tether_length * spec.tether_direction.normalized();
      cord.rest_length = spec.tether_length;
      cord.stiffness = spec.tether_stiffness;
      cord.unilateral = true;
      scene.set_tethers({cord});
      for (int k = 0; k <= spec.tether_steps; ++k) {
        VecX p = spec.pressures;
        for (int c : spec.tether_chambers) p(c) += spec.tether_pressure * k / spec.tether_steps;
        scene.set_commanded_pressures(p);
        scene.solve_equilibrium();
        twin.record(p, spring_tension(cord, scene.mesh(), scene.state().q), out);
      }
      break;
    }
  }
  return out;
}

// --- estimation -----------------------------------------------------------------

DisturbanceEstimate estimate_disturbance(Scene& scene, const SensorFrame& frame, const DisturbanceOptions& options) {
  const int nc = scene.chamber_count(), nf = scene.force_count();
  if (frame.pressures.size() != nc) throw InputError("frame pressures do not match the chambers");
  if (static_cast<int>(frame.orientations.size()) != scene.effector_count())
    throw InputError("frame orientations do not match the effectors");
  std::vector<char> free(scene.effort_count(), 0);
  if (options.actuators.empty()) {
    free = force_only_mask(scene);
  } else {
    for (int a : options.actuators) {
      if (a < 0 || a >= nf) throw InputError("force actuator index out of range");
      free[nc + a] = 1;
    }
  }
  const double saved_limit = scene.pressure_limit();
  scene.set_pressure_limit(std::max(saved_limit, frame.pressures.maxCoeff()));
  VecX e = scene.efforts();
  for (int i = 0; i < nf; ++i)
    if (!free[nc + i]) e(nc + i) = 0.0;
  scene.set_efforts(e);

  InverseOptions inv;
  inv.free = free;
  inv.tolerance_deg = options.tolerance_deg;
  const VecX sim = scene.simulated_from_commanded(frame.pressures);
  for (int i = 0; i < nc; ++i) inv.pins.emplace_back(i, sim(i));
  InverseResult r;
  try {
    r = inverse_iterate(scene, frame.rotations(), inv);
  } catch (...) {
    scene.set_pressure_limit(saved_limit);
    throw;
  }
  scene.set_pressure_limit(saved_limit);

  DisturbanceEstimate d;
  d.forces = r.efforts.tail(nf);
  for (int i = 0; i < nf; ++i) {
    const ForceActuator& a = scene.layout().forces[i];
    const Mat3 frame_rotation = a.frame >= 0 ? scene.orientation(a.frame) : Mat3::Identity();
    const Vec3 w = frame_rotation * a.direction * d.forces(i);
    d.world.push_back(w);
    d.total += w;
  }
  d.magnitude = d.total.norm();
  d.residual_deg = r.residual_deg;
  d.iterations = r.iterations;
  d.converged = r.converged;
  return d;
}

TeachEstimate teach_step(Scene& scene, const std::vector<Mat3>& targets, double tolerance_deg) {
  scene.set_forces(VecX::Zero(scene.force_count()));
  InverseOptions inv;
  inv.free = pressure_only_mask(scene);
  inv.tolerance_deg = tolerance_deg;
  const InverseResult r = inverse_iterate(scene, targets, inv);
  TeachEstimate t;
  t.simulated = r.efforts.head(scene.chamber_count());
  t.commanded = scene.commanded_from_simulated(t.simulated);
  // Bounds hold in simulated units; guard against roundoff through nu.
  t.commanded = t.commanded.cwiseMax(0.0).cwiseMin(scene.pressure_limit());
  t.residual_deg = r.residual_deg;
  t.iterations = r.iterations;
  t.converged = r.converged;
  t.saturated = r.saturated;
  return t;
}

RampSchedule teach_commit(TeachState& state, double p_max, double duration, int steps) {
  if (!state.estimate) throw InputError("no teach estimate to commit");
  if (!state.estimate->reachable()) throw InputError("teach estimate is flagged unreachable; commit refused");
  if (!(duration > 0.0) || steps < 1) throw InputError("ramp needs a positive duration and step count");
  const VecX target = state.estimate->commanded;
  if (target.size() != state.current.size()) throw InputError("ramp endpoints differ in size");
  RampSchedule ramp;
  if (target == state.current) {
    ramp.times.push_back(0.0);
    ramp.commanded.push_back(target);
  } else {
    for (int k = 1; k <= steps; ++k) {
      const double s = static_cast<double>(k) / steps;
      VecX p = k == steps ? target : VecX(state.current + s * (target - state.current));
      if ((p.array() < 0.0).any() || (p.array() > p_max).any())
        throw InputError("ramp step " + std::to_string(k) + " leaves the pressure bounds");
      ramp.times.push_back(duration * s);
      ramp.commanded.push_back(p);
    }
  }
  state.committed = true;
  state.ramp = ramp;
  return ramp;
}

ErrorStats summarize(const std::vector<double>& values) {
  ErrorStats s;
  s.count = static_cast<int>(values.size());
  if (values.empty()) return s;
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / s.count;
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(var / s.count);
  return s;
}

json to_json(const ErrorStats& s) {
  return {{"min", s.min}, {"max", s.max}, {"mean", s.mean}, {"std", s.std}, {"count", s.count}};
}

}  // namespace softarm
