#include "cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "softarm/calibration.hpp"
#include "softarm/rotation.hpp"
#include "softarm/service.hpp"

namespace softarm::cli {

using nlohmann::json;

namespace {

json quat_json(const Mat3& r) {
  const Eigen::Quaterniond q = to_quaternion(r);
  return {q.w(), q.x(), q.y(), q.z()};
}
json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
json vec_json(const VecX& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

double degrees(double rad) { return rad * 180.0 / 3.14159265358979323846; }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw InputError("'" + path + "': " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write '" + path + "'");
  f << text;
}

json report(const std::string& command) { return {{"schema_version", kReportSchema}, {"command", command}}; }

void write_report(const std::string& path, const json& j, std::ostream& out) { write_text(path, j.dump(2) + "\n", out); }

SceneConfig scene_config(const std::string& path) {
  std::string p = path;
  if (p.empty()) {
    if (const char* env = std::getenv(kSceneEnv)) p = env;
  }
  return p.empty() ? SceneConfig{} : load_scene_config(p);
}

// Scene at its rest equilibrium.
Scene rest_scene(const SceneConfig& config) {
  Scene scene(config);
  const EquilibriumReport eq = scene.solve_equilibrium();
  if (!eq.converged) throw ConvergenceError("rest equilibrium did not converge", eq.residual);
  return scene;
}

json rejected_json(const std::vector<RowError>& rows) {
  json j = json::array();
  for (const RowError& r : rows) j.push_back({{"line", r.line}, {"message", r.message}});
  return j;
}

ImportResult import_frames(const std::string& path, const Scene& scene, std::ostream& err) {
  ImportResult r = import_log_file(path, scene.config().p_max);
  for (const RowError& e : r.rejected) err << path << ":" << e.line << ": rejected: " << e.message << "\n";
  if (r.frames.empty()) throw InputError("'" + path + "' has no usable frames");
  return r;
}

json pose_json(const Scene& scene) {
  json orient = json::array(), points = json::array();
  for (int e = 0; e < scene.effector_count(); ++e) {
    orient.push_back(quat_json(scene.orientation(e)));
    points.push_back(vec_json(scene.effector_position(e)));
  }
  return {{"orientations", orient}, {"effector_positions", points}, {"tip", vec_json(scene.tip_position())}};
}

struct Common {
  std::string scene;
  std::string out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--scene", c.scene, std::string("Scene config JSON (default: $") + kSceneEnv + " or built-in arm)");
  sub->add_option("--out", c.out, "Output file (default: stdout)");
}

// --- subcommands -------------------------------------------------------------

struct SimulateArgs {
  Common common;
  std::vector<double> pressures, forces;
};

int simulate(const SimulateArgs& a, std::ostream& out) {
  Scene scene = rest_scene(scene_config(a.common.scene));
  VecX p = VecX::Zero(scene.chamber_count());
  if (!a.pressures.empty()) {
    if (static_cast<int>(a.pressures.size()) != scene.chamber_count())
      throw InputError("--pressures needs " + std::to_string(scene.chamber_count()) + " values");
    for (int i = 0; i < p.size(); ++i) {
      p(i) = a.pressures[i];
      if (!(p(i) >= 0.0 && p(i) <= scene.pressure_limit()))
        throw InputError("pressure " + std::to_string(i + 1) + " outside [0, p_max]");
    }
  }
  VecX f = VecX::Zero(scene.force_count());
  if (!a.forces.empty()) {
    if (static_cast<int>(a.forces.size()) != scene.force_count())
      throw InputError("--forces needs " + std::to_string(scene.force_count()) + " values");
    for (int i = 0; i < f.size(); ++i) f(i) = a.forces[i];
  }
  scene.set_commanded_pressures(p);
  scene.set_forces(f);
  const EquilibriumReport eq = scene.solve_equilibrium();

  json r = report("simulate");
  r["pressures"] = {{"commanded", vec_json(p)}, {"simulated", vec_json(scene.pressures())}};
  r["forces"] = vec_json(f);
  r.update(pose_json(scene));
  r["residual"] = eq.residual;
  r["steps"] = eq.steps;
  r["converged"] = eq.converged;
  write_report(a.common.out, r, out);
  return eq.converged ? kOk : kNotConverged;
}

struct SynthArgs {
  Common common;
  std::string spec, protocol, truth;
  std::optional<std::uint64_t> seed;
  std::optional<double> noise;
};

int synth(const SynthArgs& a, std::ostream& out) {
  const Scene scene = rest_scene(scene_config(a.common.scene));
  ScenarioSpec spec;
  try {
    if (!a.spec.empty()) spec = read_json(a.spec).get<ScenarioSpec>();
    if (!a.protocol.empty()) {
      json j = spec;
      j["protocol"] = a.protocol;
      spec = j.get<ScenarioSpec>();
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("scenario spec: ") + e.what());
  }
  if (a.seed) spec.seed = *a.seed;
  if (a.noise) spec.noise_deg = *a.noise;
  const SynthResult data = synth_experiment(scene, spec);
  write_text(a.common.out, write_frames_csv(data.frames), out);

  if (!a.truth.empty()) {
    json r = report("synth");
    r["spec"] = spec;
    json truth = json::array();
    for (const TwinTruth& t : data.truth) {
      json orient = json::array();
      for (const Mat3& m : t.orientations) orient.push_back(quat_json(m));
      truth.push_back({{"simulated_pressures", vec_json(t.simulated_pressures)},
                       {"force", t.force},
                       {"tip", vec_json(t.tip)},
                       {"orientations", orient}});
    }
    r["truth"] = truth;
    write_report(a.truth, r, out);
  }
  return kOk;
}

struct CalibrateArgs {
  Common common;
  std::string mode, data, write_scene;
  CalibrationOptions options;
};

int calibrate(const CalibrateArgs& a, std::ostream& out, std::ostream& err) {
  Scene scene = rest_scene(scene_config(a.common.scene));
  const ImportResult log = import_frames(a.data, scene, err);
  const CalibrationResult result = a.mode == "pressure" ? calibrate_pressure_map(scene, log.frames, a.options)
                                                        : calibrate_force_scale(scene, log.frames, a.options);
  json r = report("calibrate");
  r["mode"] = a.mode;
  r["frames"] = log.frames.size();
  r["rejected"] = rejected_json(log.rejected);
  r["calibration"] = to_json(result);
  if (!a.write_scene.empty()) {
    SceneConfig config = scene.config();
    config.calibration = result.factors;
    write_text(a.write_scene, json(config).dump(2) + "\n", out);
  }
  write_report(a.common.out, r, out);
  return result.converged ? kOk : kNotConverged;
}

struct ValidateArgs {
  Common common;
  ValidationOptions options;
};

int validate(const ValidateArgs& a, std::ostream& out) {
  const Scene scene = rest_scene(scene_config(a.common.scene));
  if (a.options.trials < 1) throw InputError("--trials must be positive");
  const ValidationReport v = validate_leave_one_out(scene, a.options);
  json r = report("validate");
  r["trials"] = a.options.trials;
  r["seed"] = a.options.seed;
  r["noise_deg"] = a.options.noise_deg;
  r["validation"] = to_json(v);
  write_report(a.common.out, r, out);
  return v.converged == a.options.trials ? kOk : kNotConverged;
}

struct TeachArgs {
  Common common;
  std::string targets;
  bool commit = false;
  double duration = 2.0;
  int steps = 20;
};

int teach(const TeachArgs& a, std::ostream& out) {
  Scene scene = rest_scene(scene_config(a.common.scene));
  TeachState state;
  state.targets = parse_command("targets", read_json(a.targets), scene).targets;
  state.current = VecX::Zero(scene.chamber_count());

  Scene estimator(scene);
  const TeachEstimate est = teach_step(estimator, state.targets);
  state.estimate = est;

  json r = report("teach");
  r["estimate"] = {{"commanded", vec_json(est.commanded)},
                   {"simulated", vec_json(est.simulated)},
                   {"residual_deg", est.residual_deg},
                   {"iterations", est.iterations},
                   {"reachable", est.reachable()},
                   {"saturated", est.saturated}};
  int code = kOk;
  if (a.commit) {
    const RampSchedule ramp = teach_commit(state, scene.pressure_limit(), a.duration, a.steps);
    bool converged = true;
    for (const VecX& p : ramp.commanded) {
      scene.set_commanded_pressures(p);
      converged = scene.solve_equilibrium().converged;
    }
    json errors = json::array();
    for (int e = 0; e < scene.effector_count(); ++e)
      errors.push_back(degrees(geodesic_angle(scene.orientation(e), state.targets[e])));
    r["ramp"] = {{"times", ramp.times}, {"steps", ramp.commanded.size()}};
    r["final"] = pose_json(scene);
    r["final"]["orientation_error_deg"] = errors;
    r["final"]["converged"] = converged;
    if (!converged) code = kNotConverged;
  }
  write_report(a.common.out, r, out);
  return code;
}

struct EstimateArgs {
  Common common;
  std::string log;
  std::vector<int> actuators;
  double tolerance_deg = 0.01;
};

int estimate_force(const EstimateArgs& a, std::ostream& out, std::ostream& err) {
  Scene scene = rest_scene(scene_config(a.common.scene));
  const ImportResult log = import_frames(a.log, scene, err);
  DisturbanceOptions options;
  options.actuators = a.actuators;
  options.tolerance_deg = a.tolerance_deg;

  json frames = json::array();
  double max_magnitude = 0.0;
  bool all_converged = true;
  for (const SensorFrame& f : log.frames) {
    const DisturbanceEstimate d = estimate_disturbance(scene, f, options);
    json world = json::array();
    for (const Vec3& w : d.world) world.push_back(vec_json(w));
    json row = {{"t", f.t},
                {"forces", vec_json(d.forces)},
                {"world", world},
                {"total", vec_json(d.total)},
                {"magnitude", d.magnitude},
                {"residual_deg", d.residual_deg},
                {"converged", d.converged}};
    if (f.force) row["f_meas"] = *f.force;
    frames.push_back(row);
    max_magnitude = std::max(max_magnitude, d.magnitude);
    all_converged = all_converged && d.converged;
  }
  json r = report("estimate-force");
  r["frames"] = frames;
  r["max_magnitude"] = max_magnitude;
  r["rejected"] = rejected_json(log.rejected);
  r["converged"] = all_converged;
  write_report(a.common.out, r, out);
  return all_converged ? kOk : kNotConverged;
}

struct ServeArgs {
  std::string scene;
  std::string host = "127.0.0.1";
  int port = 8080;
  double rate = 15.0;
};

int serve(const ServeArgs& a, std::ostream& err) {
  ServiceOptions options;
  if (!(a.rate > 0.0)) throw InputError("--rate must be positive");
  options.stream_hz = a.rate;
  SimEngine engine(scene_config(a.scene), options);
  engine.start();
  SimServer server(engine);
  err << "serving on " << a.host << ":" << a.port << "\n";
  const bool ok = server.listen(a.host, a.port);
  engine.stop();
  if (!ok) throw InputError("cannot listen on " + a.host + ":" + std::to_string(a.port));
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Soft manipulator simulation, calibration and inverse control"};
  app.require_subcommand(1);

  SimulateArgs sim;
  CLI::App* sim_cmd = app.add_subcommand("simulate", "Forward static solve at given pressures and forces");
  add_common(sim_cmd, sim.common);
  sim_cmd->add_option("--pressures", sim.pressures, "Commanded chamber pressures, Pa");
  sim_cmd->add_option("--forces", sim.forces, "Force actuator magnitudes, N");

  SynthArgs syn;
  CLI::App* syn_cmd = app.add_subcommand("synth", "Generate a synthetic experiment log from a twin");
  add_common(syn_cmd, syn.common);
  syn_cmd->add_option("--spec", syn.spec, "Scenario spec JSON");
  syn_cmd->add_option("--protocol", syn.protocol, "hold, sweep, random, force_ramp or tethered_ramp");
  syn_cmd->add_option("--seed", syn.seed, "Random seed");
  syn_cmd->add_option("--noise", syn.noise, "Orientation noise, deg per axis");
  syn_cmd->add_option("--truth", syn.truth, "Write twin ground truth JSON here");

  CalibrateArgs cal;
  CLI::App* cal_cmd = app.add_subcommand("calibrate", "Fit calibration factors to a log");
  add_common(cal_cmd, cal.common);
  cal_cmd->add_option("--mode", cal.mode, "pressure or force")
      ->required()
      ->check(CLI::IsMember({"pressure", "force"}));
  cal_cmd->add_option("--data", cal.data, "Frames CSV")->required();
  cal_cmd->add_option("--write-scene", cal.write_scene, "Write the calibrated scene config here");
  cal_cmd->add_option("--max-rounds", cal.options.max_rounds, "Calibration rounds");
  cal_cmd->add_option("--tolerance", cal.options.tolerance, "Relative convergence tolerance");

  ValidateArgs val;
  CLI::App* val_cmd = app.add_subcommand("validate", "Leave-one-out validation against a twin");
  add_common(val_cmd, val.common);
  val_cmd->add_option("--trials", val.options.trials, "Random trials");
  val_cmd->add_option("--seed", val.options.seed, "Random seed");
  val_cmd->add_option("--noise", val.options.noise_deg, "Orientation noise, deg per axis");

  TeachArgs tch;
  CLI::App* tch_cmd = app.add_subcommand("teach", "Estimate pressures for target orientations");
  add_common(tch_cmd, tch.common);
  tch_cmd->add_option("--targets", tch.targets, "JSON with \"orientations\": [[w,x,y,z], ...]")->required();
  tch_cmd->add_flag("--commit", tch.commit, "Ramp to the estimate and report the final pose");
  tch_cmd->add_option("--duration", tch.duration, "Ramp duration, s");
  tch_cmd->add_option("--steps", tch.steps, "Ramp steps");

  EstimateArgs est;
  CLI::App* est_cmd = app.add_subcommand("estimate-force", "Estimate external forces for each logged frame");
  add_common(est_cmd, est.common);
  est_cmd->add_option("--log", est.log, "Frames CSV")->required();
  est_cmd->add_option("--actuators", est.actuators, "Force actuator indices (default: the active ones)");
  est_cmd->add_option("--tolerance", est.tolerance_deg, "Orientation tolerance, deg");

  ServeArgs srv;
  CLI::App* srv_cmd = app.add_subcommand("serve", "Run the live simulation service");
  srv_cmd->add_option("--scene", srv.scene, std::string("Scene config JSON (default: $") + kSceneEnv + ")");
  srv_cmd->add_option("--host", srv.host, "Bind address");
  srv_cmd->add_option("--port", srv.port, "Port");
  srv_cmd->add_option("--rate", srv.rate, "Stream rate, Hz");

  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (app.exit(e, out, err) == 0) return kOk;
    err << app.help();
    return kUsage;
  }

  try {
    if (*sim_cmd) return simulate(sim, out);
    if (*syn_cmd) return synth(syn, out);
    if (*cal_cmd) return calibrate(cal, out, err);
    if (*val_cmd) return validate(val, out);
    if (*tch_cmd) return teach(tch, out);
    if (*est_cmd) return estimate_force(est, out, err);
    if (*srv_cmd) return serve(srv, err);
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const SolverError& e) {
    err << "error: " << e.what() << "\n";
    return kNotConverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace softarm::cli
