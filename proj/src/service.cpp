#include "softarm/service.hpp"

#include <chrono>
#include <cmath>
#include <functional>

// After Eigen: <resolv.h> defines a _res macro that clashes with Eigen internals.
#include "httplib.h"

namespace softarm {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

json quat_json(const Eigen::Quaterniond& q) { return {q.w(), q.x(), q.y(), q.z()}; }
json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
json vec_json(const VecX& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Mat3 rotation_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw InputError("orientations are [w, x, y, z] quaternions");
  const Eigen::Quaterniond q(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
  if (!std::isfinite(q.norm()) || std::abs(q.norm() - 1.0) > 1e-3)
    throw InputError("quaternion norm differs from 1 by more than 1e-3");
  return q.normalized().toRotationMatrix();
}

std::vector<Mat3> rotations_from(const json& j, int effectors) {
  if (!j.is_array() || static_cast<int>(j.size()) != effectors)
    throw InputError("expected " + std::to_string(effectors) + " orientations");
  std::vector<Mat3> out;
  for (const auto& q : j) out.push_back(rotation_from(q));
  return out;
}

VecX pressures_from(const json& j, const Scene& scene) {
  if (!j.is_array() || static_cast<int>(j.size()) != scene.chamber_count())
    throw InputError("expected " + std::to_string(scene.chamber_count()) + " pressures");
  VecX p(scene.chamber_count());
  for (int i = 0; i < p.size(); ++i) {
    p(i) = j[i].get<double>();
    if (!(p(i) >= 0.0 && p(i) <= scene.pressure_limit()))
      throw InputError("pressure " + std::to_string(i + 1) + " outside [0, p_max]");
  }
  return p;
}

json error_json(const std::string& code, const std::string& message) {
  return {{"accepted", false}, {"error", {{"code", code}, {"message", message}}}};
}

std::string kind_name(Command::Kind k) {
  switch (k) {
    case Command::Kind::kSetPressures:
      return "pressures";
    case Command::Kind::kSetTargets:
      return "targets";
    case Command::Kind::kSetDisturbance:
      return "disturbance";
    case Command::Kind::kTeachCommit:
      return "teach_commit";
    case Command::Kind::kReset:
      return "reset";
  }
  return "reset";
}

}  // namespace

Command parse_command(const std::string& kind, const json& body, const Scene& scene) {
  Command c;
  try {
    if (!body.is_object()) throw InputError("command body must be a JSON object");
    if (body.contains("against_step")) c.against_step = body.at("against_step").get<std::uint64_t>();
    if (kind == "pressures") {
      c.kind = Command::Kind::kSetPressures;
      c.pressures = pressures_from(body.at("pressures"), scene);
    } else if (kind == "targets") {
      c.kind = Command::Kind::kSetTargets;
      c.targets = rotations_from(body.at("orientations"), scene.effector_count());
    } else if (kind == "disturbance") {
      c.kind = Command::Kind::kSetDisturbance;
      c.enabled = body.value("enabled", true);
      c.actuators = body.value("actuators", std::vector<int>{});
      for (int a : c.actuators)
        if (a < 0 || a >= scene.force_count()) throw InputError("force actuator index out of range");
      if (body.contains("frame")) {
        const json& f = body.at("frame");
        SensorFrame frame;
        frame.pressures = f.contains("pressures") ? pressures_from(f.at("pressures"), scene)
                                                  : VecX(VecX::Zero(scene.chamber_count()));
        frame.orientations.clear();
        for (const Mat3& r : rotations_from(f.at("orientations"), scene.effector_count()))
          frame.orientations.push_back(to_quaternion(r));
        c.frame = frame;
      }
    } else if (kind == "teach_commit") {
      c.kind = Command::Kind::kTeachCommit;
      c.duration = body.value("duration", c.duration);
      c.steps = body.value("steps", c.steps);
      if (!(c.duration > 0.0) || c.steps < 1) throw InputError("ramp needs a positive duration and step count");
    } else if (kind == "reset") {
      c.kind = Command::Kind::kReset;
    } else {
      throw InputError("unknown command '" + kind + "'");
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed command: ") + e.what());
  }
  return c;
}

// State owned by the sim thread.
struct SimEngine::Live {
  explicit Live(const Scene& prototype) : arm(prototype), teach_scene(prototype), observer(prototype) {}

  Scene arm;
  Scene teach_scene;  // warm-started teach estimates
  Scene observer;     // warm-started disturbance estimates
  VecX commanded;
  bool dirty = true;
  bool converged = false;
  double residual = 0.0;
  std::string error;
  std::uint64_t step = 0;
  std::uint64_t last_command = 0;
  std::uint64_t reset_step = 0;
  Clock::time_point t0 = Clock::now();

  TeachState teach;
  bool teach_dirty = false;
  std::optional<RampSchedule> ramp;
  std::size_t ramp_index = 0;
  Clock::time_point ramp_start;

  bool disturbance_enabled = false;
  std::vector<int> actuators;
  std::optional<SensorFrame> frame;
  bool disturbance_dirty = false;
  std::optional<DisturbanceEstimate> disturbance;
};

SimEngine::SimEngine(const SceneConfig& config, ServiceOptions options)
    : options_(options), prototype_(std::make_unique<Scene>(config)) {
  if (!(options_.stream_hz > 0.0)) throw InputError("stream rate must be positive");
  if (options_.surface_stride < 1) throw InputError("surface stride must be positive");
  const std::vector<int> nodes = prototype_->layout().outer_surface.vertex_nodes();
  for (std::size_t i = 0; i < nodes.size(); i += options_.surface_stride) surface_nodes_.push_back(nodes[i]);
}

SimEngine::~SimEngine() { stop(); }

void SimEngine::start() {
  if (running_) return;
  live_ = std::make_unique<Live>(*prototype_);
  live_->commanded = VecX::Zero(prototype_->chamber_count());
  live_->arm.solve_equilibrium();
  live_->converged = true;
  live_->dirty = false;
  live_->residual = live_->arm.residual_norm();
  publish(*live_);
  running_ = true;
  sim_thread_ = std::thread([this] { sim_loop(); });
  stream_thread_ = std::thread([this] { stream_loop(); });
}

void SimEngine::stop() {
  if (!running_.exchange(false)) return;
  queue_cv_.notify_all();
  stream_cv_.notify_all();
  if (sim_thread_.joinable()) sim_thread_.join();
  if (stream_thread_.joinable()) stream_thread_.join();
  std::lock_guard lock(queue_mutex_);
  for (Pending& p : queue_) p.ack.set_value(error_json("stopped", "service is shutting down"));
  queue_.clear();
}

json SimEngine::submit(Command command) {
  std::future<json> ack;
  {
    std::lock_guard lock(queue_mutex_);
    if (!running_) return error_json("stopped", "service is not running");
    Pending p{next_command_++, std::move(command), {}};
    ack = p.ack.get_future();
    queue_.push_back(std::move(p));
  }
  queue_cv_.notify_all();
  return ack.get();
}

std::shared_ptr<const json> SimEngine::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return snapshot_;
}

bool SimEngine::wait_for(const std::function<bool(const json&)>& done, int timeout_ms) const {
  std::unique_lock lock(snapshot_mutex_);
  return snapshot_cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                               [&] { return snapshot_ && done(*snapshot_); });
}

json SimEngine::surface() const {
  const SurfaceMesh& s = prototype_->layout().outer_surface;
  json tris = json::array();
  for (const auto& t : s.triangles) tris.push_back({t[0], t[1], t[2]});
  return {{"schema_version", 1}, {"triangles", tris}, {"snapshot_nodes", surface_nodes_}};
}

std::uint64_t SimEngine::stream_head() const {
  std::lock_guard lock(stream_mutex_);
  return stream_seq_;
}

std::vector<StreamMessage> SimEngine::stream_after(std::uint64_t after, int timeout_ms, bool* dropped) {
  std::unique_lock lock(stream_mutex_);
  stream_cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms), [&] { return stream_seq_ > after || !running_; });
  std::vector<StreamMessage> out;
  if (dropped) *dropped = !stream_.empty() && stream_.front().seq > after + 1 && after != 0;
  for (const StreamMessage& m : stream_)
    if (m.seq > after) out.push_back(m);
  return out;
}

void SimEngine::sim_loop() {
  Live& live = *live_;
  while (running_) {
    std::deque<Pending> batch;
    {
      std::lock_guard lock(queue_mutex_);
      batch.swap(queue_);
    }
    bool changed = false;
    for (Pending& p : batch) {
      json ack;
      try {
        ack = apply(live, p);
      } catch (const Error& e) {
        ack = error_json("failed", e.what());
      }
      live.last_command = p.id;
      changed = true;
      p.ack.set_value(ack);
    }
    bool worked = false;
    try {
      worked = work(live);
    } catch (const Error& e) {
      live.error = e.what();
      worked = true;
    }
    if (changed || worked) {
      ++live.step;
      publish(live);
      continue;
    }
    std::unique_lock lock(queue_mutex_);
    queue_cv_.wait_for(lock, std::chrono::milliseconds(10), [&] { return !queue_.empty() || !running_; });
  }
}

json SimEngine::apply(Live& live, Pending& p) {
  const Command& c = p.command;
  if (c.against_step && *c.against_step < live.reset_step)
    return error_json("stale", "command was issued against a snapshot from before the last reset");
  json ack = {{"accepted", true}, {"command", p.id}, {"kind", kind_name(c.kind)}};
  switch (c.kind) {
    case Command::Kind::kSetPressures:
      live.ramp.reset();
      live.commanded = c.pressures;
      live.arm.set_commanded_pressures(c.pressures);
      live.dirty = true;
      live.error.clear();
      break;
    case Command::Kind::kSetTargets:
      live.teach.targets = c.targets;
      live.teach.committed = false;
      live.teach_dirty = true;
      break;
    case Command::Kind::kSetDisturbance:
      live.disturbance_enabled = c.enabled;
      live.actuators = c.actuators;
      if (c.frame) live.frame = c.frame;
      live.disturbance_dirty = c.enabled && live.frame.has_value();
      if (!c.enabled) live.disturbance.reset();
      break;
    case Command::Kind::kTeachCommit: {
      if (live.teach_dirty) work(live);  // make sure the estimate matches the latest targets
      if (!live.teach.estimate) return error_json("no_estimate", "no teach estimate to commit");
      if (!live.teach.estimate->reachable())
        return error_json("unreachable", "teach estimate is flagged unreachable; commit refused");
      live.teach.current = live.commanded;
      const RampSchedule ramp = teach_commit(live.teach, live.arm.pressure_limit(), c.duration, c.steps);
      live.ramp = ramp;
      live.ramp_index = 0;
      live.ramp_start = Clock::now();
      ack["ramp_steps"] = ramp.commanded.size();
      break;
    }
    case Command::Kind::kReset:
      live.arm.set_efforts(VecX::Zero(live.arm.effort_count()));
      live.arm.reset();
      live.teach_scene.set_efforts(VecX::Zero(live.arm.effort_count()));
      live.teach_scene.reset();
      live.observer.set_efforts(VecX::Zero(live.arm.effort_count()));
      live.observer.reset();
      live.commanded.setZero();
      live.teach = TeachState{};
      live.teach_dirty = false;
      live.ramp.reset();
      live.disturbance_enabled = false;
      live.disturbance_dirty = false;
      live.frame.reset();
      live.disturbance.reset();
      live.error.clear();
      live.dirty = true;
      live.reset_step = live.step + 1;
      break;
  }
  ack["step"] = live.step + 1;
  return ack;
}

bool SimEngine::work(Live& live) {
  if (live.ramp && live.ramp_index < live.ramp->commanded.size()) {
    const double elapsed = std::chrono::duration<double>(Clock::now() - live.ramp_start).count();
    bool advanced = false;
    while (live.ramp_index < live.ramp->commanded.size() && elapsed >= live.ramp->times[live.ramp_index]) {
      live.commanded = live.ramp->commanded[live.ramp_index++];
      advanced = true;
    }
    if (advanced) {
      live.arm.set_commanded_pressures(live.commanded);
      live.dirty = true;
    }
  }
  if (live.dirty) {
    try {
      const StepReport r = live.arm.static_step();
      live.residual = r.residual_after;
      live.converged = r.converged;
      if (r.converged) live.dirty = false;
    } catch (const ConvergenceError& e) {
      live.error = e.what();
      live.converged = false;
      live.dirty = false;
    }
    return true;
  }
  if (live.teach_dirty) {
    live.teach_dirty = false;
    live.teach.estimate = teach_step(live.teach_scene, live.teach.targets);
    return true;
  }
  if (live.disturbance_dirty) {
    live.disturbance_dirty = false;
    DisturbanceOptions o;
    o.actuators = live.actuators;
    live.disturbance = estimate_disturbance(live.observer, *live.frame, o);
    return true;
  }
  return false;
}

void SimEngine::publish(const Live& live) {
  const Scene& arm = live.arm;
  json orient = json::array(), points = json::array();
  for (int e = 0; e < arm.effector_count(); ++e) {
    orient.push_back(quat_json(to_quaternion(arm.orientation(e))));
    points.push_back(vec_json(arm.effector_position(e)));
  }
  std::vector<double> surface;
  surface.reserve(3 * surface_nodes_.size());
  for (int n : surface_nodes_)
    for (int k = 0; k < 3; ++k) surface.push_back(arm.state().q(3 * n + k));

  json teach = {{"active", !live.teach.targets.empty()}, {"committed", live.teach.committed}};
  if (live.teach.estimate) {
    const TeachEstimate& t = *live.teach.estimate;
    teach["estimate"] = {{"pressures", vec_json(t.commanded)},
                         {"residual_deg", t.residual_deg},
                         {"reachable", t.reachable()},
                         {"saturated", t.saturated},
                         {"iterations", t.iterations}};
  } else {
    teach["estimate"] = nullptr;
  }
  if (live.ramp)
    teach["ramp"] = {{"step", live.ramp_index},
                     {"steps", live.ramp->commanded.size()},
                     {"done", live.ramp_index >= live.ramp->commanded.size()}};

  json dist = {{"enabled", live.disturbance_enabled}};
  if (live.disturbance) {
    const DisturbanceEstimate& d = *live.disturbance;
    json world = json::array();
    for (const Vec3& w : d.world) world.push_back(vec_json(w));
    dist["forces"] = vec_json(d.forces);
    dist["world"] = world;
    dist["total"] = vec_json(d.total);
    dist["magnitude"] = d.magnitude;
    dist["residual_deg"] = d.residual_deg;
    dist["converged"] = d.converged;
  }

  auto snap = std::make_shared<json>(json{
      {"schema_version", 1},
      {"type", "snapshot"},
      {"step", live.step},
      {"time", std::chrono::duration<double>(Clock::now() - live.t0).count()},
      {"last_command", live.last_command},
      {"reset_step", live.reset_step},
      {"converged", live.converged && !live.dirty},
      {"residual", live.residual},
      {"error", live.error.empty() ? json(nullptr) : json(live.error)},
      {"pressures", {{"commanded", vec_json(live.commanded)}, {"simulated", vec_json(arm.pressures())}}},
      {"orientations", orient},
      {"effector_positions", points},
      {"surface", {{"stride", options_.surface_stride}, {"positions", surface}}},
      {"teach", teach},
      {"disturbance", dist}});
  {
    std::lock_guard lock(snapshot_mutex_);
    snapshot_ = std::move(snap);
  }
  snapshot_cv_.notify_all();
}

void SimEngine::stream_loop() {
  const auto period = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(1.0 / options_.stream_hz));
  auto next = Clock::now();
  while (running_) {
    const std::shared_ptr<const json> snap = snapshot();
    {
      std::lock_guard lock(stream_mutex_);
      StreamMessage m;
      m.seq = ++stream_seq_;
      m.text = json{{"seq", m.seq}, {"snapshot", *snap}}.dump();
      stream_.push_back(std::move(m));
      while (stream_.size() > options_.stream_backlog) stream_.pop_front();
    }
    stream_cv_.notify_all();
    next += period;
    std::unique_lock lock(queue_mutex_);
    queue_cv_.wait_until(lock, next, [&] { return !running_; });
  }
}

// --- HTTP -------------------------------------------------------------------------

SimServer::SimServer(SimEngine& engine) : engine_(engine), server_(std::make_unique<httplib::Server>()) { routes(); }

SimServer::~SimServer() { stop(); }

void SimServer::routes() {
  auto send = [](httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };
  server_->Get("/state", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, 200, *engine_.snapshot());
  });
  server_->Get("/surface", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, 200, engine_.surface());
  });
  auto command = [this, send](const std::string& kind) {
    return [this, send, kind](const httplib::Request& req, httplib::Response& res) {
      Command c;
      try {
        const json body = req.body.empty() ? json::object() : json::parse(req.body);
        c = parse_command(kind, body, engine_.prototype());
      } catch (const json::parse_error& e) {
        send(res, 400, error_json("invalid_json", e.what()));
        return;
      } catch (const InputError& e) {
        send(res, 400, error_json("invalid_command", e.what()));
        return;
      }
      const json ack = engine_.submit(std::move(c));
      int status = 200;
      if (!ack.value("accepted", false)) {
        const std::string code = ack.at("error").at("code");
        status = code == "stale" || code == "unreachable" || code == "no_estimate" ? 409 : 503;
        if (code == "failed") status = 422;
      }
      send(res, status, ack);
    };
  };
  server_->Post("/pressures", command("pressures"));
  server_->Post("/targets", command("targets"));
  server_->Post("/disturbance", command("disturbance"));
  server_->Post("/teach/commit", command("teach_commit"));
  server_->Post("/reset", command("reset"));
  server_->Get("/stream", [this](const httplib::Request&, httplib::Response& res) {
    // Each connection starts at the newest message and then sees every
    // later one in order.
    auto cursor = std::make_shared<std::uint64_t>(engine_.stream_head() > 0 ? engine_.stream_head() - 1 : 0);
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider("text/event-stream", [this, cursor](std::size_t, httplib::DataSink& sink) {
      if (!engine_.running()) {
        sink.done();
        return true;
      }
      bool dropped = false;
      const std::vector<StreamMessage> batch = engine_.stream_after(*cursor, 200, &dropped);
      if (dropped) {
        // The reader fell behind the backlog; end the stream rather than skip.
        sink.done();
        return true;
      }
      for (const StreamMessage& m : batch) {
        const std::string frame = "id: " + std::to_string(m.seq) + "\nevent: snapshot\ndata: " + m.text + "\n\n";
        if (!sink.write(frame.data(), frame.size())) return false;
        *cursor = m.seq;
      }
      return true;
    });
  });
}

int SimServer::start(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw InputError("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

bool SimServer::listen(const std::string& host, int port) { return server_->listen(host, port); }

void SimServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace softarm
