#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "softarm/scenarios.hpp"

namespace httplib {
class Server;
}

namespace softarm {

struct ServiceOptions {
  double stream_hz = 15.0;
  int surface_stride = 2;        // every n-th outer-surface vertex in snapshots
  std::size_t stream_backlog = 512;  // messages kept for slow stream readers
};

// A command as accepted from a client. Validation happens on parse, so a
// malformed payload never reaches the sim thread.
struct Command {
  enum class Kind { kSetPressures, kSetTargets, kSetDisturbance, kTeachCommit, kReset };
  Kind kind = Kind::kReset;
  std::optional<std::uint64_t> against_step;  // snapshot step the client acted on
  VecX pressures;                            // commanded, Pa
  std::vector<Mat3> targets;
  bool enabled = false;
  std::vector<int> actuators;
  std::optional<SensorFrame> frame;
  double duration = 2.0;
  int steps = 20;
};

// Throws InputError with a message suitable for the client.
Command parse_command(const std::string& kind, const nlohmann::json& body, const Scene& scene);

struct StreamMessage {
  std::uint64_t seq = 0;
  std::string text;  // serialized once, shared by every reader
};

// Simulation engine: one sim thread owns the scene; clients talk to it by
// queueing commands, which are applied FIFO between sim steps. Each sim
// step publishes an immutable snapshot; a stream thread decimates the
// snapshots to a fixed rate and appends them to a shared message log.
class SimEngine {
 public:
  SimEngine(const SceneConfig& config, ServiceOptions options = {});
  ~SimEngine();
  SimEngine(const SimEngine&) = delete;
  SimEngine& operator=(const SimEngine&) = delete;

  // Solves the rest equilibrium, then starts the sim and stream threads.
  void start();
  void stop();
  bool running() const { return running_; }

  // Queues a command and waits for its acknowledgment from the sim thread.
  nlohmann::json submit(Command command);

  std::shared_ptr<const nlohmann::json> snapshot() const;
  // Snapshot of the outer surface topology (static).
  nlohmann::json surface() const;
  const Scene& prototype() const { return *prototype_; }

  // Messages with seq > after, waiting up to `timeout_ms` for the first one.
  // Sets `dropped` if the reader fell behind the backlog.
  std::vector<StreamMessage> stream_after(std::uint64_t after, int timeout_ms, bool* dropped = nullptr);
  std::uint64_t stream_head() const;

  // Blocks until a snapshot satisfies `done` or the timeout passes.
  bool wait_for(const std::function<bool(const nlohmann::json&)>& done, int timeout_ms) const;

 private:
  struct Pending {
    std::uint64_t id;
    Command command;
    std::promise<nlohmann::json> ack;
  };
  struct Live;

  void sim_loop();
  void stream_loop();
  nlohmann::json apply(Live& live, Pending& p);
  bool work(Live& live);
  void publish(const Live& live);

  ServiceOptions options_;
  std::unique_ptr<Scene> prototype_;
  std::vector<int> surface_nodes_;

  std::atomic<bool> running_{false};
  std::thread sim_thread_, stream_thread_;

  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::deque<Pending> queue_;
  std::uint64_t next_command_ = 1;

  mutable std::mutex snapshot_mutex_;
  mutable std::condition_variable snapshot_cv_;
  std::shared_ptr<const nlohmann::json> snapshot_;

  mutable std::mutex stream_mutex_;
  std::condition_variable stream_cv_;
  std::deque<StreamMessage> stream_;
  std::uint64_t stream_seq_ = 0;

  std::unique_ptr<Live> live_;
};

// HTTP front end over a SimEngine. Routes:
//   GET  /state, GET /surface, GET /stream (server-sent events)
//   POST /pressures, /targets, /disturbance, /teach/commit, /reset
class SimServer {
 public:
  explicit SimServer(SimEngine& engine);
  ~SimServer();

  // Binds to `port` (0 picks a free one) and serves on a background thread.
  int start(const std::string& host, int port);
  void stop();
  // Serves on the calling thread until stop().
  bool listen(const std::string& host, int port);

 private:
  void routes();

  SimEngine& engine_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace softarm
