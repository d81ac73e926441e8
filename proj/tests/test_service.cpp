#include <chrono>
#include <numbers>
#include <thread>

#include <gtest/gtest.h>

#include "softarm/rotation.hpp"
#include "softarm/service.hpp"

// After Eigen: <resolv.h> defines a _res macro that clashes with Eigen internals.
#include "httplib.h"

namespace softarm {
namespace {

using nlohmann::json;

Mat3 rotation_of(const json& q) {
  return Eigen::Quaterniond(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>())
      .toRotationMatrix();
}

json quat(const Mat3& r) {
  const Eigen::Quaterniond q = to_quaternion(r);
  return {q.w(), q.x(), q.y(), q.z()};
}

bool settled_after(const json& s, std::uint64_t command) {
  return s.at("last_command").get<std::uint64_t>() >= command && s.at("converged").get<bool>();
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    engine = std::make_unique<SimEngine>(SceneConfig{});
    engine->start();
  }
  void TearDown() override { engine->stop(); }

  json submit(const std::string& kind, const json& body) {
    return engine->submit(parse_command(kind, body, engine->prototype()));
  }

  std::unique_ptr<SimEngine> engine;
};

TEST_F(ServiceTest, StartsAtRestWithZeroPressures) {
  const json s = *engine->snapshot();
  EXPECT_EQ(s.at("schema_version"), 1);
  EXPECT_TRUE(s.at("converged").get<bool>());
  for (const auto& p : s.at("pressures").at("commanded")) EXPECT_EQ(p.get<double>(), 0.0);
  Scene batch{SceneConfig{}};
  batch.solve_equilibrium();
  for (int e = 0; e < 2; ++e)
    EXPECT_LT(geodesic_angle(rotation_of(s.at("orientations")[e]), batch.orientation(e)), 1e-12);
  EXPECT_GT(s.at("surface").at("positions").size(), 100u);
}

TEST_F(ServiceTest, SteadyStateMatchesBatchForwardSimulation) {
  const json ack = submit("pressures", {{"pressures", {10e3, 0, 0, 0, 0, 0}}});
  ASSERT_TRUE(ack.at("accepted").get<bool>());
  const auto id = ack.at("command").get<std::uint64_t>();
  ASSERT_TRUE(engine->wait_for([&](const json& s) { return settled_after(s, id); }, 30000));

  Scene batch{SceneConfig{}};
  batch.solve_equilibrium();
  VecX p = VecX::Zero(6);
  p(0) = 10e3;
  batch.set_commanded_pressures(p);
  batch.solve_equilibrium();
  const json s = *engine->snapshot();
  for (int e = 0; e < 2; ++e)
    EXPECT_LT(geodesic_angle(rotation_of(s.at("orientations")[e]), batch.orientation(e)), 1e-6);
  EXPECT_EQ(s.at("pressures").at("commanded")[0], 10e3);
}

TEST_F(ServiceTest, ReadersSeeTheSameGapFreeSequence) {
  const std::uint64_t start = engine->stream_head();
  std::vector<StreamMessage> a, b;
  auto read = [&](std::vector<StreamMessage>& out, std::uint64_t from) {
    std::uint64_t cursor = from;
    while (out.size() < 6) {
      for (const StreamMessage& m : engine->stream_after(cursor, 1000)) {
        out.push_back(m);
        cursor = m.seq;
      }
    }
  };
  std::thread ta([&] { read(a, start); }), tb([&] { read(b, start); });
  submit("pressures", {{"pressures", {0, 20e3, 0, 0, 0, 0}}});
  ta.join();
  tb.join();
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_EQ(a[i].seq, start + 1 + i);
    EXPECT_EQ(a[i].seq, b[i].seq);
    EXPECT_EQ(a[i].text, b[i].text);
  }
}

TEST_F(ServiceTest, StreamRunsNearTheConfiguredRate) {
  const std::uint64_t h0 = engine->stream_head();
  std::this_thread::sleep_for(std::chrono::seconds(2));
  const double rate = (engine->stream_head() - h0) / 2.0;
  EXPECT_GT(rate, 10.0);
  EXPECT_LT(rate, 20.0);
}

TEST_F(ServiceTest, MalformedCommandsAreRejectedBeforeTheSim) {
  const auto before = engine->snapshot();
  EXPECT_THROW(parse_command("pressures", {{"pressures", {1, 2}}}, engine->prototype()), InputError);
  EXPECT_THROW(parse_command("pressures", {{"pressures", {-1, 0, 0, 0, 0, 0}}}, engine->prototype()), InputError);
  EXPECT_THROW(parse_command("targets", {{"orientations", {{0.5, 0, 0, 0}, {1, 0, 0, 0}}}}, engine->prototype()),
               InputError);
  EXPECT_THROW(parse_command("fly", json::object(), engine->prototype()), InputError);
  EXPECT_THROW(parse_command("teach_commit", {{"steps", 0}}, engine->prototype()), InputError);
  EXPECT_THROW(parse_command("disturbance", {{"actuators", {9}}}, engine->prototype()), InputError);
  EXPECT_EQ(engine->snapshot()->at("last_command"), before->at("last_command"));
}

TEST_F(ServiceTest, TeachEstimateCommitAndRamp) {
  EXPECT_EQ(submit("teach_commit", json::object()).at("error").at("code"), "no_estimate");
  Scene twin{SceneConfig{}};
  VecX p(6);
  p << 15e3, 0, 5e3, 0, 25e3, 0;
  twin.set_commanded_pressures(p);
  twin.solve_equilibrium();
  const json targets = {quat(twin.orientation(0)), quat(twin.orientation(1))};
  ASSERT_TRUE(submit("targets", {{"orientations", targets}}).at("accepted").get<bool>());
  const json ack = submit("teach_commit", {{"duration", 0.5}, {"steps", 5}});
  ASSERT_TRUE(ack.at("accepted").get<bool>()) << ack.dump();
  EXPECT_EQ(ack.at("ramp_steps"), 5);
  ASSERT_TRUE(engine->wait_for(
      [&](const json& s) {
        return s.at("teach").contains("ramp") && s.at("teach").at("ramp").at("done").get<bool>() &&
               s.at("converged").get<bool>();
      },
      60000));
  const json s = *engine->snapshot();
  EXPECT_TRUE(s.at("teach").at("estimate").at("reachable").get<bool>());
  for (int e = 0; e < 2; ++e)
    EXPECT_LT(geodesic_angle(rotation_of(s.at("orientations")[e]), twin.orientation(e)) * 180.0 / std::numbers::pi,
              2.0);
}

TEST_F(ServiceTest, UnreachableTargetsRefuseCommit) {
  const Mat3 far = exp_map(Vec3(0, 1.4, 0));
  submit("targets", {{"orientations", {quat(far), quat(far)}}});
  const json ack = submit("teach_commit", json::object());
  EXPECT_FALSE(ack.at("accepted").get<bool>());
  EXPECT_EQ(ack.at("error").at("code"), "unreachable");
  EXPECT_FALSE(engine->snapshot()->at("teach").contains("ramp"));
}

TEST_F(ServiceTest, ZeroDiscrepancyFrameGivesZeroDisturbance) {
  const json s = *engine->snapshot();
  const json ack = submit("disturbance", {{"enabled", true}, {"frame", {{"orientations", s.at("orientations")}}}});
  ASSERT_TRUE(ack.at("accepted").get<bool>());
  ASSERT_TRUE(engine->wait_for([](const json& x) { return x.at("disturbance").contains("magnitude"); }, 30000));
  EXPECT_LE(engine->snapshot()->at("disturbance").at("magnitude").get<double>(), 1e-3);
}

TEST_F(ServiceTest, CommandsFromBeforeAResetAreStale) {
  const auto step = engine->snapshot()->at("step").get<std::uint64_t>();
  ASSERT_TRUE(submit("reset", json::object()).at("accepted").get<bool>());
  const json ack = submit("pressures", {{"pressures", {1e3, 0, 0, 0, 0, 0}}, {"against_step", step}});
  EXPECT_EQ(ack.at("error").at("code"), "stale");
  EXPECT_EQ(engine->snapshot()->at("pressures").at("commanded")[0], 0.0);
}

TEST_F(ServiceTest, HttpRoutesAndEventStream) {
  SimServer server(*engine);
  const int port = server.start("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  httplib::Client client("127.0.0.1", port);

  auto state = client.Get("/state");
  ASSERT_TRUE(state);
  EXPECT_EQ(state->status, 200);
  EXPECT_EQ(json::parse(state->body).at("type"), "snapshot");
  auto surface = client.Get("/surface");
  ASSERT_TRUE(surface);
  EXPECT_GT(json::parse(surface->body).at("triangles").size(), 100u);

  auto bad = client.Post("/pressures", "{not json", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(json::parse(bad->body).at("error").at("code"), "invalid_json");
  bad = client.Post("/pressures", R"({"pressures": [1e6, 0, 0, 0, 0, 0]})", "application/json");
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(json::parse(bad->body).at("error").at("code"), "invalid_command");
  auto refused = client.Post("/teach/commit", "{}", "application/json");
  EXPECT_EQ(refused->status, 409);
  auto ok = client.Post("/pressures", R"({"pressures": [0, 0, 5000, 0, 0, 0]})", "application/json");
  EXPECT_EQ(ok->status, 200);
  EXPECT_TRUE(json::parse(ok->body).at("accepted").get<bool>());

  // Two stream clients: every event id they share carries the same payload.
  auto collect = [&](std::vector<std::pair<std::uint64_t, std::string>>& events) {
    httplib::Client c("127.0.0.1", port);
    std::string buffer;
    c.Get("/stream", [&](const char* data, std::size_t len) {
      buffer.append(data, len);
      std::size_t end;
      while ((end = buffer.find("\n\n")) != std::string::npos) {
        const std::string block = buffer.substr(0, end);
        buffer.erase(0, end + 2);
        const std::size_t event = block.find("\nevent: snapshot\ndata: ");
        if (block.rfind("id: ", 0) == 0 && event != std::string::npos)
          events.emplace_back(std::stoull(block.substr(4, event - 4)), block.substr(event + 23));
      }
      return events.size() < 8;
    });
  };
  std::vector<std::pair<std::uint64_t, std::string>> a, b;
  std::thread ta([&] { collect(a); }), tb([&] { collect(b); });
  ta.join();
  tb.join();
  ASSERT_GE(a.size(), 8u);
  ASSERT_GE(b.size(), 8u);
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_EQ(a[i].first, a[i - 1].first + 1);
  int shared = 0;
  for (const auto& [id, text] : a)
    for (const auto& [id2, text2] : b)
      if (id == id2) {
        EXPECT_EQ(text, text2);
        ++shared;
      }
  EXPECT_GT(shared, 0);
  EXPECT_EQ(json::parse(a.back().second).at("seq"), a.back().first);
  server.stop();
}

}  // namespace
}  // namespace softarm
