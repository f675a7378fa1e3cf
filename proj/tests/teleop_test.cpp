#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>

#include "uniforce/teleop.hpp"

using namespace uniforce;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("uniforce_teleop_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Inbound text(ClientId c, const ClientMessage& m) { return {Inbound::Kind::Text, c, encode(m)}; }
Inbound raw(ClientId c, std::string s) { return {Inbound::Kind::Text, c, std::move(s)}; }
Inbound connected(ClientId c) { return {Inbound::Kind::Connected, c, {}}; }

ClientMessage msg(ClientMessageType type, std::uint64_t seq) {
  ClientMessage m;
  m.type = type;
  m.seq = seq;
  return m;
}

ClientMessage set_command(std::uint64_t seq, const Vec3& x, const Vec3& F = Vec3::Zero()) {
  ClientMessage m = msg(ClientMessageType::SetCommand, seq);
  m.cmd.x_ee_cmd = x;
  m.cmd.F_ee_cmd = F;
  return m;
}

std::vector<ServerMessage> replies(OutboxQueue& out, ServerMessageType type) {
  std::vector<ServerMessage> r;
  for (auto& o : out.drain())
    if (o.msg.type == type) r.push_back(o.msg);
  return r;
}

SceneSpec wall_scene() {
  SceneSpec s;
  s.env = Wall{};
  s.label = "wall";
  return s;
}

struct Harness {
  explicit Harness(fs::path dir = ".", SceneSpec scene = wall_scene(), std::uint64_t seed = 3)
      : outbox(4096), loop(std::move(scene), seed, LoopConfig{{}, {}, std::move(dir), nullptr, {}}, outbox) {}

  // Connects client 1 and gives it the lease.
  void lease(ClientId c = 1) {
    loop.tick({connected(c), text(c, msg(ClientMessageType::AcquireLease, 1))});
    outbox.drain();
  }

  OutboxQueue outbox;
  ControlLoop loop;
};

}  // namespace

TEST(Teleop, LastCommandInBurstWins) {
  Harness h;
  h.lease();
  std::vector<Inbound> burst;
  for (std::uint64_t i = 0; i < 100; ++i) burst.push_back(text(1, set_command(10 + i, Vec3(0.45, 0.001 * i, 0.0))));
  h.loop.tick(burst);
  EXPECT_EQ(h.loop.applied_seq(), 109u);
  EXPECT_NEAR(h.loop.command().x_ee_cmd.y(), 0.099, 1e-12);
  const auto updates = replies(h.outbox, ServerMessageType::StateUpdate);
  ASSERT_EQ(updates.size(), 1u);
  EXPECT_EQ(updates[0].update.applied_seq, 109u);
  EXPECT_NEAR(updates[0].update.cmd.x_ee_cmd.y(), 0.099, 1e-12);
}

TEST(Teleop, PingGetsPong) {
  Harness h;
  h.loop.tick({connected(5), text(5, msg(ClientMessageType::Ping, 42))});
  const auto out = h.outbox.drain();
  ASSERT_GE(out.size(), 2u);
  EXPECT_EQ(out[0].target, 5u);
  EXPECT_EQ(out[0].msg.type, ServerMessageType::Pong);
  EXPECT_EQ(out[0].msg.ack, 42u);
  EXPECT_EQ(out[1].target, kBroadcast);
}

TEST(Teleop, MalformedInputKeepsRunning) {
  Harness h;
  h.lease();
  const std::vector<std::string> bad{"not json", "[]", R"({"type":"Bogus","seq":2})", R"({"type":"Ping"})",
                                     R"({"type":"SetCommand","seq":3})",
                                     R"({"type":"SetCommand","seq":4,"cmd":{"x_ee_cmd":"far"}})"};
  for (const auto& s : bad) {
    EXPECT_EQ(h.loop.tick({raw(1, s)}), ControlLoop::Status::Running) << s;
    const auto errors = replies(h.outbox, ServerMessageType::Error);
    ASSERT_EQ(errors.size(), 1u) << s;
    EXPECT_EQ(errors[0].error_code, ErrorCode::MalformedMessage) << s;
  }
  h.loop.tick({text(1, msg(ClientMessageType::Ping, 5))});
  EXPECT_EQ(replies(h.outbox, ServerMessageType::Pong).size(), 1u);
}

TEST(Teleop, SequenceMustIncrease) {
  Harness h;
  h.loop.tick({connected(1), text(1, msg(ClientMessageType::Ping, 7)), text(1, msg(ClientMessageType::Ping, 7)),
               text(1, msg(ClientMessageType::Ping, 3))});
  const auto out = h.outbox.drain();
  ASSERT_GE(out.size(), 3u);
  EXPECT_EQ(out[0].msg.type, ServerMessageType::Pong);
  EXPECT_EQ(out[1].msg.type, ServerMessageType::Error);
  EXPECT_EQ(out[1].msg.ack, 7u);
  EXPECT_EQ(out[2].msg.type, ServerMessageType::Error);
  EXPECT_EQ(out[2].msg.ack, 3u);
  h.loop.tick({text(1, msg(ClientMessageType::Ping, 8))});
  EXPECT_EQ(replies(h.outbox, ServerMessageType::Pong).size(), 1u);
  // each client has its own counter
  h.loop.tick({connected(2), text(2, msg(ClientMessageType::Ping, 1))});
  EXPECT_EQ(replies(h.outbox, ServerMessageType::Pong).size(), 1u);
}

TEST(Teleop, Lease) {
  Harness h;
  h.loop.tick({connected(1), connected(2), text(2, set_command(1, Vec3(0.4, 0, 0)))});
  auto errors = replies(h.outbox, ServerMessageType::Error);
  ASSERT_EQ(errors.size(), 1u);
  EXPECT_EQ(errors[0].error_code, ErrorCode::NotLeaseHolder);

  h.loop.tick({text(1, msg(ClientMessageType::AcquireLease, 1)), text(2, msg(ClientMessageType::AcquireLease, 2))});
  const auto out = h.outbox.drain();
  ASSERT_GE(out.size(), 2u);
  EXPECT_EQ(out[0].msg.type, ServerMessageType::LeaseStatus);
  EXPECT_TRUE(out[0].msg.lease_granted);
  EXPECT_EQ(out[1].msg.type, ServerMessageType::Error);
  EXPECT_EQ(out[1].msg.error_code, ErrorCode::LeaseHeld);
  EXPECT_EQ(h.loop.lease_holder(), std::optional<ClientId>(1));

  // a disconnect frees the lease
  h.loop.tick({{Inbound::Kind::Disconnected, 1, {}}, text(2, msg(ClientMessageType::AcquireLease, 3))});
  EXPECT_EQ(h.loop.lease_holder(), std::optional<ClientId>(2));
}

TEST(Teleop, StopWithoutStart) {
  Harness h;
  h.lease();
  h.loop.tick({text(1, msg(ClientMessageType::StopRecording, 2))});
  const auto errors = replies(h.outbox, ServerMessageType::Error);
  ASSERT_EQ(errors.size(), 1u);
  EXPECT_EQ(errors[0].error_code, ErrorCode::RecordingNotActive);
}

TEST(Teleop, DoubleStart) {
  const fs::path dir = scratch_dir("double");
  Harness h(dir);
  h.lease();
  ClientMessage start = msg(ClientMessageType::StartRecording, 2);
  start.task = "wall";
  h.loop.tick({text(1, start)});
  start.seq = 3;
  h.loop.tick({text(1, start)});
  const auto errors = replies(h.outbox, ServerMessageType::Error);
  ASSERT_EQ(errors.size(), 1u);
  EXPECT_EQ(errors[0].error_code, ErrorCode::RecordingAlreadyActive);
  fs::remove_all(dir);
}

namespace {

// Start in tick 1, `plain` further ticks, stop in the last tick.
RecordingAck record_session(const fs::path& dir, int plain, std::uint64_t seed = 3) {
  Harness h(dir, wall_scene(), seed);
  h.lease();
  ClientMessage mode = msg(ClientMessageType::SetMode, 2);
  mode.mode = ControlMode::force();
  ClientMessage start = msg(ClientMessageType::StartRecording, 3);
  start.task = "wall";
  h.loop.tick({text(1, set_command(1 + 1, Vec3(0.62, 0.0, 0.0), Vec3(10, 0, 0))), text(1, mode)});
  h.loop.tick({text(1, start)});
  std::uint64_t seq = 4;
  for (int i = 0; i < plain; ++i)
    h.loop.tick({text(1, set_command(seq++, Vec3(0.62, 0.002 * i, 0.0), Vec3(10 + 0.1 * i, 0, 0)))});
  h.loop.tick({text(1, msg(ClientMessageType::StopRecording, seq))});
  const auto acks = replies(h.outbox, ServerMessageType::RecordingAck);
  EXPECT_EQ(acks.size(), 2u);
  return acks.back().recording;
}

}  // namespace

TEST(Teleop, StartThreeTicksStop) {
  const fs::path dir = scratch_dir("three");
  const RecordingAck ack = record_session(dir, 2);
  EXPECT_EQ(ack.frames, 3u);
  EXPECT_EQ(load_episode(ack.path).frames.size(), 3u);
  fs::remove_all(dir);
}

TEST(Teleop, RecordedEpisodeReplaysExactly) {
  const fs::path dir = scratch_dir("replay");
  const RecordingAck ack = record_session(dir, 60);
  const EpisodeRecord rec = load_episode(ack.path);
  EXPECT_EQ(rec.frames.size(), 61u);
  EXPECT_FALSE(rec.header.prefix.empty());
  EXPECT_GT(rec.frames.back().state.contact_force.norm(), 1.0);
  const ReplayReport r = replay(rec);
  EXPECT_LT(r.max_deviation, 1e-9);
  fs::remove_all(dir);
}

TEST(Teleop, IdenticalSessionsGiveIdenticalEpisodes) {
  const fs::path a = scratch_dir("same_a"), b = scratch_dir("same_b");
  const RecordingAck x = record_session(a, 20), y = record_session(b, 20);
  EXPECT_EQ(x.episode_id, y.episode_id);
  EpisodeRecord ra = load_episode(x.path), rb = load_episode(y.path);
  ra.header.timestamp = rb.header.timestamp = "";
  EXPECT_EQ(to_jsonl(ra), to_jsonl(rb));
  EXPECT_NE(record_session(a, 20, 4).episode_id, x.episode_id);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Teleop, HeadlessWithoutClients) {
  Harness h;
  for (int i = 0; i < 100; ++i) ASSERT_EQ(h.loop.tick({}), ControlLoop::Status::Running);
  EXPECT_NEAR(h.loop.session().state().t, 2.0, 1e-9);
  EXPECT_EQ(replies(h.outbox, ServerMessageType::StateUpdate).size(), 100u);
  EXPECT_FALSE(h.loop.lease_holder().has_value());
}

TEST(Teleop, RunLoopHonoursTickLimit) {
  OutboxQueue out(16);
  InboxQueue in;
  ControlLoop loop(wall_scene(), 1, LoopConfig{}, out);
  std::stop_source stop;
  EXPECT_EQ(run_loop(loop, in, stop.get_token(), 250, false), ControlLoop::Status::Running);
  EXPECT_EQ(loop.session().state().tick, 250u);
  EXPECT_EQ(out.size(), 16u);
  EXPECT_EQ(out.dropped(), 234u);
}

TEST(Teleop, CommandsAreClamped) {
  Harness h;
  h.lease();
  h.loop.tick({text(1, set_command(2, Vec3(5.0, 0, 0), Vec3(500, -500, 0)))});
  const CommandRanges r;
  EXPECT_NEAR(h.loop.command().x_ee_cmd.norm(), r.r.hi, 1e-12);
  EXPECT_EQ(h.loop.command().F_ee_cmd, Vec3(r.F_ee.hi, r.F_ee.lo, 0.0));
}

TEST(Outbox, DropsOldestStateUpdateOnly) {
  OutboxQueue q(3);
  const auto update = [](std::uint64_t tick) {
    Outbound o;
    o.msg.type = ServerMessageType::StateUpdate;
    o.msg.update.tick = tick;
    return o;
  };
  Outbound pong;
  pong.msg.type = ServerMessageType::Pong;
  q.push(update(1));
  q.push(update(2));
  q.push(update(3));
  q.push(pong);
  EXPECT_EQ(q.dropped(), 1u);
  auto out = q.drain();
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].msg.update.tick, 2u);
  EXPECT_EQ(out[2].msg.type, ServerMessageType::Pong);
  // replies are kept even past capacity
  for (int i = 0; i < 5; ++i) q.push(pong);
  q.push(update(9));
  EXPECT_EQ(q.size(), 5u);
  EXPECT_EQ(q.dropped(), 2u);
}

TEST(Protocol, ClientRoundTrip) {
  ClientMessage m = set_command(12, Vec3(0.4, 0.1, -0.1), Vec3(1, 2, 3));
  m.cmd.v_base_cmd = {0.2, 0.0, 0.1};
  EXPECT_EQ(encode(decode_client_message(encode(m))), encode(m));
  ClientMessage r = msg(ClientMessageType::ResetScene, 4);
  r.scene = wall_scene();
  r.scene_seed = 77;
  EXPECT_EQ(encode(decode_client_message(encode(r))), encode(r));
}

TEST(Protocol, ServerRoundTrip) {
  Harness h;
  h.loop.tick({});
  const auto updates = replies(h.outbox, ServerMessageType::StateUpdate);
  ASSERT_EQ(updates.size(), 1u);
  EXPECT_EQ(encode(decode_server_message(encode(updates[0]))), encode(updates[0]));
  ServerMessage e;
  e.type = ServerMessageType::Error;
  e.error_code = ErrorCode::LeaseHeld;
  e.error_text = "held";
  e.ack = 9;
  EXPECT_EQ(encode(decode_server_message(encode(e))), encode(e));
}
