// Prints one encoded message of every protocol type, one per line, for
// validation against the JSON schema.

#include <iostream>

#include "uniforce/teleop.hpp"

using namespace uniforce;

int main() {
  ClientMessage c;
  std::uint64_t seq = 0;
  for (ClientMessageType t : {ClientMessageType::SetCommand, ClientMessageType::SetMode,
                              ClientMessageType::StartRecording, ClientMessageType::StopRecording,
                              ClientMessageType::ResetScene, ClientMessageType::Ping, ClientMessageType::AcquireLease,
                              ClientMessageType::ReleaseLease}) {
    c = ClientMessage{};
    c.type = t;
    c.seq = ++seq;
    c.cmd.x_ee_cmd = Vec3(0.5, 0.1, 0.0);
    c.cmd.F_ee_cmd = Vec3(10, 0, 0);
    c.mode = ControlMode::force();
    c.task = "wipe";
    c.scene.env = SpringLatch{};
    c.scene_seed = 3;
    std::cout << encode(c) << '\n';
  }

  // Server messages come from a live loop so every field is populated.
  OutboxQueue out(64);
  SceneSpec scene;
  scene.env = Wall{};
  const auto dir = std::filesystem::temp_directory_path() / "uniforce_protocol_samples";
  std::filesystem::create_directories(dir);
  ControlLoop loop(scene, 1, LoopConfig{{}, {}, dir, nullptr, {}}, out);
  auto text = [](std::uint64_t s, ClientMessageType t) {
    ClientMessage m;
    m.type = t;
    m.seq = s;
    m.task = "wall";
    return Inbound{Inbound::Kind::Text, 1, encode(m)};
  };
  loop.tick({{Inbound::Kind::Connected, 1, {}}, text(1, ClientMessageType::Ping),
             text(2, ClientMessageType::AcquireLease), text(3, ClientMessageType::StartRecording),
             {Inbound::Kind::Text, 1, "not json"}});
  loop.tick({text(4, ClientMessageType::StopRecording)});
  for (const auto& o : out.drain()) std::cout << encode(o.msg) << '\n';
  std::filesystem::remove_all(dir);
  return 0;
}
