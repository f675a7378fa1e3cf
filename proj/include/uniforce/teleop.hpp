#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "uniforce/episode.hpp"

namespace uniforce {

inline constexpr int kProtocolVersion = 1;

// ---------------------------------------------------------------------------
// Wire messages
//
// Every message is one JSON object with "type" and "seq". Client sequence
// numbers must increase per connection; the server numbers its own output.

enum class ClientMessageType { SetCommand, SetMode, StartRecording, StopRecording, ResetScene, Ping, AcquireLease, ReleaseLease };
enum class ServerMessageType { StateUpdate, RecordingAck, Error, Pong, LeaseStatus };

inline const char* to_string(ClientMessageType t) {
  switch (t) {
    case ClientMessageType::SetCommand: return "SetCommand";
    case ClientMessageType::SetMode: return "SetMode";
    case ClientMessageType::StartRecording: return "StartRecording";
    case ClientMessageType::StopRecording: return "StopRecording";
    case ClientMessageType::ResetScene: return "ResetScene";
    case ClientMessageType::Ping: return "Ping";
    case ClientMessageType::AcquireLease: return "AcquireLease";
    case ClientMessageType::ReleaseLease: return "ReleaseLease";
  }
  return "Unknown";
}

inline const char* to_string(ServerMessageType t) {
  switch (t) {
    case ServerMessageType::StateUpdate: return "StateUpdate";
    case ServerMessageType::RecordingAck: return "RecordingAck";
    case ServerMessageType::Error: return "Error";
    case ServerMessageType::Pong: return "Pong";
    case ServerMessageType::LeaseStatus: return "LeaseStatus";
  }
  return "Unknown";
}

inline ClientMessageType client_message_type_from_string(const std::string& s) {
  for (auto t : {ClientMessageType::SetCommand, ClientMessageType::SetMode, ClientMessageType::StartRecording,
                 ClientMessageType::StopRecording, ClientMessageType::ResetScene, ClientMessageType::Ping,
                 ClientMessageType::AcquireLease, ClientMessageType::ReleaseLease})
    if (s == to_string(t)) return t;
  throw Error(ErrorCode::MalformedMessage, "unknown message type '" + s + "'");
}

inline ServerMessageType server_message_type_from_string(const std::string& s) {
  for (auto t : {ServerMessageType::StateUpdate, ServerMessageType::RecordingAck, ServerMessageType::Error,
                 ServerMessageType::Pong, ServerMessageType::LeaseStatus})
    if (s == to_string(t)) return t;
  throw Error(ErrorCode::MalformedMessage, "unknown message type '" + s + "'");
}

inline ErrorCode error_code_from_string(const std::string& s) {
  for (int i = 0; i <= static_cast<int>(ErrorCode::NotLeaseHolder); ++i)
    if (s == to_string(static_cast<ErrorCode>(i))) return static_cast<ErrorCode>(i);
  throw Error(ErrorCode::MalformedMessage, "unknown error code '" + s + "'");
}

struct ClientMessage {
  ClientMessageType type = ClientMessageType::Ping;
  std::uint64_t seq = 0;
  CommandBundle cmd{};         // SetCommand
  ControlMode mode{};          // SetMode
  std::string task;            // StartRecording
  SceneSpec scene{};           // ResetScene
  std::uint64_t scene_seed = 0;  // ResetScene
};

inline nlohmann::json to_json(const ClientMessage& m) {
  nlohmann::json j = {{"type", to_string(m.type)}, {"seq", m.seq}};
  switch (m.type) {
    case ClientMessageType::SetCommand: j["cmd"] = command_to_json(m.cmd); break;
    case ClientMessageType::SetMode: j["mode"] = mode_to_json(m.mode); break;
    case ClientMessageType::StartRecording: j["task"] = m.task; break;
    case ClientMessageType::ResetScene:
      j["scene"] = scene_to_json(m.scene);
      j["seed"] = m.scene_seed;
      break;
    default: break;
  }
  return j;
}

inline std::string encode(const ClientMessage& m) { return to_json(m).dump(); }

/// Parses one client message; any structural problem is MalformedMessage.
inline ClientMessage decode_client_message(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedMessage, std::string("invalid JSON: ") + e.what());
  }
  try {
    if (!j.is_object()) throw Error(ErrorCode::MalformedMessage, "message must be an object");
    if (!j.contains("type") || !j["type"].is_string()) throw Error(ErrorCode::MalformedMessage, "missing type");
    if (!j.contains("seq") || !j["seq"].is_number_unsigned()) throw Error(ErrorCode::MalformedMessage, "missing seq");
    ClientMessage m;
    m.type = client_message_type_from_string(j["type"].get<std::string>());
    m.seq = j["seq"].get<std::uint64_t>();
    switch (m.type) {
      case ClientMessageType::SetCommand: m.cmd = command_from_json(j.at("cmd")); break;
      case ClientMessageType::SetMode:
        m.mode = mode_from_json(j.at("mode"));
        if (!m.mode.tangent.allFinite()) throw Error(ErrorCode::MalformedMessage, "tangent must be finite");
        break;
      case ClientMessageType::StartRecording: m.task = j.at("task").get<std::string>(); break;
      case ClientMessageType::ResetScene:
        m.scene = scene_from_json(j.at("scene"));
        m.scene_seed = j.at("seed").get<std::uint64_t>();
        break;
      default: break;
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedMessage, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MalformedMessage) throw;
    throw Error(ErrorCode::MalformedMessage, e.what());
  }
}

struct StateUpdate {
  std::uint64_t tick = 0;
  double t = 0.0;
  PlantState state{};
  EstimatorOutput estimate{};
  ControlMode mode{};
  CommandBundle cmd{};
  ResolvedTargets targets{};
  RewardBreakdown reward{};
  SceneFeatures scene{};
  bool recording = false;
  std::size_t recorded_frames = 0;
  std::uint64_t applied_seq = 0;  // seq of the last command-role message in effect
  std::optional<std::uint64_t> lease_holder;
};

struct RecordingAck {
  bool active = false;
  std::string episode_id;  // set on stop
  std::string path;
  std::size_t frames = 0;
};

struct ServerMessage {
  ServerMessageType type = ServerMessageType::StateUpdate;
  std::uint64_t seq = 0;
  std::uint64_t ack = 0;  // seq of the client message this answers (0 for StateUpdate)
  StateUpdate update{};
  RecordingAck recording{};
  ErrorCode error_code = ErrorCode::MalformedMessage;
  std::string error_text;
  bool lease_granted = false;
};

inline nlohmann::json reward_to_json(const RewardBreakdown& r) {
  nlohmann::json terms = nlohmann::json::array();
  for (const auto& t : r.terms) terms.push_back({{"name", t.name}, {"weight", t.weight}, {"value", t.value}});
  return {{"total", r.total()}, {"terms", terms}};
}

inline RewardBreakdown reward_from_json(const nlohmann::json& j) {
  RewardBreakdown r;
  for (const auto& t : j.at("terms"))
    r.terms.push_back({t.at("name").get<std::string>(), t.at("weight").get<double>(), t.at("value").get<double>()});
  return r;
}

inline nlohmann::json to_json(const ServerMessage& m) {
  nlohmann::json j = {{"type", to_string(m.type)}, {"seq", m.seq}};
  switch (m.type) {
    case ServerMessageType::StateUpdate: {
      const auto& u = m.update;
      j["tick"] = u.tick;
      j["t"] = u.t;
      j["state"] = plant_state_to_json(u.state);
      j["estimate"] = estimate_to_json(u.estimate);
      j["mode"] = mode_to_json(u.mode);
      j["cmd"] = command_to_json(u.cmd);
      j["targets"] = {{"x_ee", vec_to_json(u.targets.x_target)}, {"v_base", base_velocity_to_json(u.targets.v_base_target)}};
      j["reward"] = reward_to_json(u.reward);
      j["scene"] = scene_features_to_json(u.scene);
      j["recording"] = u.recording;
      j["recorded_frames"] = u.recorded_frames;
      j["applied_seq"] = u.applied_seq;
      j["lease_holder"] = u.lease_holder ? nlohmann::json(*u.lease_holder) : nlohmann::json(nullptr);
      break;
    }
    case ServerMessageType::RecordingAck:
      j["ack"] = m.ack;
      j["active"] = m.recording.active;
      j["episode_id"] = m.recording.episode_id;
      j["path"] = m.recording.path;
      j["frames"] = m.recording.frames;
      break;
    case ServerMessageType::Error:
      j["ack"] = m.ack;
      j["code"] = to_string(m.error_code);
      j["text"] = m.error_text;
      break;
    case ServerMessageType::Pong: j["ack"] = m.ack; break;
    case ServerMessageType::LeaseStatus:
      j["ack"] = m.ack;
      j["granted"] = m.lease_granted;
      break;
  }
  return j;
}

inline std::string encode(const ServerMessage& m) { return to_json(m).dump(); }

inline ServerMessage decode_server_message(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ServerMessage m;
    m.type = server_message_type_from_string(j.at("type").get<std::string>());
    m.seq = j.at("seq").get<std::uint64_t>();
    m.ack = j.value("ack", std::uint64_t{0});
    switch (m.type) {
      case ServerMessageType::StateUpdate: {
        auto& u = m.update;
        u.tick = j.at("tick").get<std::uint64_t>();
        u.t = j.at("t").get<double>();
        u.state = plant_state_from_json(j.at("state"));
        u.estimate = estimate_from_json(j.at("estimate"));
        u.mode = mode_from_json(j.at("mode"));
        u.cmd = command_from_json(j.at("cmd"));
        u.targets.x_target = vec_from_json(j.at("targets").at("x_ee"));
        u.targets.v_base_target = base_velocity_from_json(j.at("targets").at("v_base"));
        u.reward = reward_from_json(j.at("reward"));
        u.scene = scene_features_from_json(j.at("scene"));
        u.recording = j.at("recording").get<bool>();
        u.recorded_frames = j.at("recorded_frames").get<std::size_t>();
        u.applied_seq = j.at("applied_seq").get<std::uint64_t>();
        if (!j.at("lease_holder").is_null()) u.lease_holder = j.at("lease_holder").get<std::uint64_t>();
        break;
      }
      case ServerMessageType::RecordingAck:
        m.recording.active = j.at("active").get<bool>();
        m.recording.episode_id = j.at("episode_id").get<std::string>();
        m.recording.path = j.at("path").get<std::string>();
        m.recording.frames = j.at("frames").get<std::size_t>();
        break;
      case ServerMessageType::Error:
        m.error_code = error_code_from_string(j.at("code").get<std::string>());
        m.error_text = j.at("text").get<std::string>();
        break;
      case ServerMessageType::Pong: break;
      case ServerMessageType::LeaseStatus: m.lease_granted = j.at("granted").get<bool>(); break;
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedMessage, e.what());
  }
}

// ---------------------------------------------------------------------------
// Queues between the network endpoint and the tick owner

using ClientId = std::uint64_t;
inline constexpr ClientId kBroadcast = 0;

struct Inbound {
  enum class Kind { Connected, Text, Disconnected } kind = Kind::Text;
  ClientId client = 0;
  std::string text;
};

struct Outbound {
  ClientId target = kBroadcast;
  ServerMessage msg;
};

/// Unbounded FIFO for inbound events.
class InboxQueue {
 public:
  void push(Inbound in) {
    std::lock_guard<std::mutex> lock(mu_);
    q_.push_back(std::move(in));
  }

  std::vector<Inbound> drain() {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<Inbound> out(std::make_move_iterator(q_.begin()), std::make_move_iterator(q_.end()));
    q_.clear();
    return out;
  }

 private:
  std::mutex mu_;
  std::deque<Inbound> q_;
};

/// Bounded FIFO for outbound messages. When full, the oldest StateUpdate
/// is dropped; replies and errors are never dropped.
class OutboxQueue {
 public:
  explicit OutboxQueue(std::size_t capacity = 256) : capacity_(capacity) {}

  void push(Outbound out) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (q_.size() >= capacity_) {
        for (auto it = q_.begin(); it != q_.end(); ++it)
          if (it->msg.type == ServerMessageType::StateUpdate) {
            q_.erase(it);
            ++dropped_;
            break;
          }
      }
      if (q_.size() >= capacity_ && out.msg.type == ServerMessageType::StateUpdate) {
        ++dropped_;
        return;
      }
      q_.push_back(std::move(out));
    }
    cv_.notify_one();
  }

  std::vector<Outbound> drain() {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<Outbound> out(std::make_move_iterator(q_.begin()), std::make_move_iterator(q_.end()));
    q_.clear();
    return out;
  }

  /// Waits until a message is queued or the timeout passes.
  void wait_for(std::chrono::milliseconds timeout) {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return !q_.empty(); });
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return q_.size();
  }
  std::size_t dropped() const {
    std::lock_guard<std::mutex> lock(mu_);
    return dropped_;
  }
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Outbound> q_;
  std::size_t dropped_ = 0;
};

// ---------------------------------------------------------------------------
// Control loop

struct LoopConfig {
  PlantParams nominal{};
  ControllerConfig controller{};
  std::filesystem::path episode_dir = ".";
  std::shared_ptr<const ForceEstimator> estimator;  // null: oracle on the true plant
  CommandRanges ranges{};
};

/// The tick owner. Everything it touches lives on its own thread; the
/// network side reaches it only through the inbox and outbox.
class ControlLoop {
 public:
  ControlLoop(SceneSpec scene, std::uint64_t seed, LoopConfig cfg, OutboxQueue& outbox)
      : cfg_(std::move(cfg)), outbox_(outbox) {
    reset(std::move(scene), seed);
  }

  enum class Status { Running, Aborted };

  /// Handles the drained inbox and advances the simulation by one dt.
  Status tick(const std::vector<Inbound>& inbox) {
    if (status_ == Status::Aborted) return status_;
    for (const auto& in : inbox) handle(in);
    try {
      Session::Tick tk;
      if (recorder_) {
        recorder_->add(advance_recorded(*session_, mode_, cmd_, features(), &tk));
      } else {
        tk = session_->advance(mode_, cmd_);
        prefix_.push_back({cmd_, mode_});
      }
      publish(tk);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFiniteState) throw;
      send(kBroadcast, error_message(0, e.code(), e.what()));
      status_ = Status::Aborted;
    }
    return status_;
  }

  const Session& session() const { return *session_; }
  const CommandBundle& command() const { return cmd_; }
  const ControlMode& mode() const { return mode_; }
  bool recording() const { return recorder_.has_value(); }
  std::optional<ClientId> lease_holder() const { return lease_; }
  Status status() const { return status_; }
  std::uint64_t applied_seq() const { return applied_seq_; }

 private:
  void reset(SceneSpec scene, std::uint64_t seed) {
    session_.emplace(std::move(scene), seed, cfg_.nominal, cfg_.controller, cfg_.estimator);
    cmd_ = CommandBundle{};
    cmd_.x_ee_cmd = session_->scene().x_home;
    mode_ = ControlMode::position();
    prefix_.clear();
  }

  SceneFeatures features() const { return scene_features(session_->environment(), session_->state().x_ee); }

  ServerMessage error_message(std::uint64_t ack, ErrorCode code, const std::string& text) {
    ServerMessage m;
    m.type = ServerMessageType::Error;
    m.ack = ack;
    m.error_code = code;
    m.error_text = text;
    return m;
  }

  void send(ClientId target, ServerMessage m) {
    m.seq = ++server_seq_;
    outbox_.push({target, std::move(m)});
  }

  void handle(const Inbound& in) {
    switch (in.kind) {
      case Inbound::Kind::Connected:
        last_seq_[in.client] = 0;
        return;
      case Inbound::Kind::Disconnected:
        last_seq_.erase(in.client);
        if (lease_ == in.client) lease_.reset();
        return;
      case Inbound::Kind::Text: break;
    }
    ClientMessage m;
    try {
      m = decode_client_message(in.text);
    } catch (const Error& e) {
      send(in.client, error_message(0, e.code(), e.what()));
      return;
    }
    auto& last = last_seq_[in.client];
    if (m.seq <= last) {
      send(in.client, error_message(m.seq, ErrorCode::MalformedMessage, "sequence number must increase"));
      return;
    }
    last = m.seq;
    try {
      dispatch(in.client, m);
    } catch (const Error& e) {
      send(in.client, error_message(m.seq, e.code(), e.what()));
    }
  }

  void require_lease(ClientId client) const {
    if (lease_ != client) throw Error(ErrorCode::NotLeaseHolder, "this message needs the command lease");
  }

  /// The pure resolver rejects ill-posed mode/command pairs without touching
  /// controller state.
  void validate(const ControlMode& mode, const CommandBundle& cmd) const {
    resolve(mode, cmd, Vec3::Zero(), Vec3::Zero(), cfg_.controller.impedance);
  }

  CommandBundle clamp(CommandBundle c) const {
    const auto& r = cfg_.ranges;
    c.x_ee_cmd = clamp_to_command_ranges(c.x_ee_cmd, r);
    for (int i = 0; i < 3; ++i) {
      c.F_ee_cmd[i] = r.F_ee.clamp(c.F_ee_cmd[i]);
      c.F_base_cmd[i] = r.F_base.clamp(c.F_base_cmd[i]);
    }
    c.v_base_cmd = {r.vx.clamp(c.v_base_cmd.vx), r.vy.clamp(c.v_base_cmd.vy), r.wz.clamp(c.v_base_cmd.wz)};
    return c;
  }

  void dispatch(ClientId client, const ClientMessage& m) {
    switch (m.type) {
      case ClientMessageType::Ping: {
        ServerMessage pong;
        pong.type = ServerMessageType::Pong;
        pong.ack = m.seq;
        send(client, pong);
        return;
      }
      case ClientMessageType::AcquireLease: {
        if (lease_ && *lease_ != client) throw Error(ErrorCode::LeaseHeld, "another client holds the command lease");
        lease_ = client;
        ServerMessage s;
        s.type = ServerMessageType::LeaseStatus;
        s.ack = m.seq;
        s.lease_granted = true;
        send(client, s);
        return;
      }
      case ClientMessageType::ReleaseLease: {
        require_lease(client);
        lease_.reset();
        ServerMessage s;
        s.type = ServerMessageType::LeaseStatus;
        s.ack = m.seq;
        s.lease_granted = false;
        send(client, s);
        return;
      }
      case ClientMessageType::SetCommand: {
        require_lease(client);
        const CommandBundle c = clamp(m.cmd);
        validate(mode_, c);
        cmd_ = c;
        applied_seq_ = m.seq;
        return;
      }
      case ClientMessageType::SetMode:
        require_lease(client);
        validate(m.mode, cmd_);
        mode_ = m.mode;
        applied_seq_ = m.seq;
        return;
      case ClientMessageType::StartRecording: {
        require_lease(client);
        if (recorder_) throw Error(ErrorCode::RecordingAlreadyActive, "a recording is already running");
        recorder_.emplace(*session_, m.task, cfg_.controller);
        recorder_->record().header.prefix = prefix_;
        ServerMessage ack;
        ack.type = ServerMessageType::RecordingAck;
        ack.ack = m.seq;
        ack.recording.active = true;
        send(client, ack);
        return;
      }
      case ClientMessageType::StopRecording: {
        require_lease(client);
        if (!recorder_) throw Error(ErrorCode::RecordingNotActive, "no recording is running");
        EpisodeRecord rec = std::move(recorder_->record());
        recorder_.reset();
        // Frames recorded so far become part of the prefix of any later recording.
        for (const auto& f : rec.frames) prefix_.push_back({f.cmd, f.mode});
        std::filesystem::path written;
        const std::string id = save_episode(rec, cfg_.episode_dir, &written);
        ServerMessage ack;
        ack.type = ServerMessageType::RecordingAck;
        ack.ack = m.seq;
        ack.recording.active = false;
        ack.recording.episode_id = id;
        ack.recording.path = written.string();
        ack.recording.frames = rec.frames.size();
        send(client, ack);
        return;
      }
      case ClientMessageType::ResetScene:
        require_lease(client);
        if (recorder_) throw Error(ErrorCode::RecordingAlreadyActive, "stop the recording before resetting the scene");
        reset(m.scene, m.scene_seed);
        applied_seq_ = m.seq;
        return;
    }
  }

  void publish(const Session::Tick& tk) {
    ServerMessage m;
    m.type = ServerMessageType::StateUpdate;
    auto& u = m.update;
    u.tick = tk.state.tick;
    u.t = tk.state.t;
    u.state = tk.state;
    u.estimate = tk.estimate;
    u.mode = mode_;
    u.cmd = cmd_;
    u.targets = tk.control.targets;
    u.reward = tk.reward;
    u.scene = features();
    u.recording = recorder_.has_value();
    u.recorded_frames = recorder_ ? recorder_->record().frames.size() : 0;
    u.applied_seq = applied_seq_;
    u.lease_holder = lease_;
    send(kBroadcast, std::move(m));
  }

  LoopConfig cfg_;
  OutboxQueue& outbox_;
  std::optional<Session> session_;
  CommandBundle cmd_{};
  ControlMode mode_{};
  std::vector<PrefixStep> prefix_;
  std::optional<EpisodeRecorder> recorder_;
  std::optional<ClientId> lease_;
  std::map<ClientId, std::uint64_t> last_seq_;
  std::uint64_t server_seq_ = 0;
  std::uint64_t applied_seq_ = 0;
  Status status_ = Status::Running;
};

/// Runs the loop at 1/dt on the calling thread until stopped, aborted, or
/// max_ticks is reached (0 = unbounded). Simulated time advances by exactly
/// dt per tick regardless of scheduling delays.
inline ControlLoop::Status run_loop(ControlLoop& loop, InboxQueue& inbox, std::stop_token stop,
                                    std::uint64_t max_ticks = 0, bool realtime = true) {
  using clock = std::chrono::steady_clock;
  const auto period = std::chrono::duration_cast<clock::duration>(
      std::chrono::duration<double>(loop.session().params().dt));
  auto next = clock::now();
  std::uint64_t ticks = 0;
  while (!stop.stop_requested() && (max_ticks == 0 || ticks < max_ticks)) {
    if (loop.tick(inbox.drain()) == ControlLoop::Status::Aborted) return ControlLoop::Status::Aborted;
    ++ticks;
    if (realtime) {
      next += period;
      const auto now = clock::now();
      if (next > now)
        std::this_thread::sleep_until(next);
      else
        next = now;  // overran: do not try to catch up
    }
  }
  return loop.status();
}

}  // namespace uniforce
