#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "icd/trajectory_store.hpp"

namespace icd::env {

struct StepOutcome {
    std::string observation;
    bool done = false;
    bool success = false;
};

class EnvironmentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// reset/step contract shared by the bundled toy world and external
/// benchmark adapters. After done, step() throws EnvironmentError.
class Environment {
public:
    virtual ~Environment() = default;
    virtual std::string reset(const store::TaskSpec& task) = 0;
    virtual StepOutcome step(const std::string& action) = 0;
    /// Text substituted for {action_space} in prompts.
    virtual std::string action_space() const = 0;
};

/// Creates one fresh environment per episode.
class EnvironmentFactory {
public:
    virtual ~EnvironmentFactory() = default;
    virtual std::unique_ptr<Environment> make() const = 0;
};

/// Speaks the newline-delimited adapter protocol to an external process:
///   "RESET <task-json>"  ->  "<observation>"
///   "STEP <action>"      ->  "<observation>\t<done>\t<success>"
/// done/success are "true"/"false" (also accepts 1/0). Observations must not
/// contain tab or newline; the server escapes them as \t and \n.
class LineChannel {
public:
    virtual ~LineChannel() = default;
    virtual void send_line(const std::string& line) = 0;
    virtual std::string receive_line() = 0;
};

/// Spawns `argv` and talks over its stdin/stdout.
std::unique_ptr<LineChannel> spawn_stdio_channel(const std::vector<std::string>& argv);
/// Connects to host:port over TCP.
std::unique_ptr<LineChannel> connect_tcp_channel(const std::string& host, int port);

class ExternalEnvironment : public Environment {
public:
    ExternalEnvironment(std::unique_ptr<LineChannel> channel, std::string action_space);

    std::string reset(const store::TaskSpec& task) override;
    StepOutcome step(const std::string& action) override;
    std::string action_space() const override { return action_space_; }

private:
    std::unique_ptr<LineChannel> channel_;
    std::string action_space_;
    bool active_ = false;
};

std::string escape_protocol_text(const std::string& s);
std::string unescape_protocol_text(const std::string& s);
StepOutcome parse_step_reply(const std::string& line);
std::string format_step_reply(const StepOutcome& outcome);

/// Serves `factory`'s environments over the adapter protocol until EOF.
/// Protocol errors are answered with "ERROR <message>".
void serve_protocol(std::istream& in, std::ostream& out, const EnvironmentFactory& factory);

}  // namespace icd::env
