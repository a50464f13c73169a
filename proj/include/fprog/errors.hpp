#pragma once

#include <stdexcept>
#include <string>

namespace fprog {

// Exit code contract: 0 success, 1 validation/model error, 2 runtime fault.
enum ExitCode : int {
    EXIT_OK = 0,
    EXIT_VALIDATION = 1,
    EXIT_FAULT = 2,
};

// Bad input: malformed model file, incompatible shapes, out-of-range
// hyperparameters, geometry that cannot hold the requested network.
class ValidationError : public std::runtime_error {
  public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Internal inconsistency detected while simulating: tag corruption, a frame
// routed to a node outside its worker's scope, a cross-check divergence.
class SimulationFault : public std::runtime_error {
  public:
    explicit SimulationFault(const std::string& what) : std::runtime_error(what) {}
};

} // namespace fprog
