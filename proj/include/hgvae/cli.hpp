#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hgvae::cli {

// Exit codes. Every failure also prints a one-line `error: ...` diagnostic.
enum ExitCode : int {
  kOk = 0,
  kInternal = 1,      // unexpected failure
  kUsage = 2,         // bad flags, unknown flags, missing or conflicting options
  kConfig = 3,        // malformed or inconsistent configuration
  kDataset = 4,       // unreadable or malformed dataset / skeleton file
  kCheckpoint = 5,    // unreadable or malformed checkpoint
  kShape = 6,         // data does not fit the model
  kTraining = 7,      // non-finite values during training or checkpoint write failure
  kOutput = 8,        // an output file could not be written
  kOutOfRange = 9,    // numeric argument outside its valid range
  kUnsupported = 10,  // operation not available for this model kind
};

inline constexpr const char* kVersion = "0.1.0";

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace hgvae::cli
