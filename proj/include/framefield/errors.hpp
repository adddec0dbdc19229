#pragma once

#include <stdexcept>
#include <string>

namespace ff {

// Error taxonomy, mapped to CLI exit codes in tools/main.cpp:
//   usage/config/data problems -> exit 2, numerical aborts -> exit 3.
struct ShapeError : std::runtime_error { using std::runtime_error::runtime_error; };
struct IndexError : std::runtime_error { using std::runtime_error::runtime_error; };
struct UsageError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct DataError : std::runtime_error { using std::runtime_error::runtime_error; };
struct IoError : std::runtime_error { using std::runtime_error::runtime_error; };
struct TrainError : std::runtime_error { using std::runtime_error::runtime_error; };

} // namespace ff
