#pragma once

#include <stdexcept>
#include <string>

namespace dwiqc {

/// Runtime failure: bad input data, I/O, numerical breakdown.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or usage; the CLI maps this to exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

/// Train/test overlap detected where the protocol forbids it.
struct LeakageError : Error {
    using Error::Error;
};

}  // namespace dwiqc
