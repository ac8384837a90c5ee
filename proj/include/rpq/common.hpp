#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace rpq {

// All on-disk formats are little-endian by definition.
static_assert(std::endian::native == std::endian::little,
              "rpq binary formats assume a little-endian host");

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : Error {
    using Error::Error;
};
struct FormatError : Error {
    using Error::Error;
};
struct ArgumentError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct SamplingError : Error {
    using Error::Error;
};
struct TrainingError : Error {
    using Error::Error;
};
struct QueryError : Error {
    using Error::Error;
};

} // namespace rpq
