#pragma once

#include <stdexcept>
#include <string>

namespace parkcast {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

struct TrainingError : Error {
    using Error::Error;
};

} // namespace parkcast
