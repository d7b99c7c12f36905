#pragma once

#include <stdexcept>
#include <string>

namespace deco {

// Failure categories. The CLI maps each to a distinct exit code.
enum class ErrorKind { config, data, training, missing_artifact, protocol };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

struct DataError : Error {
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

struct TrainingError : Error {
    explicit TrainingError(const std::string& what) : Error(ErrorKind::training, what) {}
};

struct MissingArtifactError : Error {
    explicit MissingArtifactError(const std::string& what) : Error(ErrorKind::missing_artifact, what) {}
};

// A phase was asked to run with the wrong freeze state.
struct ProtocolError : Error {
    explicit ProtocolError(const std::string& what) : Error(ErrorKind::protocol, what) {}
};

// Tensor shape contract violations.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// Throws the subclass that matches kind.
[[noreturn]] inline void throw_error(ErrorKind kind, const std::string& what) {
    switch (kind) {
        case ErrorKind::config: throw ConfigError(what);
        case ErrorKind::data: throw DataError(what);
        case ErrorKind::training: throw TrainingError(what);
        case ErrorKind::missing_artifact: throw MissingArtifactError(what);
        case ErrorKind::protocol: throw ProtocolError(what);
    }
    throw Error(kind, what);
}

}  // namespace deco
