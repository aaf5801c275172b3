#pragma once

#include <stdexcept>
#include <string>

namespace cbstm {

// Base of the library's error taxonomy. Every failure mode gets its own
// type so call sites and tests can catch precisely.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor dimensions incompatible with the requested operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Window/stride/padding combination produces an empty or invalid output.
class GeometryError : public Error {
public:
    using Error::Error;
};

// A scalar argument is outside its documented domain.
class ArgumentError : public Error {
public:
    using Error::Error;
};

// Stored indices or buffers reference positions that cannot exist.
class CorruptionError : public Error {
public:
    using Error::Error;
};

// Model/provider/CLI configuration is internally inconsistent.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Filesystem level failure (missing, unreadable, short read).
class IoError : public Error {
public:
    using Error::Error;
};

// Byte-level container violation (bad magic, version, truncation).
class FormatError : public Error {
public:
    using Error::Error;
};

// Parsed file uses a feature outside the supported subset.
class UnsupportedError : public Error {
public:
    using Error::Error;
};

// Decoder fed indices that do not come from its mirrored encoder stage.
class PairingError : public Error {
public:
    using Error::Error;
};

// Training loop contract violation (missing gradient, bad state).
class TrainingError : public Error {
public:
    using Error::Error;
};

// Evaluation requested on records lacking ground truth.
class EvaluationError : public Error {
public:
    using Error::Error;
};

// Dataset cannot be partitioned as requested.
class SplitError : public Error {
public:
    using Error::Error;
};

}  // namespace cbstm
