#pragma once

#include <stdexcept>
#include <string>

namespace hcpf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A parameter lies outside the domain of the owning type.
class InvalidParameter : public Error {
  public:
    using Error::Error;
};

/// Maximum-likelihood fitting failed (empty or degenerate sample).
class FitError : public Error {
  public:
    using Error::Error;
};

/// A response cannot be explained by any n <= N_tr.
class TruncationError : public Error {
  public:
    using Error::Error;
};

/// Configuration rejected before any work started.
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
  public:
    using Error::Error;
};

/// Input file is readable but malformed.
class FormatError : public Error {
  public:
    using Error::Error;
};

/// User or item index outside the matrix.
class IndexError : public Error {
  public:
    using Error::Error;
};

/// Non-finite quantity encountered during inference.
class NumericalError : public Error {
  public:
    using Error::Error;
};

} // namespace hcpf
