// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <stdexcept>
#include <string>

namespace sesw {

struct Error : std::runtime_error {
  explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

// Signal front-end
struct InvalidSignal : Error { using Error::Error; };
struct InvalidSpectrogram : Error { using Error::Error; };

// Synthesis
struct InvalidRir : Error { using Error::Error; };
struct DegenerateSignal : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };

// Networks / training
struct ShapeError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct NumericalError : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };

// Metrics
struct InsufficientSpeech : Error { using Error::Error; };
struct MetricUnavailable : Error { using Error::Error; };
struct ProviderError : Error { using Error::Error; };

// Reporting
struct IncompleteEvaluation : Error { using Error::Error; };

}  // namespace sesw
