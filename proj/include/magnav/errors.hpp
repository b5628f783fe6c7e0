#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace magnav {

enum class ErrorCode {
    SingularActuation,
    CurrentLimit,
    OutOfWorkspace,
    DepthLimit,
    LowCoverage,
    NonPlanarSurface,
    DimensionMismatch,
    InvalidHomography,
    TargetLost,
    SingularCalibration,
    IllConditionedJacobian,
    ProjectionFailed,
    UnpaintedRegion,
    EmptyMosaic,
    EmptyWorkspaceTable,
    EmptyRegion,
    NoConvergence,
    DegenerateWeights,
    ConfigError,
    ScenarioAborted,
    BindError,
    ProtocolError,
    NotCalibrated,
    WrongMode,
    MeshFormat,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Raised when solved coil currents exceed the amplifier limit. `scale` is the
/// factor the requested field must be multiplied by to become feasible.
class CurrentLimitError : public Error {
public:
    CurrentLimitError(double scale, const std::string& what)
        : Error(ErrorCode::CurrentLimit, what), scale_(scale) {}

    double scale() const noexcept { return scale_; }

private:
    double scale_;
};

}  // namespace magnav
