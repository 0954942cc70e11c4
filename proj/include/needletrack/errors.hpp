#pragma once

#include <stdexcept>
#include <string>

namespace needletrack {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define NEEDLETRACK_DEFINE_ERROR(Name)                    \
    class Name : public Error {                           \
    public:                                               \
        using Error::Error;                               \
    }

// conic geometry
NEEDLETRACK_DEFINE_ERROR(DegenerateConfiguration);
NEEDLETRACK_DEFINE_ERROR(NotAnEllipse);
NEEDLETRACK_DEFINE_ERROR(NumericalFailure);
NEEDLETRACK_DEFINE_ERROR(InvalidParams);
NEEDLETRACK_DEFINE_ERROR(DegenerateNormalization);
NEEDLETRACK_DEFINE_ERROR(BehindCamera);
NEEDLETRACK_DEFINE_ERROR(AmbiguityUnresolved);

// state / observation
NEEDLETRACK_DEFINE_ERROR(UnknownLabel);
NEEDLETRACK_DEFINE_ERROR(MissingLabel);
NEEDLETRACK_DEFINE_ERROR(DegenerateOrientationMean);

// filter / simulator / io
NEEDLETRACK_DEFINE_ERROR(AllParticlesDegenerate);
NEEDLETRACK_DEFINE_ERROR(OutOfView);
NEEDLETRACK_DEFINE_ERROR(ParseError);
NEEDLETRACK_DEFINE_ERROR(ConfigError);

#undef NEEDLETRACK_DEFINE_ERROR

}  // namespace needletrack
