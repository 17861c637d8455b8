#pragma once

#include <stdexcept>
#include <string>

namespace odflow {

// Base class for all errors thrown by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

#define ODFLOW_DEFINE_ERROR(Name)                                              \
    class Name : public Error {                                                \
      public:                                                                  \
        using Error::Error;                                                    \
    }

// models
ODFLOW_DEFINE_ERROR(NonFiniteWeight);
ODFLOW_DEFINE_ERROR(DegenerateDenominator);
ODFLOW_DEFINE_ERROR(NonPositiveCovariate);

// calibrate
ODFLOW_DEFINE_ERROR(NonPositivePrediction);
ODFLOW_DEFINE_ERROR(DegenerateVariance);
ODFLOW_DEFINE_ERROR(SingularInformation);
ODFLOW_DEFINE_ERROR(NonFiniteLoss);

// select
ODFLOW_DEFINE_ERROR(BothEmpty);
ODFLOW_DEFINE_ERROR(EmptyObservation);
ODFLOW_DEFINE_ERROR(UnknownCode);

// ingest
ODFLOW_DEFINE_ERROR(ZeroBeds);
ODFLOW_DEFINE_ERROR(EmptyGroup);
ODFLOW_DEFINE_ERROR(MissingTerritory);

// cli / export
ODFLOW_DEFINE_ERROR(UnknownSpec);
ODFLOW_DEFINE_ERROR(MissingBoundaries);

#undef ODFLOW_DEFINE_ERROR

} // namespace odflow
