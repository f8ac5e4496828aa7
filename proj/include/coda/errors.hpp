#pragma once

#include <stdexcept>
#include <string>

namespace coda {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define CODA_DEFINE_ERROR(Name)          \
  struct Name : Error {                  \
    using Error::Error;                  \
  }

// dataset-core
CODA_DEFINE_ERROR(MissingColumn);
CODA_DEFINE_ERROR(DuplicateRecordKey);
CODA_DEFINE_ERROR(UnknownLabel);
CODA_DEFINE_ERROR(UnknownScopeId);
CODA_DEFINE_ERROR(DecodeError);
CODA_DEFINE_ERROR(ChannelShapeMismatch);

// synthetic-benchmark / file IO
CODA_DEFINE_ERROR(IOFailure);

// view-pipeline
CODA_DEFINE_ERROR(ImageTooSmall);
CODA_DEFINE_ERROR(NoEligibleTreatment);

// models
CODA_DEFINE_ERROR(ShapeError);

// ssl-objectives
CODA_DEFINE_ERROR(NoGlobalView);
CODA_DEFINE_ERROR(ShapeMismatch);

// pipeline
CODA_DEFINE_ERROR(PairIneligible);
CODA_DEFINE_ERROR(NoLabels);
CODA_DEFINE_ERROR(MissingCheckpoint);

// evaluation
CODA_DEFINE_ERROR(LengthMismatch);
CODA_DEFINE_ERROR(IndexOutOfRange);
CODA_DEFINE_ERROR(DegenerateInput);
CODA_DEFINE_ERROR(LayerCountMismatch);

// cli-config
CODA_DEFINE_ERROR(ConfigValidationError);

#undef CODA_DEFINE_ERROR

}  // namespace coda
