#pragma once

#include <stdexcept>
#include <string>

namespace cibr {

// Base of every error the library throws. Subclasses exist so callers (and the
// CLI exit-code mapping) can tell failure classes apart.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define CIBR_DECLARE_ERROR(Name)                  \
    class Name : public Error {                   \
    public:                                       \
        using Error::Error;                       \
    }

CIBR_DECLARE_ERROR(DimensionError);
CIBR_DECLARE_ERROR(DomainError);
CIBR_DECLARE_ERROR(DegenerateEmbeddingError);
CIBR_DECLARE_ERROR(ArityError);
CIBR_DECLARE_ERROR(RankError);
CIBR_DECLARE_ERROR(EvaluationError);
CIBR_DECLARE_ERROR(DivergenceError);
CIBR_DECLARE_ERROR(ConfigError);
CIBR_DECLARE_ERROR(AlignmentError);
CIBR_DECLARE_ERROR(ParseError);
CIBR_DECLARE_ERROR(IllConditionedError);
CIBR_DECLARE_ERROR(InsufficientSampleError);
CIBR_DECLARE_ERROR(LabelError);
CIBR_DECLARE_ERROR(CoverageError);
CIBR_DECLARE_ERROR(IoError);

#undef CIBR_DECLARE_ERROR

}  // namespace cibr
