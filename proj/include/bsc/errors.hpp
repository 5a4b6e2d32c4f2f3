/* Copyright 2026 The BSC Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef BSC_ERRORS_HPP_
#define BSC_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace bsc {

// Base class for every error raised by the library. Callers that do not care
// about the category can catch this one.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define BSC_DEFINE_ERROR(Name)            \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  }

BSC_DEFINE_ERROR(DimensionError);
BSC_DEFINE_ERROR(DegenerateEmbeddingError);
BSC_DEFINE_ERROR(NumericError);
BSC_DEFINE_ERROR(ConfigError);
BSC_DEFINE_ERROR(TapeError);
BSC_DEFINE_ERROR(LabelError);
BSC_DEFINE_ERROR(SequenceError);
BSC_DEFINE_ERROR(VarianceUnestimableError);
BSC_DEFINE_ERROR(ShardPlanError);
BSC_DEFINE_ERROR(PreconditionError);
BSC_DEFINE_ERROR(ScheduleError);
BSC_DEFINE_ERROR(DivergenceError);
BSC_DEFINE_ERROR(FormatError);
BSC_DEFINE_ERROR(DataError);

#undef BSC_DEFINE_ERROR

}  // namespace bsc

#endif  // BSC_ERRORS_HPP_
