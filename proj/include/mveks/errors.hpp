// Copyright 2026 The mveks Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace mveks {

// Error categories map onto CLI exit codes: config = 1, data = 2, numerical = 3.
enum class ErrorCategory { kConfig = 1, kData = 2, kNumerical = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }

 private:
  ErrorCategory category_;
};

template <ErrorCategory C>
class CategorizedError : public Error {
 public:
  explicit CategorizedError(const std::string& what) : Error(C, what) {}
};

using ConfigErrorBase = CategorizedError<ErrorCategory::kConfig>;
using DataErrorBase = CategorizedError<ErrorCategory::kData>;
using NumericalErrorBase = CategorizedError<ErrorCategory::kNumerical>;

#define MVEKS_DEFINE_ERROR(Name, Base) \
  class Name : public Base {           \
   public:                             \
    using Base::Base;                  \
  }

MVEKS_DEFINE_ERROR(ConfigError, ConfigErrorBase);
MVEKS_DEFINE_ERROR(DataError, DataErrorBase);

// Geometry.
MVEKS_DEFINE_ERROR(NonPositiveDepth, NumericalErrorBase);
MVEKS_DEFINE_ERROR(NoConvergence, NumericalErrorBase);
MVEKS_DEFINE_ERROR(DegenerateGeometry, NumericalErrorBase);
MVEKS_DEFINE_ERROR(InsufficientViews, DataErrorBase);

// Ensembles and fitting.
MVEKS_DEFINE_ERROR(EmptyEnsemble, DataErrorBase);
MVEKS_DEFINE_ERROR(InsufficientLowVarianceFrames, DataErrorBase);
MVEKS_DEFINE_ERROR(ShapeMismatch, DataErrorBase);

// State-space inference.
MVEKS_DEFINE_ERROR(NumericalFailure, NumericalErrorBase);
MVEKS_DEFINE_ERROR(JacobianFailure, NumericalErrorBase);
MVEKS_DEFINE_ERROR(RankDeficient, NumericalErrorBase);

// Frame selection.
MVEKS_DEFINE_ERROR(TooFewFrames, DataErrorBase);
MVEKS_DEFINE_ERROR(CollisionError, DataErrorBase);

#undef MVEKS_DEFINE_ERROR

}  // namespace mveks
