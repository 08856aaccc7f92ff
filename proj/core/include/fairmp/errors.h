/*
 * Copyright 2026 The fairmp Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef FAIRMP_ERRORS_H_
#define FAIRMP_ERRORS_H_

#include <stdexcept>
#include <string>

namespace fairmp {

// Base for every failure raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent configuration (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or parameters during training (exit code 3).
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Unreadable or unwritable files, corrupt on-disk data (exit code 4).
class IoError : public Error {
 public:
  using Error::Error;
};

// Shape or range violations detected at an API boundary.
class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace fairmp

#endif  // FAIRMP_ERRORS_H_
