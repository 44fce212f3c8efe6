// Copyright 2026 The StyleSeg Authors. All Rights Reserved.
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

namespace styleseg {

// Every error the library raises derives from Error so callers (the CLI in
// particular) can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree. The message names the offending axis.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An argument is outside its documented domain.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A contract of the autodiff engine was broken (e.g. non-scalar root).
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf appeared in a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

class UnknownSource : public Error {
 public:
  explicit UnknownSource(const std::string& id)
      : Error("unknown source '" + id + "'"), id_(id) {}
  const std::string& id() const { return id_; }

 private:
  std::string id_;
};

// Recipe / configuration problems (unknown keys, bad values, schema version).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// On-disk container problems: missing files, bad versions, truncated blobs.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace styleseg
