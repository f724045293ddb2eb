#pragma once

#include <stdexcept>
#include <string>

namespace patchlab {

// Base of every error the library throws. The CLI maps the subclasses onto
// exit codes (config -> 1, format -> 2, everything else -> 3).
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent experiment configuration.
class config_error : public error {
 public:
  using error::error;
};

// Model / tokenizer file could not be parsed or violates its schema.
class format_error : public error {
 public:
  using error::error;
};

class tokenize_error : public error {
 public:
  using error::error;
};

// Layer / position / token id outside the model's bounds.
class index_error : public error {
 public:
  using error::error;
};

// A metric was asked for on inputs where it is undefined.
class metric_error : public error {
 public:
  using error::error;
};

class experiment_error : public error {
 public:
  using error::error;
};

}  // namespace patchlab
