#pragma once

#include <stdexcept>
#include <string>

namespace lcnn {

// Bad user input: missing paths, undecodable images, invalid arguments.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Weight files and model/spec disagreements.
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace lcnn
