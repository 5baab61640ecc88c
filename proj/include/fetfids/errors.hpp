#pragma once

#include <stdexcept>
#include <string>

namespace fetfids {

// Every error raised by the library derives from Error so callers (the CLI
// in particular) can catch one type and still report the specific kind.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class BatchSizeError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class UnknownLabelError : public Error {
 public:
  explicit UnknownLabelError(std::string name)
      : Error("unknown NSL-KDD label '" + name + "'"), name_(std::move(name)) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

class EmptyCorpusError : public Error {
 public:
  using Error::Error;
};

class EmptyNodeError : public Error {
 public:
  using Error::Error;
};

class EmptyEvaluationError : public Error {
 public:
  using Error::Error;
};

class AggregationError : public Error {
 public:
  using Error::Error;
};

class IncompatibleCheckpointError : public Error {
 public:
  using Error::Error;
};

class CorruptionError : public Error {
 public:
  using Error::Error;
};

class NodeError : public Error {
 public:
  NodeError(int node_id, const std::string& what)
      : Error("node " + std::to_string(node_id) + ": " + what), node_id_(node_id) {}
  int node_id() const noexcept { return node_id_; }

 private:
  int node_id_;
};

}  // namespace fetfids
