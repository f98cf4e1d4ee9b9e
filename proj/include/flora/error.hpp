#pragma once

#include <stdexcept>
#include <string>

namespace flora {

// Base for all library errors. Subclasses exist so callers can catch the
// exact failure named in each operation's contract.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct MalformedImage : Error {
  using Error::Error;
};
struct DimensionMismatch : Error {
  using Error::Error;
};
struct EmptyHistogram : Error {
  using Error::Error;
};
struct EmptyForeground : Error {
  using Error::Error;
};
struct ShapeMismatch : Error {
  using Error::Error;
};
struct LabelOutOfRange : Error {
  using Error::Error;
};
struct BadShape : Error {
  using Error::Error;
};
struct EpochOutOfRange : Error {
  using Error::Error;
};
struct EmptyDataset : Error {
  using Error::Error;
};
struct IoFailure : Error {
  using Error::Error;
};
struct VersionMismatch : Error {
  using Error::Error;
};
struct CorruptCheckpoint : Error {
  using Error::Error;
};
struct MissingFile : Error {
  using Error::Error;
};
struct BadLabelRow : Error {
  using Error::Error;
};
struct NonContiguousLabels : Error {
  using Error::Error;
};
struct DatasetTooSmall : Error {
  using Error::Error;
};
struct TooManyClasses : Error {
  using Error::Error;
};
struct KOutOfRange : Error {
  using Error::Error;
};
struct ClassSetMismatch : Error {
  using Error::Error;
};

}  // namespace flora
