#pragma once

#include <stdexcept>
#include <string>

namespace fedadapt {

// Error taxonomy. Configuration errors mean the caller asked for something
// inconsistent (bad shapes, bad indices, bad config values); data errors mean
// the dataset contents cannot satisfy the request; format errors mean a file
// on disk is malformed; internal errors indicate a broken invariant inside
// the library itself.

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

class InternalError : public std::runtime_error {
public:
    explicit InternalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Two representations are not comparable (different channel selectors).
class ComparisonError : public std::runtime_error {
public:
    explicit ComparisonError(const std::string& msg) : std::runtime_error(msg) {}
};

// A pipeline stage failed; carries the stage name for diagnostics.
class StageError : public std::runtime_error {
public:
    StageError(const std::string& stage, const std::string& msg)
        : std::runtime_error(stage + ": " + msg), stage_(stage) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

}  // namespace fedadapt
