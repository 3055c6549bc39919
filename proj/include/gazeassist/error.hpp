#pragma once

#include <stdexcept>
#include <string>

namespace gaze {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input stream is not time-sorted or frame indices skip/repeat.
class StreamOrderError : public Error {
public:
    using Error::Error;
};

// A line or document failed to parse; message names the line.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class NonFiniteError : public Error {
public:
    explicit NonFiniteError(const std::string& layer)
        : Error("non-finite activation in " + layer), layer_(layer) {}
    const std::string& layer() const { return layer_; }

private:
    std::string layer_;
};

class DataError : public Error {
public:
    using Error::Error;
};

class InferenceError : public Error {
public:
    using Error::Error;
};

class PlanningError : public Error {
public:
    using Error::Error;
};

class ReplayError : public Error {
public:
    ReplayError(long long seq, const std::string& what)
        : Error("seq " + std::to_string(seq) + ": " + what), seq_(seq) {}
    long long seq() const { return seq_; }

private:
    long long seq_;
};

}  // namespace gaze
