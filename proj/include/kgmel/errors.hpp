#pragma once

#include <stdexcept>
#include <string>

namespace kgmel {

// Error categories map 1:1 onto CLI exit codes (see tools/main.cpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration: bad config file, flag, or client setup. Exit 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Invalid or inconsistent data: malformed input files, violated invariants. Exit 3.
class DataError : public Error {
public:
    using Error::Error;
};

// External service failure after retries. Exit 4.
class ServiceError : public Error {
public:
    using Error::Error;
};

// Training produced a non-finite loss. Exit 5.
class DivergenceError : public Error {
public:
    using Error::Error;
};

// Lookup miss that carries the missing key.
class NotFoundError : public DataError {
public:
    explicit NotFoundError(std::string key, const std::string& what_prefix = "key not found")
        : DataError(what_prefix + ": \"" + key + "\""), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

} // namespace kgmel
