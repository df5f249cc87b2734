#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace arinspect {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A value violates a domain invariant (non-unit quaternion, negative area, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Structured text could not be decoded. `where()` names the field path or line.
class ParseError : public Error {
public:
    ParseError(std::string where, const std::string& what)
        : Error(where.empty() ? what : where + ": " + what), where_(std::move(where)) {}

    const std::string& where() const noexcept { return where_; }

private:
    std::string where_;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

/// Model registration exceeds the polygon or byte budget.
class LimitExceededError : public Error {
public:
    using Error::Error;
};

/// Same key registered twice with different content.
class ConflictError : public Error {
public:
    using Error::Error;
};

/// A QR token that resolves to nothing. The message is meant for the headset user.
class UnknownTokenError : public Error {
public:
    explicit UnknownTokenError(const std::string& token)
        : Error("unknown model token '" + token + "': please scan a different QR code"),
          token_(token) {}

    const std::string& token() const noexcept { return token_; }

private:
    std::string token_;
};

/// Event submitted to a sealed session, or to a session the client never joined.
class SessionError : public Error {
public:
    using Error::Error;
};

class SealedError : public SessionError {
public:
    using SessionError::SessionError;
};

/// Transport went away mid-request. Retriable.
class DisconnectedError : public Error {
public:
    using Error::Error;
};

}  // namespace arinspect
