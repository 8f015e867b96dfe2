#pragma once

#include <stdexcept>
#include <string>

namespace omni {

enum class ErrorKind {
    dimension,      // shape / extent mismatch
    domain,         // argument outside its mathematical domain
    config,         // inconsistent or unknown configuration
    input,          // malformed or insufficient user input
    numeric,        // non-finite or otherwise invalid numeric state
    io,             // file missing / unreadable / bad magic
    state,          // object used outside its contract
    hash_mismatch,  // checkpoint pairing violated
    internal,
};

const char* error_kind_name(ErrorKind k);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
    throw Error(kind, msg);
}

inline void check(bool ok, ErrorKind kind, const std::string& msg) {
    if (!ok) {
        fail(kind, msg);
    }
}

}  // namespace omni
