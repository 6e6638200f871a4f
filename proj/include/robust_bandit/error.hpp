#pragma once

#include <stdexcept>
#include <string>

namespace robust_bandit {

// Every failure raised by the library carries a short machine-readable code
// ("duplicate_arm", "schema_mismatch", ...) next to the human message.
class bandit_error : public std::runtime_error {
public:
    bandit_error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

}  // namespace robust_bandit
