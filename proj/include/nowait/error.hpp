#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nowait {

enum class ErrorCode {
    file_not_found,
    malformed_format,
    duplicate_id,
    empty_vocabulary,
    empty_keyword_list,
    id_out_of_range,
    invalid_argument,
    missing_frequency_file,
    conflict,
    bad_request,
    too_many_choices,
    non_positive_baseline,
    empty_corpus,
    config_error,
    io_error,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string & message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace nowait
