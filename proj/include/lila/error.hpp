#pragma once

#include <stdexcept>
#include <string>

namespace lila {

/* Base class for all lila errors. Subclasses exist per failure kind so
   callers can catch precisely; the what() string carries the detail. */
class Error : public std::runtime_error
{
public:
    explicit Error(const std::string & msg) : std::runtime_error(msg) {}
};

class IoError : public Error
{
public:
    using Error::Error;
};

}
