#include "lila/store_path.hpp"

#include <algorithm>

namespace lila {

const std::string digest_alphabet = "0123456789abcdfghijklmnpqrsvwxyz";

bool is_valid_digest(std::string_view digest)
{
    return digest.size() == digest_length
        && std::all_of(digest.begin(), digest.end(), [](char c) {
               return digest_alphabet.find(c) != std::string::npos;
           });
}

static bool is_name_char(char c)
{
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')
        || c == '+' || c == '.' || c == '_' || c == '?' || c == '=' || c == '-';
}

bool is_valid_path_name(std::string_view name)
{
    return !name.empty() && name[0] != '.' && std::all_of(name.begin(), name.end(), is_name_char);
}

StorePath::StorePath(std::string store_prefix, std::string digest, std::string name)
    : store_prefix_(std::move(store_prefix))
    , digest_(std::move(digest))
    , name_(std::move(name))
{
    if (store_prefix_.empty())
        throw MalformedStorePath("empty store prefix");
    if (!is_valid_digest(digest_))
        throw MalformedStorePath("invalid digest '" + digest_ + "'");
    if (!is_valid_path_name(name_))
        throw MalformedStorePath("invalid store path name '" + name_ + "'");
}

static StorePath parse_tail(std::string_view s, std::string_view prefix, std::string_view tail)
{
    // tail is everything past `<prefix>/`, expected as `<digest>-<name>`
    if (tail.size() < digest_length + 2 || tail[digest_length] != '-')
        throw MalformedStorePath("store path '" + std::string(s) + "' lacks a <digest>-<name> tail");
    auto digest = tail.substr(0, digest_length);
    auto name = tail.substr(digest_length + 1);
    if (!is_valid_digest(digest))
        throw MalformedStorePath("store path '" + std::string(s) + "' has an invalid digest");
    if (!is_valid_path_name(name))
        throw MalformedStorePath("store path '" + std::string(s) + "' has an invalid name");
    return StorePath(std::string(prefix), std::string(digest), std::string(name));
}

StorePath StorePath::parse(std::string_view s, std::string_view store_prefix)
{
    if (store_prefix.empty())
        throw MalformedStorePath("empty store prefix");
    if (s.size() <= store_prefix.size() + 1 || !s.starts_with(store_prefix)
        || s[store_prefix.size()] != '/')
        throw MalformedStorePath(
            "path '" + std::string(s) + "' is not inside store '" + std::string(store_prefix) + "'");
    return parse_tail(s, store_prefix, s.substr(store_prefix.size() + 1));
}

StorePath StorePath::parse_any(std::string_view s)
{
    auto slash = s.rfind('/');
    if (slash == std::string_view::npos || slash == 0)
        throw MalformedStorePath("path '" + std::string(s) + "' has no store prefix");
    return parse_tail(s, s.substr(0, slash), s.substr(slash + 1));
}

std::string StorePath::render() const
{
    return store_prefix_ + "/" + digest_ + "-" + name_;
}

DrvId::DrvId(StorePath path)
    : path_(std::move(path))
{
    if (!path_.name().ends_with(".drv"))
        throw MalformedStorePath("path '" + path_.render() + "' does not name a derivation");
}

DrvId DrvId::parse(std::string_view s, std::string_view store_prefix)
{
    return DrvId(StorePath::parse(s, store_prefix));
}

DrvId DrvId::parse_any(std::string_view s)
{
    return DrvId(StorePath::parse_any(s));
}

OutputHash::OutputHash(std::string hex)
    : hex_(std::move(hex))
{
    bool ok = hex_.size() == 64 && std::all_of(hex_.begin(), hex_.end(), [](char c) {
                  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
              });
    if (!ok)
        throw MalformedHash("invalid sha256 hex '" + hex_ + "'");
}

OutputHash OutputHash::parse(std::string_view s)
{
    constexpr std::string_view prefix = "sha256:";
    if (!s.starts_with(prefix))
        throw MalformedHash("output hash '" + std::string(s) + "' lacks the sha256: prefix");
    return OutputHash(std::string(s.substr(prefix.size())));
}

std::string_view to_string(ReproStatus status)
{
    switch (status) {
    case ReproStatus::unknown: return "unknown";
    case ReproStatus::unconfirmed: return "unconfirmed";
    case ReproStatus::reproducible: return "reproducible";
    case ReproStatus::nonreproducible: return "nonreproducible";
    }
    return "unknown";
}

std::optional<ReproStatus> repro_status_from_string(std::string_view s)
{
    if (s == "unknown") return ReproStatus::unknown;
    if (s == "unconfirmed") return ReproStatus::unconfirmed;
    if (s == "reproducible") return ReproStatus::reproducible;
    if (s == "nonreproducible") return ReproStatus::nonreproducible;
    return std::nullopt;
}

}
