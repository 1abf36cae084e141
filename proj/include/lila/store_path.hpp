#pragma once
///@file Store paths, derivation ids and content hashes.

#include <optional>
#include <string>
#include <string_view>

#include "lila/error.hpp"

namespace lila {

class MalformedStorePath : public Error
{
public:
    using Error::Error;
};

class MalformedHash : public Error
{
public:
    using Error::Error;
};

/* The 32 characters a store path digest may consist of. This is the
   base32 alphabet the store uses for derivation hashes; note that
   `e`, `o`, `u` and `t` are deliberately absent. */
extern const std::string digest_alphabet;

constexpr std::size_t digest_length = 32;

bool is_valid_digest(std::string_view digest);
bool is_valid_path_name(std::string_view name);

/* A content-store path of the form `<store_prefix>/<digest>-<name>`.
   The digest is treated as an opaque identifier; lila validates the
   character set only and never recomputes it. */
class StorePath
{
public:
    static constexpr std::string_view default_prefix = "/nix/store";

    /* An empty placeholder; every real StorePath comes from the validating
       constructor or a parse. Assign-into-it call sites only. */
    StorePath() = default;

    StorePath(std::string store_prefix, std::string digest, std::string name);

    /* Parse a rendered path against a fixed store prefix. */
    static StorePath parse(std::string_view s, std::string_view store_prefix = default_prefix);

    /* Parse a rendered path whose prefix is not known in advance: anything
       up to the final `/` is taken as the prefix. Used on the server, where
       clients may legitimately run against relocated stores. */
    static StorePath parse_any(std::string_view s);

    const std::string & store_prefix() const { return store_prefix_; }
    const std::string & digest() const { return digest_; }
    const std::string & name() const { return name_; }

    std::string render() const;

    bool operator==(const StorePath &) const = default;

private:
    std::string store_prefix_;
    std::string digest_;
    std::string name_;
};

/* A store path naming a derivation; its name carries the `.drv` suffix
   and its digest is the `{drv_hash}` URL segment. */
class DrvId
{
public:
    DrvId() = default;

    explicit DrvId(StorePath path);

    static DrvId parse(std::string_view s, std::string_view store_prefix = StorePath::default_prefix);
    static DrvId parse_any(std::string_view s);

    const StorePath & path() const { return path_; }
    const std::string & drv_hash() const { return path_.digest(); }

    std::string render() const { return path_.render(); }

    bool operator==(const DrvId &) const = default;

private:
    StorePath path_;
};

/* sha256 over the canonical archive encoding of an output's contents,
   rendered as `sha256:<64 lowercase hex digits>`. Unlike the store path
   digest this is a hash of the built artifact itself. */
class OutputHash
{
public:
    OutputHash() = default;

    explicit OutputHash(std::string hex);

    static OutputHash parse(std::string_view s);

    const std::string & hex() const { return hex_; }

    std::string render() const { return "sha256:" + hex_; }

    bool operator==(const OutputHash &) const = default;

private:
    std::string hex_;
};

/* Classification of an output or derivation. `unknown` only ever arises
   client side (no attestations at all); aggregation rules live in
   reports.hpp and are deliberately not an ordering on this enum. */
enum class ReproStatus {
    unknown,
    unconfirmed,
    reproducible,
    nonreproducible,
};

std::string_view to_string(ReproStatus status);
std::optional<ReproStatus> repro_status_from_string(std::string_view s);

}
