#pragma once
///@file Builder identities and attestation signatures (Ed25519).

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lila/error.hpp"
#include "lila/store_path.hpp"

namespace lila {

class InvalidKeyName : public Error
{
public:
    using Error::Error;
};

class MissingSecretKey : public Error
{
public:
    using Error::Error;
};

class MalformedKey : public Error
{
public:
    using Error::Error;
};

class MalformedSignature : public Error
{
public:
    using Error::Error;
};

/* Key names double as the attestation user_id: 1-64 characters from
   [a-zA-Z0-9._-], so they can never contain the `:` separator used in
   rendered forms. */
bool is_valid_key_name(std::string_view name);

using PublicKeyBytes = std::array<std::uint8_t, 32>;
using SecretKeyBytes = std::array<std::uint8_t, 32>;
using SignatureBytes = std::array<std::uint8_t, 64>;

struct PublicKey
{
    std::string name;
    PublicKeyBytes bytes{};

    /* `<name>:<base64(bytes)>` */
    std::string render() const;
    static PublicKey parse(std::string_view s);

    bool operator==(const PublicKey &) const = default;
};

/* A named signing identity. The secret part is present client side only;
   rendered secret form is `<name>:<base64(secret ++ public)>`. */
struct BuilderKey
{
    std::string name;
    PublicKeyBytes public_key{};
    std::optional<SecretKeyBytes> secret_key;

    PublicKey public_part() const { return {name, public_key}; }

    std::string render_public() const { return public_part().render(); }
    std::string render_secret() const;

    static BuilderKey parse_secret(std::string_view s);

    /* Single-line rendered secret form on disk, created mode 0600. */
    static BuilderKey load_secret_file(const std::filesystem::path & path);
    void save_secret_file(const std::filesystem::path & path) const;
};

struct Signature
{
    std::string key_name;
    SignatureBytes bytes{};

    /* `<key_name>:<base64(bytes)>` */
    std::string render() const;
    static Signature parse(std::string_view s);

    bool operator==(const Signature &) const = default;
};

/* Deterministic given a seed; fresh randomness otherwise. */
BuilderKey keygen(std::string name, std::optional<SecretKeyBytes> seed = std::nullopt);

/* The byte string an attestation signs:
   `lila-1;<drv_id>;<output_path>;<output_hash>` with all three rendered. */
std::string fingerprint(const DrvId & drv_id, const StorePath & output_path, const OutputHash & output_hash);

/* Raw Ed25519 primitives over arbitrary messages. sign() and verify()
   below are these applied to fingerprint(). */
SignatureBytes sign_bytes(const BuilderKey & key, std::span<const std::uint8_t> message);
bool verify_bytes(const PublicKeyBytes & pub, const SignatureBytes & sig, std::span<const std::uint8_t> message);

Signature sign(
    const BuilderKey & key, const DrvId & drv_id, const StorePath & output_path, const OutputHash & output_hash);

/* True iff sig.bytes verifies the fingerprint under pub AND the signature
   is bound to the same key name. */
bool verify(
    const PublicKey & pub,
    const Signature & sig,
    const DrvId & drv_id,
    const StorePath & output_path,
    const OutputHash & output_hash);

/* base64 helpers (standard alphabet, padded). decode throws on malformed
   input or unexpected decoded length. */
std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view s);

}
