#include "lila/signing.hpp"

#include <sodium.h>

#include <fstream>
#include <mutex>

namespace lila {

static void ensure_sodium()
{
    static std::once_flag flag;
    std::call_once(flag, [] {
        if (sodium_init() < 0)
            throw Error("libsodium initialization failed");
    });
}

bool is_valid_key_name(std::string_view name)
{
    if (name.empty() || name.size() > 64)
        return false;
    for (char c : name)
        if (!((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9')
              || c == '.' || c == '_' || c == '-'))
            return false;
    return true;
}

std::string base64_encode(std::span<const std::uint8_t> bytes)
{
    // encoded_len includes the NUL terminator
    std::string out(sodium_base64_encoded_len(bytes.size(), sodium_base64_VARIANT_ORIGINAL), '\0');
    sodium_bin2base64(
        out.data(), out.size(), bytes.data(), bytes.size(), sodium_base64_VARIANT_ORIGINAL);
    out.resize(out.size() - 1);
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view s)
{
    std::vector<std::uint8_t> out(s.size() / 4 * 3 + 3);
    std::size_t written = 0;
    if (sodium_base642bin(
            out.data(), out.size(), s.data(), s.size(), nullptr, &written, nullptr,
            sodium_base64_VARIANT_ORIGINAL)
        != 0)
        throw MalformedKey("invalid base64");
    out.resize(written);
    return out;
}

/* Splits `<name>:<base64>` and decodes the payload to an expected length. */
static std::pair<std::string, std::vector<std::uint8_t>>
parse_named_blob(std::string_view s, std::size_t expected_len, const char * what)
{
    auto colon = s.find(':');
    if (colon == std::string_view::npos)
        throw MalformedKey(std::string(what) + " '" + std::string(s) + "' lacks a ':' separator");
    auto name = std::string(s.substr(0, colon));
    if (!is_valid_key_name(name))
        throw MalformedKey(std::string(what) + " has invalid key name '" + name + "'");
    auto bytes = base64_decode(s.substr(colon + 1));
    if (bytes.size() != expected_len)
        throw MalformedKey(
            std::string(what) + " payload is " + std::to_string(bytes.size()) + " bytes, expected "
            + std::to_string(expected_len));
    return {std::move(name), std::move(bytes)};
}

std::string PublicKey::render() const
{
    return name + ":" + base64_encode(bytes);
}

PublicKey PublicKey::parse(std::string_view s)
{
    auto [name, raw] = parse_named_blob(s, crypto_sign_PUBLICKEYBYTES, "public key");
    PublicKey key{std::move(name), {}};
    std::copy(raw.begin(), raw.end(), key.bytes.begin());
    return key;
}

std::string BuilderKey::render_secret() const
{
    if (!secret_key)
        throw MissingSecretKey("key '" + name + "' has no secret part");
    std::array<std::uint8_t, 64> blob{};
    std::copy(secret_key->begin(), secret_key->end(), blob.begin());
    std::copy(public_key.begin(), public_key.end(), blob.begin() + 32);
    return name + ":" + base64_encode(blob);
}

BuilderKey BuilderKey::parse_secret(std::string_view s)
{
    auto [name, raw] = parse_named_blob(s, 64, "secret key");
    BuilderKey key;
    key.name = std::move(name);
    SecretKeyBytes seed{};
    std::copy(raw.begin(), raw.begin() + 32, seed.begin());
    std::copy(raw.begin() + 32, raw.end(), key.public_key.begin());
    key.secret_key = seed;

    // the stored public half must be the one the seed derives
    auto derived = keygen(key.name, seed);
    if (derived.public_key != key.public_key)
        throw MalformedKey("secret key for '" + key.name + "' does not match its public half");
    return key;
}

BuilderKey BuilderKey::load_secret_file(const std::filesystem::path & path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot read key file '" + path.string() + "'");
    std::string line;
    std::getline(in, line);
    if (!line.empty() && line.back() == '\r')
        line.pop_back();
    return parse_secret(line);
}

void BuilderKey::save_secret_file(const std::filesystem::path & path) const
{
    auto rendered = render_secret();
    {
        std::ofstream out(path, std::ios::trunc);
        if (!out)
            throw IoError("cannot write key file '" + path.string() + "'");
        out << rendered << "\n";
    }
    std::filesystem::permissions(
        path, std::filesystem::perms::owner_read | std::filesystem::perms::owner_write);
}

std::string Signature::render() const
{
    return key_name + ":" + base64_encode(bytes);
}

Signature Signature::parse(std::string_view s)
{
    try {
        auto [name, raw] = parse_named_blob(s, crypto_sign_BYTES, "signature");
        Signature sig{std::move(name), {}};
        std::copy(raw.begin(), raw.end(), sig.bytes.begin());
        return sig;
    } catch (const MalformedKey & e) {
        throw MalformedSignature(e.what());
    }
}

BuilderKey keygen(std::string name, std::optional<SecretKeyBytes> seed)
{
    ensure_sodium();
    if (!is_valid_key_name(name))
        throw InvalidKeyName("invalid key name '" + name + "'");

    SecretKeyBytes actual_seed{};
    if (seed)
        actual_seed = *seed;
    else
        randombytes_buf(actual_seed.data(), actual_seed.size());

    unsigned char pk[crypto_sign_PUBLICKEYBYTES];
    unsigned char sk[crypto_sign_SECRETKEYBYTES];
    crypto_sign_seed_keypair(pk, sk, actual_seed.data());

    BuilderKey key;
    key.name = std::move(name);
    std::copy(pk, pk + crypto_sign_PUBLICKEYBYTES, key.public_key.begin());
    key.secret_key = actual_seed;
    return key;
}

std::string fingerprint(const DrvId & drv_id, const StorePath & output_path, const OutputHash & output_hash)
{
    return "lila-1;" + drv_id.render() + ";" + output_path.render() + ";" + output_hash.render();
}

SignatureBytes sign_bytes(const BuilderKey & key, std::span<const std::uint8_t> message)
{
    ensure_sodium();
    if (!key.secret_key)
        throw MissingSecretKey("key '" + key.name + "' has no secret part");

    // libsodium's secret key layout is seed ++ public key
    unsigned char sk[crypto_sign_SECRETKEYBYTES];
    std::copy(key.secret_key->begin(), key.secret_key->end(), sk);
    std::copy(key.public_key.begin(), key.public_key.end(), sk + 32);

    static const std::uint8_t empty = 0;
    SignatureBytes sig{};
    crypto_sign_detached(
        sig.data(), nullptr, message.empty() ? &empty : message.data(), message.size(), sk);
    sodium_memzero(sk, sizeof(sk));
    return sig;
}

bool verify_bytes(const PublicKeyBytes & pub, const SignatureBytes & sig, std::span<const std::uint8_t> message)
{
    ensure_sodium();
    static const std::uint8_t empty = 0;
    return crypto_sign_verify_detached(
               sig.data(), message.empty() ? &empty : message.data(), message.size(), pub.data())
        == 0;
}

Signature sign(
    const BuilderKey & key, const DrvId & drv_id, const StorePath & output_path, const OutputHash & output_hash)
{
    auto msg = fingerprint(drv_id, output_path, output_hash);
    auto bytes = sign_bytes(
        key, std::span(reinterpret_cast<const std::uint8_t *>(msg.data()), msg.size()));
    return Signature{key.name, bytes};
}

bool verify(
    const PublicKey & pub,
    const Signature & sig,
    const DrvId & drv_id,
    const StorePath & output_path,
    const OutputHash & output_hash)
{
    if (sig.key_name != pub.name)
        return false;
    auto msg = fingerprint(drv_id, output_path, output_hash);
    return verify_bytes(
        pub.bytes, sig.bytes,
        std::span(reinterpret_cast<const std::uint8_t *>(msg.data()), msg.size()));
}

}
