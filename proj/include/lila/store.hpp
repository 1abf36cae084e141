#pragma once
///@file Durable persistence: users, tokens, attestations, report definitions.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lila/attestation.hpp"
#include "lila/error.hpp"

struct sqlite3;

namespace lila {

class StorageError : public Error
{
public:
    using Error::Error;
};

struct UserRow
{
    std::string user_id;
    std::string public_key; // rendered `<name>:<base64>`
    std::int64_t created_at = 0;
};

struct CreatedToken
{
    std::string token_id;
    std::string secret; // full bearer string; shown once, never stored
};

struct InsertResult
{
    StoredAttestation row;
    bool created = false;
};

struct DrvRow
{
    std::string drv_hash;
    std::string drv_path;
};

/* Embedded relational store (SQLite, WAL). One Database object may be used
   from many threads; uniqueness races are resolved by the engine's
   constraint, never by pre-checking. Attestation rows are append-only. */
class Database
{
public:
    explicit Database(const std::string & path);
    ~Database();

    Database(const Database &) = delete;
    Database & operator=(const Database &) = delete;

    // -- users ---------------------------------------------------------

    void upsert_user(const PublicKey & key);
    std::optional<UserRow> get_user(const std::string & user_id) const;
    std::vector<UserRow> list_users() const;

    // -- tokens --------------------------------------------------------

    /* Mints a bearer secret for user_id. Only a salted hash is stored. */
    CreatedToken create_token(const std::string & user_id);

    /* Constant-time comparison against the stored hash; returns the bound
       user_id on success. */
    std::optional<std::string> verify_token(const std::string & bearer_secret) const;

    // -- attestations ---------------------------------------------------

    /* Transactional insert. The caller has already verified the signature.
       On a uniqueness collision the existing row is returned with
       created=false. */
    InsertResult insert_attestation(const AttestationRecord & record, const std::string & user_id, std::int64_t received_at);

    /* Rows for one output path, ordered by (received_at, id) ascending.
       after_id resumes after the row with that id; unknown ids yield an
       empty page. */
    std::vector<StoredAttestation> query_by_output(const std::string & output_path, std::size_t limit, std::optional<std::uint64_t> after_id = std::nullopt) const;

    std::vector<StoredAttestation> query_by_drv(const std::string & drv_hash) const;

    /* Distinct derivations ever attested, ordered by drv_hash; `after`
       resumes strictly past that hash. */
    std::vector<DrvRow> list_drvs(std::size_t limit, std::optional<std::string> after = std::nullopt) const;

    /* Consistent snapshot of everything, for report computation. */
    std::vector<StoredAttestation> all_attestations() const;

    std::uint64_t count_attestations() const;

    /* Batched transactional insert used by CI ingestion; returns created
       flags in input order. */
    std::vector<bool> insert_batch(const std::vector<std::pair<AttestationRecord, std::int64_t>> & records, const std::string & user_id);

    // -- report definitions ---------------------------------------------

    void upsert_report(const std::string & name, const std::string & definition_document);
    std::optional<std::string> get_report(const std::string & name) const;
    std::vector<std::pair<std::string, std::string>> list_reports() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}
