#pragma once
///@file Attestation records: the client-produced statement and the stored row.

#include <cstdint>
#include <string>

#include "lila/signing.hpp"
#include "lila/store_path.hpp"

namespace lila {

class MalformedSubmission : public Error
{
public:
    using Error::Error;
};

/* What a builder produces for one output of one build: the signed binding
   of derivation, output path and content hash. This is also the POST body
   and the spool file schema (see to_json/from_json). */
struct AttestationRecord
{
    DrvId drv_id;
    StorePath output_path;
    OutputHash output_hash;
    Signature output_sig;

    std::string fingerprint() const;

    /* JSON object with exactly the members output_path, output_hash,
       output_sig, drv_path; anything else is rejected on parse. */
    std::string to_json() const;
    static AttestationRecord from_json(std::string_view body);

    bool operator==(const AttestationRecord &) const = default;
};

/* A record as persisted by the server: id and received_at are assigned on
   insert, user_id comes from the submitting token. */
struct StoredAttestation
{
    std::uint64_t id = 0;
    std::string drv_path;
    std::string drv_hash;
    std::string output_path;
    std::string user_id;
    std::string output_hash;
    std::string output_sig;
    std::int64_t received_at = 0;

    bool operator==(const StoredAttestation &) const = default;
};

}
