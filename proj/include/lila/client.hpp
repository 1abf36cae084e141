#pragma once
///@file Builder-side agent: post-build-hook capture, attestation building,
/// submission with offline spooling.

#include <map>
#include <string>
#include <vector>

#include "lila/attestation.hpp"
#include "lila/config.hpp"
#include "lila/signing.hpp"

namespace lila {

class MissingEnvVar : public Error
{
public:
    using Error::Error;
};

/* What the package manager hands the post-build hook: DRV_PATH (one path)
   and OUT_PATHS (space-separated, non-empty). */
struct HookEnv
{
    DrvId drv_path;
    std::vector<StorePath> out_paths;
};

using EnvMap = std::map<std::string, std::string>;

HookEnv read_hook_env(const EnvMap & env, std::string_view store_prefix);

/* Snapshot of the current process environment for the two hook variables. */
EnvMap hook_env_from_process();

/* One record per output, in OUT_PATHS order, each self-checked against the
   local public key before it leaves. All-or-nothing: any hashing failure
   aborts the whole batch so the server never sees half a build. */
std::vector<AttestationRecord> build_attestations(const HookEnv & env, const BuilderKey & key);

struct SubmitSummary
{
    std::size_t sent = 0;
    std::size_t spooled = 0;
};

enum class SubmitResult {
    sent,      // 2xx
    spooled,   // network failure or 5xx; record kept for flush
    rejected,  // 4xx: permanent, logged, dropped
};

SubmitResult submit_one(const AttestationRecord & record, const ClientConfig & config);

/* POST each record; transient failures land in spool_dir as one JSON file
   named after the fingerprint hash, so re-spooling a duplicate is a no-op.
   4xx responses are dropped (logged to stderr), never spooled. */
SubmitSummary submit_or_spool(const std::vector<AttestationRecord> & records, const ClientConfig & config);

struct FlushSummary
{
    std::size_t sent = 0;
    std::size_t remaining = 0;
};

/* Replays spooled files oldest first. Sent and permanently rejected files
   are removed; transient failures stay put. Safe to run while new spool
   files appear. */
FlushSummary flush_spool(const ClientConfig & config);

/* Spool file name for a record: <sha256(fingerprint)>.json */
std::string spool_file_name(const AttestationRecord & record);

}
