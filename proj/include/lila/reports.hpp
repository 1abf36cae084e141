#pragma once
///@file Reproducibility classification, package-set reports, regression
/// detection, rebuild suggestions and CI hash ingestion.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lila/attestation.hpp"
#include "lila/store.hpp"

namespace lila {

class MixedKeyInput : public Error
{
public:
    using Error::Error;
};

class EmptyInput : public Error
{
public:
    using Error::Error;
};

class UnknownUser : public Error
{
public:
    using Error::Error;
};

class MalformedReportDefinition : public Error
{
public:
    using Error::Error;
};

/* A derivation is in scope iff it matches at least one selector. */
struct Selector
{
    enum class Kind { drv_hash_is, name_matches };

    Kind kind = Kind::name_matches;
    std::string pattern; // exact 32-char digest, or a `*`/`?` glob over the drv name

    bool matches(const std::string & drv_hash, const std::string & drv_name) const;
};

constexpr int default_quorum = 3;

struct ReportDefinition
{
    std::string name;
    std::string description;
    std::vector<Selector> selectors;
    int quorum = default_quorum;

    bool in_scope(const std::string & drv_hash, const std::string & drv_name) const;

    std::string to_json() const;
    static ReportDefinition from_json(std::string_view document);
};

struct ReportRow
{
    std::string drv_hash;
    std::string name; // drv store path name
    ReproStatus status = ReproStatus::unknown;
    int distinct_builders = 0;
    std::int64_t last_seen = 0;
};

struct Regression
{
    std::string stem;
    std::string earlier_drv_hash; // reproducible
    std::string later_drv_hash;   // nonreproducible
};

struct ComputedReport
{
    std::string name;
    std::int64_t generated_at = 0;
    std::map<ReproStatus, std::size_t> totals;
    std::optional<double> rate; // reproducible / (reproducible + nonreproducible)
    std::vector<ReportRow> rows;
};

/* `*` and `?` glob match over bytes; no character classes. */
bool glob_match(std::string_view pattern, std::string_view text);

/* Name with its trailing version-like suffix removed: the longest suffix
   matching `-[0-9][A-Za-z0-9.]*`. Bridges "package" talk to stored
   derivations; crude but documented. */
std::string name_stem(std::string_view name);

/* Classification of one (drv, output) from its attestations:
     no records                              -> unknown
     >= 2 distinct hashes (any submitters)   -> nonreproducible
     1 hash from >= 2 distinct builders      -> reproducible
     1 hash from exactly 1 builder           -> unconfirmed
   Divergence from a single builder still counts: it proves nondeterminism. */
ReproStatus classify_output(std::span<const StoredAttestation> records);

/* Any output nonreproducible -> nonreproducible; else any output not yet
   reproducible -> unconfirmed; else reproducible. */
ReproStatus classify_derivation(const std::map<std::string, ReproStatus> & per_output);

/* Per-derivation view assembled from a snapshot. */
struct DrvObservation
{
    std::string drv_hash;
    std::string drv_path;
    std::string drv_name;
    std::map<std::string, ReproStatus> per_output;
    ReproStatus status = ReproStatus::unknown;
    int distinct_builders = 0;
    std::int64_t first_seen = 0;
    std::int64_t last_seen = 0;
};

std::vector<DrvObservation> observe_derivations(std::span<const StoredAttestation> snapshot);

ComputedReport compute_report(const ReportDefinition & defn, std::span<const StoredAttestation> snapshot, std::int64_t generated_at);

/* Within each name stem, derivations ordered by the time each was first
   seen; a nonreproducible derivation preceded by a reproducible one is a
   regression, reported against the latest reproducible predecessor. */
std::vector<Regression> detect_regressions(const ReportDefinition & defn, std::span<const StoredAttestation> snapshot);

struct RebuildSuggestion
{
    std::string drv_hash;
    std::string drv_path;
    int distinct_builders = 0;
};

/* In-scope derivations the requesting user has not attested and that are
   still unconfirmed, or reproducible with fewer than `quorum` distinct
   builders. Nonreproducible ones are excluded: more rebuilds add nothing.
   Ordered by ascending (distinct_builders, drv_hash). */
std::vector<RebuildSuggestion> suggest_rebuilds(
    const ReportDefinition & defn,
    std::span<const StoredAttestation> snapshot,
    const std::string & requesting_user,
    std::size_t limit = 100);

struct IngestOutcome
{
    std::size_t accepted = 0;
    std::vector<std::pair<std::size_t, std::string>> rejected; // (1-based line, reason)
};

/* Line format: `<drv_path> <output_path> <sha256:hex>`, single spaces,
   `#` comments and blank lines skipped. Valid lines are signed under the
   CI identity and inserted idempotently; processing continues past bad
   lines. */
IngestOutcome ingest_ci_file(std::string_view contents, const BuilderKey & ci_key, Database & db);

/* The verbatim markup behind `?format=html`: totals, rate, per-derivation
   table and the regression list. Same data as the JSON, second
   serialization. */
std::string render_report_html(const ComputedReport & report, const std::string & description, std::span<const Regression> regressions);

}
