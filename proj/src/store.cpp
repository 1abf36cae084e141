#include "lila/store.hpp"

#include <sodium.h>
#include <sqlite3.h>

#include <cstring>
#include <mutex>

namespace lila {

namespace {

std::string to_hex(const unsigned char * data, std::size_t len)
{
    std::string out(len * 2 + 1, '\0');
    sodium_bin2hex(out.data(), out.size(), data, len);
    out.resize(len * 2);
    return out;
}

std::vector<unsigned char> from_hex(std::string_view hex)
{
    std::vector<unsigned char> out(hex.size() / 2 + 1);
    std::size_t written = 0;
    if (sodium_hex2bin(out.data(), out.size(), hex.data(), hex.size(), nullptr, &written, nullptr) != 0)
        throw StorageError("invalid hex in database");
    out.resize(written);
    return out;
}

/* sha256(salt ++ secret), both raw bytes. */
std::string token_hash(std::span<const unsigned char> salt, std::span<const unsigned char> secret)
{
    crypto_hash_sha256_state state;
    crypto_hash_sha256_init(&state);
    crypto_hash_sha256_update(&state, salt.data(), salt.size());
    crypto_hash_sha256_update(&state, secret.data(), secret.size());
    unsigned char digest[crypto_hash_sha256_BYTES];
    crypto_hash_sha256_final(&state, digest);
    return to_hex(digest, sizeof(digest));
}

struct Stmt
{
    sqlite3_stmt * stmt = nullptr;

    Stmt(sqlite3 * db, const char * sql)
    {
        if (sqlite3_prepare_v2(db, sql, -1, &stmt, nullptr) != SQLITE_OK)
            throw StorageError(std::string("prepare failed: ") + sqlite3_errmsg(db) + " in: " + sql);
    }

    ~Stmt() { sqlite3_finalize(stmt); }

    Stmt(const Stmt &) = delete;
    Stmt & operator=(const Stmt &) = delete;

    Stmt & bind(int idx, const std::string & text)
    {
        sqlite3_bind_text(stmt, idx, text.c_str(), static_cast<int>(text.size()), SQLITE_TRANSIENT);
        return *this;
    }

    Stmt & bind(int idx, std::int64_t value)
    {
        sqlite3_bind_int64(stmt, idx, value);
        return *this;
    }

    /* True if a row is available. */
    bool step(sqlite3 * db)
    {
        int rc = sqlite3_step(stmt);
        if (rc == SQLITE_ROW)
            return true;
        if (rc == SQLITE_DONE)
            return false;
        throw StorageError(std::string("step failed: ") + sqlite3_errmsg(db));
    }

    std::string column_text(int idx) const
    {
        auto * p = sqlite3_column_text(stmt, idx);
        return p ? reinterpret_cast<const char *>(p) : "";
    }

    std::int64_t column_int64(int idx) const { return sqlite3_column_int64(stmt, idx); }
};

constexpr int schema_version = 1;

const char * schema_sql = R"sql(
CREATE TABLE IF NOT EXISTS schema_version (
    version INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS users (
    user_id    TEXT PRIMARY KEY,
    public_key TEXT NOT NULL,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS tokens (
    token_id    TEXT PRIMARY KEY,
    secret_hash TEXT NOT NULL,
    salt        TEXT NOT NULL,
    user_id     TEXT NOT NULL REFERENCES users(user_id),
    created_at  INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS attestations (
    id          INTEGER PRIMARY KEY AUTOINCREMENT,
    drv_path    TEXT NOT NULL,
    drv_hash    TEXT NOT NULL,
    output_path TEXT NOT NULL,
    user_id     TEXT NOT NULL REFERENCES users(user_id),
    output_hash TEXT NOT NULL,
    output_sig  TEXT NOT NULL,
    received_at INTEGER NOT NULL,
    UNIQUE (drv_path, output_path, user_id, output_hash)
);
CREATE INDEX IF NOT EXISTS idx_attestations_drv_hash ON attestations(drv_hash);
CREATE INDEX IF NOT EXISTS idx_attestations_output_path ON attestations(output_path);
CREATE TABLE IF NOT EXISTS reports (
    name       TEXT PRIMARY KEY,
    definition TEXT NOT NULL
);
)sql";

}

struct Database::Impl
{
    sqlite3 * db = nullptr;
    mutable std::mutex mutex;

    ~Impl()
    {
        if (db)
            sqlite3_close(db);
    }

    void exec(const char * sql)
    {
        char * err = nullptr;
        if (sqlite3_exec(db, sql, nullptr, nullptr, &err) != SQLITE_OK) {
            std::string msg = err ? err : "unknown error";
            sqlite3_free(err);
            throw StorageError("exec failed: " + msg);
        }
    }

    StoredAttestation row_from(const Stmt & s) const
    {
        StoredAttestation row;
        row.id = static_cast<std::uint64_t>(s.column_int64(0));
        row.drv_path = s.column_text(1);
        row.drv_hash = s.column_text(2);
        row.output_path = s.column_text(3);
        row.user_id = s.column_text(4);
        row.output_hash = s.column_text(5);
        row.output_sig = s.column_text(6);
        row.received_at = s.column_int64(7);
        return row;
    }

    /* Insert one record inside whatever transaction context is active.
       created=false means the uniqueness constraint matched an existing
       row, which is then returned unchanged. */
    InsertResult insert_one(const AttestationRecord & record, const std::string & user_id, std::int64_t received_at)
    {
        auto drv_path = record.drv_id.render();
        auto output_path = record.output_path.render();
        auto output_hash = record.output_hash.render();

        Stmt ins(
            db,
            "INSERT INTO attestations (drv_path, drv_hash, output_path, user_id, output_hash, output_sig, received_at) "
            "VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7) "
            "ON CONFLICT (drv_path, output_path, user_id, output_hash) DO NOTHING "
            "RETURNING id");
        ins.bind(1, drv_path)
            .bind(2, record.drv_id.drv_hash())
            .bind(3, output_path)
            .bind(4, user_id)
            .bind(5, output_hash)
            .bind(6, record.output_sig.render())
            .bind(7, received_at);

        if (ins.step(db)) {
            StoredAttestation row;
            row.id = static_cast<std::uint64_t>(ins.column_int64(0));
            // RETURNING emits its row before constraint enforcement finishes;
            // stepping to completion surfaces e.g. foreign key violations.
            ins.step(db);
            row.drv_path = drv_path;
            row.drv_hash = record.drv_id.drv_hash();
            row.output_path = output_path;
            row.user_id = user_id;
            row.output_hash = output_hash;
            row.output_sig = record.output_sig.render();
            row.received_at = received_at;
            return {std::move(row), true};
        }

        Stmt sel(
            db,
            "SELECT id, drv_path, drv_hash, output_path, user_id, output_hash, output_sig, received_at "
            "FROM attestations WHERE drv_path = ?1 AND output_path = ?2 AND user_id = ?3 AND output_hash = ?4");
        sel.bind(1, drv_path).bind(2, output_path).bind(3, user_id).bind(4, output_hash);
        if (!sel.step(db))
            throw StorageError("conflicting attestation row vanished");
        return {row_from(sel), false};
    }
};

Database::Database(const std::string & path)
    : impl_(std::make_unique<Impl>())
{
    if (sodium_init() < 0)
        throw StorageError("libsodium initialization failed");

    int flags = SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX;
    if (sqlite3_open_v2(path.c_str(), &impl_->db, flags, nullptr) != SQLITE_OK) {
        std::string msg = impl_->db ? sqlite3_errmsg(impl_->db) : "out of memory";
        throw StorageError("cannot open database '" + path + "': " + msg);
    }

    impl_->exec("PRAGMA journal_mode = WAL");
    impl_->exec("PRAGMA synchronous = NORMAL");
    impl_->exec("PRAGMA foreign_keys = ON");
    impl_->exec("PRAGMA busy_timeout = 10000");

    impl_->exec("BEGIN IMMEDIATE");
    try {
        impl_->exec(schema_sql);
        Stmt ver(impl_->db, "SELECT version FROM schema_version");
        if (ver.step(impl_->db)) {
            auto found = ver.column_int64(0);
            if (found != schema_version)
                throw StorageError(
                    "database schema version " + std::to_string(found) + " unsupported (want "
                    + std::to_string(schema_version) + ")");
        } else {
            Stmt init(impl_->db, "INSERT INTO schema_version (version) VALUES (?1)");
            init.bind(1, static_cast<std::int64_t>(schema_version));
            init.step(impl_->db);
        }
        impl_->exec("COMMIT");
    } catch (...) {
        impl_->exec("ROLLBACK");
        throw;
    }
}

Database::~Database() = default;

void Database::upsert_user(const PublicKey & key)
{
    std::lock_guard lock(impl_->mutex);
    Stmt s(
        impl_->db,
        "INSERT INTO users (user_id, public_key, created_at) VALUES (?1, ?2, CAST(strftime('%s','now') AS INTEGER)) "
        "ON CONFLICT (user_id) DO UPDATE SET public_key = excluded.public_key");
    s.bind(1, key.name).bind(2, key.render());
    s.step(impl_->db);
}

std::optional<UserRow> Database::get_user(const std::string & user_id) const
{
    std::lock_guard lock(impl_->mutex);
    Stmt s(impl_->db, "SELECT user_id, public_key, created_at FROM users WHERE user_id = ?1");
    s.bind(1, user_id);
    if (!s.step(impl_->db))
        return std::nullopt;
    return UserRow{s.column_text(0), s.column_text(1), s.column_int64(2)};
}

std::vector<UserRow> Database::list_users() const
{
    std::lock_guard lock(impl_->mutex);
    Stmt s(impl_->db, "SELECT user_id, public_key, created_at FROM users ORDER BY user_id");
    std::vector<UserRow> out;
    while (s.step(impl_->db))
        out.push_back(UserRow{s.column_text(0), s.column_text(1), s.column_int64(2)});
    return out;
}

CreatedToken Database::create_token(const std::string & user_id)
{
    std::lock_guard lock(impl_->mutex);

    unsigned char id_bytes[8], salt[16], secret[32];
    randombytes_buf(id_bytes, sizeof(id_bytes));
    randombytes_buf(salt, sizeof(salt));
    randombytes_buf(secret, sizeof(secret));

    auto token_id = to_hex(id_bytes, sizeof(id_bytes));
    auto hash = token_hash({salt, sizeof(salt)}, {secret, sizeof(secret)});

    Stmt s(
        impl_->db,
        "INSERT INTO tokens (token_id, secret_hash, salt, user_id, created_at) "
        "VALUES (?1, ?2, ?3, ?4, CAST(strftime('%s','now') AS INTEGER))");
    s.bind(1, token_id).bind(2, hash).bind(3, to_hex(salt, sizeof(salt))).bind(4, user_id);
    s.step(impl_->db);

    return CreatedToken{token_id, token_id + "." + to_hex(secret, sizeof(secret))};
}

std::optional<std::string> Database::verify_token(const std::string & bearer_secret) const
{
    auto dot = bearer_secret.find('.');
    if (dot == std::string::npos)
        return std::nullopt;
    auto token_id = bearer_secret.substr(0, dot);
    auto secret_hex = bearer_secret.substr(dot + 1);

    std::vector<unsigned char> secret;
    try {
        secret = from_hex(secret_hex);
    } catch (const StorageError &) {
        return std::nullopt;
    }

    std::lock_guard lock(impl_->mutex);
    Stmt s(impl_->db, "SELECT secret_hash, salt, user_id FROM tokens WHERE token_id = ?1");
    s.bind(1, token_id);
    if (!s.step(impl_->db))
        return std::nullopt;

    auto stored_hash = s.column_text(0);
    auto salt = from_hex(s.column_text(1));
    auto computed = token_hash(salt, secret);
    if (stored_hash.size() != computed.size()
        || sodium_memcmp(stored_hash.data(), computed.data(), computed.size()) != 0)
        return std::nullopt;
    return s.column_text(2);
}

InsertResult Database::insert_attestation(const AttestationRecord & record, const std::string & user_id, std::int64_t received_at)
{
    std::lock_guard lock(impl_->mutex);
    return impl_->insert_one(record, user_id, received_at);
}

std::vector<bool> Database::insert_batch(
    const std::vector<std::pair<AttestationRecord, std::int64_t>> & records, const std::string & user_id)
{
    std::lock_guard lock(impl_->mutex);
    std::vector<bool> created;
    created.reserve(records.size());
    impl_->exec("BEGIN IMMEDIATE");
    try {
        for (auto & [record, received_at] : records)
            created.push_back(impl_->insert_one(record, user_id, received_at).created);
        impl_->exec("COMMIT");
    } catch (...) {
        impl_->exec("ROLLBACK");
        throw;
    }
    return created;
}

static const char * select_attestation_columns =
    "SELECT id, drv_path, drv_hash, output_path, user_id, output_hash, output_sig, received_at FROM attestations ";

std::vector<StoredAttestation> Database::query_by_output(
    const std::string & output_path, std::size_t limit, std::optional<std::uint64_t> after_id) const
{
    std::lock_guard lock(impl_->mutex);
    std::vector<StoredAttestation> out;

    std::optional<std::pair<std::int64_t, std::int64_t>> anchor; // (received_at, id)
    if (after_id) {
        Stmt a(impl_->db, "SELECT received_at, id FROM attestations WHERE id = ?1");
        a.bind(1, static_cast<std::int64_t>(*after_id));
        if (!a.step(impl_->db))
            return out; // unknown anchor: empty page
        anchor = {a.column_int64(0), a.column_int64(1)};
    }

    std::string sql = std::string(select_attestation_columns) + "WHERE output_path = ?1 ";
    if (anchor)
        sql += "AND (received_at > ?3 OR (received_at = ?3 AND id > ?4)) ";
    sql += "ORDER BY received_at, id LIMIT ?2";

    Stmt s(impl_->db, sql.c_str());
    s.bind(1, output_path).bind(2, static_cast<std::int64_t>(limit));
    if (anchor)
        s.bind(3, anchor->first).bind(4, anchor->second);
    while (s.step(impl_->db))
        out.push_back(impl_->row_from(s));
    return out;
}

std::vector<StoredAttestation> Database::query_by_drv(const std::string & drv_hash) const
{
    std::lock_guard lock(impl_->mutex);
    std::string sql = std::string(select_attestation_columns) + "WHERE drv_hash = ?1 ORDER BY received_at, id";
    Stmt s(impl_->db, sql.c_str());
    s.bind(1, drv_hash);
    std::vector<StoredAttestation> out;
    while (s.step(impl_->db))
        out.push_back(impl_->row_from(s));
    return out;
}

std::vector<DrvRow> Database::list_drvs(std::size_t limit, std::optional<std::string> after) const
{
    std::lock_guard lock(impl_->mutex);
    std::string sql = "SELECT DISTINCT drv_hash, drv_path FROM attestations ";
    if (after)
        sql += "WHERE drv_hash > ?2 ";
    sql += "ORDER BY drv_hash, drv_path LIMIT ?1";
    Stmt s(impl_->db, sql.c_str());
    s.bind(1, static_cast<std::int64_t>(limit));
    if (after)
        s.bind(2, *after);
    std::vector<DrvRow> out;
    while (s.step(impl_->db))
        out.push_back(DrvRow{s.column_text(0), s.column_text(1)});
    return out;
}

std::vector<StoredAttestation> Database::all_attestations() const
{
    std::lock_guard lock(impl_->mutex);
    std::string sql = std::string(select_attestation_columns) + "ORDER BY id";
    Stmt s(impl_->db, sql.c_str());
    std::vector<StoredAttestation> out;
    while (s.step(impl_->db))
        out.push_back(impl_->row_from(s));
    return out;
}

std::uint64_t Database::count_attestations() const
{
    std::lock_guard lock(impl_->mutex);
    Stmt s(impl_->db, "SELECT COUNT(*) FROM attestations");
    s.step(impl_->db);
    return static_cast<std::uint64_t>(s.column_int64(0));
}

void Database::upsert_report(const std::string & name, const std::string & definition_document)
{
    std::lock_guard lock(impl_->mutex);
    Stmt s(
        impl_->db,
        "INSERT INTO reports (name, definition) VALUES (?1, ?2) "
        "ON CONFLICT (name) DO UPDATE SET definition = excluded.definition");
    s.bind(1, name).bind(2, definition_document);
    s.step(impl_->db);
}

std::optional<std::string> Database::get_report(const std::string & name) const
{
    std::lock_guard lock(impl_->mutex);
    Stmt s(impl_->db, "SELECT definition FROM reports WHERE name = ?1");
    s.bind(1, name);
    if (!s.step(impl_->db))
        return std::nullopt;
    return s.column_text(0);
}

std::vector<std::pair<std::string, std::string>> Database::list_reports() const
{
    std::lock_guard lock(impl_->mutex);
    Stmt s(impl_->db, "SELECT name, definition FROM reports ORDER BY name");
    std::vector<std::pair<std::string, std::string>> out;
    while (s.step(impl_->db))
        out.emplace_back(s.column_text(0), s.column_text(1));
    return out;
}

}
