#include "lila/client.hpp"

#include "lila/archive.hpp"

#include <httplib.h>
#include <sodium.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace lila {

namespace fs = std::filesystem;

HookEnv read_hook_env(const EnvMap & env, std::string_view store_prefix)
{
    auto get = [&](const char * name) -> const std::string & {
        auto it = env.find(name);
        if (it == env.end())
            throw MissingEnvVar(std::string(name) + " is not set");
        return it->second;
    };

    auto prefix = std::string(store_prefix);
    HookEnv hook{DrvId::parse(get("DRV_PATH"), prefix), {}};

    std::istringstream outs(get("OUT_PATHS"));
    std::string word;
    while (outs >> word)
        hook.out_paths.push_back(StorePath::parse(word, prefix));
    if (hook.out_paths.empty())
        throw MissingEnvVar("OUT_PATHS is empty");
    return hook;
}

EnvMap hook_env_from_process()
{
    EnvMap env;
    for (const char * name : {"DRV_PATH", "OUT_PATHS"})
        if (const char * value = std::getenv(name))
            env[name] = value;
    return env;
}

std::vector<AttestationRecord> build_attestations(const HookEnv & env, const BuilderKey & key)
{
    std::vector<AttestationRecord> records;
    records.reserve(env.out_paths.size());
    for (auto & out_path : env.out_paths) {
        AttestationRecord record;
        record.drv_id = env.drv_path;
        record.output_path = out_path;
        record.output_hash = hash_tree(fs::path(out_path.render()));
        record.output_sig = sign(key, record.drv_id, record.output_path, record.output_hash);
        if (!verify(key.public_part(), record.output_sig, record.drv_id, record.output_path, record.output_hash))
            throw Error("freshly signed attestation fails self-verification — corrupt key material?");
        records.push_back(std::move(record));
    }
    return records;
}

namespace {

/* Splits "http://host:port" (optionally with trailing path) into the base
   httplib wants. httplib::Client accepts scheme://host:port directly. */
httplib::Client make_client(const ClientConfig & config)
{
    httplib::Client http(config.server_url);
    http.set_connection_timeout(5, 0);
    http.set_read_timeout(10, 0);
    http.set_write_timeout(10, 0);
    http.set_default_headers({{"Authorization", "Bearer " + config.token}});
    return http;
}

SubmitResult classify_response(const httplib::Result & res, const std::string & what)
{
    if (!res) {
        std::cerr << "lila: " << what << ": " << httplib::to_string(res.error()) << ", spooling\n";
        return SubmitResult::spooled;
    }
    if (res->status >= 200 && res->status < 300)
        return SubmitResult::sent;
    if (res->status >= 500) {
        std::cerr << "lila: " << what << ": server error " << res->status << ", spooling\n";
        return SubmitResult::spooled;
    }
    std::cerr << "lila: " << what << ": permanently rejected (" << res->status << "): " << res->body << "\n";
    return SubmitResult::rejected;
}

void write_spool_file(const AttestationRecord & record, const ClientConfig & config)
{
    fs::create_directories(config.spool_dir);
    auto final_path = config.spool_dir / spool_file_name(record);
    auto tmp_path = final_path;
    tmp_path += ".tmp." + std::to_string(randombytes_random());

    {
        std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot write spool file: " + tmp_path.string());
        out << record.to_json();
        out.flush();
        if (!out)
            throw IoError("short write to spool file: " + tmp_path.string());
    }
    fs::rename(tmp_path, final_path); // atomic: concurrent writers of the same record agree on content
}

}

std::string spool_file_name(const AttestationRecord & record)
{
    auto fp = record.fingerprint();
    unsigned char digest[crypto_hash_sha256_BYTES];
    crypto_hash_sha256(digest, reinterpret_cast<const unsigned char *>(fp.data()), fp.size());
    char hex[crypto_hash_sha256_BYTES * 2 + 1];
    sodium_bin2hex(hex, sizeof(hex), digest, sizeof(digest));
    return std::string(hex) + ".json";
}

SubmitResult submit_one(const AttestationRecord & record, const ClientConfig & config)
{
    auto http = make_client(config);
    auto path = "/attestation/" + record.drv_id.drv_hash();
    auto res = http.Post(path, record.to_json(), "application/json");
    return classify_response(res, "POST " + path);
}

SubmitSummary submit_or_spool(const std::vector<AttestationRecord> & records, const ClientConfig & config)
{
    SubmitSummary summary;
    for (auto & record : records) {
        switch (submit_one(record, config)) {
        case SubmitResult::sent:
            ++summary.sent;
            break;
        case SubmitResult::spooled:
            write_spool_file(record, config);
            ++summary.spooled;
            break;
        case SubmitResult::rejected:
            break; // logged by submit_one; never spooled
        }
    }
    return summary;
}

FlushSummary flush_spool(const ClientConfig & config)
{
    FlushSummary summary;
    if (!fs::is_directory(config.spool_dir))
        return summary;

    struct Entry
    {
        fs::path path;
        fs::file_time_type mtime;
    };
    std::vector<Entry> entries;
    for (auto & de : fs::directory_iterator(config.spool_dir)) {
        if (!de.is_regular_file() || de.path().extension() != ".json")
            continue;
        entries.push_back({de.path(), de.last_write_time()});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry & a, const Entry & b) {
        return std::tie(a.mtime, a.path.native()) < std::tie(b.mtime, b.path.native());
    });

    for (auto & entry : entries) {
        std::ifstream in(entry.path, std::ios::binary);
        if (!in)
            continue; // racing flush may have removed it
        std::ostringstream buf;
        buf << in.rdbuf();

        AttestationRecord record;
        try {
            record = AttestationRecord::from_json(buf.str());
        } catch (const Error & e) {
            std::cerr << "lila: spool file " << entry.path << " is corrupt (" << e.what() << "), removing\n";
            fs::remove(entry.path);
            continue;
        }

        switch (submit_one(record, config)) {
        case SubmitResult::sent:
            ++summary.sent;
            fs::remove(entry.path);
            break;
        case SubmitResult::rejected:
            fs::remove(entry.path); // permanent: retrying cannot help
            break;
        case SubmitResult::spooled:
            ++summary.remaining; // transient: leave in place for the next flush
            break;
        }
    }
    return summary;
}

}
