#include "lila/archive.hpp"
#include "lila/client.hpp"
#include "lila/config.hpp"
#include "lila/reports.hpp"
#include "lila/server.hpp"

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include <cctype>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

using nlohmann::json;

namespace {

/* 0 success, 1 operational failure, 2 usage/configuration error. */
class UsageError : public lila::Error
{
public:
    using Error::Error;
};

std::filesystem::path resolve_config(const std::string & flag)
{
    if (!flag.empty())
        return flag;
    if (const char * env = std::getenv("LILA_CONFIG"); env && *env)
        return env;
    throw UsageError("no config file: pass --config or set LILA_CONFIG");
}

/* Admin subcommands hit the database directly; accept an explicit --db or
   find it through the server config. */
std::string resolve_database(const std::string & db_flag, const std::string & config_flag)
{
    if (!db_flag.empty())
        return db_flag;
    return lila::load_server_config(resolve_config(config_flag)).database;
}

std::string resolve_server_url(const std::string & server_flag, const std::string & config_flag)
{
    if (!server_flag.empty())
        return server_flag;
    return lila::load_client_config(resolve_config(config_flag)).server_url;
}

std::string read_file(const std::filesystem::path & path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw lila::IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string url_encode(std::string_view text)
{
    static const char * hex = "0123456789ABCDEF";
    std::string out;
    for (unsigned char c : text) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
            out += static_cast<char>(c);
        } else {
            out += '%';
            out += hex[c >> 4];
            out += hex[c & 0xf];
        }
    }
    return out;
}

json record_to_json_doc(const lila::AttestationRecord & record)
{
    return json::parse(record.to_json());
}

int cmd_keygen(const std::string & name, const std::string & out_file)
{
    auto key = lila::keygen(name);
    key.save_secret_file(out_file);
    std::cout << json{{"name", key.name}, {"public_key", key.render_public()}, {"key_file", out_file}}.dump(2)
              << "\n";
    return 0;
}

int cmd_hook(const std::string & config_flag)
{
    lila::ClientConfig config;
    lila::BuilderKey key;
    lila::HookEnv env;
    try {
        config = lila::load_client_config(resolve_config(config_flag));
        key = lila::BuilderKey::load_secret_file(config.key_file);
        env = lila::read_hook_env(lila::hook_env_from_process(), config.store_prefix);
    } catch (const lila::Error & e) {
        std::cerr << "lila hook: " << e.what() << "\n";
        return 2;
    }

    // Hashing failures are operational (exit 1); the network never is: a
    // transient server problem spools and still exits 0, so a monitoring
    // hook cannot fail anyone's build.
    auto records = lila::build_attestations(env, key);
    auto summary = lila::submit_or_spool(records, config);
    std::cout << json{{"sent", summary.sent}, {"spooled", summary.spooled}}.dump(2) << "\n";
    return 0;
}

int cmd_attest(
    const std::string & drv_flag,
    const std::string & key_flag,
    const std::string & config_flag,
    const std::vector<std::string> & paths)
{
    std::string drv_path = drv_flag;
    if (drv_path.empty()) {
        if (const char * env = std::getenv("DRV_PATH"); env && *env)
            drv_path = env;
        else
            throw UsageError("no derivation: pass --drv or set DRV_PATH");
    }

    std::filesystem::path key_file = key_flag;
    if (key_file.empty())
        key_file = lila::load_client_config(resolve_config(config_flag)).key_file;
    auto key = lila::BuilderKey::load_secret_file(key_file);

    lila::HookEnv env;
    env.drv_path = lila::DrvId::parse_any(drv_path);
    for (auto & path : paths)
        env.out_paths.push_back(lila::StorePath::parse_any(path));

    json out = json::array();
    for (auto & record : lila::build_attestations(env, key))
        out.push_back(record_to_json_doc(record));
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_flush(const std::string & config_flag)
{
    auto config = lila::load_client_config(resolve_config(config_flag));
    auto summary = lila::flush_spool(config);
    std::cout << json{{"sent", summary.sent}, {"remaining", summary.remaining}}.dump(2) << "\n";
    return 0;
}

lila::Server * g_server = nullptr;

int cmd_serve(const std::string & config_flag)
{
    auto config = lila::load_server_config(resolve_config(config_flag));
    lila::Database db(config.database);
    lila::Server server(db, config);

    g_server = &server;
    std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
    std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });

    std::thread runner([&] { server.listen(); });
    if (!server.wait_until_ready()) {
        runner.join();
        std::cerr << "lila serve: cannot bind " << config.listen << "\n";
        return 1;
    }

    auto host = lila::parse_listen_address(config.listen).first;
    std::cout << json{{"listening", host + ":" + std::to_string(server.bound_port())}}.dump() << std::endl;
    runner.join();
    g_server = nullptr;
    return 0;
}

int cmd_admin_add_user(const std::string & db_flag, const std::string & config_flag, const std::string & name, const std::string & pubkey)
{
    auto parsed = lila::PublicKey::parse(pubkey);
    if (parsed.name != name)
        throw UsageError("key is named '" + parsed.name + "', not '" + name + "'");
    lila::Database db(resolve_database(db_flag, config_flag));
    db.upsert_user(parsed);
    std::cout << json{{"user_id", parsed.name}, {"public_key", parsed.render()}}.dump(2) << "\n";
    return 0;
}

int cmd_admin_new_token(const std::string & db_flag, const std::string & config_flag, const std::string & name)
{
    lila::Database db(resolve_database(db_flag, config_flag));
    if (!db.get_user(name))
        throw UsageError("unknown user '" + name + "' — add-user first");
    auto token = db.create_token(name);
    // the secret is shown exactly once; only its salted hash is stored
    std::cout << json{{"token_id", token.token_id}, {"secret", token.secret}}.dump(2) << "\n";
    return 0;
}

int cmd_admin_audit(const std::string & db_flag, const std::string & config_flag)
{
    lila::Database db(resolve_database(db_flag, config_flag));
    auto failing = lila::Server::audit(db);
    std::cout << json{{"checked", db.count_attestations()}, {"failing", failing}}.dump(2) << "\n";
    return failing.empty() ? 0 : 1;
}

int cmd_ingest(
    const std::string & file,
    const std::string & user,
    const std::string & key_file,
    const std::string & db_flag,
    const std::string & config_flag)
{
    auto key = lila::BuilderKey::load_secret_file(key_file);
    if (key.name != user)
        throw UsageError("key file is for '" + key.name + "', not --user '" + user + "'");

    lila::Database db(resolve_database(db_flag, config_flag));
    db.upsert_user(key.public_part()); // the CI identity must exist before its rows

    auto outcome = lila::ingest_ci_file(read_file(file), key, db);
    json rejected = json::array();
    for (auto & [line, reason] : outcome.rejected)
        rejected.push_back(json{{"line", line}, {"reason", reason}});
    std::cout << json{{"accepted", outcome.accepted}, {"rejected", std::move(rejected)}}.dump(2) << "\n";
    return 0;
}

int fetch(const std::string & server_url, const std::string & path)
{
    httplib::Client http(server_url);
    http.set_connection_timeout(5, 0);
    http.set_read_timeout(30, 0);
    auto res = http.Get(path);
    if (!res) {
        std::cerr << "lila: GET " << path << ": " << httplib::to_string(res.error()) << "\n";
        return 1;
    }
    if (res->status < 200 || res->status >= 300) {
        std::cerr << "lila: GET " << path << ": HTTP " << res->status << ": " << res->body << "\n";
        return 1;
    }
    std::cout << res->body;
    return 0;
}

int cmd_report(const std::string & name, const std::string & format, const std::string & server_flag, const std::string & config_flag)
{
    if (format != "json" && format != "html")
        throw UsageError("--format must be json or html");
    auto path = "/reports/" + url_encode(name);
    if (format == "html")
        path += "?format=html";
    return fetch(resolve_server_url(server_flag, config_flag), path);
}

int cmd_query_drv(const std::string & hash, const std::string & server_flag, const std::string & config_flag)
{
    return fetch(resolve_server_url(server_flag, config_flag), "/derivations/" + url_encode(hash));
}

int cmd_query_output(const std::string & path, const std::string & server_flag, const std::string & config_flag)
{
    return fetch(resolve_server_url(server_flag, config_flag), "/attestations/by-output/" + url_encode(path));
}

}

int main(int argc, char ** argv)
{
    CLI::App app{"lila — decentralized build reproducibility monitoring"};
    app.require_subcommand(1);

    std::string config_flag, db_flag, server_flag;
    std::string name, out_file, drv_flag, key_flag, pubkey, user, format = "json";
    std::vector<std::string> paths;

    auto * keygen = app.add_subcommand("keygen", "create a builder signing key");
    keygen->add_option("--name", name, "key name (becomes the user id)")->required();
    keygen->add_option("--out", out_file, "secret key file to write")->required();

    auto * hook = app.add_subcommand("hook", "post-build hook: attest $DRV_PATH/$OUT_PATHS and submit");
    hook->add_option("--config", config_flag, "config file (or $LILA_CONFIG)");

    auto * attest = app.add_subcommand("attest", "hash and print attestations without submitting");
    attest->add_option("--drv", drv_flag, "derivation store path (or $DRV_PATH)");
    attest->add_option("--key", key_flag, "secret key file (default: config key_file)");
    attest->add_option("--config", config_flag, "config file (or $LILA_CONFIG)");
    attest->add_option("paths", paths, "output paths to attest")->required();

    auto * flush = app.add_subcommand("flush", "retry spooled attestations");
    flush->add_option("--config", config_flag, "config file (or $LILA_CONFIG)");

    auto * serve = app.add_subcommand("serve", "run the aggregation server");
    serve->add_option("--config", config_flag, "config file (or $LILA_CONFIG)");

    auto * admin = app.add_subcommand("admin", "direct database administration");
    admin->require_subcommand(1);
    auto * add_user = admin->add_subcommand("add-user", "register a builder public key");
    add_user->add_option("name", name, "user id")->required();
    add_user->add_option("pubkey", pubkey, "rendered public key (name:base64)")->required();
    auto * new_token = admin->add_subcommand("new-token", "mint an API token for a user");
    new_token->add_option("name", name, "user id")->required();
    auto * audit = admin->add_subcommand("audit", "re-verify every stored attestation");
    for (auto * sub : {add_user, new_token, audit}) {
        sub->add_option("--db", db_flag, "database file");
        sub->add_option("--config", config_flag, "server config to find the database");
    }

    auto * ingest = app.add_subcommand("ingest", "ingest a CI hash file into the database");
    ingest->add_option("file", out_file, "line-oriented hash file")->required();
    ingest->add_option("--user", user, "CI identity name")->required();
    ingest->add_option("--key", key_flag, "CI secret key file")->required();
    ingest->add_option("--db", db_flag, "database file");
    ingest->add_option("--config", config_flag, "server config to find the database");

    auto * report = app.add_subcommand("report", "fetch a computed report from a server");
    report->add_option("name", name, "report name")->required();
    report->add_option("--format", format, "json or html")->capture_default_str();
    report->add_option("--server", server_flag, "server base URL (default: config server_url)");
    report->add_option("--config", config_flag, "config file (or $LILA_CONFIG)");

    auto * query = app.add_subcommand("query", "query a server");
    query->require_subcommand(1);
    auto * query_drv = query->add_subcommand("drv", "look up a derivation by hash");
    query_drv->add_option("hash", name, "32-character derivation hash")->required();
    auto * query_output = query->add_subcommand("output", "attestations for an output path");
    query_output->add_option("path", name, "output store path")->required();
    for (auto * sub : {query_drv, query_output}) {
        sub->add_option("--server", server_flag, "server base URL (default: config server_url)");
        sub->add_option("--config", config_flag, "config file (or $LILA_CONFIG)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success & e) {
        return app.exit(e); // --help and friends
    } catch (const CLI::ParseError & e) {
        app.exit(e);
        return 2; // usage errors are always 2, whatever the parser thinks
    }

    try {
        if (keygen->parsed())
            return cmd_keygen(name, out_file);
        if (hook->parsed())
            return cmd_hook(config_flag);
        if (attest->parsed())
            return cmd_attest(drv_flag, key_flag, config_flag, paths);
        if (flush->parsed())
            return cmd_flush(config_flag);
        if (serve->parsed())
            return cmd_serve(config_flag);
        if (add_user->parsed())
            return cmd_admin_add_user(db_flag, config_flag, name, pubkey);
        if (new_token->parsed())
            return cmd_admin_new_token(db_flag, config_flag, name);
        if (audit->parsed())
            return cmd_admin_audit(db_flag, config_flag);
        if (ingest->parsed())
            return cmd_ingest(out_file, user, key_flag, db_flag, config_flag);
        if (report->parsed())
            return cmd_report(name, format, server_flag, config_flag);
        if (query_drv->parsed())
            return cmd_query_drv(name, server_flag, config_flag);
        if (query_output->parsed())
            return cmd_query_output(name, server_flag, config_flag);
    } catch (const UsageError & e) {
        std::cerr << "lila: " << e.what() << "\n";
        return 2;
    } catch (const lila::ConfigError & e) {
        std::cerr << "lila: " << e.what() << "\n";
        return 2;
    } catch (const lila::MissingEnvVar & e) {
        std::cerr << "lila: " << e.what() << "\n";
        return 2;
    } catch (const lila::Error & e) {
        std::cerr << "lila: " << e.what() << "\n";
        return 1;
    } catch (const std::exception & e) {
        std::cerr << "lila: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
