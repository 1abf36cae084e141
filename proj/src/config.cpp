#include "lila/config.hpp"

#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

using nlohmann::json;

namespace lila {

namespace {

/* Keys for both roles: one document may configure a machine that is both
   builder and server, so neither loader treats the other's keys as typos. */
const std::set<std::string> known_keys{
    "server_url", "token", "key_file", "spool_dir", "store_prefix", // client
    "listen", "database", "report_dir", "ci_user",                  // server
};

json load_document(const std::filesystem::path & path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();

    json doc;
    try {
        doc = json::parse(buf.str());
    } catch (const json::exception & e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    if (!doc.is_object())
        throw ConfigError("config file " + path.string() + " must contain a JSON object");

    for (auto & [key, value] : doc.items()) {
        if (!known_keys.count(key))
            throw ConfigError("unknown config key '" + key + "' in " + path.string());
        if (!value.is_string())
            throw ConfigError("config key '" + key + "' must be a string");
    }
    return doc;
}

std::string require(const json & doc, const char * key, const std::filesystem::path & path)
{
    auto it = doc.find(key);
    if (it == doc.end() || it->get<std::string>().empty())
        throw ConfigError(std::string("config key '") + key + "' missing in " + path.string());
    return it->get<std::string>();
}

std::optional<std::string> optional_key(const json & doc, const char * key)
{
    auto it = doc.find(key);
    if (it == doc.end())
        return std::nullopt;
    return it->get<std::string>();
}

}

ClientConfig load_client_config(const std::filesystem::path & path)
{
    auto doc = load_document(path);
    ClientConfig config;
    config.server_url = require(doc, "server_url", path);
    config.key_file = require(doc, "key_file", path);
    config.spool_dir = require(doc, "spool_dir", path);
    if (auto prefix = optional_key(doc, "store_prefix"))
        config.store_prefix = *prefix;

    if (const char * env_token = std::getenv("LILA_TOKEN"); env_token && *env_token)
        config.token = env_token;
    else
        config.token = require(doc, "token", path);
    return config;
}

ServerConfig load_server_config(const std::filesystem::path & path)
{
    auto doc = load_document(path);
    ServerConfig config;
    config.database = require(doc, "database", path);
    if (auto listen = optional_key(doc, "listen"))
        config.listen = *listen;
    if (auto dir = optional_key(doc, "report_dir"))
        config.report_dir = *dir;
    config.ci_user = optional_key(doc, "ci_user");
    parse_listen_address(config.listen); // fail early on nonsense
    return config;
}

std::pair<std::string, int> parse_listen_address(const std::string & listen)
{
    auto colon = listen.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == listen.size())
        throw ConfigError("listen address must be host:port, got '" + listen + "'");
    auto host = listen.substr(0, colon);
    auto port_text = listen.substr(colon + 1);
    int port = 0;
    for (char c : port_text) {
        if (c < '0' || c > '9')
            throw ConfigError("listen port is not a number in '" + listen + "'");
        port = port * 10 + (c - '0');
        if (port > 65535)
            throw ConfigError("listen port out of range in '" + listen + "'");
    }
    return {host, port};
}

}
