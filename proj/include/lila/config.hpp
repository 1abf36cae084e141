#pragma once
///@file Client and server configuration documents.

#include <filesystem>
#include <optional>
#include <string>

#include "lila/error.hpp"

namespace lila {

class ConfigError : public Error
{
public:
    using Error::Error;
};

/* Both roles read the same JSON document; each role requires only its own
   keys, so one file can configure a machine that is both builder and
   server. Unknown keys are rejected to catch typos. */
struct ClientConfig
{
    std::string server_url;
    std::string token;
    std::filesystem::path key_file;
    std::filesystem::path spool_dir;
    std::string store_prefix = "/nix/store";
};

struct ServerConfig
{
    std::string listen = "127.0.0.1:8383";
    std::string database;
    std::optional<std::filesystem::path> report_dir;
    std::optional<std::string> ci_user;
};

/* env overrides: LILA_TOKEN supplies/replaces the client token. The token
   key may then be absent from the file entirely. */
ClientConfig load_client_config(const std::filesystem::path & path);
ServerConfig load_server_config(const std::filesystem::path & path);

/* Splits `host:port`; throws ConfigError on nonsense. */
std::pair<std::string, int> parse_listen_address(const std::string & listen);

}
