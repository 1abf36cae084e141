#pragma once
///@file HTTP aggregation service.

#include <memory>
#include <optional>
#include <string>

#include "lila/config.hpp"
#include "lila/store.hpp"

namespace lila {

/* The REST surface over a Database. All mutation funnels through the
   store's transactional insert; handlers share no other mutable state.

   POST /attestation/{drv_hash}                  submit (token)
   GET  /attestations/by-output/{output_path}    attestations for an output
   GET  /derivations/                            all known derivations
   GET  /derivations/{drv_hash}                  summary / full set
   GET  /reports                                 report names
   GET  /reports/{name}                          computed report (json|html)
   GET  /reports/{name}/suggested                rebuild worklist (token)
   GET  /keys                                    registered public keys */
class Server
{
public:
    Server(Database & db, ServerConfig config);
    ~Server();

    Server(const Server &) = delete;
    Server & operator=(const Server &) = delete;

    /* Bind and serve on config.listen; port 0 picks a free port. Blocks
       until stop(). bound_port() is valid once wait_until_ready() returns
       true. */
    bool listen();
    bool wait_until_ready();
    void stop();
    int bound_port() const;

    /* Re-verifies every stored row against the registered public keys;
       returns ids of rows that fail. Used by `lila admin audit` and the
       acceptance suite. */
    static std::vector<std::uint64_t> audit(Database & db);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/* Loads report definition documents (*.json) from the directory into the
   reports table; later files win on duplicate names. Returns the number
   loaded. Missing directory is fine (0). */
std::size_t sync_report_definitions(Database & db, const std::filesystem::path & report_dir);

}
