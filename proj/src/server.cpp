#include "lila/server.hpp"

#include "lila/reports.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <condition_variable>
#include <ctime>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

using nlohmann::json;

namespace lila {

namespace {

void respond_json(httplib::Response & res, int status, const json & body)
{
    res.status = status;
    res.set_content(body.dump(2) + "\n", "application/json");
}

void respond_error(httplib::Response & res, int status, const std::string & message)
{
    respond_json(res, status, json{{"error", message}});
}

json row_to_json(const StoredAttestation & row)
{
    return json{
        {"id", row.id},
        {"drv_path", row.drv_path},
        {"drv_hash", row.drv_hash},
        {"output_path", row.output_path},
        {"user_id", row.user_id},
        {"output_hash", row.output_hash},
        {"output_sig", row.output_sig},
        {"received_at", row.received_at},
    };
}

json report_to_json(const ComputedReport & report, std::span<const Regression> regressions)
{
    json totals = json::object();
    for (auto & [status, count] : report.totals)
        totals[to_string(status)] = count;

    json rows = json::array();
    for (auto & row : report.rows)
        rows.push_back(json{
            {"drv_hash", row.drv_hash},
            {"name", row.name},
            {"status", to_string(row.status)},
            {"distinct_builders", row.distinct_builders},
            {"last_seen", row.last_seen},
        });

    json regs = json::array();
    for (auto & reg : regressions)
        regs.push_back(json{
            {"stem", reg.stem},
            {"earlier_drv_hash", reg.earlier_drv_hash},
            {"later_drv_hash", reg.later_drv_hash},
        });

    return json{
        {"name", report.name},
        {"generated_at", report.generated_at},
        {"totals", std::move(totals)},
        {"rate", report.rate ? json(*report.rate) : json(nullptr)},
        {"rows", std::move(rows)},
        {"regressions", std::move(regs)},
    };
}

/* Non-negative integer query parameter with a default; nullopt = malformed. */
std::optional<std::uint64_t> uint_param(const httplib::Request & req, const char * name, std::uint64_t fallback)
{
    if (!req.has_param(name))
        return fallback;
    auto text = req.get_param_value(name);
    if (text.empty() || text.size() > 18)
        return std::nullopt;
    std::uint64_t value = 0;
    for (char c : text) {
        if (c < '0' || c > '9')
            return std::nullopt;
        value = value * 10 + static_cast<std::uint64_t>(c - '0');
    }
    return value;
}

}

struct Server::Impl
{
    Database & db;
    ServerConfig config;
    httplib::Server svr;

    std::mutex mutex;
    std::condition_variable cv;
    int bound_port = -1;
    bool bind_done = false;
    bool bind_failed = false;

    Impl(Database & db, ServerConfig config)
        : db(db)
        , config(std::move(config))
    {
    }

    std::optional<std::string> authenticate(const httplib::Request & req)
    {
        auto header = req.get_header_value("Authorization");
        const std::string prefix = "Bearer ";
        if (header.rfind(prefix, 0) != 0)
            return std::nullopt;
        return db.verify_token(header.substr(prefix.size()));
    }

    void sync_reports()
    {
        if (config.report_dir)
            sync_report_definitions(db, *config.report_dir);
    }

    /* One derivation's observation, or nothing if never attested. Rows for
       the digest are narrowed to a single drv_path; distinct paths sharing
       a digest would mean a digest collision, so first path wins. */
    std::optional<DrvObservation> observe_one(const std::string & drv_hash, std::vector<StoredAttestation> & rows_out)
    {
        auto rows = db.query_by_drv(drv_hash);
        if (rows.empty())
            return std::nullopt;
        auto observations = observe_derivations(rows);
        auto & chosen = observations.front();
        rows.erase(
            std::remove_if(
                rows.begin(), rows.end(),
                [&](const StoredAttestation & r) { return r.drv_path != chosen.drv_path; }),
            rows.end());
        rows_out = std::move(rows);
        return chosen;
    }

    void handle_post_attestation(const httplib::Request & req, httplib::Response & res)
    {
        auto user = authenticate(req);
        if (!user)
            return respond_error(res, 401, "missing or invalid bearer token");

        auto url_hash = req.matches[1].str();
        if (!is_valid_digest(url_hash))
            return respond_error(res, 400, "malformed derivation hash in URL");

        AttestationRecord record;
        try {
            record = AttestationRecord::from_json(req.body);
        } catch (const Error & e) {
            return respond_error(res, 400, e.what());
        }
        if (record.drv_id.drv_hash() != url_hash)
            return respond_error(
                res, 400, "URL derivation hash does not match drv_path digest " + record.drv_id.drv_hash());

        if (record.output_sig.key_name != *user)
            return respond_error(
                res, 422, "signature key '" + record.output_sig.key_name + "' is not the token's user '" + *user + "'");
        auto user_row = db.get_user(*user);
        if (!user_row)
            return respond_error(res, 422, "no public key registered for user " + *user);
        auto pub = PublicKey::parse(user_row->public_key);
        if (!verify(pub, record.output_sig, record.drv_id, record.output_path, record.output_hash))
            return respond_error(res, 422, "signature does not verify under the registered public key");

        auto result = db.insert_attestation(record, *user, static_cast<std::int64_t>(std::time(nullptr)));
        respond_json(res, result.created ? 201 : 200, row_to_json(result.row));
    }

    void handle_by_output(const httplib::Request & req, httplib::Response & res)
    {
        StorePath path;
        try {
            path = StorePath::parse_any(req.matches[1].str());
        } catch (const Error & e) {
            return respond_error(res, 400, e.what());
        }

        auto limit = uint_param(req, "limit", 100);
        auto after_id = uint_param(req, "after_id", 0);
        if (!limit || !after_id)
            return respond_error(res, 400, "malformed pagination parameter");

        std::optional<std::uint64_t> after;
        if (req.has_param("after_id"))
            after = *after_id;

        json out = json::array();
        for (auto & row : db.query_by_output(path.render(), std::min<std::uint64_t>(*limit, 1000), after))
            out.push_back(row_to_json(row));
        respond_json(res, 200, out);
    }

    void handle_list_drvs(const httplib::Request & req, httplib::Response & res)
    {
        auto limit = uint_param(req, "limit", 100);
        if (!limit)
            return respond_error(res, 400, "malformed pagination parameter");
        std::optional<std::string> after;
        if (req.has_param("after"))
            after = req.get_param_value("after");

        json out = json::array();
        for (auto & drv : db.list_drvs(std::min<std::uint64_t>(*limit, 1000), after)) {
            auto rows = db.query_by_drv(drv.drv_hash);
            std::vector<StoredAttestation> mine;
            for (auto & r : rows)
                if (r.drv_path == drv.drv_path)
                    mine.push_back(r);
            auto observations = observe_derivations(mine);
            if (observations.empty())
                continue; // raced with nothing: list_drvs saw it, rows gone — impossible (append-only)
            auto & obs = observations.front();
            out.push_back(json{
                {"drv_hash", obs.drv_hash},
                {"drv_path", obs.drv_path},
                {"status", to_string(obs.status)},
                {"attestation_count", mine.size()},
                {"distinct_builders", obs.distinct_builders},
            });
        }
        respond_json(res, 200, out);
    }

    void handle_get_drv(const httplib::Request & req, httplib::Response & res)
    {
        auto drv_hash = req.matches[1].str();
        if (!is_valid_digest(drv_hash))
            return respond_error(res, 400, "malformed derivation hash");

        std::vector<StoredAttestation> rows;
        auto obs = observe_one(drv_hash, rows);
        if (!obs)
            return respond_error(res, 404, "derivation never attested");

        json per_output = json::object();
        for (auto & [output_path, status] : obs->per_output)
            per_output[output_path] = to_string(status);

        json summary{
            {"drv_hash", obs->drv_hash},
            {"drv_path", obs->drv_path},
            {"status", to_string(obs->status)},
            {"per_output", std::move(per_output)},
            {"attestation_count", rows.size()},
            {"distinct_builders", obs->distinct_builders},
            {"first_seen", obs->first_seen},
            {"last_seen", obs->last_seen},
        };

        json out{{"summary", std::move(summary)}};
        if (req.get_param_value("summary") != "true") {
            json grouped = json::object();
            for (auto & row : rows)
                grouped[row.output_path].push_back(row_to_json(row));
            out["attestations"] = std::move(grouped);
        }
        respond_json(res, 200, out);
    }

    void handle_list_reports(const httplib::Request &, httplib::Response & res)
    {
        sync_reports();
        json out = json::array();
        for (auto & [name, document] : db.list_reports()) {
            try {
                auto defn = ReportDefinition::from_json(document);
                out.push_back(json{{"name", name}, {"description", defn.description}});
            } catch (const Error &) {
                // unreadable stored definition: surface its existence, at least
                out.push_back(json{{"name", name}, {"description", ""}});
            }
        }
        respond_json(res, 200, out);
    }

    std::optional<ReportDefinition> load_report(const std::string & name, httplib::Response & res)
    {
        sync_reports();
        auto document = db.get_report(name);
        if (!document) {
            respond_error(res, 404, "no report named '" + name + "'");
            return std::nullopt;
        }
        return ReportDefinition::from_json(*document);
    }

    void handle_get_report(const httplib::Request & req, httplib::Response & res)
    {
        auto defn = load_report(req.matches[1].str(), res);
        if (!defn)
            return;

        auto snapshot = db.all_attestations();
        auto now = static_cast<std::int64_t>(std::time(nullptr));
        auto report = compute_report(*defn, snapshot, now);
        auto regressions = detect_regressions(*defn, snapshot);

        if (req.get_param_value("format") == "html") {
            res.status = 200;
            res.set_content(render_report_html(report, defn->description, regressions), "text/html");
            return;
        }
        respond_json(res, 200, report_to_json(report, regressions));
    }

    void handle_suggested(const httplib::Request & req, httplib::Response & res)
    {
        auto user = authenticate(req);
        if (!user)
            return respond_error(res, 401, "missing or invalid bearer token");

        auto defn = load_report(req.matches[1].str(), res);
        if (!defn)
            return;
        auto limit = uint_param(req, "limit", 100);
        if (!limit)
            return respond_error(res, 400, "malformed pagination parameter");

        json out = json::array();
        for (auto & s : suggest_rebuilds(*defn, db.all_attestations(), *user, std::min<std::uint64_t>(*limit, 1000)))
            out.push_back(json{
                {"drv_hash", s.drv_hash},
                {"drv_path", s.drv_path},
                {"distinct_builders", s.distinct_builders},
            });
        respond_json(res, 200, out);
    }

    void handle_keys(const httplib::Request &, httplib::Response & res)
    {
        json out = json::array();
        for (auto & user : db.list_users())
            out.push_back(json{{"name", user.user_id}, {"public_key", user.public_key}});
        respond_json(res, 200, out);
    }

    void install_routes()
    {
        svr.set_payload_max_length(1 << 20);

        svr.set_exception_handler([](const httplib::Request &, httplib::Response & res, std::exception_ptr ep) {
            std::string message = "internal error";
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception & e) {
                message = e.what();
            } catch (...) {
            }
            respond_error(res, 500, message);
        });

        auto bind = [this](auto method) {
            return [this, method](const httplib::Request & req, httplib::Response & res) { (this->*method)(req, res); };
        };

        svr.Post(R"(/attestation/([^/]+))", bind(&Impl::handle_post_attestation));
        svr.Get(R"(/attestations/by-output/(.+))", bind(&Impl::handle_by_output));
        svr.Get(R"(/derivations/)", bind(&Impl::handle_list_drvs));
        svr.Get(R"(/derivations/([^/]+))", bind(&Impl::handle_get_drv));
        svr.Get(R"(/reports/?)", bind(&Impl::handle_list_reports));
        svr.Get(R"(/reports/([^/]+)/suggested)", bind(&Impl::handle_suggested));
        svr.Get(R"(/reports/([^/]+))", bind(&Impl::handle_get_report));
        svr.Get(R"(/keys)", bind(&Impl::handle_keys));
    }
};

Server::Server(Database & db, ServerConfig config)
    : impl_(std::make_unique<Impl>(db, std::move(config)))
{
    impl_->install_routes();
    impl_->sync_reports();
}

Server::~Server()
{
    stop();
}

bool Server::listen()
{
    auto [host, port] = parse_listen_address(impl_->config.listen);

    int bound = -1;
    if (port == 0)
        bound = impl_->svr.bind_to_any_port(host);
    else if (impl_->svr.bind_to_port(host, port))
        bound = port;

    {
        std::lock_guard lock(impl_->mutex);
        impl_->bound_port = bound;
        impl_->bind_done = true;
        impl_->bind_failed = bound < 0;
    }
    impl_->cv.notify_all();
    if (bound < 0)
        return false;
    return impl_->svr.listen_after_bind();
}

bool Server::wait_until_ready()
{
    std::unique_lock lock(impl_->mutex);
    impl_->cv.wait(lock, [&] { return impl_->bind_done; });
    return !impl_->bind_failed;
}

void Server::stop()
{
    impl_->svr.stop();
}

int Server::bound_port() const
{
    std::lock_guard lock(impl_->mutex);
    return impl_->bound_port;
}

std::vector<std::uint64_t> Server::audit(Database & db)
{
    std::vector<std::uint64_t> failing;
    std::map<std::string, std::optional<PublicKey>> keys;
    for (auto & user : db.list_users()) {
        try {
            keys[user.user_id] = PublicKey::parse(user.public_key);
        } catch (const Error &) {
            keys[user.user_id] = std::nullopt;
        }
    }

    for (auto & row : db.all_attestations()) {
        bool ok = false;
        try {
            auto it = keys.find(row.user_id);
            if (it != keys.end() && it->second) {
                auto drv = DrvId::parse_any(row.drv_path);
                auto output = StorePath::parse_any(row.output_path);
                auto hash = OutputHash::parse(row.output_hash);
                auto sig = Signature::parse(row.output_sig);
                ok = drv.drv_hash() == row.drv_hash && verify(*it->second, sig, drv, output, hash);
            }
        } catch (const Error &) {
            ok = false;
        }
        if (!ok)
            failing.push_back(row.id);
    }
    return failing;
}

std::size_t sync_report_definitions(Database & db, const std::filesystem::path & report_dir)
{
    std::error_code ec;
    if (!std::filesystem::is_directory(report_dir, ec))
        return 0;

    std::vector<std::filesystem::path> files;
    for (auto & de : std::filesystem::directory_iterator(report_dir)) {
        if (de.is_regular_file() && de.path().extension() == ".json")
            files.push_back(de.path());
    }
    std::sort(files.begin(), files.end()); // later files win on duplicate names

    std::size_t loaded = 0;
    for (auto & file : files) {
        std::ifstream in(file);
        std::ostringstream buf;
        buf << in.rdbuf();
        try {
            auto defn = ReportDefinition::from_json(buf.str());
            db.upsert_report(defn.name, defn.to_json());
            ++loaded;
        } catch (const Error & e) {
            std::cerr << "lila: skipping report definition " << file << ": " << e.what() << "\n";
        }
    }
    return loaded;
}

}
