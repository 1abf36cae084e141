#include "lila/reports.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <ctime>
#include <set>
#include <sstream>

using nlohmann::json;

namespace lila {

bool glob_match(std::string_view pattern, std::string_view text)
{
    std::size_t p = 0, t = 0;
    std::size_t star = std::string_view::npos, mark = 0;
    while (t < text.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
            ++p, ++t;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = t;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            t = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*')
        ++p;
    return p == pattern.size();
}

std::string name_stem(std::string_view name)
{
    auto version_tail = [&](std::size_t i) {
        // suffix at i must be `-[0-9][A-Za-z0-9.]*`
        if (name[i] != '-' || i + 1 >= name.size())
            return false;
        if (!std::isdigit(static_cast<unsigned char>(name[i + 1])))
            return false;
        for (std::size_t j = i + 2; j < name.size(); ++j) {
            char c = name[j];
            if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.')
                return false;
        }
        return true;
    };
    for (std::size_t i = 0; i < name.size(); ++i)
        if (version_tail(i))
            return std::string(name.substr(0, i));
    return std::string(name);
}

bool Selector::matches(const std::string & drv_hash, const std::string & drv_name) const
{
    switch (kind) {
    case Kind::drv_hash_is: return pattern == drv_hash;
    case Kind::name_matches: return glob_match(pattern, drv_name);
    }
    return false;
}

bool ReportDefinition::in_scope(const std::string & drv_hash, const std::string & drv_name) const
{
    for (auto & sel : selectors)
        if (sel.matches(drv_hash, drv_name))
            return true;
    return false;
}

std::string ReportDefinition::to_json() const
{
    json sels = json::array();
    for (auto & sel : selectors) {
        const char * key = sel.kind == Selector::Kind::drv_hash_is ? "drv_hash_is" : "name_matches";
        sels.push_back(json{{key, sel.pattern}});
    }
    json doc{
        {"name", name},
        {"description", description},
        {"selectors", std::move(sels)},
        {"quorum", quorum},
    };
    return doc.dump(2);
}

ReportDefinition ReportDefinition::from_json(std::string_view document)
{
    json doc;
    try {
        doc = json::parse(document);
    } catch (const json::exception & e) {
        throw MalformedReportDefinition(std::string("report definition is not valid JSON: ") + e.what());
    }
    if (!doc.is_object())
        throw MalformedReportDefinition("report definition must be a JSON object");

    ReportDefinition defn;
    for (auto & [key, value] : doc.items()) {
        if (key == "name") {
            if (!value.is_string())
                throw MalformedReportDefinition("'name' must be a string");
            defn.name = value.get<std::string>();
        } else if (key == "description") {
            if (!value.is_string())
                throw MalformedReportDefinition("'description' must be a string");
            defn.description = value.get<std::string>();
        } else if (key == "quorum") {
            if (!value.is_number_integer() || value.get<int>() < 1)
                throw MalformedReportDefinition("'quorum' must be a positive integer");
            defn.quorum = value.get<int>();
        } else if (key == "selectors") {
            if (!value.is_array())
                throw MalformedReportDefinition("'selectors' must be an array");
            for (auto & rule : value) {
                if (!rule.is_object() || rule.size() != 1)
                    throw MalformedReportDefinition("each selector must be a one-key object");
                auto it = rule.items().begin();
                if (!it.value().is_string())
                    throw MalformedReportDefinition("selector pattern must be a string");
                Selector sel;
                sel.pattern = it.value().get<std::string>();
                if (it.key() == "drv_hash_is") {
                    sel.kind = Selector::Kind::drv_hash_is;
                    if (!is_valid_digest(sel.pattern))
                        throw MalformedReportDefinition("'drv_hash_is' pattern is not a store path digest: " + sel.pattern);
                } else if (it.key() == "name_matches") {
                    sel.kind = Selector::Kind::name_matches;
                    if (sel.pattern.empty())
                        throw MalformedReportDefinition("'name_matches' pattern must be non-empty");
                } else {
                    throw MalformedReportDefinition("unknown selector kind: " + it.key());
                }
                defn.selectors.push_back(std::move(sel));
            }
        } else {
            throw MalformedReportDefinition("unknown report definition member: " + key);
        }
    }

    if (!is_valid_key_name(defn.name))
        throw MalformedReportDefinition("report 'name' must be 1-64 chars of [a-zA-Z0-9._-]");
    if (defn.selectors.empty())
        throw MalformedReportDefinition("'selectors' must be a non-empty array");
    return defn;
}

ReproStatus classify_output(std::span<const StoredAttestation> records)
{
    if (records.empty())
        return ReproStatus::unknown;

    auto & first = records.front();
    std::set<std::string> hashes, users;
    for (auto & r : records) {
        if (r.drv_path != first.drv_path || r.output_path != first.output_path)
            throw MixedKeyInput(
                "records span multiple keys: (" + first.drv_path + ", " + first.output_path + ") vs ("
                + r.drv_path + ", " + r.output_path + ")");
        hashes.insert(r.output_hash);
        users.insert(r.user_id);
    }
    if (hashes.size() >= 2)
        return ReproStatus::nonreproducible;
    return users.size() >= 2 ? ReproStatus::reproducible : ReproStatus::unconfirmed;
}

ReproStatus classify_derivation(const std::map<std::string, ReproStatus> & per_output)
{
    if (per_output.empty())
        throw EmptyInput("no outputs observed for derivation");
    bool all_confirmed = true;
    for (auto & [path, status] : per_output) {
        if (status == ReproStatus::nonreproducible)
            return ReproStatus::nonreproducible;
        if (status != ReproStatus::reproducible)
            all_confirmed = false;
    }
    return all_confirmed ? ReproStatus::reproducible : ReproStatus::unconfirmed;
}

std::vector<DrvObservation> observe_derivations(std::span<const StoredAttestation> snapshot)
{
    // drv_path -> output_path -> rows
    std::map<std::string, std::map<std::string, std::vector<StoredAttestation>>> grouped;
    for (auto & row : snapshot)
        grouped[row.drv_path][row.output_path].push_back(row);

    std::vector<DrvObservation> out;
    out.reserve(grouped.size());
    for (auto & [drv_path, outputs] : grouped) {
        DrvObservation obs;
        obs.drv_path = drv_path;
        auto parsed = StorePath::parse_any(drv_path);
        obs.drv_hash = parsed.digest();
        obs.drv_name = parsed.name();

        std::set<std::string> users;
        bool first_row = true;
        for (auto & [output_path, rows] : outputs) {
            obs.per_output[output_path] = classify_output(rows);
            for (auto & r : rows) {
                users.insert(r.user_id);
                if (first_row || r.received_at < obs.first_seen)
                    obs.first_seen = r.received_at;
                if (first_row || r.received_at > obs.last_seen)
                    obs.last_seen = r.received_at;
                first_row = false;
            }
        }
        obs.status = classify_derivation(obs.per_output);
        obs.distinct_builders = static_cast<int>(users.size());
        out.push_back(std::move(obs));
    }

    std::sort(out.begin(), out.end(), [](const DrvObservation & a, const DrvObservation & b) {
        return std::tie(a.drv_hash, a.drv_path) < std::tie(b.drv_hash, b.drv_path);
    });
    return out;
}

ComputedReport compute_report(const ReportDefinition & defn, std::span<const StoredAttestation> snapshot, std::int64_t generated_at)
{
    ComputedReport report;
    report.name = defn.name;
    report.generated_at = generated_at;
    report.totals = {
        {ReproStatus::unknown, 0},
        {ReproStatus::unconfirmed, 0},
        {ReproStatus::reproducible, 0},
        {ReproStatus::nonreproducible, 0},
    };

    for (auto & obs : observe_derivations(snapshot)) {
        if (!defn.in_scope(obs.drv_hash, obs.drv_name))
            continue;
        report.totals[obs.status] += 1;
        report.rows.push_back(ReportRow{obs.drv_hash, obs.drv_name, obs.status, obs.distinct_builders, obs.last_seen});
    }

    auto repro = static_cast<double>(report.totals[ReproStatus::reproducible]);
    auto nonrepro = static_cast<double>(report.totals[ReproStatus::nonreproducible]);
    if (repro + nonrepro > 0)
        report.rate = repro / (repro + nonrepro);
    return report;
}

std::vector<Regression> detect_regressions(const ReportDefinition & defn, std::span<const StoredAttestation> snapshot)
{
    std::map<std::string, std::vector<const DrvObservation *>> by_stem;
    auto observations = observe_derivations(snapshot);
    for (auto & obs : observations)
        if (defn.in_scope(obs.drv_hash, obs.drv_name))
            by_stem[name_stem(obs.drv_name)].push_back(&obs);

    std::vector<Regression> out;
    for (auto & [stem, group] : by_stem) {
        std::sort(group.begin(), group.end(), [](const DrvObservation * a, const DrvObservation * b) {
            return std::tie(a->first_seen, a->drv_hash) < std::tie(b->first_seen, b->drv_hash);
        });
        for (std::size_t i = 0; i < group.size(); ++i) {
            if (group[i]->status != ReproStatus::nonreproducible)
                continue;
            // latest reproducible strictly before this one
            const DrvObservation * predecessor = nullptr;
            for (std::size_t j = 0; j < i; ++j)
                if (group[j]->status == ReproStatus::reproducible && group[j]->first_seen < group[i]->first_seen)
                    predecessor = group[j];
            if (predecessor)
                out.push_back(Regression{stem, predecessor->drv_hash, group[i]->drv_hash});
        }
    }
    return out;
}

std::vector<RebuildSuggestion> suggest_rebuilds(
    const ReportDefinition & defn,
    std::span<const StoredAttestation> snapshot,
    const std::string & requesting_user,
    std::size_t limit)
{
    std::set<std::string> attested_by_user;
    for (auto & row : snapshot)
        if (row.user_id == requesting_user)
            attested_by_user.insert(row.drv_path);

    std::vector<RebuildSuggestion> out;
    for (auto & obs : observe_derivations(snapshot)) {
        if (!defn.in_scope(obs.drv_hash, obs.drv_name))
            continue;
        if (attested_by_user.count(obs.drv_path))
            continue;
        bool wants_rebuild = obs.status == ReproStatus::unconfirmed
            || (obs.status == ReproStatus::reproducible && obs.distinct_builders < defn.quorum);
        if (!wants_rebuild)
            continue;
        out.push_back(RebuildSuggestion{obs.drv_hash, obs.drv_path, obs.distinct_builders});
    }

    std::sort(out.begin(), out.end(), [](const RebuildSuggestion & a, const RebuildSuggestion & b) {
        return std::tie(a.distinct_builders, a.drv_hash) < std::tie(b.distinct_builders, b.drv_hash);
    });
    if (out.size() > limit)
        out.resize(limit);
    return out;
}

IngestOutcome ingest_ci_file(std::string_view contents, const BuilderKey & ci_key, Database & db)
{
    IngestOutcome outcome;
    auto received_at = static_cast<std::int64_t>(std::time(nullptr));

    std::vector<std::pair<AttestationRecord, std::int64_t>> batch;
    constexpr std::size_t batch_rows = 1000;
    auto flush = [&] {
        if (batch.empty())
            return;
        auto created = db.insert_batch(batch, ci_key.name);
        outcome.accepted += created.size(); // duplicates count: the line is valid and its row exists
        batch.clear();
    };

    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= contents.size()) {
        auto eol = contents.find('\n', pos);
        auto line = contents.substr(pos, eol == std::string_view::npos ? contents.size() - pos : eol - pos);
        pos = eol == std::string_view::npos ? contents.size() + 1 : eol + 1;
        ++line_no;
        if (eol == std::string_view::npos && line.empty())
            break; // no final newline artifact

        if (line.empty() || line.front() == '#')
            continue;

        std::vector<std::string_view> fields;
        std::size_t start = 0;
        while (true) {
            auto space = line.find(' ', start);
            fields.push_back(line.substr(start, space == std::string_view::npos ? line.size() - start : space - start));
            if (space == std::string_view::npos)
                break;
            start = space + 1;
        }

        // an empty field (doubled separator) is its own defect, whatever the count
        if (std::any_of(fields.begin(), fields.end(), [](auto f) { return f.empty(); })) {
            outcome.rejected.emplace_back(line_no, "empty field");
            continue;
        }
        if (fields.size() < 3) {
            outcome.rejected.emplace_back(line_no, "missing field");
            continue;
        }
        if (fields.size() > 3) {
            outcome.rejected.emplace_back(line_no, "too many fields");
            continue;
        }

        try {
            AttestationRecord record;
            record.drv_id = DrvId::parse_any(std::string(fields[0]));
            record.output_path = StorePath::parse_any(std::string(fields[1]));
            record.output_hash = OutputHash::parse(std::string(fields[2]));
            record.output_sig = sign(ci_key, record.drv_id, record.output_path, record.output_hash);
            batch.emplace_back(std::move(record), received_at);
        } catch (const Error & e) {
            outcome.rejected.emplace_back(line_no, e.what());
            continue;
        }

        if (batch.size() >= batch_rows)
            flush();
    }
    flush();
    return outcome;
}

namespace {

std::string html_escape(std::string_view text)
{
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

}

std::string render_report_html(const ComputedReport & report, const std::string & description, std::span<const Regression> regressions)
{
    std::ostringstream page;
    page << "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n"
         << "<title>" << html_escape(report.name) << "</title>\n"
         << "<style>\n"
         << "body { font-family: sans-serif; margin: 2em; }\n"
         << "table { border-collapse: collapse; }\n"
         << "th, td { border: 1px solid #999; padding: 0.3em 0.8em; text-align: left; }\n"
         << ".reproducible { color: #060; } .nonreproducible { color: #a00; }\n"
         << ".unconfirmed { color: #870; } .unknown { color: #666; }\n"
         << "</style>\n</head>\n<body>\n"
         << "<h1>" << html_escape(report.name) << "</h1>\n";
    if (!description.empty())
        page << "<p>" << html_escape(description) << "</p>\n";
    page << "<p>Generated at " << report.generated_at << ".</p>\n";

    page << "<h2>Totals</h2>\n<table>\n<tr><th>Status</th><th>Derivations</th></tr>\n";
    for (auto & [status, count] : report.totals)
        page << "<tr><td class=\"" << to_string(status) << "\">" << to_string(status) << "</td><td>" << count
             << "</td></tr>\n";
    page << "</table>\n";

    page << "<p>Reproducibility rate: ";
    if (report.rate) {
        char figure[32];
        std::snprintf(figure, sizeof(figure), "%.1f%%", *report.rate * 100.0);
        page << figure;
    } else {
        page << "undefined";
    }
    page << "</p>\n";

    page << "<h2>Derivations</h2>\n";
    if (report.rows.empty()) {
        page << "<p>No derivations in scope.</p>\n";
    } else {
        page << "<table>\n<tr><th>Derivation hash</th><th>Name</th><th>Status</th>"
             << "<th>Distinct builders</th><th>Last seen</th></tr>\n";
        for (auto & row : report.rows)
            page << "<tr><td><code>" << html_escape(row.drv_hash) << "</code></td><td>" << html_escape(row.name)
                 << "</td><td class=\"" << to_string(row.status) << "\">" << to_string(row.status) << "</td><td>"
                 << row.distinct_builders << "</td><td>" << row.last_seen << "</td></tr>\n";
        page << "</table>\n";
    }

    page << "<h2>Regressions</h2>\n";
    if (regressions.empty()) {
        page << "<p>No regressions detected.</p>\n";
    } else {
        page << "<ul>\n";
        for (auto & reg : regressions)
            page << "<li><strong>" << html_escape(reg.stem) << "</strong>: <code>" << html_escape(reg.earlier_drv_hash)
                 << "</code> was reproducible, <code>" << html_escape(reg.later_drv_hash)
                 << "</code> is not.</li>\n";
        page << "</ul>\n";
    }

    page << "</body>\n</html>\n";
    return page.str();
}

}
