#include "lila/attestation.hpp"

#include <json.hpp>

namespace lila {

using nlohmann::json;

std::string AttestationRecord::fingerprint() const
{
    return lila::fingerprint(drv_id, output_path, output_hash);
}

std::string AttestationRecord::to_json() const
{
    json body{
        {"output_path", output_path.render()},
        {"output_hash", output_hash.render()},
        {"output_sig", output_sig.render()},
        {"drv_path", drv_id.render()},
    };
    return body.dump();
}

AttestationRecord AttestationRecord::from_json(std::string_view body)
{
    json doc;
    try {
        doc = json::parse(body);
    } catch (const json::parse_error & e) {
        throw MalformedSubmission(std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_object())
        throw MalformedSubmission("submission body is not a JSON object");

    static const std::array<std::string_view, 4> members{
        "output_path", "output_hash", "output_sig", "drv_path"};
    for (auto & [key, value] : doc.items()) {
        if (std::find(members.begin(), members.end(), key) == members.end())
            throw MalformedSubmission("unknown member '" + key + "'");
        if (!value.is_string())
            throw MalformedSubmission("member '" + key + "' is not a string");
    }
    for (auto member : members)
        if (!doc.contains(member))
            throw MalformedSubmission("missing member '" + std::string(member) + "'");

    return AttestationRecord{
        DrvId::parse_any(doc["drv_path"].get<std::string>()),
        StorePath::parse_any(doc["output_path"].get<std::string>()),
        OutputHash::parse(doc["output_hash"].get<std::string>()),
        Signature::parse(doc["output_sig"].get<std::string>()),
    };
}

}
